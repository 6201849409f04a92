//! Binary supernet checkpoints.
//!
//! Layout, all integers `u32` little-endian:
//!
//! | field            | content                                             |
//! |------------------|-----------------------------------------------------|
//! | magic            | the 8 bytes `HFLSUPER`                              |
//! | version          | [`FORMAT_VERSION`]                                  |
//! | input, output    | feature and class counts                            |
//! | depth options    | count, then values                                  |
//! | width options    | count, then values                                  |
//! | layer count      | hidden layers then one head per depth option        |
//! | per layer        | rows, cols, `rows*cols` weights row-major, `rows` biases |
//!
//! Weights and biases are `f32` little-endian.

use std::path::{Path, PathBuf};

use hetfl_core::numerics::{Dense, Matrix};
use hetfl_core::supernet::{SearchSpace, SupernetWeights};

pub const MAGIC: &[u8; 8] = b"HFLSUPER";
pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, thiserror::Error)]
pub enum CheckpointError {
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("not a supernet checkpoint (bad magic)")]
    BadMagic,
    #[error("unsupported checkpoint version {0} (this build reads {FORMAT_VERSION})")]
    Version(u32),
    #[error("checkpoint truncated at byte {0}")]
    Truncated(usize),
    #[error("checkpoint has {0} trailing bytes")]
    Trailing(usize),
    #[error("invalid checkpoint: {0}")]
    Invalid(String),
}

fn put_u32(out: &mut Vec<u8>, v: usize) {
    out.extend_from_slice(&u32::try_from(v).expect("dimension fits in u32").to_le_bytes());
}

/// Serialises a supernet.
pub fn encode(theta: &SupernetWeights) -> Vec<u8> {
    let space = theta.space();
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
    put_u32(&mut out, space.input_dim());
    put_u32(&mut out, space.output_dim());
    for opts in [space.depth_options(), space.width_options()] {
        put_u32(&mut out, opts.len());
        for &v in opts {
            put_u32(&mut out, v);
        }
    }
    let layers: Vec<&Dense> = theta.layers().collect();
    put_u32(&mut out, layers.len());
    for layer in layers {
        put_u32(&mut out, layer.weight.rows());
        put_u32(&mut out, layer.weight.cols());
        for v in layer.weight.as_slice().iter().chain(&layer.bias) {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    out
}

struct Cursor<'a> {
    bytes: &'a [u8],
    at: usize,
}

impl Cursor<'_> {
    fn take(&mut self, n: usize) -> Result<&[u8], CheckpointError> {
        let end = self.at.checked_add(n).filter(|&e| e <= self.bytes.len());
        let end = end.ok_or(CheckpointError::Truncated(self.bytes.len()))?;
        let s = &self.bytes[self.at..end];
        self.at = end;
        Ok(s)
    }

    fn u32(&mut self) -> Result<usize, CheckpointError> {
        let b = self.take(4)?;
        Ok(u32::from_le_bytes([b[0], b[1], b[2], b[3]]) as usize)
    }

    fn f32s(&mut self, n: usize) -> Result<Vec<f32>, CheckpointError> {
        let bytes = self.take(n.checked_mul(4).ok_or(CheckpointError::Truncated(self.bytes.len()))?)?;
        Ok(bytes
            .chunks_exact(4)
            .map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]]))
            .collect())
    }

    fn list(&mut self) -> Result<Vec<usize>, CheckpointError> {
        let n = self.u32()?;
        (0..n).map(|_| self.u32()).collect()
    }
}

/// Parses a supernet, checking every layer shape against the stored space.
pub fn decode(bytes: &[u8]) -> Result<SupernetWeights, CheckpointError> {
    let mut c = Cursor { bytes, at: 0 };
    if c.take(MAGIC.len()).map_err(|_| CheckpointError::BadMagic)? != MAGIC {
        return Err(CheckpointError::BadMagic);
    }
    let version = c.u32()? as u32;
    if version != FORMAT_VERSION {
        return Err(CheckpointError::Version(version));
    }
    let input = c.u32()?;
    let output = c.u32()?;
    let depths = c.list()?;
    let widths = c.list()?;
    let space = SearchSpace::new(input, output, depths, widths).map_err(|e| CheckpointError::Invalid(e.to_string()))?;
    let expected = SupernetWeights::shapes(&space);
    let count = c.u32()?;
    if count != expected.len() {
        return Err(CheckpointError::Invalid(format!(
            "{count} layers stored, the search space needs {}",
            expected.len()
        )));
    }
    let mut layers = Vec::with_capacity(count);
    for (i, &(want_in, want_out)) in expected.iter().enumerate() {
        let rows = c.u32()?;
        let cols = c.u32()?;
        if (rows, cols) != (want_out, want_in) {
            return Err(CheckpointError::Invalid(format!(
                "layer {i} is {rows}x{cols}, expected {want_out}x{want_in}"
            )));
        }
        let weight = Matrix::from_vec(rows, cols, c.f32s(rows * cols)?)
            .map_err(|e| CheckpointError::Invalid(format!("layer {i}: {e}")))?;
        let bias = c.f32s(rows)?;
        if bias.iter().any(|b| !b.is_finite()) {
            return Err(CheckpointError::Invalid(format!("layer {i}: non-finite bias")));
        }
        layers.push(Dense { weight, bias });
    }
    if c.at != bytes.len() {
        return Err(CheckpointError::Trailing(bytes.len() - c.at));
    }
    SupernetWeights::from_layers(space, layers).map_err(|e| CheckpointError::Invalid(e.to_string()))
}

pub fn save(theta: &SupernetWeights, path: &Path) -> Result<(), CheckpointError> {
    std::fs::write(path, encode(theta)).map_err(|source| CheckpointError::Io {
        path: path.to_path_buf(),
        source,
    })
}

pub fn load(path: &Path) -> Result<SupernetWeights, CheckpointError> {
    let bytes = std::fs::read(path).map_err(|source| CheckpointError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    decode(&bytes)
}
