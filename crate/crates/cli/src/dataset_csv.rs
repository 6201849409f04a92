//! Labeled datasets as headerless CSV: feature columns, then an integer label.

use std::fs::File;
use std::io::Write;
use std::path::{Path, PathBuf};

use hetfl_core::data::Dataset;
use hetfl_core::numerics::Matrix;

#[derive(Debug, thiserror::Error)]
pub enum DataFileError {
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("{path}: line {line}: {source}")]
    Csv { path: PathBuf, line: u64, source: csv::Error },
    #[error("{path}: line {line}, column {column}: cannot parse {value:?} as {what}")]
    Parse {
        path: PathBuf,
        line: u64,
        column: usize,
        value: String,
        what: &'static str,
    },
    #[error("{path}: line {line}: expected {expected} columns, found {found}")]
    Columns {
        path: PathBuf,
        line: u64,
        expected: usize,
        found: usize,
    },
    #[error("{path}: {reason}")]
    Invalid { path: PathBuf, reason: String },
}

/// Reads a dataset. The class count is one more than the largest label, and at least 2.
pub fn load_csv(path: &Path) -> Result<Dataset, DataFileError> {
    let file = File::open(path).map_err(|source| DataFileError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(false)
        .flexible(true)
        .trim(csv::Trim::All)
        .from_reader(file);
    let mut features = Vec::new();
    let mut labels = Vec::new();
    let mut width: Option<usize> = None;
    for record in reader.records() {
        let record = record.map_err(|source| DataFileError::Csv {
            path: path.to_path_buf(),
            line: source.position().map_or(0, |p| p.line()),
            source,
        })?;
        let line = record.position().map_or(0, |p| p.line());
        let expected = *width.get_or_insert(record.len());
        if record.len() != expected {
            return Err(DataFileError::Columns {
                path: path.to_path_buf(),
                line,
                expected,
                found: record.len(),
            });
        }
        if expected < 2 {
            return Err(DataFileError::Invalid {
                path: path.to_path_buf(),
                reason: format!("line {line}: need at least one feature column and a label"),
            });
        }
        for (column, cell) in record.iter().enumerate() {
            let bad = |what| DataFileError::Parse {
                path: path.to_path_buf(),
                line,
                column: column + 1,
                value: cell.to_string(),
                what,
            };
            if column + 1 == expected {
                labels.push(cell.parse::<usize>().map_err(|_| bad("a non-negative integer label"))?);
            } else {
                let v = cell.parse::<f32>().map_err(|_| bad("a number"))?;
                if !v.is_finite() {
                    return Err(bad("a finite number"));
                }
                features.push(v);
            }
        }
    }
    let Some(width) = width else {
        return Err(DataFileError::Invalid {
            path: path.to_path_buf(),
            reason: "no samples".into(),
        });
    };
    let classes = labels.iter().max().map_or(2, |&m| (m + 1).max(2));
    let invalid = |e: hetfl_core::Error| DataFileError::Invalid {
        path: path.to_path_buf(),
        reason: e.to_string(),
    };
    let inputs = Matrix::from_vec(labels.len(), width - 1, features).map_err(invalid)?;
    Dataset::new(inputs, labels, classes).map_err(invalid)
}

/// Writes a dataset in the format [`load_csv`] reads.
pub fn write_csv(dataset: &Dataset, path: &Path) -> Result<(), DataFileError> {
    let io = |source| DataFileError::Io {
        path: path.to_path_buf(),
        source,
    };
    let mut out = std::io::BufWriter::new(File::create(path).map_err(io)?);
    for (r, label) in dataset.labels().iter().enumerate() {
        let mut line = String::new();
        for v in dataset.inputs().row(r) {
            line.push_str(&v.to_string());
            line.push(',');
        }
        line.push_str(&label.to_string());
        writeln!(out, "{line}").map_err(io)?;
    }
    out.flush().map_err(io)
}
