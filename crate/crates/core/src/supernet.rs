//! Elastic weight-sharing supernet over feed-forward architectures.
//!
//! An architecture picks a hidden depth and one width per hidden layer. Every
//! subnet is sliced out of the maximal network by taking the first rows and
//! columns of each shared matrix, and ends in the output head reserved for its
//! depth. Nested subnets therefore share prefixes of the same weights.
//!
//! FLOPs count two operations per multiply-accumulate of a single-sample
//! inference; bias additions and activations are free.

use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;
use core::cmp::Ordering;

use rand::seq::index;
use rand::Rng;

use crate::data::Dataset;
use crate::numerics::{
    backward, count_correct, cross_entropy, dims_str, Dense, GradientSet, LossSpec, NetworkParams,
};
use crate::{Error, Result};

/// Candidate depths and widths of the elastic space.
#[derive(Debug, Clone, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct SearchSpace {
    input_dim: usize,
    output_dim: usize,
    depth_options: Vec<usize>,
    width_options: Vec<usize>,
}

fn strictly_ascending(v: &[usize]) -> bool {
    v.windows(2).all(|w| w[0] < w[1])
}

impl SearchSpace {
    pub fn new(
        input_dim: usize,
        output_dim: usize,
        depth_options: Vec<usize>,
        width_options: Vec<usize>,
    ) -> Result<Self> {
        if input_dim == 0 || output_dim == 0 {
            return Err(Error::InvalidArgument("search space dims must be positive".into()));
        }
        if depth_options.is_empty() || width_options.is_empty() {
            return Err(Error::InvalidArgument("search space options must be non-empty".into()));
        }
        if !strictly_ascending(&depth_options) || !strictly_ascending(&width_options) {
            return Err(Error::InvalidArgument(
                "search space options must be strictly ascending".into(),
            ));
        }
        if width_options[0] == 0 {
            return Err(Error::InvalidArgument("widths must be positive".into()));
        }
        Ok(SearchSpace {
            input_dim,
            output_dim,
            depth_options,
            width_options,
        })
    }

    pub fn input_dim(&self) -> usize {
        self.input_dim
    }

    pub fn output_dim(&self) -> usize {
        self.output_dim
    }

    pub fn depth_options(&self) -> &[usize] {
        &self.depth_options
    }

    pub fn width_options(&self) -> &[usize] {
        &self.width_options
    }

    pub fn max_depth(&self) -> usize {
        *self.depth_options.last().expect("non-empty")
    }

    pub fn max_width(&self) -> usize {
        *self.width_options.last().expect("non-empty")
    }

    /// Number of architectures in the space.
    pub fn len(&self) -> usize {
        let w = self.width_options.len();
        self.depth_options.iter().map(|&d| w.pow(d as u32)).sum()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn contains(&self, arch: &ArchitectureConfig) -> bool {
        self.depth_options.binary_search(&arch.depth()).is_ok()
            && arch
                .widths
                .iter()
                .all(|w| self.width_options.binary_search(w).is_ok())
    }

    pub fn validate(&self, arch: &ArchitectureConfig) -> Result<()> {
        if self.contains(arch) {
            Ok(())
        } else {
            Err(Error::InvalidArchitecture {
                arch: arch.describe(),
            })
        }
    }

    /// All architectures in ascending `(depth, widths)` order.
    pub fn architectures(&self) -> Vec<ArchitectureConfig> {
        let mut out = Vec::with_capacity(self.len());
        let w = &self.width_options;
        for &depth in &self.depth_options {
            let count = w.len().pow(depth as u32);
            for mut code in 0..count {
                // base-|w| digits, most significant first
                let mut widths = vec![0; depth];
                for slot in widths.iter_mut().rev() {
                    *slot = w[code % w.len()];
                    code /= w.len();
                }
                out.push(ArchitectureConfig::new(widths));
            }
        }
        out
    }

    /// `[input, widths.., output]` of an architecture.
    pub fn layer_dims(&self, arch: &ArchitectureConfig) -> Vec<usize> {
        let mut dims = Vec::with_capacity(arch.depth() + 2);
        dims.push(self.input_dim);
        dims.extend_from_slice(&arch.widths);
        dims.push(self.output_dim);
        dims
    }

    /// The architecture a trained network was built for, if it belongs to the space.
    pub fn arch_of(&self, net: &NetworkParams) -> Option<ArchitectureConfig> {
        let dims = net.dims();
        if dims[0] != self.input_dim || dims[dims.len() - 1] != self.output_dim {
            return None;
        }
        let arch = ArchitectureConfig::new(dims[1..dims.len() - 1].to_vec());
        self.contains(&arch).then_some(arch)
    }
}

/// A point of the search space: one width per hidden layer.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct ArchitectureConfig {
    widths: Vec<usize>,
}

impl ArchitectureConfig {
    pub fn new(widths: Vec<usize>) -> Self {
        ArchitectureConfig { widths }
    }

    pub fn depth(&self) -> usize {
        self.widths.len()
    }

    pub fn widths(&self) -> &[usize] {
        &self.widths
    }

    /// `[w1,w2]`-style description; `[]` is the direct input-to-output net.
    pub fn describe(&self) -> String {
        use core::fmt::Write;
        let mut s = String::from("[");
        for (i, w) in self.widths.iter().enumerate() {
            if i > 0 {
                s.push(',');
            }
            let _ = write!(s, "{w}");
        }
        s.push(']');
        s
    }
}

impl Ord for ArchitectureConfig {
    fn cmp(&self, other: &Self) -> Ordering {
        self.depth()
            .cmp(&other.depth())
            .then_with(|| self.widths.cmp(&other.widths))
    }
}

impl PartialOrd for ArchitectureConfig {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl core::fmt::Display for ArchitectureConfig {
    fn fmt(&self, f: &mut core::fmt::Formatter<'_>) -> core::fmt::Result {
        f.write_str(&self.describe())
    }
}

/// FLOPs ceiling for a single-sample inference.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct ResourceBudget {
    pub max_flops: u64,
}

impl ResourceBudget {
    pub fn new(max_flops: u64) -> Result<Self> {
        if max_flops == 0 {
            return Err(Error::InvalidArgument("budget must be positive".into()));
        }
        Ok(ResourceBudget { max_flops })
    }

    pub const UNLIMITED: ResourceBudget = ResourceBudget {
        max_flops: u64::MAX,
    };
}

/// FLOPs of a network with the given layer widths.
pub fn flops_of_dims(dims: &[usize]) -> u64 {
    dims.windows(2).map(|w| 2 * (w[0] as u64) * (w[1] as u64)).sum()
}

/// Single-sample inference FLOPs of `arch`.
pub fn flops(space: &SearchSpace, arch: &ArchitectureConfig) -> Result<u64> {
    space.validate(arch)?;
    Ok(flops_of_dims(&space.layer_dims(arch)))
}

/// Maximal shared parameters plus one output head per depth option.
#[derive(Debug, Clone, PartialEq)]
pub struct SupernetWeights {
    space: SearchSpace,
    /// `hidden[k]` is `max_width x (input_dim | max_width)`.
    hidden: Vec<Dense<f32>>,
    /// Parallel to `space.depth_options()`.
    heads: Vec<Dense<f32>>,
}

impl SupernetWeights {
    pub fn zeros(space: SearchSpace) -> Self {
        let (hidden, heads) = Self::shapes(&space)
            .into_iter()
            .map(|(i, o)| Dense::zeros(i, o))
            .fold((Vec::new(), Vec::new()), |mut acc, d| {
                if acc.0.len() < space.max_depth() {
                    acc.0.push(d);
                } else {
                    acc.1.push(d);
                }
                acc
            });
        SupernetWeights {
            space,
            hidden,
            heads,
        }
    }

    pub fn random<R: Rng + ?Sized>(space: SearchSpace, rng: &mut R) -> Self {
        let mut theta = Self::zeros(space);
        for layer in theta.hidden.iter_mut().chain(theta.heads.iter_mut()) {
            *layer = Dense::random(layer.input_dim(), layer.output_dim(), rng);
        }
        theta
    }

    /// Rebuilds weights from layers in [`Self::layers`] order.
    pub fn from_layers(space: SearchSpace, layers: Vec<Dense<f32>>) -> Result<Self> {
        let shapes = Self::shapes(&space);
        if layers.len() != shapes.len() {
            return Err(crate::error::shape_err("supernet layers", shapes.len(), layers.len()));
        }
        for (l, &(i, o)) in layers.iter().zip(&shapes) {
            if l.input_dim() != i || l.output_dim() != o || l.bias.len() != o {
                return Err(crate::error::shape_err(
                    "supernet layer",
                    alloc::format!("{o}x{i}"),
                    alloc::format!("{}x{}", l.output_dim(), l.input_dim()),
                ));
            }
        }
        let mut layers = layers;
        let heads = layers.split_off(space.max_depth());
        Ok(SupernetWeights {
            space,
            hidden: layers,
            heads,
        })
    }

    /// `(input, output)` of every stored layer: hidden layers, then heads.
    pub fn shapes(space: &SearchSpace) -> Vec<(usize, usize)> {
        let w = space.max_width();
        let mut shapes: Vec<(usize, usize)> = (0..space.max_depth())
            .map(|k| (if k == 0 { space.input_dim } else { w }, w))
            .collect();
        for &d in &space.depth_options {
            shapes.push((if d == 0 { space.input_dim } else { w }, space.output_dim));
        }
        shapes
    }

    pub fn space(&self) -> &SearchSpace {
        &self.space
    }

    /// Hidden layers followed by heads.
    pub fn layers(&self) -> impl Iterator<Item = &Dense<f32>> {
        self.hidden.iter().chain(self.heads.iter())
    }

    fn head_index(&self, depth: usize) -> usize {
        self.space
            .depth_options
            .binary_search(&depth)
            .expect("validated depth")
    }

    /// Copy of the subnet for `arch`.
    pub fn extract(&self, arch: &ArchitectureConfig) -> Result<NetworkParams> {
        self.space.validate(arch)?;
        let dims = self.space.layer_dims(arch);
        let depth = arch.depth();
        let mut layers = Vec::with_capacity(depth + 1);
        for k in 0..depth {
            let src = &self.hidden[k];
            layers.push(Dense {
                weight: src.weight.block(dims[k + 1], dims[k]),
                bias: src.bias[..dims[k + 1]].to_vec(),
            });
        }
        let head = &self.heads[self.head_index(depth)];
        layers.push(Dense {
            weight: head.weight.block(self.space.output_dim, dims[depth]),
            bias: head.bias.clone(),
        });
        NetworkParams::new(layers)
    }

    /// Adds a subnet gradient into the shared slices it was computed on.
    fn accumulate(&self, acc: &mut [Dense<f32>], arch: &ArchitectureConfig, grads: &GradientSet<f32>) {
        let depth = arch.depth();
        let head = self.hidden.len() + self.head_index(depth);
        for (k, g) in grads.layers.iter().enumerate() {
            let target = if k == depth { &mut acc[head] } else { &mut acc[k] };
            let (rows, cols) = g.weight.shape();
            for r in 0..rows {
                let dst = &mut target.weight.row_mut(r)[..cols];
                for (d, s) in dst.iter_mut().zip(g.weight.row(r)) {
                    *d += *s;
                }
                target.bias[r] += g.bias[r];
            }
        }
    }
}

/// One shared-weight SGD step: every architecture's cross-entropy gradient on
/// `batch` is summed into the entries it uses, then `theta -= lr * sum`.
pub fn supernet_step(
    theta: &mut SupernetWeights,
    archs: &[ArchitectureConfig],
    batch: &crate::numerics::Batch<f32>,
    lr: f32,
) -> Result<()> {
    let mut acc: Vec<Dense<f32>> = theta
        .layers()
        .map(|l| Dense::zeros(l.input_dim(), l.output_dim()))
        .collect();
    for arch in archs {
        let net = theta.extract(arch)?;
        let grads = backward(&net, batch, &LossSpec::cross_entropy())?;
        theta.accumulate(&mut acc, arch, &grads);
    }
    let hidden = theta.hidden.len();
    for (k, g) in acc.iter().enumerate() {
        let layer = if k < hidden {
            &mut theta.hidden[k]
        } else {
            &mut theta.heads[k - hidden]
        };
        for (w, gv) in layer.weight.as_mut_slice().iter_mut().zip(g.weight.as_slice()) {
            *w -= lr * *gv;
        }
        for (b, gv) in layer.bias.iter_mut().zip(&g.bias) {
            *b -= lr * *gv;
        }
    }
    Ok(())
}

/// Hyper-parameters of supernet training.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct SupernetTrainConfig {
    pub steps: usize,
    pub archs_per_step: usize,
    pub lr: f32,
    /// Batches at least as large as the training set use it whole, in order.
    pub batch_size: usize,
}

/// Validation losses before and after training.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct SupernetTrainLog {
    pub initial_mean_val_loss: f64,
    pub final_mean_val_loss: f64,
    /// Final validation loss of each tracked architecture.
    pub final_val_losses: Vec<(String, f64)>,
}

/// Architectures whose validation loss is tracked: the whole space when it has
/// at most this many members, otherwise a fixed random sample of this size.
pub const TRACKED_ARCHS: usize = 64;

fn mean_val_loss(theta: &SupernetWeights, archs: &[ArchitectureConfig], val: &Dataset) -> Result<(f64, Vec<(String, f64)>)> {
    let batch = val.full_batch();
    let mut per = Vec::with_capacity(archs.len());
    for arch in archs {
        let l = cross_entropy(&theta.extract(arch)?, &batch)?;
        per.push((arch.describe(), f64::from(l)));
    }
    let mean = per.iter().map(|p| p.1).sum::<f64>() / per.len() as f64;
    Ok((mean, per))
}

/// Single-path uniform-sampling supernet training.
///
/// Each step draws `archs_per_step` architectures uniformly (with
/// replacement), then a minibatch, and applies [`supernet_step`].
pub fn train_supernet<R: Rng + ?Sized>(
    theta: &mut SupernetWeights,
    train: &Dataset,
    val: &Dataset,
    cfg: &SupernetTrainConfig,
    rng: &mut R,
) -> Result<SupernetTrainLog> {
    if cfg.steps == 0 || cfg.archs_per_step == 0 || cfg.batch_size == 0 {
        return Err(Error::InvalidArgument(
            "steps, archs_per_step and batch_size must be positive".into(),
        ));
    }
    let all = theta.space.architectures();
    let tracked: Vec<ArchitectureConfig> = if all.len() <= TRACKED_ARCHS {
        all.clone()
    } else {
        let mut picks: Vec<usize> = index::sample(rng, all.len(), TRACKED_ARCHS).into_vec();
        picks.sort_unstable();
        picks.into_iter().map(|i| all[i].clone()).collect()
    };
    let (initial, _) = mean_val_loss(theta, &tracked, val)?;
    let full = cfg.batch_size >= train.len();
    let full_batch = full.then(|| train.full_batch());
    for _ in 0..cfg.steps {
        let archs: Vec<ArchitectureConfig> = (0..cfg.archs_per_step)
            .map(|_| all[rng.random_range(0..all.len())].clone())
            .collect();
        match &full_batch {
            Some(batch) => supernet_step(theta, &archs, batch, cfg.lr)?,
            None => {
                let mut idx = index::sample(rng, train.len(), cfg.batch_size).into_vec();
                idx.sort_unstable();
                supernet_step(theta, &archs, &train.batch(&idx), cfg.lr)?;
            }
        }
    }
    let (final_mean, per) = mean_val_loss(theta, &tracked, val)?;
    Ok(SupernetTrainLog {
        initial_mean_val_loss: initial,
        final_mean_val_loss: final_mean,
        final_val_losses: per,
    })
}

/// An architecture with its cost and validation score.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ScoredArch {
    pub arch: ArchitectureConfig,
    pub flops: u64,
    /// Correct top-1 predictions on the validation set.
    pub correct: usize,
    pub total: usize,
}

impl ScoredArch {
    pub fn accuracy(&self) -> f64 {
        self.correct as f64 / self.total as f64
    }
}

/// Search preference: higher accuracy, then fewer FLOPs, then smaller `(depth, widths)`.
pub fn preference(a: &ScoredArch, b: &ScoredArch) -> Ordering {
    b.correct
        .cmp(&a.correct)
        .then(a.flops.cmp(&b.flops))
        .then_with(|| a.arch.cmp(&b.arch))
}

/// Every architecture of the space ranked by [`preference`]. The answer to a
/// constrained search is the first entry that fits the budget, so a ranking is
/// computed once and reused for every client.
#[derive(Debug, Clone, PartialEq)]
pub struct SearchIndex {
    ranked: Vec<ScoredArch>,
    min_flops: u64,
}

impl SearchIndex {
    pub fn build(theta: &SupernetWeights, val: &Dataset) -> Result<Self> {
        let space = theta.space();
        if val.dims() != space.input_dim() {
            return Err(crate::error::shape_err("validation set", space.input_dim(), val.dims()));
        }
        let mut ranked = Vec::with_capacity(space.len());
        for arch in space.architectures() {
            let net = theta.extract(&arch)?;
            let correct = count_correct(&net, val.inputs(), val.labels())?;
            ranked.push(ScoredArch {
                flops: flops_of_dims(&space.layer_dims(&arch)),
                arch,
                correct,
                total: val.len(),
            });
        }
        ranked.sort_by(preference);
        let min_flops = ranked.iter().map(|s| s.flops).min().expect("non-empty space");
        Ok(SearchIndex { ranked, min_flops })
    }

    pub fn ranked(&self) -> &[ScoredArch] {
        &self.ranked
    }

    pub fn min_flops(&self) -> u64 {
        self.min_flops
    }

    pub fn best_under(&self, budget: ResourceBudget) -> Result<&ScoredArch> {
        self.ranked
            .iter()
            .find(|s| s.flops <= budget.max_flops)
            .ok_or(Error::InfeasibleBudget {
                budget: budget.max_flops,
                min_flops: self.min_flops,
            })
    }

    /// Costliest feasible architecture; ties go to the smaller `(depth, widths)`.
    pub fn largest_under(&self, budget: ResourceBudget) -> Result<&ScoredArch> {
        self.ranked
            .iter()
            .filter(|s| s.flops <= budget.max_flops)
            .min_by(|a, b| b.flops.cmp(&a.flops).then_with(|| a.arch.cmp(&b.arch)))
            .ok_or(Error::InfeasibleBudget {
                budget: budget.max_flops,
                min_flops: self.min_flops,
            })
    }
}

/// Most accurate architecture within `budget`, scored on `val`.
pub fn search(theta: &SupernetWeights, budget: ResourceBudget, val: &Dataset) -> Result<ArchitectureConfig> {
    Ok(SearchIndex::build(theta, val)?.best_under(budget)?.arch.clone())
}

/// The system-wide knowledge-network architecture: the search winner under
/// the (small) knowledge budget. Every client uses this same architecture.
pub fn knowledge_net_arch(theta: &SupernetWeights, kn_budget: ResourceBudget, val: &Dataset) -> Result<ArchitectureConfig> {
    search(theta, kn_budget, val)
}

/// Checks that a network has exactly the layer dims of `arch`.
pub fn check_arch(space: &SearchSpace, arch: &ArchitectureConfig, net: &NetworkParams) -> Result<()> {
    let want = space.layer_dims(arch);
    let got = net.dims();
    if want != got {
        return Err(Error::ArchitectureMismatch {
            expected: dims_str(&want),
            found: dims_str(&got),
        });
    }
    Ok(())
}
