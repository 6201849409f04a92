//! Datasets, label-skew partitioning and public/private splits.

use alloc::vec;
use alloc::vec::Vec;

use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::{Distribution, Gamma, StandardNormal};

use crate::error::shape_err;
use crate::numerics::{Batch, Matrix};
use crate::seed::SeedTree;
use crate::{Error, Result};

/// Labeled samples, one row per sample.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    inputs: Matrix<f32>,
    labels: Vec<usize>,
    class_count: usize,
}

impl Dataset {
    pub fn new(inputs: Matrix<f32>, labels: Vec<usize>, class_count: usize) -> Result<Self> {
        if labels.is_empty() {
            return Err(Error::Empty("dataset"));
        }
        if labels.len() != inputs.rows() {
            return Err(shape_err("dataset labels", inputs.rows(), labels.len()));
        }
        if let Some(&label) = labels.iter().find(|&&l| l >= class_count) {
            return Err(Error::LabelOutOfRange {
                label,
                classes: class_count,
            });
        }
        Ok(Dataset {
            inputs,
            labels,
            class_count,
        })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn dims(&self) -> usize {
        self.inputs.cols()
    }

    pub fn class_count(&self) -> usize {
        self.class_count
    }

    pub fn inputs(&self) -> &Matrix<f32> {
        &self.inputs
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    /// Rows at `indices`, in that order. Panics on out-of-range indices.
    pub fn subset(&self, indices: &[usize]) -> Result<Dataset> {
        Dataset::new(
            self.inputs.select_rows(indices),
            indices.iter().map(|&i| self.labels[i]).collect(),
            self.class_count,
        )
    }

    pub fn batch(&self, indices: &[usize]) -> Batch<f32> {
        Batch {
            inputs: self.inputs.select_rows(indices),
            labels: Some(indices.iter().map(|&i| self.labels[i]).collect()),
        }
    }

    pub fn full_batch(&self) -> Batch<f32> {
        Batch {
            inputs: self.inputs.clone(),
            labels: Some(self.labels.clone()),
        }
    }

    /// Samples per class.
    pub fn histogram(&self) -> Vec<usize> {
        let mut h = vec![0; self.class_count];
        for &l in &self.labels {
            h[l] += 1;
        }
        h
    }

    /// Drops the labels.
    pub fn into_unlabeled(self) -> UnlabeledDataset {
        UnlabeledDataset {
            inputs: self.inputs,
        }
    }
}

/// Inputs without labels. Used for server-side distillation, which must never
/// see ground truth, so no label accessor exists.
#[derive(Debug, Clone, PartialEq)]
pub struct UnlabeledDataset {
    inputs: Matrix<f32>,
}

impl UnlabeledDataset {
    pub fn new(inputs: Matrix<f32>) -> Result<Self> {
        if inputs.rows() == 0 {
            return Err(Error::Empty("unlabeled dataset"));
        }
        Ok(UnlabeledDataset { inputs })
    }

    pub fn len(&self) -> usize {
        self.inputs.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.inputs.rows() == 0
    }

    pub fn inputs(&self) -> &Matrix<f32> {
        &self.inputs
    }
}

/// Class-conditional Gaussian blobs. Centres are standard normal vectors
/// scaled by `center_scale`; samples add isotropic noise with std `spread`.
#[derive(Debug, Clone, PartialEq)]
pub struct BlobModel {
    centers: Matrix<f64>,
}

impl BlobModel {
    pub fn new(dims: usize, classes: usize, center_scale: f64, seed: u64) -> Result<Self> {
        if classes < 2 {
            return Err(Error::InvalidArgument(alloc::format!(
                "blobs need at least 2 classes, got {classes}"
            )));
        }
        if dims == 0 {
            return Err(Error::InvalidArgument("blobs need at least one dimension".into()));
        }
        let mut rng = SeedTree::new(seed).named("centers").rng();
        let values = (0..classes * dims)
            .map(|_| center_scale * rng.sample::<f64, _>(StandardNormal))
            .collect();
        Ok(BlobModel {
            centers: Matrix::from_vec(classes, dims, values)?,
        })
    }

    pub fn classes(&self) -> usize {
        self.centers.rows()
    }

    pub fn dims(&self) -> usize {
        self.centers.cols()
    }

    /// Same classes with every centre moved by a random vector of norm `magnitude`.
    pub fn shifted(&self, magnitude: f64, seed: u64) -> BlobModel {
        let mut rng = SeedTree::new(seed).named("shift").rng();
        let mut centers = self.centers.clone();
        for r in 0..centers.rows() {
            let dir: Vec<f64> = (0..centers.cols())
                .map(|_| rng.sample::<f64, _>(StandardNormal))
                .collect();
            let norm = libm::sqrt(dir.iter().map(|v| v * v).sum::<f64>()).max(1e-12);
            for (c, d) in centers.row_mut(r).iter_mut().zip(&dir) {
                *c += magnitude * d / norm;
            }
        }
        BlobModel { centers }
    }

    /// `n` class-balanced samples: sample `i` has label `i % classes`.
    pub fn sample(&self, n: usize, spread: f64, seed: u64) -> Result<Dataset> {
        let classes = self.classes();
        if n < classes {
            return Err(Error::InvalidArgument(alloc::format!(
                "{n} samples cannot cover {classes} classes"
            )));
        }
        if !(spread >= 0.0) || !spread.is_finite() {
            return Err(Error::InvalidArgument(alloc::format!("cluster spread {spread}")));
        }
        let dims = self.dims();
        let mut rng = SeedTree::new(seed).named("samples").rng();
        let mut values = Vec::with_capacity(n * dims);
        let mut labels = Vec::with_capacity(n);
        for i in 0..n {
            let label = i % classes;
            for &c in self.centers.row(label) {
                let noise: f64 = rng.sample(StandardNormal);
                values.push((c + spread * noise) as f32);
            }
            labels.push(label);
        }
        Dataset::new(Matrix::from_vec(n, dims, values)?, labels, classes)
    }
}

/// Class-balanced Gaussian clusters with unit-scale centres.
pub fn synth_blobs(n: usize, dims: usize, classes: usize, cluster_spread: f64, seed: u64) -> Result<Dataset> {
    BlobModel::new(dims, classes, 1.0, seed)?.sample(n, cluster_spread, seed)
}

/// Parameters of a Dirichlet label-skew partition.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct PartitionSpec {
    pub n_clients: usize,
    pub dirichlet_alpha: f64,
    pub min_samples_per_client: usize,
    pub seed: u64,
}

/// Sample indices into a parent dataset held by one client.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Shard {
    pub client_id: u64,
    pub indices: Vec<usize>,
}

impl Shard {
    pub fn len(&self) -> usize {
        self.indices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.indices.is_empty()
    }
}

/// Redraws allowed before a partition is declared infeasible.
pub const PARTITION_RETRIES: usize = 100;

/// Split `total` into parts proportional to `weights` with largest-remainder
/// rounding; remainder ties go to the lower index.
pub fn largest_remainder(total: usize, weights: &[f64]) -> Vec<usize> {
    let sum: f64 = weights.iter().sum();
    let mut counts = Vec::with_capacity(weights.len());
    let mut fracs = Vec::with_capacity(weights.len());
    for (i, w) in weights.iter().enumerate() {
        let exact = if sum > 0.0 { total as f64 * w / sum } else { 0.0 };
        let floor = libm::floor(exact) as usize;
        counts.push(floor);
        fracs.push((exact - floor as f64, i));
    }
    let assigned: usize = counts.iter().sum();
    let mut left = total.saturating_sub(assigned);
    fracs.sort_by(|a, b| b.0.partial_cmp(&a.0).unwrap_or(core::cmp::Ordering::Equal).then(a.1.cmp(&b.1)));
    for &(_, i) in fracs.iter().cycle() {
        if left == 0 {
            break;
        }
        counts[i] += 1;
        left -= 1;
    }
    counts
}

fn dirichlet_draw<R: Rng + ?Sized>(alpha: f64, n: usize, rng: &mut R) -> Vec<f64> {
    let gamma = Gamma::new(alpha, 1.0).expect("alpha validated positive");
    loop {
        let draw: Vec<f64> = (0..n).map(|_| gamma.sample(rng)).collect();
        let sum: f64 = draw.iter().sum();
        if sum > 0.0 && sum.is_finite() {
            return draw.into_iter().map(|v| v / sum).collect();
        }
    }
}

/// Per-class Dirichlet allocation, redrawn whole until every shard holds at
/// least `min_samples_per_client` samples.
pub fn dirichlet_partition(dataset: &Dataset, spec: &PartitionSpec) -> Result<Vec<Shard>> {
    if spec.n_clients == 0 {
        return Err(Error::InvalidArgument("partition needs at least one client".into()));
    }
    if !(spec.dirichlet_alpha > 0.0) || !spec.dirichlet_alpha.is_finite() {
        return Err(Error::InvalidArgument(alloc::format!(
            "dirichlet alpha must be positive, got {}",
            spec.dirichlet_alpha
        )));
    }
    if spec.n_clients * spec.min_samples_per_client > dataset.len() {
        return Err(Error::InvalidArgument(alloc::format!(
            "{} clients x {} samples exceeds {} samples",
            spec.n_clients,
            spec.min_samples_per_client,
            dataset.len()
        )));
    }
    let mut by_class: Vec<Vec<usize>> = vec![Vec::new(); dataset.class_count()];
    for (i, &l) in dataset.labels().iter().enumerate() {
        by_class[l].push(i);
    }
    let root = SeedTree::new(spec.seed);
    for attempt in 0..PARTITION_RETRIES {
        let mut rng = root.child(attempt as u64).rng();
        let mut shards: Vec<Vec<usize>> = vec![Vec::new(); spec.n_clients];
        for members in &by_class {
            if members.is_empty() {
                continue;
            }
            let mut members = members.clone();
            members.shuffle(&mut rng);
            let weights = if spec.n_clients == 1 {
                vec![1.0]
            } else {
                dirichlet_draw(spec.dirichlet_alpha, spec.n_clients, &mut rng)
            };
            let counts = largest_remainder(members.len(), &weights);
            let mut offset = 0;
            for (shard, count) in shards.iter_mut().zip(counts) {
                shard.extend_from_slice(&members[offset..offset + count]);
                offset += count;
            }
        }
        if shards.iter().all(|s| s.len() >= spec.min_samples_per_client) {
            return Ok(shards
                .into_iter()
                .enumerate()
                .map(|(id, mut indices)| {
                    indices.sort_unstable();
                    Shard {
                        client_id: id as u64,
                        indices,
                    }
                })
                .collect());
        }
    }
    Err(Error::PartitionInfeasible {
        min_samples: spec.min_samples_per_client,
        attempts: PARTITION_RETRIES,
    })
}

/// Random disjoint split into private (labeled) and public (unlabeled) parts.
/// The public side receives `round(fraction * N)` samples.
pub fn public_split(dataset: &Dataset, public_fraction: f64, seed: u64) -> Result<(Dataset, UnlabeledDataset)> {
    let (private_idx, public_idx) = split_indices(dataset.len(), public_fraction, seed)?;
    Ok((
        dataset.subset(&private_idx)?,
        dataset.subset(&public_idx)?.into_unlabeled(),
    ))
}

/// Index sets `(rest, taken)` of a seeded random split; both sides sorted and non-empty.
pub fn split_indices(n: usize, fraction: f64, seed: u64) -> Result<(Vec<usize>, Vec<usize>)> {
    if !(fraction > 0.0 && fraction < 1.0) {
        return Err(Error::InvalidArgument(alloc::format!(
            "split fraction must lie in (0, 1), got {fraction}"
        )));
    }
    let take = libm::round(fraction * n as f64) as usize;
    if take == 0 || take >= n {
        return Err(Error::InvalidArgument(alloc::format!(
            "fraction {fraction} of {n} samples leaves an empty side"
        )));
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut SeedTree::new(seed).named("split").rng());
    let mut taken = order[..take].to_vec();
    let mut rest = order[take..].to_vec();
    taken.sort_unstable();
    rest.sort_unstable();
    Ok((rest, taken))
}

/// Shannon entropy (nats) of a shard's label distribution.
pub fn label_entropy(dataset: &Dataset, shard: &Shard) -> f64 {
    let mut h = vec![0usize; dataset.class_count()];
    for &i in &shard.indices {
        h[dataset.labels()[i]] += 1;
    }
    let n = shard.len() as f64;
    h.iter()
        .filter(|&&c| c > 0)
        .map(|&c| {
            let p = c as f64 / n;
            -p * libm::log(p)
        })
        .sum()
}
