//! Dense feed-forward kernel with explicit gradients.
//!
//! Networks are stacks of affine layers with ReLU between them and raw logits
//! at the output. Only a fixed family of losses is differentiated (see
//! [`LossSpec`]); there is no tape. Every routine is generic over [`Real`] so
//! the same code runs in `f32` for training and in `f64` for gradient checks.
//!
//! Weights are row-major `[out x in]`; batches are row-major `[batch x dim]`.

use alloc::vec;
use alloc::vec::Vec;
use core::fmt::Debug;
use core::ops::{Add, AddAssign, Div, Mul, MulAssign, Neg, Sub, SubAssign};

use rand::Rng;

use crate::error::shape_err;
use crate::{Error, Result};

/// Scalar type of the kernel.
pub trait Real:
    Copy
    + Debug
    + Default
    + PartialOrd
    + Add<Output = Self>
    + Sub<Output = Self>
    + Mul<Output = Self>
    + Div<Output = Self>
    + Neg<Output = Self>
    + AddAssign
    + SubAssign
    + MulAssign
    + Send
    + Sync
    + 'static
{
    const ZERO: Self;
    const ONE: Self;
    fn from_f64(v: f64) -> Self;
    fn to_f64(self) -> f64;
    fn exp(self) -> Self;
    fn ln(self) -> Self;
    fn is_finite(self) -> bool;

    fn from_usize(v: usize) -> Self {
        Self::from_f64(v as f64)
    }

    fn max(self, other: Self) -> Self {
        if other > self {
            other
        } else {
            self
        }
    }
}

impl Real for f32 {
    const ZERO: Self = 0.0;
    const ONE: Self = 1.0;
    fn from_f64(v: f64) -> Self {
        v as f32
    }
    fn to_f64(self) -> f64 {
        f64::from(self)
    }
    fn exp(self) -> Self {
        libm::expf(self)
    }
    fn ln(self) -> Self {
        libm::logf(self)
    }
    fn is_finite(self) -> bool {
        f32::is_finite(self)
    }
}

impl Real for f64 {
    const ZERO: Self = 0.0;
    const ONE: Self = 1.0;
    fn from_f64(v: f64) -> Self {
        v
    }
    fn to_f64(self) -> f64 {
        self
    }
    fn exp(self) -> Self {
        libm::exp(self)
    }
    fn ln(self) -> Self {
        libm::log(self)
    }
    fn is_finite(self) -> bool {
        f64::is_finite(self)
    }
}

/// Row-major dense matrix.
#[derive(Debug, Clone, PartialEq, Default)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct Matrix<T = f32> {
    rows: usize,
    cols: usize,
    values: Vec<T>,
}

impl<T: Real> Matrix<T> {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Matrix {
            rows,
            cols,
            values: vec![T::ZERO; rows * cols],
        }
    }

    pub fn from_vec(rows: usize, cols: usize, values: Vec<T>) -> Result<Self> {
        if values.len() != rows * cols {
            return Err(shape_err("matrix", rows * cols, values.len()));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("matrix"));
        }
        Ok(Matrix { rows, cols, values })
    }

    /// Builds a matrix from equally long rows.
    pub fn from_rows(rows: &[Vec<T>]) -> Result<Self> {
        let cols = rows.first().map_or(0, Vec::len);
        let mut values = Vec::with_capacity(rows.len() * cols);
        for row in rows {
            if row.len() != cols {
                return Err(shape_err("matrix row", cols, row.len()));
            }
            values.extend_from_slice(row);
        }
        Matrix::from_vec(rows.len(), cols, values)
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Matrix::zeros(n, n);
        for i in 0..n {
            m.set(i, i, T::ONE);
        }
        m
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    pub fn as_slice(&self) -> &[T] {
        &self.values
    }

    pub fn as_mut_slice(&mut self) -> &mut [T] {
        &mut self.values
    }

    pub fn into_vec(self) -> Vec<T> {
        self.values
    }

    #[inline]
    pub fn get(&self, r: usize, c: usize) -> T {
        self.values[r * self.cols + c]
    }

    #[inline]
    pub fn set(&mut self, r: usize, c: usize, v: T) {
        self.values[r * self.cols + c] = v;
    }

    #[inline]
    pub fn row(&self, r: usize) -> &[T] {
        &self.values[r * self.cols..(r + 1) * self.cols]
    }

    #[inline]
    pub fn row_mut(&mut self, r: usize) -> &mut [T] {
        &mut self.values[r * self.cols..(r + 1) * self.cols]
    }

    /// Gathers the given rows into a new matrix.
    pub fn select_rows(&self, indices: &[usize]) -> Self {
        let mut values = Vec::with_capacity(indices.len() * self.cols);
        for &i in indices {
            values.extend_from_slice(self.row(i));
        }
        Matrix {
            rows: indices.len(),
            cols: self.cols,
            values,
        }
    }

    /// Top-left `rows x cols` block.
    pub fn block(&self, rows: usize, cols: usize) -> Self {
        debug_assert!(rows <= self.rows && cols <= self.cols);
        let mut values = Vec::with_capacity(rows * cols);
        for r in 0..rows {
            values.extend_from_slice(&self.row(r)[..cols]);
        }
        Matrix { rows, cols, values }
    }

    pub fn cast<U: Real>(&self) -> Matrix<U> {
        Matrix {
            rows: self.rows,
            cols: self.cols,
            values: self.values.iter().map(|v| U::from_f64(v.to_f64())).collect(),
        }
    }

    pub fn all_finite(&self) -> bool {
        self.values.iter().all(|v| v.is_finite())
    }
}

/// One affine layer: `y = x W^T + b`.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct Dense<T = f32> {
    pub weight: Matrix<T>,
    pub bias: Vec<T>,
}

impl<T: Real> Dense<T> {
    pub fn zeros(input: usize, output: usize) -> Self {
        Dense {
            weight: Matrix::zeros(output, input),
            bias: vec![T::ZERO; output],
        }
    }

    /// He-uniform weights, zero bias.
    pub fn random<R: Rng + ?Sized>(input: usize, output: usize, rng: &mut R) -> Self {
        let limit = libm::sqrt(6.0 / input.max(1) as f64);
        let values = (0..input * output)
            .map(|_| T::from_f64(rng.random_range(-limit..=limit)))
            .collect();
        Dense {
            weight: Matrix {
                rows: output,
                cols: input,
                values,
            },
            bias: vec![T::ZERO; output],
        }
    }

    pub fn input_dim(&self) -> usize {
        self.weight.cols
    }

    pub fn output_dim(&self) -> usize {
        self.weight.rows
    }

    pub fn param_count(&self) -> usize {
        self.weight.values.len() + self.bias.len()
    }

    pub fn cast<U: Real>(&self) -> Dense<U> {
        Dense {
            weight: self.weight.cast(),
            bias: self.bias.iter().map(|v| U::from_f64(v.to_f64())).collect(),
        }
    }

    fn params(&self) -> impl Iterator<Item = &T> {
        self.weight.values.iter().chain(self.bias.iter())
    }

    fn params_mut(&mut self) -> impl Iterator<Item = &mut T> {
        self.weight.values.iter_mut().chain(self.bias.iter_mut())
    }

    fn same_shape(&self, other: &Dense<T>) -> bool {
        self.weight.shape() == other.weight.shape() && self.bias.len() == other.bias.len()
    }
}

/// A concrete trainable network. ReLU follows every layer but the last.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct NetworkParams<T = f32> {
    layers: Vec<Dense<T>>,
}

impl<T: Real> NetworkParams<T> {
    pub fn new(layers: Vec<Dense<T>>) -> Result<Self> {
        if layers.is_empty() {
            return Err(Error::Empty("network"));
        }
        for pair in layers.windows(2) {
            if pair[0].output_dim() != pair[1].input_dim() {
                return Err(shape_err(
                    "adjacent layers",
                    pair[0].output_dim(),
                    pair[1].input_dim(),
                ));
            }
        }
        for layer in &layers {
            if layer.bias.len() != layer.output_dim() {
                return Err(shape_err("bias", layer.output_dim(), layer.bias.len()));
            }
        }
        Ok(NetworkParams { layers })
    }

    /// All-zero network with the given layer widths `[input, hidden.., output]`.
    pub fn zeros(dims: &[usize]) -> Self {
        assert!(dims.len() >= 2, "a network needs input and output dims");
        NetworkParams {
            layers: dims.windows(2).map(|w| Dense::zeros(w[0], w[1])).collect(),
        }
    }

    pub fn random<R: Rng + ?Sized>(dims: &[usize], rng: &mut R) -> Self {
        assert!(dims.len() >= 2, "a network needs input and output dims");
        NetworkParams {
            layers: dims
                .windows(2)
                .map(|w| Dense::random(w[0], w[1], rng))
                .collect(),
        }
    }

    pub fn layers(&self) -> &[Dense<T>] {
        &self.layers
    }

    pub fn layers_mut(&mut self) -> &mut [Dense<T>] {
        &mut self.layers
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].input_dim()
    }

    pub fn output_dim(&self) -> usize {
        self.layers[self.layers.len() - 1].output_dim()
    }

    /// `[input, hidden.., output]`.
    pub fn dims(&self) -> Vec<usize> {
        let mut dims = Vec::with_capacity(self.layers.len() + 1);
        dims.push(self.input_dim());
        dims.extend(self.layers.iter().map(Dense::output_dim));
        dims
    }

    pub fn param_count(&self) -> usize {
        self.layers.iter().map(Dense::param_count).sum()
    }

    /// Parameters in canonical order: per layer, weights row-major then bias.
    pub fn params(&self) -> impl Iterator<Item = &T> {
        self.layers.iter().flat_map(Dense::params)
    }

    pub fn params_mut(&mut self) -> impl Iterator<Item = &mut T> {
        self.layers.iter_mut().flat_map(Dense::params_mut)
    }

    pub fn same_shape(&self, other: &NetworkParams<T>) -> bool {
        self.layers.len() == other.layers.len()
            && self
                .layers
                .iter()
                .zip(&other.layers)
                .all(|(a, b)| a.same_shape(b))
    }

    pub fn cast<U: Real>(&self) -> NetworkParams<U> {
        NetworkParams {
            layers: self.layers.iter().map(Dense::cast).collect(),
        }
    }

    /// Squared L2 distance to a same-shaped network.
    pub fn squared_distance(&self, other: &NetworkParams<T>) -> Result<T> {
        if !self.same_shape(other) {
            return Err(shape_err("network", dims_str(&self.dims()), dims_str(&other.dims())));
        }
        let mut acc = T::ZERO;
        for (a, b) in self.params().zip(other.params()) {
            let d = *a - *b;
            acc += d * d;
        }
        Ok(acc)
    }
}

pub(crate) fn dims_str(dims: &[usize]) -> alloc::string::String {
    use core::fmt::Write;
    let mut s = alloc::string::String::new();
    for (i, d) in dims.iter().enumerate() {
        if i > 0 {
            s.push_str("->");
        }
        let _ = write!(s, "{d}");
    }
    s
}

/// Inputs plus optional labels (absent for unlabeled public data).
#[derive(Debug, Clone, PartialEq)]
pub struct Batch<T = f32> {
    pub inputs: Matrix<T>,
    pub labels: Option<Vec<usize>>,
}

impl<T: Real> Batch<T> {
    pub fn labeled(inputs: Matrix<T>, labels: Vec<usize>) -> Result<Self> {
        if labels.len() != inputs.rows() {
            return Err(shape_err("batch labels", inputs.rows(), labels.len()));
        }
        Ok(Batch {
            inputs,
            labels: Some(labels),
        })
    }

    pub fn unlabeled(inputs: Matrix<T>) -> Self {
        Batch {
            inputs,
            labels: None,
        }
    }

    pub fn len(&self) -> usize {
        self.inputs.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.inputs.rows() == 0
    }

    pub fn cast<U: Real>(&self) -> Batch<U> {
        Batch {
            inputs: self.inputs.cast(),
            labels: self.labels.clone(),
        }
    }
}

/// Per-layer parameter gradients, shape-matched to a [`NetworkParams`].
#[derive(Debug, Clone, PartialEq)]
pub struct GradientSet<T = f32> {
    pub layers: Vec<Dense<T>>,
}

impl<T: Real> GradientSet<T> {
    pub fn zeros_like(net: &NetworkParams<T>) -> Self {
        GradientSet {
            layers: net
                .layers
                .iter()
                .map(|l| Dense::zeros(l.input_dim(), l.output_dim()))
                .collect(),
        }
    }

    pub fn params(&self) -> impl Iterator<Item = &T> {
        self.layers.iter().flat_map(Dense::params)
    }

    pub fn is_zero(&self) -> bool {
        self.params().all(|g| *g == T::ZERO)
    }

    fn matches(&self, net: &NetworkParams<T>) -> bool {
        self.layers.len() == net.layers.len()
            && self
                .layers
                .iter()
                .zip(&net.layers)
                .all(|(g, l)| g.same_shape(l))
    }
}

/// Data-dependent part of a loss. KL terms always measure
/// `KL(softmax(target) || softmax(net))` with the target treated as a constant.
#[derive(Debug, Clone, Copy)]
pub enum DataLoss<'a, T> {
    CrossEntropy,
    CrossEntropyKl { target_logits: &'a Matrix<T> },
    Kl { target_logits: &'a Matrix<T> },
}

/// `(mu / 2) * ||w - reference||^2`.
#[derive(Debug, Clone, Copy)]
pub struct Proximal<'a, T> {
    pub mu: T,
    pub reference: &'a NetworkParams<T>,
}

/// The scalar objective differentiated by [`backward`].
#[derive(Debug, Clone, Copy)]
pub struct LossSpec<'a, T> {
    pub data: DataLoss<'a, T>,
    pub proximal: Option<Proximal<'a, T>>,
}

impl<'a, T: Real> LossSpec<'a, T> {
    pub fn cross_entropy() -> Self {
        LossSpec {
            data: DataLoss::CrossEntropy,
            proximal: None,
        }
    }

    /// Cross-entropy plus KL toward a detached peer.
    pub fn mutual(target_logits: &'a Matrix<T>) -> Self {
        LossSpec {
            data: DataLoss::CrossEntropyKl { target_logits },
            proximal: None,
        }
    }

    pub fn kl(target_logits: &'a Matrix<T>) -> Self {
        LossSpec {
            data: DataLoss::Kl { target_logits },
            proximal: None,
        }
    }

    pub fn with_proximal(mut self, mu: T, reference: &'a NetworkParams<T>) -> Self {
        self.proximal = Some(Proximal { mu, reference });
        self
    }
}

struct Trace<T> {
    /// Input to each layer; `acts[0]` is the batch input.
    acts: Vec<Matrix<T>>,
    logits: Matrix<T>,
}

fn affine<T: Real>(layer: &Dense<T>, input: &Matrix<T>) -> Matrix<T> {
    let (n, inp) = input.shape();
    let out = layer.output_dim();
    let mut z = Matrix::zeros(n, out);
    for b in 0..n {
        let x = input.row(b);
        let zr = z.row_mut(b);
        for o in 0..out {
            let w = layer.weight.row(o);
            let mut acc = layer.bias[o];
            for i in 0..inp {
                acc += x[i] * w[i];
            }
            zr[o] = acc;
        }
    }
    z
}

fn check_input<T: Real>(net: &NetworkParams<T>, inputs: &Matrix<T>) -> Result<()> {
    if inputs.cols() != net.input_dim() {
        return Err(shape_err("forward input", net.input_dim(), inputs.cols()));
    }
    Ok(())
}

fn forward_trace<T: Real>(net: &NetworkParams<T>, inputs: &Matrix<T>) -> Result<Trace<T>> {
    check_input(net, inputs)?;
    let last = net.layers.len() - 1;
    let mut acts = Vec::with_capacity(net.layers.len());
    let mut current = inputs.clone();
    for (k, layer) in net.layers.iter().enumerate() {
        let mut z = affine(layer, &current);
        if k == last {
            acts.push(current);
            return Ok(Trace { acts, logits: z });
        }
        for v in z.as_mut_slice() {
            if *v < T::ZERO {
                *v = T::ZERO;
            }
        }
        acts.push(core::mem::replace(&mut current, z));
    }
    unreachable!("network has at least one layer")
}

/// Raw logits `[batch x classes]`.
pub fn forward<T: Real>(net: &NetworkParams<T>, inputs: &Matrix<T>) -> Result<Matrix<T>> {
    forward_trace(net, inputs).map(|t| t.logits)
}

fn log_softmax_row<T: Real>(row: &[T], out: &mut [T]) {
    let mut m = row[0];
    for &v in &row[1..] {
        m = m.max(v);
    }
    let mut sum = T::ZERO;
    for &v in row {
        sum += (v - m).exp();
    }
    let ln_sum = sum.ln();
    for (o, &v) in out.iter_mut().zip(row) {
        *o = (v - m) - ln_sum;
    }
}

/// Row-wise log-softmax with max subtraction.
pub fn log_softmax<T: Real>(logits: &Matrix<T>) -> Result<Matrix<T>> {
    if !logits.all_finite() {
        return Err(Error::NonFinite("softmax input"));
    }
    let mut out = Matrix::zeros(logits.rows(), logits.cols());
    if logits.cols() == 0 {
        return Ok(out);
    }
    for r in 0..logits.rows() {
        log_softmax_row(logits.row(r), out.row_mut(r));
    }
    Ok(out)
}

/// Row-wise softmax with max subtraction.
pub fn softmax<T: Real>(logits: &Matrix<T>) -> Result<Matrix<T>> {
    let mut out = log_softmax(logits)?;
    for v in out.as_mut_slice() {
        *v = v.exp();
    }
    Ok(out)
}

fn labels_of<'b, T: Real>(batch: &'b Batch<T>, classes: usize, who: &'static str) -> Result<&'b [usize]> {
    let labels = batch.labels.as_deref().ok_or(Error::MissingLabels(who))?;
    if let Some(&label) = labels.iter().find(|&&l| l >= classes) {
        return Err(Error::LabelOutOfRange { label, classes });
    }
    Ok(labels)
}

fn ce_from_logits<T: Real>(logits: &Matrix<T>, labels: &[usize]) -> Result<T> {
    let logp = log_softmax(logits)?;
    let mut acc = T::ZERO;
    for (r, &y) in labels.iter().enumerate() {
        acc -= logp.get(r, y);
    }
    Ok(acc / T::from_usize(labels.len()))
}

/// Batch-mean cross-entropy of the network's predictions.
pub fn cross_entropy<T: Real>(net: &NetworkParams<T>, batch: &Batch<T>) -> Result<T> {
    if batch.is_empty() {
        return Err(Error::Empty("batch"));
    }
    let labels = labels_of(batch, net.output_dim(), "cross-entropy")?;
    ce_from_logits(&forward(net, &batch.inputs)?, labels)
}

/// Batch-mean `KL(softmax(p) || softmax(q))`.
pub fn kl_divergence<T: Real>(p_logits: &Matrix<T>, q_logits: &Matrix<T>) -> Result<T> {
    if p_logits.shape() != q_logits.shape() {
        return Err(shape_err(
            "kl arguments",
            format_shape(p_logits.shape()),
            format_shape(q_logits.shape()),
        ));
    }
    if p_logits.rows() == 0 {
        return Err(Error::Empty("batch"));
    }
    let logp = log_softmax(p_logits)?;
    let logq = log_softmax(q_logits)?;
    let mut acc = T::ZERO;
    for (&lp, &lq) in logp.as_slice().iter().zip(logq.as_slice()) {
        let p = lp.exp();
        if p > T::ZERO {
            acc += p * (lp - lq);
        }
    }
    let kl = acc / T::from_usize(p_logits.rows());
    // Rounding can leave a tiny negative residue when the rows coincide.
    Ok(if kl < T::ZERO { T::ZERO } else { kl })
}

fn format_shape(s: (usize, usize)) -> alloc::string::String {
    alloc::format!("{}x{}", s.0, s.1)
}

fn check_target<T: Real>(target: &Matrix<T>, logits: &Matrix<T>) -> Result<()> {
    if target.shape() != logits.shape() {
        return Err(shape_err(
            "target logits",
            format_shape(logits.shape()),
            format_shape(target.shape()),
        ));
    }
    Ok(())
}

fn proximal_value<T: Real>(net: &NetworkParams<T>, prox: &Proximal<'_, T>) -> Result<T> {
    Ok(prox.mu * T::from_f64(0.5) * net.squared_distance(prox.reference)?)
}

/// Value of the scalar loss described by `spec`.
pub fn loss<T: Real>(net: &NetworkParams<T>, batch: &Batch<T>, spec: &LossSpec<'_, T>) -> Result<T> {
    if batch.is_empty() {
        return Err(Error::Empty("batch"));
    }
    let logits = forward(net, &batch.inputs)?;
    let data = match spec.data {
        DataLoss::CrossEntropy => {
            ce_from_logits(&logits, labels_of(batch, net.output_dim(), "cross-entropy")?)?
        }
        DataLoss::CrossEntropyKl { target_logits } => {
            check_target(target_logits, &logits)?;
            ce_from_logits(&logits, labels_of(batch, net.output_dim(), "cross-entropy")?)?
                + kl_divergence(target_logits, &logits)?
        }
        DataLoss::Kl { target_logits } => {
            check_target(target_logits, &logits)?;
            kl_divergence(target_logits, &logits)?
        }
    };
    match &spec.proximal {
        Some(p) => Ok(data + proximal_value(net, p)?),
        None => Ok(data),
    }
}

/// Analytic gradient of the loss described by `spec`.
pub fn backward<T: Real>(
    net: &NetworkParams<T>,
    batch: &Batch<T>,
    spec: &LossSpec<'_, T>,
) -> Result<GradientSet<T>> {
    if batch.is_empty() {
        return Err(Error::Empty("batch"));
    }
    let trace = forward_trace(net, &batch.inputs)?;
    let n = batch.len();
    let classes = net.output_dim();
    let inv_n = T::ONE / T::from_usize(n);

    // dL/dlogits
    let q = softmax(&trace.logits)?;
    let mut delta = Matrix::zeros(n, classes);
    let (ce_labels, target) = match spec.data {
        DataLoss::CrossEntropy => (Some(labels_of(batch, classes, "cross-entropy")?), None),
        DataLoss::CrossEntropyKl { target_logits } => {
            check_target(target_logits, &trace.logits)?;
            (
                Some(labels_of(batch, classes, "cross-entropy")?),
                Some(softmax(target_logits)?),
            )
        }
        DataLoss::Kl { target_logits } => {
            check_target(target_logits, &trace.logits)?;
            (None, Some(softmax(target_logits)?))
        }
    };
    for r in 0..n {
        let qr = q.row(r);
        let dr = delta.row_mut(r);
        for c in 0..classes {
            let mut g = T::ZERO;
            if let Some(labels) = ce_labels {
                g += qr[c];
                if labels[r] == c {
                    g -= T::ONE;
                }
            }
            if let Some(p) = &target {
                g += qr[c] - p.get(r, c);
            }
            dr[c] = g * inv_n;
        }
    }

    let mut grads = GradientSet::zeros_like(net);
    for k in (0..net.layers.len()).rev() {
        let layer = &net.layers[k];
        let input = &trace.acts[k];
        let (out, inp) = layer.weight.shape();
        let g = &mut grads.layers[k];
        for b in 0..n {
            let d = delta.row(b);
            let x = input.row(b);
            for o in 0..out {
                let dv = d[o];
                if dv == T::ZERO {
                    continue;
                }
                g.bias[o] += dv;
                let gw = g.weight.row_mut(o);
                for i in 0..inp {
                    gw[i] += dv * x[i];
                }
            }
        }
        if k > 0 {
            // Propagate through W and the ReLU that produced `input`.
            let mut prev = Matrix::zeros(n, inp);
            for b in 0..n {
                let d = delta.row(b);
                let x = input.row(b);
                let pr = prev.row_mut(b);
                for o in 0..out {
                    let dv = d[o];
                    if dv == T::ZERO {
                        continue;
                    }
                    let w = layer.weight.row(o);
                    for i in 0..inp {
                        pr[i] += dv * w[i];
                    }
                }
                for i in 0..inp {
                    if x[i] <= T::ZERO {
                        pr[i] = T::ZERO;
                    }
                }
            }
            delta = prev;
        }
    }

    if let Some(prox) = &spec.proximal {
        if !prox.reference.same_shape(net) {
            return Err(shape_err(
                "proximal reference",
                dims_str(&net.dims()),
                dims_str(&prox.reference.dims()),
            ));
        }
        for (gl, (wl, rl)) in grads
            .layers
            .iter_mut()
            .zip(net.layers.iter().zip(&prox.reference.layers))
        {
            for (g, (w, r)) in gl.params_mut().zip(wl.params().zip(rl.params())) {
                *g += prox.mu * (*w - *r);
            }
        }
    }
    Ok(grads)
}

/// `w <- w - lr * (g + weight_decay * w)`.
pub fn sgd_step<T: Real>(
    net: &mut NetworkParams<T>,
    grads: &GradientSet<T>,
    lr: T,
    weight_decay: T,
) -> Result<()> {
    if !grads.matches(net) {
        return Err(shape_err("gradient set", dims_str(&net.dims()), "mismatched layers"));
    }
    if !(lr >= T::ZERO) || !lr.is_finite() {
        return Err(Error::InvalidArgument(alloc::format!("learning rate {lr:?}")));
    }
    for (layer, g) in net.layers.iter_mut().zip(&grads.layers) {
        for (w, gv) in layer.params_mut().zip(g.params()) {
            *w -= lr * (*gv + weight_decay * *w);
        }
    }
    Ok(())
}

/// Largest relative error between the analytic gradient and central finite
/// differences, evaluated in `f64`: `|analytic - numeric| / max(1e-12, |numeric|)`.
pub fn finite_difference_check<T: Real>(
    net: &NetworkParams<T>,
    batch: &Batch<T>,
    spec: &LossSpec<'_, T>,
    eps: f64,
) -> Result<f64> {
    let net64: NetworkParams<f64> = net.cast();
    let batch64: Batch<f64> = batch.cast();
    let target64 = match spec.data {
        DataLoss::CrossEntropy => None,
        DataLoss::CrossEntropyKl { target_logits } | DataLoss::Kl { target_logits } => {
            Some(target_logits.cast::<f64>())
        }
    };
    let reference64 = spec.proximal.as_ref().map(|p| (p.mu.to_f64(), p.reference.cast::<f64>()));
    let data = match (spec.data, &target64) {
        (DataLoss::CrossEntropy, _) => DataLoss::CrossEntropy,
        (DataLoss::CrossEntropyKl { .. }, Some(t)) => DataLoss::CrossEntropyKl { target_logits: t },
        (DataLoss::Kl { .. }, Some(t)) => DataLoss::Kl { target_logits: t },
        _ => unreachable!("target cast exists for KL losses"),
    };
    let spec64 = LossSpec {
        data,
        proximal: reference64.as_ref().map(|(mu, r)| Proximal {
            mu: *mu,
            reference: r,
        }),
    };

    let analytic: Vec<f64> = backward(&net64, &batch64, &spec64)?.params().copied().collect();
    let mut probe = net64.clone();
    let mut worst = 0.0f64;
    for (idx, &a) in analytic.iter().enumerate() {
        let original = *probe.params().nth(idx).expect("index within parameter count");
        *probe.params_mut().nth(idx).expect("index") = original + eps;
        let plus = loss(&probe, &batch64, &spec64)?;
        *probe.params_mut().nth(idx).expect("index") = original - eps;
        let minus = loss(&probe, &batch64, &spec64)?;
        *probe.params_mut().nth(idx).expect("index") = original;
        let numeric = (plus - minus) / (2.0 * eps);
        let rel = libm::fabs(a - numeric) / libm::fabs(numeric).max(1e-12);
        worst = worst.max(rel);
    }
    Ok(worst)
}

/// Argmax class per row; ties go to the lowest class index.
pub fn predict<T: Real>(net: &NetworkParams<T>, inputs: &Matrix<T>) -> Result<Vec<usize>> {
    let logits = forward(net, inputs)?;
    Ok((0..logits.rows())
        .map(|r| {
            let row = logits.row(r);
            let mut best = 0;
            for c in 1..row.len() {
                if row[c] > row[best] {
                    best = c;
                }
            }
            best
        })
        .collect())
}

/// Number of rows whose argmax matches the label.
pub fn count_correct<T: Real>(net: &NetworkParams<T>, inputs: &Matrix<T>, labels: &[usize]) -> Result<usize> {
    if labels.len() != inputs.rows() {
        return Err(shape_err("labels", inputs.rows(), labels.len()));
    }
    Ok(predict(net, inputs)?
        .iter()
        .zip(labels)
        .filter(|(p, y)| p == y)
        .count())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::seed::SeedTree;

    fn tiny_batch(seed: u64, n: usize, d: usize, classes: usize) -> Batch<f64> {
        let mut rng = SeedTree::new(seed).rng();
        let values = (0..n * d).map(|_| rng.random_range(-1.0..1.0)).collect();
        let labels = (0..n).map(|_| rng.random_range(0..classes)).collect();
        Batch::labeled(Matrix::from_vec(n, d, values).unwrap(), labels).unwrap()
    }

    #[test]
    fn identity_layer_passes_input_through() {
        let net = NetworkParams::new(vec![Dense {
            weight: Matrix::<f32>::identity(2),
            bias: vec![0.0, 0.0],
        }])
        .unwrap();
        let x = Matrix::from_vec(1, 2, vec![1.0, 2.0]).unwrap();
        assert_eq!(forward(&net, &x).unwrap().as_slice(), &[1.0, 2.0]);
    }

    #[test]
    fn zero_network_gives_zero_logits() {
        let net = NetworkParams::<f32>::zeros(&[3, 5, 4]);
        let x = Matrix::from_vec(2, 3, vec![1.0, -2.0, 3.0, 0.5, 0.5, 9.0]).unwrap();
        assert!(forward(&net, &x).unwrap().as_slice().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn forward_matches_scalar_loop() {
        let mut rng = SeedTree::new(11).rng();
        let net = NetworkParams::<f64>::random(&[3, 4, 2], &mut rng);
        let x = tiny_batch(12, 5, 3, 2).inputs;
        let got = forward(&net, &x).unwrap();
        let (l0, l1) = (&net.layers()[0], &net.layers()[1]);
        for b in 0..5 {
            let mut h = [0.0f64; 4];
            for o in 0..4 {
                let mut s = l0.bias[o];
                for i in 0..3 {
                    s += l0.weight.get(o, i) * x.get(b, i);
                }
                h[o] = if s > 0.0 { s } else { 0.0 };
            }
            for o in 0..2 {
                let mut s = l1.bias[o];
                for i in 0..4 {
                    s += l1.weight.get(o, i) * h[i];
                }
                assert!((got.get(b, o) - s).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn forward_rejects_wrong_width() {
        let net = NetworkParams::<f32>::zeros(&[3, 2]);
        let x = Matrix::<f32>::zeros(1, 4);
        assert!(matches!(forward(&net, &x), Err(Error::Shape { .. })));
    }

    #[test]
    fn softmax_examples() {
        let p = softmax(&Matrix::from_vec(1, 2, vec![0.0f64, 0.0]).unwrap()).unwrap();
        assert_eq!(p.as_slice(), &[0.5, 0.5]);

        let a = softmax(&Matrix::from_vec(1, 2, vec![1000.0f64, 1003.0]).unwrap()).unwrap();
        let b = softmax(&Matrix::from_vec(1, 2, vec![0.0f64, 3.0]).unwrap()).unwrap();
        for (x, y) in a.as_slice().iter().zip(b.as_slice()) {
            assert!((x - y).abs() < 1e-15);
        }

        let logs = vec![1.0f64.ln(), 2.0f64.ln(), 3.0f64.ln()];
        let p = softmax(&Matrix::from_vec(1, 3, logs).unwrap()).unwrap();
        for (got, want) in p.as_slice().iter().zip([1.0 / 6.0, 2.0 / 6.0, 3.0 / 6.0]) {
            assert!((got - want).abs() < 1e-12);
        }
    }

    #[test]
    fn softmax_rejects_nan() {
        let m = Matrix {
            rows: 1,
            cols: 2,
            values: vec![f32::NAN, 0.0],
        };
        assert_eq!(softmax(&m), Err(Error::NonFinite("softmax input")));
    }

    #[test]
    fn cross_entropy_uniform_is_ln_c() {
        let net = NetworkParams::<f64>::zeros(&[3, 4]);
        let batch = tiny_batch(1, 6, 3, 4);
        let ce = cross_entropy(&net, &batch).unwrap();
        assert!((ce - 4.0f64.ln()).abs() < 1e-15);
    }

    #[test]
    fn cross_entropy_saturated_goes_to_zero() {
        let net = NetworkParams::new(vec![Dense {
            weight: Matrix::from_vec(2, 1, vec![100.0f64, -100.0]).unwrap(),
            bias: vec![0.0, 0.0],
        }])
        .unwrap();
        let batch = Batch::labeled(Matrix::from_vec(1, 1, vec![1.0]).unwrap(), vec![0]).unwrap();
        assert!(cross_entropy(&net, &batch).unwrap() < 1e-80);
    }

    #[test]
    fn cross_entropy_matches_hand_computation() {
        // Identity net, so the inputs are the logits.
        let net = NetworkParams::new(vec![Dense {
            weight: Matrix::<f64>::identity(3),
            bias: vec![0.0; 3],
        }])
        .unwrap();
        let rows = [[1.0, 2.0, 0.5], [-1.0, 0.0, 3.0]];
        let labels = [1usize, 0];
        let batch = Batch::labeled(
            Matrix::from_rows(&[rows[0].to_vec(), rows[1].to_vec()]).unwrap(),
            labels.to_vec(),
        )
        .unwrap();
        let mut want = 0.0;
        for (row, &y) in rows.iter().zip(&labels) {
            let z: f64 = row.iter().map(|v| v.exp()).sum();
            want += -(row[y].exp() / z).ln();
        }
        want /= 2.0;
        assert!((cross_entropy(&net, &batch).unwrap() - want).abs() < 1e-14);
    }

    #[test]
    fn cross_entropy_needs_labels() {
        let net = NetworkParams::<f64>::zeros(&[2, 2]);
        let batch = Batch::unlabeled(Matrix::zeros(1, 2));
        assert_eq!(
            cross_entropy(&net, &batch),
            Err(Error::MissingLabels("cross-entropy"))
        );
    }

    #[test]
    fn kl_examples() {
        let p = Matrix::from_vec(1, 2, vec![0.5f64.ln(), 0.5f64.ln()]).unwrap();
        let q = Matrix::from_vec(1, 2, vec![0.9f64.ln(), 0.1f64.ln()]).unwrap();
        assert_eq!(kl_divergence(&p, &p).unwrap(), 0.0);
        let want = 0.5 * (0.5f64 / 0.9).ln() + 0.5 * (0.5f64 / 0.1).ln();
        let pq = kl_divergence(&p, &q).unwrap();
        assert!((pq - want).abs() < 1e-12);
        let qp = kl_divergence(&q, &p).unwrap();
        let reverse = 0.9 * (0.9f64 / 0.5).ln() + 0.1 * (0.1f64 / 0.5).ln();
        assert!((qp - reverse).abs() < 1e-12);
        assert!((pq - qp).abs() > 1e-3);
    }

    #[test]
    fn kl_shape_mismatch() {
        let a = Matrix::<f64>::zeros(2, 3);
        let b = Matrix::<f64>::zeros(2, 2);
        assert!(matches!(kl_divergence(&a, &b), Err(Error::Shape { .. })));
    }

    #[test]
    fn zero_input_gives_zero_first_layer_weight_grad() {
        let mut rng = SeedTree::new(5).rng();
        let mut net = NetworkParams::<f64>::random(&[3, 4, 2], &mut rng);
        for l in net.layers_mut() {
            l.bias.iter_mut().for_each(|b| *b = 0.0);
        }
        let batch = Batch::labeled(Matrix::zeros(3, 3), vec![0, 1, 0]).unwrap();
        let g = backward(&net, &batch, &LossSpec::cross_entropy()).unwrap();
        assert!(g.layers[0].weight.as_slice().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn kl_gradient_vanishes_at_identical_nets() {
        let mut rng = SeedTree::new(6).rng();
        let net = NetworkParams::<f64>::random(&[3, 5, 3], &mut rng);
        let batch = tiny_batch(7, 4, 3, 3);
        let peer_logits = forward(&net, &batch.inputs).unwrap();
        let g = backward(&net, &batch, &LossSpec::kl(&peer_logits)).unwrap();
        assert!(g.params().all(|v| v.abs() < 1e-15));
    }

    #[test]
    fn gradients_match_finite_differences() {
        for seed in 0..4 {
            let mut rng = SeedTree::new(100 + seed).rng();
            let net = NetworkParams::<f64>::random(&[3, 6, 4], &mut rng);
            let peer = NetworkParams::<f64>::random(&[3, 5, 4], &mut rng);
            let reference = NetworkParams::<f64>::random(&[3, 6, 4], &mut rng);
            let batch = tiny_batch(200 + seed, 7, 3, 4);
            let target = forward(&peer, &batch.inputs).unwrap();
            let specs = [
                LossSpec::cross_entropy(),
                LossSpec::mutual(&target),
                LossSpec::kl(&target),
                LossSpec::cross_entropy().with_proximal(0.3, &reference),
                LossSpec::mutual(&target).with_proximal(0.05, &reference),
            ];
            for spec in &specs {
                let err = finite_difference_check(&net, &batch, spec, 1e-5).unwrap();
                assert!(err < 1e-4, "seed {seed}: {err}");
            }
        }
    }

    #[test]
    fn sgd_step_examples() {
        let mut net = NetworkParams::new(vec![Dense {
            weight: Matrix::from_vec(1, 1, vec![1.0f64]).unwrap(),
            bias: vec![0.0],
        }])
        .unwrap();
        let mut g = GradientSet::zeros_like(&net);
        g.layers[0].weight.set(0, 0, 2.0);
        let before = net.clone();
        sgd_step(&mut net, &g, 0.0, 0.0).unwrap();
        assert_eq!(net, before);
        sgd_step(&mut net, &g, 0.1, 0.0).unwrap();
        assert!((net.layers()[0].weight.get(0, 0) - 0.8).abs() < 1e-15);

        let mut net = before.clone();
        let zero = GradientSet::zeros_like(&net);
        sgd_step(&mut net, &zero, 1.0, 0.1).unwrap();
        assert!((net.layers()[0].weight.get(0, 0) - 0.9).abs() < 1e-15);
    }

    #[test]
    fn sgd_step_rejects_mismatched_grads() {
        let mut net = NetworkParams::<f32>::zeros(&[2, 3]);
        let g = GradientSet::zeros_like(&NetworkParams::<f32>::zeros(&[2, 4]));
        assert!(matches!(sgd_step(&mut net, &g, 0.1, 0.0), Err(Error::Shape { .. })));
    }
}
