//! Fully connected regression networks with a scalar output.
//!
//! Parameters live in one flat vector. Each layer contributes a weight block
//! followed by a bias block; the weight block is stored column-major as a
//! `fan_in x fan_out` matrix, so entry `(a, b)` (input `a` to unit `b`) sits at
//! `offset + b * fan_in + a`. Forward and backward passes view those blocks in
//! place and run over whole batches.

use nalgebra::{DMatrix, DMatrixView, DVector};
use rand::seq::SliceRandom;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::rng;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    #[default]
    Relu,
    Tanh,
    Sigmoid,
}

impl Activation {
    #[inline]
    fn apply(self, z: f64) -> f64 {
        match self {
            Activation::Relu => z.max(0.0),
            Activation::Tanh => z.tanh(),
            Activation::Sigmoid => 1.0 / (1.0 + (-z).exp()),
        }
    }

    /// Derivative expressed through the activation value. ReLU uses 0 at the kink.
    #[inline]
    fn derivative_at_output(self, a: f64) -> f64 {
        match self {
            Activation::Relu => {
                if a > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::Tanh => 1.0 - a * a,
            Activation::Sigmoid => a * (1.0 - a),
        }
    }
}

impl std::str::FromStr for Activation {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "relu" => Ok(Activation::Relu),
            "tanh" => Ok(Activation::Tanh),
            "sigmoid" => Ok(Activation::Sigmoid),
            other => Err(Error::invalid(format!("unknown activation `{other}`"))),
        }
    }
}

/// MLP shape. An empty `hidden_layers` list gives an affine model `w·x + b`.
#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct MlpArchitecture {
    pub input_dim: usize,
    pub hidden_layers: Vec<usize>,
    #[serde(default)]
    pub activation: Activation,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub(crate) struct LayerShape {
    pub fan_in: usize,
    pub fan_out: usize,
    pub weights: usize,
    pub bias: usize,
}

impl LayerShape {
    fn end(&self) -> usize {
        self.bias + self.fan_out
    }
}

impl MlpArchitecture {
    pub fn new(input_dim: usize, hidden_layers: Vec<usize>, activation: Activation) -> Result<Self> {
        let arch = Self {
            input_dim,
            hidden_layers,
            activation,
        };
        arch.validate()?;
        Ok(arch)
    }

    pub fn validate(&self) -> Result<()> {
        if self.input_dim == 0 {
            return Err(Error::invalid("input dimension must be positive"));
        }
        if self.hidden_layers.iter().any(|&w| w == 0) {
            return Err(Error::invalid("hidden layer widths must be positive"));
        }
        Ok(())
    }

    pub(crate) fn layers(&self) -> Vec<LayerShape> {
        let mut out = Vec::with_capacity(self.hidden_layers.len() + 1);
        let mut fan_in = self.input_dim;
        let mut offset = 0;
        for &fan_out in self.hidden_layers.iter().chain(std::iter::once(&1)) {
            let layer = LayerShape {
                fan_in,
                fan_out,
                weights: offset,
                bias: offset + fan_in * fan_out,
            };
            offset = layer.end();
            fan_in = fan_out;
            out.push(layer);
        }
        out
    }

    /// Total number of weights and biases.
    pub fn num_params(&self) -> usize {
        self.layers().last().map_or(0, LayerShape::end)
    }

    /// Stable 64-bit digest of the architecture fields.
    pub fn fingerprint(&self) -> u64 {
        let mut h = Sha256::new();
        h.update((self.input_dim as u64).to_le_bytes());
        h.update((self.hidden_layers.len() as u64).to_le_bytes());
        for &w in &self.hidden_layers {
            h.update((w as u64).to_le_bytes());
        }
        h.update([self.activation as u8]);
        let digest = h.finalize();
        let mut bytes = [0u8; 8];
        bytes.copy_from_slice(&digest[..8]);
        u64::from_le_bytes(bytes)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ParamVector {
    values: Vec<f64>,
    arch_fingerprint: u64,
}

impl ParamVector {
    pub fn new(arch: &MlpArchitecture, values: Vec<f64>) -> Result<Self> {
        if values.len() != arch.num_params() {
            return Err(Error::DimensionMismatch {
                context: "parameter vector",
                expected: arch.num_params(),
                actual: values.len(),
            });
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("parameter vector"));
        }
        Ok(Self {
            values,
            arch_fingerprint: arch.fingerprint(),
        })
    }

    pub fn zeros(arch: &MlpArchitecture) -> Self {
        Self {
            values: vec![0.0; arch.num_params()],
            arch_fingerprint: arch.fingerprint(),
        }
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn arch_fingerprint(&self) -> u64 {
        self.arch_fingerprint
    }

    /// Returns a copy with `delta` added coordinate-wise.
    pub fn offset_by(&self, delta: &[f64]) -> Result<Self> {
        if delta.len() != self.values.len() {
            return Err(Error::DimensionMismatch {
                context: "parameter offset",
                expected: self.values.len(),
                actual: delta.len(),
            });
        }
        let values: Vec<f64> = self.values.iter().zip(delta).map(|(a, b)| a + b).collect();
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("parameter vector"));
        }
        Ok(Self {
            values,
            arch_fingerprint: self.arch_fingerprint,
        })
    }

    pub(crate) fn check(&self, arch: &MlpArchitecture) -> Result<()> {
        if self.arch_fingerprint != arch.fingerprint() {
            return Err(Error::ArchitectureMismatch);
        }
        if self.values.len() != arch.num_params() {
            return Err(Error::DimensionMismatch {
                context: "parameter vector",
                expected: arch.num_params(),
                actual: self.values.len(),
            });
        }
        Ok(())
    }

    pub(crate) fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }
}

/// Features `X` (n x p) and responses `Y` (n). Immutable once built.
#[derive(Clone, Debug, PartialEq)]
pub struct RegressionDataset {
    features: DMatrix<f64>,
    responses: DVector<f64>,
}

impl RegressionDataset {
    pub fn new(features: DMatrix<f64>, responses: DVector<f64>) -> Result<Self> {
        if features.nrows() != responses.len() {
            return Err(Error::DimensionMismatch {
                context: "dataset rows",
                expected: features.nrows(),
                actual: responses.len(),
            });
        }
        if features.ncols() == 0 {
            return Err(Error::invalid("dataset needs at least one feature column"));
        }
        if features.iter().chain(responses.iter()).any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("dataset"));
        }
        Ok(Self {
            features,
            responses,
        })
    }

    pub fn from_rows(rows: &[Vec<f64>], responses: &[f64]) -> Result<Self> {
        let p = rows.first().map_or(0, Vec::len);
        if let Some(bad) = rows.iter().find(|r| r.len() != p) {
            return Err(Error::DimensionMismatch {
                context: "feature row",
                expected: p,
                actual: bad.len(),
            });
        }
        let features = DMatrix::from_fn(rows.len(), p, |i, j| rows[i][j]);
        Self::new(features, DVector::from_column_slice(responses))
    }

    pub fn len(&self) -> usize {
        self.responses.len()
    }

    pub fn is_empty(&self) -> bool {
        self.responses.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.features.ncols()
    }

    pub fn features(&self) -> &DMatrix<f64> {
        &self.features
    }

    pub fn responses(&self) -> &DVector<f64> {
        &self.responses
    }

    pub fn row(&self, i: usize) -> Vec<f64> {
        self.features.row(i).iter().copied().collect()
    }

    /// Rows at `indices`, in the given order.
    pub fn select(&self, indices: &[usize]) -> Self {
        let features = self.features.select_rows(indices);
        let responses = DVector::from_iterator(indices.len(), indices.iter().map(|&i| self.responses[i]));
        Self {
            features,
            responses,
        }
    }

    /// The dataset with row `j` removed.
    pub fn without(&self, j: usize) -> Self {
        Self {
            features: self.features.clone().remove_row(j),
            responses: self.responses.clone().remove_row(j),
        }
    }
}

/// Gaussian weights with standard deviation `1/sqrt(fan_in)`, zero biases.
pub fn init_params(arch: &MlpArchitecture, seed: u64) -> ParamVector {
    let mut rng = rng::seeded(seed);
    let mut values = vec![0.0; arch.num_params()];
    for layer in arch.layers() {
        let normal = Normal::new(0.0, 1.0 / (layer.fan_in as f64).sqrt()).expect("positive sd");
        for v in &mut values[layer.weights..layer.bias] {
            *v = normal.sample(&mut rng);
        }
    }
    ParamVector {
        values,
        arch_fingerprint: arch.fingerprint(),
    }
}

fn weight_view<'a>(values: &'a [f64], layer: &LayerShape) -> DMatrixView<'a, f64> {
    DMatrixView::from_slice(&values[layer.weights..layer.bias], layer.fan_in, layer.fan_out)
}

fn check_inputs(params: &ParamVector, arch: &MlpArchitecture, x: &DMatrix<f64>) -> Result<()> {
    params.check(arch)?;
    if x.ncols() != arch.input_dim {
        return Err(Error::DimensionMismatch {
            context: "input features",
            expected: arch.input_dim,
            actual: x.ncols(),
        });
    }
    Ok(())
}

/// Hidden activations for every layer (input first) and the output column.
fn propagate(values: &[f64], arch: &MlpArchitecture, x: &DMatrix<f64>) -> (Vec<DMatrix<f64>>, DVector<f64>) {
    let layers = arch.layers();
    let mut acts = Vec::with_capacity(layers.len());
    acts.push(x.clone());
    for (idx, layer) in layers.iter().enumerate() {
        let input = acts.last().expect("input pushed");
        let mut z = input * weight_view(values, layer);
        for (b, mut col) in z.column_iter_mut().enumerate() {
            let bias = values[layer.bias + b];
            col.iter_mut().for_each(|v| *v += bias);
        }
        if idx + 1 == layers.len() {
            let out = DVector::from_column_slice(z.as_slice());
            return (acts, out);
        }
        z.apply(|v| *v = arch.activation.apply(*v));
        acts.push(z);
    }
    unreachable!("architecture always has an output layer")
}

/// Network output for every row of `x`.
pub fn batch_forward(params: &ParamVector, arch: &MlpArchitecture, x: &DMatrix<f64>) -> Result<DVector<f64>> {
    check_inputs(params, arch, x)?;
    Ok(propagate(params.values(), arch, x).1)
}

pub fn forward(params: &ParamVector, arch: &MlpArchitecture, x: &[f64]) -> Result<f64> {
    let row = DMatrix::from_row_slice(1, x.len(), x);
    Ok(batch_forward(params, arch, &row)?[0])
}

/// Backpropagates per-row output sensitivities `seeds` and writes, for row i,
/// `seeds[i] * grad_theta f(x_i)` into column i of the returned `M x n` matrix.
fn per_example_backprop(
    values: &[f64],
    arch: &MlpArchitecture,
    acts: &[DMatrix<f64>],
    seeds: DMatrix<f64>,
) -> DMatrix<f64> {
    let layers = arch.layers();
    let n = seeds.nrows();
    let m = arch.num_params();
    let mut jt = DMatrix::<f64>::zeros(m, n);
    let mut delta = seeds;
    let mut row_buf = Vec::new();
    for (idx, layer) in layers.iter().enumerate().rev() {
        let input = &acts[idx];
        let storage = jt.as_mut_slice();
        for i in 0..n {
            let col = &mut storage[i * m..(i + 1) * m];
            row_buf.clear();
            row_buf.extend(input.row(i).iter().copied());
            for b in 0..layer.fan_out {
                let d = delta[(i, b)];
                col[layer.bias + b] = d;
                let w = &mut col[layer.weights + b * layer.fan_in..layer.weights + (b + 1) * layer.fan_in];
                for (dst, &a) in w.iter_mut().zip(&row_buf) {
                    *dst = a * d;
                }
            }
        }
        if idx > 0 {
            let mut next = &delta * weight_view(values, layer).transpose();
            next.zip_apply(input, |d, a| *d *= arch.activation.derivative_at_output(a));
            delta = next;
        }
    }
    jt
}

/// Predictions and the transposed Jacobian (`M x n`, one column per row of `x`).
pub(crate) fn jacobian_columns(
    params: &ParamVector,
    arch: &MlpArchitecture,
    x: &DMatrix<f64>,
) -> Result<(DVector<f64>, DMatrix<f64>)> {
    check_inputs(params, arch, x)?;
    let (acts, out) = propagate(params.values(), arch, x);
    let seeds = DMatrix::from_element(x.nrows(), 1, 1.0);
    Ok((out, per_example_backprop(params.values(), arch, &acts, seeds)))
}

/// Per-layer factors of the parameter gradient. For each layer the gradient
/// block of row i is `input_i (x) delta_i` plus the bias part `delta_i`, so
/// gradient inner products never need the full `M`-vector.
#[derive(Clone, Debug)]
pub(crate) struct TangentFactors {
    pub(crate) outputs: DVector<f64>,
    layers: Vec<(DMatrix<f64>, DMatrix<f64>)>,
}

impl TangentFactors {
    pub(crate) fn new(params: &ParamVector, arch: &MlpArchitecture, x: &DMatrix<f64>) -> Result<Self> {
        check_inputs(params, arch, x)?;
        let values = params.values();
        let layers = arch.layers();
        let (mut acts, outputs) = propagate(values, arch, x);
        let mut factors = Vec::with_capacity(layers.len());
        let mut delta = DMatrix::from_element(x.nrows(), 1, 1.0);
        for (idx, layer) in layers.iter().enumerate().rev() {
            let input = acts.pop().expect("one activation per layer");
            let next = if idx > 0 {
                let mut next = &delta * weight_view(values, layer).transpose();
                next.zip_apply(&input, |d, a| *d *= arch.activation.derivative_at_output(a));
                next
            } else {
                DMatrix::zeros(0, 0)
            };
            factors.push((input, std::mem::replace(&mut delta, next)));
        }
        Ok(Self { outputs, layers: factors })
    }

    /// `K[i, k] = grad f(a_i) . grad f(b_k)`.
    pub(crate) fn kernel(&self, other: &TangentFactors) -> DMatrix<f64> {
        let mut k = DMatrix::zeros(self.outputs.len(), other.outputs.len());
        for ((a_in, a_d), (b_in, b_d)) in self.layers.iter().zip(&other.layers) {
            let mut inputs = a_in * b_in.transpose();
            inputs.add_scalar_mut(1.0);
            k += inputs.component_mul(&(a_d * b_d.transpose()));
        }
        k
    }
}

/// Neural tangent kernel `J(a) J(b)^T` at `params` (rows of `a` by rows of `b`).
pub fn tangent_kernel(
    params: &ParamVector,
    arch: &MlpArchitecture,
    a: &DMatrix<f64>,
    b: &DMatrix<f64>,
) -> Result<DMatrix<f64>> {
    let fa = TangentFactors::new(params, arch, a)?;
    let fb = TangentFactors::new(params, arch, b)?;
    Ok(fa.kernel(&fb))
}

/// Row i is the gradient of `f(x_i; .)` at `params` (n x M).
pub fn param_jacobian(params: &ParamVector, arch: &MlpArchitecture, x: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    Ok(jacobian_columns(params, arch, x)?.1.transpose())
}

/// Per-example gradients of `0.5 (y - f(x))^2`, one column per example.
pub(crate) fn per_example_loss_gradients(
    params: &ParamVector,
    arch: &MlpArchitecture,
    x: &DMatrix<f64>,
    y: &DVector<f64>,
) -> Result<DMatrix<f64>> {
    check_inputs(params, arch, x)?;
    if y.len() != x.nrows() {
        return Err(Error::DimensionMismatch {
            context: "responses",
            expected: x.nrows(),
            actual: y.len(),
        });
    }
    let (acts, out) = propagate(params.values(), arch, x);
    let seeds = DMatrix::from_column_slice(x.nrows(), 1, (&out - y).as_slice());
    Ok(per_example_backprop(params.values(), arch, &acts, seeds))
}

/// Row i is the gradient of `0.5 (y_i - f(x_i; theta))^2` (n x M).
pub fn batch_loss_gradients(
    params: &ParamVector,
    arch: &MlpArchitecture,
    data: &RegressionDataset,
) -> Result<DMatrix<f64>> {
    Ok(per_example_loss_gradients(params, arch, data.features(), data.responses())?.transpose())
}

/// Gradient of the squared-error loss `0.5 (y - f(x; theta))^2`.
pub fn loss_gradient(params: &ParamVector, arch: &MlpArchitecture, x: &[f64], y: f64) -> Result<Vec<f64>> {
    let row = DMatrix::from_row_slice(1, x.len(), x);
    let g = per_example_loss_gradients(params, arch, &row, &DVector::from_element(1, y))?;
    Ok(g.as_slice().to_vec())
}

/// Sum of squared-error loss gradients over the rows of `x`.
fn summed_loss_gradient(values: &[f64], arch: &MlpArchitecture, x: &DMatrix<f64>, y: &DVector<f64>, grad: &mut [f64]) {
    let layers = arch.layers();
    let (acts, out) = propagate(values, arch, x);
    let mut delta = DMatrix::from_column_slice(x.nrows(), 1, (&out - y).as_slice());
    for (idx, layer) in layers.iter().enumerate().rev() {
        let input = &acts[idx];
        let gw = input.transpose() * &delta;
        grad[layer.weights..layer.bias].copy_from_slice(gw.as_slice());
        for (b, col) in delta.column_iter().enumerate() {
            grad[layer.bias + b] = col.sum();
        }
        if idx > 0 {
            let mut next = &delta * weight_view(values, layer).transpose();
            next.zip_apply(input, |d, a| *d *= arch.activation.derivative_at_output(a));
            delta = next;
        }
    }
}

/// Plain mini-batch SGD on squared error.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SgdConfig {
    pub learning_rate: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub seed: u64,
}

impl SgdConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::invalid("learning rate must be positive"));
        }
        if self.batch_size == 0 {
            return Err(Error::invalid("batch size must be positive"));
        }
        Ok(())
    }
}

/// Trains from `init_params(arch, cfg.seed)`, reshuffling every epoch and
/// stepping on the mean gradient of each mini-batch.
pub fn sgd_train(data: &RegressionDataset, arch: &MlpArchitecture, cfg: &SgdConfig) -> Result<ParamVector> {
    cfg.validate()?;
    if data.is_empty() {
        return Err(Error::EmptyInput("training data"));
    }
    let mut params = init_params(arch, cfg.seed);
    check_inputs(&params, arch, data.features())?;
    let mut rng = rng::stream(cfg.seed, rng::TAG_SHUFFLE);
    let mut order: Vec<usize> = (0..data.len()).collect();
    let mut grad = vec![0.0; arch.num_params()];
    for _ in 0..cfg.epochs {
        order.shuffle(&mut rng);
        for batch in order.chunks(cfg.batch_size) {
            let xb = data.features().select_rows(batch);
            let yb = DVector::from_iterator(batch.len(), batch.iter().map(|&i| data.responses()[i]));
            summed_loss_gradient(params.values(), arch, &xb, &yb, &mut grad);
            let step = cfg.learning_rate / batch.len() as f64;
            for (p, g) in params.values_mut().iter_mut().zip(&grad) {
                *p -= step * g;
            }
        }
    }
    if params.values().iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("SGD iterate (learning rate too large?)"));
    }
    Ok(params)
}
