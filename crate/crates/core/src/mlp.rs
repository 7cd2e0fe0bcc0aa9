//! Fully connected binary classifier: tanh hidden layers, sigmoid output,
//! mean binary cross-entropy loss, trained with Adam on shuffled
//! mini-batches.
//!
//! Weights are stored `fan_in × fan_out`, row-major, so a batch forward pass
//! is `X · W + b`. Matrix products go through `matrixmultiply`, which is
//! single-threaded and uses a fixed blocking order, so training is
//! bit-reproducible for a given seed on a given machine.

use std::io::{Read, Write};
use std::path::Path;

use rand::distr::{Distribution, Uniform};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::codec::{self, FormatError};
use crate::dataset::WindowedDataset;

pub const MODEL_MAGIC: &[u8; 4] = b"GLMN";
pub const MODEL_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum MlpError {
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("training data contains a single class")]
    SingleClassData,
    #[error("training data is empty")]
    EmptyData,
    #[error("invalid config: {0}")]
    InvalidConfig(String),
    #[error(transparent)]
    Format(#[from] FormatError),
}

impl From<std::io::Error> for MlpError {
    fn from(e: std::io::Error) -> Self {
        Self::Format(FormatError::Io(e))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MlpConfig {
    pub hidden_sizes: Vec<usize>,
    pub learning_rate: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub seed: u64,
    pub adam_beta1: f64,
    pub adam_beta2: f64,
    pub adam_eps: f64,
}

impl Default for MlpConfig {
    fn default() -> Self {
        Self {
            hidden_sizes: vec![256, 128, 64, 32, 16],
            learning_rate: 1e-5,
            epochs: 500,
            batch_size: 256,
            seed: 0,
            adam_beta1: 0.9,
            adam_beta2: 0.999,
            adam_eps: 1e-8,
        }
    }
}

impl MlpConfig {
    pub fn validate(&self) -> Result<(), MlpError> {
        let bad = |m: &str| Err(MlpError::InvalidConfig(m.into()));
        if self.hidden_sizes.iter().any(|&h| h == 0) {
            return bad("hidden layer widths must be positive");
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return bad("learning_rate must be positive");
        }
        if self.batch_size == 0 {
            return bad("batch_size must be at least 1");
        }
        if !(0.0..1.0).contains(&self.adam_beta1) || !(0.0..1.0).contains(&self.adam_beta2) {
            return bad("Adam betas must lie in [0, 1)");
        }
        if self.adam_eps <= 0.0 {
            return bad("adam_eps must be positive");
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Activation {
    Tanh,
    Sigmoid,
}

impl Activation {
    fn tag(self) -> u8 {
        match self {
            Self::Tanh => 0,
            Self::Sigmoid => 1,
        }
    }

    fn from_tag(t: u8) -> Result<Self, FormatError> {
        match t {
            0 => Ok(Self::Tanh),
            1 => Ok(Self::Sigmoid),
            _ => Err(FormatError::Corrupt(format!("unknown activation tag {t}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Layer {
    pub inputs: usize,
    pub outputs: usize,
    /// `inputs × outputs`, row-major.
    pub weights: Vec<f64>,
    pub bias: Vec<f64>,
    pub activation: Activation,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochStats {
    pub loss: f64,
    pub accuracy: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MlpModel {
    layers: Vec<Layer>,
    history: Vec<EpochStats>,
}

/// Gradient tensors in the same order as [`MlpModel::params`].
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    pub tensors: Vec<Vec<f64>>,
}

impl Gradients {
    pub fn norm(&self) -> f64 {
        self.tensors.iter().flatten().map(|g| g * g).sum::<f64>().sqrt()
    }
}

/// C = A · B (+ beta · C). Strides are in elements; C is row-major m × n.
#[allow(clippy::too_many_arguments)]
fn gemm(m: usize, k: usize, n: usize, a: &[f64], a_strides: (usize, usize), b: &[f64], b_strides: (usize, usize), beta: f64, c: &mut [f64]) {
    let span = |rows: usize, cols: usize, (rs, cs): (usize, usize)| {
        if rows == 0 || cols == 0 {
            0
        } else {
            (rows - 1) * rs + (cols - 1) * cs + 1
        }
    };
    assert!(a.len() >= span(m, k, a_strides));
    assert!(b.len() >= span(k, n, b_strides));
    assert_eq!(c.len(), m * n);
    if m == 0 || n == 0 {
        return;
    }
    // SAFETY: the asserts above bound every element the kernel touches.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            1.0,
            a.as_ptr(),
            a_strides.0 as isize,
            a_strides.1 as isize,
            b.as_ptr(),
            b_strides.0 as isize,
            b_strides.1 as isize,
            beta,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

/// z += x · W for a single input row.
fn row_times(x: &[f64], l: &Layer, z: &mut [f64]) {
    for (&xi, w) in x.iter().zip(l.weights.chunks_exact(l.outputs)) {
        for (zj, wj) in z.iter_mut().zip(w) {
            *zj += xi * wj;
        }
    }
}

fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// Binary cross-entropy computed from the logit.
fn bce_from_logit(z: f64, y: f64) -> f64 {
    z.max(0.0) - z * y + (-z.abs()).exp().ln_1p()
}

const P_MIN: f64 = 1e-16;
const P_MAX: f64 = 1.0 - f64::EPSILON / 2.0;

impl MlpModel {
    /// Glorot-uniform weights, zero biases.
    pub fn init(cfg: &MlpConfig, input_dim: usize) -> Result<Self, MlpError> {
        cfg.validate()?;
        if input_dim == 0 {
            return Err(MlpError::InvalidConfig("input_dim must be at least 1".into()));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        let mut dims = vec![input_dim];
        dims.extend(&cfg.hidden_sizes);
        dims.push(1);
        let layers = dims
            .windows(2)
            .enumerate()
            .map(|(i, d)| {
                let (fan_in, fan_out) = (d[0], d[1]);
                let bound = (6.0 / (fan_in + fan_out) as f64).sqrt();
                let dist = Uniform::new_inclusive(-bound, bound).expect("finite bound");
                Layer {
                    inputs: fan_in,
                    outputs: fan_out,
                    weights: (0..fan_in * fan_out).map(|_| dist.sample(&mut rng)).collect(),
                    bias: vec![0.0; fan_out],
                    activation: if i + 2 == dims.len() {
                        Activation::Sigmoid
                    } else {
                        Activation::Tanh
                    },
                }
            })
            .collect();
        Ok(Self {
            layers,
            history: Vec::new(),
        })
    }

    /// Assembles a model from explicit layers, checking that dimensions chain
    /// and parameters are finite.
    pub fn from_layers(layers: Vec<Layer>, history: Vec<EpochStats>) -> Result<Self, MlpError> {
        if layers.is_empty() {
            return Err(MlpError::InvalidConfig("model needs at least one layer".into()));
        }
        for (i, l) in layers.iter().enumerate() {
            if l.weights.len() != l.inputs * l.outputs || l.bias.len() != l.outputs || l.inputs == 0 || l.outputs == 0 {
                return Err(MlpError::InvalidConfig(format!("layer {i} has inconsistent shapes")));
            }
            if let Some(next) = layers.get(i + 1) {
                if next.inputs != l.outputs {
                    return Err(MlpError::DimensionMismatch {
                        expected: l.outputs,
                        got: next.inputs,
                    });
                }
            }
            if l.weights.iter().chain(&l.bias).any(|v| !v.is_finite()) {
                return Err(MlpError::InvalidConfig(format!("layer {i} has non-finite parameters")));
            }
        }
        let last = layers.last().expect("non-empty");
        if last.outputs != 1 || last.activation != Activation::Sigmoid {
            return Err(MlpError::InvalidConfig("output layer must be a single sigmoid unit".into()));
        }
        Ok(Self { layers, history })
    }

    pub fn layers(&self) -> &[Layer] {
        &self.layers
    }

    pub fn history(&self) -> &[EpochStats] {
        &self.history
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].inputs
    }

    /// Parameter tensors: weights then bias, layer by layer.
    pub fn params(&self) -> Vec<&[f64]> {
        self.layers
            .iter()
            .flat_map(|l| [l.weights.as_slice(), l.bias.as_slice()])
            .collect()
    }

    pub fn params_mut(&mut self) -> Vec<&mut [f64]> {
        self.layers
            .iter_mut()
            .flat_map(|l| [l.weights.as_mut_slice(), l.bias.as_mut_slice()])
            .collect()
    }

    fn check_batch(&self, inputs: &[f64], rows: usize) -> Result<(), MlpError> {
        let expected = rows * self.input_dim();
        if inputs.len() != expected {
            return Err(MlpError::DimensionMismatch {
                expected,
                got: inputs.len(),
            });
        }
        Ok(())
    }

    /// Hidden activations for each hidden layer followed by the output
    /// logits.
    fn forward_cache(&self, inputs: &[f64], rows: usize) -> Vec<Vec<f64>> {
        let mut outs: Vec<Vec<f64>> = Vec::with_capacity(self.layers.len());
        for (i, l) in self.layers.iter().enumerate() {
            let x = if i == 0 { inputs } else { &outs[i - 1] };
            let mut z = vec![0.0; rows * l.outputs];
            for row in z.chunks_exact_mut(l.outputs) {
                row.copy_from_slice(&l.bias);
            }
            if rows == 1 {
                // Packing the weights for gemm would cost as much as the
                // product itself.
                row_times(x, l, &mut z);
            } else {
                gemm(rows, l.inputs, l.outputs, x, (l.inputs, 1), &l.weights, (l.outputs, 1), 1.0, &mut z);
            }
            if l.activation == Activation::Tanh {
                z.iter_mut().for_each(|v| *v = v.tanh());
            }
            outs.push(z);
        }
        outs
    }

    /// Logits for a batch of row-major inputs.
    pub fn logits(&self, inputs: &[f64], rows: usize) -> Result<Vec<f64>, MlpError> {
        self.check_batch(inputs, rows)?;
        Ok(self.forward_cache(inputs, rows).pop().expect("at least one layer"))
    }

    /// P(high) for each row, clamped into the open interval (0, 1).
    pub fn predict_batch(&self, inputs: &[f64], rows: usize) -> Result<Vec<f64>, MlpError> {
        Ok(self
            .logits(inputs, rows)?
            .into_iter()
            .map(|z| sigmoid(z).clamp(P_MIN, P_MAX))
            .collect())
    }

    pub fn forward(&self, input: &[f64]) -> Result<f64, MlpError> {
        Ok(self.predict_batch(input, 1)?[0])
    }

    /// Output logit of one row given the first layer's pre-activation.
    fn logit_from_first(&self, mut z: Vec<f64>) -> f64 {
        for (i, l) in self.layers.iter().enumerate() {
            if i > 0 {
                let mut next = l.bias.clone();
                row_times(&z, l, &mut next);
                z = next;
            }
            if l.activation == Activation::Tanh {
                z.iter_mut().for_each(|v| *v = v.tanh());
            }
        }
        z[0]
    }

    /// Mean binary cross-entropy over a batch.
    pub fn loss(&self, inputs: &[f64], labels: &[f64]) -> Result<f64, MlpError> {
        let z = self.logits(inputs, labels.len())?;
        Ok(z.iter().zip(labels).map(|(&z, &y)| bce_from_logit(z, y)).sum::<f64>() / labels.len() as f64)
    }

    /// Mean BCE loss and its gradient with respect to every parameter.
    pub fn backward(&self, inputs: &[f64], labels: &[f64]) -> Result<(Gradients, f64), MlpError> {
        self.backward_with_logits(inputs, labels).map(|(g, loss, _)| (g, loss))
    }

    fn backward_with_logits(&self, inputs: &[f64], labels: &[f64]) -> Result<(Gradients, f64, Vec<f64>), MlpError> {
        let rows = labels.len();
        if rows == 0 {
            return Err(MlpError::EmptyData);
        }
        self.check_batch(inputs, rows)?;
        let mut cache = self.forward_cache(inputs, rows);
        let logits = cache.pop().expect("at least one layer");
        let loss = logits.iter().zip(labels).map(|(&z, &y)| bce_from_logit(z, y)).sum::<f64>() / rows as f64;

        let mut delta: Vec<f64> = logits
            .iter()
            .zip(labels)
            .map(|(&z, &y)| (sigmoid(z) - y) / rows as f64)
            .collect();
        let mut tensors = vec![Vec::new(); 2 * self.layers.len()];
        for (i, l) in self.layers.iter().enumerate().rev() {
            let x = if i == 0 { inputs } else { &cache[i - 1] };
            // dW = xᵀ · delta
            let mut dw = vec![0.0; l.inputs * l.outputs];
            gemm(l.inputs, rows, l.outputs, x, (1, l.inputs), &delta, (l.outputs, 1), 0.0, &mut dw);
            let mut db = vec![0.0; l.outputs];
            for row in delta.chunks_exact(l.outputs) {
                for (b, d) in db.iter_mut().zip(row) {
                    *b += d;
                }
            }
            tensors[2 * i] = dw;
            tensors[2 * i + 1] = db;
            if i > 0 {
                // delta_prev = (delta · Wᵀ) ⊙ tanh'
                let mut prev = vec![0.0; rows * l.inputs];
                gemm(rows, l.outputs, l.inputs, &delta, (l.outputs, 1), &l.weights, (1, l.outputs), 0.0, &mut prev);
                for (p, a) in prev.iter_mut().zip(x) {
                    *p *= 1.0 - a * a;
                }
                delta = prev;
            }
        }
        Ok((Gradients { tensors }, loss, logits))
    }

    pub fn write_to<W: Write>(&self, w: &mut W) -> Result<(), MlpError> {
        codec::write_header(w, MODEL_MAGIC, MODEL_VERSION)?;
        codec::write_u32(w, self.layers.len() as u32)?;
        for l in &self.layers {
            codec::write_u64(w, l.inputs as u64)?;
            codec::write_u64(w, l.outputs as u64)?;
            codec::write_u8(w, l.activation.tag())?;
        }
        for l in &self.layers {
            codec::write_f64s(w, &l.weights)?;
            codec::write_f64s(w, &l.bias)?;
        }
        codec::write_u32(w, self.history.len() as u32)?;
        for e in &self.history {
            codec::write_f64(w, e.loss)?;
            codec::write_f64(w, e.accuracy)?;
        }
        Ok(())
    }

    pub fn read_from<R: Read>(r: &mut R) -> Result<Self, MlpError> {
        let version = codec::read_header(r, MODEL_MAGIC)?;
        if version != MODEL_VERSION {
            return Err(FormatError::UnsupportedVersion { what: "MLP model", version }.into());
        }
        let n = codec::read_u32(r)? as usize;
        let mut shapes = Vec::with_capacity(n.min(1024));
        for _ in 0..n {
            let inputs = codec::read_u64(r)? as usize;
            let outputs = codec::read_u64(r)? as usize;
            let act = Activation::from_tag(codec::read_u8(r)?)?;
            shapes.push((inputs, outputs, act));
        }
        let mut layers = Vec::with_capacity(shapes.len());
        for (inputs, outputs, activation) in shapes {
            let cells = inputs
                .checked_mul(outputs)
                .ok_or_else(|| FormatError::Corrupt("layer size overflow".into()))?;
            let weights = codec::read_f64s(r, cells)?;
            let bias = codec::read_f64s(r, outputs)?;
            layers.push(Layer {
                inputs,
                outputs,
                weights,
                bias,
                activation,
            });
        }
        let epochs = codec::read_u32(r)? as usize;
        let mut history = Vec::with_capacity(epochs.min(1 << 16));
        for _ in 0..epochs {
            history.push(EpochStats {
                loss: codec::read_f64(r)?,
                accuracy: codec::read_f64(r)?,
            });
        }
        codec::expect_eof(r)?;
        Self::from_layers(layers, history)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<(), MlpError> {
        let mut w = std::io::BufWriter::new(std::fs::File::create(path)?);
        self.write_to(&mut w)?;
        w.flush()?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, MlpError> {
        let mut r = std::io::BufReader::new(std::fs::File::open(path)?);
        Self::read_from(&mut r)
    }
}

/// Single-row inference that reads the first layer through prefix sums of
/// its weight rows, so a run of equal input values costs two row reads
/// instead of one per value. Flattened windows of piecewise-constant
/// channels consist almost entirely of such runs.
#[derive(Debug, Clone)]
pub struct RunLengthPredictor {
    model: MlpModel,
    /// `(inputs + 1) × outputs`; row i sums the first i weight rows.
    prefix: Vec<f64>,
}

impl RunLengthPredictor {
    pub fn new(model: MlpModel) -> Self {
        let l = &model.layers[0];
        let mut prefix = vec![0.0; (l.inputs + 1) * l.outputs];
        for (i, w) in l.weights.chunks_exact(l.outputs).enumerate() {
            let (done, rest) = prefix.split_at_mut((i + 1) * l.outputs);
            for ((p, &prev), &wj) in rest[..l.outputs].iter_mut().zip(&done[i * l.outputs..]).zip(w) {
                *p = prev + wj;
            }
        }
        Self { model, prefix }
    }

    pub fn model(&self) -> &MlpModel {
        &self.model
    }

    pub fn into_model(self) -> MlpModel {
        self.model
    }

    /// P(high) for one row; agrees with [`MlpModel::forward`] up to rounding.
    pub fn forward(&self, input: &[f64]) -> Result<f64, MlpError> {
        self.model.check_batch(input, 1)?;
        let l = &self.model.layers[0];
        let runs = 1 + input.windows(2).filter(|p| p[0] != p[1]).count();
        let mut z = l.bias.clone();
        if 2 * runs > input.len() {
            row_times(input, l, &mut z);
        } else {
            let n = l.outputs;
            let mut a = 0;
            while a < input.len() {
                let v = input[a];
                let mut b = a + 1;
                while b < input.len() && input[b] == v {
                    b += 1;
                }
                if v != 0.0 {
                    let (lo, hi) = (&self.prefix[a * n..(a + 1) * n], &self.prefix[b * n..(b + 1) * n]);
                    for ((zj, h), l) in z.iter_mut().zip(hi).zip(lo) {
                        *zj += v * (h - l);
                    }
                }
                a = b;
            }
        }
        Ok(sigmoid(self.model.logit_from_first(z)).clamp(P_MIN, P_MAX))
    }
}


/// First and second moment estimates for every parameter tensor.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub step: u64,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
}

impl AdamState {
    pub fn new(model: &MlpModel) -> Self {
        let zeros: Vec<Vec<f64>> = model.params().iter().map(|p| vec![0.0; p.len()]).collect();
        Self {
            step: 0,
            m: zeros.clone(),
            v: zeros,
        }
    }
}

/// One bias-corrected Adam update.
pub fn adam_step(model: &mut MlpModel, grads: &Gradients, state: &mut AdamState, cfg: &MlpConfig) {
    state.step += 1;
    let t = state.step as i32;
    let c1 = 1.0 - cfg.adam_beta1.powi(t);
    let c2 = 1.0 - cfg.adam_beta2.powi(t);
    let (b1, b2, lr, eps) = (cfg.adam_beta1, cfg.adam_beta2, cfg.learning_rate, cfg.adam_eps);
    for (((param, g), m), v) in model
        .params_mut()
        .into_iter()
        .zip(&grads.tensors)
        .zip(&mut state.m)
        .zip(&mut state.v)
    {
        for (((p, &g), m), v) in param.iter_mut().zip(g).zip(m.iter_mut()).zip(v.iter_mut()) {
            *m = b1 * *m + (1.0 - b1) * g;
            *v = b2 * *v + (1.0 - b2) * g * g;
            let m_hat = *m / c1;
            let v_hat = *v / c2;
            *p -= lr * m_hat / (v_hat.sqrt() + eps);
        }
    }
}

/// Row order for one epoch. Depends only on (seed, epoch, n).
pub fn epoch_permutation(seed: u64, epoch: usize, n: usize) -> Vec<usize> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(epoch as u64 + 1);
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(&mut rng);
    idx
}

/// Trains with seeded per-epoch shuffling; the last partial batch is used.
pub fn train(data: &WindowedDataset, cfg: &MlpConfig) -> Result<MlpModel, MlpError> {
    train_with_schedule(data, cfg, |epoch| epoch_permutation(cfg.seed, epoch, data.len()))
}

/// Like [`train`] but with the per-epoch row order supplied by `schedule`.
pub fn train_with_schedule(
    data: &WindowedDataset,
    cfg: &MlpConfig,
    mut schedule: impl FnMut(usize) -> Vec<usize>,
) -> Result<MlpModel, MlpError> {
    if data.is_empty() {
        return Err(MlpError::EmptyData);
    }
    if !data.has_both_classes() {
        return Err(MlpError::SingleClassData);
    }
    let mut model = MlpModel::init(cfg, data.width())?;
    let mut state = AdamState::new(&model);
    let width = data.width();
    let n = data.len();
    let mut batch_x = Vec::with_capacity(cfg.batch_size.min(n) * width);
    let mut batch_y = Vec::with_capacity(cfg.batch_size.min(n));

    for epoch in 0..cfg.epochs {
        let order = schedule(epoch);
        if order.len() != n {
            return Err(MlpError::DimensionMismatch {
                expected: n,
                got: order.len(),
            });
        }
        let (mut loss_sum, mut correct) = (0.0, 0usize);
        for chunk in order.chunks(cfg.batch_size) {
            batch_x.clear();
            batch_y.clear();
            for &i in chunk {
                batch_x.extend_from_slice(data.row(i));
                batch_y.push(data.labels()[i] as f64);
            }
            let (grads, loss, logits) = model.backward_with_logits(&batch_x, &batch_y)?;
            loss_sum += loss * chunk.len() as f64;
            // accuracy of the pre-update predictions
            correct += logits
                .iter()
                .zip(&batch_y)
                .filter(|(&z, &y)| (z >= 0.0) == (y >= 0.5))
                .count();
            adam_step(&mut model, &grads, &mut state, cfg);
        }
        let stats = EpochStats {
            loss: loss_sum / n as f64,
            accuracy: correct as f64 / n as f64,
        };
        if epoch % 50 == 0 || epoch + 1 == cfg.epochs {
            tracing::debug!(epoch, loss = stats.loss, accuracy = stats.accuracy, "mlp epoch");
        }
        model.history.push(stats);
    }
    Ok(model)
}
