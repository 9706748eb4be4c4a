//! Feed-forward regression network written from scratch.
//!
//! Every hidden layer is `affine → batch-norm → activation → dropout`, and the
//! output layer is a single linear unit predicting the next month's return.
//! Dropout is inverted (kept activations are scaled by `1 / (1 - p)` during
//! training), so inference needs no rescaling.
//!
//! Training minimises the mean squared error with mini-batches, keeps the
//! weights with the lowest validation MSE seen so far, and stops once the
//! validation MSE has not strictly improved for `patience` consecutive epochs.

use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;
use core::fmt;

use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::indicators::{FeatureMatrix, FeatureRow};
use crate::rng::{derive_seed, seeded, ChaCha8Rng};

/// Variance floor inside batch normalisation.
pub const BN_EPSILON: f64 = 1e-5;
/// Weight of the previous running statistic in the batch-norm moving average.
pub const BN_MOMENTUM: f64 = 0.9;
pub const RMSPROP_DECAY: f64 = 0.9;
pub const ADAM_BETA1: f64 = 0.9;
pub const ADAM_BETA2: f64 = 0.999;
pub const OPTIMIZER_EPSILON: f64 = 1e-8;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum NeuralError {
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("empty dataset")]
    EmptyDataset,
    #[error("loss became non-finite in epoch {epoch}")]
    NonFiniteLoss { epoch: usize },
    #[error("invalid hyperparameters: {0}")]
    InvalidHyperparameters(String),
    #[error("gradient checking needs a smooth activation, got {0}")]
    UnsupportedActivation(Activation),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Tanh,
    Relu,
    Sigmoid,
}

impl Activation {
    pub const ALL: [Activation; 3] = [Activation::Tanh, Activation::Relu, Activation::Sigmoid];

    #[inline]
    fn apply(self, x: f64) -> f64 {
        match self {
            Activation::Tanh => libm::tanh(x),
            Activation::Relu => x.max(0.0),
            Activation::Sigmoid => 1.0 / (1.0 + libm::exp(-x)),
        }
    }

    /// Derivative expressed through the input `x` and output `y = f(x)`.
    #[inline]
    fn derivative(self, x: f64, y: f64) -> f64 {
        match self {
            Activation::Tanh => 1.0 - y * y,
            Activation::Relu => {
                if x > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::Sigmoid => y * (1.0 - y),
        }
    }
}

impl fmt::Display for Activation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Activation::Tanh => "tanh",
            Activation::Relu => "relu",
            Activation::Sigmoid => "sigmoid",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OptimizerKind {
    RmsProp,
    Adam,
    /// Plain stochastic gradient descent, no momentum.
    Sgd,
}

impl OptimizerKind {
    pub const ALL: [OptimizerKind; 3] = [OptimizerKind::RmsProp, OptimizerKind::Adam, OptimizerKind::Sgd];
}

impl fmt::Display for OptimizerKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            OptimizerKind::RmsProp => "rmsprop",
            OptimizerKind::Adam => "adam",
            OptimizerKind::Sgd => "sgd",
        })
    }
}

/// Network and training settings.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Hyperparameters {
    pub n_hidden_layers: usize,
    pub n_hidden_units: usize,
    pub init_std: f64,
    pub dropout_rate: f64,
    pub batch_size: usize,
    pub optimizer: OptimizerKind,
    pub activation: Activation,
    pub learning_rate: f64,
    pub max_epochs: usize,
    pub patience: usize,
}

impl Hyperparameters {
    pub const HIDDEN_LAYERS: [usize; 2] = [2, 3];
    pub const HIDDEN_UNITS: [usize; 4] = [2, 4, 8, 16];
    pub const INIT_STDS: [f64; 3] = [0.025, 0.05, 0.075];
    pub const DROPOUT_RATES: [f64; 3] = [0.25, 0.5, 0.75];
    pub const BATCH_SIZES: [usize; 3] = [28, 64, 128];
    pub const LEARNING_RATE: f64 = 0.001;
    pub const MAX_EPOCHS: usize = 100;
    pub const PATIENCE: usize = 10;

    /// Checks the values can build and train a network at all.
    pub fn validate(&self) -> Result<(), NeuralError> {
        let bad = |what: &str| Err(NeuralError::InvalidHyperparameters(what.into()));
        if self.n_hidden_layers == 0 || self.n_hidden_units == 0 {
            return bad("need at least one hidden layer and unit");
        }
        if !(self.init_std >= 0.0 && self.init_std.is_finite()) {
            return bad("init_std must be finite and non-negative");
        }
        if !(0.0..1.0).contains(&self.dropout_rate) {
            return bad("dropout_rate must lie in [0, 1)");
        }
        if self.batch_size == 0 || self.max_epochs == 0 {
            return bad("batch_size and max_epochs must be positive");
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return bad("learning_rate must be positive");
        }
        Ok(())
    }

    /// Whether every field takes one of the searched values.
    pub fn in_search_space(&self) -> bool {
        Self::HIDDEN_LAYERS.contains(&self.n_hidden_layers)
            && Self::HIDDEN_UNITS.contains(&self.n_hidden_units)
            && Self::INIT_STDS.contains(&self.init_std)
            && Self::DROPOUT_RATES.contains(&self.dropout_rate)
            && Self::BATCH_SIZES.contains(&self.batch_size)
            && self.learning_rate == Self::LEARNING_RATE
            && self.max_epochs == Self::MAX_EPOCHS
            && self.patience == Self::PATIENCE
    }
}

impl Default for Hyperparameters {
    fn default() -> Self {
        Self {
            n_hidden_layers: 2,
            n_hidden_units: 8,
            init_std: 0.05,
            dropout_rate: 0.25,
            batch_size: 64,
            optimizer: OptimizerKind::Adam,
            activation: Activation::Tanh,
            learning_rate: Self::LEARNING_RATE,
            max_epochs: Self::MAX_EPOCHS,
            patience: Self::PATIENCE,
        }
    }
}

/// Fully connected layer; `weights[i * outputs + j]` connects input `i` to unit `j`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dense {
    pub inputs: usize,
    pub outputs: usize,
    pub weights: Vec<f64>,
    pub bias: Vec<f64>,
}

impl Dense {
    fn new(inputs: usize, outputs: usize, init: &Normal<f64>, rng: &mut ChaCha8Rng) -> Self {
        Self {
            inputs,
            outputs,
            weights: (0..inputs * outputs).map(|_| init.sample(rng)).collect(),
            bias: vec![0.0; outputs],
        }
    }

    fn forward(&self, x: &[f64], rows: usize) -> Vec<f64> {
        let mut z = Vec::with_capacity(rows * self.outputs);
        for r in 0..rows {
            z.extend_from_slice(&self.bias);
            let out = &mut z[r * self.outputs..];
            for (i, &xi) in x[r * self.inputs..(r + 1) * self.inputs].iter().enumerate() {
                if xi == 0.0 {
                    continue;
                }
                let w = &self.weights[i * self.outputs..(i + 1) * self.outputs];
                for (o, &wij) in out.iter_mut().zip(w) {
                    *o += xi * wij;
                }
            }
        }
        z
    }

    /// Returns `(dW, db, dX)` for upstream gradient `dz`.
    fn backward(&self, x: &[f64], dz: &[f64], rows: usize) -> (Vec<f64>, Vec<f64>, Vec<f64>) {
        let (n_in, n_out) = (self.inputs, self.outputs);
        let mut dw = vec![0.0; n_in * n_out];
        let mut db = vec![0.0; n_out];
        let mut dx = vec![0.0; rows * n_in];
        for r in 0..rows {
            let g = &dz[r * n_out..(r + 1) * n_out];
            for (b, &gj) in db.iter_mut().zip(g) {
                *b += gj;
            }
            for i in 0..n_in {
                let xi = x[r * n_in + i];
                let w = &self.weights[i * n_out..(i + 1) * n_out];
                let dwi = &mut dw[i * n_out..(i + 1) * n_out];
                let mut acc = 0.0;
                for j in 0..n_out {
                    dwi[j] += xi * g[j];
                    acc += w[j] * g[j];
                }
                dx[r * n_in + i] = acc;
            }
        }
        (dw, db, dx)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BatchNorm {
    pub scale: Vec<f64>,
    pub shift: Vec<f64>,
    pub running_mean: Vec<f64>,
    pub running_var: Vec<f64>,
}

impl BatchNorm {
    fn new(units: usize) -> Self {
        Self {
            scale: vec![1.0; units],
            shift: vec![0.0; units],
            running_mean: vec![0.0; units],
            running_var: vec![1.0; units],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HiddenLayer {
    pub dense: Dense,
    pub norm: Option<BatchNorm>,
}

/// Network weights, normalisation state and the settings that produced them.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainedModel {
    pub hyperparameters: Hyperparameters,
    pub n_inputs: usize,
    pub hidden: Vec<HiddenLayer>,
    pub output: Dense,
    pub seed: u64,
    /// `+∞` until the model has been trained.
    pub best_validation_mse: f64,
}

/// Forward-pass behaviour.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    /// Batch statistics and dropout masks.
    Train,
    /// Running statistics, no dropout; deterministic.
    Infer,
}

#[derive(Clone, Copy)]
struct PassOptions {
    batch_stats: bool,
    dropout: bool,
}

const TRAIN_PASS: PassOptions = PassOptions {
    batch_stats: true,
    dropout: true,
};
const INFER_PASS: PassOptions = PassOptions {
    batch_stats: false,
    dropout: false,
};
/// Batch statistics without dropout: deterministic and differentiable.
const CHECK_PASS: PassOptions = PassOptions {
    batch_stats: true,
    dropout: false,
};

struct LayerCache {
    input: Vec<f64>,
    /// Affine output.
    z: Vec<f64>,
    /// Normalised `z` (batch-norm layers only).
    x_hat: Vec<f64>,
    inv_std: Vec<f64>,
    batch_mean: Vec<f64>,
    batch_var: Vec<f64>,
    /// Activation input.
    pre_act: Vec<f64>,
    /// Activation output before dropout.
    act: Vec<f64>,
    /// Dropout multipliers (0 or `1 / (1 - p)`), empty when dropout is off.
    mask: Vec<f64>,
}

struct ForwardTrace {
    layers: Vec<LayerCache>,
    last_hidden: Vec<f64>,
    output: Vec<f64>,
}

/// Inverted-dropout multipliers: 0 with probability `rate`, else `1 / (1 - rate)`.
fn dropout_mask(rng: &mut ChaCha8Rng, len: usize, rate: f64) -> Vec<f64> {
    let keep = 1.0 / (1.0 - rate);
    (0..len).map(|_| if rng.random::<f64>() < rate { 0.0 } else { keep }).collect()
}

/// Builds an untrained network with weights drawn from `N(0, init_std²)`.
pub fn init_model(hp: &Hyperparameters, n_inputs: usize, seed: u64) -> Result<TrainedModel, NeuralError> {
    TrainedModel::new(hp, n_inputs, seed, true)
}

impl TrainedModel {
    /// As [`init_model`], with batch normalisation optional.
    pub fn new(hp: &Hyperparameters, n_inputs: usize, seed: u64, batch_norm: bool) -> Result<Self, NeuralError> {
        hp.validate()?;
        if n_inputs == 0 {
            return Err(NeuralError::ShapeMismatch("network needs at least one input".into()));
        }
        let init = Normal::new(0.0, hp.init_std).map_err(|_| NeuralError::InvalidHyperparameters("init_std".into()))?;
        let mut rng = seeded(derive_seed(seed, 0));
        let mut hidden = Vec::with_capacity(hp.n_hidden_layers);
        let mut width = n_inputs;
        for _ in 0..hp.n_hidden_layers {
            hidden.push(HiddenLayer {
                dense: Dense::new(width, hp.n_hidden_units, &init, &mut rng),
                norm: batch_norm.then(|| BatchNorm::new(hp.n_hidden_units)),
            });
            width = hp.n_hidden_units;
        }
        let output = Dense::new(width, 1, &init, &mut rng);
        Ok(Self {
            hyperparameters: *hp,
            n_inputs,
            hidden,
            output,
            seed,
            best_validation_mse: f64::INFINITY,
        })
    }

    /// `(inputs, outputs)` of every weight matrix, output layer last.
    pub fn weight_shapes(&self) -> Vec<(usize, usize)> {
        self.hidden
            .iter()
            .map(|h| (h.dense.inputs, h.dense.outputs))
            .chain(core::iter::once((self.output.inputs, self.output.outputs)))
            .collect()
    }

    pub fn n_parameters(&self) -> usize {
        self.params().iter().map(|p| p.len()).sum()
    }

    fn check_inputs(&self, inputs: &[f64]) -> Result<usize, NeuralError> {
        if inputs.is_empty() || inputs.len() % self.n_inputs != 0 {
            return Err(NeuralError::ShapeMismatch(alloc::format!(
                "{} values do not form rows of width {}",
                inputs.len(),
                self.n_inputs
            )));
        }
        Ok(inputs.len() / self.n_inputs)
    }

    fn trace(&self, inputs: &[f64], rows: usize, opts: PassOptions, rng: Option<&mut ChaCha8Rng>) -> ForwardTrace {
        let activation = self.hyperparameters.activation;
        let rate = self.hyperparameters.dropout_rate;
        let mut rng = rng;
        let mut x = inputs.to_vec();
        let mut layers = Vec::with_capacity(self.hidden.len());
        for layer in &self.hidden {
            let units = layer.dense.outputs;
            let z = layer.dense.forward(&x, rows);
            let mut cache = LayerCache {
                input: x,
                pre_act: Vec::new(),
                x_hat: Vec::new(),
                inv_std: Vec::new(),
                batch_mean: Vec::new(),
                batch_var: Vec::new(),
                act: Vec::new(),
                mask: Vec::new(),
                z,
            };
            cache.pre_act = match &layer.norm {
                None => cache.z.clone(),
                Some(bn) => {
                    let (mean, var) = if opts.batch_stats {
                        column_moments(&cache.z, rows, units)
                    } else {
                        (bn.running_mean.clone(), bn.running_var.clone())
                    };
                    let inv_std: Vec<f64> = var.iter().map(|v| 1.0 / libm::sqrt(v + BN_EPSILON)).collect();
                    let mut x_hat = cache.z.clone();
                    let mut y = cache.z.clone();
                    for r in 0..rows {
                        for j in 0..units {
                            let k = r * units + j;
                            x_hat[k] = (cache.z[k] - mean[j]) * inv_std[j];
                            y[k] = bn.scale[j] * x_hat[k] + bn.shift[j];
                        }
                    }
                    cache.x_hat = x_hat;
                    cache.inv_std = inv_std;
                    cache.batch_mean = mean;
                    cache.batch_var = var;
                    y
                }
            };
            cache.act = cache.pre_act.iter().map(|&v| activation.apply(v)).collect();
            let mut out = cache.act.clone();
            if opts.dropout && rate > 0.0 {
                if let Some(rng) = rng.as_deref_mut() {
                    cache.mask = dropout_mask(rng, out.len(), rate);
                    for (o, m) in out.iter_mut().zip(&cache.mask) {
                        *o *= m;
                    }
                }
            }
            layers.push(cache);
            x = out;
        }
        let output = self.output.forward(&x, rows);
        ForwardTrace {
            layers,
            last_hidden: x,
            output,
        }
    }

    /// Predictions for a row-major batch of `n_inputs`-wide rows.
    ///
    /// [`Mode::Train`] uses batch statistics and draws dropout masks from
    /// `rng`, without touching the running statistics.
    pub fn forward(&self, inputs: &[f64], mode: Mode, rng: &mut ChaCha8Rng) -> Result<Vec<f64>, NeuralError> {
        let rows = self.check_inputs(inputs)?;
        let opts = match mode {
            Mode::Train => TRAIN_PASS,
            Mode::Infer => INFER_PASS,
        };
        Ok(self.trace(inputs, rows, opts, Some(rng)).output)
    }

    /// Deterministic inference.
    pub fn infer(&self, inputs: &[f64]) -> Result<Vec<f64>, NeuralError> {
        let rows = self.check_inputs(inputs)?;
        Ok(self.trace(inputs, rows, INFER_PASS, None).output)
    }

    /// Gradients of the batch MSE in parameter order (see [`Self::params`]).
    fn backward(&self, trace: &ForwardTrace, targets: &[f64]) -> Vec<Vec<f64>> {
        let rows = targets.len();
        let activation = self.hyperparameters.activation;
        let d_out: Vec<f64> = trace
            .output
            .iter()
            .zip(targets)
            .map(|(p, y)| 2.0 * (p - y) / rows as f64)
            .collect();
        let (dw_out, db_out, mut d_x) = self.output.backward(&trace.last_hidden, &d_out, rows);
        let mut grads_rev: Vec<Vec<f64>> = vec![db_out, dw_out];
        for (layer, cache) in self.hidden.iter().zip(&trace.layers).rev() {
            let units = layer.dense.outputs;
            let mut d_pre = d_x;
            if !cache.mask.is_empty() {
                for (g, m) in d_pre.iter_mut().zip(&cache.mask) {
                    *g *= m;
                }
            }
            for ((g, &x), &y) in d_pre.iter_mut().zip(&cache.pre_act).zip(&cache.act) {
                *g *= activation.derivative(x, y);
            }
            let d_z = match &layer.norm {
                None => {
                    grads_rev.push(Vec::new());
                    grads_rev.push(Vec::new());
                    d_pre
                }
                Some(bn) => {
                    let mut d_scale = vec![0.0; units];
                    let mut d_shift = vec![0.0; units];
                    let mut sum_dxhat = vec![0.0; units];
                    let mut sum_dxhat_xhat = vec![0.0; units];
                    for r in 0..rows {
                        for j in 0..units {
                            let k = r * units + j;
                            d_scale[j] += d_pre[k] * cache.x_hat[k];
                            d_shift[j] += d_pre[k];
                            let dxh = d_pre[k] * bn.scale[j];
                            sum_dxhat[j] += dxh;
                            sum_dxhat_xhat[j] += dxh * cache.x_hat[k];
                        }
                    }
                    let m = rows as f64;
                    let mut d_z = vec![0.0; rows * units];
                    for r in 0..rows {
                        for j in 0..units {
                            let k = r * units + j;
                            let dxh = d_pre[k] * bn.scale[j];
                            d_z[k] = cache.inv_std[j] / m
                                * (m * dxh - sum_dxhat[j] - cache.x_hat[k] * sum_dxhat_xhat[j]);
                        }
                    }
                    grads_rev.push(d_shift);
                    grads_rev.push(d_scale);
                    d_z
                }
            };
            let (dw, db, dx) = layer.dense.backward(&cache.input, &d_z, rows);
            grads_rev.push(db);
            grads_rev.push(dw);
            d_x = dx;
        }
        grads_rev.reverse();
        grads_rev
    }

    /// Parameter blocks: per hidden layer `W, b, scale, shift`, then output `W, b`.
    /// Layers without batch norm contribute empty scale/shift blocks.
    fn params(&self) -> Vec<&[f64]> {
        let mut out: Vec<&[f64]> = Vec::new();
        for layer in &self.hidden {
            out.push(&layer.dense.weights);
            out.push(&layer.dense.bias);
            match &layer.norm {
                Some(bn) => {
                    out.push(&bn.scale);
                    out.push(&bn.shift);
                }
                None => {
                    out.push(&[]);
                    out.push(&[]);
                }
            }
        }
        out.push(&self.output.weights);
        out.push(&self.output.bias);
        out
    }

    fn params_mut(&mut self) -> Vec<&mut [f64]> {
        let mut out: Vec<&mut [f64]> = Vec::new();
        for layer in &mut self.hidden {
            out.push(&mut layer.dense.weights);
            out.push(&mut layer.dense.bias);
            match &mut layer.norm {
                Some(bn) => {
                    out.push(&mut bn.scale);
                    out.push(&mut bn.shift);
                }
                None => {
                    out.push(&mut []);
                    out.push(&mut []);
                }
            }
        }
        out.push(&mut self.output.weights);
        out.push(&mut self.output.bias);
        out
    }

    fn update_running_stats(&mut self, trace: &ForwardTrace) {
        for (layer, cache) in self.hidden.iter_mut().zip(&trace.layers) {
            if let Some(bn) = &mut layer.norm {
                for j in 0..bn.running_mean.len() {
                    bn.running_mean[j] = BN_MOMENTUM * bn.running_mean[j] + (1.0 - BN_MOMENTUM) * cache.batch_mean[j];
                    bn.running_var[j] = BN_MOMENTUM * bn.running_var[j] + (1.0 - BN_MOMENTUM) * cache.batch_var[j];
                }
            }
        }
    }
}

/// Per-column mean and biased variance of a `rows × cols` buffer.
fn column_moments(z: &[f64], rows: usize, cols: usize) -> (Vec<f64>, Vec<f64>) {
    let m = rows as f64;
    let mut mean = vec![0.0; cols];
    for r in 0..rows {
        for j in 0..cols {
            mean[j] += z[r * cols + j];
        }
    }
    mean.iter_mut().for_each(|v| *v /= m);
    let mut var = vec![0.0; cols];
    for r in 0..rows {
        for j in 0..cols {
            let d = z[r * cols + j] - mean[j];
            var[j] += d * d;
        }
    }
    var.iter_mut().for_each(|v| *v /= m);
    (mean, var)
}

fn mse(predictions: &[f64], targets: &[f64]) -> f64 {
    predictions.iter().zip(targets).map(|(p, y)| (p - y) * (p - y)).sum::<f64>() / targets.len() as f64
}

struct Optimizer {
    kind: OptimizerKind,
    learning_rate: f64,
    step: i32,
    first: Vec<Vec<f64>>,
    second: Vec<Vec<f64>>,
}

impl Optimizer {
    fn new(kind: OptimizerKind, learning_rate: f64, model: &TrainedModel) -> Self {
        let zeros: Vec<Vec<f64>> = model.params().iter().map(|p| vec![0.0; p.len()]).collect();
        Self {
            kind,
            learning_rate,
            step: 0,
            first: zeros.clone(),
            second: zeros,
        }
    }

    fn apply(&mut self, params: Vec<&mut [f64]>, grads: &[Vec<f64>]) {
        self.step += 1;
        let lr = self.learning_rate;
        let (bc1, bc2) = (
            1.0 - libm::pow(ADAM_BETA1, self.step as f64),
            1.0 - libm::pow(ADAM_BETA2, self.step as f64),
        );
        for ((param, grad), (m, v)) in params
            .into_iter()
            .zip(grads)
            .zip(self.first.iter_mut().zip(self.second.iter_mut()))
        {
            for i in 0..param.len() {
                let g = grad[i];
                match self.kind {
                    OptimizerKind::Sgd => param[i] -= lr * g,
                    OptimizerKind::RmsProp => {
                        v[i] = RMSPROP_DECAY * v[i] + (1.0 - RMSPROP_DECAY) * g * g;
                        param[i] -= lr * g / (libm::sqrt(v[i]) + OPTIMIZER_EPSILON);
                    }
                    OptimizerKind::Adam => {
                        m[i] = ADAM_BETA1 * m[i] + (1.0 - ADAM_BETA1) * g;
                        v[i] = ADAM_BETA2 * v[i] + (1.0 - ADAM_BETA2) * g * g;
                        let m_hat = m[i] / bc1;
                        let v_hat = v[i] / bc2;
                        param[i] -= lr * m_hat / (libm::sqrt(v_hat) + OPTIMIZER_EPSILON);
                    }
                }
            }
        }
    }
}

/// Row-major inputs with one regression target per row.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Dataset {
    width: usize,
    inputs: Vec<f64>,
    targets: Vec<f64>,
}

impl Dataset {
    pub fn new(width: usize, inputs: Vec<f64>, targets: Vec<f64>) -> Result<Self, NeuralError> {
        if width == 0 || inputs.len() != width * targets.len() {
            return Err(NeuralError::ShapeMismatch(alloc::format!(
                "{} inputs for {} targets of width {width}",
                inputs.len(),
                targets.len()
            )));
        }
        Ok(Self { width, inputs, targets })
    }

    /// Labelled rows of a feature matrix.
    pub fn from_features(features: &FeatureMatrix) -> Self {
        let mut inputs = Vec::new();
        let mut targets = Vec::new();
        for row in features.labelled() {
            inputs.extend_from_slice(&row.signals);
            targets.push(row.target.unwrap_or_default());
        }
        Self {
            width: features.n_features(),
            inputs,
            targets,
        }
    }

    pub fn len(&self) -> usize {
        self.targets.len()
    }

    pub fn is_empty(&self) -> bool {
        self.targets.is_empty()
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn inputs(&self) -> &[f64] {
        &self.inputs
    }

    pub fn targets(&self) -> &[f64] {
        &self.targets
    }

    fn gather(&self, idx: &[usize]) -> (Vec<f64>, Vec<f64>) {
        let mut x = Vec::with_capacity(idx.len() * self.width);
        let mut y = Vec::with_capacity(idx.len());
        for &i in idx {
            x.extend_from_slice(&self.inputs[i * self.width..(i + 1) * self.width]);
            y.push(self.targets[i]);
        }
        (x, y)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StopReason {
    EarlyStop,
    MaxEpochs,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochStats {
    pub epoch: usize,
    pub train_loss: f64,
    pub validation_mse: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    /// Validation MSE of the untrained network; epoch 0 of the best-so-far race.
    pub initial_validation_mse: f64,
    pub epochs: Vec<EpochStats>,
    /// Epoch whose weights were kept, 0 meaning the initial weights.
    pub best_epoch: usize,
    pub best_validation_mse: f64,
    pub stopping_epoch: usize,
    pub reason: StopReason,
}

impl TrainReport {
    /// Best validation MSE after each epoch, starting with the initial value.
    pub fn best_so_far(&self) -> Vec<f64> {
        let mut best = self.initial_validation_mse;
        core::iter::once(best)
            .chain(self.epochs.iter().map(|e| {
                best = best.min(e.validation_mse);
                best
            }))
            .collect()
    }
}

/// Trains `model` on `train_set`, selecting weights by validation MSE.
pub fn train(
    mut model: TrainedModel,
    train_set: &Dataset,
    val_set: &Dataset,
) -> Result<(TrainedModel, TrainReport), NeuralError> {
    if train_set.is_empty() || val_set.is_empty() {
        return Err(NeuralError::EmptyDataset);
    }
    for set in [train_set, val_set] {
        if set.width != model.n_inputs {
            return Err(NeuralError::ShapeMismatch(alloc::format!(
                "dataset width {} but model expects {}",
                set.width,
                model.n_inputs
            )));
        }
    }
    let hp = model.hyperparameters;
    let mut rng = seeded(derive_seed(model.seed, 1));
    let mut optimizer = Optimizer::new(hp.optimizer, hp.learning_rate, &model);
    let validate = |m: &TrainedModel| -> f64 { mse(&m.infer(&val_set.inputs).unwrap_or_default(), &val_set.targets) };

    let initial = validate(&model);
    if !initial.is_finite() {
        return Err(NeuralError::NonFiniteLoss { epoch: 0 });
    }
    let mut best = model.clone();
    let mut best_mse = initial;
    let mut best_epoch = 0;
    let mut since_improvement = 0;
    let mut epochs = Vec::new();
    let mut reason = StopReason::MaxEpochs;
    let mut order: Vec<usize> = (0..train_set.len()).collect();

    for epoch in 1..=hp.max_epochs {
        order.shuffle(&mut rng);
        let mut loss_sum = 0.0;
        for batch in order.chunks(hp.batch_size) {
            let (x, y) = train_set.gather(batch);
            let trace = model.trace(&x, batch.len(), TRAIN_PASS, Some(&mut rng));
            let loss = mse(&trace.output, &y);
            if !loss.is_finite() {
                return Err(NeuralError::NonFiniteLoss { epoch });
            }
            loss_sum += loss * batch.len() as f64;
            let grads = model.backward(&trace, &y);
            model.update_running_stats(&trace);
            optimizer.apply(model.params_mut(), &grads);
        }
        let validation_mse = validate(&model);
        if !validation_mse.is_finite() {
            return Err(NeuralError::NonFiniteLoss { epoch });
        }
        epochs.push(EpochStats {
            epoch,
            train_loss: loss_sum / train_set.len() as f64,
            validation_mse,
        });
        if validation_mse < best_mse {
            best_mse = validation_mse;
            best_epoch = epoch;
            best = model.clone();
            since_improvement = 0;
        } else {
            since_improvement += 1;
            if since_improvement >= hp.patience {
                reason = StopReason::EarlyStop;
                break;
            }
        }
    }
    best.best_validation_mse = best_mse;
    let report = TrainReport {
        initial_validation_mse: initial,
        stopping_epoch: epochs.len(),
        epochs,
        best_epoch,
        best_validation_mse: best_mse,
        reason,
    };
    Ok((best, report))
}

/// Largest relative error between analytic and central-difference gradients
/// of the batch MSE, over every parameter.
///
/// Runs with batch statistics and no dropout. The relative error of one
/// parameter is `|a - n| / max(|a| + |n|, 1e-6)`; the floor keeps parameters
/// whose true gradient is zero (hidden biases ahead of batch norm) from
/// dividing rounding noise by itself.
pub fn gradient_check(model: &TrainedModel, inputs: &[f64], targets: &[f64], epsilon: f64) -> Result<f64, NeuralError> {
    let activation = model.hyperparameters.activation;
    if activation == Activation::Relu {
        return Err(NeuralError::UnsupportedActivation(activation));
    }
    let rows = model.check_inputs(inputs)?;
    if rows != targets.len() {
        return Err(NeuralError::ShapeMismatch("one target per row required".into()));
    }
    let analytic = model.backward(&model.trace(inputs, rows, CHECK_PASS, None), targets);
    let loss = |m: &TrainedModel| mse(&m.trace(inputs, rows, CHECK_PASS, None).output, targets);
    let mut probe = model.clone();
    let mut worst: f64 = 0.0;
    for (block, grads) in analytic.iter().enumerate() {
        for (i, &a) in grads.iter().enumerate() {
            let original = probe.params()[block][i];
            probe.params_mut()[block][i] = original + epsilon;
            let up = loss(&probe);
            probe.params_mut()[block][i] = original - epsilon;
            let down = loss(&probe);
            probe.params_mut()[block][i] = original;
            let numeric = (up - down) / (2.0 * epsilon);
            let err = (a - numeric).abs() / (a.abs() + numeric.abs()).max(1e-6);
            worst = worst.max(err);
        }
    }
    Ok(worst)
}

/// Forecast for every row, in the given order.
pub fn predict(model: &TrainedModel, rows: &[&FeatureRow]) -> Result<Vec<f64>, NeuralError> {
    if rows.is_empty() {
        return Err(NeuralError::ShapeMismatch("no rows to predict".into()));
    }
    let mut inputs = Vec::with_capacity(rows.len() * model.n_inputs);
    for row in rows {
        if row.signals.len() != model.n_inputs {
            return Err(NeuralError::ShapeMismatch(alloc::format!(
                "row has {} signals, model expects {}",
                row.signals.len(),
                model.n_inputs
            )));
        }
        inputs.extend_from_slice(&row.signals);
    }
    model.infer(&inputs)
}
