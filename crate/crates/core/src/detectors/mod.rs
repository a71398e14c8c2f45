//! Streaming binary event classifiers: one LSTM layer, a linear readout and
//! a sigmoid, plus hold/release debouncing of the probabilities.

mod debounce;
mod io;
mod train;

pub use debounce::{debounce, DebounceParams, Debouncer, EventDecision};
pub use io::{load_model, read_model, save_model, write_model};
pub use train::{
    accuracy, analytic_gradient, gradient_check, gradient_check_with, train, EpochStats, GradientCheck, Gradients, LabeledSequence, TrainConfig,
    TrainOutcome,
};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::features::{DetectorFeature, DetectorKind};

/// LSTM cells per detector.
pub const HIDDEN_DIM: usize = 55;

#[derive(Debug, Error)]
pub enum DetectorError {
    #[error("input has {got} values, model expects {expected}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("dataset has no labelled frames")]
    EmptyDataset,
    #[error("label {0} is not 0 or 1")]
    NonBinaryLabels(f32),
    #[error("corrupt model file: {0}")]
    CorruptModel(String),
    #[error("model is a {found} detector, expected {expected}")]
    KindMismatch { expected: DetectorKind, found: DetectorKind },
    #[error("invalid model configuration: {0}")]
    InvalidConfig(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub kind: DetectorKind,
    pub input_dim: usize,
    pub hidden_dim: usize,
}

impl ModelConfig {
    /// The shipped geometry for a detector: its feature size and 55 cells.
    pub fn for_kind(kind: DetectorKind) -> Self {
        Self { kind, input_dim: kind.dim(), hidden_dim: HIDDEN_DIM }
    }

    pub fn param_count(&self) -> usize {
        let (d, h) = (self.input_dim, self.hidden_dim);
        4 * h * d + 4 * h * h + 4 * h + h + 1
    }

    fn validate(&self) -> Result<(), DetectorError> {
        if self.input_dim == 0 || self.hidden_dim == 0 {
            return Err(DetectorError::InvalidConfig(format!("{}x{} model", self.input_dim, self.hidden_dim)));
        }
        Ok(())
    }
}

/// Per-dimension z-score statistics from the training set.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NormStats {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

impl NormStats {
    pub fn identity(dim: usize) -> Self {
        Self { mean: vec![0.0; dim], std: vec![1.0; dim] }
    }

    pub fn from_frames<'a>(frames: impl Iterator<Item = &'a [f32]> + Clone, dim: usize) -> Self {
        const STD_FLOOR: f64 = 1e-6;
        let mut n = 0usize;
        let mut mean = vec![0.0; dim];
        for f in frames.clone() {
            n += 1;
            for (m, &v) in mean.iter_mut().zip(f) {
                *m += v as f64;
            }
        }
        let n = n.max(1) as f64;
        mean.iter_mut().for_each(|m| *m /= n);
        let mut var = vec![0.0; dim];
        for f in frames {
            for ((s, &v), m) in var.iter_mut().zip(f).zip(&mean) {
                *s += (v as f64 - m).powi(2);
            }
        }
        let std = var.into_iter().map(|s| (s / n).sqrt().max(STD_FLOOR)).collect();
        Self { mean, std }
    }

    pub fn apply(&self, x: &[f32]) -> Vec<f64> {
        x.iter().zip(&self.mean).zip(&self.std).map(|((&v, m), s)| (v as f64 - m) / s).collect()
    }
}

/// Recurrent state carried between frames of one stream.
#[derive(Debug, Clone, PartialEq)]
pub struct LstmState {
    pub hidden: Vec<f64>,
    pub cell: Vec<f64>,
}

impl LstmState {
    pub fn zeros(hidden_dim: usize) -> Self {
        Self { hidden: vec![0.0; hidden_dim], cell: vec![0.0; hidden_dim] }
    }
}

pub(crate) fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// One LSTM layer (gate order input, forget, cell, output) followed by a
/// linear layer and a sigmoid.
///
/// Parameters live in one flat vector in file order: input weights
/// (4H x D, row-major), recurrent weights (4H x H), gate biases (4H),
/// output weights (H) and the output bias.
#[derive(Debug, Clone, PartialEq)]
pub struct LstmModel {
    config: ModelConfig,
    params: Vec<f64>,
    norm: NormStats,
}

impl LstmModel {
    pub fn zeros(config: ModelConfig) -> Result<Self, DetectorError> {
        config.validate()?;
        Ok(Self { config, params: vec![0.0; config.param_count()], norm: NormStats::identity(config.input_dim) })
    }

    /// Uniform init in +/-1/sqrt(H), forget-gate bias 1. Values are rounded
    /// to `f32` so a saved model reloads bit-exact.
    pub fn random(config: ModelConfig, seed: u64) -> Result<Self, DetectorError> {
        let mut m = Self::zeros(config)?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let k = 1.0 / (config.hidden_dim as f64).sqrt();
        for p in &mut m.params {
            *p = rng.gen_range(-k..k) as f32 as f64;
        }
        let h = config.hidden_dim;
        let b = m.layout().bias;
        m.params[b + h..b + 2 * h].iter_mut().for_each(|v| *v = 1.0);
        Ok(m)
    }

    pub fn from_parts(config: ModelConfig, params: Vec<f64>, norm: NormStats) -> Result<Self, DetectorError> {
        config.validate()?;
        if params.len() != config.param_count() {
            return Err(DetectorError::InvalidConfig(format!(
                "{} parameters for a model that needs {}",
                params.len(),
                config.param_count()
            )));
        }
        if norm.mean.len() != config.input_dim || norm.std.len() != config.input_dim {
            return Err(DetectorError::InvalidConfig("normalization stats do not match input size".into()));
        }
        Ok(Self { config, params, norm })
    }

    pub fn config(&self) -> ModelConfig {
        self.config
    }

    pub fn kind(&self) -> DetectorKind {
        self.config.kind
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [f64] {
        &mut self.params
    }

    pub fn norm(&self) -> &NormStats {
        &self.norm
    }

    pub fn set_norm(&mut self, norm: NormStats) {
        self.norm = norm;
    }

    pub(crate) fn layout(&self) -> Layout {
        Layout::new(self.config.input_dim, self.config.hidden_dim)
    }

    pub fn initial_state(&self) -> LstmState {
        LstmState::zeros(self.config.hidden_dim)
    }

    pub fn normalize(&self, x: &[f32]) -> Vec<f64> {
        self.norm.apply(x)
    }

    /// Advances `state` by one already-normalized frame and returns the
    /// event probability.
    pub fn forward_step(&self, state: &mut LstmState, x: &[f64]) -> Result<f64, DetectorError> {
        if x.len() != self.config.input_dim {
            return Err(DetectorError::DimensionMismatch { expected: self.config.input_dim, got: x.len() });
        }
        let mut z = vec![0.0; 4 * self.config.hidden_dim];
        Ok(sigmoid(self.step_logit(state, x, &mut z)))
    }

    /// Normalizes a raw feature vector, then steps.
    pub fn predict_step(&self, state: &mut LstmState, raw: &[f32]) -> Result<f64, DetectorError> {
        if raw.len() != self.config.input_dim {
            return Err(DetectorError::DimensionMismatch { expected: self.config.input_dim, got: raw.len() });
        }
        self.forward_step(state, &self.normalize(raw))
    }

    /// Probabilities for a whole raw sequence from a zero state.
    pub fn predict_sequence(&self, frames: &[Vec<f32>]) -> Result<Vec<f64>, DetectorError> {
        let mut state = self.initial_state();
        frames.iter().map(|f| self.predict_step(&mut state, f)).collect()
    }

    // z is scratch space of length 4H
    fn step_logit(&self, state: &mut LstmState, x: &[f64], z: &mut [f64]) -> f64 {
        let l = self.layout();
        let (d, h) = (l.d, l.h);
        let p = &self.params;
        for (r, zr) in z.iter_mut().enumerate() {
            *zr = p[l.bias + r] + dot(&p[l.w_input + r * d..][..d], x) + dot(&p[l.w_hidden + r * h..][..h], &state.hidden);
        }
        for k in 0..h {
            let i = sigmoid(z[k]);
            let f = sigmoid(z[h + k]);
            let g = z[2 * h + k].tanh();
            let o = sigmoid(z[3 * h + k]);
            state.cell[k] = f * state.cell[k] + i * g;
            state.hidden[k] = o * state.cell[k].tanh();
        }
        p[l.b_out] + dot(&p[l.w_out..][..h], &state.hidden)
    }
}

pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Offsets of each parameter block in the flat vector.
#[derive(Debug, Clone, Copy)]
pub(crate) struct Layout {
    pub d: usize,
    pub h: usize,
    pub w_input: usize,
    pub w_hidden: usize,
    pub bias: usize,
    pub w_out: usize,
    pub b_out: usize,
}

impl Layout {
    pub fn new(d: usize, h: usize) -> Self {
        let w_hidden = 4 * h * d;
        let bias = w_hidden + 4 * h * h;
        let w_out = bias + 4 * h;
        let b_out = w_out + h;
        Self { d, h, w_input: 0, w_hidden, bias, w_out, b_out }
    }
}

/// A trained model with its per-stream recurrent and debounce state.
#[derive(Debug, Clone)]
pub struct Detector {
    model: std::sync::Arc<LstmModel>,
    state: LstmState,
    debouncer: Debouncer,
}

impl Detector {
    pub fn new(model: std::sync::Arc<LstmModel>, params: DebounceParams) -> Self {
        let state = model.initial_state();
        Self { model, state, debouncer: Debouncer::new(params) }
    }

    pub fn kind(&self) -> DetectorKind {
        self.model.kind()
    }

    pub fn model(&self) -> &LstmModel {
        &self.model
    }

    pub fn reset(&mut self) {
        self.state = self.model.initial_state();
        self.debouncer.reset();
    }

    pub fn push(&mut self, feature: &DetectorFeature) -> Result<EventDecision, DetectorError> {
        let p = self.model.predict_step(&mut self.state, &feature.values)?;
        Ok(self.push_prob(feature.time, p))
    }

    /// Feeds an externally computed probability through the debouncer.
    pub fn push_prob(&mut self, time: f64, prob: f64) -> EventDecision {
        let active = self.debouncer.push(prob);
        EventDecision { time, kind: self.kind(), active, raw_prob: prob }
    }
}
