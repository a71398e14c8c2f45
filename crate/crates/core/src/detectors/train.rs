//! Truncated back-propagation through time, momentum SGD training and a
//! finite-difference gradient check.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{dot, sigmoid, DetectorError, Layout, LstmModel, ModelConfig, NormStats};

/// One recording's detector features with a 0/1 label per frame.
#[derive(Debug, Clone, PartialEq)]
pub struct LabeledSequence {
    pub frames: Vec<Vec<f32>>,
    pub labels: Vec<f32>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub momentum: f64,
    pub epochs: usize,
    /// Truncation horizon; 55 frames is 1.1 s at a 20 ms hop.
    pub chunk_len: usize,
    /// Chunks per update.
    pub batch_size: usize,
    pub clip_norm: f64,
    pub seed: u64,
    /// Stop once streaming accuracy on the validation set reaches this.
    pub target_accuracy: Option<f64>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            learning_rate: 0.01,
            momentum: 0.9,
            epochs: 50,
            chunk_len: 55,
            batch_size: 4,
            clip_norm: 5.0,
            seed: 0,
            target_accuracy: None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochStats {
    pub epoch: usize,
    /// Mean per-frame BCE over the epoch.
    pub loss: f64,
    pub validation_accuracy: Option<f64>,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub model: LstmModel,
    pub final_loss: f64,
    pub history: Vec<EpochStats>,
}

/// Gradient of the mean BCE with respect to every parameter, in the
/// model's flat parameter order.
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    pub values: Vec<f64>,
    input_dim: usize,
    hidden_dim: usize,
}

impl Gradients {
    /// Multiplies every input, recurrent and bias entry of one gate
    /// (0 input, 1 forget, 2 cell, 3 output) by `factor`.
    pub fn scale_gate(&mut self, gate: usize, factor: f64) {
        let l = Layout::new(self.input_dim, self.hidden_dim);
        let (d, h) = (l.d, l.h);
        for r in gate * h..(gate + 1) * h {
            self.values[l.w_input + r * d..][..d].iter_mut().for_each(|v| *v *= factor);
            self.values[l.w_hidden + r * h..][..h].iter_mut().for_each(|v| *v *= factor);
            self.values[l.bias + r] *= factor;
        }
    }
}

fn bce_from_logit(y: f64, target: f64) -> f64 {
    y.max(0.0) - y * target + (-y.abs()).exp().ln_1p()
}

struct Workspace {
    // per step: activated gates (4H), cell (H), tanh(cell) (H), hidden (H)
    gates: Vec<f64>,
    cell: Vec<f64>,
    tanh_cell: Vec<f64>,
    hidden: Vec<f64>,
    logits: Vec<f64>,
    dz: Vec<f64>,
    dh_next: Vec<f64>,
    dc_next: Vec<f64>,
    zeros: Vec<f64>,
}

impl Workspace {
    fn new(h: usize, steps: usize) -> Self {
        Self {
            gates: vec![0.0; 4 * h * steps],
            cell: vec![0.0; h * steps],
            tanh_cell: vec![0.0; h * steps],
            hidden: vec![0.0; h * steps],
            logits: vec![0.0; steps],
            dz: vec![0.0; 4 * h],
            dh_next: vec![0.0; h],
            dc_next: vec![0.0; h],
            zeros: vec![0.0; h],
        }
    }

    fn ensure(&mut self, h: usize, steps: usize) {
        if self.logits.len() < steps {
            *self = Self::new(h, steps);
        }
    }
}

/// Summed BCE over one chunk started from a zero state; when `grad` is
/// given, adds `scale` times the gradient of that sum into it.
fn chunk_loss(
    params: &[f64],
    l: Layout,
    x: &[f64],
    y: &[f64],
    ws: &mut Workspace,
    grad: Option<(&mut [f64], f64)>,
) -> f64 {
    let (d, h) = (l.d, l.h);
    let steps = y.len();
    ws.ensure(h, steps);
    let mut loss = 0.0;
    for t in 0..steps {
        let xt = &x[t * d..][..d];
        let (done_h, rest_h) = ws.hidden.split_at_mut(t * h);
        let (done_c, rest_c) = ws.cell.split_at_mut(t * h);
        let (h_prev, c_prev) =
            if t == 0 { (&ws.zeros[..], &ws.zeros[..]) } else { (&done_h[(t - 1) * h..], &done_c[(t - 1) * h..]) };
        let gates = &mut ws.gates[t * 4 * h..][..4 * h];
        for (r, gr) in gates.iter_mut().enumerate() {
            *gr = params[l.bias + r] + dot(&params[l.w_input + r * d..][..d], xt) + dot(&params[l.w_hidden + r * h..][..h], h_prev);
        }
        for k in 0..h {
            gates[k] = sigmoid(gates[k]);
            gates[h + k] = sigmoid(gates[h + k]);
            gates[2 * h + k] = gates[2 * h + k].tanh();
            gates[3 * h + k] = sigmoid(gates[3 * h + k]);
        }
        let mut logit = params[l.b_out];
        for k in 0..h {
            let c = gates[h + k] * c_prev[k] + gates[k] * gates[2 * h + k];
            let tc = c.tanh();
            let hk = gates[3 * h + k] * tc;
            rest_c[k] = c;
            ws.tanh_cell[t * h + k] = tc;
            rest_h[k] = hk;
            logit += params[l.w_out + k] * hk;
        }
        ws.logits[t] = logit;
        loss += bce_from_logit(logit, y[t]);
    }

    let Some((grad, scale)) = grad else { return loss };
    ws.dh_next.iter_mut().for_each(|v| *v = 0.0);
    ws.dc_next.iter_mut().for_each(|v| *v = 0.0);
    for t in (0..steps).rev() {
        let dy = scale * (sigmoid(ws.logits[t]) - y[t]);
        grad[l.b_out] += dy;
        let hidden = &ws.hidden[t * h..][..h];
        for k in 0..h {
            grad[l.w_out + k] += dy * hidden[k];
        }
        let gates = &ws.gates[t * 4 * h..][..4 * h];
        let c_prev = if t == 0 { &ws.zeros[..] } else { &ws.cell[(t - 1) * h..][..h] };
        for k in 0..h {
            let (i, f, g, o) = (gates[k], gates[h + k], gates[2 * h + k], gates[3 * h + k]);
            let tc = ws.tanh_cell[t * h + k];
            let dh = dy * params[l.w_out + k] + ws.dh_next[k];
            let dc = dh * o * (1.0 - tc * tc) + ws.dc_next[k];
            ws.dz[k] = dc * g * i * (1.0 - i);
            ws.dz[h + k] = dc * c_prev[k] * f * (1.0 - f);
            ws.dz[2 * h + k] = dc * i * (1.0 - g * g);
            ws.dz[3 * h + k] = dh * tc * o * (1.0 - o);
            ws.dc_next[k] = dc * f;
        }
        let xt = &x[t * d..][..d];
        let h_prev = if t == 0 { &ws.zeros[..] } else { &ws.hidden[(t - 1) * h..][..h] };
        ws.dh_next.iter_mut().for_each(|v| *v = 0.0);
        for r in 0..4 * h {
            let dz = ws.dz[r];
            if dz == 0.0 {
                continue;
            }
            grad[l.bias + r] += dz;
            for (gw, &xv) in grad[l.w_input + r * d..][..d].iter_mut().zip(xt) {
                *gw += dz * xv;
            }
            let w_row = &params[l.w_hidden + r * h..][..h];
            for ((gw, &hv), (dn, &w)) in grad[l.w_hidden + r * h..][..h]
                .iter_mut()
                .zip(h_prev)
                .zip(ws.dh_next.iter_mut().zip(w_row))
            {
                *gw += dz * hv;
                *dn += dz * w;
            }
        }
    }
    loss
}

struct Chunk {
    x: Vec<f64>,
    y: Vec<f64>,
}

fn validate(config: &ModelConfig, data: &[LabeledSequence]) -> Result<usize, DetectorError> {
    let mut frames = 0;
    for s in data {
        if s.frames.len() != s.labels.len() {
            return Err(DetectorError::InvalidConfig(format!(
                "{} frames but {} labels",
                s.frames.len(),
                s.labels.len()
            )));
        }
        if let Some(f) = s.frames.iter().find(|f| f.len() != config.input_dim) {
            return Err(DetectorError::DimensionMismatch { expected: config.input_dim, got: f.len() });
        }
        if let Some(&l) = s.labels.iter().find(|&&l| l != 0.0 && l != 1.0) {
            return Err(DetectorError::NonBinaryLabels(l));
        }
        frames += s.frames.len();
    }
    Ok(frames)
}

/// Frame accuracy of streaming predictions (state carried through each
/// sequence) at threshold 0.5.
pub fn accuracy(model: &LstmModel, data: &[LabeledSequence]) -> Result<f64, DetectorError> {
    let (mut right, mut total) = (0usize, 0usize);
    for s in data {
        for (p, &l) in model.predict_sequence(&s.frames)?.iter().zip(&s.labels) {
            right += ((*p > 0.5) == (l > 0.5)) as usize;
            total += 1;
        }
    }
    if total == 0 {
        return Err(DetectorError::EmptyDataset);
    }
    Ok(right as f64 / total as f64)
}

/// Trains a fresh model with BCE loss, truncated BPTT over fixed-length
/// chunks and momentum SGD with gradient-norm clipping.
///
/// Deterministic for a given seed. Final weights are rounded to `f32`.
pub fn train(
    config: ModelConfig,
    data: &[LabeledSequence],
    validation: Option<&[LabeledSequence]>,
    hyper: &TrainConfig,
) -> Result<TrainOutcome, DetectorError> {
    if validate(&config, data)? == 0 {
        return Err(DetectorError::EmptyDataset);
    }
    if let Some(v) = validation {
        validate(&config, v)?;
    }
    if hyper.chunk_len == 0 || hyper.batch_size == 0 {
        return Err(DetectorError::InvalidConfig("chunk length and batch size must be positive".into()));
    }
    let norm = NormStats::from_frames(data.iter().flat_map(|s| s.frames.iter().map(Vec::as_slice)), config.input_dim);
    let chunks: Vec<Chunk> = data
        .iter()
        .flat_map(|s| {
            let norm = &norm;
            s.frames.chunks(hyper.chunk_len).zip(s.labels.chunks(hyper.chunk_len)).map(move |(f, l)| Chunk {
                x: f.iter().flat_map(|v| norm.apply(v)).collect(),
                y: l.iter().map(|&v| v as f64).collect(),
            })
        })
        .collect();

    let mut model = LstmModel::random(config, hyper.seed)?;
    model.set_norm(norm);
    let layout = model.layout();
    let mut rng = ChaCha8Rng::seed_from_u64(hyper.seed.wrapping_add(1));
    let mut order: Vec<usize> = (0..chunks.len()).collect();
    let mut grad = vec![0.0; model.params.len()];
    let mut velocity = vec![0.0; model.params.len()];
    let mut ws = Workspace::new(config.hidden_dim, hyper.chunk_len);
    let mut history = Vec::new();

    for epoch in 0..hyper.epochs {
        order.shuffle(&mut rng);
        let (mut epoch_loss, mut epoch_frames) = (0.0, 0usize);
        for batch in order.chunks(hyper.batch_size) {
            let frames: usize = batch.iter().map(|&c| chunks[c].y.len()).sum();
            let scale = 1.0 / frames as f64;
            grad.iter_mut().for_each(|g| *g = 0.0);
            for &c in batch {
                let ch = &chunks[c];
                epoch_loss += chunk_loss(&model.params, layout, &ch.x, &ch.y, &mut ws, Some((&mut grad, scale)));
            }
            epoch_frames += frames;
            let norm = grad.iter().map(|g| g * g).sum::<f64>().sqrt();
            let clip = if norm > hyper.clip_norm { hyper.clip_norm / norm } else { 1.0 };
            for ((p, v), g) in model.params.iter_mut().zip(&mut velocity).zip(&grad) {
                *v = hyper.momentum * *v - hyper.learning_rate * clip * g;
                *p += *v;
            }
        }
        let loss = epoch_loss / epoch_frames as f64;
        let validation_accuracy = validation.map(|v| accuracy(&model, v)).transpose()?;
        log::debug!("{} epoch {epoch}: loss {loss:.5} val {validation_accuracy:?}", config.kind);
        history.push(EpochStats { epoch, loss, validation_accuracy });
        if let (Some(target), Some(acc)) = (hyper.target_accuracy, validation_accuracy) {
            if acc >= target {
                break;
            }
        }
    }
    model.params.iter_mut().for_each(|p| *p = *p as f32 as f64);
    let final_loss = history.last().map_or(f64::NAN, |e| e.loss);
    Ok(TrainOutcome { model, final_loss, history })
}

/// Result of comparing analytic and numeric gradients.
#[derive(Debug, Clone, PartialEq)]
pub struct GradientCheck {
    pub max_rel_error: f64,
    pub max_abs_error: f64,
    /// Parameter index with the largest relative error.
    pub worst_param: usize,
    pub analytic: Vec<f64>,
    pub numeric: Vec<f64>,
}

/// Mean-BCE gradient of `model` on one normalized sequence by BPTT.
pub fn analytic_gradient(model: &LstmModel, x: &[Vec<f64>], y: &[f64]) -> Gradients {
    let l = model.layout();
    let flat: Vec<f64> = x.iter().flatten().copied().collect();
    let mut values = vec![0.0; model.params.len()];
    let mut ws = Workspace::new(l.h, y.len());
    chunk_loss(&model.params, l, &flat, y, &mut ws, Some((&mut values, 1.0 / y.len() as f64)));
    Gradients { values, input_dim: l.d, hidden_dim: l.h }
}

/// Central-difference check (step 1e-4) of every parameter's gradient on a
/// normalized sequence. Relative error is `|a - n| / max(|a|, |n|, 1e-6)`.
pub fn gradient_check(model: &LstmModel, x: &[Vec<f64>], y: &[f64]) -> GradientCheck {
    gradient_check_with(model, x, y, |_| {})
}

/// As [`gradient_check`], letting `corrupt` alter the analytic gradients
/// before comparison.
pub fn gradient_check_with(
    model: &LstmModel,
    x: &[Vec<f64>],
    y: &[f64],
    corrupt: impl FnOnce(&mut Gradients),
) -> GradientCheck {
    const STEP: f64 = 1e-4;
    const FLOOR: f64 = 1e-6;
    let mut analytic = analytic_gradient(model, x, y);
    corrupt(&mut analytic);

    let l = model.layout();
    let (d, h) = (l.d, l.h);
    let n = y.len() as f64;
    // input projections (bias + W_input x) per step, unchanged unless an
    // input weight or bias is perturbed
    let mut proj: Vec<f64> = x
        .iter()
        .flat_map(|xt| {
            (0..4 * h).map(move |r| model.params[l.bias + r] + dot(&model.params[l.w_input + r * d..][..d], xt))
        })
        .collect();
    let mut params = model.params.clone();
    let mut z = vec![0.0; 4 * h];
    let mut numeric = vec![0.0; params.len()];

    for p in 0..params.len() {
        let mut eval = |delta: f64, params: &mut Vec<f64>, proj: &mut Vec<f64>| -> f64 {
            let saved_p = params[p];
            let mut saved_proj = Vec::new();
            if p < l.w_hidden {
                let (r, c) = (p / d, p % d);
                for (t, xt) in x.iter().enumerate() {
                    saved_proj.push(proj[t * 4 * h + r]);
                    proj[t * 4 * h + r] += delta * xt[c];
                }
            } else if (l.bias..l.w_out).contains(&p) {
                let r = p - l.bias;
                for t in 0..x.len() {
                    saved_proj.push(proj[t * 4 * h + r]);
                    proj[t * 4 * h + r] += delta;
                }
            } else {
                params[p] += delta;
            }
            let loss = projected_loss(params, l, proj, y, &mut z) / n;
            params[p] = saved_p;
            if !saved_proj.is_empty() {
                let r = if p < l.w_hidden { p / d } else { p - l.bias };
                for (t, v) in saved_proj.into_iter().enumerate() {
                    proj[t * 4 * h + r] = v;
                }
            }
            loss
        };
        let plus = eval(STEP, &mut params, &mut proj);
        let minus = eval(-STEP, &mut params, &mut proj);
        numeric[p] = (plus - minus) / (2.0 * STEP);
    }

    let mut worst = (0.0, 0usize);
    let mut max_abs: f64 = 0.0;
    for (i, (a, nu)) in analytic.values.iter().zip(&numeric).enumerate() {
        let diff = (a - nu).abs();
        max_abs = max_abs.max(diff);
        let rel = diff / a.abs().max(nu.abs()).max(FLOOR);
        if rel > worst.0 {
            worst = (rel, i);
        }
    }
    GradientCheck {
        max_rel_error: worst.0,
        max_abs_error: max_abs,
        worst_param: worst.1,
        analytic: analytic.values,
        numeric,
    }
}

fn projected_loss(params: &[f64], l: Layout, proj: &[f64], y: &[f64], z: &mut [f64]) -> f64 {
    let h = l.h;
    let mut hidden = vec![0.0; h];
    let mut cell = vec![0.0; h];
    let mut loss = 0.0;
    for (t, &target) in y.iter().enumerate() {
        for (r, zr) in z.iter_mut().enumerate() {
            *zr = proj[t * 4 * h + r] + dot(&params[l.w_hidden + r * h..][..h], &hidden);
        }
        let mut logit = params[l.b_out];
        for k in 0..h {
            let i = sigmoid(z[k]);
            let f = sigmoid(z[h + k]);
            let g = z[2 * h + k].tanh();
            let o = sigmoid(z[3 * h + k]);
            cell[k] = f * cell[k] + i * g;
            hidden[k] = o * cell[k].tanh();
            logit += params[l.w_out + k] * hidden[k];
        }
        loss += bce_from_logit(logit, target);
    }
    loss
}
