//! The integrated tracker: OLTW steered by the applause, music and speech
//! detectors.
//!
//! Three gates can halt the tracker near a section boundary of the reference:
//!
//! * applause gate: debounced applause while the estimate is within
//!   `transition_window_s` of a boundary. Released when applause stops.
//! * pause gate: neither music nor speech for `min_active_ms`, same
//!   proximity rule. Released when either returns.
//! * interlude gate: the estimate first enters a section whose reference
//!   starts with voice. Released when the target has voice too, or after
//!   `voice_timeout_s`.
//!
//! While halted the output is pinned to the boundary and no frames reach
//! the time-warping state. On release the tracker restarts at the boundary.

mod trace;

pub use trace::{read_trace, write_trace};

use std::sync::Arc;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::audio::{AudioError, AudioStream, FrameGeometry};
use crate::detectors::{DebounceParams, Debouncer, DetectorError, LstmModel, LstmState};
use crate::features::{detector_sequence, AlignmentFeature, DetectorFrameSet, DetectorKind, FeatureError};
use crate::oltw::{init_tracker_anchored, init_tracker_with_radius, ref_frame_time, OltwError, ReferenceIndex, TrackerState, DEFAULT_WINDOW_RADIUS};

#[derive(Debug, Error)]
pub enum ControlError {
    #[error(transparent)]
    Oltw(#[from] OltwError),
    #[error(transparent)]
    Detector(#[from] DetectorError),
    #[error(transparent)]
    Feature(#[from] FeatureError),
    #[error(transparent)]
    Audio(#[from] AudioError),
    #[error("detector frame given to a tracker without detector models")]
    NoDetectors,
    #[error("{0} sections but {1} voice flags")]
    SectionCount(usize, usize),
    #[error("trace line {line}: {msg}")]
    MalformedTrace { line: u64, msg: String },
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum Mode {
    Tracking,
    HaltApplause,
    HaltPause,
    AwaitVoice,
}

impl Mode {
    pub fn as_str(self) -> &'static str {
        match self {
            Mode::Tracking => "TRACKING",
            Mode::HaltApplause => "HALT_APPLAUSE",
            Mode::HaltPause => "HALT_PAUSE",
            Mode::AwaitVoice => "AWAIT_VOICE",
        }
    }

    pub fn is_halted(self) -> bool {
        self != Mode::Tracking
    }
}

impl std::fmt::Display for Mode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for Mode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "TRACKING" => Ok(Mode::Tracking),
            "HALT_APPLAUSE" => Ok(Mode::HaltApplause),
            "HALT_PAUSE" => Ok(Mode::HaltPause),
            "AWAIT_VOICE" => Ok(Mode::AwaitVoice),
            other => Err(format!("unknown mode {other:?}")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GateState {
    pub mode: Mode,
    /// Reference frame the output is pinned to while halted.
    pub clamp_pos: usize,
    /// Boundary time in seconds matching `clamp_pos`.
    pub clamp_time: f64,
    /// Target time at which `mode` began.
    pub since: f64,
}

impl GateState {
    fn tracking(since: f64) -> Self {
        Self { mode: Mode::Tracking, clamp_pos: 0, clamp_time: 0.0, since }
    }
}

/// Latest raw detector probabilities.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct DetectorProbs {
    pub applause: f64,
    pub music: f64,
    pub speech: f64,
}

impl DetectorProbs {
    pub fn get(&self, kind: DetectorKind) -> f64 {
        match kind {
            DetectorKind::Applause => self.applause,
            DetectorKind::Music => self.music,
            DetectorKind::Speech => self.speech,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrackedPosition {
    pub target_time: f64,
    pub ref_time: f64,
    pub mode: Mode,
    pub probs: DetectorProbs,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct GateConfig {
    pub applause: bool,
    pub pause: bool,
    pub interlude: bool,
}

impl GateConfig {
    pub const NONE: GateConfig = GateConfig { applause: false, pause: false, interlude: false };
    pub const ALL: GateConfig = GateConfig { applause: true, pause: true, interlude: true };

    pub fn any(&self) -> bool {
        self.applause || self.pause || self.interlude
    }
}

impl Default for GateConfig {
    fn default() -> Self {
        Self::ALL
    }
}

/// The incremental system variants: bare OLTW, then applause, pause and
/// interlude gates added one at a time.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Variant {
    Base,
    A,
    As,
    Asi,
}

impl Variant {
    pub const ALL: [Variant; 4] = [Variant::Base, Variant::A, Variant::As, Variant::Asi];

    pub fn gates(self) -> GateConfig {
        match self {
            Variant::Base => GateConfig::NONE,
            Variant::A => GateConfig { applause: true, pause: false, interlude: false },
            Variant::As => GateConfig { applause: true, pause: true, interlude: false },
            Variant::Asi => GateConfig::ALL,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Variant::Base => "BASE",
            Variant::A => "A",
            Variant::As => "AS",
            Variant::Asi => "ASI",
        }
    }
}

impl std::fmt::Display for Variant {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

impl std::str::FromStr for Variant {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "base" => Ok(Variant::Base),
            "a" => Ok(Variant::A),
            "as" => Ok(Variant::As),
            "asi" => Ok(Variant::Asi),
            _ => Err(format!("unknown variant {s:?} (expected base, a, as or asi)")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ControlParams {
    pub window_radius: usize,
    pub debounce: DebounceParams,
    /// Gates engage only this close to a boundary, in reference seconds.
    pub transition_window_s: f64,
    pub voice_timeout_s: f64,
    /// Length of reference audio checked for voice at each section start.
    pub voice_probe_s: f64,
}

impl Default for ControlParams {
    fn default() -> Self {
        Self {
            window_radius: DEFAULT_WINDOW_RADIUS,
            debounce: DebounceParams::default(),
            transition_window_s: 1.0,
            voice_timeout_s: 120.0,
            voice_probe_s: 4.0,
        }
    }
}

impl ControlParams {
    /// Window radius for a total search window of `window_s` seconds.
    pub fn radius_for_window(window_s: f64) -> usize {
        (window_s / 2.0 / FrameGeometry::ALIGNMENT.hop_s()).round() as usize
    }
}

/// One model per detector kind.
#[derive(Debug, Clone)]
pub struct DetectorModels {
    applause: Arc<LstmModel>,
    music: Arc<LstmModel>,
    speech: Arc<LstmModel>,
}

impl DetectorModels {
    pub fn new(applause: LstmModel, music: LstmModel, speech: LstmModel) -> Result<Self, DetectorError> {
        for (m, kind) in [(&applause, DetectorKind::Applause), (&music, DetectorKind::Music), (&speech, DetectorKind::Speech)] {
            if m.kind() != kind {
                return Err(DetectorError::KindMismatch { expected: kind, found: m.kind() });
            }
            if m.config().input_dim != kind.dim() {
                return Err(DetectorError::DimensionMismatch { expected: kind.dim(), got: m.config().input_dim });
            }
        }
        Ok(Self { applause: Arc::new(applause), music: Arc::new(music), speech: Arc::new(speech) })
    }

    pub fn get(&self, kind: DetectorKind) -> &LstmModel {
        match kind {
            DetectorKind::Applause => &self.applause,
            DetectorKind::Music => &self.music,
            DetectorKind::Speech => &self.speech,
        }
    }
}

/// Runs the three detectors over one stream, carrying recurrent state.
#[derive(Debug, Clone)]
pub struct DetectorBank {
    models: DetectorModels,
    states: [LstmState; 3],
}

impl DetectorBank {
    pub fn new(models: DetectorModels) -> Self {
        let states = DetectorKind::ALL.map(|k| models.get(k).initial_state());
        Self { models, states }
    }

    pub fn models(&self) -> &DetectorModels {
        &self.models
    }

    pub fn reset(&mut self) {
        self.states = DetectorKind::ALL.map(|k| self.models.get(k).initial_state());
    }

    pub fn push(&mut self, frame: &DetectorFrameSet) -> Result<DetectorProbs, DetectorError> {
        let mut p = [0.0; 3];
        for (i, kind) in DetectorKind::ALL.into_iter().enumerate() {
            p[i] = self.models.get(kind).predict_step(&mut self.states[i], &frame.get(kind).values)?;
        }
        Ok(DetectorProbs { applause: p[0], music: p[1], speech: p[2] })
    }

    /// Probabilities for a whole stream from a fresh state.
    pub fn probabilities(&mut self, frames: &[DetectorFrameSet]) -> Result<Vec<DetectorProbs>, DetectorError> {
        self.reset();
        frames.iter().map(|f| self.push(f)).collect()
    }
}

/// One target frame for `integrated_step`: the alignment vector plus the
/// detector frame that completed with it, if any.
#[derive(Debug, Clone)]
pub struct FramePair {
    pub alignment: AlignmentFeature,
    pub detectors: Option<DetectorFrameSet>,
}

/// A section boundary the gates can pin to.
#[derive(Debug, Clone, Copy, PartialEq)]
struct Boundary {
    time: f64,
    pos: usize,
    voice_start: bool,
}

/// OLTW plus gates for one target stream.
#[derive(Debug, Clone)]
pub struct IntegratedTracker<'r> {
    reference: &'r ReferenceIndex,
    gates: GateConfig,
    params: ControlParams,
    tracker: TrackerState,
    state: GateState,
    boundaries: Vec<Boundary>,
    // boundaries the estimate has already entered
    entered: Vec<bool>,
    debouncers: [Debouncer; 3],
    quiet_frames: usize,
    probs: DetectorProbs,
    bank: Option<DetectorBank>,
}

impl<'r> IntegratedTracker<'r> {
    pub fn new(reference: &'r ReferenceIndex, gates: GateConfig, params: ControlParams) -> Result<Self, ControlError> {
        let tracker = init_tracker_with_radius(reference, 0, params.window_radius)?;
        // the start of the first section is not a transition
        let boundaries: Vec<Boundary> = reference
            .sections()
            .iter()
            .filter(|s| s.time_s > 0.0)
            .map(|s| Boundary { time: s.time_s, pos: clamp_frame(reference, s.time_s), voice_start: s.voice_start })
            .collect();
        let entered = vec![false; boundaries.len()];
        Ok(Self {
            reference,
            gates,
            params,
            tracker,
            state: GateState::tracking(0.0),
            boundaries,
            entered,
            debouncers: [0; 3].map(|_| Debouncer::new(params.debounce)),
            quiet_frames: 0,
            probs: DetectorProbs::default(),
            bank: None,
        })
    }

    pub fn with_detectors(mut self, models: DetectorModels) -> Self {
        self.bank = Some(DetectorBank::new(models));
        self
    }

    pub fn state(&self) -> GateState {
        self.state
    }

    pub fn tracker(&self) -> &TrackerState {
        &self.tracker
    }

    pub fn probs(&self) -> DetectorProbs {
        self.probs
    }

    /// Debounced state of one detector.
    pub fn is_active(&self, kind: DetectorKind) -> bool {
        self.debouncers[kind_index(kind)].is_active()
    }

    /// Feeds one detector frame's probabilities through the debouncers.
    pub fn push_probs(&mut self, probs: DetectorProbs) {
        self.probs = probs;
        for kind in DetectorKind::ALL {
            self.debouncers[kind_index(kind)].push(probs.get(kind));
        }
        if self.is_active(DetectorKind::Music) || self.is_active(DetectorKind::Speech) {
            self.quiet_frames = 0;
        } else {
            self.quiet_frames += 1;
        }
    }

    /// Runs the detector models on one frame set, then debounces.
    pub fn push_detector_frame(&mut self, frame: &DetectorFrameSet) -> Result<DetectorProbs, ControlError> {
        let probs = self.bank.as_mut().ok_or(ControlError::NoDetectors)?.push(frame)?;
        self.push_probs(probs);
        Ok(probs)
    }

    /// Detectors (when a frame set is present), gates, then OLTW.
    pub fn integrated_step(&mut self, pair: &FramePair) -> Result<TrackedPosition, ControlError> {
        if let Some(d) = &pair.detectors {
            self.push_detector_frame(d)?;
        }
        self.step(&pair.alignment)
    }

    /// Consumes one alignment frame. Detector state must already include
    /// every detector frame that ended no later than this one.
    pub fn step(&mut self, frame: &AlignmentFeature) -> Result<TrackedPosition, ControlError> {
        let t = frame.time;
        if self.state.mode.is_halted() {
            if !self.release_due(t) {
                return Ok(self.output(t, self.state.clamp_time));
            }
            let clamp = self.state;
            self.state = GateState::tracking(t);
            if self.engage(clamp.clamp_time, t) {
                return Ok(self.output(t, self.state.clamp_time));
            }
            self.tracker = init_tracker_anchored(self.reference, clamp.clamp_pos, self.params.window_radius)?;
        }
        let est = self.tracker.step(self.reference, &frame.values, t)?;
        if self.engage(est.ref_time, t) {
            return Ok(self.output(t, self.state.clamp_time));
        }
        Ok(self.output(t, est.ref_time))
    }

    fn output(&self, target_time: f64, ref_time: f64) -> TrackedPosition {
        TrackedPosition { target_time, ref_time, mode: self.state.mode, probs: self.probs }
    }

    fn release_due(&self, t: f64) -> bool {
        match self.state.mode {
            Mode::Tracking => true,
            Mode::HaltApplause => !self.is_active(DetectorKind::Applause),
            Mode::HaltPause => self.is_active(DetectorKind::Music) || self.is_active(DetectorKind::Speech),
            Mode::AwaitVoice => self.is_active(DetectorKind::Speech) || t - self.state.since >= self.params.voice_timeout_s,
        }
    }

    fn nearest_boundary(&self, ref_time: f64) -> Option<Boundary> {
        self.boundaries
            .iter()
            .filter(|b| (b.time - ref_time).abs() <= self.params.transition_window_s)
            .min_by(|a, b| (a.time - ref_time).abs().total_cmp(&(b.time - ref_time).abs()))
            .copied()
    }

    /// Checks the gates in precedence order at estimate `ref_time`.
    fn engage(&mut self, ref_time: f64, t: f64) -> bool {
        if self.gates.applause && self.is_active(DetectorKind::Applause) {
            if let Some(b) = self.nearest_boundary(ref_time) {
                self.halt(Mode::HaltApplause, b, t);
                return true;
            }
        }
        if self.gates.pause && self.quiet_frames >= self.params.debounce.on_frames() {
            if let Some(b) = self.nearest_boundary(ref_time) {
                self.halt(Mode::HaltPause, b, t);
                return true;
            }
        }
        if self.gates.interlude {
            let mut crossed = None;
            for (k, b) in self.boundaries.iter().enumerate() {
                if !self.entered[k] && b.time <= ref_time {
                    self.entered[k] = true;
                    crossed = Some(*b);
                }
            }
            if let Some(b) = crossed {
                if b.voice_start && !self.is_active(DetectorKind::Speech) {
                    self.halt(Mode::AwaitVoice, b, t);
                    return true;
                }
            }
        }
        false
    }

    fn halt(&mut self, mode: Mode, b: Boundary, t: f64) {
        log::debug!("{mode} at target {t:.2} s, pinned to {:.2} s", b.time);
        self.state = GateState { mode, clamp_pos: b.pos, clamp_time: b.time, since: t };
    }
}

fn kind_index(kind: DetectorKind) -> usize {
    match kind {
        DetectorKind::Applause => 0,
        DetectorKind::Music => 1,
        DetectorKind::Speech => 2,
    }
}

/// First reference frame starting at or after `time`.
fn clamp_frame(reference: &ReferenceIndex, time: f64) -> usize {
    let mut j = (time / FrameGeometry::ALIGNMENT.hop_s()).floor().max(0.0) as usize;
    while ref_frame_time(j) < time {
        j += 1;
    }
    while j > 0 && ref_frame_time(j - 1) >= time {
        j -= 1;
    }
    j.min(reference.len() - 1)
}

/// End of frame `index` in whole milliseconds.
pub fn frame_end_ms(geometry: FrameGeometry, index: usize) -> u64 {
    index as u64 * geometry.hop_ms as u64 + geometry.window_ms as u64
}

/// Number of detector frames that have ended by the end of alignment frame
/// `index`.
pub fn detector_frames_ready(index: usize) -> usize {
    let end = frame_end_ms(FrameGeometry::ALIGNMENT, index);
    let (w, h) = (FrameGeometry::DETECTOR.window_ms as u64, FrameGeometry::DETECTOR.hop_ms as u64);
    if end < w {
        0
    } else {
        ((end - w) / h + 1) as usize
    }
}

/// Tracks a whole target with one variant, using precomputed detector
/// probabilities so every variant sees the same detector output.
pub fn run_variant(
    variant: Variant,
    reference: &ReferenceIndex,
    alignment: &[AlignmentFeature],
    probs: &[DetectorProbs],
    params: ControlParams,
) -> Result<Vec<TrackedPosition>, ControlError> {
    run_gates(variant.gates(), reference, alignment, probs, params)
}

pub fn run_gates(
    gates: GateConfig,
    reference: &ReferenceIndex,
    alignment: &[AlignmentFeature],
    probs: &[DetectorProbs],
    params: ControlParams,
) -> Result<Vec<TrackedPosition>, ControlError> {
    let mut it = IntegratedTracker::new(reference, gates, params)?;
    let mut next = 0;
    let mut trace = Vec::with_capacity(alignment.len());
    for (n, frame) in alignment.iter().enumerate() {
        let ready = detector_frames_ready(n).min(probs.len());
        while next < ready {
            it.push_probs(probs[next]);
            next += 1;
        }
        trace.push(it.step(frame)?);
    }
    Ok(trace)
}

/// Flags each section whose first `probe_s` seconds of reference audio
/// contain debounced speech.
pub fn annotate_reference_voice(
    reference: &AudioStream,
    speech: &LstmModel,
    section_starts: &[f64],
    params: &ControlParams,
) -> Result<Vec<bool>, ControlError> {
    if speech.kind() != DetectorKind::Speech {
        return Err(DetectorError::KindMismatch { expected: DetectorKind::Speech, found: speech.kind() }.into());
    }
    let sr = reference.sample_rate() as f64;
    let samples = reference.samples();
    let mut flags = Vec::with_capacity(section_starts.len());
    for (k, &start) in section_starts.iter().enumerate() {
        let mut end = start + params.voice_probe_s;
        if let Some(&next) = section_starts.get(k + 1) {
            end = end.min(next);
        }
        let a = ((start * sr).round() as usize).min(samples.len());
        let b = ((end * sr).round() as usize).clamp(a, samples.len());
        let hop = FrameGeometry::DETECTOR.hop_samples(reference.sample_rate());
        if b - a < hop {
            flags.push(false);
            continue;
        }
        let slice = AudioStream::new(samples[a..b].to_vec(), reference.sample_rate())?;
        let frames = detector_sequence(&slice)?;
        let mut state = speech.initial_state();
        let mut deb = Debouncer::new(params.debounce);
        let mut voiced = false;
        for f in &frames {
            let p = speech.predict_step(&mut state, &f.speech.values)?;
            voiced |= deb.push(p);
        }
        flags.push(voiced);
    }
    Ok(flags)
}

#[cfg(test)]
mod tests;
