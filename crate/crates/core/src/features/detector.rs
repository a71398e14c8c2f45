//! Event-detector features: per-band spectral measures, MFCCs, Continuous
//! Frequency Activation, Curved Frequency Trajectory and a fluctogram.
//!
//! All block operations look at the last [`DETECTOR_BLOCK`] frames (one
//! second at a 20 ms hop), or fewer at stream start.

use std::collections::VecDeque;

use serde::{Deserialize, Serialize};

use super::spectrum::{MfccBank, SpectrumAnalyzer};
use super::{DetectorFeature, DetectorKind, FeatureError};
use crate::audio::FrameBuffer;

/// Frames of context for block features.
pub const DETECTOR_BLOCK: usize = 50;
/// Fraction of a frame's bins left inactive by CFA binarization.
pub const CFA_PERCENTILE: f64 = 0.9;
/// Fraction of block frames a bin must be active in to count as sustained.
pub const CFA_PERSISTENCE: f64 = 0.8;

const APPLAUSE_MFCC: usize = 9;
const DETECTOR_MELS: usize = 20;
// delta-MFCCs use coefficients 2..=19
const DELTA_RANGE: std::ops::Range<usize> = 2..20;

const FLUCT_LOW_HZ: f64 = 100.0;
const FLUCT_HIGH_HZ: f64 = 8000.0;
const FLUCT_STEPS_PER_OCTAVE: f64 = 48.0;
const FLUCT_BANDS: usize = 11;
const FLUCT_MAX_LAG: isize = 4;

const CFT_LOW_HZ: f64 = 80.0;
const CFT_HIGH_HZ: f64 = 5000.0;

/// Four analysis bands as `(low_hz, high_hz)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BandSpec {
    pub bands: [(f64, f64); 4],
}

impl Default for BandSpec {
    fn default() -> Self {
        Self { bands: [(0.0, 630.0), (630.0, 1720.0), (1720.0, 4400.0), (4400.0, 22_050.0)] }
    }
}

impl BandSpec {
    fn bin_range(&self, band: usize, bin_hz: f64, bins: usize) -> std::ops::Range<usize> {
        let (lo, hi) = self.bands[band];
        let start = (lo / bin_hz).ceil() as usize;
        let nyquist = (bins - 1) as f64 * bin_hz;
        let end = if hi >= nyquist { bins } else { (hi / bin_hz).ceil() as usize };
        start.min(bins)..end.min(bins)
    }
}

/// Centroid, spread, flux and flatness for each band, band-major.
///
/// Silent bands report centroid = spread = 0 and flatness = 1; flux against a
/// missing previous frame is 0.
pub fn spectral_measures(magnitudes: &[f64], bin_hz: f64, bands: &BandSpec, prev: Option<&[f64]>) -> [f64; 16] {
    let mut out = [0.0; 16];
    for b in 0..4 {
        let range = bands.bin_range(b, bin_hz, magnitudes.len());
        let mags = &magnitudes[range.clone()];
        let total: f64 = mags.iter().sum();
        let (centroid, spread) = if total > 1e-12 {
            let c = range.clone().zip(mags).map(|(k, m)| k as f64 * bin_hz * m).sum::<f64>() / total;
            let var = range.clone().zip(mags).map(|(k, m)| (k as f64 * bin_hz - c).powi(2) * m).sum::<f64>() / total;
            (c, var.sqrt())
        } else {
            (0.0, 0.0)
        };
        let flux = match prev {
            Some(p) => p[range.clone()].iter().zip(mags).map(|(a, b)| (b - a) * (b - a)).sum::<f64>().sqrt(),
            None => 0.0,
        };
        out[4 * b] = centroid;
        out[4 * b + 1] = spread;
        out[4 * b + 2] = flux;
        out[4 * b + 3] = flatness(mags);
    }
    out
}

fn flatness(mags: &[f64]) -> f64 {
    const POWER_FLOOR: f64 = 1e-20;
    if mags.is_empty() {
        return 1.0;
    }
    let n = mags.len() as f64;
    let mean_power = mags.iter().map(|m| m * m).sum::<f64>() / n;
    if mean_power < POWER_FLOOR {
        return 1.0;
    }
    let mean_log = mags.iter().map(|m| (m * m + POWER_FLOOR).ln()).sum::<f64>() / n;
    (mean_log.exp() / (mean_power + POWER_FLOOR)).clamp(0.0, 1.0)
}

/// Per-frame spectral analysis shared by the block features.
#[derive(Debug, Clone, PartialEq)]
pub struct FrameAnalysis {
    pub magnitudes: Vec<f64>,
    /// Bins above the frame's 90th-percentile magnitude.
    pub active: Vec<bool>,
    /// Frequency of the strongest peak between 80 Hz and 5 kHz, 0 when silent.
    pub peak_hz: f64,
    /// Log magnitudes on a quarter-semitone grid from 100 Hz to 8 kHz.
    pub log_spectrum: Vec<f64>,
}

impl FrameAnalysis {
    pub fn new(magnitudes: Vec<f64>, bin_hz: f64) -> Self {
        let active = activation_mask(&magnitudes);
        let peak_hz = dominant_peak_hz(&magnitudes, bin_hz);
        let log_spectrum = log_frequency_spectrum(&magnitudes, bin_hz);
        Self { magnitudes, active, peak_hz, log_spectrum }
    }
}

/// Marks bins whose magnitude exceeds the frame's 90th percentile.
pub fn activation_mask(magnitudes: &[f64]) -> Vec<bool> {
    if magnitudes.is_empty() {
        return Vec::new();
    }
    let mut sorted = magnitudes.to_vec();
    let idx = ((magnitudes.len() - 1) as f64 * CFA_PERCENTILE).floor() as usize;
    let (_, &mut threshold, _) = sorted.select_nth_unstable_by(idx, |a, b| a.total_cmp(b));
    magnitudes.iter().map(|&m| m > threshold).collect()
}

fn persistence_required(frames: usize) -> usize {
    (CFA_PERSISTENCE * frames as f64).ceil() as usize
}

/// Continuous Frequency Activation of a block: fraction of bins active in
/// at least 80% of the block's frames.
pub fn cfa(block: &[FrameAnalysis]) -> f64 {
    let Some(first) = block.first() else { return 0.0 };
    let bins = first.active.len();
    if bins == 0 {
        return 0.0;
    }
    let required = persistence_required(block.len());
    let sustained = (0..bins).filter(|&k| block.iter().filter(|f| f.active[k]).count() >= required).count();
    sustained as f64 / bins as f64
}

/// Rolling activation counts for streaming CFA; agrees exactly with [`cfa`]
/// over the same block.
#[derive(Debug, Clone, Default)]
struct CfaCounter {
    counts: Vec<u16>,
}

impl CfaCounter {
    fn add(&mut self, active: &[bool]) {
        if self.counts.len() != active.len() {
            self.counts = vec![0; active.len()];
        }
        for (c, &a) in self.counts.iter_mut().zip(active) {
            *c += a as u16;
        }
    }

    fn remove(&mut self, active: &[bool]) {
        for (c, &a) in self.counts.iter_mut().zip(active) {
            *c -= a as u16;
        }
    }

    fn value(&self, frames: usize) -> f64 {
        if self.counts.is_empty() || frames == 0 {
            return 0.0;
        }
        let required = persistence_required(frames) as u16;
        self.counts.iter().filter(|&&c| c >= required).count() as f64 / self.counts.len() as f64
    }
}

/// Frequency of the strongest bin in 80 Hz–5 kHz, refined by parabolic
/// interpolation of the log magnitude.
pub fn dominant_peak_hz(magnitudes: &[f64], bin_hz: f64) -> f64 {
    let lo = ((CFT_LOW_HZ / bin_hz).ceil() as usize).max(1);
    let hi = ((CFT_HIGH_HZ / bin_hz).floor() as usize).min(magnitudes.len().saturating_sub(2));
    if lo > hi {
        return 0.0;
    }
    let (k, &peak) = magnitudes[lo..=hi]
        .iter()
        .enumerate()
        .fold((0, &f64::NEG_INFINITY), |best, (i, m)| if *m > *best.1 { (i, m) } else { best });
    let k = k + lo;
    if peak < 1e-9 {
        return 0.0;
    }
    let (a, b, c) = (magnitudes[k - 1].max(1e-300).ln(), peak.ln(), magnitudes[k + 1].max(1e-300).ln());
    let denom = a - 2.0 * b + c;
    let offset = if denom.abs() > 1e-12 { (0.5 * (a - c) / denom).clamp(-0.5, 0.5) } else { 0.0 };
    (k as f64 + offset) * bin_hz
}

/// Curved Frequency Trajectory: RMS residual of a least-squares line
/// through the block's dominant-peak track, divided by `nyquist`.
pub fn cft(block: &[FrameAnalysis], nyquist: f64) -> f64 {
    let track: Vec<f64> = block.iter().map(|f| f.peak_hz).collect();
    line_fit_residual(&track) / nyquist
}

fn line_fit_residual(track: &[f64]) -> f64 {
    let n = track.len();
    if n < 3 {
        return 0.0;
    }
    let nf = n as f64;
    let mean_t = (nf - 1.0) / 2.0;
    let mean_y = track.iter().sum::<f64>() / nf;
    let (mut sty, mut stt) = (0.0, 0.0);
    for (t, y) in track.iter().enumerate() {
        let dt = t as f64 - mean_t;
        sty += dt * (y - mean_y);
        stt += dt * dt;
    }
    let slope = sty / stt;
    let sse: f64 = track
        .iter()
        .enumerate()
        .map(|(t, y)| {
            let r = y - (mean_y + slope * (t as f64 - mean_t));
            r * r
        })
        .sum();
    (sse / nf).sqrt()
}

fn log_grid_len() -> usize {
    (FLUCT_STEPS_PER_OCTAVE * (FLUCT_HIGH_HZ / FLUCT_LOW_HZ).log2()).floor() as usize + 1
}

/// Log magnitudes linearly interpolated onto a quarter-semitone grid.
pub fn log_frequency_spectrum(magnitudes: &[f64], bin_hz: f64) -> Vec<f64> {
    let last = magnitudes.len().saturating_sub(1);
    (0..log_grid_len())
        .map(|i| {
            let hz = FLUCT_LOW_HZ * 2f64.powf(i as f64 / FLUCT_STEPS_PER_OCTAVE);
            let pos = (hz / bin_hz).min(last as f64);
            let k = pos.floor() as usize;
            let frac = pos - k as f64;
            let m = if k >= last { magnitudes[last] } else { magnitudes[k] * (1.0 - frac) + magnitudes[k + 1] * frac };
            (m + 1e-6).ln()
        })
        .collect()
}

/// Grid index ranges of the 11 half-overlapping fluctogram bands.
pub fn fluctogram_bands() -> Vec<std::ops::Range<usize>> {
    let len = log_grid_len();
    // 11 bands at 50% overlap span 6 band widths
    let width = len / 6;
    let step = width / 2;
    (0..FLUCT_BANDS).map(|b| b * step..(b * step + width).min(len)).collect()
}

/// Sub-step shift (in grid steps) maximizing the normalized cross-correlation
/// of two band slices; 0 when either slice is flat.
fn band_shift(prev: &[f64], cur: &[f64]) -> f64 {
    let n = prev.len() as isize;
    let centred = |x: &[f64]| {
        let m = x.iter().sum::<f64>() / x.len() as f64;
        x.iter().map(|v| v - m).collect::<Vec<_>>()
    };
    let (a, b) = (centred(prev), centred(cur));
    let energy = |x: &[f64]| x.iter().map(|v| v * v).sum::<f64>();
    if energy(&a) < 1e-9 || energy(&b) < 1e-9 {
        return 0.0;
    }
    let corr = |lag: isize| -> f64 {
        let (mut num, mut ea, mut eb) = (0.0, 0.0, 0.0);
        for i in 0.max(-lag)..n.min(n - lag) {
            let (x, y) = (a[i as usize], b[(i + lag) as usize]);
            num += x * y;
            ea += x * x;
            eb += y * y;
        }
        if ea < 1e-12 || eb < 1e-12 { 0.0 } else { num / (ea * eb).sqrt() }
    };
    let scores: Vec<f64> = (-FLUCT_MAX_LAG..=FLUCT_MAX_LAG).map(corr).collect();
    let (best, _) = scores
        .iter()
        .enumerate()
        .fold((FLUCT_MAX_LAG as usize, f64::NEG_INFINITY), |acc, (i, &s)| if s > acc.1 { (i, s) } else { acc });
    let mut shift = best as f64 - FLUCT_MAX_LAG as f64;
    if best > 0 && best + 1 < scores.len() {
        let (l, c, r) = (scores[best - 1], scores[best], scores[best + 1]);
        let denom = l - 2.0 * c + r;
        if denom.abs() > 1e-12 {
            shift += (0.5 * (l - r) / denom).clamp(-0.5, 0.5);
        }
    }
    shift
}

fn frame_shifts(prev: &FrameAnalysis, cur: &FrameAnalysis, bands: &[std::ops::Range<usize>]) -> [f64; FLUCT_BANDS] {
    let mut out = [0.0; FLUCT_BANDS];
    for (o, r) in out.iter_mut().zip(bands) {
        *o = band_shift(&prev.log_spectrum[r.clone()], &cur.log_spectrum[r.clone()]).abs();
    }
    out
}

fn mean_shifts(shifts: &[[f64; FLUCT_BANDS]]) -> [f64; FLUCT_BANDS] {
    let mut out = [0.0; FLUCT_BANDS];
    if shifts.is_empty() {
        return out;
    }
    for s in shifts {
        for (o, v) in out.iter_mut().zip(s) {
            *o += v;
        }
    }
    out.iter_mut().for_each(|o| *o /= shifts.len() as f64);
    out
}

/// Mean absolute frame-to-frame spectral shift in each of 11 log-spaced,
/// half-overlapping bands between 100 Hz and 8 kHz.
pub fn fluctogram(block: &[FrameAnalysis]) -> [f64; FLUCT_BANDS] {
    let bands = fluctogram_bands();
    let shifts: Vec<_> = block.windows(2).map(|w| frame_shifts(&w[0], &w[1], &bands)).collect();
    mean_shifts(&shifts)
}

/// Difference of MFCCs 2..=19 (20-channel bank) between consecutive frames.
pub fn delta_mfcc(prev: Option<&[f64]>, cur: &[f64]) -> [f64; 18] {
    let mut out = [0.0; 18];
    if let Some(p) = prev {
        for (o, k) in out.iter_mut().zip(DELTA_RANGE) {
            *o = cur[k] - p[k];
        }
    }
    out
}

/// Feature vectors for all three detectors at one detector frame.
#[derive(Debug, Clone, PartialEq)]
pub struct DetectorFrameSet {
    pub time: f64,
    pub applause: DetectorFeature,
    pub music: DetectorFeature,
    pub speech: DetectorFeature,
}

impl DetectorFrameSet {
    pub fn get(&self, kind: DetectorKind) -> &DetectorFeature {
        match kind {
            DetectorKind::Applause => &self.applause,
            DetectorKind::Music => &self.music,
            DetectorKind::Speech => &self.speech,
        }
    }
}

/// Streaming extractor for detector frames (100 ms window, 20 ms hop).
///
/// Keeps the previous spectrum, the previous MFCCs and a one-second block of
/// frame analyses. Not meant to be shared between streams.
#[derive(Debug, Clone)]
pub struct DetectorExtractor {
    analyzer: SpectrumAnalyzer,
    mfcc: MfccBank,
    bands: BandSpec,
    fluct_bands: Vec<std::ops::Range<usize>>,
    block: VecDeque<FrameAnalysis>,
    shifts: VecDeque<[f64; FLUCT_BANDS]>,
    cfa: CfaCounter,
    prev_mfcc: Option<Vec<f64>>,
}

impl DetectorExtractor {
    pub fn new(frame_len: usize, sample_rate: u32) -> Result<Self, FeatureError> {
        let analyzer = SpectrumAnalyzer::new(frame_len, sample_rate)?;
        let mfcc = MfccBank::new(DETECTOR_MELS, DETECTOR_MELS, analyzer.fft_size(), sample_rate)?;
        Ok(Self {
            analyzer,
            mfcc,
            bands: BandSpec::default(),
            fluct_bands: fluctogram_bands(),
            block: VecDeque::with_capacity(DETECTOR_BLOCK + 1),
            shifts: VecDeque::with_capacity(DETECTOR_BLOCK),
            cfa: CfaCounter::default(),
            prev_mfcc: None,
        })
    }

    /// Extractor for the canonical 100 ms / 44.1 kHz geometry.
    pub fn canonical() -> Self {
        Self::new(4410, crate::audio::CANONICAL_RATE).expect("canonical geometry is valid")
    }

    pub fn analyzer(&self) -> &SpectrumAnalyzer {
        &self.analyzer
    }

    pub fn mfcc_bank(&self) -> &MfccBank {
        &self.mfcc
    }

    pub fn bands(&self) -> &BandSpec {
        &self.bands
    }

    pub fn reset(&mut self) {
        self.block.clear();
        self.shifts.clear();
        self.cfa = CfaCounter::default();
        self.prev_mfcc = None;
    }

    /// The frames currently in the one-second context block, oldest first.
    pub fn block(&self) -> impl Iterator<Item = &FrameAnalysis> {
        self.block.iter()
    }

    pub fn push(&mut self, frame: &FrameBuffer) -> Result<DetectorFrameSet, FeatureError> {
        let mags = self.analyzer.magnitudes(&frame.samples)?;
        let bin_hz = self.analyzer.bin_hz();
        let nyquist = self.analyzer.sample_rate() as f64 / 2.0;

        let spectral = spectral_measures(&mags, bin_hz, &self.bands, self.block.back().map(|f| f.magnitudes.as_slice()));
        let mfcc = self.mfcc.compute(&mags);
        let deltas = delta_mfcc(self.prev_mfcc.as_deref(), &mfcc);

        let analysis = FrameAnalysis::new(mags, bin_hz);
        if let Some(prev) = self.block.back() {
            self.shifts.push_back(frame_shifts(prev, &analysis, &self.fluct_bands));
        }
        self.cfa.add(&analysis.active);
        self.block.push_back(analysis);
        if self.block.len() > DETECTOR_BLOCK {
            let old = self.block.pop_front().expect("block is non-empty");
            self.cfa.remove(&old.active);
            self.shifts.pop_front();
        }

        let cfa_value = self.cfa.value(self.block.len());
        let track: Vec<f64> = self.block.iter().map(|f| f.peak_hz).collect();
        let cft_value = line_fit_residual(&track) / nyquist;
        let fluct = mean_shifts(self.shifts.make_contiguous());
        self.prev_mfcc = Some(mfcc.clone());

        let to_f32 = |v: &[f64]| v.iter().map(|&x| x as f32).collect::<Vec<f32>>();
        let mut applause = Vec::with_capacity(25);
        applause.extend(to_f32(&spectral));
        applause.extend(to_f32(&mfcc[..APPLAUSE_MFCC]));
        let mut music = applause.clone();
        music.push(cfa_value as f32);
        let mut speech = Vec::with_capacity(46);
        speech.extend(to_f32(&spectral));
        speech.push(cft_value as f32);
        speech.extend(to_f32(&fluct));
        speech.extend(to_f32(&deltas));

        let time = frame.start_time;
        Ok(DetectorFrameSet {
            time,
            applause: DetectorFeature { time, kind: DetectorKind::Applause, values: applause },
            music: DetectorFeature { time, kind: DetectorKind::Music, values: music },
            speech: DetectorFeature { time, kind: DetectorKind::Speech, values: speech },
        })
    }
}
