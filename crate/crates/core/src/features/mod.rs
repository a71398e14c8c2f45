//! Feature extraction for alignment and event detection.

mod detector;
mod dump;
mod spectrum;

pub use detector::{
    activation_mask, cfa, cft, delta_mfcc, dominant_peak_hz, fluctogram, fluctogram_bands, log_frequency_spectrum,
    spectral_measures, BandSpec, DetectorExtractor, DetectorFrameSet, FrameAnalysis, CFA_PERCENTILE,
    CFA_PERSISTENCE, DETECTOR_BLOCK,
};
pub use dump::{read_dump, write_dump, DumpHeader};
pub use spectrum::{hann, hz_to_mel, mel_to_hz, MelFilterbank, MfccBank, SpectrumAnalyzer, LOG_FLOOR};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::audio::{AudioError, AudioStream, FrameBuffer, FrameGeometry};

/// Mel channels behind the alignment MFCCs.
pub const ALIGNMENT_MELS: usize = 140;
/// MFCCs computed per alignment frame before the low ones are dropped.
pub const ALIGNMENT_COEFFS: usize = 120;
/// Low-order coefficients discarded from the alignment vector.
pub const ALIGNMENT_SKIP: usize = 20;
pub const ALIGNMENT_DIM: usize = ALIGNMENT_COEFFS - ALIGNMENT_SKIP;

#[derive(Debug, Error)]
pub enum FeatureError {
    #[error("empty frame")]
    EmptyFrame,
    #[error("frame has {got} samples, expected {expected}")]
    FrameLength { expected: usize, got: usize },
    #[error("invalid feature configuration: {0}")]
    InvalidConfig(String),
    #[error("malformed feature dump: {0}")]
    MalformedDump(String),
    #[error(transparent)]
    Audio(#[from] AudioError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// 100 MFCCs (coefficients 20..120 of a 140-channel bank) for one 20 ms frame.
#[derive(Debug, Clone, PartialEq)]
pub struct AlignmentFeature {
    pub time: f64,
    pub values: Vec<f32>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DetectorKind {
    Applause,
    Music,
    Speech,
}

impl DetectorKind {
    pub const ALL: [DetectorKind; 3] = [DetectorKind::Applause, DetectorKind::Music, DetectorKind::Speech];

    pub fn dim(self) -> usize {
        match self {
            DetectorKind::Applause => 25,
            DetectorKind::Music => 26,
            DetectorKind::Speech => 46,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            DetectorKind::Applause => "applause",
            DetectorKind::Music => "music",
            DetectorKind::Speech => "speech",
        }
    }
}

impl std::fmt::Display for DetectorKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

impl std::str::FromStr for DetectorKind {
    type Err = FeatureError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "applause" => Ok(DetectorKind::Applause),
            "music" => Ok(DetectorKind::Music),
            "speech" => Ok(DetectorKind::Speech),
            other => Err(FeatureError::InvalidConfig(format!("unknown detector kind {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DetectorFeature {
    pub time: f64,
    pub kind: DetectorKind,
    pub values: Vec<f32>,
}

/// MFCCs `0..n_coeffs` of a frame from an `n_mels`-channel bank.
///
/// Builds the filterbank on every call; use [`MfccBank`] in loops.
pub fn mfcc(frame: &[f32], sample_rate: u32, n_mels: usize, n_coeffs: usize) -> Result<Vec<f64>, FeatureError> {
    if frame.is_empty() {
        return Err(FeatureError::EmptyFrame);
    }
    let analyzer = SpectrumAnalyzer::new(frame.len(), sample_rate)?;
    let bank = MfccBank::new(n_mels, n_coeffs, analyzer.fft_size(), sample_rate)?;
    Ok(bank.compute(&analyzer.magnitudes(frame)?))
}

/// Computes 100-dimensional alignment vectors for 20 ms frames.
#[derive(Debug, Clone)]
pub struct AlignmentExtractor {
    analyzer: SpectrumAnalyzer,
    bank: MfccBank,
}

impl AlignmentExtractor {
    pub fn new(sample_rate: u32) -> Self {
        let frame_len = FrameGeometry::ALIGNMENT.window_samples(sample_rate);
        let analyzer = SpectrumAnalyzer::new(frame_len, sample_rate).expect("alignment frames are non-empty");
        let bank = MfccBank::new(ALIGNMENT_MELS, ALIGNMENT_COEFFS, analyzer.fft_size(), sample_rate)
            .expect("alignment bank sizes are valid");
        Self { analyzer, bank }
    }

    pub fn canonical() -> Self {
        Self::new(crate::audio::CANONICAL_RATE)
    }

    pub fn compute(&self, frame: &FrameBuffer) -> Result<AlignmentFeature, FeatureError> {
        let coeffs = self.bank.compute(&self.analyzer.magnitudes(&frame.samples)?);
        Ok(AlignmentFeature {
            time: frame.start_time,
            values: coeffs[ALIGNMENT_SKIP..].iter().map(|&c| c as f32).collect(),
        })
    }
}

impl Default for AlignmentExtractor {
    fn default() -> Self {
        Self::canonical()
    }
}

/// One-shot alignment vector for a frame at the canonical rate.
pub fn alignment_features(frame: &FrameBuffer) -> Result<AlignmentFeature, FeatureError> {
    AlignmentExtractor::canonical().compute(frame)
}

/// Alignment vectors for every 10 ms frame of a stream.
pub fn alignment_sequence(stream: &AudioStream) -> Result<Vec<AlignmentFeature>, FeatureError> {
    let extractor = AlignmentExtractor::new(stream.sample_rate());
    crate::audio::frame_stream(stream, FrameGeometry::ALIGNMENT)?
        .iter()
        .map(|f| extractor.compute(f))
        .collect()
}

/// Detector feature sets for every 20 ms frame of a stream.
pub fn detector_sequence(stream: &AudioStream) -> Result<Vec<DetectorFrameSet>, FeatureError> {
    let geometry = FrameGeometry::DETECTOR;
    let mut extractor = DetectorExtractor::new(geometry.window_samples(stream.sample_rate()), stream.sample_rate())?;
    crate::audio::frame_stream(stream, geometry)?
        .iter()
        .map(|f| extractor.push(f))
        .collect()
}
