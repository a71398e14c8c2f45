//! Windowed magnitude spectra, mel filterbanks and MFCCs.

use std::f64::consts::PI;
use std::sync::Arc;

use realfft::{RealFftPlanner, RealToComplex};

use super::FeatureError;

/// Floor applied to mel energies before the logarithm.
pub const LOG_FLOOR: f64 = 1e-10;

/// Hann-windowed, zero-padded magnitude spectrum of fixed-length frames.
///
/// The FFT size is the next power of two at or above the frame length
/// (1024 for 20 ms frames at 44.1 kHz, 8192 for 100 ms frames).
#[derive(Clone)]
pub struct SpectrumAnalyzer {
    frame_len: usize,
    fft_size: usize,
    sample_rate: u32,
    window: Vec<f64>,
    fft: Arc<dyn RealToComplex<f64>>,
}

impl std::fmt::Debug for SpectrumAnalyzer {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("SpectrumAnalyzer")
            .field("frame_len", &self.frame_len)
            .field("fft_size", &self.fft_size)
            .field("sample_rate", &self.sample_rate)
            .finish()
    }
}

impl SpectrumAnalyzer {
    pub fn new(frame_len: usize, sample_rate: u32) -> Result<Self, FeatureError> {
        if frame_len == 0 {
            return Err(FeatureError::EmptyFrame);
        }
        let fft_size = frame_len.next_power_of_two().max(2);
        let window = hann(frame_len);
        let fft = RealFftPlanner::<f64>::new().plan_fft_forward(fft_size);
        Ok(Self { frame_len, fft_size, sample_rate, window, fft })
    }

    pub fn frame_len(&self) -> usize {
        self.frame_len
    }

    pub fn fft_size(&self) -> usize {
        self.fft_size
    }

    pub fn bins(&self) -> usize {
        self.fft_size / 2 + 1
    }

    pub fn bin_hz(&self) -> f64 {
        self.sample_rate as f64 / self.fft_size as f64
    }

    pub fn sample_rate(&self) -> u32 {
        self.sample_rate
    }

    /// Magnitudes of bins `0..=fft_size/2`.
    pub fn magnitudes(&self, samples: &[f32]) -> Result<Vec<f64>, FeatureError> {
        if samples.len() != self.frame_len {
            return Err(FeatureError::FrameLength { expected: self.frame_len, got: samples.len() });
        }
        let mut input = vec![0.0f64; self.fft_size];
        for ((dst, &s), &w) in input.iter_mut().zip(samples).zip(&self.window) {
            *dst = s as f64 * w;
        }
        let mut spectrum = self.fft.make_output_vec();
        self.fft
            .process(&mut input, &mut spectrum)
            .expect("buffer sizes come from the plan");
        Ok(spectrum.iter().map(|c| c.norm()).collect())
    }
}

/// Symmetric Hann window.
pub fn hann(len: usize) -> Vec<f64> {
    if len == 1 {
        return vec![1.0];
    }
    (0..len).map(|i| 0.5 - 0.5 * (2.0 * PI * i as f64 / (len - 1) as f64).cos()).collect()
}

pub fn hz_to_mel(hz: f64) -> f64 {
    2595.0 * (1.0 + hz / 700.0).log10()
}

pub fn mel_to_hz(mel: f64) -> f64 {
    700.0 * (10f64.powf(mel / 2595.0) - 1.0)
}

/// Triangular filters equally spaced on the mel scale between 0 Hz and
/// Nyquist, evaluated at FFT bin centres.
///
/// Filters narrower than one bin would come out all-zero; those get unit
/// weight on the bin nearest their centre so every channel sees energy.
#[derive(Debug, Clone)]
pub struct MelFilterbank {
    // (first bin, weights)
    filters: Vec<(usize, Vec<f64>)>,
}

impl MelFilterbank {
    pub fn new(n_mels: usize, fft_size: usize, sample_rate: u32) -> Self {
        let bins = fft_size / 2 + 1;
        let bin_hz = sample_rate as f64 / fft_size as f64;
        let mel_max = hz_to_mel(sample_rate as f64 / 2.0);
        let edges: Vec<f64> =
            (0..n_mels + 2).map(|i| mel_to_hz(mel_max * i as f64 / (n_mels + 1) as f64)).collect();
        let filters = (0..n_mels)
            .map(|m| {
                let (lo, centre, hi) = (edges[m], edges[m + 1], edges[m + 2]);
                let weights: Vec<(usize, f64)> = (0..bins)
                    .filter_map(|k| {
                        let f = k as f64 * bin_hz;
                        let w = ((f - lo) / (centre - lo)).min((hi - f) / (hi - centre));
                        (w > 0.0).then_some((k, w))
                    })
                    .collect();
                if weights.is_empty() {
                    let k = ((centre / bin_hz).round() as usize).min(bins - 1);
                    (k, vec![1.0])
                } else {
                    let first = weights[0].0;
                    let last = weights[weights.len() - 1].0;
                    let mut dense = vec![0.0; last - first + 1];
                    for (k, w) in weights {
                        dense[k - first] = w;
                    }
                    (first, dense)
                }
            })
            .collect();
        Self { filters }
    }

    pub fn len(&self) -> usize {
        self.filters.len()
    }

    pub fn is_empty(&self) -> bool {
        self.filters.is_empty()
    }

    /// Weighted magnitude sum per channel.
    pub fn energies(&self, magnitudes: &[f64]) -> Vec<f64> {
        self.filters
            .iter()
            .map(|(first, w)| w.iter().zip(&magnitudes[*first..]).map(|(a, b)| a * b).sum())
            .collect()
    }

    /// Dense weight row of channel `m` over all bins.
    pub fn dense_row(&self, m: usize, bins: usize) -> Vec<f64> {
        let mut row = vec![0.0; bins];
        let (first, w) = &self.filters[m];
        row[*first..*first + w.len()].copy_from_slice(w);
        row
    }
}

/// Log-mel energies followed by an orthonormal DCT-II.
#[derive(Debug, Clone)]
pub struct MfccBank {
    filterbank: MelFilterbank,
    n_mels: usize,
    n_coeffs: usize,
    // row-major n_coeffs x n_mels
    dct: Vec<f64>,
}

impl MfccBank {
    pub fn new(n_mels: usize, n_coeffs: usize, fft_size: usize, sample_rate: u32) -> Result<Self, FeatureError> {
        if n_mels == 0 || n_coeffs == 0 || n_coeffs > n_mels {
            return Err(FeatureError::InvalidConfig(format!("{n_coeffs} coefficients from {n_mels} mel channels")));
        }
        let filterbank = MelFilterbank::new(n_mels, fft_size, sample_rate);
        let mut dct = Vec::with_capacity(n_coeffs * n_mels);
        for k in 0..n_coeffs {
            let scale = if k == 0 { (1.0 / n_mels as f64).sqrt() } else { (2.0 / n_mels as f64).sqrt() };
            for m in 0..n_mels {
                dct.push(scale * (PI * k as f64 * (m as f64 + 0.5) / n_mels as f64).cos());
            }
        }
        Ok(Self { filterbank, n_mels, n_coeffs, dct })
    }

    pub fn n_mels(&self) -> usize {
        self.n_mels
    }

    pub fn n_coeffs(&self) -> usize {
        self.n_coeffs
    }

    pub fn filterbank(&self) -> &MelFilterbank {
        &self.filterbank
    }

    pub fn log_mel(&self, magnitudes: &[f64]) -> Vec<f64> {
        self.filterbank.energies(magnitudes).into_iter().map(|e| e.max(LOG_FLOOR).ln()).collect()
    }

    pub fn compute(&self, magnitudes: &[f64]) -> Vec<f64> {
        let log_mel = self.log_mel(magnitudes);
        self.dct
            .chunks_exact(self.n_mels)
            .map(|row| row.iter().zip(&log_mel).map(|(a, b)| a * b).sum())
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn fft_sizes_follow_frame_geometry() {
        assert_eq!(SpectrumAnalyzer::new(882, 44_100).unwrap().fft_size(), 1024);
        assert_eq!(SpectrumAnalyzer::new(4410, 44_100).unwrap().fft_size(), 8192);
    }

    #[test]
    fn every_mel_channel_has_weight() {
        for (n, fft) in [(140, 1024), (20, 8192), (20, 1024)] {
            let fb = MelFilterbank::new(n, fft, 44_100);
            assert_eq!(fb.len(), n);
            for m in 0..n {
                assert!(fb.dense_row(m, fft / 2 + 1).iter().any(|&w| w > 0.0), "channel {m} of {n}");
            }
        }
    }

    #[test]
    fn mel_scale_round_trips() {
        for hz in [0.0, 100.0, 1000.0, 8000.0, 22_050.0] {
            assert!((mel_to_hz(hz_to_mel(hz)) - hz).abs() < 1e-6);
        }
    }

    #[test]
    fn dct_rows_are_orthonormal() {
        let bank = MfccBank::new(20, 20, 1024, 44_100).unwrap();
        for a in 0..20 {
            for b in 0..20 {
                let dot: f64 = (0..20).map(|m| bank.dct[a * 20 + m] * bank.dct[b * 20 + m]).sum();
                assert!((dot - if a == b { 1.0 } else { 0.0 }).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn wrong_frame_length_is_an_error() {
        let a = SpectrumAnalyzer::new(882, 44_100).unwrap();
        assert!(matches!(a.magnitudes(&[0.0; 10]), Err(FeatureError::FrameLength { .. })));
    }
}
