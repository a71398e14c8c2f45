//! Random smooth feature sequences with a known time warp, for testing the
//! aligner without audio.

use std::f64::consts::PI;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PairSpec {
    pub ref_frames: usize,
    pub dim: usize,
    /// Peak relative tempo deviation of the target, e.g. 0.2 for +/-20%.
    pub tempo_deviation: f64,
    /// Standard deviation of the noise added to target frames.
    pub noise: f64,
}

impl Default for PairSpec {
    fn default() -> Self {
        Self { ref_frames: 2000, dim: 100, tempo_deviation: 0.2, noise: 0.05 }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FeaturePair {
    pub reference: Vec<Vec<f32>>,
    pub target: Vec<Vec<f32>>,
    /// True (fractional) reference frame of each target frame.
    pub warp: Vec<f64>,
}

struct SmoothField {
    // per dimension: (amplitude, cycles per frame, phase)
    components: Vec<Vec<(f64, f64, f64)>>,
}

impl SmoothField {
    fn new(dim: usize, rng: &mut ChaCha8Rng) -> Self {
        const COMPONENTS: usize = 5;
        let normal = Normal::new(0.0, 1.0 / (COMPONENTS as f64).sqrt()).expect("valid normal");
        let components = (0..dim)
            .map(|_| {
                (0..COMPONENTS)
                    .map(|_| {
                        // periods between 40 and 1500 frames, log-uniform
                        let period = (40f64.ln() + rng.gen::<f64>() * (1500f64 / 40.0).ln()).exp();
                        (normal.sample(rng), 1.0 / period, rng.gen_range(0.0..2.0 * PI))
                    })
                    .collect()
            })
            .collect();
        Self { components }
    }

    fn at(&self, tau: f64) -> Vec<f64> {
        self.components
            .iter()
            .map(|c| c.iter().map(|&(a, f, p)| a * (2.0 * PI * f * tau + p).sin()).sum())
            .collect()
    }
}

/// Reference frames sampled from a smooth random field, and a target that
/// reads the same field along a smoothly varying tempo curve plus noise.
pub fn smooth_feature_pair(spec: PairSpec, seed: u64) -> FeaturePair {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let field = SmoothField::new(spec.dim, &mut rng);
    let reference: Vec<Vec<f32>> =
        (0..spec.ref_frames).map(|j| field.at(j as f64).into_iter().map(|v| v as f32).collect()).collect();

    let curves: Vec<(f64, f64, f64)> = (0..3)
        .map(|_| (rng.gen_range(0.2..1.0), rng.gen_range(500.0..3000.0), rng.gen_range(0.0..2.0 * PI)))
        .collect();
    let total: f64 = curves.iter().map(|c| c.0).sum();
    let tempo = |i: f64| {
        let s: f64 = curves.iter().map(|&(b, p, ph)| b * (2.0 * PI * i / p + ph).sin()).sum();
        1.0 + spec.tempo_deviation * s / total
    };

    let noise = Normal::new(0.0, spec.noise.max(0.0)).expect("valid normal");
    let last = (spec.ref_frames - 1) as f64;
    let mut warp = Vec::new();
    let mut target = Vec::new();
    let mut pos = 0.0;
    let mut i = 0usize;
    while pos <= last {
        warp.push(pos);
        target.push(field.at(pos).into_iter().map(|v| (v + noise.sample(&mut rng)) as f32).collect());
        pos += tempo(i as f64);
        i += 1;
    }
    FeaturePair { reference, target, warp }
}

/// Target made by repeating reference frames so it plays `factor` times
/// slower; `warp` holds the exact fractional positions.
pub fn stretched_pair(reference: Vec<Vec<f32>>, factor: f64) -> FeaturePair {
    let n = (reference.len() as f64 * factor).floor() as usize;
    let warp: Vec<f64> = (0..n).map(|i| i as f64 / factor).collect();
    let target = warp.iter().map(|&w| reference[w.floor() as usize].clone()).collect();
    FeaturePair { reference, target, warp }
}
