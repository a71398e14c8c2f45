use serde::{Deserialize, Serialize};

use crate::features::DetectorKind;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DebounceParams {
    pub threshold: f64,
    /// Contiguous time above threshold before an event turns on.
    pub min_active_ms: u32,
    /// Contiguous time at or below threshold before it turns off.
    pub release_ms: u32,
    pub hop_ms: u32,
}

impl Default for DebounceParams {
    fn default() -> Self {
        Self { threshold: 0.5, min_active_ms: 400, release_ms: 200, hop_ms: 20 }
    }
}

impl DebounceParams {
    pub fn on_frames(&self) -> usize {
        self.min_active_ms.div_ceil(self.hop_ms.max(1)).max(1) as usize
    }

    pub fn off_frames(&self) -> usize {
        self.release_ms.div_ceil(self.hop_ms.max(1)).max(1) as usize
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EventDecision {
    pub time: f64,
    pub kind: DetectorKind,
    pub active: bool,
    pub raw_prob: f64,
}

/// Hysteresis on a probability stream: on after `on_frames` consecutive
/// frames above threshold, off after `off_frames` consecutive frames at or
/// below it. The switching frame itself reports the new state.
#[derive(Debug, Clone)]
pub struct Debouncer {
    params: DebounceParams,
    on_frames: usize,
    off_frames: usize,
    active: bool,
    run: usize,
}

impl Debouncer {
    pub fn new(params: DebounceParams) -> Self {
        Self { params, on_frames: params.on_frames(), off_frames: params.off_frames(), active: false, run: 0 }
    }

    pub fn params(&self) -> DebounceParams {
        self.params
    }

    pub fn is_active(&self) -> bool {
        self.active
    }

    pub fn reset(&mut self) {
        self.active = false;
        self.run = 0;
    }

    pub fn push(&mut self, prob: f64) -> bool {
        let above = prob > self.params.threshold;
        if above != self.active {
            self.run += 1;
            let needed = if self.active { self.off_frames } else { self.on_frames };
            if self.run >= needed {
                self.active = above;
                self.run = 0;
            }
        } else {
            self.run = 0;
        }
        self.active
    }
}

/// Debounces a whole probability stream sampled every `params.hop_ms`.
pub fn debounce(probs: &[f64], kind: DetectorKind, params: DebounceParams) -> Vec<EventDecision> {
    let mut d = Debouncer::new(params);
    probs
        .iter()
        .enumerate()
        .map(|(i, &p)| EventDecision {
            time: (i as u64 * params.hop_ms as u64) as f64 / 1000.0,
            kind,
            active: d.push(p),
            raw_prob: p,
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn run(probs: &[f64]) -> Vec<bool> {
        debounce(probs, DetectorKind::Applause, DebounceParams::default()).iter().map(|d| d.active).collect()
    }

    #[test]
    fn nineteen_frames_never_fire() {
        let mut p = vec![0.9; 19];
        p.extend([0.1; 30]);
        assert!(run(&p).iter().all(|&a| !a));
    }

    #[test]
    fn twenty_frames_fire_on_the_twentieth() {
        let mut p = vec![0.9; 20];
        p.extend([0.1; 30]);
        let d = debounce(&p, DetectorKind::Applause, DebounceParams::default());
        let first = d.iter().position(|e| e.active).unwrap();
        assert_eq!(first, 19);
        assert!((d[first].time - 0.38).abs() < 1e-12);
        // released after 10 frames at or below threshold
        let off = d.iter().skip(first).position(|e| !e.active).unwrap() + first;
        assert_eq!(off, 29);
    }

    #[test]
    fn alternating_never_fires() {
        let p: Vec<f64> = (0..200).map(|i| if i % 2 == 0 { 0.9 } else { 0.1 }).collect();
        assert!(run(&p).iter().all(|&a| !a));
    }

    #[test]
    fn threshold_itself_counts_as_below() {
        assert!(run(&[0.5; 40]).iter().all(|&a| !a));
    }

    #[test]
    fn short_dips_do_not_release() {
        let mut p = vec![0.9; 25];
        p.extend([0.2; 9]);
        p.extend([0.9; 5]);
        assert!(run(&p)[19..].iter().all(|&a| a));
    }

    #[test]
    fn frame_counts_follow_hop() {
        let p = DebounceParams { hop_ms: 10, ..DebounceParams::default() };
        assert_eq!((p.on_frames(), p.off_frames()), (40, 20));
        assert_eq!((DebounceParams::default().on_frames(), DebounceParams::default().off_frames()), (20, 10));
    }

    proptest! {
        #[test]
        fn invariant_to_perturbations_that_keep_sides(
            probs in prop::collection::vec(0.0f64..1.0, 1..400),
            jitter in prop::collection::vec(0.0f64..1.0, 400),
        ) {
            // move each value anywhere on its own side of the threshold
            let moved: Vec<f64> = probs
                .iter()
                .zip(&jitter)
                .map(|(&p, &u)| if p > 0.5 { 0.5 + 1e-9 + u * (0.5 - 1e-9) } else { u * 0.5 })
                .collect();
            prop_assert_eq!(run(&probs), run(&moved));
        }

        #[test]
        fn state_changes_need_full_runs(probs in prop::collection::vec(0.0f64..1.0, 1..400)) {
            let act = run(&probs);
            for i in 0..act.len() {
                let was = i > 0 && act[i - 1];
                if act[i] && !was {
                    prop_assert!(i >= 19 && probs[i - 19..=i].iter().all(|&p| p > 0.5));
                }
                if !act[i] && was {
                    prop_assert!(probs[i - 9..=i].iter().all(|&p| p <= 0.5));
                }
            }
        }
    }
}
