//! On-line time warping against a precomputed reference.
//!
//! For each incoming target frame the tracker computes cosine costs against a
//! window of reference frames centred on the current position, advances the
//! accumulated-cost row by one DTW step, and reports the cell with the lowest
//! path-length-normalized cost.

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Half-width of the search window in frames (20 s each side at 10 ms).
pub const DEFAULT_WINDOW_RADIUS: usize = 2000;
/// Reference frame hop in seconds.
pub const REF_HOP_S: f64 = 0.01;
/// Largest matrix `offline_dtw` will fill.
pub const OFFLINE_CELL_CAP: usize = 100_000_000;

#[derive(Debug, Error, PartialEq)]
pub enum OltwError {
    #[error("reference has no frames")]
    ReferenceEmpty,
    #[error("start frame {start} is outside a reference of {len} frames")]
    OutOfRange { start: usize, len: usize },
    #[error("feature has {got} values, reference uses {expected}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("{cells} cells exceeds the offline DTW cap of {cap}")]
    InputTooLarge { cells: usize, cap: usize },
    #[error("invalid reference: {0}")]
    InvalidReference(String),
}

/// A section boundary on the reference timeline.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SectionMark {
    pub id: String,
    pub start_bar: usize,
    pub time_s: f64,
    /// The reference has voice within the first seconds of this section.
    pub voice_start: bool,
}

/// Reference features plus the annotations the tracker and gates need.
#[derive(Debug, Clone, PartialEq)]
pub struct ReferenceIndex {
    dim: usize,
    // row-major frames x dim
    features: Vec<f32>,
    sq_norms: Vec<f64>,
    bar_times: Vec<f64>,
    sections: Vec<SectionMark>,
}

impl ReferenceIndex {
    pub fn new(features: Vec<Vec<f32>>, bar_times: Vec<f64>, sections: Vec<SectionMark>) -> Result<Self, OltwError> {
        let dim = features.first().map(Vec::len).ok_or(OltwError::ReferenceEmpty)?;
        if let Some(row) = features.iter().find(|r| r.len() != dim) {
            return Err(OltwError::DimensionMismatch { expected: dim, got: row.len() });
        }
        if bar_times.windows(2).any(|w| w[1] <= w[0]) {
            return Err(OltwError::InvalidReference("bar times must be strictly increasing".into()));
        }
        let duration = features.len() as f64 * REF_HOP_S;
        if let Some(s) = sections.iter().find(|s| !(0.0..=duration).contains(&s.time_s)) {
            return Err(OltwError::InvalidReference(format!(
                "section {} starts at {} s, outside 0..{duration} s",
                s.id, s.time_s
            )));
        }
        if sections.windows(2).any(|w| w[1].time_s < w[0].time_s) {
            return Err(OltwError::InvalidReference("sections must be in time order".into()));
        }
        let sq_norms = features.iter().map(|r| sq_norm(r)).collect();
        Ok(Self { dim, features: features.into_iter().flatten().collect(), sq_norms, bar_times, sections })
    }

    /// Reference without annotations, for alignment-only use.
    pub fn from_features(features: Vec<Vec<f32>>) -> Result<Self, OltwError> {
        Self::new(features, Vec::new(), Vec::new())
    }

    pub fn len(&self) -> usize {
        self.sq_norms.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sq_norms.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn duration_s(&self) -> f64 {
        self.len() as f64 * REF_HOP_S
    }

    pub fn frame(&self, j: usize) -> &[f32] {
        &self.features[j * self.dim..(j + 1) * self.dim]
    }

    pub fn frames(&self) -> impl Iterator<Item = &[f32]> {
        self.features.chunks_exact(self.dim)
    }

    pub fn bar_times(&self) -> &[f64] {
        &self.bar_times
    }

    pub fn sections(&self) -> &[SectionMark] {
        &self.sections
    }

    pub fn set_voice_flags(&mut self, flags: &[bool]) {
        for (s, &f) in self.sections.iter_mut().zip(flags) {
            s.voice_start = f;
        }
    }

    /// Reference frame whose start time is nearest `t` seconds.
    pub fn frame_at(&self, t: f64) -> usize {
        ((t / REF_HOP_S).round().max(0.0) as usize).min(self.len().saturating_sub(1))
    }

    fn cost(&self, j: usize, x: &[f32], x_sq: f64) -> f64 {
        cosine_from_parts(dot(self.frame(j), x), self.sq_norms[j], x_sq)
    }
}

/// Start time of reference frame `j`; the same arithmetic as target frames.
pub fn ref_frame_time(j: usize) -> f64 {
    crate::audio::FrameGeometry::ALIGNMENT.frame_time(j)
}

fn dot(a: &[f32], b: &[f32]) -> f64 {
    a.iter().zip(b).map(|(&x, &y)| x as f64 * y as f64).sum()
}

fn sq_norm(a: &[f32]) -> f64 {
    dot(a, a)
}

fn cosine_from_parts(dot: f64, a_sq: f64, b_sq: f64) -> f64 {
    const NORM_FLOOR: f64 = 1e-12;
    if a_sq.sqrt() < NORM_FLOOR || b_sq.sqrt() < NORM_FLOOR {
        return 1.0;
    }
    (1.0 - dot / (a_sq * b_sq).sqrt()).clamp(0.0, 2.0)
}

/// `1 - cos(a, b)`, in `[0, 2]`; 1 when either vector is (near) zero.
pub fn cosine_distance(a: &[f32], b: &[f32]) -> f64 {
    cosine_from_parts(dot(a, b), sq_norm(a), sq_norm(b))
}

/// One tracker output.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AlignmentEstimate {
    pub target_time: f64,
    pub ref_time: f64,
    pub ref_frame: usize,
    /// Normalized accumulated cost of the winning cell.
    pub window_cost_min: f64,
}

/// Moving-window DTW state for one tracking run.
#[derive(Debug, Clone, PartialEq)]
pub struct TrackerState {
    window_radius: usize,
    expected_pos: usize,
    last_emitted: usize,
    frame_clock: usize,
    // first step starts from this frame only, instead of anywhere in the window
    anchor: Option<usize>,
    lo: usize,
    acc: Vec<f64>,
    // reference frame each cell's best path started from
    origin: Vec<usize>,
    next_acc: Vec<f64>,
    next_origin: Vec<usize>,
}

pub fn init_tracker(reference: &ReferenceIndex, start_pos: usize) -> Result<TrackerState, OltwError> {
    init_tracker_with_radius(reference, start_pos, DEFAULT_WINDOW_RADIUS)
}

pub fn init_tracker_with_radius(
    reference: &ReferenceIndex,
    start_pos: usize,
    window_radius: usize,
) -> Result<TrackerState, OltwError> {
    if reference.is_empty() {
        return Err(OltwError::ReferenceEmpty);
    }
    if start_pos >= reference.len() {
        return Err(OltwError::OutOfRange { start: start_pos, len: reference.len() });
    }
    let mut state = TrackerState {
        window_radius,
        expected_pos: start_pos,
        last_emitted: start_pos,
        frame_clock: 0,
        anchor: None,
        lo: 0,
        acc: Vec::new(),
        origin: Vec::new(),
        next_acc: Vec::new(),
        next_origin: Vec::new(),
    };
    let (lo, _) = state.window_bounds(reference.len());
    state.lo = lo;
    Ok(state)
}

/// Like [`init_tracker_with_radius`], but every path starts at `start_pos`
/// on the first target frame.
pub fn init_tracker_anchored(
    reference: &ReferenceIndex,
    start_pos: usize,
    window_radius: usize,
) -> Result<TrackerState, OltwError> {
    let mut state = init_tracker_with_radius(reference, start_pos, window_radius)?;
    state.anchor = Some(start_pos);
    Ok(state)
}

impl TrackerState {
    fn window_bounds(&self, len: usize) -> (usize, usize) {
        let lo = self.expected_pos.saturating_sub(self.window_radius);
        let hi = (self.expected_pos + self.window_radius).min(len - 1);
        (lo, hi)
    }

    /// Inclusive reference-frame range searched by the next step.
    pub fn window(&self, reference: &ReferenceIndex) -> (usize, usize) {
        self.window_bounds(reference.len())
    }

    pub fn expected_pos(&self) -> usize {
        self.expected_pos
    }

    pub fn last_emitted(&self) -> usize {
        self.last_emitted
    }

    /// Target frames consumed since initialization.
    pub fn frame_clock(&self) -> usize {
        self.frame_clock
    }

    pub fn window_radius(&self) -> usize {
        self.window_radius
    }

    /// Unnormalized accumulated cost of reference frame `j` after the last
    /// step, if `j` was inside that step's window.
    pub fn acc_at(&self, j: usize) -> Option<f64> {
        j.checked_sub(self.lo).and_then(|k| self.acc.get(k)).copied()
    }

    fn old(&self, j: usize) -> (f64, usize) {
        match j.checked_sub(self.lo).filter(|&k| k < self.acc.len()) {
            Some(k) => (self.acc[k], self.origin[k]),
            None => (f64::INFINITY, 0),
        }
    }

    pub fn step(
        &mut self,
        reference: &ReferenceIndex,
        feature: &[f32],
        target_time: f64,
    ) -> Result<AlignmentEstimate, OltwError> {
        if feature.len() != reference.dim() {
            return Err(OltwError::DimensionMismatch { expected: reference.dim(), got: feature.len() });
        }
        let (lo, hi) = self.window_bounds(reference.len());
        let x_sq = sq_norm(feature);
        let first = self.frame_clock == 0;

        let mut next_acc = std::mem::take(&mut self.next_acc);
        let mut next_origin = std::mem::take(&mut self.next_origin);
        next_acc.clear();
        next_origin.clear();

        let mut best = (f64::INFINITY, usize::MAX);
        for j in lo..=hi {
            let c = reference.cost(j, feature, x_sq);
            let (pred, origin) = if first && self.anchor.is_none() {
                (0.0, j)
            } else {
                let mut pick = if first {
                    if self.anchor == Some(j) { (0.0, j) } else { (f64::INFINITY, 0) }
                } else {
                    let diag = if j > 0 { self.old(j - 1) } else { (f64::INFINITY, 0) };
                    let ins = self.old(j);
                    if ins.0 < diag.0 { ins } else { diag }
                };
                if j > lo {
                    let k = j - lo - 1;
                    if next_acc[k] < pick.0 {
                        pick = (next_acc[k], next_origin[k]);
                    }
                }
                pick
            };
            let value = c + pred;
            next_acc.push(value);
            next_origin.push(origin);
            if value.is_finite() {
                let norm = value / (self.frame_clock + (j - origin) + 1) as f64;
                if norm < best.0 {
                    best = (norm, j);
                }
            }
        }

        self.next_acc = std::mem::replace(&mut self.acc, next_acc);
        self.next_origin = std::mem::replace(&mut self.origin, next_origin);
        self.lo = lo;
        self.frame_clock += 1;

        let (cost_min, argmin) = if best.1 == usize::MAX { (f64::INFINITY, self.last_emitted) } else { best };
        let emitted = argmin.max(self.last_emitted);
        self.last_emitted = emitted;
        self.expected_pos = emitted;
        Ok(AlignmentEstimate {
            target_time,
            ref_time: ref_frame_time(emitted),
            ref_frame: emitted,
            window_cost_min: cost_min,
        })
    }
}

/// Optimal DTW path and its total cost.
#[derive(Debug, Clone, PartialEq)]
pub struct DtwPath {
    /// `(target frame, reference frame)` cells from `(0, 0)` to the last pair.
    pub cells: Vec<(usize, usize)>,
    pub cost: f64,
}

impl DtwPath {
    /// Inclusive reference-frame range the path occupies at target frame `i`.
    pub fn ref_span(&self, i: usize) -> Option<(usize, usize)> {
        let start = self.cells.partition_point(|c| c.0 < i);
        let end = self.cells.partition_point(|c| c.0 <= i);
        (start < end).then(|| (self.cells[start].1, self.cells[end - 1].1))
    }
}

/// Full DTW between two feature sequences with unit-weight steps
/// `(1,0)`, `(0,1)`, `(1,1)` and cosine cost.
pub fn offline_dtw(reference: &[Vec<f32>], target: &[Vec<f32>]) -> Result<DtwPath, OltwError> {
    offline_dtw_capped(reference, target, OFFLINE_CELL_CAP)
}

pub fn offline_dtw_capped(reference: &[Vec<f32>], target: &[Vec<f32>], cap: usize) -> Result<DtwPath, OltwError> {
    let (r, t) = (reference.len(), target.len());
    if r == 0 || t == 0 {
        return Err(OltwError::ReferenceEmpty);
    }
    let cells = r.saturating_mul(t);
    if cells > cap {
        return Err(OltwError::InputTooLarge { cells, cap });
    }
    let dim = reference[0].len();
    if let Some(bad) = reference.iter().chain(target).find(|v| v.len() != dim) {
        return Err(OltwError::DimensionMismatch { expected: dim, got: bad.len() });
    }
    const DIAG: u8 = 0;
    const UP: u8 = 1; // target advanced, reference held
    const LEFT: u8 = 2;
    let ref_sq: Vec<f64> = reference.iter().map(|v| sq_norm(v)).collect();
    let mut dirs = vec![0u8; cells];
    let mut prev = vec![f64::INFINITY; r];
    let mut cur = vec![0.0; r];
    for (i, x) in target.iter().enumerate() {
        let x_sq = sq_norm(x);
        for j in 0..r {
            let c = cosine_from_parts(dot(&reference[j], x), ref_sq[j], x_sq);
            let (pred, dir) = if i == 0 && j == 0 {
                (0.0, DIAG)
            } else {
                let mut pick = (f64::INFINITY, DIAG);
                if i > 0 && j > 0 {
                    pick = (prev[j - 1], DIAG);
                }
                if i > 0 && prev[j] < pick.0 {
                    pick = (prev[j], UP);
                }
                if j > 0 && cur[j - 1] < pick.0 {
                    pick = (cur[j - 1], LEFT);
                }
                pick
            };
            cur[j] = c + pred;
            dirs[i * r + j] = dir;
        }
        std::mem::swap(&mut prev, &mut cur);
    }
    let cost = prev[r - 1];
    let (mut i, mut j) = (t - 1, r - 1);
    let mut path = vec![(i, j)];
    while (i, j) != (0, 0) {
        match dirs[i * r + j] {
            DIAG => {
                i -= 1;
                j -= 1;
            }
            UP => i -= 1,
            _ => j -= 1,
        }
        path.push((i, j));
    }
    path.reverse();
    Ok(DtwPath { cells: path, cost })
}
