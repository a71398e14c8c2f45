//! The tracking pipeline: an audio feeder, a feature stage and the control
//! stage, joined by bounded in-order queues.

use std::collections::VecDeque;
use std::sync::mpsc::{sync_channel, Receiver, SyncSender};
use std::thread;
use std::time::{Duration, Instant};

use anyhow::Context;
use opera_follow::audio::{AudioStream, FrameGeometry, Framer};
use opera_follow::control::{
    detector_frames_ready, DetectorModels, FramePair, GateConfig, IntegratedTracker, TrackedPosition, ControlParams,
};
use opera_follow::features::{AlignmentExtractor, DetectorExtractor, DetectorFrameSet};
use opera_follow::oltw::ReferenceIndex;

pub struct PipelineConfig {
    pub gates: GateConfig,
    pub params: ControlParams,
    pub models: Option<DetectorModels>,
    pub realtime: bool,
    pub queue_len: usize,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LatencySummary {
    pub p50_ms: f64,
    pub p95_ms: f64,
    pub p99_ms: f64,
    pub max_ms: f64,
}

impl LatencySummary {
    fn from_samples(mut v: Vec<Duration>) -> Option<Self> {
        if v.is_empty() {
            return None;
        }
        v.sort();
        let ms = |d: Duration| d.as_secs_f64() * 1000.0;
        let q = |p: f64| ms(v[((v.len() - 1) as f64 * p).round() as usize]);
        Some(Self { p50_ms: q(0.5), p95_ms: q(0.95), p99_ms: q(0.99), max_ms: ms(v[v.len() - 1]) })
    }
}

pub struct PipelineOutput {
    pub trace: Vec<TrackedPosition>,
    /// Time from a frame's last audio arriving to its tracked position.
    pub latency: Option<LatencySummary>,
}

type Stamped = (FramePair, Instant);

/// Tracks `target` against `reference`. Pacing changes only timing, so
/// realtime and batch runs produce the same trace.
pub fn track(reference: &ReferenceIndex, target: &AudioStream, cfg: PipelineConfig) -> anyhow::Result<PipelineOutput> {
    let with_detectors = cfg.models.is_some();
    let mut tracker = IntegratedTracker::new(reference, cfg.gates, cfg.params)?;
    if let Some(m) = cfg.models {
        tracker = tracker.with_detectors(m);
    }
    let (audio_tx, audio_rx) = sync_channel::<(Vec<f32>, Instant)>(cfg.queue_len);
    let (frame_tx, frame_rx) = sync_channel::<anyhow::Result<Stamped>>(cfg.queue_len);

    thread::scope(|s| {
        s.spawn(|| feed(target, audio_tx, cfg.realtime));
        let sr = target.sample_rate();
        s.spawn(move || {
            if let Err(e) = features(sr, with_detectors, audio_rx, &frame_tx) {
                let _ = frame_tx.send(Err(e));
            }
        });
        control(&mut tracker, frame_rx)
    })
}

fn feed(target: &AudioStream, tx: SyncSender<(Vec<f32>, Instant)>, realtime: bool) {
    let sr = target.sample_rate() as f64;
    let chunk = FrameGeometry::ALIGNMENT.hop_samples(target.sample_rate());
    let start = Instant::now();
    let mut sent = 0usize;
    for c in target.samples().chunks(chunk) {
        sent += c.len();
        if realtime {
            // the chunk is "recorded" once its last sample has been played
            let due = start + Duration::from_secs_f64(sent as f64 / sr);
            if let Some(wait) = due.checked_duration_since(Instant::now()) {
                thread::sleep(wait);
            }
        }
        if tx.send((c.to_vec(), Instant::now())).is_err() {
            return;
        }
    }
}

fn features(
    sample_rate: u32,
    with_detectors: bool,
    rx: Receiver<(Vec<f32>, Instant)>,
    tx: &SyncSender<anyhow::Result<Stamped>>,
) -> anyhow::Result<()> {
    let mut align = Framer::new(FrameGeometry::ALIGNMENT, sample_rate)?;
    let mut det = Framer::new(FrameGeometry::DETECTOR, sample_rate)?;
    let align_x = AlignmentExtractor::new(sample_rate);
    let mut det_x = DetectorExtractor::new(FrameGeometry::DETECTOR.window_samples(sample_rate), sample_rate)?;
    let mut pending: VecDeque<DetectorFrameSet> = VecDeque::new();
    let mut consumed = 0usize;
    let mut last = Instant::now();

    let mut emit = |frame: opera_follow::audio::FrameBuffer, pending: &mut VecDeque<DetectorFrameSet>, at: Instant| {
        let alignment = align_x.compute(&frame).context("alignment features")?;
        // detector frames go with the first alignment frame ending no earlier
        let detectors = if with_detectors && detector_frames_ready(frame.index) > consumed {
            pending.pop_front().inspect(|_| consumed += 1)
        } else {
            None
        };
        Ok::<bool, anyhow::Error>(tx.send(Ok((FramePair { alignment, detectors }, at))).is_ok())
    };

    for (chunk, at) in rx {
        last = at;
        if with_detectors {
            for f in det.push(&chunk) {
                pending.push_back(det_x.push(&f).context("detector features")?);
            }
        }
        for f in align.push(&chunk) {
            if !emit(f, &mut pending, at)? {
                return Ok(());
            }
        }
    }
    if with_detectors {
        for f in det.finish() {
            pending.push_back(det_x.push(&f).context("detector features")?);
        }
    }
    for f in align.finish() {
        if !emit(f, &mut pending, last)? {
            break;
        }
    }
    Ok(())
}

fn control(tracker: &mut IntegratedTracker<'_>, rx: Receiver<anyhow::Result<Stamped>>) -> anyhow::Result<PipelineOutput> {
    let mut trace = Vec::new();
    let mut latencies = Vec::new();
    for item in rx {
        let (pair, arrived) = item?;
        trace.push(tracker.integrated_step(&pair)?);
        latencies.push(arrived.elapsed());
    }
    Ok(PipelineOutput { trace, latency: LatencySummary::from_samples(latencies) })
}
