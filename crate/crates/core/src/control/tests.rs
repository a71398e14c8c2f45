use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use super::*;
use crate::eval::{smooth_feature_pair, PairSpec};
use crate::oltw::{init_tracker, SectionMark};

const BOUNDARY: f64 = 10.0;

fn reference(voice_start: bool) -> ReferenceIndex {
    let feats = smooth_feature_pair(PairSpec { ref_frames: 2500, dim: 20, ..PairSpec::default() }, 3).reference;
    let sections = vec![
        SectionMark { id: "aria".into(), start_bar: 0, time_s: 0.0, voice_start: false },
        SectionMark { id: "recit".into(), start_bar: 10, time_s: BOUNDARY, voice_start },
    ];
    ReferenceIndex::new(feats, Vec::new(), sections).unwrap()
}

/// Reference frames with `gap_s` seconds of unrelated frames spliced in at
/// reference time `at`.
fn target_with_gap(r: &ReferenceIndex, at: f64, gap_s: f64) -> Vec<AlignmentFeature> {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let cut = (at * 100.0).round() as usize;
    let gap = (gap_s * 100.0).round() as usize;
    let mut rows: Vec<Vec<f32>> = r.frames().take(cut).map(<[f32]>::to_vec).collect();
    rows.extend((0..gap).map(|_| (0..r.dim()).map(|_| rng.sample::<f32, _>(StandardNormal)).collect()));
    rows.extend(r.frames().skip(cut).map(<[f32]>::to_vec));
    rows.into_iter()
        .enumerate()
        .map(|(n, values)| AlignmentFeature { time: FrameGeometry::ALIGNMENT.frame_time(n), values })
        .collect()
}

/// Detector probabilities for a target of `frames` alignment frames,
/// chosen by detector frame start time.
fn probs(frames: usize, f: impl Fn(f64) -> DetectorProbs) -> Vec<DetectorProbs> {
    (0..frames / 2).map(|k| f(FrameGeometry::DETECTOR.frame_time(k))).collect()
}

fn music() -> DetectorProbs {
    DetectorProbs { applause: 0.05, music: 0.9, speech: 0.05 }
}

fn applause() -> DetectorProbs {
    DetectorProbs { applause: 0.9, music: 0.1, speech: 0.05 }
}

fn quiet() -> DetectorProbs {
    DetectorProbs { applause: 0.05, music: 0.1, speech: 0.05 }
}

fn speech() -> DetectorProbs {
    DetectorProbs { applause: 0.05, music: 0.2, speech: 0.9 }
}

fn halted_rows(trace: &[TrackedPosition], mode: Mode) -> Vec<&TrackedPosition> {
    trace.iter().filter(|p| p.mode == mode).collect()
}

fn final_error(trace: &[TrackedPosition], gap_s: f64) -> f64 {
    let last = trace.last().unwrap();
    last.ref_time - (last.target_time - gap_s)
}

#[test]
fn mode_strings_round_trip() {
    for m in [Mode::Tracking, Mode::HaltApplause, Mode::HaltPause, Mode::AwaitVoice] {
        assert_eq!(m.to_string().parse::<Mode>().unwrap(), m);
    }
    assert_eq!("ASI".parse::<Variant>().unwrap(), Variant::Asi);
    assert!("x".parse::<Variant>().is_err());
}

#[test]
fn merge_order_uses_frame_end_times() {
    // alignment n ends at 10n + 20 ms, detector k at 20k + 100 ms
    assert_eq!(detector_frames_ready(0), 0);
    assert_eq!(detector_frames_ready(7), 0);
    assert_eq!(detector_frames_ready(8), 1);
    assert_eq!(detector_frames_ready(9), 1);
    assert_eq!(detector_frames_ready(10), 2);
    for n in 0..500 {
        let ready = detector_frames_ready(n);
        let end = frame_end_ms(FrameGeometry::ALIGNMENT, n);
        if ready > 0 {
            assert!(frame_end_ms(FrameGeometry::DETECTOR, ready - 1) <= end);
        }
        assert!(frame_end_ms(FrameGeometry::DETECTOR, ready) > end);
    }
}

#[test]
fn silent_gates_match_bare_oltw() {
    let r = reference(true);
    let target = target_with_gap(&r, BOUNDARY, 0.0);
    let p = probs(target.len(), |_| DetectorProbs { speech: 0.9, ..music() });
    let base = run_variant(Variant::Base, &r, &target, &p, ControlParams::default()).unwrap();
    let mut bare = init_tracker(&r, 0).unwrap();
    for (row, f) in base.iter().zip(&target) {
        assert_eq!(row.ref_time, bare.step(&r, &f.values, f.time).unwrap().ref_time);
        assert_eq!(row.mode, Mode::Tracking);
    }
    for v in [Variant::A, Variant::As, Variant::Asi] {
        assert_eq!(run_variant(v, &r, &target, &p, ControlParams::default()).unwrap(), base, "{v}");
    }
}

#[test]
fn applause_at_a_boundary_is_pinned() {
    let r = reference(false);
    let target = target_with_gap(&r, BOUNDARY, 6.0);
    let p = probs(target.len(), |t| if (BOUNDARY..BOUNDARY + 6.0).contains(&t) { applause() } else { music() });
    let trace = run_variant(Variant::A, &r, &target, &p, ControlParams::default()).unwrap();
    let halted = halted_rows(&trace, Mode::HaltApplause);
    assert!(halted.len() > 400, "{} halted rows", halted.len());
    assert!(halted.iter().all(|h| h.ref_time == BOUNDARY));
    assert!(halted.first().unwrap().target_time < BOUNDARY + 1.0);
    assert!(halted.last().unwrap().target_time < BOUNDARY + 6.5);
    assert!(final_error(&trace, 6.0).abs() < 0.05, "{}", final_error(&trace, 6.0));

    let base = run_variant(Variant::Base, &r, &target, &p, ControlParams::default()).unwrap();
    assert!(base.iter().all(|h| h.mode == Mode::Tracking));
}

#[test]
fn short_applause_does_not_engage() {
    let r = reference(false);
    let target = target_with_gap(&r, BOUNDARY, 0.3);
    // clapping over music
    let p = probs(target.len(), |t| if (BOUNDARY..BOUNDARY + 0.3).contains(&t) { DetectorProbs { applause: 0.9, ..music() } } else { music() });
    let trace = run_variant(Variant::Asi, &r, &target, &p, ControlParams::default()).unwrap();
    assert!(trace.iter().all(|h| h.mode == Mode::Tracking));
}

#[test]
fn applause_away_from_boundaries_is_ignored() {
    let r = reference(false);
    let target = target_with_gap(&r, 4.0, 0.0);
    let p = probs(target.len(), |t| if (4.0..6.0).contains(&t) { applause() } else { music() });
    let trace = run_variant(Variant::A, &r, &target, &p, ControlParams::default()).unwrap();
    assert!(trace.iter().all(|h| h.mode == Mode::Tracking));
}

#[test]
fn pause_gate_needs_both_music_and_speech_absent() {
    let r = reference(false);
    let target = target_with_gap(&r, BOUNDARY, 5.0);
    let gap = BOUNDARY..BOUNDARY + 5.0;
    let p = probs(target.len(), |t| if gap.contains(&t) { quiet() } else { music() });

    let a = run_variant(Variant::A, &r, &target, &p, ControlParams::default()).unwrap();
    assert!(a.iter().all(|h| h.mode == Mode::Tracking));
    let as_ = run_variant(Variant::As, &r, &target, &p, ControlParams::default()).unwrap();
    let halted = halted_rows(&as_, Mode::HaltPause);
    assert!(halted.len() > 400);
    assert!(halted.iter().all(|h| h.ref_time == BOUNDARY));
    assert!(final_error(&as_, 5.0).abs() < 0.05);

    let talking = probs(target.len(), |t| if gap.contains(&t) { speech() } else { music() });
    let trace = run_variant(Variant::As, &r, &target, &talking, ControlParams::default()).unwrap();
    assert!(trace.iter().all(|h| h.mode == Mode::Tracking));
}

#[test]
fn applause_outranks_pause() {
    let r = reference(false);
    let target = target_with_gap(&r, BOUNDARY, 4.0);
    let p = probs(target.len(), |t| if (BOUNDARY..BOUNDARY + 4.0).contains(&t) { applause() } else { music() });
    let trace = run_variant(Variant::As, &r, &target, &p, ControlParams::default()).unwrap();
    let first = trace.iter().find(|h| h.mode.is_halted()).unwrap();
    assert_eq!(first.mode, Mode::HaltApplause);
}

#[test]
fn interlude_waits_for_voice() {
    let r = reference(true);
    let target = target_with_gap(&r, BOUNDARY, 5.0);
    let voice_from = BOUNDARY + 5.0;
    let p = probs(target.len(), |t| {
        if t < BOUNDARY + 0.2 {
            music()
        } else if t < voice_from {
            DetectorProbs { speech: 0.05, ..music() }
        } else {
            speech()
        }
    });
    let as_ = run_variant(Variant::As, &r, &target, &p, ControlParams::default()).unwrap();
    assert!(as_.iter().all(|h| h.mode == Mode::Tracking));

    let asi = run_variant(Variant::Asi, &r, &target, &p, ControlParams::default()).unwrap();
    let halted = halted_rows(&asi, Mode::AwaitVoice);
    assert!(halted.iter().all(|h| h.ref_time == BOUNDARY));
    let (first, last) = (halted.first().unwrap(), halted.last().unwrap());
    assert!(first.target_time <= BOUNDARY + 1.0);
    // released once speech has been above threshold for 400 ms
    assert!((voice_from + 0.3..voice_from + 0.5).contains(&last.target_time), "{}", last.target_time);
    assert!(final_error(&asi, 5.0).abs() < 0.05);
}

#[test]
fn interlude_gate_ignores_sections_without_voice() {
    let r = reference(false);
    let target = target_with_gap(&r, BOUNDARY, 3.0);
    let p = probs(target.len(), |_| music());
    let trace = run_variant(Variant::Asi, &r, &target, &p, ControlParams::default()).unwrap();
    assert!(trace.iter().all(|h| h.mode == Mode::Tracking));
}

#[test]
fn voice_already_present_passes_through() {
    let r = reference(true);
    let target = target_with_gap(&r, BOUNDARY, 0.0);
    let p = probs(target.len(), |t| if t > BOUNDARY - 2.0 { speech() } else { music() });
    let trace = run_variant(Variant::Asi, &r, &target, &p, ControlParams::default()).unwrap();
    assert!(trace.iter().all(|h| h.mode == Mode::Tracking));
}

#[test]
fn await_voice_times_out() {
    let r = reference(true);
    let target = target_with_gap(&r, BOUNDARY, 0.0);
    let p = probs(target.len(), |_| music());
    let params = ControlParams { voice_timeout_s: 2.0, ..ControlParams::default() };
    let trace = run_variant(Variant::Asi, &r, &target, &p, params).unwrap();
    let halted = halted_rows(&trace, Mode::AwaitVoice);
    let span = halted.last().unwrap().target_time - halted.first().unwrap().target_time;
    assert!((span - 2.0).abs() < 0.015, "{span}");
    assert_eq!(trace.last().unwrap().mode, Mode::Tracking);
}

#[test]
fn clamp_frame_is_first_frame_at_or_after() {
    let r = reference(false);
    for t in [0.0, 0.005, 0.01, 0.03, 9.999, 10.0, 10.001, 0.07] {
        let j = clamp_frame(&r, t);
        assert!(ref_frame_time(j) >= t);
        assert!(j == 0 || ref_frame_time(j - 1) < t);
    }
    assert_eq!(clamp_frame(&r, 1e6), r.len() - 1);
}

#[test]
fn integrated_step_requires_models_for_detector_frames() {
    let r = reference(false);
    let mut it = IntegratedTracker::new(&r, GateConfig::ALL, ControlParams::default()).unwrap();
    let frame = AlignmentFeature { time: 0.0, values: r.frame(0).to_vec() };
    let pair = FramePair {
        alignment: frame.clone(),
        detectors: Some(DetectorFrameSet {
            time: 0.0,
            applause: crate::features::DetectorFeature { time: 0.0, kind: DetectorKind::Applause, values: vec![0.0; 25] },
            music: crate::features::DetectorFeature { time: 0.0, kind: DetectorKind::Music, values: vec![0.0; 26] },
            speech: crate::features::DetectorFeature { time: 0.0, kind: DetectorKind::Speech, values: vec![0.0; 46] },
        }),
    };
    assert!(matches!(it.integrated_step(&pair), Err(ControlError::NoDetectors)));
    let models = DetectorModels::new(
        LstmModel::zeros(crate::detectors::ModelConfig::for_kind(DetectorKind::Applause)).unwrap(),
        LstmModel::zeros(crate::detectors::ModelConfig::for_kind(DetectorKind::Music)).unwrap(),
        LstmModel::zeros(crate::detectors::ModelConfig::for_kind(DetectorKind::Speech)).unwrap(),
    )
    .unwrap();
    let mut it = it.with_detectors(models);
    let out = it.integrated_step(&pair).unwrap();
    assert_eq!(out.probs, DetectorProbs { applause: 0.5, music: 0.5, speech: 0.5 });
    assert_eq!(out.ref_time, 0.0);
}

#[test]
fn detector_models_check_kinds() {
    let z = |k| LstmModel::zeros(crate::detectors::ModelConfig::for_kind(k)).unwrap();
    let err = DetectorModels::new(z(DetectorKind::Music), z(DetectorKind::Music), z(DetectorKind::Speech)).unwrap_err();
    assert!(matches!(err, DetectorError::KindMismatch { expected: DetectorKind::Applause, .. }));
}

#[test]
fn trace_csv_round_trip() {
    let r = reference(false);
    let target = target_with_gap(&r, BOUNDARY, 1.0);
    let p = probs(target.len(), |t| if (BOUNDARY..BOUNDARY + 1.0).contains(&t) { applause() } else { music() });
    let trace = run_variant(Variant::A, &r, &target, &p, ControlParams::default()).unwrap();
    let mut buf = Vec::new();
    write_trace(&mut buf, &trace, 1).unwrap();
    let text = String::from_utf8(buf.clone()).unwrap();
    assert!(text.starts_with("target_time_s,ref_time_s,mode,applause_p,music_p,speech_p\n"));
    assert_eq!(read_trace(&buf[..]).unwrap(), trace);

    let mut every = Vec::new();
    write_trace(&mut every, &trace, 10).unwrap();
    assert_eq!(read_trace(&every[..]).unwrap().len(), trace.len().div_ceil(10));

    let err = read_trace("target_time_s,mode\n0.0,TRACKING\n".as_bytes()).unwrap_err();
    assert!(err.to_string().contains("ref_time_s"), "{err}");
    let err = read_trace("target_time_s,ref_time_s\n0.0,0.0\n0.01,x\n".as_bytes()).unwrap_err();
    assert!(err.to_string().contains("line 3"), "{err}");
}

/// Probability stream built from random segments of the four states.
fn scripted_probs(frames: usize, segments: &[(u8, u16)]) -> Vec<DetectorProbs> {
    let mut out = Vec::new();
    for &(state, len) in segments.iter().cycle() {
        let p = [music(), applause(), quiet(), speech()][state as usize % 4];
        out.extend(std::iter::repeat(p).take(len as usize));
        if out.len() >= frames / 2 {
            break;
        }
    }
    out.truncate(frames / 2);
    out
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn gate_invariants_hold_on_random_event_streams(
        segments in prop::collection::vec((0u8..4, 5u16..300), 1..12),
        gap in 0.0f64..4.0,
        voice in any::<bool>(),
    ) {
        let r = reference(voice);
        let target = target_with_gap(&r, BOUNDARY, gap);
        let p = scripted_probs(target.len(), &segments);
        let params = ControlParams { voice_timeout_s: 3.0, ..ControlParams::default() };
        let trace = run_variant(Variant::Asi, &r, &target, &p, params).unwrap();

        // independent debounce of the same stream
        let mut deb = DetectorKind::ALL.map(|_| Debouncer::new(params.debounce));
        let mut active = vec![[false; 3]; trace.len()];
        let mut next = 0;
        for (n, row) in active.iter_mut().enumerate() {
            while next < detector_frames_ready(n).min(p.len()) {
                for (i, kind) in DetectorKind::ALL.into_iter().enumerate() {
                    deb[i].push(p[next].get(kind));
                }
                next += 1;
            }
            *row = [deb[0].is_active(), deb[1].is_active(), deb[2].is_active()];
        }

        for (n, row) in trace.iter().enumerate() {
            if row.mode.is_halted() {
                // pinned exactly to the boundary
                prop_assert_eq!(row.ref_time, BOUNDARY);
            }
            if n == 0 {
                continue;
            }
            let prev = trace[n - 1];
            let [app, mus, sp] = active[n];
            // a halt that survives a step never has its release signal
            if prev.mode == row.mode {
                match row.mode {
                    Mode::HaltApplause => prop_assert!(app),
                    Mode::HaltPause => prop_assert!(!mus && !sp),
                    Mode::AwaitVoice => prop_assert!(!sp && row.target_time - 3.0 < prev.target_time),
                    Mode::Tracking => {}
                }
            }
            if row.mode.is_halted() && !prev.mode.is_halted() {
                if row.mode != Mode::AwaitVoice {
                    // engagement is local, so the pull-back is at most the proximity window
                    prop_assert!(prev.ref_time - row.ref_time <= 1.0 + 1e-9);
                }
            } else {
                prop_assert!(row.ref_time >= prev.ref_time, "row {} went back", n);
            }
        }
    }

    #[test]
    fn disabled_gates_that_never_fire_change_nothing(
        segments in prop::collection::vec((0u8..4, 5u16..300), 1..8),
    ) {
        let r = reference(true);
        let target = target_with_gap(&r, BOUNDARY, 1.0);
        let p = scripted_probs(target.len(), &segments);
        let traces: Vec<_> = Variant::ALL
            .iter()
            .map(|&v| run_variant(v, &r, &target, &p, ControlParams::default()).unwrap())
            .collect();
        for k in 1..4 {
            // a variant whose gates never fired reproduces the smaller one
            if traces[k].iter().all(|h| !h.mode.is_halted()) {
                prop_assert_eq!(&traces[k], &traces[k - 1]);
            }
        }
    }
}
