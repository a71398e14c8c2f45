use proptest::prelude::*;

use super::*;
use crate::features::DetectorKind;

fn bars(times: &[f64]) -> Vec<BarAnnotation> {
    times.iter().enumerate().map(|(bar_index, &time_s)| BarAnnotation { bar_index, time_s }).collect()
}

/// A trace sampled every 10 ms for `secs` seconds with `f(target) = ref`.
fn trace(secs: f64, f: impl Fn(f64) -> f64) -> Vec<TracePoint> {
    let n = (secs * 100.0).round() as usize;
    (0..=n).map(|k| k as f64 / 100.0).map(|t| TracePoint { target_time: t, ref_time: f(t) }).collect()
}

#[test]
fn hand_computed_summary() {
    let errors: Vec<BarError> =
        [1.5, -0.5, 3.0].iter().enumerate().map(|(bar_index, &error_s)| BarError { bar_index, error_s, reached: true }).collect();
    let r = summarize(&errors).unwrap();
    assert!((r.mean_s - 4.0 / 3.0).abs() < 1e-12);
    let var = ((1.5f64 - 4.0 / 3.0).powi(2) + (-0.5f64 - 4.0 / 3.0).powi(2) + (3.0f64 - 4.0 / 3.0).powi(2)) / 3.0;
    assert!((r.std_s - var.sqrt()).abs() < 1e-12);
    assert!((r.frac_le_1s - 1.0 / 3.0).abs() < 1e-12);
    assert!((r.frac_le_2s - 2.0 / 3.0).abs() < 1e-12);
    assert_eq!(r.frac_le_5s, 1.0);
    assert_eq!(r.err_max_s, 3.0);
    assert!(matches!(summarize(&[]), Err(EvalError::NoBars)));
}

#[test]
fn identity_trace_has_zero_error() {
    let ref_bars = bars(&[0.0, 1.23, 2.5, 4.017, 7.77]);
    let errors = align_errors(&trace(10.0, |t| t), &ref_bars, &ref_bars).unwrap();
    assert!(errors.iter().all(|e| e.error_s == 0.0 && e.reached), "{errors:?}");
    let r = summarize(&errors).unwrap();
    assert_eq!((r.mean_s, r.std_s, r.err_max_s, r.frac_le_1s), (0.0, 0.0, 0.0, 1.0));
}

#[test]
fn tracker_ahead_gives_positive_errors() {
    let ref_bars = bars(&[1.0, 3.0, 5.0, 7.0]);
    let errors = align_errors(&trace(12.0, |t| t + 2.0), &ref_bars, &ref_bars).unwrap();
    for e in &errors[1..] {
        assert!((e.error_s - 2.0).abs() < 1e-9, "{e:?}");
    }
    // the first bar is already behind the trace's first row
    assert_eq!(errors[0].error_s, 1.0);
    let behind = align_errors(&trace(12.0, |t| t - 1.0), &ref_bars, &ref_bars).unwrap();
    assert!(behind.iter().all(|e| (e.error_s + 1.0).abs() < 1e-9));
}

#[test]
fn jumps_are_not_interpolated() {
    // the trace sits at ref 2 until target 5, then jumps to 8
    let ref_bars = bars(&[1.0, 4.0, 6.0]);
    let target_bars = bars(&[1.0, 6.5, 8.0]);
    let t = trace(10.0, |t| if t < 5.0 { t.min(2.0) } else { t + 3.0 });
    let e = align_errors(&t, &target_bars, &ref_bars).unwrap();
    assert!(e[0].error_s.abs() < 1e-9);
    assert!((e[1].error_s - 1.5).abs() < 1e-9, "{:?}", e[1]);
    assert!((e[2].error_s - 3.0).abs() < 1e-9, "{:?}", e[2]);
}

#[test]
fn unreached_bars_are_flagged() {
    let ref_bars = bars(&[1.0, 5.0, 20.0]);
    let e = align_errors(&trace(10.0, |t| t), &ref_bars, &ref_bars).unwrap();
    assert!(e[1].reached && !e[2].reached);
    assert_eq!(e[2].error_s, 10.0);
    assert!(matches!(align_errors(&[], &ref_bars, &ref_bars), Err(EvalError::EmptyTrace)));
    assert!(matches!(align_errors(&trace(1.0, |t| t), &ref_bars[..2], &ref_bars), Err(EvalError::MismatchedBars { target: 2, reference: 3 })));
}

#[test]
fn error_curve_and_report_round_trip() {
    let ref_bars = bars(&[0.5, 1.5, 2.5]);
    let errors = align_errors(&trace(4.0, |t| t * 0.9), &ref_bars, &ref_bars).unwrap();
    let mut buf = Vec::new();
    error_curve_csv(&errors, &mut buf).unwrap();
    assert!(String::from_utf8_lossy(&buf).starts_with("bar_index,error_s\n"));
    let curve = read_error_curve(&buf[..]).unwrap();
    assert_eq!(curve, errors.iter().map(|e| (e.bar_index, e.error_s)).collect::<Vec<_>>());

    let mut empty = Vec::new();
    error_curve_csv(&[], &mut empty).unwrap();
    assert_eq!(empty, b"bar_index,error_s\n");

    let report = summarize(&errors).unwrap();
    let mut json = Vec::new();
    write_report(&mut json, &report).unwrap();
    assert_eq!(read_report(&json[..]).unwrap(), report);
}

#[test]
fn stored_report_parses() {
    let text = include_str!("../../tests/fixtures/baseline_act1_report.json");
    let r = read_report(text.as_bytes()).unwrap();
    assert_eq!((r.mean_s, r.std_s, r.frac_le_1s, r.frac_le_2s, r.frac_le_5s, r.err_max_s), (9.6, 19.1, 0.74, 0.76, 0.78, 72.7));
    assert!(r.per_bar_errors.is_empty());
}

#[test]
fn annotation_errors_name_the_line() {
    let ok = "bar_index,time_s\n0,0.0\n1,1.5\n";
    assert_eq!(read_annotations(ok.as_bytes()).unwrap(), bars(&[0.0, 1.5]));
    let err = read_annotations("bar_index,time_s\n0,0.0\n1,2.0\n2,1.0\n".as_bytes()).unwrap_err();
    assert!(matches!(err, EvalError::Parse { line: 4, .. }), "{err}");
    let err = read_annotations("bar_index,time_s\n0,abc\n".as_bytes()).unwrap_err();
    assert!(matches!(err, EvalError::Parse { line: 2, .. }), "{err}");
    let err = read_annotations("bar,time_s\n0,0\n".as_bytes()).unwrap_err();
    assert!(err.to_string().contains("bar_index"));
}

#[test]
fn sections_round_trip() {
    let s = vec![
        crate::oltw::SectionMark { id: "a".into(), start_bar: 0, time_s: 0.0, voice_start: false },
        crate::oltw::SectionMark { id: "b".into(), start_bar: 12, time_s: 30.25, voice_start: true },
    ];
    let mut buf = Vec::new();
    write_sections(&mut buf, &s).unwrap();
    assert_eq!(read_sections(&buf[..]).unwrap(), s);
    assert!(read_sections("section_id,start_bar,ref_start_s,voice_start\na,0,0,2\n".as_bytes()).is_err());
}

fn small_script() -> ScenarioScript {
    ScenarioScript {
        sections: vec![
            SectionSpec { id: "a".into(), style: Style::Aria, bars: 3, beats_per_bar: 4, bpm: 120.0 },
            SectionSpec { id: "r".into(), style: Style::Recitative, bars: 2, beats_per_bar: 3, bpm: 90.0 },
        ],
        reference: vec![Segment::Section { id: "a".into(), tempo_scale: 1.0 }, Segment::Section { id: "r".into(), tempo_scale: 1.0 }],
        target: vec![
            Segment::Section { id: "a".into(), tempo_scale: 1.0 },
            Segment::Applause { duration_s: 1.5 },
            Segment::Silence { duration_s: 0.5, cough_density: 2.0 },
            Segment::Section { id: "r".into(), tempo_scale: 1.0 },
        ],
    }
}

#[test]
fn scenario_is_deterministic_and_consistent() {
    let script = small_script();
    let a = generate_scenario(&script, 7).unwrap();
    assert_eq!(a, generate_scenario(&script, 7).unwrap());
    assert_ne!(a.target.audio, generate_scenario(&script, 8).unwrap().target.audio);

    // same sections at the same tempo render to the same samples
    let ref_a = &a.reference.audio.samples()[..a.reference.bars[3].time_s as usize * SYNTH_RATE as usize];
    assert_eq!(ref_a, &a.target.audio.samples()[..ref_a.len()]);

    assert_eq!(a.reference.bars.len(), 5);
    assert_eq!(a.reference.bars[1].time_s, 2.0);
    assert_eq!(a.reference.bars[3].time_s, 6.0);
    assert_eq!(a.target.bars[3].time_s, 8.0);
    assert!((a.target.audio.duration_s() - a.reference.audio.duration_s() - inserted_duration(&script)).abs() < 1e-9);
    assert_eq!(a.transitions, vec![6.0]);
    assert_eq!(a.sections[1].start_bar, 3);
    assert!(a.sections[1].voice_start && !a.sections[0].voice_start);
    let kinds: Vec<_> = a.target.labels.iter().map(|l| (l.applause, l.music, l.speech)).collect();
    assert_eq!(kinds, vec![(false, true, false), (true, false, false), (false, false, false), (false, false, true)]);
}

#[test]
fn tempo_scale_stretches_bars() {
    let mut script = small_script();
    script.target[0] = Segment::Section { id: "a".into(), tempo_scale: 0.5 };
    let s = generate_scenario(&script, 1).unwrap();
    assert_eq!(s.target.bars[1].time_s, 4.0);
    assert_eq!(s.target.bars[3].time_s, 12.0 + 2.0);
}

#[test]
fn invalid_scripts_are_rejected() {
    let mut bad = small_script();
    bad.reference.push(Segment::Applause { duration_s: 1.0 });
    assert!(matches!(generate_scenario(&bad, 0), Err(EvalError::InvalidScript(_))));
    let mut bad = small_script();
    bad.target.swap(0, 3);
    assert!(matches!(generate_scenario(&bad, 0), Err(EvalError::InvalidScript(_))));
    let mut bad = small_script();
    bad.sections[0].bpm = 0.0;
    assert!(matches!(generate_scenario(&bad, 0), Err(EvalError::InvalidScript(_))));
    let mut bad = small_script();
    bad.target[0] = Segment::Section { id: "zz".into(), tempo_scale: 1.0 };
    assert!(generate_scenario(&bad, 0).is_err());
}

#[test]
fn script_json_uses_kind_tags() {
    let json = r#"{"sections":[{"id":"a","style":"aria","bars":2,"bpm":100}],
        "reference":[{"kind":"section","id":"a"}],
        "target":[{"kind":"silence","duration_s":1},{"kind":"section","id":"a","tempo_scale":1.1}]}"#;
    let s: ScenarioScript = serde_json::from_str(json).unwrap();
    assert_eq!(s.sections[0].beats_per_bar, 4);
    assert_eq!(s.target[0], Segment::Silence { duration_s: 1.0, cough_density: 0.3 });
    assert!(generate_scenario(&s, 0).is_ok());
}

#[test]
fn jump_presets_match_their_gaps() {
    for (j, gap) in [(1, 69.0), (2, 31.0), (3, 80.0), (4, 68.0)] {
        let s = jump_scenario(j);
        assert_eq!(inserted_duration(&s), gap);
    }
}

#[test]
fn frame_labels_use_frame_centres() {
    let labels = vec![
        LabelSegment { start_s: 0.0, end_s: 1.0, applause: true, music: false, speech: false },
        LabelSegment { start_s: 1.0, end_s: 2.0, applause: false, music: true, speech: false },
    ];
    let a = frame_labels(&labels, 100, DetectorKind::Applause);
    // frame k covers 20k .. 20k + 100 ms, centre 20k + 50 ms
    assert_eq!(a[47], 1.0);
    assert_eq!(a[48], 0.0);
    let m = frame_labels(&labels, 100, DetectorKind::Music);
    assert_eq!(m[48], 1.0);
    assert_eq!(m[98], 0.0);
}

#[test]
fn corpus_meets_quotas_and_round_trips() {
    let spec = CorpusSpec { minutes_per_class: 0.2, silence_minutes: 0.1, clip_s: 20.0, min_segment_s: 2.0, max_segment_s: 4.0 };
    let clips = generate_corpus(&spec, 3);
    let total = |f: fn(&LabelSegment) -> bool| clips.iter().flat_map(|c| &c.labels).filter(|l| f(l)).map(|l| l.end_s - l.start_s).sum::<f64>();
    assert!(total(|l| l.applause) >= 12.0 - 1e-6);
    assert!(total(|l| l.music) >= 12.0 - 1e-6);
    assert!(total(|l| l.speech) >= 12.0 - 1e-6);
    assert!(total(|l| !l.applause && !l.music && !l.speech) >= 6.0 - 1e-6);

    let dir = tempfile::tempdir().unwrap();
    write_labeled_dir(dir.path(), &clips[..1]).unwrap();
    let back = read_labeled_dir(dir.path()).unwrap();
    assert_eq!(back.len(), 1);
    assert_eq!(back[0].labels, clips[0].labels);
    assert_eq!(back[0].audio, clips[0].audio);

    let seqs = labeled_sequences(&back).unwrap();
    for (i, kind) in DetectorKind::ALL.into_iter().enumerate() {
        assert_eq!(seqs[i][0].frames[0].len(), crate::features::DetectorKind::dim(kind));
        assert_eq!(seqs[i][0].frames.len(), seqs[i][0].labels.len());
    }
}

#[test]
fn rendered_material_is_bounded() {
    let mut rng = super::synth::rng_for(5, "t");
    for m in Material::ALL {
        let x = render_material(m, 2.0, &mut rng);
        assert_eq!(x.len(), 88_200);
        let peak = x.iter().fold(0.0f32, |a, v| a.max(v.abs()));
        assert!(peak < 1.0 && peak > 1e-3, "{m:?} peak {peak}");
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn summary_fractions_are_nested(errs in prop::collection::vec(-20.0f64..20.0, 1..60)) {
        let errors: Vec<_> = errs.iter().enumerate().map(|(bar_index, &error_s)| BarError { bar_index, error_s, reached: true }).collect();
        let r = summarize(&errors).unwrap();
        prop_assert!(r.frac_le_1s <= r.frac_le_2s && r.frac_le_2s <= r.frac_le_5s && r.frac_le_5s <= 1.0);
        prop_assert!(r.std_s >= 0.0 && r.err_max_s >= r.mean_s.abs() - 1e-12);
    }

    #[test]
    fn constant_shift_gives_constant_error(shift in -3.0f64..3.0, times in prop::collection::vec(0.5f64..1.5, 2..10)) {
        let mut t = 4.0;
        let ref_times: Vec<f64> = times.iter().map(|d| { t += d; t }).collect();
        let rb = bars(&ref_times);
        let errors = align_errors(&trace(t + 8.0, |x| x + shift), &rb, &rb).unwrap();
        for e in errors {
            prop_assert!((e.error_s - shift).abs() < 1e-9, "{:?}", e);
        }
    }
}

#[test]
fn holding_on_a_bar_detects_it_on_leaving() {
    // pinned at ref 5 from target 5 to 9, then moving on
    let t = trace(14.0, |t| if t < 5.0 { t } else if t < 9.0 { 5.0 } else { t - 4.0 });
    let ref_bars = bars(&[2.0, 5.0, 7.0]);
    let target_bars = bars(&[2.0, 9.0, 11.0]);
    let e = align_errors(&t, &target_bars, &ref_bars).unwrap();
    assert!(e.iter().all(|b| b.error_s.abs() < 1e-9 && b.reached), "{e:?}");
    // a trace ending exactly on the last bar reaches it on arrival
    let e = align_errors(&trace(5.0, |t| t), &bars(&[5.0]), &bars(&[5.0])).unwrap();
    assert!(e[0].reached && e[0].error_s.abs() < 1e-9);
}
