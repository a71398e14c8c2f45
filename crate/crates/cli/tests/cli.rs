use std::path::{Path, PathBuf};
use std::process::{Command, Output};
use std::sync::OnceLock;

fn bin() -> Command {
    let mut c = Command::new(env!("CARGO_BIN_EXE_opera-follow"));
    c.env("OPERA_FOLLOW_LOG", "warn");
    c
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().unwrap()
}

fn code(out: &Output) -> i32 {
    out.status.code().unwrap()
}

fn stderr(out: &Output) -> String {
    String::from_utf8_lossy(&out.stderr).into_owned()
}

fn stdout(out: &Output) -> String {
    String::from_utf8_lossy(&out.stdout).into_owned()
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

const SCRIPT: &str = r#"{
  "sections": [
    {"id": "aria", "style": "aria", "bars": 4, "beats_per_bar": 4, "bpm": 120},
    {"id": "recit", "style": "recitative", "bars": 2, "beats_per_bar": 4, "bpm": 110}
  ],
  "reference": [{"kind": "section", "id": "aria"}, {"kind": "section", "id": "recit"}],
  "target": [
    {"kind": "section", "id": "aria", "tempo_scale": 0.95},
    {"kind": "applause", "duration_s": 1.5},
    {"kind": "section", "id": "recit", "tempo_scale": 1.05}
  ]
}"#;

/// A small scenario, its reference bundle and three briefly trained
/// detectors, built once per test run.
struct Fixture {
    scenario: PathBuf,
    bundle: PathBuf,
    models: PathBuf,
    corpus: PathBuf,
}

fn fixture() -> &'static Fixture {
    static F: OnceLock<Fixture> = OnceLock::new();
    F.get_or_init(|| {
        let root = Path::new(env!("CARGO_TARGET_TMPDIR")).join(format!("cli-fixture-{}", std::process::id()));
        let f = Fixture { scenario: root.join("scenario"), bundle: root.join("bundle"), models: root.join("models"), corpus: root.join("corpus") };
        std::fs::create_dir_all(&root).unwrap();
        let script = root.join("script.json");
        std::fs::write(&script, SCRIPT).unwrap();
        let out = run(&["synth", "--script", p(&script), "--seed", "3", "--out", p(&f.scenario)]);
        assert_eq!(code(&out), 0, "{}", stderr(&out));

        let out = run(&["synth", "--corpus", "--minutes-per-class", "0.5", "--silence-minutes", "0.2", "--seed", "1", "--out", p(&f.corpus)]);
        assert_eq!(code(&out), 0, "{}", stderr(&out));
        for kind in ["applause", "music", "speech"] {
            let model = f.models.join(format!("{kind}.model"));
            let out = run(&["train-detector", "--kind", kind, "--data", p(&f.corpus), "--out", p(&model), "--epochs", "3"]);
            assert_eq!(code(&out), 0, "{}", stderr(&out));
        }

        let s = &f.scenario;
        let out = run(&[
            "prepare-reference",
            "--audio",
            p(&s.join("reference.wav")),
            "--bars",
            p(&s.join("reference_bars.csv")),
            "--sections",
            p(&s.join("sections.csv")),
            "--speech-model",
            p(&f.models.join("speech.model")),
            "--out",
            p(&f.bundle),
        ]);
        assert_eq!(code(&out), 0, "{}", stderr(&out));
        f
    })
}

fn evaluate(trace: &Path, target_bars: &Path, ref_bars: &Path, report: &Path) -> Output {
    run(&["evaluate", "--trace", p(trace), "--target-bars", p(target_bars), "--ref-bars", p(ref_bars), "--out", p(report)])
}

#[test]
fn usage_errors_exit_with_1() {
    assert_eq!(code(&run(&[])), 1);
    assert_eq!(code(&run(&["dance"])), 1);
    assert_eq!(code(&run(&["track", "--reference", "x"])), 1);
    assert_eq!(code(&run(&["synth", "--out", "x"])), 1);
    assert_eq!(code(&run(&["synth", "--preset", "jump-9", "--out", "x"])), 1);
    assert_eq!(code(&run(&["train-detector", "--kind", "laughter", "--data", "x", "--out", "y"])), 1);
    let help = run(&["--help"]);
    assert_eq!(code(&help), 0);
    for cmd in ["prepare-reference", "train-detector", "track", "evaluate", "synth"] {
        assert!(stdout(&help).contains(cmd), "{cmd}");
    }
}

#[test]
fn data_errors_exit_with_2() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let missing = d.join("missing.csv");
    let out = evaluate(&missing, &missing, &missing, &d.join("r.json"));
    assert_eq!(code(&out), 2);

    let bars = d.join("bars.csv");
    std::fs::write(&bars, "bar_index,time_s\n0,0.0\n1,1.0\n").unwrap();
    let trace = d.join("trace.csv");
    std::fs::write(&trace, "target_time_s,mode\n0.0,TRACKING\n").unwrap();
    let out = evaluate(&trace, &bars, &bars, &d.join("r.json"));
    assert_eq!(code(&out), 2);
    assert!(stderr(&out).contains("ref_time_s"), "{}", stderr(&out));

    std::fs::write(&trace, "target_time_s,ref_time_s\n0.0,0.0\n0.01,zero\n").unwrap();
    let out = evaluate(&trace, &bars, &bars, &d.join("r.json"));
    assert_eq!(code(&out), 2);
    assert!(stderr(&out).contains("line 3"), "{}", stderr(&out));

    let empty = d.join("empty");
    std::fs::create_dir(&empty).unwrap();
    let out = run(&["train-detector", "--kind", "music", "--data", p(&empty), "--out", p(&d.join("m.model"))]);
    assert_eq!(code(&out), 2);
}

#[test]
fn unwritable_output_exits_with_3() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let bars = d.join("bars.csv");
    std::fs::write(&bars, "bar_index,time_s\n0,0.5\n1,1.0\n").unwrap();
    let trace = d.join("trace.csv");
    std::fs::write(&trace, "target_time_s,ref_time_s\n0.0,0.0\n2.0,2.0\n").unwrap();
    // the report path is an existing directory
    let out = evaluate(&trace, &bars, &bars, d);
    assert_eq!(code(&out), 3, "{}", stderr(&out));
}

#[test]
fn evaluate_reproduces_hand_numbers() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    // identity trace; the performance is 1.5 s later, 0.5 s earlier and 3 s later
    let trace = d.join("trace.csv");
    let rows: String = (0..=2000).map(|k| format!("{0},{0}\n", k as f64 / 100.0)).collect();
    std::fs::write(&trace, format!("target_time_s,ref_time_s\n{rows}")).unwrap();
    let ref_bars = d.join("ref.csv");
    std::fs::write(&ref_bars, "bar_index,time_s\n0,2.0\n1,5.0\n2,9.0\n").unwrap();
    let target_bars = d.join("target.csv");
    std::fs::write(&target_bars, "bar_index,time_s\n0,3.5\n1,4.5\n2,12.0\n").unwrap();
    let report = d.join("report.json");
    let curve = d.join("curve.csv");
    let out = run(&[
        "evaluate", "--trace", p(&trace), "--target-bars", p(&target_bars), "--ref-bars", p(&ref_bars), "--out", p(&report), "--curve", p(&curve),
    ]);
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    let r: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(&report).unwrap()).unwrap();
    for key in ["mean_s", "std_s", "frac_le_1s", "frac_le_2s", "frac_le_5s", "err_max_s", "per_bar_errors"] {
        assert!(r.get(key).is_some(), "{key}");
    }
    assert!((r["mean_s"].as_f64().unwrap() - 4.0 / 3.0).abs() < 1e-9);
    assert!((r["frac_le_1s"].as_f64().unwrap() - 1.0 / 3.0).abs() < 1e-12);
    assert!((r["frac_le_2s"].as_f64().unwrap() - 2.0 / 3.0).abs() < 1e-12);
    assert_eq!(r["err_max_s"].as_f64().unwrap(), 3.0);
    assert_eq!(std::fs::read_to_string(&curve).unwrap().lines().count(), 4);
}

#[test]
fn prepare_reference_rejects_bad_annotations() {
    let f = fixture();
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let s = &f.scenario;
    let prep = |bars: &Path| {
        run(&[
            "prepare-reference", "--audio", p(&s.join("reference.wav")), "--bars", p(bars), "--sections", p(&s.join("sections.csv")), "--out", p(&d.join("b")),
        ])
    };
    let backwards = d.join("backwards.csv");
    std::fs::write(&backwards, "bar_index,time_s\n0,0.0\n1,3.0\n2,2.0\n").unwrap();
    let out = prep(&backwards);
    assert_eq!(code(&out), 2);
    assert!(stderr(&out).contains("line 4"), "{}", stderr(&out));

    let long = d.join("long.csv");
    std::fs::write(&long, "bar_index,time_s\n0,0.0\n1,2.0\n2,4.0\n3,6.0\n4,8.0\n5,60.0\n").unwrap();
    let out = prep(&long);
    assert_eq!(code(&out), 2);
    assert!(stderr(&out).contains("audio"), "{}", stderr(&out));
}

#[test]
fn bundle_keeps_annotations_and_voice_flags() {
    let f = fixture();
    let read = |p: &Path| std::fs::read_to_string(p).unwrap();
    assert_eq!(read(&f.bundle.join("bars.csv")), read(&f.scenario.join("reference_bars.csv")));
    // the recitative opens with voice, the aria does not
    let sections = read(&f.bundle.join("sections.csv"));
    let flags: Vec<&str> = sections.lines().skip(1).map(|l| l.rsplit(',').next().unwrap()).collect();
    assert_eq!(flags, vec!["0", "1"], "{sections}");
    let manifest: serde_json::Value = serde_json::from_str(&read(&f.bundle.join("bundle.json"))).unwrap();
    assert_eq!(manifest["dim"], 100);
}

#[test]
fn self_tracking_gives_zero_error() {
    let f = fixture();
    let dir = tempfile::tempdir().unwrap();
    let trace = dir.path().join("trace.csv");
    let bars = f.scenario.join("reference_bars.csv");
    let out = run(&[
        "track", "--reference", p(&f.bundle), "--target", p(&f.scenario.join("reference.wav")), "--variant", "base", "--out", p(&trace),
    ]);
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    let report = dir.path().join("report.json");
    let out = evaluate(&trace, &bars, &bars, &report);
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    let r: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(&report).unwrap()).unwrap();
    assert_eq!(r["mean_s"], 0.0);
    assert_eq!(r["err_max_s"], 0.0);
}

#[test]
fn training_is_deterministic_per_seed() {
    let f = fixture();
    let dir = tempfile::tempdir().unwrap();
    let train = |name: &str, seed: &str| {
        let out_path = dir.path().join(name);
        let out = run(&["train-detector", "--kind", "applause", "--data", p(&f.corpus), "--out", p(&out_path), "--epochs", "1", "--seed", seed]);
        assert_eq!(code(&out), 0, "{}", stderr(&out));
        assert!(stdout(&out).contains("held-out accuracy"));
        std::fs::read(out_path).unwrap()
    };
    let a = train("a.model", "5");
    assert_eq!(a, train("b.model", "5"));
    assert_ne!(a, train("c.model", "6"));
}

#[test]
fn gates_need_models_and_flags_override_config() {
    let f = fixture();
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let target = f.scenario.join("target.wav");
    let out = run(&["track", "--reference", p(&f.bundle), "--target", p(&target), "--out", p(&d.join("t.csv"))]);
    assert_eq!(code(&out), 1, "{}", stderr(&out));

    let cfg = d.join("run.json");
    std::fs::write(&cfg, r#"{"window_s": -1, "gates": {"applause": false, "pause": false, "interlude": false}}"#).unwrap();
    let trace = d.join("t.csv");
    let base = ["track", "--reference", p(&f.bundle), "--target", p(&target), "--out", p(&trace), "--config", p(&cfg)];
    assert_eq!(code(&run(&base)), 1);
    let mut fixed = base.to_vec();
    fixed.extend(["--window-s", "40"]);
    let out = run(&fixed);
    assert_eq!(code(&out), 0, "{}", stderr(&out));
}

#[test]
fn realtime_and_batch_traces_are_identical() {
    let f = fixture();
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let target = f.scenario.join("target.wav");
    let track = |name: &str, realtime: bool| {
        let path = d.join(name);
        let mut args = vec![
            "track", "--reference", p(&f.bundle), "--target", p(&target), "--variant", "asi", "--models", p(&f.models), "--out", p(&path),
        ];
        if realtime {
            args.push("--realtime");
        }
        let out = run(&args);
        assert_eq!(code(&out), 0, "{}", stderr(&out));
        (std::fs::read(&path).unwrap(), stdout(&out))
    };
    let (batch, _) = track("batch.csv", false);
    let (paced, report) = track("paced.csv", true);
    assert_eq!(batch, paced);
    assert!(report.contains("p50"), "{report}");
}
