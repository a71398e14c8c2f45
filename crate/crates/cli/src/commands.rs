use std::fs::File;
use std::io::{BufReader, BufWriter, Write};
use std::path::Path;

use anyhow::Context;
use opera_follow::audio::{open_audio, AudioStream};
use opera_follow::control::{annotate_reference_voice, read_trace, write_trace, DetectorModels};
use opera_follow::detectors::{accuracy, load_model, save_model, train, LstmModel, ModelConfig, TrainConfig};
use opera_follow::eval::{
    align_errors, error_curve_csv, generate_corpus, generate_scenario, jump_scenario, labeled_sequences,
    read_annotations, read_labeled_dir, read_sections, summarize, write_labeled_dir, write_report, write_scenario,
    CorpusSpec, ScenarioScript, TracePoint,
};
use opera_follow::features::{alignment_sequence, DetectorKind};
use opera_follow::oltw::REF_HOP_S;

use crate::bundle::{Bundle, Manifest};
use crate::config::{ModelPaths, RunConfig};
use crate::error::{data, usage, Classify, CmdResult};
use crate::pipeline::{self, PipelineConfig};
use crate::{EvaluateArgs, PrepareArgs, SynthArgs, TrackArgs, TrainArgs};

fn open(path: &Path) -> CmdResult<BufReader<File>> {
    File::open(path).map(BufReader::new).with_context(|| format!("opening {}", path.display())).data_err()
}

fn create(path: &Path) -> CmdResult<BufWriter<File>> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display())).runtime_err()?;
    }
    File::create(path).map(BufWriter::new).with_context(|| format!("creating {}", path.display())).runtime_err()
}

fn load_audio(path: &Path) -> CmdResult<AudioStream> {
    open_audio(path).with_context(|| format!("reading {}", path.display())).data_err()
}

pub fn prepare_reference(a: &PrepareArgs) -> CmdResult<()> {
    let audio = load_audio(&a.audio)?;
    let bars = read_annotations(open(&a.bars)?).with_context(|| format!("reading {}", a.bars.display())).data_err()?;
    let mut sections =
        read_sections(open(&a.sections)?).with_context(|| format!("reading {}", a.sections.display())).data_err()?;
    let duration = audio.duration_s();
    let Some(last) = bars.last() else {
        return data(format!("{} has no bars", a.bars.display()));
    };
    if last.time_s > duration + a.max_overrun_s {
        return data(format!(
            "annotations run to {:.2} s but the audio is {duration:.2} s long (more than {} s apart)",
            last.time_s, a.max_overrun_s
        ));
    }
    if let Some(s) = sections.iter().find(|s| s.start_bar >= bars.len()) {
        return data(format!("section {} starts at bar {} but there are {} bars", s.id, s.start_bar, bars.len()));
    }

    if let Some(path) = &a.speech_model {
        let speech = load_model(path, DetectorKind::Speech).with_context(|| format!("loading {}", path.display())).data_err()?;
        let starts: Vec<f64> = sections.iter().map(|s| s.time_s).collect();
        let flags = annotate_reference_voice(&audio, &speech, &starts, &Default::default()).runtime_err()?;
        for (s, v) in sections.iter_mut().zip(flags) {
            if s.voice_start != v {
                log::info!("section {}: voice flag {} -> {v}", s.id, s.voice_start);
            }
            s.voice_start = v;
        }
    } else {
        log::warn!("no speech model given; keeping the voice flags from {}", a.sections.display());
    }

    let features: Vec<Vec<f32>> =
        alignment_sequence(&audio).context("computing reference features").runtime_err()?.into_iter().map(|f| f.values).collect();
    let manifest = Manifest {
        source: a.audio.display().to_string(),
        duration_s: duration,
        frames: features.len(),
        dim: features.first().map_or(0, Vec::len),
        hop_ms: (REF_HOP_S * 1000.0).round() as u32,
    };
    let bundle = Bundle { manifest, features, bars, sections };
    bundle.index()?;
    bundle.save(&a.out).runtime_err()?;
    log::info!("wrote {} ({} frames, {} bars, {} sections)", a.out.display(), bundle.manifest.frames, bundle.bars.len(), bundle.sections.len());
    Ok(())
}

pub fn train_detector(a: &TrainArgs) -> CmdResult<()> {
    if !(0.0..1.0).contains(&a.holdout) {
        return usage("--holdout must be in [0, 1)");
    }
    let clips = read_labeled_dir(&a.data).with_context(|| format!("reading {}", a.data.display())).data_err()?;
    if clips.is_empty() {
        return data(format!("{} holds no WAV files with matching label CSVs", a.data.display()));
    }
    let [applause, music, speech] = labeled_sequences(&clips).context("computing detector features").runtime_err()?;
    let seqs = match a.kind {
        DetectorKind::Applause => applause,
        DetectorKind::Music => music,
        DetectorKind::Speech => speech,
    };
    let held = if clips.len() < 2 { 0 } else { ((clips.len() as f64 * a.holdout).ceil() as usize).min(clips.len() - 1) };
    let (train_set, valid) = seqs.split_at(seqs.len() - held);
    log::info!("{}: {} training clips, {} held out", a.kind, train_set.len(), valid.len());

    let hyper = TrainConfig { epochs: a.epochs, seed: a.seed, target_accuracy: a.target_accuracy, ..TrainConfig::default() };
    let outcome = train(ModelConfig::for_kind(a.kind), train_set, (!valid.is_empty()).then_some(valid), &hyper).runtime_err()?;
    for e in &outcome.history {
        log::debug!("epoch {}: loss {:.5} held-out {:?}", e.epoch, e.loss, e.validation_accuracy);
    }
    if let Some(dir) = a.out.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display())).runtime_err()?;
    }
    save_model(&outcome.model, &a.out).with_context(|| format!("writing {}", a.out.display())).runtime_err()?;
    println!("{}: {} epochs, final loss {:.4}", a.kind, outcome.history.len(), outcome.final_loss);
    if !valid.is_empty() {
        println!("held-out accuracy: {:.4}", accuracy(&outcome.model, valid).runtime_err()?);
    }
    Ok(())
}

fn load_models(paths: &ModelPaths) -> CmdResult<Option<DetectorModels>> {
    if !paths.any() {
        return Ok(None);
    }
    let Some(all) = paths.all() else {
        return usage("give all three detector models or none");
    };
    let load = |p: &Path, k| -> CmdResult<LstmModel> { load_model(p, k).with_context(|| format!("loading {}", p.display())).data_err() };
    let [a, m, s] = all;
    let models = DetectorModels::new(load(a, DetectorKind::Applause)?, load(m, DetectorKind::Music)?, load(s, DetectorKind::Speech)?)
        .data_err()?;
    Ok(Some(models))
}

pub fn track(a: &TrackArgs) -> CmdResult<()> {
    let mut cfg = match &a.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    if let Some(v) = a.variant {
        cfg.gates = v.gates();
    }
    if let Some(w) = a.window_s {
        cfg.window_s = w;
    }
    if let Some(dir) = &a.models {
        cfg.models = ModelPaths::in_dir(dir);
    }
    for (flag, slot) in [(&a.applause_model, &mut cfg.models.applause), (&a.music_model, &mut cfg.models.music), (&a.speech_model, &mut cfg.models.speech)] {
        if let Some(p) = flag {
            *slot = Some(p.clone());
        }
    }
    cfg.realtime |= a.realtime;
    if let Some(n) = a.trace_every {
        cfg.trace_every = n;
    }
    cfg.validate()?;

    let models = load_models(&cfg.models)?;
    if cfg.gates.any() && models.is_none() {
        return usage("gates are enabled but no detector models were given (use --variant base or --models)");
    }
    let bundle = Bundle::load(&a.reference)?;
    let reference = bundle.index()?;
    let target = load_audio(&a.target)?;
    log::info!(
        "tracking {} ({:.1} s) with gates {:?}, window {} s{}",
        a.target.display(),
        target.duration_s(),
        cfg.gates,
        cfg.window_s,
        if cfg.realtime { ", realtime" } else { "" }
    );

    let out = pipeline::track(
        &reference,
        &target,
        PipelineConfig { gates: cfg.gates, params: cfg.control_params(), models, realtime: cfg.realtime, queue_len: cfg.queue_len },
    )
    .runtime_err()?;

    let mut w = create(&a.out)?;
    write_trace(&mut w, &out.trace, cfg.trace_every).runtime_err()?;
    w.flush().runtime_err()?;
    let halted = out.trace.iter().filter(|p| p.mode.is_halted()).count() as f64 * REF_HOP_S;
    println!("{} frames tracked, {halted:.1} s halted", out.trace.len());
    if let Some(l) = out.latency {
        println!("step latency ms: p50 {:.3} p95 {:.3} p99 {:.3} max {:.3}", l.p50_ms, l.p95_ms, l.p99_ms, l.max_ms);
    }
    Ok(())
}

pub fn evaluate(a: &EvaluateArgs) -> CmdResult<()> {
    let trace = read_trace(open(&a.trace)?).with_context(|| format!("reading {}", a.trace.display())).data_err()?;
    let target = read_annotations(open(&a.target_bars)?).with_context(|| format!("reading {}", a.target_bars.display())).data_err()?;
    let reference = read_annotations(open(&a.ref_bars)?).with_context(|| format!("reading {}", a.ref_bars.display())).data_err()?;
    let points: Vec<TracePoint> = trace.iter().map(|p| TracePoint { target_time: p.target_time, ref_time: p.ref_time }).collect();
    let errors = align_errors(&points, &target, &reference).data_err()?;
    let report = summarize(&errors).data_err()?;
    let unreached = errors.iter().filter(|e| !e.reached).count();
    if unreached > 0 {
        log::warn!("{unreached} bars were never reached by the trace");
    }

    let mut w = create(&a.out)?;
    write_report(&mut w, &report).runtime_err()?;
    w.flush().runtime_err()?;
    if let Some(path) = &a.curve {
        error_curve_csv(&errors, create(path)?).runtime_err()?;
    }
    println!(
        "mean {:.2} s  std {:.2} s  <=1s {:.2}  <=2s {:.2}  <=5s {:.2}  max {:.2} s",
        report.mean_s, report.std_s, report.frac_le_1s, report.frac_le_2s, report.frac_le_5s, report.err_max_s
    );
    Ok(())
}

pub fn synth(a: &SynthArgs) -> CmdResult<()> {
    if a.corpus {
        if !(a.minutes_per_class > 0.0 && a.silence_minutes >= 0.0) {
            return usage("corpus minutes must be positive");
        }
        let spec = CorpusSpec { minutes_per_class: a.minutes_per_class, silence_minutes: a.silence_minutes, ..CorpusSpec::default() };
        let clips = generate_corpus(&spec, a.seed);
        write_labeled_dir(&a.out, &clips).runtime_err()?;
        println!("{} clips written to {}", clips.len(), a.out.display());
        return Ok(());
    }
    let script: ScenarioScript = match (&a.script, &a.preset) {
        (Some(p), _) => serde_json::from_reader(open(p)?).with_context(|| format!("parsing {}", p.display())).data_err()?,
        (None, Some(name)) => match name.strip_prefix("jump-").and_then(|n| n.parse::<usize>().ok()) {
            Some(n @ 1..=4) => jump_scenario(n),
            _ => return usage(format!("unknown preset {name:?} (expected jump-1 .. jump-4)")),
        },
        (None, None) => return usage("give --script, --preset or --corpus"),
    };
    let scenario = generate_scenario(&script, a.seed).data_err()?;
    write_scenario(&a.out, &scenario).runtime_err()?;
    serde_json::to_writer_pretty(create(&a.out.join("script.json"))?, &script).runtime_err()?;
    println!(
        "reference {:.1} s, target {:.1} s, {} bars, transitions at {:?}",
        scenario.reference.audio.duration_s(),
        scenario.target.audio.duration_s(),
        scenario.reference.bars.len(),
        scenario.transitions
    );
    Ok(())
}
