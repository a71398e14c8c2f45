//! Labeled audio on disk: a WAV file and a CSV of label segments per clip.

use std::fs::File;
use std::io::{BufWriter, Read, Write};
use std::path::{Path, PathBuf};

use super::synth::{frame_labels, LabelSegment, LabeledClip, Scenario};
use super::{write_annotations, write_sections, EvalError};
use crate::audio::{open_audio, write_wav};
use crate::detectors::LabeledSequence;
use crate::features::{detector_sequence, DetectorKind};

const HEADER: [&str; 5] = ["start_s", "end_s", "applause", "music", "speech"];

pub fn write_labels<W: Write>(w: W, labels: &[LabelSegment]) -> Result<(), EvalError> {
    let mut out = csv::Writer::from_writer(w);
    out.write_record(HEADER)?;
    for l in labels {
        let b = |v: bool| (v as u8).to_string();
        out.write_record([l.start_s.to_string(), l.end_s.to_string(), b(l.applause), b(l.music), b(l.speech)])?;
    }
    out.flush()?;
    Ok(())
}

pub fn read_labels<R: Read>(r: R) -> Result<Vec<LabelSegment>, EvalError> {
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(r);
    let headers = rdr.headers()?.clone();
    let idx = HEADER
        .iter()
        .map(|c| headers.iter().position(|h| h == *c).ok_or_else(|| EvalError::Parse { line: 1, msg: format!("missing column {c}") }))
        .collect::<Result<Vec<_>, _>>()?;
    let mut out = Vec::new();
    for rec in rdr.records() {
        let rec = rec?;
        let line = rec.position().map_or(0, |p| p.line());
        let field = |k: usize| rec.get(idx[k]).unwrap_or("");
        let time = |k: usize| field(k).parse::<f64>().map_err(|_| EvalError::Parse { line, msg: format!("{}: {:?}", HEADER[k], field(k)) });
        let flag = |k: usize| match field(k) {
            "0" => Ok(false),
            "1" => Ok(true),
            v => Err(EvalError::Parse { line, msg: format!("{} must be 0 or 1, got {v:?}", HEADER[k]) }),
        };
        let seg = LabelSegment { start_s: time(0)?, end_s: time(1)?, applause: flag(2)?, music: flag(3)?, speech: flag(4)? };
        if seg.end_s < seg.start_s {
            return Err(EvalError::Parse { line, msg: "segment ends before it starts".into() });
        }
        out.push(seg);
    }
    Ok(out)
}

/// Writes `<name>.wav` and `<name>.csv` for every clip.
pub fn write_labeled_dir(dir: &Path, clips: &[LabeledClip]) -> Result<(), EvalError> {
    std::fs::create_dir_all(dir)?;
    for c in clips {
        write_wav(dir.join(format!("{}.wav", c.name)), &c.audio)?;
        write_labels(BufWriter::new(File::create(dir.join(format!("{}.csv", c.name)))?), &c.labels)?;
    }
    Ok(())
}

/// Every `*.wav` in `dir` that has a label CSV with the same stem, in name order.
pub fn read_labeled_dir(dir: &Path) -> Result<Vec<LabeledClip>, EvalError> {
    let mut wavs: Vec<PathBuf> = std::fs::read_dir(dir)?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x.eq_ignore_ascii_case("wav")) && p.with_extension("csv").exists())
        .collect();
    wavs.sort();
    wavs.iter()
        .map(|p| {
            Ok(LabeledClip {
                name: p.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default(),
                audio: open_audio(p)?,
                labels: read_labels(File::open(p.with_extension("csv"))?)?,
            })
        })
        .collect()
}

/// Detector features of every clip with per-frame labels, one set per
/// detector kind in `DetectorKind::ALL` order.
pub fn labeled_sequences(clips: &[LabeledClip]) -> Result<[Vec<LabeledSequence>; 3], EvalError> {
    let mut out: [Vec<LabeledSequence>; 3] = Default::default();
    for c in clips {
        let frames = detector_sequence(&c.audio)?;
        for (i, kind) in DetectorKind::ALL.into_iter().enumerate() {
            out[i].push(LabeledSequence {
                frames: frames.iter().map(|f| f.get(kind).values.clone()).collect(),
                labels: frame_labels(&c.labels, frames.len(), kind),
            });
        }
    }
    Ok(out)
}

/// Writes the reference and target audio, their bar annotations and labels,
/// and the section table.
pub fn write_scenario(dir: &Path, scenario: &Scenario) -> Result<(), EvalError> {
    std::fs::create_dir_all(dir)?;
    let create = |name: &str| -> Result<BufWriter<File>, EvalError> { Ok(BufWriter::new(File::create(dir.join(name))?)) };
    for (name, s) in [("reference", &scenario.reference), ("target", &scenario.target)] {
        write_wav(dir.join(format!("{name}.wav")), &s.audio)?;
        write_annotations(create(&format!("{name}_bars.csv"))?, &s.bars)?;
        write_labels(create(&format!("{name}_labels.csv"))?, &s.labels)?;
    }
    write_sections(create("sections.csv")?, &scenario.sections)?;
    Ok(())
}
