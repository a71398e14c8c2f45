use std::io::{Read, Write};

use super::{ControlError, DetectorProbs, Mode, TrackedPosition};

const HEADER: [&str; 6] = ["target_time_s", "ref_time_s", "mode", "applause_p", "music_p", "speech_p"];

/// Writes one row per position; `every` > 1 keeps only every n-th row.
pub fn write_trace<W: Write>(w: W, trace: &[TrackedPosition], every: usize) -> Result<(), ControlError> {
    let mut out = csv::Writer::from_writer(w);
    out.write_record(HEADER)?;
    for p in trace.iter().step_by(every.max(1)) {
        out.write_record([
            p.target_time.to_string(),
            p.ref_time.to_string(),
            p.mode.to_string(),
            p.probs.applause.to_string(),
            p.probs.music.to_string(),
            p.probs.speech.to_string(),
        ])?;
    }
    out.flush()?;
    Ok(())
}

/// Reads a trace. Only the two time columns are required; the mode and
/// probabilities default to tracking and zero when absent.
pub fn read_trace<R: Read>(r: R) -> Result<Vec<TrackedPosition>, ControlError> {
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(r);
    let headers = rdr.headers()?.clone();
    let col = |name: &str| headers.iter().position(|h| h == name);
    let need = |name: &str| col(name).ok_or_else(|| ControlError::MalformedTrace { line: 1, msg: format!("missing column {name}") });
    let (ti, ri) = (need("target_time_s")?, need("ref_time_s")?);
    let (mi, ai, mu, si) = (col("mode"), col("applause_p"), col("music_p"), col("speech_p"));

    let mut trace = Vec::new();
    for rec in rdr.records() {
        let rec = rec?;
        let line = rec.position().map_or(0, |p| p.line());
        let bad = |msg: String| ControlError::MalformedTrace { line, msg };
        let num = |i: Option<usize>, name: &str| -> Result<f64, ControlError> {
            match i {
                None => Ok(0.0),
                Some(i) => {
                    let s = rec.get(i).ok_or_else(|| bad(format!("missing {name}")))?;
                    s.parse().map_err(|_| bad(format!("{name} is not a number: {s:?}")))
                }
            }
        };
        let mode = match mi {
            None => Mode::Tracking,
            Some(i) => rec.get(i).ok_or_else(|| bad("missing mode".into()))?.parse().map_err(bad)?,
        };
        trace.push(TrackedPosition {
            target_time: num(Some(ti), "target_time_s")?,
            ref_time: num(Some(ri), "ref_time_s")?,
            mode,
            probs: DetectorProbs { applause: num(ai, "applause_p")?, music: num(mu, "music_p")?, speech: num(si, "speech_p")? },
        });
    }
    Ok(trace)
}
