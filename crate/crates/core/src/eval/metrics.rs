//! Bar-level alignment errors and their summary statistics.

use std::io::{Read, Write};

use serde::{Deserialize, Serialize};

use super::EvalError;
use crate::oltw::SectionMark;

/// A bar boundary and its time in one recording.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BarAnnotation {
    pub bar_index: usize,
    pub time_s: f64,
}

/// One row of a tracker trace: at target time `target_time` the tracker
/// reported reference time `ref_time`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TracePoint {
    pub target_time: f64,
    pub ref_time: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BarError {
    pub bar_index: usize,
    /// Positive when the tracker is ahead of the performance.
    pub error_s: f64,
    /// False when the trace never reached the bar.
    pub reached: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvaluationReport {
    pub mean_s: f64,
    pub std_s: f64,
    pub frac_le_1s: f64,
    pub frac_le_2s: f64,
    pub frac_le_5s: f64,
    pub err_max_s: f64,
    #[serde(default)]
    pub per_bar_errors: Vec<BarError>,
}

/// Reference-seconds per target-second above which a trace step counts as
/// a jump rather than continuous motion.
const MAX_INTERP_SLOPE: f64 = 2.0;

/// Per-bar errors of a trace against ground truth.
///
/// The detection time of a bar is the first target time at which the trace
/// moves past the bar's reference time, interpolated within the step that
/// crosses it unless that step is a jump. A trace that holds exactly on a
/// bar therefore detects it when it leaves, and one that ends exactly on it
/// detects it on arrival. The error is ground truth minus detection, so a
/// tracker that runs ahead has positive errors. Bars the trace never
/// reaches are detected at the end of the trace and flagged.
pub fn align_errors(
    trace: &[TracePoint],
    target_bars: &[BarAnnotation],
    ref_bars: &[BarAnnotation],
) -> Result<Vec<BarError>, EvalError> {
    let last = trace.last().ok_or(EvalError::EmptyTrace)?;
    if target_bars.len() != ref_bars.len()
        || target_bars.iter().zip(ref_bars).any(|(t, r)| t.bar_index != r.bar_index)
    {
        return Err(EvalError::MismatchedBars { target: target_bars.len(), reference: ref_bars.len() });
    }

    // bars are in reference order, so each crossing is at or after the previous one
    let mut errors = Vec::with_capacity(ref_bars.len());
    let mut n = 0;
    for (tb, rb) in target_bars.iter().zip(ref_bars) {
        let r = rb.time_s;
        let from = n;
        while n < trace.len() && trace[n].ref_time <= r {
            n += 1;
        }
        let (detected, reached) = if n == 0 {
            (trace[0].target_time, true)
        } else if n < trace.len() {
            (crossing_time(&trace[n - 1], &trace[n], r), true)
        } else if last.ref_time == r {
            let k = from + trace[from..].iter().position(|p| p.ref_time >= r).unwrap_or(0);
            (if k == 0 { trace[0].target_time } else { crossing_time(&trace[k - 1], &trace[k], r) }, true)
        } else {
            (last.target_time, false)
        };
        errors.push(BarError { bar_index: tb.bar_index, error_s: tb.time_s - detected, reached });
    }
    Ok(errors)
}

fn crossing_time(a: &TracePoint, b: &TracePoint, r: f64) -> f64 {
    let dt = b.target_time - a.target_time;
    let dr = b.ref_time - a.ref_time;
    if dr > dt * MAX_INTERP_SLOPE {
        return b.target_time;
    }
    if dt == dr {
        // exact for a trace that follows the identity
        return a.target_time + (r - a.ref_time);
    }
    a.target_time + (r - a.ref_time) * dt / dr
}

/// Mean and population standard deviation of the signed errors, fractions of
/// bars within 1, 2 and 5 s, and the largest absolute error.
pub fn summarize(errors: &[BarError]) -> Result<EvaluationReport, EvalError> {
    if errors.is_empty() {
        return Err(EvalError::NoBars);
    }
    let n = errors.len() as f64;
    let mean = errors.iter().map(|e| e.error_s).sum::<f64>() / n;
    let var = errors.iter().map(|e| (e.error_s - mean).powi(2)).sum::<f64>() / n;
    let frac = |lim: f64| errors.iter().filter(|e| e.error_s.abs() <= lim).count() as f64 / n;
    Ok(EvaluationReport {
        mean_s: mean,
        std_s: var.sqrt(),
        frac_le_1s: frac(1.0),
        frac_le_2s: frac(2.0),
        frac_le_5s: frac(5.0),
        err_max_s: errors.iter().map(|e| e.error_s.abs()).fold(0.0, f64::max),
        per_bar_errors: errors.to_vec(),
    })
}

pub fn write_report<W: Write>(w: W, report: &EvaluationReport) -> Result<(), EvalError> {
    serde_json::to_writer_pretty(w, report)?;
    Ok(())
}

pub fn read_report<R: Read>(r: R) -> Result<EvaluationReport, EvalError> {
    Ok(serde_json::from_reader(r)?)
}

/// `bar_index,error_s` rows for plotting.
pub fn error_curve_csv<W: Write>(errors: &[BarError], w: W) -> Result<(), EvalError> {
    let mut out = csv::Writer::from_writer(w);
    out.write_record(["bar_index", "error_s"])?;
    for e in errors {
        out.write_record([e.bar_index.to_string(), e.error_s.to_string()])?;
    }
    out.flush()?;
    Ok(())
}

pub fn read_error_curve<R: Read>(r: R) -> Result<Vec<(usize, f64)>, EvalError> {
    let mut rows = Vec::new();
    for_each_row(r, &["bar_index", "error_s"], |line, f| {
        rows.push((parse(line, "bar_index", f[0])?, parse(line, "error_s", f[1])?));
        Ok(())
    })?;
    Ok(rows)
}

pub fn write_annotations<W: Write>(w: W, bars: &[BarAnnotation]) -> Result<(), EvalError> {
    let mut out = csv::Writer::from_writer(w);
    out.write_record(["bar_index", "time_s"])?;
    for b in bars {
        out.write_record([b.bar_index.to_string(), b.time_s.to_string()])?;
    }
    out.flush()?;
    Ok(())
}

/// Reads `bar_index,time_s` rows; times must increase with the bar index.
pub fn read_annotations<R: Read>(r: R) -> Result<Vec<BarAnnotation>, EvalError> {
    let mut bars: Vec<BarAnnotation> = Vec::new();
    for_each_row(r, &["bar_index", "time_s"], |line, f| {
        let bar = BarAnnotation { bar_index: parse(line, "bar_index", f[0])?, time_s: parse(line, "time_s", f[1])? };
        if !bar.time_s.is_finite() {
            return Err(EvalError::Parse { line, msg: "time_s is not finite".into() });
        }
        if let Some(prev) = bars.last() {
            if bar.bar_index <= prev.bar_index || bar.time_s <= prev.time_s {
                return Err(EvalError::Parse {
                    line,
                    msg: format!("bar {} at {} s does not follow bar {} at {} s", bar.bar_index, bar.time_s, prev.bar_index, prev.time_s),
                });
            }
        }
        bars.push(bar);
        Ok(())
    })?;
    Ok(bars)
}

pub fn write_sections<W: Write>(w: W, sections: &[SectionMark]) -> Result<(), EvalError> {
    let mut out = csv::Writer::from_writer(w);
    out.write_record(["section_id", "start_bar", "ref_start_s", "voice_start"])?;
    for s in sections {
        out.write_record([s.id.clone(), s.start_bar.to_string(), s.time_s.to_string(), (s.voice_start as u8).to_string()])?;
    }
    out.flush()?;
    Ok(())
}

/// Reads `section_id,start_bar,ref_start_s,voice_start` rows.
pub fn read_sections<R: Read>(r: R) -> Result<Vec<SectionMark>, EvalError> {
    let mut sections: Vec<SectionMark> = Vec::new();
    for_each_row(r, &["section_id", "start_bar", "ref_start_s", "voice_start"], |line, f| {
        let voice_start = match f[3] {
            "0" => false,
            "1" => true,
            other => return Err(EvalError::Parse { line, msg: format!("voice_start must be 0 or 1, got {other:?}") }),
        };
        let s = SectionMark {
            id: f[0].to_string(),
            start_bar: parse(line, "start_bar", f[1])?,
            time_s: parse(line, "ref_start_s", f[2])?,
            voice_start,
        };
        if sections.last().is_some_and(|p| s.time_s < p.time_s || s.start_bar < p.start_bar) {
            return Err(EvalError::Parse { line, msg: format!("section {} is out of order", s.id) });
        }
        sections.push(s);
        Ok(())
    })?;
    Ok(sections)
}

fn parse<T: std::str::FromStr>(line: u64, name: &str, s: &str) -> Result<T, EvalError> {
    s.parse().map_err(|_| EvalError::Parse { line, msg: format!("{name}: cannot parse {s:?}") })
}

/// Calls `f` with the line number and the named columns of every row.
fn for_each_row<R: Read>(
    r: R,
    columns: &[&str],
    mut f: impl FnMut(u64, &[&str]) -> Result<(), EvalError>,
) -> Result<(), EvalError> {
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).flexible(true).from_reader(r);
    let headers = rdr.headers().map_err(|e| EvalError::Parse { line: 1, msg: e.to_string() })?.clone();
    let idx = columns
        .iter()
        .map(|c| headers.iter().position(|h| h == *c).ok_or_else(|| EvalError::Parse { line: 1, msg: format!("missing column {c}") }))
        .collect::<Result<Vec<_>, _>>()?;
    for rec in rdr.records() {
        let rec = rec.map_err(|e| EvalError::Parse { line: e.position().map_or(0, |p| p.line()), msg: e.to_string() })?;
        let line = rec.position().map_or(0, |p| p.line());
        let mut fields = Vec::with_capacity(columns.len());
        for (&i, c) in idx.iter().zip(columns) {
            fields.push(rec.get(i).ok_or_else(|| EvalError::Parse { line, msg: format!("missing {c}") })?);
        }
        f(line, &fields)?;
    }
    Ok(())
}
