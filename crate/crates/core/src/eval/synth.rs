//! Deterministic synthetic performances: orchestral arias, speech-like
//! recitatives, applause, coughs and improvised harpsichord interludes.
//!
//! A [`ScenarioScript`] lists the musical sections once and then the order
//! of segments in each recording. The reference plays only the sections;
//! the target may play them at other tempi and insert non-score audio
//! between them. Bar annotations come straight from the script.

use std::f64::consts::PI;
use std::sync::OnceLock;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp, StandardNormal};
use serde::{Deserialize, Serialize};

use super::{BarAnnotation, EvalError};
use crate::audio::AudioStream;
use crate::features::DetectorKind;
use crate::oltw::SectionMark;

pub const SYNTH_RATE: u32 = 44_100;
const SR: f64 = SYNTH_RATE as f64;
/// Standard deviation of the white noise under every segment.
const NOISE_FLOOR: f64 = 3e-4;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Style {
    /// Orchestral chords, bass line and a sustained melody.
    Aria,
    /// Speech-like voice over sparse harpsichord chords.
    Recitative,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SectionSpec {
    pub id: String,
    pub style: Style,
    pub bars: usize,
    #[serde(default = "default_beats")]
    pub beats_per_bar: usize,
    pub bpm: f64,
}

fn default_beats() -> usize {
    4
}

fn unit_scale() -> f64 {
    1.0
}

fn default_cough_density() -> f64 {
    0.3
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum Segment {
    /// A section from the script, played `tempo_scale` times faster than
    /// its nominal tempo.
    Section {
        id: String,
        #[serde(default = "unit_scale")]
        tempo_scale: f64,
    },
    Applause { duration_s: f64 },
    /// Low room noise with coughs at `cough_density` per second.
    Silence {
        duration_s: f64,
        #[serde(default = "default_cough_density")]
        cough_density: f64,
    },
    /// Improvised harpsichord material that is not in the score.
    Interlude { duration_s: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioScript {
    pub sections: Vec<SectionSpec>,
    pub reference: Vec<Segment>,
    pub target: Vec<Segment>,
}

/// Class labels over a time span of a recording.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LabelSegment {
    pub start_s: f64,
    pub end_s: f64,
    pub applause: bool,
    pub music: bool,
    pub speech: bool,
}

impl LabelSegment {
    pub fn get(&self, kind: DetectorKind) -> bool {
        match kind {
            DetectorKind::Applause => self.applause,
            DetectorKind::Music => self.music,
            DetectorKind::Speech => self.speech,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RenderedStream {
    pub audio: AudioStream,
    pub bars: Vec<BarAnnotation>,
    pub labels: Vec<LabelSegment>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Scenario {
    pub reference: RenderedStream,
    pub target: RenderedStream,
    /// Section starts on the reference timeline; voice flags from the style.
    pub sections: Vec<SectionMark>,
    /// Reference times of the boundaries between sections.
    pub transitions: Vec<f64>,
}

pub fn generate_scenario(script: &ScenarioScript, seed: u64) -> Result<Scenario, EvalError> {
    validate(script)?;
    let reference = render_stream(script, &script.reference, seed, "reference")?;
    let target = render_stream(script, &script.target, seed, "target")?;

    let mut sections = Vec::new();
    let mut bar = 0;
    for seg in &script.reference {
        if let Segment::Section { id, .. } = seg {
            let spec = section(script, id)?;
            sections.push(SectionMark {
                id: id.clone(),
                start_bar: bar,
                time_s: reference.bars[bar].time_s,
                voice_start: spec.style == Style::Recitative,
            });
            bar += spec.bars;
        }
    }
    let transitions = sections.iter().skip(1).map(|s| s.time_s).collect();
    Ok(Scenario { reference, target, sections, transitions })
}

fn section<'a>(script: &'a ScenarioScript, id: &str) -> Result<&'a SectionSpec, EvalError> {
    script.sections.iter().find(|s| s.id == id).ok_or_else(|| EvalError::InvalidScript(format!("unknown section {id:?}")))
}

fn section_ids(segments: &[Segment]) -> Vec<&str> {
    segments
        .iter()
        .filter_map(|s| match s {
            Segment::Section { id, .. } => Some(id.as_str()),
            _ => None,
        })
        .collect()
}

fn validate(script: &ScenarioScript) -> Result<(), EvalError> {
    let bad = |m: String| Err(EvalError::InvalidScript(m));
    if script.sections.is_empty() {
        return bad("script has no sections".into());
    }
    for (k, s) in script.sections.iter().enumerate() {
        if script.sections[..k].iter().any(|p| p.id == s.id) {
            return bad(format!("section {:?} defined twice", s.id));
        }
        if s.bars == 0 || s.beats_per_bar == 0 || !(s.bpm.is_finite() && s.bpm > 0.0) {
            return bad(format!("section {:?} needs positive bars, beats_per_bar and bpm", s.id));
        }
    }
    if let Some(seg) = script.reference.iter().find(|s| !matches!(s, Segment::Section { .. })) {
        return bad(format!("the reference may only contain sections, found {seg:?}"));
    }
    for seg in script.reference.iter().chain(&script.target) {
        match seg {
            Segment::Section { id, tempo_scale } => {
                section(script, id)?;
                if !(tempo_scale.is_finite() && *tempo_scale > 0.0) {
                    return bad(format!("section {id:?} has tempo_scale {tempo_scale}"));
                }
            }
            Segment::Applause { duration_s } | Segment::Interlude { duration_s } | Segment::Silence { duration_s, .. } => {
                if !(duration_s.is_finite() && *duration_s >= 0.0) {
                    return bad(format!("segment duration {duration_s}"));
                }
                if let Segment::Silence { cough_density, .. } = seg {
                    if !(cough_density.is_finite() && *cough_density >= 0.0) {
                        return bad(format!("cough density {cough_density}"));
                    }
                }
            }
        }
    }
    let (r, t) = (section_ids(&script.reference), section_ids(&script.target));
    if r.is_empty() {
        return bad("the reference plays no sections".into());
    }
    if r != t {
        return bad(format!("reference plays sections {r:?} but target plays {t:?}"));
    }
    if (1..r.len()).any(|k| r[..k].contains(&r[k])) {
        return bad("a section is played twice".into());
    }
    Ok(())
}

fn render_stream(script: &ScenarioScript, segments: &[Segment], seed: u64, stream: &str) -> Result<RenderedStream, EvalError> {
    let mut audio: Vec<f32> = Vec::new();
    let mut bars = Vec::new();
    let mut labels = Vec::new();
    for (k, seg) in segments.iter().enumerate() {
        let start = audio.len();
        let (chunk, label) = match seg {
            Segment::Section { id, tempo_scale } => {
                let spec = section(script, id)?;
                let (chunk, bar_offsets) = render_section(spec, *tempo_scale, seed);
                for off in bar_offsets {
                    bars.push(BarAnnotation { bar_index: bars.len(), time_s: (start + off) as f64 / SR });
                }
                let speech = spec.style == Style::Recitative;
                (chunk, (false, !speech, speech))
            }
            Segment::Applause { duration_s } => {
                (render_applause(samples_for(*duration_s), &mut rng_for(seed, &format!("{stream}/{k}/applause"))), (true, false, false))
            }
            Segment::Silence { duration_s, cough_density } => (
                render_silence(samples_for(*duration_s), *cough_density, &mut rng_for(seed, &format!("{stream}/{k}/silence"))),
                (false, false, false),
            ),
            Segment::Interlude { duration_s } => {
                (render_interlude(samples_for(*duration_s), &mut rng_for(seed, &format!("{stream}/{k}/interlude"))), (false, true, false))
            }
        };
        audio.extend_from_slice(&chunk);
        if !chunk.is_empty() {
            labels.push(LabelSegment {
                start_s: start as f64 / SR,
                end_s: audio.len() as f64 / SR,
                applause: label.0,
                music: label.1,
                speech: label.2,
            });
        }
    }
    let audio = AudioStream::new(audio, SYNTH_RATE).map_err(|e| EvalError::InvalidScript(e.to_string()))?;
    Ok(RenderedStream { audio, bars, labels })
}

fn samples_for(duration_s: f64) -> usize {
    (duration_s * SR).round() as usize
}

/// Seeded generator for one named part of a rendering.
pub(crate) fn rng_for(seed: u64, tag: &str) -> ChaCha8Rng {
    // FNV-1a, stable across platforms and releases
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in tag.bytes() {
        h ^= b as u64;
        h = h.wrapping_mul(0x0100_0000_01b3);
    }
    ChaCha8Rng::seed_from_u64(seed ^ h)
}

fn midi_hz(m: f64) -> f64 {
    440.0 * 2f64.powf((m - 69.0) / 12.0)
}

#[derive(Debug, Clone, Copy, PartialEq)]
enum Instrument {
    Strings,
    Flute,
    Bass,
    Harpsichord,
}

struct Wavetable(Vec<f32>);

const TABLE_BITS: u32 = 12;
const TABLE_LEN: usize = 1 << TABLE_BITS;

impl Wavetable {
    fn new(harmonics: &[f64]) -> Self {
        let mut t: Vec<f64> = (0..=TABLE_LEN)
            .map(|i| {
                let ph = 2.0 * PI * i as f64 / TABLE_LEN as f64;
                harmonics.iter().enumerate().map(|(k, a)| a * ((k + 1) as f64 * ph).sin()).sum()
            })
            .collect();
        let peak = t.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        t.iter_mut().for_each(|v| *v /= peak);
        Self(t.into_iter().map(|v| v as f32).collect())
    }

    #[inline]
    fn at(&self, phase: f64) -> f32 {
        let x = phase * TABLE_LEN as f64;
        let i = x as usize & (TABLE_LEN - 1);
        let f = (x - x.floor()) as f32;
        self.0[i] + f * (self.0[i + 1] - self.0[i])
    }
}

fn table(inst: Instrument) -> &'static Wavetable {
    static TABLES: OnceLock<[Wavetable; 4]> = OnceLock::new();
    let t = TABLES.get_or_init(|| {
        let h = |n: usize, p: f64| (1..=n).map(|k| (k as f64).powf(-p)).collect::<Vec<_>>();
        [
            Wavetable::new(&h(12, 1.0)),
            Wavetable::new(&[1.0, 0.4, 0.15, 0.06]),
            Wavetable::new(&h(8, 1.5)),
            Wavetable::new(&h(16, 0.8)),
        ]
    });
    &t[inst as usize]
}

fn glottal_table() -> &'static Wavetable {
    static T: OnceLock<Wavetable> = OnceLock::new();
    T.get_or_init(|| Wavetable::new(&(1..=30).map(|k| 1.0 / k as f64).collect::<Vec<_>>()))
}

/// A note in beats, so one event list serves every tempo.
#[derive(Debug, Clone, Copy)]
struct Note {
    start: f64,
    len: f64,
    midi: f64,
    amp: f64,
    inst: Instrument,
}

/// One syllable of the synthetic voice, in beats.
#[derive(Debug, Clone, Copy)]
struct Syllable {
    start: f64,
    len: f64,
    vowel: usize,
    f0: (f64, f64),
    // pitch bend at mid-syllable, in semitones
    bend: f64,
    consonant: bool,
    amp: f64,
}

const MAJOR: [i32; 7] = [0, 2, 4, 5, 7, 9, 11];
const MINOR: [i32; 7] = [0, 2, 3, 5, 7, 8, 10];

fn scale_note(root: i32, scale: &[i32; 7], degree: i32) -> f64 {
    let oct = degree.div_euclid(7);
    (root + 12 * oct + scale[degree.rem_euclid(7) as usize]) as f64
}

fn aria_events(spec: &SectionSpec, rng: &mut ChaCha8Rng) -> Vec<Note> {
    let root = rng.gen_range(50..60);
    let scale = if rng.gen_bool(0.5) { &MAJOR } else { &MINOR };
    let beats = spec.bars * spec.beats_per_bar;
    let mut notes = Vec::new();
    let mut degree = 0i32;
    let mut melody = 9i32;
    for b in 0..beats {
        let downbeat = b % spec.beats_per_bar == 0;
        if downbeat || rng.gen_bool(0.35) {
            degree = [0, 3, 4, 5, 1, 2][rng.gen_range(0..6)];
        }
        let beat = b as f64;
        for (i, d) in [0, 2, 4].into_iter().enumerate() {
            notes.push(Note { start: beat, len: 1.0, midi: scale_note(root, scale, degree + d) + 12.0, amp: 0.05 - 0.008 * i as f64, inst: Instrument::Strings });
        }
        if downbeat {
            notes.push(Note {
                start: beat,
                len: spec.beats_per_bar as f64,
                midi: scale_note(root, scale, degree) - 12.0,
                amp: 0.09,
                inst: Instrument::Bass,
            });
        }
        // melody in half beats, mostly stepwise
        for h in 0..2 {
            if rng.gen_bool(0.15) {
                continue;
            }
            melody = (melody + rng.gen_range(-2..=2)).clamp(5, 14);
            notes.push(Note {
                start: beat + 0.5 * h as f64,
                len: 0.5,
                midi: scale_note(root, scale, melody) + 12.0,
                amp: 0.07,
                inst: Instrument::Flute,
            });
        }
    }
    notes
}

fn recitative_events(spec: &SectionSpec, rng: &mut ChaCha8Rng) -> (Vec<Note>, Vec<Syllable>) {
    let root = rng.gen_range(48..58);
    let scale = if rng.gen_bool(0.5) { &MAJOR } else { &MINOR };
    let mut notes = Vec::new();
    let mut syllables = Vec::new();
    for bar in 0..spec.bars {
        let start = (bar * spec.beats_per_bar) as f64;
        let degree = [0, 3, 4, 5][rng.gen_range(0..4)];
        for d in [0, 2, 4, 7] {
            notes.push(Note { start, len: 1.5, midi: scale_note(root, scale, degree + d) + 12.0, amp: 0.025, inst: Instrument::Harpsichord });
        }
        notes.push(Note { start, len: spec.beats_per_bar as f64, midi: scale_note(root, scale, degree) - 12.0, amp: 0.04, inst: Instrument::Harpsichord });

        // a phrase per bar: a pitch level, syllables on half beats, a breath at the end
        let base = rng.gen_range(110.0..200.0);
        let slots = 2 * spec.beats_per_bar - 1;
        for s in 0..slots {
            let f_start = base * 2f64.powf(rng.gen_range(-3.0..4.0) / 12.0);
            let f_end = f_start * 2f64.powf(rng.gen_range(-4.0..3.0) / 12.0);
            syllables.push(Syllable {
                start: start + 0.5 * s as f64,
                len: 0.5 * rng.gen_range(0.7..0.95),
                vowel: rng.gen_range(0..VOWELS.len()),
                f0: (f_start, f_end),
                bend: rng.gen_range(-1.5..1.5),
                consonant: rng.gen_bool(0.6),
                amp: rng.gen_range(0.7..1.0),
            });
        }
    }
    (notes, syllables)
}

/// Renders a section and returns its samples and the sample offset of each
/// bar start.
fn render_section(spec: &SectionSpec, tempo_scale: f64, seed: u64) -> (Vec<f32>, Vec<usize>) {
    let beat_s = 60.0 / (spec.bpm * tempo_scale);
    let beats = spec.bars * spec.beats_per_bar;
    let len = (beats as f64 * beat_s * SR).round() as usize;
    let bars = (0..spec.bars).map(|b| ((b * spec.beats_per_bar) as f64 * beat_s * SR).round() as usize).collect();
    let mut rng = rng_for(seed, &format!("section/{}", spec.id));
    let mut buf = vec![0.0f32; len];
    match spec.style {
        Style::Aria => {
            for n in aria_events(spec, &mut rng) {
                add_note(&mut buf, n, beat_s);
            }
        }
        Style::Recitative => {
            let (notes, syllables) = recitative_events(spec, &mut rng);
            for n in notes {
                add_note(&mut buf, n, beat_s);
            }
            let mut voice_rng = rng_for(seed, &format!("voice/{}", spec.id));
            for s in syllables {
                add_syllable(&mut buf, s, beat_s, &mut voice_rng);
            }
        }
    }
    add_floor(&mut buf, &mut rng_for(seed, &format!("floor/{}", spec.id)));
    (buf, bars)
}

fn add_note(buf: &mut [f32], n: Note, beat_s: f64) {
    let start = (n.start * beat_s * SR).round() as usize;
    let hold = (n.len * beat_s * SR).round() as usize;
    let (attack, release, tau) = match n.inst {
        Instrument::Harpsichord => (0.002, 0.03, 0.25 + 0.3 * (60.0 / n.midi.max(30.0))),
        _ => (0.02, 0.06, f64::INFINITY),
    };
    let attack = (attack * SR) as usize;
    let release = (release * SR) as usize;
    let end = (start + hold + release).min(buf.len());
    let inc = midi_hz(n.midi) / SR;
    let tab = table(n.inst);
    let decay = if tau.is_finite() { (-1.0 / (tau * SR)).exp() } else { 1.0 };
    let mut level = 1.0;
    let mut phase = 0.0;
    for (i, out) in buf[start.min(end)..end].iter_mut().enumerate() {
        let mut env = if i < attack { i as f64 / attack as f64 } else { level };
        if !tau.is_finite() && i >= attack {
            // sustain settles to 0.75 after the attack
            env = 0.75 + 0.25 * (-((i - attack) as f64) / (0.1 * SR)).exp();
        }
        if i >= hold {
            env *= 1.0 - (i - hold) as f64 / release as f64;
        }
        *out += (n.amp * env) as f32 * tab.at(phase);
        phase += inc;
        if phase >= 1.0 {
            phase -= 1.0;
        }
        if i >= attack {
            level *= decay;
        }
    }
}

/// Formant frequencies and bandwidths (Hz) of five vowels.
const VOWELS: [[(f64, f64); 3]; 5] = [
    [(800.0, 80.0), (1200.0, 90.0), (2500.0, 120.0)],
    [(500.0, 60.0), (1900.0, 100.0), (2500.0, 120.0)],
    [(300.0, 50.0), (2300.0, 100.0), (3000.0, 120.0)],
    [(500.0, 70.0), (900.0, 80.0), (2400.0, 120.0)],
    [(320.0, 50.0), (800.0, 80.0), (2300.0, 120.0)],
];
const FORMANT_GAIN: [f64; 3] = [1.0, 0.5, 0.25];
const VOICE_GAIN: f64 = 0.9;

/// Constant-peak band-pass biquad.
#[derive(Debug, Clone, Copy)]
struct Biquad {
    b0: f64,
    b2: f64,
    a1: f64,
    a2: f64,
    x1: f64,
    x2: f64,
    y1: f64,
    y2: f64,
}

impl Biquad {
    fn band_pass(freq: f64, q: f64) -> Self {
        let w = 2.0 * PI * freq / SR;
        let alpha = w.sin() / (2.0 * q);
        let a0 = 1.0 + alpha;
        Self { b0: alpha / a0, b2: -alpha / a0, a1: -2.0 * w.cos() / a0, a2: (1.0 - alpha) / a0, x1: 0.0, x2: 0.0, y1: 0.0, y2: 0.0 }
    }

    #[inline]
    fn process(&mut self, x: f64) -> f64 {
        let y = self.b0 * x + self.b2 * self.x2 - self.a1 * self.y1 - self.a2 * self.y2;
        self.x2 = self.x1;
        self.x1 = x;
        self.y2 = self.y1;
        self.y1 = y;
        y
    }
}

fn add_syllable(buf: &mut [f32], s: Syllable, beat_s: f64, rng: &mut ChaCha8Rng) {
    let start = (s.start * beat_s * SR).round() as usize;
    let len = (s.len * beat_s * SR).round() as usize;
    let end = (start + len).min(buf.len());
    if start >= end {
        return;
    }
    let n = end - start;
    let mut filters = VOWELS[s.vowel].map(|(f, bw)| Biquad::band_pass(f, f / bw));
    let glottal = glottal_table();
    let rise = (0.025 * SR) as usize;
    let fall = (0.05 * SR) as usize;
    // consonant: a short band-limited noise burst before the vowel
    let cons = if s.consonant { (0.04 * SR) as usize } else { 0 }.min(n / 3);
    let mut hiss = Biquad::band_pass(rng.gen_range(3500.0..6500.0), 1.5);
    let mut phase = 0.0;
    for i in 0..n {
        let u = i as f64 / n as f64;
        let mut out = 0.0;
        if i < cons {
            let x: f64 = rng.sample(StandardNormal);
            out += 0.25 * hiss.process(x) * (1.0 - i as f64 / cons as f64);
        } else {
            let v = i - cons;
            let vn = n - cons;
            let env = (v as f64 / rise as f64).min(1.0) * ((vn - v) as f64 / fall as f64).min(1.0);
            // glide from f0.0 to f0.1 with a bend in the middle
            let f0 = s.f0.0 * (s.f0.1 / s.f0.0).powf(u) * 2f64.powf(s.bend * (PI * u).sin() / 12.0);
            let src = glottal.at(phase) as f64;
            phase += f0 / SR;
            if phase >= 1.0 {
                phase -= 1.0;
            }
            let shaped: f64 = filters.iter_mut().zip(FORMANT_GAIN).map(|(f, g)| g * f.process(src)).sum();
            out += VOICE_GAIN * s.amp * env * shaped;
        }
        buf[start + i] += out as f32;
    }
}

fn add_floor(buf: &mut [f32], rng: &mut ChaCha8Rng) {
    for v in buf.iter_mut() {
        *v += (NOISE_FLOOR * rng.sample::<f64, _>(StandardNormal)) as f32;
    }
}

/// Adds a burst of filtered noise with an exponential decay.
fn add_burst(buf: &mut [f32], at: usize, len_s: f64, tau_s: f64, freq: f64, q: f64, amp: f64, rng: &mut ChaCha8Rng) {
    let len = (len_s * SR) as usize;
    let end = (at + len).min(buf.len());
    let mut f = Biquad::band_pass(freq, q);
    let k = (-1.0 / (tau_s * SR)).exp();
    let mut env = amp;
    for v in &mut buf[at.min(end)..end] {
        let x: f64 = rng.sample(StandardNormal);
        *v += (env * f.process(x)) as f32;
        env *= k;
    }
}

/// Crowd applause: many short band-limited claps with a swell and a fade.
fn render_applause(len: usize, rng: &mut ChaCha8Rng) -> Vec<f32> {
    let mut buf = vec![0.0f32; len];
    let dur = len as f64 / SR;
    let rate = rng.gen_range(120.0..220.0);
    let level = rng.gen_range(0.6..1.2);
    let swell = rng.gen_range(0.4..1.2f64).min(dur / 3.0);
    let fade = rng.gen_range(1.0..2.5f64).min(dur / 3.0);
    let gaps = Exp::new(rate).expect("positive rate");
    let mut t = gaps.sample(rng);
    while t < dur {
        let env = (t / swell).min(1.0) * ((dur - t) / fade).min(1.0);
        if rng.gen::<f64>() < env {
            let at = (t * SR) as usize;
            let amp = level * rng.gen_range(0.08..0.25);
            add_burst(&mut buf, at, 0.025, rng.gen_range(0.002..0.006), rng.gen_range(700.0..2800.0), rng.gen_range(0.8..2.0), amp, rng);
        }
        t += gaps.sample(rng);
    }
    add_floor(&mut buf, rng);
    buf
}

/// Quiet room noise with coughs.
fn render_silence(len: usize, cough_density: f64, rng: &mut ChaCha8Rng) -> Vec<f32> {
    let mut buf = vec![0.0f32; len];
    // brown-ish rumble
    let mut lp = 0.0;
    for v in buf.iter_mut() {
        let x: f64 = rng.sample(StandardNormal);
        lp += 0.02 * (x - lp);
        *v = (0.01 * lp) as f32;
    }
    if cough_density > 0.0 {
        let gaps = Exp::new(cough_density).expect("positive density");
        let dur = len as f64 / SR;
        let mut t = gaps.sample(rng);
        while t < dur {
            let at = (t * SR) as usize;
            let freq = rng.gen_range(350.0..1400.0);
            let amp = rng.gen_range(0.15..0.5);
            add_burst(&mut buf, at, 0.05, 0.012, freq, 1.0, amp, rng);
            if rng.gen_bool(0.4) {
                // a second, weaker bark
                add_burst(&mut buf, at + (0.09 * SR) as usize, 0.05, 0.01, freq * 1.1, 1.0, 0.6 * amp, rng);
            }
            t += gaps.sample(rng);
        }
    }
    add_floor(&mut buf, rng);
    buf
}

/// Improvised harpsichord arpeggios.
fn render_interlude(len: usize, rng: &mut ChaCha8Rng) -> Vec<f32> {
    let mut buf = vec![0.0f32; len];
    let root = rng.gen_range(48..58);
    let scale = if rng.gen_bool(0.5) { &MAJOR } else { &MINOR };
    let step_s = rng.gen_range(0.11..0.16);
    let steps = (len as f64 / SR / step_s) as usize;
    let mut degree = 0;
    for i in 0..steps {
        if i % 8 == 0 {
            degree = [0, 3, 4, 5][rng.gen_range(0..4)];
            add_note(&mut buf, Note { start: i as f64, len: 8.0, midi: scale_note(root, scale, degree) - 12.0, amp: 0.05, inst: Instrument::Harpsichord }, step_s);
        }
        let up = [0, 2, 4, 7, 9, 11, 14, 11][i % 8];
        add_note(
            &mut buf,
            Note { start: i as f64, len: 1.5, midi: scale_note(root, scale, degree + up) + 12.0, amp: 0.045, inst: Instrument::Harpsichord },
            step_s,
        );
    }
    add_floor(&mut buf, rng);
    buf
}

/// Short fades at both ends of a chunk.
fn fade_edges(buf: &mut [f32]) {
    let n = ((0.005 * SR) as usize).min(buf.len() / 2);
    let len = buf.len();
    for i in 0..n {
        let g = i as f32 / n as f32;
        buf[i] *= g;
        buf[len - 1 - i] *= g;
    }
}

/// The kinds of material in the detector training corpus.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Material {
    Aria,
    Harpsichord,
    Voice,
    Recitative,
    Applause,
    Silence,
}

impl Material {
    pub const ALL: [Material; 6] =
        [Material::Aria, Material::Harpsichord, Material::Voice, Material::Recitative, Material::Applause, Material::Silence];

    fn label(self) -> (bool, bool, bool) {
        match self {
            Material::Aria | Material::Harpsichord => (false, true, false),
            Material::Voice | Material::Recitative => (false, false, true),
            Material::Applause => (true, false, false),
            Material::Silence => (false, false, false),
        }
    }
}

/// `duration_s` of one material, rendered from `rng`.
pub fn render_material(material: Material, duration_s: f64, rng: &mut ChaCha8Rng) -> Vec<f32> {
    let len = samples_for(duration_s);
    let mut buf = match material {
        Material::Applause => render_applause(len, rng),
        Material::Silence => {
            let density = rng.gen_range(0.0..1.0);
            render_silence(len, density, rng)
        }
        Material::Harpsichord => render_interlude(len, rng),
        Material::Aria | Material::Recitative | Material::Voice => {
            let style = if material == Material::Aria { Style::Aria } else { Style::Recitative };
            let beats_per_bar = rng.gen_range(3..=4);
            let bpm = rng.gen_range(70.0..130.0);
            let bar_s = beats_per_bar as f64 * 60.0 / bpm;
            let spec = SectionSpec { id: format!("m{}", rng.gen::<u32>()), style, bars: (duration_s / bar_s).ceil() as usize + 1, beats_per_bar, bpm };
            let seed = rng.gen();
            let mut buf = if material == Material::Voice {
                let mut r = rng_for(seed, &format!("section/{}", spec.id));
                let (_, syllables) = recitative_events(&spec, &mut r);
                let mut buf = vec![0.0f32; samples_for(spec.bars as f64 * bar_s)];
                let mut vr = rng_for(seed, &format!("voice/{}", spec.id));
                for s in syllables {
                    add_syllable(&mut buf, s, 60.0 / bpm, &mut vr);
                }
                add_floor(&mut buf, rng);
                buf
            } else {
                render_section(&spec, 1.0, seed).0
            };
            // start anywhere inside the first bar
            let skip = rng.gen_range(0..samples_for(bar_s).max(1));
            buf.drain(..skip.min(buf.len()));
            buf.resize(len, 0.0);
            buf
        }
    };
    fade_edges(&mut buf);
    buf
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CorpusSpec {
    /// Minimum minutes of applause, of music and of speech.
    pub minutes_per_class: f64,
    /// Minutes of audio with none of the three.
    pub silence_minutes: f64,
    pub clip_s: f64,
    pub min_segment_s: f64,
    pub max_segment_s: f64,
}

impl Default for CorpusSpec {
    fn default() -> Self {
        Self { minutes_per_class: 30.0, silence_minutes: 10.0, clip_s: 60.0, min_segment_s: 2.0, max_segment_s: 10.0 }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LabeledClip {
    pub name: String,
    pub audio: AudioStream,
    pub labels: Vec<LabelSegment>,
}

/// Clips of randomly ordered material until every class has its quota.
/// Each new segment picks the class furthest below its quota.
pub fn generate_corpus(spec: &CorpusSpec, seed: u64) -> Vec<LabeledClip> {
    let mut rng = rng_for(seed, "corpus");
    let quota = [spec.minutes_per_class, spec.minutes_per_class, spec.minutes_per_class, spec.silence_minutes].map(|m| m * 60.0);
    let mut have = [0.0f64; 4];
    let mut clips = Vec::new();
    while (0..4).any(|c| have[c] < quota[c]) {
        let mut audio = Vec::new();
        let mut labels = Vec::new();
        while (audio.len() as f64) < spec.clip_s * SR && (0..4).any(|c| have[c] < quota[c]) {
            let class = (0..4)
                .max_by(|&a, &b| (1.0 - have[a] / quota[a].max(1e-9)).total_cmp(&(1.0 - have[b] / quota[b].max(1e-9))))
                .unwrap_or(0);
            let material = match class {
                0 => Material::Applause,
                1 => [Material::Aria, Material::Harpsichord][rng.gen_range(0..2)],
                2 => [Material::Voice, Material::Recitative][rng.gen_range(0..2)],
                _ => Material::Silence,
            };
            let dur = rng.gen_range(spec.min_segment_s..=spec.max_segment_s);
            let chunk = render_material(material, dur, &mut rng);
            let start = audio.len() as f64 / SR;
            audio.extend_from_slice(&chunk);
            let (applause, music, speech) = material.label();
            labels.push(LabelSegment { start_s: start, end_s: audio.len() as f64 / SR, applause, music, speech });
            have[class] += dur;
        }
        let name = format!("clip{:04}", clips.len());
        clips.push(LabeledClip { name, audio: AudioStream::new(audio, SYNTH_RATE).expect("valid rate"), labels });
    }
    clips
}

/// Labels for `n` detector frames of 100 ms every 20 ms, judged at each
/// frame's centre.
pub fn frame_labels(labels: &[LabelSegment], n: usize, kind: DetectorKind) -> Vec<f32> {
    let geom = crate::audio::FrameGeometry::DETECTOR;
    (0..n)
        .map(|k| {
            let t = geom.frame_time(k) + geom.window_ms as f64 / 2000.0;
            labels.iter().find(|l| l.start_s <= t && t < l.end_s).is_some_and(|l| l.get(kind)) as u8 as f32
        })
        .collect()
}

/// The four failure structures: applause then silence at a boundary, in
/// two of them followed by an improvised interlude before a recitative.
pub fn jump_scenario(jump: usize) -> ScenarioScript {
    let (applause, silence, interlude) = match jump {
        1 => (15.0, 54.0, 0.0),
        2 => (14.0, 17.0, 0.0),
        3 => (12.0, 51.0, 17.0),
        _ => (26.0, 24.0, 18.0),
    };
    let id = |s: &str| format!("j{jump}-{s}");
    let sections = vec![
        SectionSpec { id: id("aria"), style: Style::Aria, bars: 14, beats_per_bar: 4, bpm: 84.0 },
        SectionSpec { id: id("recit"), style: Style::Recitative, bars: 16, beats_per_bar: 4, bpm: 104.0 },
        SectionSpec { id: id("finale"), style: Style::Aria, bars: 12, beats_per_bar: 3, bpm: 96.0 },
    ];
    let sec = |s: &str, tempo_scale: f64| Segment::Section { id: id(s), tempo_scale };
    let reference = vec![sec("aria", 1.0), sec("recit", 1.0), sec("finale", 1.0)];
    let mut target = vec![sec("aria", 0.95), Segment::Applause { duration_s: applause }, Segment::Silence { duration_s: silence, cough_density: 0.4 }];
    if interlude > 0.0 {
        target.push(Segment::Interlude { duration_s: interlude });
    }
    target.extend([sec("recit", 1.06), sec("finale", 1.03)]);
    ScenarioScript { sections, reference, target }
}

/// Seconds of non-score audio the target inserts.
pub fn inserted_duration(script: &ScenarioScript) -> f64 {
    script
        .target
        .iter()
        .map(|s| match s {
            Segment::Section { .. } => 0.0,
            Segment::Applause { duration_s } | Segment::Interlude { duration_s } | Segment::Silence { duration_s, .. } => *duration_s,
        })
        .sum()
}
