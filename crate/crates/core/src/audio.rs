//! Audio decoding, canonicalization and framing.
//!
//! Everything downstream works on mono `f32` streams at [`CANONICAL_RATE`].
//! [`open_audio`] decodes a RIFF/WAVE file, averages channels to mono and
//! resamples with a windowed-sinc interpolator when needed. [`frame_stream`]
//! and [`Framer`] cut a stream into fixed-size overlapping frames whose
//! trailing partial window is zero-padded.

use std::fs::File;
use std::io::{BufReader, Read, Seek, SeekFrom};
use std::path::Path;

use thiserror::Error;

/// Sample rate every decoded stream is converted to.
pub const CANONICAL_RATE: u32 = 44_100;

#[derive(Debug, Error)]
pub enum AudioError {
    #[error("unsupported audio format: {0}")]
    UnsupportedFormat(String),
    #[error("corrupt audio file: {0}")]
    CorruptFile(String),
    #[error("audio contains no samples")]
    EmptyAudio,
    #[error("invalid frame geometry: window {window_ms} ms, hop {hop_ms} ms")]
    InvalidGeometry { window_ms: u32, hop_ms: u32 },
    #[error("invalid audio stream: {0}")]
    InvalidStream(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// A mono stream of samples in `[-1, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct AudioStream {
    samples: Vec<f32>,
    sample_rate: u32,
}

impl AudioStream {
    pub fn new(samples: Vec<f32>, sample_rate: u32) -> Result<Self, AudioError> {
        if sample_rate == 0 {
            return Err(AudioError::InvalidStream("sample rate must be positive".into()));
        }
        if let Some(i) = samples.iter().position(|s| !s.is_finite()) {
            return Err(AudioError::InvalidStream(format!("non-finite sample at index {i}")));
        }
        Ok(Self { samples, sample_rate })
    }

    pub fn samples(&self) -> &[f32] {
        &self.samples
    }

    pub fn into_samples(self) -> Vec<f32> {
        self.samples
    }

    pub fn sample_rate(&self) -> u32 {
        self.sample_rate
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn duration_s(&self) -> f64 {
        self.samples.len() as f64 / self.sample_rate as f64
    }

    pub fn rms(&self) -> f64 {
        if self.samples.is_empty() {
            return 0.0;
        }
        let sum: f64 = self.samples.iter().map(|&s| (s as f64) * (s as f64)).sum();
        (sum / self.samples.len() as f64).sqrt()
    }

    /// Returns this stream at `rate`, resampling if necessary.
    pub fn resampled(&self, rate: u32) -> AudioStream {
        if rate == self.sample_rate {
            return self.clone();
        }
        AudioStream { samples: resample(&self.samples, self.sample_rate, rate), sample_rate: rate }
    }
}

/// Decodes a WAV file into a canonical mono stream at 44.1 kHz.
pub fn open_audio(path: impl AsRef<Path>) -> Result<AudioStream, AudioError> {
    let file = File::open(path.as_ref())?;
    decode_wav(BufReader::new(file))
}

/// Decodes WAV bytes from any seekable reader. See [`open_audio`].
pub fn decode_wav<R: Read + Seek>(mut reader: R) -> Result<AudioStream, AudioError> {
    let mut magic = [0u8; 12];
    let n = read_up_to(&mut reader, &mut magic)?;
    if n < 12 || &magic[0..4] != b"RIFF" || &magic[8..12] != b"WAVE" {
        return Err(AudioError::UnsupportedFormat("not a RIFF/WAVE file".into()));
    }
    reader.seek(SeekFrom::Start(0))?;

    let wav = hound::WavReader::new(reader).map_err(map_hound)?;
    let spec = wav.spec();
    let channels = spec.channels as usize;
    if channels == 0 {
        return Err(AudioError::CorruptFile("zero channels".into()));
    }
    let interleaved: Vec<f32> = match (spec.sample_format, spec.bits_per_sample) {
        (hound::SampleFormat::Float, 32) => {
            wav.into_samples::<f32>().collect::<Result<_, _>>().map_err(map_hound)?
        }
        (hound::SampleFormat::Int, bits @ (8 | 16 | 24 | 32)) => {
            let scale = 1.0 / (1u64 << (bits - 1)) as f64;
            wav.into_samples::<i32>()
                .map(|s| s.map(|v| (v as f64 * scale) as f32))
                .collect::<Result<_, _>>()
                .map_err(map_hound)?
        }
        (fmt, bits) => {
            return Err(AudioError::UnsupportedFormat(format!("{fmt:?} with {bits} bits per sample")));
        }
    };
    if interleaved.len() % channels != 0 {
        return Err(AudioError::CorruptFile("truncated multichannel frame".into()));
    }
    let mono: Vec<f32> = if channels == 1 {
        interleaved
    } else {
        interleaved
            .chunks_exact(channels)
            .map(|c| (c.iter().map(|&s| s as f64).sum::<f64>() / channels as f64) as f32)
            .collect()
    };
    if mono.is_empty() {
        return Err(AudioError::EmptyAudio);
    }
    let stream = AudioStream::new(mono, spec.sample_rate)
        .map_err(|e| AudioError::CorruptFile(e.to_string()))?;
    Ok(stream.resampled(CANONICAL_RATE))
}

fn read_up_to<R: Read>(reader: &mut R, buf: &mut [u8]) -> std::io::Result<usize> {
    let mut filled = 0;
    while filled < buf.len() {
        match reader.read(&mut buf[filled..])? {
            0 => break,
            n => filled += n,
        }
    }
    Ok(filled)
}

fn map_hound(err: hound::Error) -> AudioError {
    match err {
        hound::Error::Unsupported => AudioError::UnsupportedFormat("unsupported WAV encoding".into()),
        hound::Error::FormatError(msg) => AudioError::CorruptFile(msg.to_string()),
        // hound reports a short sample read as a plain io error
        hound::Error::IoError(e)
            if e.kind() == std::io::ErrorKind::UnexpectedEof || e.to_string().contains("enough bytes") =>
        {
            AudioError::CorruptFile("unexpected end of file".into())
        }
        hound::Error::IoError(e) => AudioError::Io(e),
        other => AudioError::CorruptFile(other.to_string()),
    }
}

/// Writes a mono stream as 32-bit float WAV.
pub fn write_wav(path: impl AsRef<Path>, stream: &AudioStream) -> Result<(), AudioError> {
    let spec = hound::WavSpec {
        channels: 1,
        sample_rate: stream.sample_rate,
        bits_per_sample: 32,
        sample_format: hound::SampleFormat::Float,
    };
    let mut writer = hound::WavWriter::create(path, spec).map_err(map_hound)?;
    for &s in &stream.samples {
        writer.write_sample(s).map_err(map_hound)?;
    }
    writer.finalize().map_err(map_hound)
}

// Kaiser-windowed sinc, 32 zero crossings per side of the narrower band.
const SINC_HALF_WIDTH: f64 = 32.0;
const KAISER_BETA: f64 = 9.0;

/// Band-limited resampling by windowed-sinc interpolation.
///
/// The output has `round(len * to / from)` samples. The cutoff sits at 95% of
/// the lower Nyquist frequency.
pub fn resample(input: &[f32], from: u32, to: u32) -> Vec<f32> {
    if from == to || input.is_empty() {
        return input.to_vec();
    }
    let ratio = to as f64 / from as f64;
    let out_len = (input.len() as f64 * ratio).round() as usize;
    // cutoff relative to the input Nyquist
    let cutoff = 0.95 * ratio.min(1.0);
    let half_width = SINC_HALF_WIDTH / cutoff;
    let i0_beta = bessel_i0(KAISER_BETA);
    let step = from as f64 / to as f64;

    (0..out_len)
        .map(|m| {
            let t = m as f64 * step;
            let lo = (t - half_width).ceil().max(0.0) as usize;
            let hi = ((t + half_width).floor() as usize).min(input.len() - 1);
            let mut acc = 0.0;
            for (k, &x) in input.iter().enumerate().take(hi + 1).skip(lo) {
                let d = t - k as f64;
                let r = d / half_width;
                let w = bessel_i0(KAISER_BETA * (1.0 - r * r).max(0.0).sqrt()) / i0_beta;
                acc += x as f64 * cutoff * sinc(cutoff * d) * w;
            }
            acc as f32
        })
        .collect()
}

fn sinc(x: f64) -> f64 {
    if x.abs() < 1e-12 {
        1.0
    } else {
        let px = std::f64::consts::PI * x;
        px.sin() / px
    }
}

fn bessel_i0(x: f64) -> f64 {
    let mut sum = 1.0;
    let mut term = 1.0;
    let half = x / 2.0;
    for k in 1..64 {
        term *= (half / k as f64) * (half / k as f64);
        sum += term;
        if term < sum * 1e-17 {
            break;
        }
    }
    sum
}

/// Window and hop of a framing, in whole milliseconds.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub struct FrameGeometry {
    pub window_ms: u32,
    pub hop_ms: u32,
}

impl FrameGeometry {
    /// 20 ms windows every 10 ms, used for alignment features.
    pub const ALIGNMENT: FrameGeometry = FrameGeometry { window_ms: 20, hop_ms: 10 };
    /// 100 ms windows every 20 ms, used for the event detectors.
    pub const DETECTOR: FrameGeometry = FrameGeometry { window_ms: 100, hop_ms: 20 };

    pub fn new(window_ms: u32, hop_ms: u32) -> Result<Self, AudioError> {
        if hop_ms == 0 || window_ms < hop_ms {
            return Err(AudioError::InvalidGeometry { window_ms, hop_ms });
        }
        Ok(Self { window_ms, hop_ms })
    }

    pub fn window_samples(&self, sample_rate: u32) -> usize {
        (self.window_ms as f64 * sample_rate as f64 / 1000.0).round() as usize
    }

    pub fn hop_samples(&self, sample_rate: u32) -> usize {
        (self.hop_ms as f64 * sample_rate as f64 / 1000.0).round() as usize
    }

    /// Start time of frame `index`, in seconds.
    pub fn frame_time(&self, index: usize) -> f64 {
        (index as u64 * self.hop_ms as u64) as f64 / 1000.0
    }

    pub fn hop_s(&self) -> f64 {
        self.hop_ms as f64 / 1000.0
    }

    /// Number of frames cut from `len` samples.
    pub fn frame_count(&self, len: usize, sample_rate: u32) -> usize {
        len / self.hop_samples(sample_rate)
    }
}

/// One analysis window of a stream.
#[derive(Debug, Clone, PartialEq)]
pub struct FrameBuffer {
    pub index: usize,
    pub start_time: f64,
    pub samples: Vec<f32>,
}

/// Cuts a whole stream into frames. Frame `k` starts at sample `k * hop`;
/// windows running past the end are zero-padded.
pub fn frame_stream(stream: &AudioStream, geometry: FrameGeometry) -> Result<Vec<FrameBuffer>, AudioError> {
    FrameGeometry::new(geometry.window_ms, geometry.hop_ms)?;
    if stream.is_empty() {
        return Err(AudioError::EmptyAudio);
    }
    let mut framer = Framer::new(geometry, stream.sample_rate())?;
    let mut frames = framer.push(stream.samples());
    frames.extend(framer.finish());
    Ok(frames)
}

/// Incremental framer: push sample chunks of any size, receive frames in
/// order. Produces exactly the frames [`frame_stream`] would for the
/// concatenated input.
#[derive(Debug, Clone)]
pub struct Framer {
    geometry: FrameGeometry,
    window: usize,
    hop: usize,
    buffer: Vec<f32>,
    // absolute sample index of buffer[0]
    buffer_start: usize,
    total: usize,
    next_index: usize,
}

impl Framer {
    pub fn new(geometry: FrameGeometry, sample_rate: u32) -> Result<Self, AudioError> {
        FrameGeometry::new(geometry.window_ms, geometry.hop_ms)?;
        let window = geometry.window_samples(sample_rate);
        let hop = geometry.hop_samples(sample_rate);
        if hop == 0 || window == 0 {
            return Err(AudioError::InvalidGeometry { window_ms: geometry.window_ms, hop_ms: geometry.hop_ms });
        }
        Ok(Self { geometry, window, hop, buffer: Vec::new(), buffer_start: 0, total: 0, next_index: 0 })
    }

    pub fn geometry(&self) -> FrameGeometry {
        self.geometry
    }

    pub fn push(&mut self, samples: &[f32]) -> Vec<FrameBuffer> {
        self.buffer.extend_from_slice(samples);
        self.total += samples.len();
        let mut out = Vec::new();
        loop {
            let start = self.next_index * self.hop;
            if start + self.window > self.total {
                break;
            }
            out.push(self.take_frame(start));
        }
        self.compact();
        out
    }

    /// Flushes the zero-padded frames that still start inside the stream.
    pub fn finish(&mut self) -> Vec<FrameBuffer> {
        let count = self.total / self.hop;
        let mut out = Vec::new();
        while self.next_index < count {
            let start = self.next_index * self.hop;
            out.push(self.take_frame(start));
        }
        out
    }

    fn take_frame(&mut self, start: usize) -> FrameBuffer {
        let rel = start - self.buffer_start;
        let end = (rel + self.window).min(self.buffer.len());
        let mut samples = Vec::with_capacity(self.window);
        samples.extend_from_slice(&self.buffer[rel..end]);
        samples.resize(self.window, 0.0);
        let frame = FrameBuffer { index: self.next_index, start_time: self.geometry.frame_time(self.next_index), samples };
        self.next_index += 1;
        frame
    }

    fn compact(&mut self) {
        let keep_from = self.next_index * self.hop;
        if keep_from > self.buffer_start {
            let drop = (keep_from - self.buffer_start).min(self.buffer.len());
            self.buffer.drain(..drop);
            self.buffer_start += drop;
        }
    }
}
