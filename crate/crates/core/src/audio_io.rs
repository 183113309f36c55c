//! Mono WAV input/output and fixed-length segmentation.

use std::path::Path;

use thiserror::Error;

use crate::real::Real;

#[derive(Debug, Error)]
pub enum AudioError {
    #[error("cannot open {path}: {source}")]
    Open {
        path: String,
        #[source]
        source: hound::Error,
    },
    #[error("unsupported encoding: {0}")]
    UnsupportedEncoding(String),
    #[error("channel count != 1 (found {0})")]
    ChannelCount(u16),
    #[error("sample rate {found} Hz does not match configured {expected} Hz")]
    SampleRate { found: u32, expected: u32 },
    #[error("length >= 1 violated")]
    Empty,
    #[error("non-finite sample at index {0}")]
    NonFinite(usize),
    #[error("segment length {seg_len} exceeds waveform length {len} (strict mode)")]
    SegmentTooLong { seg_len: usize, len: usize },
    #[error("segment length and hop must be >= 1")]
    BadSegmentation,
    #[error("wav i/o: {0}")]
    Wav(#[from] hound::Error),
}

pub type Result<T> = std::result::Result<T, AudioError>;

/// A mono waveform. Samples lie in `[-1, 1]` after [`read_wav`].
#[derive(Debug, Clone, PartialEq)]
pub struct Waveform<T> {
    pub samples: Vec<T>,
    pub sample_rate: u32,
}

impl<T: Real> Waveform<T> {
    pub fn new(samples: Vec<T>, sample_rate: u32) -> Self {
        Self {
            samples,
            sample_rate,
        }
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn duration_secs(&self) -> f64 {
        self.samples.len() as f64 / self.sample_rate as f64
    }

    pub fn validate(&self) -> Result<()> {
        if self.samples.is_empty() {
            return Err(AudioError::Empty);
        }
        if let Some(i) = self.samples.iter().position(|s| !s.is_finite()) {
            return Err(AudioError::NonFinite(i));
        }
        Ok(())
    }

    pub fn energy(&self) -> T {
        self.samples.iter().map(|&s| s * s).sum()
    }
}

/// Reads a mono PCM16 or float32 WAV file at `expected_rate`.
pub fn read_wav<T: Real>(path: impl AsRef<Path>, expected_rate: u32) -> Result<Waveform<T>> {
    let path = path.as_ref();
    let reader = hound::WavReader::open(path).map_err(|source| AudioError::Open {
        path: path.display().to_string(),
        source,
    })?;
    let spec = reader.spec();
    if spec.channels != 1 {
        return Err(AudioError::ChannelCount(spec.channels));
    }
    if spec.sample_rate != expected_rate {
        return Err(AudioError::SampleRate {
            found: spec.sample_rate,
            expected: expected_rate,
        });
    }
    let samples: Vec<T> = match (spec.sample_format, spec.bits_per_sample) {
        (hound::SampleFormat::Int, 16) => reader
            .into_samples::<i16>()
            .map(|s| s.map(|v| T::lit(v as f64 / 32768.0)))
            .collect::<std::result::Result<_, _>>()?,
        (hound::SampleFormat::Float, 32) => {
            let raw: Vec<f32> = reader
                .into_samples::<f32>()
                .collect::<std::result::Result<_, _>>()?;
            if let Some(i) = raw.iter().position(|s| !s.is_finite()) {
                return Err(AudioError::NonFinite(i));
            }
            raw.into_iter()
                .map(|v| T::lit(v.clamp(-1.0, 1.0) as f64))
                .collect()
        }
        (fmt, bits) => {
            return Err(AudioError::UnsupportedEncoding(format!(
                "{fmt:?} {bits}-bit"
            )))
        }
    };
    let w = Waveform::new(samples, spec.sample_rate);
    w.validate()?;
    Ok(w)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct WriteStats {
    pub clipped: usize,
}

/// Writes PCM16 little-endian mono. Out-of-range samples are clipped and counted.
pub fn write_wav<T: Real>(path: impl AsRef<Path>, w: &Waveform<T>) -> Result<WriteStats> {
    w.validate()?;
    let spec = hound::WavSpec {
        channels: 1,
        sample_rate: w.sample_rate,
        bits_per_sample: 16,
        sample_format: hound::SampleFormat::Int,
    };
    let mut writer = hound::WavWriter::create(path, spec)?;
    let mut stats = WriteStats::default();
    for &s in &w.samples {
        let v = s.to_f64_lossy();
        if v.abs() > 1.0 {
            stats.clipped += 1;
        }
        let q = (v.clamp(-1.0, 1.0) * 32768.0).round().clamp(-32768.0, 32767.0) as i16;
        writer.write_sample(q)?;
    }
    writer.finalize()?;
    if stats.clipped > 0 {
        log::warn!("clipped {} samples on write", stats.clipped);
    }
    Ok(stats)
}

/// One window produced by [`segment`].
#[derive(Debug, Clone, PartialEq)]
pub struct Segment<T> {
    pub start: usize,
    pub wave: Waveform<T>,
    /// Number of trailing zeros appended to reach `seg_len`.
    pub padding: usize,
}

impl<T> Segment<T> {
    pub fn is_padded(&self) -> bool {
        self.padding > 0
    }
}

/// Number of windows [`segment`] returns for a waveform of length `len`.
pub fn segment_count(len: usize, seg_len: usize, hop: usize) -> usize {
    len.saturating_sub(seg_len).div_ceil(hop) + 1
}

/// Cuts `w` into windows `[i*hop, i*hop + seg_len)`; the final partial
/// window is zero-padded.
pub fn segment<T: Real>(
    w: &Waveform<T>,
    seg_len: usize,
    hop: usize,
    strict: bool,
) -> Result<Vec<Segment<T>>> {
    if seg_len == 0 || hop == 0 {
        return Err(AudioError::BadSegmentation);
    }
    w.validate()?;
    let len = w.len();
    if strict && seg_len > len {
        return Err(AudioError::SegmentTooLong { seg_len, len });
    }
    let n = segment_count(len, seg_len, hop);
    Ok((0..n)
        .map(|i| {
            let start = i * hop;
            let end = (start + seg_len).min(len);
            let mut samples = w.samples[start.min(len)..end].to_vec();
            let padding = seg_len - samples.len();
            samples.resize(seg_len, T::zero());
            Segment {
                start,
                wave: Waveform::new(samples, w.sample_rate),
                padding,
            }
        })
        .collect())
}
