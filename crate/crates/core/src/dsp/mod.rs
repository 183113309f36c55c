//! Conditioning features and spectral analysis.
//!
//! All conditioning tracks share one [`FrameGrid`] (hop 256, frame 1024 by
//! default), so loudness, phonetic frames and the framed excitation line up
//! exactly before they are concatenated and upsampled.

pub mod excitation;
pub mod frames;
pub mod loudness;
pub mod mel;
pub mod pitch;
pub mod stft;
pub mod svcf;

use thiserror::Error;

use crate::audio_io::Waveform;
use crate::real::Real;

pub use excitation::{synthesize_excitation, ExcitationSynth};
pub use frames::FrameGrid;
pub use loudness::{a_weighted_loudness, a_weighting_db, LoudnessMeter, LoudnessTrack};
pub use mel::{phonetic_features, MelStack, PhoneticFeatures};
pub use pitch::{estimate_f0, estimate_f0_with, F0Track, PitchSettings, YinTracker};
pub use stft::{stft_magnitude, Spectrogram};
pub use svcf::{ingest_features, write_svcf, FeatureFile, FeatureKind};

/// Energy floor added before every log of a possibly-zero energy.
pub const LOG_FLOOR: f64 = 1e-10;
pub const DEFAULT_HOP: usize = 256;
pub const DEFAULT_FRAME: usize = 1024;

#[derive(Debug, Error)]
pub enum DspError {
    #[error("invalid frame grid {0:?}")]
    BadGrid(FrameGrid),
    #[error("fft size {0} is not a power of two")]
    FftSize(usize),
    #[error("hop must be >= 1")]
    Hop,
    #[error("fft size {fft_size} too large for {len} samples (reflect padding needs len > fft/2)")]
    FftTooLarge { fft_size: usize, len: usize },
    #[error("pitch range requires 0 < fmin < fmax < nyquist (got {fmin}..{fmax})")]
    PitchRange { fmin: f64, fmax: f64 },
    #[error("frame size {frame_size} shorter than two periods of fmin ({needed})")]
    PitchFrame { frame_size: usize, needed: usize },
    #[error("feature grids disagree: {0}")]
    GridMismatch(String),
    #[error("bad magic")]
    SvcfBadMagic,
    #[error("version mismatch: file version {0}, supported 1")]
    SvcfVersion(u32),
    #[error("truncated payload: expected {expected} bytes, found {found}")]
    SvcfTruncated { expected: usize, found: usize },
    #[error("malformed svcf: {0}")]
    Svcf(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, DspError>;

/// The full conditioning set for one waveform.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureBundle<T> {
    pub grid: FrameGrid,
    pub n_samples: usize,
    pub loudness: LoudnessTrack<T>,
    pub phonetic: PhoneticFeatures<T>,
    pub f0: F0Track<T>,
    /// Sine excitation, `grid.n_frames * grid.hop` samples long.
    pub excitation: Vec<T>,
}

impl<T: Real> FeatureBundle<T> {
    /// Assembles a bundle from separately obtained tracks, checking that all
    /// of them sit on the same grid.
    pub fn from_tracks(
        n_samples: usize,
        loudness: LoudnessTrack<T>,
        phonetic: PhoneticFeatures<T>,
        f0: F0Track<T>,
    ) -> Result<Self> {
        let grid = f0.grid;
        let n = grid.frames_for(n_samples);
        for (name, g) in [("loudness", loudness.grid), ("phonetic", phonetic.grid)] {
            if g.hop != grid.hop || g.sample_rate != grid.sample_rate {
                return Err(DspError::GridMismatch(format!(
                    "{name} hop/rate {}/{} vs f0 {}/{}",
                    g.hop, g.sample_rate, grid.hop, grid.sample_rate
                )));
            }
        }
        let counts = [loudness.loud_db.len(), phonetic.n_frames(), f0.len()];
        if counts.iter().any(|&c| c != n) {
            return Err(DspError::GridMismatch(format!(
                "frame counts {counts:?}, expected {n} for {n_samples} samples"
            )));
        }
        let grid = FrameGrid { n_frames: n, ..grid };
        let excitation = synthesize_excitation(&f0, grid.upsampled_len()).samples;
        Ok(Self {
            grid,
            n_samples,
            loudness,
            phonetic,
            f0,
            excitation,
        })
    }
}

/// Built-in extractor bundle: loudness, mel-stack phonetic frames, YIN F0.
pub struct Analyzer<T: Real> {
    pub grid: FrameGrid,
    pub pitch: PitchSettings,
    loudness: LoudnessMeter<T>,
    mel: MelStack<T>,
    yin: YinTracker,
}

impl<T: Real> Analyzer<T> {
    /// `grid.n_frames` is ignored; only frame size, hop and rate matter.
    pub fn new(grid: FrameGrid, pitch: PitchSettings) -> Result<Self> {
        grid.validate()?;
        if !grid.frame_size.is_power_of_two() {
            return Err(DspError::FftSize(grid.frame_size));
        }
        Ok(Self {
            loudness: LoudnessMeter::new(&grid),
            mel: MelStack::new(&grid),
            yin: YinTracker::new(&grid, pitch)?,
            grid,
            pitch,
        })
    }

    pub fn with_defaults(sample_rate: u32) -> Result<Self> {
        Self::new(
            FrameGrid {
                frame_size: DEFAULT_FRAME,
                hop: DEFAULT_HOP,
                n_frames: 1,
                sample_rate,
            },
            PitchSettings::default(),
        )
    }

    pub fn phonetic_dim(&self) -> usize {
        self.mel.dim()
    }

    /// Minimum signal length the reflect-padded framing accepts.
    pub fn min_samples(&self) -> usize {
        self.grid.frame_size / 2 + 1
    }

    /// Features of frame `f` of `x`: `(loudness, f0, confidence)`, with the
    /// phonetic vector written to `phon`.
    pub fn frame(&self, x: &[T], f: usize, phon: &mut [T]) -> (T, T, T) {
        let loud = self.loudness.frame(x, f);
        self.mel.frame(x, f, phon);
        let (f0, conf) = self.yin.frame(x, f);
        (loud, f0, conf)
    }

    pub fn analyze(&self, w: &Waveform<T>) -> Result<FeatureBundle<T>> {
        w.validate().map_err(|e| DspError::Svcf(e.to_string()))?;
        stft::check_fft(self.grid.frame_size, self.grid.hop, w.len())?;
        let n = self.grid.frames_for(w.len());
        let dim = self.phonetic_dim();
        let grid = FrameGrid { n_frames: n, ..self.grid };
        let per_frame = crate::par::map(n, |f| {
            let mut phon = vec![T::zero(); dim];
            let (l, f0, c) = self.frame(&w.samples, f, &mut phon);
            (l, f0, c, phon)
        });
        let mut loud = Vec::with_capacity(n);
        let mut f0 = Vec::with_capacity(n);
        let mut conf = Vec::with_capacity(n);
        let mut phon = Vec::with_capacity(n * dim);
        for (l, f, c, p) in per_frame {
            loud.push(l);
            f0.push(f);
            conf.push(c);
            phon.extend(p);
        }
        FeatureBundle::from_tracks(
            w.len(),
            LoudnessTrack { loud_db: loud, grid },
            PhoneticFeatures {
                frames: phon,
                dim,
                grid,
                provider_id: mel::MELSTACK_ID.to_string(),
            },
            F0Track::from_values(f0, conf, grid),
        )
    }
}
