use crate::dsp::FeatureBundle;
use crate::real::Real;

use super::{NetsError, Result};

pub const LOUDNESS_OFFSET_DB: f64 = 50.0;
pub const LOUDNESS_SCALE_DB: f64 = 50.0;
pub const PHONETIC_OFFSET: f64 = 10.0;
pub const PHONETIC_SCALE: f64 = 10.0;

/// Normalized frame-rate conditioning, channel-major (`[channels, frames]`).
///
/// The excitation is laid out as a `hop x frames` block: channel `c` of
/// frame `f` holds excitation sample `f * hop + c`.
#[derive(Debug, Clone, PartialEq)]
pub struct CondFrames<T> {
    pub n_frames: usize,
    pub phonetic_dim: usize,
    pub hop: usize,
    pub loudness: Vec<T>,
    pub phonetic: Vec<T>,
    pub excitation: Vec<T>,
}

impl<T: Real> CondFrames<T> {
    pub fn from_bundle(b: &FeatureBundle<T>) -> Result<Self> {
        Self::from_tracks(
            &b.loudness.loud_db,
            &b.phonetic.frames,
            b.phonetic.dim,
            &b.excitation,
            b.grid.hop,
        )
    }

    /// `phonetic` is frame-major (`frames x dim`), as produced by the
    /// feature extractors; `excitation` holds at least `frames * hop`
    /// samples starting at frame 0.
    pub fn from_tracks(
        loudness_db: &[T],
        phonetic: &[T],
        phonetic_dim: usize,
        excitation: &[T],
        hop: usize,
    ) -> Result<Self> {
        let n = loudness_db.len();
        if phonetic.len() != n * phonetic_dim || excitation.len() < n * hop {
            return Err(NetsError::Features(format!(
                "{n} loudness frames, {} phonetic values (dim {phonetic_dim}), {} excitation samples (hop {hop})",
                phonetic.len(),
                excitation.len()
            )));
        }
        let (lo, ls) = (T::lit(LOUDNESS_OFFSET_DB), T::lit(LOUDNESS_SCALE_DB));
        let (po, ps) = (T::lit(PHONETIC_OFFSET), T::lit(PHONETIC_SCALE));
        let loudness = loudness_db.iter().map(|&v| (v + lo) / ls).collect();
        let mut ph = vec![T::zero(); n * phonetic_dim];
        let mut ex = vec![T::zero(); n * hop];
        for f in 0..n {
            for d in 0..phonetic_dim {
                ph[d * n + f] = (phonetic[f * phonetic_dim + d] + po) / ps;
            }
            for c in 0..hop {
                ex[c * n + f] = excitation[f * hop + c];
            }
        }
        Ok(Self {
            n_frames: n,
            phonetic_dim,
            hop,
            loudness,
            phonetic: ph,
            excitation: ex,
        })
    }

    /// Frames `[start, end)`.
    pub fn window(&self, start: usize, end: usize) -> Self {
        assert!(start <= end && end <= self.n_frames, "window {start}..{end} of {}", self.n_frames);
        let rows = |data: &[T], ch: usize| -> Vec<T> {
            (0..ch)
                .flat_map(|c| data[c * self.n_frames + start..c * self.n_frames + end].iter().copied())
                .collect()
        };
        Self {
            n_frames: end - start,
            phonetic_dim: self.phonetic_dim,
            hop: self.hop,
            loudness: rows(&self.loudness, 1),
            phonetic: rows(&self.phonetic, self.phonetic_dim),
            excitation: rows(&self.excitation, self.hop),
        }
    }
}
