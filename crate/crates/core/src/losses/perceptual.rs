//! Fixed analysis maps whose activations are compared in the perceptual
//! losses: log-mel energies for phonetic content and framed normalized
//! autocorrelation for pitch structure.

use std::sync::Arc;

use crate::autodiff::{AutocorrSpec, Graph, Unary, Var};
use crate::dsp::mel::MelFilterbank;
use crate::dsp::LOG_FLOOR;
use crate::real::Real;

use super::{LossError, Result};

pub trait PerceptualExtractor<T: Real>: Send + Sync {
    fn id(&self) -> &str;
    /// Activations of a `[1, T]` waveform.
    fn activations(&self, g: &mut Graph<T>, x: Var) -> Result<Var>;
}

/// `ln(mel . |DFT|^2 + floor)` per frame.
pub struct MelActivations<T> {
    pub fft: usize,
    pub hop: usize,
    pub bands: usize,
    matrix: Arc<Vec<T>>,
}

impl<T: Real> MelActivations<T> {
    pub fn new(fft: usize, hop: usize, bands: usize, sample_rate: u32) -> Self {
        let fb = MelFilterbank::new(bands, fft, sample_rate);
        Self {
            fft,
            hop,
            bands,
            matrix: Arc::new(fb.weights.iter().map(|&w| T::lit(w)).collect()),
        }
    }

    /// Matches the phonetic feature extractor: 1024-point frames, hop 256, 40 bands.
    pub fn standard(sample_rate: u32) -> Self {
        Self::new(1024, 256, crate::dsp::mel::MEL_BANDS, sample_rate)
    }
}

impl<T: Real> PerceptualExtractor<T> for MelActivations<T> {
    fn id(&self) -> &str {
        "mel-activations"
    }

    fn activations(&self, g: &mut Graph<T>, x: Var) -> Result<Var> {
        let s = g.dft_magnitude(x, self.fft, self.hop)?;
        let p = g.unary(Unary::Square, s)?;
        let m = g.project(p, self.matrix.clone(), self.bands)?;
        let m = g.offset(m, T::lit(LOG_FLOOR))?;
        Ok(g.unary(Unary::Ln, m)?)
    }
}

/// Normalized autocorrelation over lags covering `[fmin, fmax]`.
pub struct PitchActivations {
    pub spec: AutocorrSpec,
}

impl PitchActivations {
    pub fn new(sample_rate: u32, frame: usize, hop: usize, fmin: f64, fmax: f64) -> Self {
        let sr = sample_rate as f64;
        let min_lag = ((sr / fmax).floor() as usize).max(1);
        let max_lag = ((sr / fmin).ceil() as usize).min(frame - 1).max(min_lag);
        Self {
            spec: AutocorrSpec {
                frame,
                hop,
                min_lag,
                max_lag,
            },
        }
    }

    /// 1024-sample frames, hop 256, lags for 80-600 Hz.
    pub fn standard(sample_rate: u32) -> Self {
        Self::new(sample_rate, 1024, 256, 80.0, 600.0)
    }
}

impl<T: Real> PerceptualExtractor<T> for PitchActivations {
    fn id(&self) -> &str {
        "autocorr-activations"
    }

    fn activations(&self, g: &mut Graph<T>, x: Var) -> Result<Var> {
        Ok(g.autocorr(x, self.spec)?)
    }
}

/// Mean absolute difference of activations.
pub fn perceptual_loss<T: Real>(
    g: &mut Graph<T>,
    e: &dyn PerceptualExtractor<T>,
    x: Var,
    x_hat: Var,
) -> Result<Var> {
    let (lx, ly) = (g.value(x).len(), g.value(x_hat).len());
    if lx != ly {
        return Err(LossError::LengthMismatch {
            reference: lx,
            estimate: ly,
        });
    }
    let a = e.activations(g, x)?;
    let b = e.activations(g, x_hat)?;
    let d = g.sub(a, b)?;
    let d = g.unary(Unary::Abs, d)?;
    Ok(g.mean(d)?)
}
