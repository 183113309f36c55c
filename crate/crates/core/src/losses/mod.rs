//! Training objectives.
//!
//! Graph-level losses take waveforms `[1, T]` (or discriminator scores) and
//! return scalar nodes; batch sums are formed by the trainer. The plain
//! `f64` helpers at the bottom combine already-computed term values.

mod perceptual;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::autodiff::{Graph, TensorError, Unary, Var};
use crate::real::Real;

pub use perceptual::{perceptual_loss, MelActivations, PerceptualExtractor, PitchActivations};

/// Floor inside the log-magnitude.
pub const LOG_MAG_FLOOR: f64 = 1e-10;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum LossError {
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error("degenerate reference: zero spectral energy")]
    DegenerateReference,
    #[error("length mismatch: reference {reference}, estimate {estimate}")]
    LengthMismatch { reference: usize, estimate: usize },
    #[error("signal of {len} samples is shorter than fft size {fft}")]
    TooShort { len: usize, fft: usize },
    #[error("empty score tensor")]
    Empty,
    #[error("invalid scale set {0:?}: sizes must be powers of two >= 4")]
    BadScales(Vec<usize>),
    #[error("loss weights must be finite and nonnegative")]
    BadWeights,
}

pub type Result<T> = std::result::Result<T, LossError>;

fn mean_square_residual<T: Real>(g: &mut Graph<T>, target: f64, scores: Var) -> Result<Var> {
    if g.value(scores).is_empty() {
        return Err(LossError::Empty);
    }
    let r = g.offset(scores, T::lit(-target))?;
    let sq = g.unary(Unary::Square, r)?;
    Ok(g.mean(sq)?)
}

/// `mean((1 - D(x))^2) + mean(D(x_hat)^2)` for one item.
pub fn lsgan_d<T: Real>(g: &mut Graph<T>, d_real: Var, d_fake: Var) -> Result<Var> {
    let a = mean_square_residual(g, 1.0, d_real)?;
    let b = mean_square_residual(g, 0.0, d_fake)?;
    Ok(g.add(a, b)?)
}

/// `mean((1 - D(x_hat))^2)` for one item.
pub fn lsgan_adv<T: Real>(g: &mut Graph<T>, d_fake: Var) -> Result<Var> {
    mean_square_residual(g, 1.0, d_fake)
}

fn log_magnitude<T: Real>(g: &mut Graph<T>, s: Var) -> Result<Var> {
    let p = g.unary(Unary::Square, s)?;
    let p = g.offset(p, T::lit(LOG_MAG_FLOOR))?;
    let l = g.unary(Unary::Ln, p)?;
    Ok(g.scale(l, T::lit(0.5))?)
}

/// Spectral convergence plus mean absolute log-magnitude difference at one
/// FFT size (hop `m / 4`, Hann window).
pub fn spectral_distance<T: Real>(g: &mut Graph<T>, x: Var, x_hat: Var, m: usize) -> Result<Var> {
    let (lx, ly) = (g.value(x).len(), g.value(x_hat).len());
    if lx != ly {
        return Err(LossError::LengthMismatch {
            reference: lx,
            estimate: ly,
        });
    }
    let hop = (m / 4).max(1);
    let s = g.dft_magnitude(x, m, hop)?;
    let s_hat = g.dft_magnitude(x_hat, m, hop)?;

    let s_sq = g.unary(Unary::Square, s)?;
    let ref_energy = g.sum(s_sq)?;
    if g.scalar(ref_energy) == T::zero() {
        return Err(LossError::DegenerateReference);
    }
    let den = g.unary(Unary::Sqrt, ref_energy)?;
    let diff = g.sub(s, s_hat)?;
    let diff_sq = g.unary(Unary::Square, diff)?;
    let num = g.sum(diff_sq)?;
    let num = g.unary(Unary::Sqrt, num)?;
    let convergence = g.div(num, den)?;

    let ls = log_magnitude(g, s)?;
    let ls_hat = log_magnitude(g, s_hat)?;
    let d = g.sub(ls, ls_hat)?;
    let d = g.unary(Unary::Abs, d)?;
    let log_term = g.mean(d)?;
    Ok(g.add(convergence, log_term)?)
}

/// FFT sizes for the multi-resolution reconstruction loss.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct SpectralScales(pub Vec<usize>);

impl Default for SpectralScales {
    fn default() -> Self {
        Self(vec![2048, 1024, 512, 256, 128, 64])
    }
}

impl SpectralScales {
    pub fn validate(&self) -> Result<()> {
        if self.0.is_empty() || self.0.iter().any(|&m| m < 4 || !m.is_power_of_two()) {
            return Err(LossError::BadScales(self.0.clone()));
        }
        Ok(())
    }

    pub fn max(&self) -> usize {
        self.0.iter().copied().max().unwrap_or(0)
    }
}

/// Average of [`spectral_distance`] over `scales`.
pub fn multires_recon<T: Real>(g: &mut Graph<T>, x: Var, x_hat: Var, scales: &SpectralScales) -> Result<Var> {
    scales.validate()?;
    let len = g.value(x).len();
    if len < scales.max() {
        return Err(LossError::TooShort {
            len,
            fft: scales.max(),
        });
    }
    let mut total: Option<Var> = None;
    for &m in &scales.0 {
        let d = spectral_distance(g, x, x_hat, m)?;
        total = Some(match total {
            Some(t) => g.add(t, d)?,
            None => d,
        });
    }
    let total = total.expect("nonempty scales");
    Ok(g.scale(total, T::lit(1.0 / scales.0.len() as f64))?)
}

/// Weights of the adversarial, pitch-perceptual and phonetic-perceptual terms.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LossWeights {
    pub alpha: f64,
    pub beta: f64,
    pub gamma: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self {
            alpha: 4.0,
            beta: 1.0,
            gamma: 10.0,
        }
    }
}

impl LossWeights {
    pub fn validate(&self) -> Result<()> {
        if [self.alpha, self.beta, self.gamma].iter().all(|w| w.is_finite() && *w >= 0.0) {
            Ok(())
        } else {
            Err(LossError::BadWeights)
        }
    }
}

/// Graph form of [`generator_total`]; absent terms are gated off and
/// contribute nothing.
pub fn weighted_total<T: Real>(
    g: &mut Graph<T>,
    recon: Option<Var>,
    adv: Option<Var>,
    pitch: Option<Var>,
    phon: Option<Var>,
    w: &LossWeights,
) -> Result<Var> {
    let mut total = match recon {
        Some(r) => r,
        None => g.constant(vec![T::zero()], &[1])?,
    };
    for (term, weight) in [(adv, w.alpha), (pitch, w.beta), (phon, w.gamma)] {
        if let Some(t) = term {
            let s = g.scale(t, T::lit(weight))?;
            total = g.add(total, s)?;
        }
    }
    Ok(total)
}

/// Values of the generator objective's components.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct GeneratorTerms {
    pub recon: f64,
    pub adv: f64,
    pub pitch: f64,
    pub phon: f64,
}

/// `recon + alpha * adv + beta * pitch + gamma * phon`.
pub fn generator_total(t: &GeneratorTerms, w: &LossWeights) -> f64 {
    t.recon + w.alpha * t.adv + w.beta * t.pitch + w.gamma * t.phon
}

/// Objective for converted samples with no reconstruction target.
pub fn unaligned_generator_loss(adv: f64, pitch: f64, phon: f64, w: &LossWeights) -> f64 {
    generator_total(
        &GeneratorTerms {
            recon: 0.0,
            adv,
            pitch,
            phon,
        },
        w,
    )
}

/// Discriminator and generator loss of one batch regime.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct BranchLosses {
    pub d: f64,
    pub g: f64,
}

/// Sums of the aligned, unaligned and mixup branches, `(L_D, L_G)`.
pub fn multi_singer_totals(aligned: BranchLosses, unaligned: BranchLosses, mixup: BranchLosses) -> (f64, f64) {
    (
        aligned.d + unaligned.d + mixup.d,
        aligned.g + unaligned.g + mixup.g,
    )
}
