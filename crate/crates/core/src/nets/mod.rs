//! Generator, discriminator and speaker embeddings.
//!
//! The generator is split into a frame-rate conditioner (one dilated context
//! stack per feature kind, concatenation, optional speaker embedding, then
//! interleaved nearest-neighbour upsampling and convolution) and a
//! non-causal gated WaveNet that maps a noise signal plus the upsampled
//! conditioning to a waveform. Every convolution is weight-normalized.

mod discriminator;
mod features;
mod generator;
mod layers;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::autodiff::{Graph, TensorError, Var};
use crate::real::Real;

pub use discriminator::Discriminator;
pub use features::{CondFrames, LOUDNESS_OFFSET_DB, LOUDNESS_SCALE_DB, PHONETIC_OFFSET, PHONETIC_SCALE};
pub use generator::{FeatureDims, Generator, G_PARAM_SET};
pub use discriminator::D_PARAM_SET;

#[derive(Debug, Error)]
pub enum NetsError {
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error("missing parameter {0}")]
    MissingParam(String),
    #[error("length mismatch: noise has {noise} samples, conditioning {cond}")]
    LengthMismatch { noise: usize, cond: usize },
    #[error("unknown speaker {id:?}; available: {available:?}")]
    UnknownSpeaker { id: String, available: Vec<String> },
    #[error("mixup weight {0} outside [0, 1]")]
    MixupWeight(f64),
    #[error("embedding sizes differ: {0} vs {1}")]
    DimMismatch(usize, usize),
    #[error("conditioning features: {0}")]
    Features(String),
    #[error("invalid model config: {0}")]
    Config(String),
}

pub type Result<T> = std::result::Result<T, NetsError>;

/// `1 + (kernel - 1) * sum(dilations)`.
pub fn receptive_field(kernel: usize, dilations: &[usize]) -> usize {
    1 + (kernel.saturating_sub(1)) * dilations.iter().sum::<usize>()
}

fn doubling(blocks: usize, layers: usize) -> Vec<usize> {
    (0..blocks).flat_map(|_| (0..layers).map(|l| 1usize << l)).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ContextStackConfig {
    pub n_blocks: usize,
    pub layers_per_block: usize,
    pub channels: usize,
    pub kernel: usize,
}

impl Default for ContextStackConfig {
    fn default() -> Self {
        Self {
            n_blocks: 2,
            layers_per_block: 8,
            channels: 128,
            kernel: 3,
        }
    }
}

impl ContextStackConfig {
    pub fn dilations(&self) -> Vec<usize> {
        doubling(self.n_blocks, self.layers_per_block)
    }

    /// In frames.
    pub fn receptive_field(&self) -> usize {
        receptive_field(self.kernel, &self.dilations())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GeneratorConfig {
    pub n_blocks: usize,
    pub layers_per_block: usize,
    pub residual_channels: usize,
    pub skip_channels: usize,
    pub kernel: usize,
    pub upsample_stages: Vec<usize>,
    pub upsample_kernel: usize,
    pub noise_channels: usize,
    pub speaker_dim: usize,
    pub context: ContextStackConfig,
}

impl Default for GeneratorConfig {
    fn default() -> Self {
        Self {
            n_blocks: 3,
            layers_per_block: 10,
            residual_channels: 128,
            skip_channels: 128,
            kernel: 3,
            upsample_stages: vec![4, 4, 4, 4],
            upsample_kernel: 3,
            noise_channels: 1,
            speaker_dim: 64,
            context: ContextStackConfig::default(),
        }
    }
}

impl GeneratorConfig {
    pub fn dilations(&self) -> Vec<usize> {
        doubling(self.n_blocks, self.layers_per_block)
    }

    /// Receptive field of the waveform network with respect to its noise
    /// input, in samples.
    pub fn receptive_field(&self) -> usize {
        receptive_field(self.kernel, &self.dilations())
    }

    pub fn upsample_factor(&self) -> usize {
        self.upsample_stages.iter().product()
    }

    pub fn validate(&self, hop: usize) -> Result<()> {
        let odd = |k: usize| k % 2 == 1;
        let checks = [
            (self.n_blocks >= 1 && self.layers_per_block >= 1, "at least one layer"),
            (self.residual_channels >= 1 && self.skip_channels >= 1, "channel counts >= 1"),
            (odd(self.kernel) && odd(self.upsample_kernel) && odd(self.context.kernel), "kernels must be odd"),
            (self.noise_channels >= 1, "noise_channels >= 1"),
            (self.speaker_dim >= 1, "speaker_dim >= 1"),
            (self.context.n_blocks >= 1 && self.context.layers_per_block >= 1, "context stack needs a layer"),
            (self.context.channels >= 1, "context channels >= 1"),
            (self.upsample_stages.iter().all(|&f| f >= 1), "upsample factors >= 1"),
        ];
        if let Some((_, msg)) = checks.iter().find(|(ok, _)| !ok) {
            return Err(NetsError::Config(msg.to_string()));
        }
        if self.upsample_factor() != hop {
            return Err(NetsError::Config(format!(
                "upsample stages {:?} multiply to {}, feature hop is {hop}",
                self.upsample_stages,
                self.upsample_factor()
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DiscriminatorConfig {
    pub n_layers: usize,
    pub channels: usize,
    pub kernel: usize,
    pub leakiness: f64,
}

impl Default for DiscriminatorConfig {
    fn default() -> Self {
        Self {
            n_layers: 10,
            channels: 128,
            kernel: 3,
            leakiness: 0.2,
        }
    }
}

impl DiscriminatorConfig {
    /// Layer `i` (1-based) has dilation `i`.
    pub fn dilations(&self) -> Vec<usize> {
        (1..=self.n_layers).collect()
    }

    pub fn receptive_field(&self) -> usize {
        receptive_field(self.kernel, &self.dilations())
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_layers == 0 || self.channels == 0 || self.kernel % 2 == 0 {
            return Err(NetsError::Config(format!("discriminator {self:?}")));
        }
        if !(0.0..1.0).contains(&self.leakiness) {
            return Err(NetsError::Config(format!("leakiness {} outside [0, 1)", self.leakiness)));
        }
        Ok(())
    }
}

/// `nu * a + (1 - nu) * b`.
pub fn mixup_embedding<T: Real>(a: &[T], b: &[T], nu: f64) -> Result<Vec<T>> {
    check_mixup(a.len(), b.len(), nu)?;
    let (p, q) = (T::lit(nu), T::lit(1.0 - nu));
    Ok(a.iter().zip(b).map(|(&x, &y)| p * x + q * y).collect())
}

/// Graph form of [`mixup_embedding`], with the same arithmetic.
pub fn mix_embeddings<T: Real>(g: &mut Graph<T>, a: Var, b: Var, nu: f64) -> Result<Var> {
    check_mixup(g.value(a).len(), g.value(b).len(), nu)?;
    let p = g.scale(a, T::lit(nu))?;
    let q = g.scale(b, T::lit(1.0 - nu))?;
    Ok(g.add(p, q)?)
}

fn check_mixup(la: usize, lb: usize, nu: f64) -> Result<()> {
    if la != lb {
        return Err(NetsError::DimMismatch(la, lb));
    }
    if !(0.0..=1.0).contains(&nu) {
        return Err(NetsError::MixupWeight(nu));
    }
    Ok(())
}
