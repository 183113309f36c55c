//! Optimization: schedule, rectified Adam, batch regimes, the trainer and
//! checkpoints.

mod batch;
mod checkpoint;
mod corpus;
mod optimizer;
mod trainer;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use batch::{make_batch, BatchItem, BatchPlan, Regime};
pub use checkpoint::{
    decode_checkpoint, encode_checkpoint, load_checkpoint, save_checkpoint, CheckpointBundle, NamedTensor, TensorData,
    CHECKPOINT_MAGIC, CHECKPOINT_VERSION,
};
pub use corpus::{feature_path, list_wavs, Corpus, Utterance, SILENCE_LEVEL};
pub use optimizer::RAdam;
pub use trainer::{checkpoint_speakers, load_params, params_to_tensors, StepReport, TrainSetup, Trainer};

#[derive(Debug, Error)]
pub enum TrainError {
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error("corrupt checkpoint: {0}")]
    Corrupt(String),
    #[error("checkpoint version {0} not supported (expected {CHECKPOINT_VERSION})")]
    Version(u32),
    #[error("checkpoint holds dtype {found}, this build uses {expected}")]
    DType { found: u8, expected: u8 },
    #[error(transparent)]
    Nets(#[from] crate::nets::NetsError),
    #[error(transparent)]
    Loss(#[from] crate::losses::LossError),
    #[error(transparent)]
    Tensor(#[from] crate::autodiff::TensorError),
    #[error(transparent)]
    Dsp(#[from] crate::dsp::DspError),
    #[error(transparent)]
    Audio(#[from] crate::audio_io::AudioError),
    #[error("{0:?} batches need at least two speakers")]
    SingleSpeaker(Regime),
    #[error("corpus is empty: {0}")]
    EmptyCorpus(String),
    #[error("no non-silent segment found for speaker {0}")]
    Silent(String),
    #[error("non-finite {what} at step {step}: {detail}")]
    NonFinite {
        what: &'static str,
        step: u64,
        detail: String,
    },
    #[error("invalid training config: {0}")]
    Config(String),
}

pub type Result<T> = std::result::Result<T, TrainError>;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub total_steps: u64,
    pub batch_size: usize,
    pub segment_seconds: f64,
    pub base_lr: f64,
    pub lr_half_period: u64,
    pub disc_start_step: u64,
    pub perceptual_start_step: u64,
    pub mixup_start_step: u64,
    pub mixup_every: u64,
    /// Set from the run configuration's top-level seed.
    #[serde(skip)]
    pub seed: u64,
    /// Divides every step threshold and period above (not `mixup_every`).
    pub scale_factor: u64,
    pub grad_clip: f64,
    pub checkpoint_every: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            total_steps: 800_000,
            batch_size: 8,
            segment_seconds: 1.0,
            base_lr: 1e-4,
            lr_half_period: 200_000,
            disc_start_step: 100_000,
            perceptual_start_step: 50_000,
            mixup_start_step: 100_000,
            mixup_every: 3,
            seed: 0,
            scale_factor: 1,
            grad_clip: 10.0,
            checkpoint_every: 10_000,
        }
    }
}

/// Step constants after applying `scale_factor`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Schedule {
    pub total_steps: u64,
    pub lr_half_period: u64,
    pub disc_start: u64,
    pub perceptual_start: u64,
    pub mixup_start: u64,
    pub mixup_every: u64,
    pub checkpoint_every: u64,
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(TrainError::Config(m.to_string()));
        if self.total_steps == 0 || self.batch_size == 0 {
            return bad("total_steps and batch_size must be >= 1");
        }
        if !(self.segment_seconds > 0.0 && self.segment_seconds.is_finite()) {
            return bad("segment_seconds must be > 0");
        }
        if !(self.base_lr > 0.0 && self.base_lr.is_finite()) {
            return bad("base_lr must be > 0");
        }
        if self.lr_half_period == 0 || self.mixup_every == 0 || self.checkpoint_every == 0 {
            return bad("periods must be >= 1");
        }
        if self.scale_factor == 0 {
            return bad("scale_factor must be >= 1");
        }
        if !(self.grad_clip > 0.0) {
            return bad("grad_clip must be > 0");
        }
        Ok(())
    }

    pub fn schedule(&self) -> Schedule {
        let s = self.scale_factor.max(1);
        // nonzero constants never scale below one step
        let sc = |v: u64| if v == 0 { 0 } else { (v / s).max(1) };
        Schedule {
            total_steps: sc(self.total_steps),
            lr_half_period: sc(self.lr_half_period),
            disc_start: sc(self.disc_start_step),
            perceptual_start: sc(self.perceptual_start_step),
            mixup_start: sc(self.mixup_start_step),
            mixup_every: self.mixup_every.max(1),
            checkpoint_every: sc(self.checkpoint_every),
        }
    }

    pub fn segment_len(&self, sample_rate: u32) -> usize {
        (self.segment_seconds * sample_rate as f64).round() as usize
    }
}

impl Schedule {
    /// Mixup on every `mixup_every`-th step from `mixup_start`; otherwise
    /// unaligned on odd steps once perceptual losses are on; otherwise
    /// aligned. Single-speaker corpora always train aligned.
    pub fn regime(&self, step: u64, n_speakers: usize) -> Regime {
        if n_speakers < 2 {
            return Regime::Aligned;
        }
        if step >= self.mixup_start && (step - self.mixup_start) % self.mixup_every == 0 {
            Regime::Mixup
        } else if step >= self.perceptual_start && step % 2 == 1 {
            Regime::Unaligned
        } else {
            Regime::Aligned
        }
    }
}

/// `base_lr * 0.5^floor(step / lr_half_period)` with the scaled period.
pub fn lr_at(step: u64, cfg: &TrainConfig) -> f64 {
    let halvings = step / cfg.schedule().lr_half_period;
    cfg.base_lr * 0.5f64.powi(halvings.min(i32::MAX as u64) as i32)
}
