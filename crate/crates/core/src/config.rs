//! Run configuration: one TOML file describing data, model, losses and
//! schedule. Every section is optional and defaults to the standard setup;
//! unknown keys are rejected.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::dsp::{Analyzer, FrameGrid, PitchSettings, DEFAULT_FRAME, DEFAULT_HOP};
use crate::losses::{LossWeights, SpectralScales};
use crate::nets::{DiscriminatorConfig, GeneratorConfig};
use crate::real::Real;
use crate::training::{TrainConfig, TrainSetup};

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("cannot parse config: {0}")]
    Parse(#[from] toml::de::Error),
    #[error("cannot serialize config: {0}")]
    Serialize(#[from] toml::ser::Error),
    #[error("invalid config: {0}")]
    Invalid(String),
}

pub type Result<T> = std::result::Result<T, ConfigError>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum FeatureProvider {
    /// Compute features from the audio at load time.
    #[default]
    Builtin,
    /// Read SVCF files written by `extract`.
    SvcfFiles,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FeatureConfig {
    pub provider: FeatureProvider,
    /// Root of the SVCF tree (`<dir>/<speaker>/<stem>.<kind>.svcf`).
    pub dir: PathBuf,
    pub frame_size: usize,
    pub fmin: f64,
    pub fmax: f64,
    pub voicing_threshold: f64,
}

impl Default for FeatureConfig {
    fn default() -> Self {
        let p = PitchSettings::default();
        Self {
            provider: FeatureProvider::Builtin,
            dir: PathBuf::from("features"),
            frame_size: DEFAULT_FRAME,
            fmin: p.fmin,
            fmax: p.fmax,
            voicing_threshold: p.threshold,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PathsConfig {
    /// Directory of per-speaker subdirectories of WAV files.
    pub corpus: PathBuf,
    /// Checkpoints, the training log and the effective config go here.
    pub output: PathBuf,
}

impl Default for PathsConfig {
    fn default() -> Self {
        Self {
            corpus: PathBuf::from("corpus"),
            output: PathBuf::from("run"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct StreamConfig {
    /// Input samples per read.
    pub chunk: usize,
    /// Output frames rendered per generator window.
    pub block_frames: usize,
}

impl Default for StreamConfig {
    fn default() -> Self {
        Self {
            chunk: 4096,
            block_frames: crate::inference::DEFAULT_BLOCK_FRAMES,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub sample_rate: u32,
    pub hop: usize,
    pub seed: u64,
    /// FFT sizes of the reconstruction loss.
    pub scales: SpectralScales,
    pub paths: PathsConfig,
    pub features: FeatureConfig,
    pub generator: GeneratorConfig,
    pub discriminator: DiscriminatorConfig,
    pub train: TrainConfig,
    pub weights: LossWeights,
    pub stream: StreamConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            sample_rate: 16000,
            hop: DEFAULT_HOP,
            seed: 0,
            scales: SpectralScales::default(),
            paths: PathsConfig::default(),
            features: FeatureConfig::default(),
            generator: GeneratorConfig::default(),
            discriminator: DiscriminatorConfig::default(),
            train: TrainConfig::default(),
            weights: LossWeights::default(),
            stream: StreamConfig::default(),
        }
    }
}

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io {
            path: path.display().to_string(),
            source,
        })?;
        Self::from_toml(&text)
    }

    /// The effective configuration, defaults filled in.
    pub fn to_toml(&self) -> Result<String> {
        Ok(toml::to_string(self)?)
    }

    /// SHA-256 of [`RunConfig::to_toml`].
    pub fn hash(&self) -> Result<[u8; 32]> {
        Ok(Sha256::digest(self.to_toml()?.as_bytes()).into())
    }

    pub fn grid(&self) -> FrameGrid {
        FrameGrid {
            frame_size: self.features.frame_size,
            hop: self.hop,
            n_frames: 1,
            sample_rate: self.sample_rate,
        }
    }

    pub fn pitch(&self) -> PitchSettings {
        PitchSettings {
            fmin: self.features.fmin,
            fmax: self.features.fmax,
            threshold: self.features.voicing_threshold,
        }
    }

    pub fn analyzer<T: Real>(&self) -> Result<Analyzer<T>> {
        Analyzer::new(self.grid(), self.pitch()).map_err(|e| ConfigError::Invalid(e.to_string()))
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |e: &dyn std::fmt::Display| ConfigError::Invalid(e.to_string());
        if self.sample_rate == 0 {
            return Err(ConfigError::Invalid("sample_rate must be >= 1".into()));
        }
        self.analyzer::<f64>()?;
        self.generator.validate(self.hop).map_err(|e| bad(&e))?;
        self.discriminator.validate().map_err(|e| bad(&e))?;
        self.train.validate().map_err(|e| bad(&e))?;
        self.weights.validate().map_err(|e| bad(&e))?;
        self.scales.validate().map_err(|e| bad(&e))?;
        let seg = self.train.segment_len(self.sample_rate);
        if seg < self.scales.max() {
            return Err(ConfigError::Invalid(format!(
                "train.segment_seconds gives {seg} samples, less than the largest scale {}",
                self.scales.max()
            )));
        }
        if self.stream.chunk == 0 || self.stream.block_frames == 0 {
            return Err(ConfigError::Invalid("stream.chunk and stream.block_frames must be >= 1".into()));
        }
        Ok(())
    }

    pub fn train_setup(&self) -> Result<TrainSetup> {
        Ok(TrainSetup {
            train: TrainConfig {
                seed: self.seed,
                ..self.train.clone()
            },
            generator: self.generator.clone(),
            discriminator: self.discriminator.clone(),
            weights: self.weights,
            scales: self.scales.clone(),
            config_hash: self.hash()?,
        })
    }
}
