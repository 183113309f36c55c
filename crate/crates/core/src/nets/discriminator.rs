use crate::autodiff::{Graph, ParamSet, Unary, Var};
use crate::real::Real;
use crate::rng::SplitMix64;

use super::layers::{init_conv, Binder};
use super::{DiscriminatorConfig, Result};

pub const D_PARAM_SET: u32 = 1;

/// Per-timestep real/fake scorer with linearly growing dilation.
#[derive(Debug, Clone, PartialEq)]
pub struct Discriminator<T> {
    pub cfg: DiscriminatorConfig,
    pub params: ParamSet<T>,
}

impl<T: Real> Discriminator<T> {
    pub fn new(cfg: DiscriminatorConfig, seed: u64) -> Result<Self> {
        cfg.validate()?;
        let mut rng = SplitMix64::new(seed);
        let mut p = ParamSet::new(D_PARAM_SET);
        let mut c = 1;
        for i in 0..cfg.n_layers {
            init_conv(&mut p, &mut rng, &format!("d.{i}"), c, cfg.channels, cfg.kernel);
            c = cfg.channels;
        }
        init_conv(&mut p, &mut rng, "d.out", c, 1, 1);
        Ok(Self { cfg, params: p })
    }

    /// Scores `[1, T]` for a waveform `[1, T]`; no output nonlinearity.
    pub fn forward(&self, g: &mut Graph<T>, x: Var, train: bool) -> Result<Var> {
        let len = g.shape(x).last().copied().unwrap_or(0);
        if len < self.cfg.receptive_field() {
            log::warn!(
                "discriminator input of {len} samples is shorter than its receptive field {}",
                self.cfg.receptive_field()
            );
        }
        let b = Binder { set: &self.params, train };
        let act = Unary::LeakyRelu(self.cfg.leakiness);
        let mut h = x;
        for (i, &d) in self.cfg.dilations().iter().enumerate() {
            h = b.conv_act(g, &format!("d.{i}"), h, d, act)?;
        }
        b.conv(g, "d.out", h, 1)
    }
}
