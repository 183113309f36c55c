use crate::autodiff::{Graph, ParamSet, Unary, Var};
use crate::real::Real;
use crate::rng::{noise_at, SplitMix64};

use super::features::CondFrames;
use super::layers::{conv_params, init_conv, Binder};
use super::{GeneratorConfig, NetsError, Result};

/// Parameter-set tag of the generator (conditioner and speaker table included).
pub const G_PARAM_SET: u32 = 0;

const STACKS: [&str; 3] = ["loud", "phon", "exc"];

/// Channel counts of the conditioning inputs.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct FeatureDims {
    pub phonetic: usize,
    pub hop: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Generator<T> {
    pub cfg: GeneratorConfig,
    pub dims: FeatureDims,
    speakers: Vec<String>,
    pub params: ParamSet<T>,
}

impl<T: Real> Generator<T> {
    /// Speaker embeddings are only created when there are two or more
    /// speakers; a single-speaker model ignores speaker ids.
    pub fn new(cfg: GeneratorConfig, dims: FeatureDims, speakers: &[String], seed: u64) -> Result<Self> {
        cfg.validate(dims.hop)?;
        let mut sorted = speakers.to_vec();
        sorted.sort();
        sorted.dedup();
        if sorted.len() != speakers.len() {
            return Err(NetsError::Config("duplicate speaker ids".into()));
        }
        let mut rng = SplitMix64::new(seed);
        let mut p = ParamSet::new(G_PARAM_SET);
        let ctx = &cfg.context;
        for (kind, c_in) in STACKS.iter().zip(stack_inputs(dims)) {
            let mut c = c_in;
            for l in 0..ctx.dilations().len() {
                init_conv(&mut p, &mut rng, &format!("ctx.{kind}.{l}"), c, ctx.channels, ctx.kernel);
                c = ctx.channels;
            }
        }
        if sorted.len() >= 2 {
            for id in &sorted {
                p.add_uniform(format!("speaker.{id}"), &[cfg.speaker_dim], 3, &mut rng);
            }
        }
        let c_cond = cond_channels(&cfg, sorted.len());
        for s in 0..cfg.upsample_stages.len() {
            init_conv(&mut p, &mut rng, &format!("up.{s}"), c_cond, c_cond, cfg.upsample_kernel);
        }
        let (r, sk) = (cfg.residual_channels, cfg.skip_channels);
        init_conv(&mut p, &mut rng, "wn.input", cfg.noise_channels, r, 1);
        let n_layers = cfg.dilations().len();
        for l in 0..n_layers {
            init_conv(&mut p, &mut rng, &format!("wn.{l}.filter"), r, r, cfg.kernel);
            init_conv(&mut p, &mut rng, &format!("wn.{l}.gate"), r, r, cfg.kernel);
            init_conv(&mut p, &mut rng, &format!("wn.{l}.cond_filter"), c_cond + 1, r, 1);
            init_conv(&mut p, &mut rng, &format!("wn.{l}.cond_gate"), c_cond + 1, r, 1);
            init_conv(&mut p, &mut rng, &format!("wn.{l}.skip"), r, sk, 1);
            if l + 1 < n_layers {
                init_conv(&mut p, &mut rng, &format!("wn.{l}.res"), r, r, 1);
            }
        }
        init_conv(&mut p, &mut rng, "wn.post1", sk, sk, 1);
        init_conv(&mut p, &mut rng, "wn.post2", sk, 1, 1);
        Ok(Self {
            cfg,
            dims,
            speakers: sorted,
            params: p,
        })
    }

    /// Scalar parameter count implied by a config, without building it.
    pub fn count_params(cfg: &GeneratorConfig, dims: FeatureDims, n_speakers: usize) -> usize {
        let ctx = &cfg.context;
        let layers = ctx.dilations().len();
        let stacks: usize = stack_inputs(dims)
            .iter()
            .map(|&c_in| {
                conv_params(c_in, ctx.channels, ctx.kernel)
                    + (layers - 1) * conv_params(ctx.channels, ctx.channels, ctx.kernel)
            })
            .sum();
        let speakers = if n_speakers >= 2 { n_speakers * cfg.speaker_dim } else { 0 };
        let c_cond = cond_channels(cfg, n_speakers);
        let up = cfg.upsample_stages.len() * conv_params(c_cond, c_cond, cfg.upsample_kernel);
        let (r, sk) = (cfg.residual_channels, cfg.skip_channels);
        let n = cfg.dilations().len();
        let per_layer = 2 * conv_params(r, r, cfg.kernel) + 2 * conv_params(c_cond + 1, r, 1) + conv_params(r, sk, 1);
        let wn = conv_params(cfg.noise_channels, r, 1)
            + n * per_layer
            + (n - 1) * conv_params(r, r, 1)
            + conv_params(sk, sk, 1)
            + conv_params(sk, 1, 1);
        stacks + speakers + up + wn
    }

    pub fn speakers(&self) -> &[String] {
        &self.speakers
    }

    pub fn uses_speakers(&self) -> bool {
        self.speakers.len() >= 2
    }

    pub fn cond_channels(&self) -> usize {
        cond_channels(&self.cfg, self.speakers.len())
    }

    pub fn speaker_index(&self, id: &str) -> Result<usize> {
        self.speakers
            .iter()
            .position(|s| s == id)
            .ok_or_else(|| NetsError::UnknownSpeaker {
                id: id.to_string(),
                available: self.speakers.clone(),
            })
    }

    /// Embedding of speaker `id`, or `None` for a single-speaker model.
    pub fn speaker(&self, g: &mut Graph<T>, id: &str, train: bool) -> Result<Option<Var>> {
        if !self.uses_speakers() {
            return Ok(None);
        }
        self.speaker_index(id)?;
        Binder { set: &self.params, train }.get(g, &format!("speaker.{id}")).map(Some)
    }

    pub fn embedding(&self, id: &str) -> Result<Option<&[T]>> {
        if !self.uses_speakers() {
            return Ok(None);
        }
        self.speaker_index(id)?;
        let i = self.params.index_of(&format!("speaker.{id}")).expect("speaker param");
        Ok(Some(&self.params.get(i).data))
    }

    /// Upsampled conditioning plus the excitation row, `[cond_channels + 1, frames * hop]`.
    pub fn conditioner(
        &self,
        g: &mut Graph<T>,
        frames: &CondFrames<T>,
        speaker: Option<Var>,
        train: bool,
    ) -> Result<Var> {
        let h = self.frame_conditioning(g, frames, speaker, train)?;
        let cond = self.upsample_conditioning(g, h, train)?;
        self.attach_excitation(g, cond, frames, 0)
    }

    /// Appends the raw excitation of frames `first..` as one more channel of
    /// the upsampled conditioning `cond`. The context stack only sees it at
    /// frame rate, which loses the phase the waveform stack needs.
    pub fn attach_excitation(&self, g: &mut Graph<T>, cond: Var, frames: &CondFrames<T>, first: usize) -> Result<Var> {
        let (hop, n) = (frames.hop, frames.n_frames);
        let len = g.shape(cond)[1];
        if first * hop + len > n * hop {
            return Err(NetsError::Features(format!(
                "excitation has {} samples, conditioning needs {}",
                n * hop,
                first * hop + len
            )));
        }
        let exc: Vec<T> = (first * hop..first * hop + len)
            .map(|t| frames.excitation[(t % hop) * n + t / hop])
            .collect();
        let exc = g.constant(exc, &[1, len])?;
        Ok(g.concat_channels(&[cond, exc])?)
    }

    /// Context-stack outputs and the broadcast speaker embedding,
    /// `[cond_channels, frames]`.
    pub fn frame_conditioning(
        &self,
        g: &mut Graph<T>,
        frames: &CondFrames<T>,
        speaker: Option<Var>,
        train: bool,
    ) -> Result<Var> {
        if frames.phonetic_dim != self.dims.phonetic || frames.hop != self.dims.hop {
            return Err(NetsError::Features(format!(
                "model expects phonetic dim {} / hop {}, got {} / {}",
                self.dims.phonetic, self.dims.hop, frames.phonetic_dim, frames.hop
            )));
        }
        if speaker.is_some() != self.uses_speakers() {
            return Err(NetsError::Features(format!(
                "speaker embedding {} for a model with {} speakers",
                if speaker.is_some() { "given" } else { "missing" },
                self.speakers.len()
            )));
        }
        let n = frames.n_frames;
        let inputs = [
            (&frames.loudness, 1),
            (&frames.phonetic, frames.phonetic_dim),
            (&frames.excitation, frames.hop),
        ];
        let mut parts = Vec::with_capacity(4);
        for (kind, (data, ch)) in inputs.into_iter().enumerate() {
            let x = g.constant(data.clone(), &[ch, n])?;
            parts.push(self.context_stack(g, kind, x, train)?);
        }
        if let Some(s) = speaker {
            if g.value(s).len() != self.cfg.speaker_dim {
                return Err(NetsError::DimMismatch(g.value(s).len(), self.cfg.speaker_dim));
            }
            parts.push(g.broadcast_time(s, n)?);
        }
        Ok(g.concat_channels(&parts)?)
    }

    /// Frame rate to sample rate, `[cond_channels, frames]` to
    /// `[cond_channels, frames * hop]`.
    pub fn upsample_conditioning(&self, g: &mut Graph<T>, h: Var, train: bool) -> Result<Var> {
        let b = Binder { set: &self.params, train };
        let mut h = h;
        for (s, &factor) in self.cfg.upsample_stages.iter().enumerate() {
            h = g.upsample(h, factor)?;
            h = b.conv_act(g, &format!("up.{s}"), h, 1, Unary::LEAKY)?;
        }
        Ok(h)
    }

    /// Dilated stack for feature kind `kind` (0 loudness, 1 phonetic,
    /// 2 excitation), `[channels, frames]` in and out.
    pub fn context_stack(&self, g: &mut Graph<T>, kind: usize, x: Var, train: bool) -> Result<Var> {
        let name = STACKS.get(kind).ok_or_else(|| NetsError::Features(format!("no context stack {kind}")))?;
        let b = Binder { set: &self.params, train };
        let mut h = x;
        for (l, &d) in self.cfg.context.dilations().iter().enumerate() {
            h = b.conv_act(g, &format!("ctx.{name}.{l}"), h, d, Unary::LEAKY)?;
        }
        Ok(h)
    }

    /// Waveform `[1, T]` from noise `[noise_channels, T]` and conditioning
    /// `[cond_channels + 1, T]` from [`Generator::conditioner`].
    pub fn forward(&self, g: &mut Graph<T>, z: Var, cond: Var, train: bool) -> Result<Var> {
        let (zn, cn) = (g.shape(z)[1], g.shape(cond)[1]);
        if zn != cn {
            return Err(NetsError::LengthMismatch { noise: zn, cond: cn });
        }
        let b = Binder { set: &self.params, train };
        let mut h = b.conv(g, "wn.input", z, 1)?;
        let dil = self.cfg.dilations();
        let mut skip: Option<Var> = None;
        for (l, &d) in dil.iter().enumerate() {
            let f = b.conv(g, &format!("wn.{l}.filter"), h, d)?;
            let cf = b.conv(g, &format!("wn.{l}.cond_filter"), cond, 1)?;
            let f = g.add(f, cf)?;
            let gt = b.conv(g, &format!("wn.{l}.gate"), h, d)?;
            let cg = b.conv(g, &format!("wn.{l}.cond_gate"), cond, 1)?;
            let gt = g.add(gt, cg)?;
            let f = g.tanh(f)?;
            let gt = g.sigmoid(gt)?;
            let o = g.mul(f, gt)?;
            let s = b.conv(g, &format!("wn.{l}.skip"), o, 1)?;
            skip = Some(match skip {
                Some(acc) => g.add(acc, s)?,
                None => s,
            });
            if l + 1 < dil.len() {
                let r = b.conv(g, &format!("wn.{l}.res"), o, 1)?;
                h = g.add(h, r)?;
            }
        }
        let s = g.leaky_relu(skip.expect("at least one layer"))?;
        let s = b.conv_act(g, "wn.post1", s, 1, Unary::LEAKY)?;
        let y = b.conv(g, "wn.post2", s, 1)?;
        Ok(g.tanh(y)?)
    }

    /// Conditioning for `frames`, cut to `n_samples`, then the waveform.
    pub fn generate(
        &self,
        g: &mut Graph<T>,
        frames: &CondFrames<T>,
        speaker: Option<Var>,
        z: Var,
        train: bool,
    ) -> Result<Var> {
        let cond = self.conditioner(g, frames, speaker, train)?;
        let n = g.shape(z)[1];
        let have = g.shape(cond)[1];
        if n > have {
            return Err(NetsError::LengthMismatch { noise: n, cond: have });
        }
        let cond = if n < have { g.slice_time(cond, 0, n)? } else { cond };
        self.forward(g, z, cond, train)
    }

    /// U(0,1) noise `[noise_channels, len]` for absolute samples
    /// `[start, start + len)`.
    pub fn noise(&self, seed: u64, start: usize, len: usize) -> Vec<T> {
        (0..self.cfg.noise_channels as u64)
            .flat_map(|c| {
                let s = seed.wrapping_add(c);
                (start..start + len).map(move |t| T::lit(noise_at(s, t as u64)))
            })
            .collect()
    }

    /// Frames of context needed on each side of an output range so that
    /// windowed synthesis matches whole-signal synthesis exactly.
    pub fn margin_frames(&self) -> usize {
        self.context_margin_frames() + self.audio_margin_frames()
    }

    /// Margin of the frame-rate context stacks.
    pub fn context_margin_frames(&self) -> usize {
        (self.cfg.context.receptive_field() - 1) / 2 + 1
    }

    /// Margin, in frames, of the upsampling and waveform stages.
    pub fn audio_margin_frames(&self) -> usize {
        let half_k = (self.cfg.upsample_kernel - 1) / 2;
        let mut rate = 1;
        let mut up = 0;
        for &f in &self.cfg.upsample_stages {
            rate *= f;
            up += half_k.div_ceil(rate) + 1;
        }
        let wave = ((self.cfg.receptive_field() - 1) / 2).div_ceil(self.dims.hop);
        up + wave + 1
    }
}

fn stack_inputs(dims: FeatureDims) -> [usize; 3] {
    [1, dims.phonetic, dims.hop]
}

fn cond_channels(cfg: &GeneratorConfig, n_speakers: usize) -> usize {
    3 * cfg.context.channels + if n_speakers >= 2 { cfg.speaker_dim } else { 0 }
}
