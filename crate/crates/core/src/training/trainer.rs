use std::fmt;

use crate::audio_io::Waveform;
use crate::autodiff::{Gradients, Graph, ParamSet, Var};
use crate::dsp::Analyzer;
use crate::losses::{
    lsgan_adv, lsgan_d, multires_recon, perceptual_loss, weighted_total, LossWeights, MelActivations,
    PitchActivations, SpectralScales,
};
use crate::nets::{mixup_embedding, CondFrames, DiscriminatorConfig, Discriminator, FeatureDims, Generator, GeneratorConfig};
use crate::real::Real;
use crate::rng::SplitMix64;

use super::batch::{make_batch, BatchItem, BatchPlan, Regime};
use super::checkpoint::{CheckpointBundle, NamedTensor, TensorData};
use super::corpus::Corpus;
use super::optimizer::RAdam;
use super::{lr_at, Result, TrainConfig, TrainError};

/// Everything besides the corpus that determines a run.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct TrainSetup {
    pub train: TrainConfig,
    pub generator: GeneratorConfig,
    pub discriminator: DiscriminatorConfig,
    pub weights: LossWeights,
    pub scales: SpectralScales,
    /// Stored in checkpoints and compared on restore.
    pub config_hash: [u8; 32],
}

/// Loss values and gradient norms of one step. Gated-off terms are 0.
#[derive(Debug, Clone, PartialEq)]
pub struct StepReport {
    pub step: u64,
    pub regime: Regime,
    pub lr: f64,
    pub d_loss: f64,
    pub recon: f64,
    pub adv: f64,
    pub pitch: f64,
    pub phon: f64,
    pub g_loss: f64,
    pub g_grad_norm: f64,
    pub d_grad_norm: f64,
    pub g_clipped: bool,
    pub d_clipped: bool,
}

impl fmt::Display for StepReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        // Debug formatting of f64 round-trips, so equal lines mean equal values.
        write!(
            f,
            "step={} regime={} lr={:?} loss_d={:?} recon={:?} adv={:?} pitch={:?} phon={:?} loss_g={:?} gnorm_g={:?} gnorm_d={:?}",
            self.step,
            self.regime.name(),
            self.lr,
            self.d_loss,
            self.recon,
            self.adv,
            self.pitch,
            self.phon,
            self.g_loss,
            self.g_grad_norm,
            self.d_grad_norm
        )?;
        if self.g_clipped || self.d_clipped {
            write!(f, " clipped={}{}", if self.g_clipped { "g" } else { "" }, if self.d_clipped { "d" } else { "" })?;
        }
        Ok(())
    }
}

struct ItemRun<T: Real> {
    graph: Graph<T>,
    real: Vec<T>,
    real_var: Var,
    x_hat: Var,
    recon: bool,
}

#[derive(Default, Clone, Copy)]
struct Terms {
    recon: f64,
    adv: f64,
    pitch: f64,
    phon: f64,
    total: f64,
}

pub struct Trainer<'c, T: Real> {
    pub setup: TrainSetup,
    pub generator: Generator<T>,
    pub discriminator: Discriminator<T>,
    pub opt_g: RAdam<T>,
    pub opt_d: RAdam<T>,
    /// Index of the next step to run.
    pub step: u64,
    pub rng: SplitMix64,
    corpus: &'c Corpus<T>,
    analyzer: &'c Analyzer<T>,
    mel: MelActivations<T>,
    pitch: PitchActivations,
}

fn sum_grads<T: Real>(set: &ParamSet<T>, parts: Vec<Gradients<T>>) -> Gradients<T> {
    let mut total = Gradients::zeros_like(set);
    for p in &parts {
        total.add_assign(p);
    }
    total
}

impl<'c, T: Real> Trainer<'c, T> {
    /// `analyzer` must be the one that produced the corpus features; the
    /// mixup pass re-analyzes generated audio with it.
    pub fn new(setup: TrainSetup, corpus: &'c Corpus<T>, analyzer: &'c Analyzer<T>) -> Result<Self> {
        setup.train.validate()?;
        setup.weights.validate()?;
        setup.scales.validate()?;
        let seg_len = setup.train.segment_len(corpus.sample_rate);
        if seg_len < setup.scales.max() {
            return Err(TrainError::Config(format!(
                "segments of {seg_len} samples are shorter than the largest spectral scale {}",
                setup.scales.max()
            )));
        }
        let seed = setup.train.seed;
        let dims = FeatureDims {
            phonetic: corpus.phonetic_dim,
            hop: corpus.hop,
        };
        let generator = Generator::new(setup.generator.clone(), dims, &corpus.speakers, seed)?;
        let discriminator = Discriminator::new(setup.discriminator.clone(), seed.wrapping_add(1))?;
        Ok(Self {
            opt_g: RAdam::new(&generator.params),
            opt_d: RAdam::new(&discriminator.params),
            generator,
            discriminator,
            step: 0,
            rng: SplitMix64::new(seed.wrapping_add(2)),
            mel: MelActivations::standard(corpus.sample_rate),
            pitch: PitchActivations::standard(corpus.sample_rate),
            setup,
            corpus,
            analyzer,
        })
    }

    pub fn corpus(&self) -> &Corpus<T> {
        self.corpus
    }

    pub fn seg_len(&self) -> usize {
        self.setup.train.segment_len(self.corpus.sample_rate)
    }

    /// Draws the next batch and trains on it.
    pub fn step(&mut self) -> Result<StepReport> {
        let s = self.step;
        let regime = self.setup.train.schedule().regime(s, self.corpus.n_speakers());
        let plan = make_batch(
            regime,
            self.corpus,
            self.setup.train.batch_size,
            self.seg_len(),
            s,
            &mut self.rng,
        )?;
        self.train_on(&plan)
    }

    /// Frozen generation of `len` samples from `frames` with an explicit
    /// speaker embedding (ignored by single-speaker models).
    pub fn render(&self, frames: &CondFrames<T>, embedding: Option<&[T]>, seed: u64, len: usize) -> Result<Vec<T>> {
        let gen = &self.generator;
        let mut g = Graph::new();
        let spk = match embedding {
            Some(e) if gen.uses_speakers() => Some(g.constant(e.to_vec(), &[e.len()])?),
            _ => None,
        };
        let z = g.constant(gen.noise(seed, 0, len), &[gen.cfg.noise_channels, len])?;
        let y = gen.generate(&mut g, frames, spk, z, false)?;
        Ok(g.value(y).to_vec())
    }

    /// The gradient-free first pass of a mixup item: its segment converted
    /// to the blended speaker. `None` for items without a blend.
    pub fn mix_source(&self, item: &BatchItem, seg_len: usize) -> Result<Option<Vec<T>>> {
        let Some((other, nu)) = item.mix else {
            return Ok(None);
        };
        let speakers = &self.corpus.speakers;
        let a = self.generator.embedding(&speakers[item.target])?.unwrap_or(&[]);
        let b = self.generator.embedding(&speakers[other])?.unwrap_or(&[]);
        let u = mixup_embedding(a, b, nu)?;
        let (_, frames) = self.corpus.segment(item.utterance, item.offset, seg_len);
        self.render(&frames, Some(&u), item.seed, seg_len).map(Some)
    }

    fn forward_item(&self, item: &BatchItem, seg_len: usize, regime: Regime) -> Result<ItemRun<T>> {
        let gen = &self.generator;
        let (real, frames) = self.corpus.segment(item.utterance, item.offset, seg_len);
        let frames = match self.mix_source(item, seg_len)? {
            Some(x_u) => {
                let b = self.analyzer.analyze(&Waveform::new(x_u, self.corpus.sample_rate))?;
                CondFrames::from_bundle(&b)?
            }
            None => frames,
        };
        let mut g = Graph::new();
        let spk = gen.speaker(&mut g, &self.corpus.speakers[item.target], true)?;
        let z = g.constant(gen.noise(item.seed, 0, seg_len), &[gen.cfg.noise_channels, seg_len])?;
        let x_hat = gen.generate(&mut g, &frames, spk, z, true)?;
        let real_var = g.constant(real.to_vec(), &[1, seg_len])?;
        Ok(ItemRun {
            graph: g,
            real: real.to_vec(),
            real_var,
            x_hat,
            recon: regime != Regime::Unaligned,
        })
    }

    /// One discriminator update (once active) followed by one generator update.
    pub fn train_on(&mut self, plan: &BatchPlan) -> Result<StepReport> {
        let s = plan.step;
        let cfg = &self.setup.train;
        let sched = cfg.schedule();
        let disc_on = s >= sched.disc_start;
        let perc_on = s >= sched.perceptual_start;
        let lr = lr_at(s, cfg);
        let clip = T::lit(cfg.grad_clip);
        let n = plan.items.len();
        let inv_b = T::lit(1.0 / n as f64);
        let seg_len = plan.seg_len;

        let this = &*self;
        let mut runs = crate::par::map(n, |i| this.forward_item(&plan.items[i], seg_len, plan.regime))
            .into_iter()
            .collect::<Result<Vec<_>>>()?;

        let (mut d_loss, mut d_norm, mut d_clipped) = (0.0, 0.0, false);
        if disc_on {
            let disc = &self.discriminator;
            let runs_ref = &runs;
            let parts = crate::par::map(n, |i| -> Result<(f64, Gradients<T>)> {
                let run = &runs_ref[i];
                let mut g = Graph::new();
                let xr = g.constant(run.real.clone(), &[1, seg_len])?;
                let xf = g.constant(run.graph.value(run.x_hat).to_vec(), &[1, seg_len])?;
                let sr = disc.forward(&mut g, xr, true)?;
                let sf = disc.forward(&mut g, xf, true)?;
                let l = lsgan_d(&mut g, sr, sf)?;
                let value = g.scalar(l).to_f64_lossy();
                let l = g.scale(l, inv_b)?;
                g.backward(l)?;
                Ok((value, g.param_grads(&disc.params)))
            });
            let mut grads = Vec::with_capacity(n);
            for p in parts {
                let (v, gr) = p?;
                d_loss += v;
                grads.push(gr);
            }
            d_loss /= n as f64;
            if !d_loss.is_finite() {
                return Err(TrainError::NonFinite {
                    what: "discriminator loss",
                    step: s,
                    detail: format!("mean {d_loss} over {n} items, regime {}", plan.regime.name()),
                });
            }
            let mut total = sum_grads(&self.discriminator.params, grads);
            let (norm, clipped) = total.clip_global_norm(clip);
            if clipped {
                log::info!("step {s}: discriminator gradient norm {norm} clipped to {}", cfg.grad_clip);
            }
            self.opt_d.step(&mut self.discriminator.params, &total, lr)?;
            (d_norm, d_clipped) = (norm.to_f64_lossy(), clipped);
        }

        let disc = &self.discriminator;
        let (mel, pitch) = (&self.mel, &self.pitch);
        let (weights, scales) = (&self.setup.weights, &self.setup.scales);
        let parts = crate::par::map_mut(&mut runs, |_, run| -> Result<(Terms, Gradients<T>)> {
            let g = &mut run.graph;
            let (x, x_hat) = (run.real_var, run.x_hat);
            let recon = if run.recon {
                Some(multires_recon(g, x, x_hat, scales)?)
            } else {
                None
            };
            let adv = if disc_on {
                let scores = disc.forward(g, x_hat, false)?;
                Some(lsgan_adv(g, scores)?)
            } else {
                None
            };
            let (pt, ph) = if perc_on {
                (
                    Some(perceptual_loss(g, pitch, x, x_hat)?),
                    Some(perceptual_loss(g, mel, x, x_hat)?),
                )
            } else {
                (None, None)
            };
            let total = weighted_total(g, recon, adv, pt, ph, weights)?;
            let val = |g: &Graph<T>, v: Option<Var>| v.map_or(0.0, |v| g.scalar(v).to_f64_lossy());
            let terms = Terms {
                recon: val(g, recon),
                adv: val(g, adv),
                pitch: val(g, pt),
                phon: val(g, ph),
                total: val(g, Some(total)),
            };
            if !terms.total.is_finite() {
                return Ok((terms, Gradients { tensors: Vec::new() }));
            }
            let scaled = g.scale(total, inv_b)?;
            g.backward(scaled)?;
            Ok((terms, g.param_grads(&self.generator.params)))
        });
        let mut sum = Terms::default();
        let mut grads = Vec::with_capacity(n);
        for (i, p) in parts.into_iter().enumerate() {
            let (t, gr) = p?;
            if !t.total.is_finite() {
                return Err(TrainError::NonFinite {
                    what: "generator loss",
                    step: s,
                    detail: format!(
                        "item {i} ({:?}): recon {} adv {} pitch {} phon {}",
                        plan.items[i], t.recon, t.adv, t.pitch, t.phon
                    ),
                });
            }
            sum.recon += t.recon;
            sum.adv += t.adv;
            sum.pitch += t.pitch;
            sum.phon += t.phon;
            sum.total += t.total;
            grads.push(gr);
        }
        drop(runs);
        let mut total = sum_grads(&self.generator.params, grads);
        let (g_norm, g_clipped) = total.clip_global_norm(clip);
        if g_clipped {
            log::info!("step {s}: generator gradient norm {g_norm} clipped to {}", cfg.grad_clip);
        }
        self.opt_g.step(&mut self.generator.params, &total, lr)?;
        self.step = s + 1;

        let nf = n as f64;
        Ok(StepReport {
            step: s,
            regime: plan.regime,
            lr,
            d_loss,
            recon: sum.recon / nf,
            adv: sum.adv / nf,
            pitch: sum.pitch / nf,
            phon: sum.phon / nf,
            g_loss: sum.total / nf,
            g_grad_norm: g_norm.to_f64_lossy(),
            d_grad_norm: d_norm,
            g_clipped,
            d_clipped,
        })
    }

    pub fn to_checkpoint(&self) -> CheckpointBundle {
        let mut tensors = params_to_tensors("g/", &self.generator.params);
        tensors.extend(params_to_tensors("d/", &self.discriminator.params));
        tensors.extend(optimizer_tensors("opt_g/", &self.generator.params, &self.opt_g));
        tensors.extend(optimizer_tensors("opt_d/", &self.discriminator.params, &self.opt_d));
        CheckpointBundle {
            step: self.step,
            tensors,
            rng_state: self.rng.state(),
            config_hash: self.setup.config_hash,
        }
    }

    /// Loads parameters, optimizer state, step and RNG from `b`. A config
    /// hash different from this run's only warns.
    pub fn restore(&mut self, b: &CheckpointBundle) -> Result<()> {
        if b.config_hash != self.setup.config_hash {
            log::warn!("checkpoint was written under a different configuration");
        }
        load_params("g/", &mut self.generator.params, b)?;
        load_params("d/", &mut self.discriminator.params, b)?;
        load_optimizer("opt_g/", &self.generator.params, &mut self.opt_g, b)?;
        load_optimizer("opt_d/", &self.discriminator.params, &mut self.opt_d, b)?;
        self.step = b.step;
        self.rng = SplitMix64::new(b.rng_state);
        Ok(())
    }
}

fn to_data<T: Real>(v: &[T]) -> TensorData {
    if T::DTYPE == 0 {
        TensorData::F32(v.iter().map(|x| x.to_f64_lossy() as f32).collect())
    } else {
        TensorData::F64(v.iter().map(|x| x.to_f64_lossy()).collect())
    }
}

fn from_data<T: Real>(name: &str, d: &TensorData) -> Result<Vec<T>> {
    match d {
        TensorData::F32(v) if T::DTYPE == 0 => Ok(v.iter().map(|&x| T::lit(x as f64)).collect()),
        TensorData::F64(v) if T::DTYPE == 1 => Ok(v.iter().map(|&x| T::lit(x)).collect()),
        other => {
            log::error!("tensor {name} has dtype {}", other.dtype());
            Err(TrainError::DType {
                found: other.dtype(),
                expected: T::DTYPE,
            })
        }
    }
}

fn find<'b>(b: &'b CheckpointBundle, name: &str) -> Result<&'b NamedTensor> {
    b.get(name)
        .ok_or_else(|| TrainError::Corrupt(format!("missing tensor {name}")))
}

pub fn params_to_tensors<T: Real>(prefix: &str, set: &ParamSet<T>) -> Vec<NamedTensor> {
    set.iter()
        .map(|p| NamedTensor {
            name: format!("{prefix}{}", p.name),
            dims: p.shape.clone(),
            data: to_data(&p.data),
        })
        .collect()
}

/// Overwrites every parameter of `set` from `prefix`-named tensors of `b`.
pub fn load_params<T: Real>(prefix: &str, set: &mut ParamSet<T>, b: &CheckpointBundle) -> Result<()> {
    for i in 0..set.len() {
        let name = format!("{prefix}{}", set.get(i).name);
        let t = find(b, &name)?;
        let data = from_data(&name, &t.data)?;
        let p = set.get_mut(i);
        if t.dims != p.shape {
            return Err(TrainError::Corrupt(format!(
                "tensor {name} has shape {:?}, model expects {:?}",
                t.dims, p.shape
            )));
        }
        p.data = data;
    }
    Ok(())
}

/// Speaker ids stored in a checkpoint's generator table, sorted.
pub fn checkpoint_speakers(b: &CheckpointBundle) -> Vec<String> {
    let mut ids: Vec<String> = b
        .tensors
        .iter()
        .filter_map(|t| t.name.strip_prefix("g/speaker.").map(str::to_string))
        .collect();
    ids.sort();
    ids
}

fn optimizer_tensors<T: Real>(prefix: &str, set: &ParamSet<T>, opt: &RAdam<T>) -> Vec<NamedTensor> {
    let mut out = Vec::with_capacity(2 * set.len() + 1);
    for (slot, moments) in [("m/", &opt.m), ("v/", &opt.v)] {
        for (p, data) in set.iter().zip(moments) {
            out.push(NamedTensor {
                name: format!("{prefix}{slot}{}", p.name),
                dims: p.shape.clone(),
                data: to_data(data),
            });
        }
    }
    out.push(NamedTensor {
        name: format!("{prefix}t"),
        dims: vec![1],
        data: TensorData::U64(vec![opt.t]),
    });
    out
}

fn load_optimizer<T: Real>(prefix: &str, set: &ParamSet<T>, opt: &mut RAdam<T>, b: &CheckpointBundle) -> Result<()> {
    for (slot, moments) in [("m/", &mut opt.m), ("v/", &mut opt.v)] {
        for (p, data) in set.iter().zip(moments.iter_mut()) {
            let name = format!("{prefix}{slot}{}", p.name);
            let t = find(b, &name)?;
            if t.dims != p.shape {
                return Err(TrainError::Corrupt(format!("tensor {name} has shape {:?}", t.dims)));
            }
            *data = from_data(&name, &t.data)?;
        }
    }
    let name = format!("{prefix}t");
    match &find(b, &name)?.data {
        TensorData::U64(v) if v.len() == 1 => opt.t = v[0],
        _ => return Err(TrainError::Corrupt(format!("tensor {name} is not a u64 counter"))),
    }
    Ok(())
}
