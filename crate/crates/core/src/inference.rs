//! Offline and streaming conversion.
//!
//! Both paths run the same incremental engine: features are computed frame
//! by frame once their analysis window is complete, and output is rendered
//! in blocks of frames, each with enough surrounding context that the block
//! equals the corresponding slice of a whole-signal forward pass. Offline
//! conversion feeds the whole input as one chunk.

use std::io::{ErrorKind, Read, Write};
use std::sync::mpsc::sync_channel;
use std::time::Instant;

use thiserror::Error;

use crate::autodiff::Graph;
use crate::dsp::{Analyzer, DspError, ExcitationSynth, F0Track, FrameGrid};
use crate::nets::{CondFrames, Generator, NetsError};
use crate::real::Real;

/// Output frames rendered per block unless configured otherwise.
pub const DEFAULT_BLOCK_FRAMES: usize = 32;

#[derive(Debug, Error)]
pub enum InferenceError {
    #[error(transparent)]
    Nets(#[from] NetsError),
    #[error(transparent)]
    Dsp(#[from] DspError),
    #[error(transparent)]
    Tensor(#[from] crate::autodiff::TensorError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error("model expects {model} at {what}, analyzer provides {analyzer}")]
    Mismatch {
        what: &'static str,
        model: usize,
        analyzer: usize,
    },
    #[error("non-finite input sample at index {0}")]
    NonFinite(usize),
    #[error("stream worker failed: {0}")]
    Worker(String),
}

pub type Result<T> = std::result::Result<T, InferenceError>;

/// A generator bound to a target speaker and a noise seed.
pub struct Converter<T: Real> {
    pub generator: Generator<T>,
    pub analyzer: Analyzer<T>,
    embedding: Option<Vec<T>>,
    pub seed: u64,
    pub block_frames: usize,
}

impl<T: Real> Converter<T> {
    /// `speaker` selects the target embedding; single-speaker models ignore it.
    pub fn new(generator: Generator<T>, analyzer: Analyzer<T>, speaker: Option<&str>, seed: u64) -> Result<Self> {
        if generator.dims.hop != analyzer.grid.hop {
            return Err(InferenceError::Mismatch {
                what: "hop",
                model: generator.dims.hop,
                analyzer: analyzer.grid.hop,
            });
        }
        if generator.dims.phonetic != analyzer.phonetic_dim() {
            return Err(InferenceError::Mismatch {
                what: "phonetic dim",
                model: generator.dims.phonetic,
                analyzer: analyzer.phonetic_dim(),
            });
        }
        let embedding = if generator.uses_speakers() {
            let id = speaker.ok_or_else(|| NetsError::UnknownSpeaker {
                id: String::new(),
                available: generator.speakers().to_vec(),
            })?;
            generator.embedding(id)?.map(<[T]>::to_vec)
        } else {
            if let Some(id) = speaker {
                log::info!("single-speaker model: ignoring speaker id {id}");
            }
            None
        };
        Ok(Self {
            generator,
            analyzer,
            embedding,
            seed,
            block_frames: DEFAULT_BLOCK_FRAMES,
        })
    }

    pub fn hop(&self) -> usize {
        self.analyzer.grid.hop
    }

    /// Input samples the stream must run ahead of its output.
    pub fn latency_samples(&self) -> usize {
        (self.generator.margin_frames() + 3) * self.hop() + self.analyzer.grid.frame_size / 2
    }

    /// Whole-signal forward pass. Memory grows with the input; this is the
    /// reference the windowed engine reproduces.
    pub fn convert_full(&self, x: &[T]) -> Result<Vec<T>> {
        if x.is_empty() {
            return Ok(Vec::new());
        }
        let n = x.len();
        let mut padded = x.to_vec();
        padded.resize(n.max(self.analyzer.min_samples()), T::zero());
        let w = crate::audio_io::Waveform::new(padded, self.analyzer.grid.sample_rate);
        let frames = CondFrames::from_bundle(&self.analyzer.analyze(&w)?)?;
        let gen = &self.generator;
        let mut g = Graph::new();
        let spk = self.speaker_var(&mut g)?;
        let len = w.len();
        let z = g.constant(gen.noise(self.seed, 0, len), &[gen.cfg.noise_channels, len])?;
        let y = gen.generate(&mut g, &frames, spk, z, false)?;
        Ok(g.value(y)[..n].to_vec())
    }

    /// Windowed conversion of a complete signal.
    pub fn convert(&self, x: &[T]) -> Result<Vec<T>> {
        let mut s = self.stream();
        let mut out = s.push(x)?;
        out.extend(s.finish()?);
        Ok(out)
    }

    pub fn stream(&self) -> StreamEngine<'_, T> {
        StreamEngine::new(self)
    }

    fn speaker_var(&self, g: &mut Graph<T>) -> Result<Option<crate::autodiff::Var>> {
        Ok(match &self.embedding {
            Some(e) => Some(g.constant(e.clone(), &[e.len()])?),
            None => None,
        })
    }
}

/// Incremental conversion state.
pub struct StreamEngine<'a, T: Real> {
    conv: &'a Converter<T>,
    /// Input samples from `hist_base` on.
    hist: Vec<T>,
    hist_base: usize,
    received: usize,
    /// Features of frames `[0, frames_done)`.
    frames_done: usize,
    loud_db: Vec<T>,
    phonetic: Vec<T>,
    f0: F0Track<T>,
    synth: ExcitationSynth,
    /// Excitation samples from `exc_base` on.
    exc: Vec<T>,
    exc_base: usize,
    /// Output frames already rendered.
    out_frames: usize,
}

impl<'a, T: Real> StreamEngine<'a, T> {
    fn new(conv: &'a Converter<T>) -> Self {
        let grid = conv.analyzer.grid;
        Self {
            conv,
            hist: Vec::new(),
            hist_base: 0,
            received: 0,
            frames_done: 0,
            loud_db: Vec::new(),
            phonetic: Vec::new(),
            f0: F0Track::from_values(Vec::new(), Vec::new(), FrameGrid { n_frames: 0, ..grid }),
            synth: ExcitationSynth::new(grid.sample_rate, grid.hop),
            exc: Vec::new(),
            exc_base: 0,
            out_frames: 0,
        }
    }

    pub fn received(&self) -> usize {
        self.received
    }

    /// Emitted output samples so far.
    pub fn emitted(&self) -> usize {
        self.out_frames * self.conv.hop()
    }

    /// Consumes input and returns whatever output became final.
    pub fn push(&mut self, chunk: &[T]) -> Result<Vec<T>> {
        if let Some(i) = chunk.iter().position(|v| !v.is_finite()) {
            return Err(InferenceError::NonFinite(self.received + i));
        }
        self.hist.extend_from_slice(chunk);
        self.received += chunk.len();
        let grid = self.conv.analyzer.grid;
        let mut settled = self.frames_done;
        while crate::dsp::frames::frame_is_settled(settled, grid.hop, grid.frame_size, self.received) {
            settled += 1;
        }
        self.analyze_to(settled);
        // excitation sample t reads frames up to t / hop + 2
        let exc_end = settled.saturating_sub(2) * grid.hop;
        self.render_excitation(exc_end);

        let reach = self.conv.generator.margin_frames() + 1;
        let ready = settled.saturating_sub(2).saturating_sub(reach);
        let mut out = Vec::new();
        while self.out_frames < ready {
            let b = (self.out_frames + self.conv.block_frames).min(ready);
            out.extend(self.render_block(self.out_frames, b, None)?);
            self.out_frames = b;
        }
        self.trim();
        Ok(out)
    }

    /// Flushes the remaining output. The total equals the input length.
    pub fn finish(mut self) -> Result<Vec<T>> {
        let n = self.received;
        if n == 0 {
            return Ok(Vec::new());
        }
        let len = n.max(self.conv.analyzer.min_samples());
        self.hist.resize(len - self.hist_base, T::zero());
        let hop = self.conv.hop();
        let n_frames = len / hop + 1;
        self.analyze_to(n_frames);
        self.render_excitation(n_frames * hop);
        let before = self.emitted();
        let mut out = Vec::new();
        let last = n.div_ceil(hop);
        while self.out_frames < last {
            let b = (self.out_frames + self.conv.block_frames).min(last);
            out.extend(self.render_block(self.out_frames, b, Some((len, n_frames)))?);
            self.out_frames = b;
        }
        out.truncate(n - before);
        Ok(out)
    }

    fn analyze_to(&mut self, end: usize) {
        let an = &self.conv.analyzer;
        let hop = an.grid.hop;
        let base_frame = self.hist_base / hop;
        let dim = an.phonetic_dim();
        let hist = &self.hist;
        let start = self.frames_done;
        let feats = crate::par::map(end.saturating_sub(start), |k| {
            let mut phon = vec![T::zero(); dim];
            let (l, f, c) = an.frame(hist, start + k - base_frame, &mut phon);
            (l, f, c, phon)
        });
        for (l, f, c, phon) in feats {
            self.loud_db.push(l);
            self.phonetic.extend(phon);
            self.f0.f0_hz.push(f);
            self.f0.voiced.push(f > T::zero());
            self.f0.confidence.push(c);
        }
        self.f0.grid.n_frames = self.f0.len();
        self.frames_done = self.frames_done.max(end);
    }

    fn render_excitation(&mut self, end: usize) {
        if end > self.synth.position() {
            self.synth.render(&self.f0, end, &mut self.exc);
        }
    }

    /// Output frames `[a, b)`. `end` is `(padded length, frame count)` once
    /// the input is complete.
    fn render_block(&self, a: usize, b: usize, end: Option<(usize, usize)>) -> Result<Vec<T>> {
        let conv = self.conv;
        let gen = &conv.generator;
        let hop = conv.hop();
        let (ma, mc) = (gen.audio_margin_frames(), gen.context_margin_frames());
        let limit = end.map_or(usize::MAX, |(_, nf)| nf);
        // frame-rate window, then the narrower sample-rate window inside it
        let (ca, cb) = (a.saturating_sub(ma + mc), (b + ma + mc).min(limit));
        let (sa, sb) = (a.saturating_sub(ma), (b + ma).min(limit));
        let dim = conv.analyzer.phonetic_dim();
        let exc_from = ca * hop - self.exc_base;
        let frames = CondFrames::from_tracks(
            &self.loud_db[ca..cb],
            &self.phonetic[ca * dim..cb * dim],
            dim,
            &self.exc[exc_from..exc_from + (cb - ca) * hop],
            hop,
        )?;
        let mut g = Graph::new();
        let spk = conv.speaker_var(&mut g)?;
        let h = gen.frame_conditioning(&mut g, &frames, spk, false)?;
        let h = g.slice_time(h, sa - ca, sb - sa)?;
        let cond = gen.upsample_conditioning(&mut g, h, false)?;
        let cond = gen.attach_excitation(&mut g, cond, &frames, sa - ca)?;
        let s_end = match end {
            Some((len, nf)) if sb == nf => len,
            _ => sb * hop,
        };
        let z_len = s_end - sa * hop;
        let cond = if z_len < g.shape(cond)[1] {
            g.slice_time(cond, 0, z_len)?
        } else {
            cond
        };
        let z = g.constant(gen.noise(conv.seed, sa * hop, z_len), &[gen.cfg.noise_channels, z_len])?;
        let y = gen.forward(&mut g, z, cond, false)?;
        let from = (a - sa) * hop;
        let to = (b * hop).min(s_end) - sa * hop;
        Ok(g.value(y)[from..to].to_vec())
    }

    /// Drops input and excitation no future frame or block can read.
    fn trim(&mut self) {
        let conv = self.conv;
        let hop = conv.hop();
        let half = conv.analyzer.grid.frame_size / 2;
        let keep_in = (self.frames_done * hop).saturating_sub(half) / hop * hop;
        if keep_in >= self.hist_base + 16 * hop {
            self.hist.drain(..keep_in - self.hist_base);
            self.hist_base = keep_in;
        }
        let reach = conv.generator.margin_frames();
        let keep_exc = self.out_frames.saturating_sub(reach) * hop;
        if keep_exc >= self.exc_base + 16 * hop {
            self.exc.drain(..keep_exc - self.exc_base);
            self.exc_base = keep_exc;
        }
    }
}

/// Wall-clock accounting of a streaming run.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StreamStats {
    pub samples_in: usize,
    pub samples_out: usize,
    pub wall_seconds: f64,
    pub sample_rate: u32,
}

impl StreamStats {
    /// Audio seconds per wall-clock second.
    pub fn real_time_factor(&self) -> f64 {
        let audio = self.samples_in as f64 / self.sample_rate as f64;
        if self.wall_seconds > 0.0 {
            audio / self.wall_seconds
        } else {
            f64::INFINITY
        }
    }
}

/// Reader, converter and writer threads joined by bounded queues. Samples
/// are raw little-endian `f32` in both directions.
pub fn run_pipeline<T: Real, R: Read + Send, W: Write + Send>(
    conv: &Converter<T>,
    mut input: R,
    mut output: W,
    chunk: usize,
) -> Result<StreamStats> {
    const DEPTH: usize = 4;
    let chunk = chunk.max(1);
    let started = Instant::now();
    let (in_tx, in_rx) = sync_channel::<Vec<f32>>(DEPTH);
    let (out_tx, out_rx) = sync_channel::<Vec<f32>>(DEPTH);

    let (read_res, compute_res, write_res) = std::thread::scope(|s| {
        let reader = s.spawn(move || -> std::io::Result<()> {
            let mut buf = vec![0u8; chunk * 4];
            let mut fill = 0;
            loop {
                let got = match input.read(&mut buf[fill..]) {
                    Ok(0) => break,
                    Ok(k) => k,
                    Err(e) if e.kind() == ErrorKind::Interrupted => continue,
                    Err(e) => return Err(e),
                };
                fill += got;
                if fill == buf.len() {
                    let samples = buf.chunks_exact(4).map(|b| f32::from_le_bytes(b.try_into().unwrap())).collect();
                    if in_tx.send(samples).is_err() {
                        return Ok(());
                    }
                    fill = 0;
                }
            }
            if fill % 4 != 0 {
                log::warn!("dropping {} trailing bytes that do not form a sample", fill % 4);
            }
            let whole = fill / 4 * 4;
            if whole > 0 {
                let samples = buf[..whole].chunks_exact(4).map(|b| f32::from_le_bytes(b.try_into().unwrap())).collect();
                let _ = in_tx.send(samples);
            }
            Ok(())
        });
        let writer = s.spawn(move || -> std::io::Result<usize> {
            let mut written = 0;
            for block in out_rx {
                let mut bytes = Vec::with_capacity(block.len() * 4);
                for v in &block {
                    bytes.extend_from_slice(&v.to_le_bytes());
                }
                output.write_all(&bytes)?;
                written += block.len();
            }
            output.flush()?;
            Ok(written)
        });
        let compute = (|| -> Result<usize> {
            let mut engine = conv.stream();
            let send = |y: Vec<T>| -> Result<()> {
                if y.is_empty() {
                    return Ok(());
                }
                out_tx
                    .send(y.iter().map(|v| v.to_f64_lossy() as f32).collect())
                    .map_err(|_| InferenceError::Worker("writer stopped".into()))
            };
            for block in &in_rx {
                let x: Vec<T> = block.iter().map(|&v| T::lit(v as f64)).collect();
                send(engine.push(&x)?)?;
            }
            let n = engine.received();
            send(engine.finish()?)?;
            Ok(n)
        })();
        drop(out_tx);
        drop(in_rx);
        (reader.join(), compute, writer.join())
    });
    let samples_in = compute_res?;
    read_res
        .map_err(|_| InferenceError::Worker("reader panicked".into()))?
        .map_err(InferenceError::Io)?;
    let samples_out = write_res
        .map_err(|_| InferenceError::Worker("writer panicked".into()))?
        .map_err(InferenceError::Io)?;
    Ok(StreamStats {
        samples_in,
        samples_out,
        wall_seconds: started.elapsed().as_secs_f64(),
        sample_rate: conv.analyzer.grid.sample_rate,
    })
}
