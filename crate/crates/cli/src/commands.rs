use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use anyhow::{anyhow, bail, Context};
use serde::Serialize;
use sha2::{Digest, Sha256};
use svc_core::audio_io::{read_wav, write_wav, Waveform};
use svc_core::config::{FeatureProvider, RunConfig};
use svc_core::dsp::svcf::{write_svcf, FeatureFile, FeatureKind};
use svc_core::inference::{run_pipeline, Converter};
use svc_core::metrics::{aggregate, compare_waveforms, format_report, MetricReport};
use svc_core::nets::{FeatureDims, Generator};
use svc_core::par;
use svc_core::training::{
    checkpoint_speakers, feature_path, list_wavs, load_checkpoint, load_params, save_checkpoint, Corpus, Trainer,
};

use crate::error::Result;
use crate::{Common, Sample};

const KINDS: [FeatureKind; 3] = [FeatureKind::Loudness, FeatureKind::Phonetic, FeatureKind::F0];

pub fn load_config(common: &Common) -> Result<RunConfig> {
    let mut cfg = match &common.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    if let Some(seed) = common.seed {
        cfg.seed = seed;
    }
    Ok(cfg)
}

/// `(speaker, stem, path)` for WAVs directly in `root` (speaker `""`) and in
/// its per-speaker subdirectories.
fn wav_jobs(root: &Path) -> anyhow::Result<Vec<(String, String, PathBuf)>> {
    let mut flat: Vec<PathBuf> = fs::read_dir(root)
        .with_context(|| format!("cannot read {}", root.display()))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.is_file() && is_wav(p))
        .collect();
    flat.sort();
    let mut jobs: Vec<_> = flat
        .into_iter()
        .map(|p| (String::new(), stem_of(&p), p))
        .collect();
    jobs.extend(list_wavs(root)?);
    Ok(jobs)
}

fn is_wav(p: &Path) -> bool {
    p.extension().is_some_and(|x| x.eq_ignore_ascii_case("wav"))
}

fn stem_of(p: &Path) -> String {
    p.file_stem().unwrap_or_default().to_string_lossy().into_owned()
}

/// Digest of the audio bytes and every setting that affects the features.
fn source_digest(cfg: &RunConfig, wav: &[u8]) -> String {
    let f = &cfg.features;
    let settings = format!(
        "{} {} {} {} {} {} {}",
        env!("CARGO_PKG_VERSION"),
        cfg.sample_rate,
        cfg.hop,
        f.frame_size,
        f.fmin,
        f.fmax,
        f.voicing_threshold
    );
    let mut h = Sha256::new();
    h.update(settings.as_bytes());
    h.update(wav);
    hex::encode(h.finalize())
}

/// Returns the number of feature files written (0 when up to date).
fn extract_one(cfg: &RunConfig, out: &Path, speaker: &str, stem: &str, wav: &Path) -> anyhow::Result<usize> {
    let bytes = fs::read(wav)?;
    let digest = source_digest(cfg, &bytes);
    let stamp = feature_path(out, speaker, stem, FeatureKind::F0).with_file_name(format!("{stem}.source.sha256"));
    let fresh = fs::read_to_string(&stamp).is_ok_and(|s| s.trim() == digest)
        && KINDS.iter().all(|&k| feature_path(out, speaker, stem, k).is_file());
    if fresh {
        return Ok(0);
    }
    let analyzer = cfg.analyzer::<Sample>()?;
    let w: Waveform<Sample> = read_wav(wav, cfg.sample_rate)?;
    let b = analyzer.analyze(&w)?;
    if let Some(dir) = stamp.parent() {
        fs::create_dir_all(dir)?;
    }
    let files = [
        FeatureFile::Loudness(b.loudness),
        FeatureFile::Phonetic(b.phonetic),
        FeatureFile::F0(b.f0),
    ];
    for f in &files {
        write_svcf(feature_path(out, speaker, stem, f.kind()), f)?;
    }
    fs::write(&stamp, format!("{digest}\n"))?;
    Ok(files.len())
}

pub fn extract(cfg: &RunConfig, input: Option<PathBuf>, output: Option<PathBuf>) -> Result<()> {
    let input = input.unwrap_or_else(|| cfg.paths.corpus.clone());
    let output = output.unwrap_or_else(|| cfg.features.dir.clone());
    let jobs = wav_jobs(&input)?;
    if jobs.is_empty() {
        return Err(anyhow!("no wav files under {}", input.display()).into());
    }
    let results = par::map(jobs.len(), |i| {
        let (speaker, stem, path) = &jobs[i];
        extract_one(cfg, &output, speaker, stem, path)
    });
    let (mut written, mut fresh, mut failed) = (0, 0, Vec::new());
    for ((_, _, path), r) in jobs.iter().zip(results) {
        match r {
            Ok(0) => fresh += 1,
            Ok(n) => written += n,
            Err(e) => failed.push(format!("{}: {e:#}", path.display())),
        }
    }
    println!("wrote {written} files, {fresh} utterances up to date, {} failed", failed.len());
    for f in &failed {
        eprintln!("  {f}");
    }
    if !failed.is_empty() {
        return Err(anyhow!("{} of {} files failed", failed.len(), jobs.len()).into());
    }
    Ok(())
}

pub fn train(cfg: &RunConfig, resume: Option<&Path>, steps: Option<u64>) -> Result<()> {
    let setup = cfg.train_setup()?;
    let analyzer = cfg.analyzer::<Sample>()?;
    let out = &cfg.paths.output;
    let run = || -> anyhow::Result<()> {
        fs::create_dir_all(out).with_context(|| format!("cannot create {}", out.display()))?;
        fs::write(out.join("config.toml"), cfg.to_toml()?)?;
        let features = match cfg.features.provider {
            FeatureProvider::Builtin => None,
            FeatureProvider::SvcfFiles => Some(cfg.features.dir.as_path()),
        };
        let corpus = Corpus::load(&cfg.paths.corpus, &analyzer, features)
            .with_context(|| format!("cannot load corpus {}", cfg.paths.corpus.display()))?;
        log::info!("{} utterances from {} speakers", corpus.utterances.len(), corpus.n_speakers());
        let sched = setup.train.schedule();
        let mut trainer = Trainer::new(setup.clone(), &corpus, &analyzer)?;
        let mut opts = fs::OpenOptions::new();
        opts.create(true);
        if let Some(p) = resume {
            trainer.restore(&load_checkpoint(p).with_context(|| format!("cannot resume from {}", p.display()))?)?;
            opts.append(true);
        } else {
            opts.write(true).truncate(true);
        }
        let mut log_file = BufWriter::new(opts.open(out.join("train.log"))?);
        let stop = steps.map_or(sched.total_steps, |n| (trainer.step + n).min(sched.total_steps));
        let stdout = std::io::stdout();
        while trainer.step < stop {
            let report = trainer.step()?;
            writeln!(stdout.lock(), "{report}")?;
            writeln!(log_file, "{report}")?;
            if trainer.step % sched.checkpoint_every == 0 {
                log_file.flush()?;
                save_checkpoint(out.join(format!("step-{:08}.svck", trainer.step)), &trainer.to_checkpoint())?;
            }
        }
        log_file.flush()?;
        save_checkpoint(out.join("latest.svck"), &trainer.to_checkpoint())?;
        Ok(())
    };
    Ok(run()?)
}

fn converter(cfg: &RunConfig, checkpoint: &Path, speaker: Option<&str>) -> anyhow::Result<Converter<Sample>> {
    let bundle = load_checkpoint(checkpoint).with_context(|| format!("cannot load {}", checkpoint.display()))?;
    let analyzer = cfg.analyzer::<Sample>()?;
    let dims = FeatureDims {
        phonetic: analyzer.phonetic_dim(),
        hop: analyzer.grid.hop,
    };
    let mut g = Generator::new(cfg.generator.clone(), dims, &checkpoint_speakers(&bundle), 0)?;
    load_params("g/", &mut g.params, &bundle).context("checkpoint does not match the configured generator")?;
    let mut c = Converter::new(g, analyzer, speaker, cfg.seed)?;
    c.block_frames = cfg.stream.block_frames;
    Ok(c)
}

pub fn convert(cfg: &RunConfig, checkpoint: &Path, speaker: Option<&str>, input: &Path, output: &Path) -> Result<()> {
    let run = || -> anyhow::Result<()> {
        let c = converter(cfg, checkpoint, speaker)?;
        let x: Waveform<Sample> = read_wav(input, cfg.sample_rate)?;
        let y = c.convert(&x.samples)?;
        let stats = write_wav(output, &Waveform::new(y, cfg.sample_rate))?;
        if stats.clipped > 0 {
            eprintln!("clipped {} samples", stats.clipped);
        }
        Ok(())
    };
    Ok(run()?)
}

pub fn stream(cfg: &RunConfig, checkpoint: &Path, speaker: Option<&str>, chunk: Option<usize>) -> Result<()> {
    let chunk = chunk.unwrap_or(cfg.stream.chunk);
    if chunk == 0 {
        return Err(svc_core::config::ConfigError::Invalid("--chunk must be >= 1".into()).into());
    }
    let run = || -> anyhow::Result<()> {
        let c = converter(cfg, checkpoint, speaker)?;
        let out = BufWriter::new(std::io::stdout());
        let stats = run_pipeline(&c, std::io::stdin(), out, chunk)?;
        eprintln!(
            "samples={} audio_seconds={:.3} wall_seconds={:.3} rtf={:.3}",
            stats.samples_out,
            stats.samples_in as f64 / stats.sample_rate as f64,
            stats.wall_seconds,
            stats.real_time_factor()
        );
        Ok(())
    };
    Ok(run()?)
}

/// WAV paths under `root`, relative to it, sorted.
fn relative_wavs(root: &Path) -> anyhow::Result<Vec<PathBuf>> {
    fn walk(root: &Path, dir: &Path, out: &mut Vec<PathBuf>) -> anyhow::Result<()> {
        for e in fs::read_dir(dir).with_context(|| format!("cannot read {}", dir.display()))? {
            let p = e?.path();
            if p.is_dir() {
                walk(root, &p, out)?;
            } else if is_wav(&p) {
                out.push(p.strip_prefix(root)?.to_path_buf());
            }
        }
        Ok(())
    }
    let mut out = Vec::new();
    walk(root, root, &mut out)?;
    out.sort();
    Ok(out)
}

#[derive(Serialize)]
struct JsonRow<'a> {
    file: &'a str,
    #[serde(flatten)]
    metrics: MetricReport,
}

#[derive(Serialize)]
struct JsonReport<'a> {
    files: Vec<JsonRow<'a>>,
    all: MetricReport,
}

pub fn eval(cfg: &RunConfig, reference: &Path, hypothesis: &Path, report: Option<&Path>, strict: bool) -> Result<()> {
    let run = || -> anyhow::Result<()> {
        let refs = relative_wavs(reference)?;
        let hyps = relative_wavs(hypothesis)?;
        let missing: Vec<String> = refs
            .iter()
            .filter(|r| hyps.binary_search(r).is_err())
            .map(|r| r.display().to_string())
            .collect();
        if !missing.is_empty() {
            bail!("missing hypothesis files: {}", missing.join(", "));
        }
        let extra: Vec<String> = hyps
            .iter()
            .filter(|h| refs.binary_search(h).is_err())
            .map(|h| h.display().to_string())
            .collect();
        if !extra.is_empty() {
            if strict {
                bail!("hypothesis files without a reference: {}", extra.join(", "));
            }
            log::warn!("ignoring hypothesis files without a reference: {}", extra.join(", "));
        }
        if refs.is_empty() {
            bail!("no wav files under {}", reference.display());
        }
        let (grid, pitch) = (cfg.grid(), cfg.pitch());
        let results = par::map(refs.len(), |i| -> anyhow::Result<MetricReport> {
            let r: Waveform<Sample> = read_wav(reference.join(&refs[i]), cfg.sample_rate)?;
            let h: Waveform<Sample> = read_wav(hypothesis.join(&refs[i]), cfg.sample_rate)?;
            if strict && r.len() != h.len() {
                bail!("lengths differ: {} vs {} samples", r.len(), h.len());
            }
            Ok(compare_waveforms(&r, &h, &grid, pitch)?)
        });
        let mut rows = Vec::with_capacity(refs.len());
        let mut failed = Vec::new();
        for (name, r) in refs.iter().zip(results) {
            let name = name.display().to_string();
            match r {
                Ok(m) => rows.push((name, m)),
                Err(e) => failed.push(format!("{name}: {e:#}")),
            }
        }
        print!("{}", format_report(&rows));
        if let Some(path) = report {
            let json = JsonReport {
                files: rows
                    .iter()
                    .map(|(f, m)| JsonRow { file: f, metrics: *m })
                    .collect(),
                all: aggregate(&rows),
            };
            let mut w = BufWriter::new(File::create(path).with_context(|| format!("cannot write {}", path.display()))?);
            serde_json::to_writer_pretty(&mut w, &json)?;
            writeln!(w)?;
            w.flush()?;
        }
        if !failed.is_empty() {
            for f in &failed {
                eprintln!("  {f}");
            }
            bail!("{} of {} files failed", failed.len(), refs.len());
        }
        Ok(())
    };
    Ok(run()?)
}
