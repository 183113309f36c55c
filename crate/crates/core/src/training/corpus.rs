use std::path::{Path, PathBuf};

use crate::audio_io::{read_wav, Waveform};
use crate::dsp::{ingest_features, Analyzer, FeatureBundle, FeatureFile, FeatureKind};
use crate::nets::CondFrames;
use crate::real::Real;

use super::{Result, TrainError};

/// Mean-square level below which a training segment counts as silent.
pub const SILENCE_LEVEL: f64 = 1e-8;

#[derive(Debug, Clone, PartialEq)]
pub struct Utterance<T> {
    /// Index into [`Corpus::speakers`].
    pub speaker: usize,
    pub name: String,
    pub samples: Vec<T>,
    pub frames: CondFrames<T>,
}

/// Waveforms with their conditioning, grouped by speaker.
#[derive(Debug, Clone, PartialEq)]
pub struct Corpus<T> {
    pub sample_rate: u32,
    pub hop: usize,
    pub phonetic_dim: usize,
    /// Sorted speaker ids.
    pub speakers: Vec<String>,
    pub utterances: Vec<Utterance<T>>,
}

/// Where the extractor writes, and the file provider reads, one feature kind
/// of utterance `stem` of `speaker`.
pub fn feature_path(root: &Path, speaker: &str, stem: &str, kind: FeatureKind) -> PathBuf {
    root.join(speaker).join(format!("{stem}.{}", kind.suffix()))
}

/// `(speaker, stem, path)` for every `*.wav` under `root/<speaker>/`, sorted.
pub fn list_wavs(root: &Path) -> Result<Vec<(String, String, PathBuf)>> {
    let mut out = Vec::new();
    let mut dirs: Vec<PathBuf> = std::fs::read_dir(root)?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.is_dir())
        .collect();
    dirs.sort();
    for d in dirs {
        let speaker = d.file_name().unwrap_or_default().to_string_lossy().into_owned();
        let mut files: Vec<PathBuf> = std::fs::read_dir(&d)?
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| p.extension().is_some_and(|x| x.eq_ignore_ascii_case("wav")))
            .collect();
        files.sort();
        for f in files {
            let stem = f.file_stem().unwrap_or_default().to_string_lossy().into_owned();
            out.push((speaker.clone(), stem, f));
        }
    }
    Ok(out)
}

fn load_bundle<T: Real>(root: &Path, speaker: &str, stem: &str, n_samples: usize) -> Result<FeatureBundle<T>> {
    let read = |k| ingest_features::<T>(feature_path(root, speaker, stem, k));
    let (FeatureFile::Loudness(l), FeatureFile::Phonetic(p), FeatureFile::F0(f)) =
        (read(FeatureKind::Loudness)?, read(FeatureKind::Phonetic)?, read(FeatureKind::F0)?)
    else {
        return Err(TrainError::Config(format!("feature files of {speaker}/{stem} hold the wrong kinds")));
    };
    Ok(FeatureBundle::from_tracks(n_samples, l, p, f)?)
}

impl<T: Real> Corpus<T> {
    /// Builds a corpus from `(speaker, name, waveform)` triples, computing
    /// features with `analyzer`.
    pub fn from_waveforms(items: Vec<(String, String, Waveform<T>)>, analyzer: &Analyzer<T>) -> Result<Self> {
        let bundles = crate::par::map(items.len(), |i| analyzer.analyze(&items[i].2));
        let mut with = Vec::with_capacity(items.len());
        for (item, b) in items.into_iter().zip(bundles) {
            with.push((item, b?));
        }
        Self::assemble(with, analyzer.grid.sample_rate, analyzer.grid.hop, analyzer.phonetic_dim())
    }

    /// Loads `root/<speaker>/*.wav`. Features come from `analyzer`, or from
    /// SVCF files under `features` when given.
    pub fn load(root: &Path, analyzer: &Analyzer<T>, features: Option<&Path>) -> Result<Self> {
        let sr = analyzer.grid.sample_rate;
        let files = list_wavs(root)?;
        if files.is_empty() {
            return Err(TrainError::EmptyCorpus(format!("no wav files under {}", root.display())));
        }
        let loaded = crate::par::map(files.len(), |i| -> Result<_> {
            let (speaker, stem, path) = &files[i];
            let w: Waveform<T> = read_wav(path, sr)?;
            let b = match features {
                Some(froot) => load_bundle(froot, speaker, stem, w.len())?,
                None => analyzer.analyze(&w)?,
            };
            Ok(((speaker.clone(), stem.clone(), w), b))
        });
        let with = loaded.into_iter().collect::<Result<Vec<_>>>()?;
        Self::assemble(with, sr, analyzer.grid.hop, analyzer.phonetic_dim())
    }

    fn assemble(
        items: Vec<((String, String, Waveform<T>), FeatureBundle<T>)>,
        sample_rate: u32,
        hop: usize,
        phonetic_dim: usize,
    ) -> Result<Self> {
        if items.is_empty() {
            return Err(TrainError::EmptyCorpus("no utterances".into()));
        }
        let mut speakers: Vec<String> = items.iter().map(|((s, _, _), _)| s.clone()).collect();
        speakers.sort();
        speakers.dedup();
        let mut utterances = Vec::with_capacity(items.len());
        for ((speaker, name, w), b) in items {
            if b.grid.hop != hop || b.phonetic.dim != phonetic_dim {
                return Err(TrainError::Config(format!(
                    "{speaker}/{name}: features on hop {} dim {}, corpus uses hop {hop} dim {phonetic_dim}",
                    b.grid.hop, b.phonetic.dim
                )));
            }
            utterances.push(Utterance {
                speaker: speakers.binary_search(&speaker).expect("listed speaker"),
                name,
                frames: CondFrames::from_bundle(&b)?,
                samples: w.samples,
            });
        }
        Ok(Self {
            sample_rate,
            hop,
            phonetic_dim,
            speakers,
            utterances,
        })
    }

    pub fn n_speakers(&self) -> usize {
        self.speakers.len()
    }

    /// Utterances of `speaker` that can supply a `seg_len` segment.
    pub fn usable(&self, speaker: usize, seg_len: usize) -> Vec<usize> {
        self.utterances
            .iter()
            .enumerate()
            .filter(|(_, u)| u.speaker == speaker && u.samples.len() >= seg_len)
            .map(|(i, _)| i)
            .collect()
    }

    /// Samples `[offset, offset + seg_len)` of utterance `utt` and the frames
    /// conditioning them. `offset` must be a multiple of the hop.
    pub fn segment(&self, utt: usize, offset: usize, seg_len: usize) -> (&[T], CondFrames<T>) {
        debug_assert_eq!(offset % self.hop, 0);
        let u = &self.utterances[utt];
        let f0 = offset / self.hop;
        let frames = u.frames.window(f0, f0 + seg_len / self.hop + 1);
        (&u.samples[offset..offset + seg_len], frames)
    }

    pub fn is_silent(x: &[T]) -> bool {
        let ms = x.iter().map(|v| v.to_f64_lossy().powi(2)).sum::<f64>() / x.len().max(1) as f64;
        ms < SILENCE_LEVEL
    }
}
