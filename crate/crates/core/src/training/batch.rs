use crate::real::Real;
use crate::rng::SplitMix64;

use super::corpus::Corpus;
use super::{Result, TrainError};

const MAX_REDRAWS: usize = 64;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Regime {
    /// Reconstruct each segment with its own speaker.
    Aligned,
    /// Convert to another speaker; no reconstruction target.
    Unaligned,
    /// Convert to a blend of two speakers without gradients, then convert
    /// back to the source speaker and reconstruct.
    Mixup,
}

impl Regime {
    pub fn name(self) -> &'static str {
        match self {
            Self::Aligned => "aligned",
            Self::Unaligned => "unaligned",
            Self::Mixup => "mixup",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BatchItem {
    pub utterance: usize,
    /// Hop-aligned start sample of the segment.
    pub offset: usize,
    /// Speaker of the segment.
    pub source: usize,
    /// Speaker whose embedding conditions the trained pass.
    pub target: usize,
    /// Second speaker and blend weight of the gradient-free first pass.
    pub mix: Option<(usize, f64)>,
    /// Noise seed.
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BatchPlan {
    pub regime: Regime,
    pub step: u64,
    pub seg_len: usize,
    pub items: Vec<BatchItem>,
}

fn other_speaker(rng: &mut SplitMix64, n: usize, not: usize) -> usize {
    let j = rng.below(n - 1);
    if j >= not {
        j + 1
    } else {
        j
    }
}

/// Draws `batch_size` segments for one step. Silent segments are redrawn.
pub fn make_batch<T: Real>(
    regime: Regime,
    corpus: &Corpus<T>,
    batch_size: usize,
    seg_len: usize,
    step: u64,
    rng: &mut SplitMix64,
) -> Result<BatchPlan> {
    let n = corpus.n_speakers();
    if n == 0 {
        return Err(TrainError::EmptyCorpus("no speakers".into()));
    }
    if regime != Regime::Aligned && n < 2 {
        return Err(TrainError::SingleSpeaker(regime));
    }
    let pools: Vec<Vec<usize>> = (0..n).map(|s| corpus.usable(s, seg_len)).collect();
    if let Some(s) = pools.iter().position(|p| p.is_empty()) {
        return Err(TrainError::EmptyCorpus(format!(
            "speaker {} has no utterance of at least {seg_len} samples",
            corpus.speakers[s]
        )));
    }
    let mut items = Vec::with_capacity(batch_size);
    for _ in 0..batch_size {
        let source = rng.below(n);
        let pool = &pools[source];
        let mut found = None;
        for _ in 0..MAX_REDRAWS {
            let utt = pool[rng.below(pool.len())];
            let slots = (corpus.utterances[utt].samples.len() - seg_len) / corpus.hop + 1;
            let offset = rng.below(slots) * corpus.hop;
            if !Corpus::is_silent(corpus.segment(utt, offset, seg_len).0) {
                found = Some((utt, offset));
                break;
            }
        }
        let (utterance, offset) = found.ok_or_else(|| TrainError::Silent(corpus.speakers[source].clone()))?;
        let (target, mix) = match regime {
            Regime::Aligned => (source, None),
            Regime::Unaligned => (other_speaker(rng, n, source), None),
            Regime::Mixup => {
                let other = other_speaker(rng, n, source);
                (source, Some((other, rng.next_f64())))
            }
        };
        items.push(BatchItem {
            utterance,
            offset,
            source,
            target,
            mix,
            seed: rng.next_u64(),
        });
    }
    Ok(BatchPlan {
        regime,
        step,
        seg_len,
        items,
    })
}
