//! SVCF feature files.
//!
//! Layout (all little-endian): magic `SVCF`, u32 version (1), u32 kind
//! (0 phonetic, 1 f0, 2 loudness), u32 n_frames, u32 dim, u32 hop_samples,
//! u32 sample_rate, then `n_frames * dim` f32 values row-major. F0 files have
//! `dim == 2` with columns `(f0_hz, confidence)`; loudness files have `dim == 1`.

use std::path::Path;

use crate::real::Real;

use super::frames::FrameGrid;
use super::loudness::LoudnessTrack;
use super::mel::PhoneticFeatures;
use super::pitch::F0Track;
use super::{DspError, Result};

pub const MAGIC: &[u8; 4] = b"SVCF";
pub const VERSION: u32 = 1;
pub const HEADER_LEN: usize = 28;
pub const FILE_PROVIDER_ID: &str = "svcf-file";

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FeatureKind {
    Phonetic = 0,
    F0 = 1,
    Loudness = 2,
}

impl FeatureKind {
    fn from_u32(v: u32) -> Result<Self> {
        match v {
            0 => Ok(Self::Phonetic),
            1 => Ok(Self::F0),
            2 => Ok(Self::Loudness),
            other => Err(DspError::Svcf(format!("unknown kind {other}"))),
        }
    }

    /// File-name suffix used by the extractor.
    pub fn suffix(self) -> &'static str {
        match self {
            Self::Phonetic => "phonetic.svcf",
            Self::F0 => "f0.svcf",
            Self::Loudness => "loud.svcf",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum FeatureFile<T> {
    Phonetic(PhoneticFeatures<T>),
    F0(F0Track<T>),
    Loudness(LoudnessTrack<T>),
}

impl<T: Real> FeatureFile<T> {
    pub fn kind(&self) -> FeatureKind {
        match self {
            Self::Phonetic(_) => FeatureKind::Phonetic,
            Self::F0(_) => FeatureKind::F0,
            Self::Loudness(_) => FeatureKind::Loudness,
        }
    }

    pub fn grid(&self) -> FrameGrid {
        match self {
            Self::Phonetic(p) => p.grid,
            Self::F0(f) => f.grid,
            Self::Loudness(l) => l.grid,
        }
    }
}

pub fn encode<T: Real>(file: &FeatureFile<T>) -> Vec<u8> {
    let (n_frames, dim, values): (usize, usize, Vec<T>) = match file {
        FeatureFile::Phonetic(p) => (p.n_frames(), p.dim, p.frames.clone()),
        FeatureFile::F0(f) => (
            f.len(),
            2,
            f.f0_hz
                .iter()
                .zip(&f.confidence)
                .flat_map(|(&a, &b)| [a, b])
                .collect(),
        ),
        FeatureFile::Loudness(l) => (l.loud_db.len(), 1, l.loud_db.clone()),
    };
    let grid = file.grid();
    let mut out = Vec::with_capacity(HEADER_LEN + values.len() * 4);
    out.extend_from_slice(MAGIC);
    for v in [
        VERSION,
        file.kind() as u32,
        n_frames as u32,
        dim as u32,
        grid.hop as u32,
        grid.sample_rate,
    ] {
        out.extend_from_slice(&v.to_le_bytes());
    }
    for v in values {
        out.extend_from_slice(&(v.to_f64_lossy() as f32).to_le_bytes());
    }
    out
}

fn u32_at(b: &[u8], off: usize) -> u32 {
    u32::from_le_bytes([b[off], b[off + 1], b[off + 2], b[off + 3]])
}

pub fn decode<T: Real>(bytes: &[u8]) -> Result<FeatureFile<T>> {
    if bytes.len() < 4 || &bytes[..4] != MAGIC {
        return Err(DspError::SvcfBadMagic);
    }
    if bytes.len() < HEADER_LEN {
        return Err(DspError::SvcfTruncated {
            expected: HEADER_LEN,
            found: bytes.len(),
        });
    }
    let version = u32_at(bytes, 4);
    if version != VERSION {
        return Err(DspError::SvcfVersion(version));
    }
    let kind = FeatureKind::from_u32(u32_at(bytes, 8))?;
    let n_frames = u32_at(bytes, 12) as usize;
    let dim = u32_at(bytes, 16) as usize;
    let hop = u32_at(bytes, 20) as usize;
    let sample_rate = u32_at(bytes, 24);
    let expected = HEADER_LEN + n_frames * dim * 4;
    if bytes.len() < expected {
        return Err(DspError::SvcfTruncated {
            expected,
            found: bytes.len(),
        });
    }
    if bytes.len() > expected {
        return Err(DspError::Svcf(format!(
            "{} trailing bytes",
            bytes.len() - expected
        )));
    }
    let values: Vec<T> = bytes[HEADER_LEN..]
        .chunks_exact(4)
        .map(|c| T::lit(f32::from_le_bytes([c[0], c[1], c[2], c[3]]) as f64))
        .collect();
    // The extractor window is not recorded; the hop is all downstream code needs.
    let grid = FrameGrid {
        frame_size: hop,
        hop,
        n_frames,
        sample_rate,
    };
    grid.validate()?;
    Ok(match kind {
        FeatureKind::Phonetic => FeatureFile::Phonetic(PhoneticFeatures {
            frames: values,
            dim,
            grid,
            provider_id: FILE_PROVIDER_ID.to_string(),
        }),
        FeatureKind::F0 => {
            if dim != 2 {
                return Err(DspError::Svcf(format!("f0 file with dim {dim}, expected 2")));
            }
            let (f0, conf) = values.chunks_exact(2).map(|c| (c[0], c[1])).unzip();
            FeatureFile::F0(F0Track::from_values(f0, conf, grid))
        }
        FeatureKind::Loudness => {
            if dim != 1 {
                return Err(DspError::Svcf(format!("loudness file with dim {dim}, expected 1")));
            }
            FeatureFile::Loudness(LoudnessTrack {
                loud_db: values,
                grid,
            })
        }
    })
}

pub fn write_svcf<T: Real>(path: impl AsRef<Path>, file: &FeatureFile<T>) -> Result<()> {
    std::fs::write(path, encode(file))?;
    Ok(())
}

pub fn ingest_features<T: Real>(path: impl AsRef<Path>) -> Result<FeatureFile<T>> {
    decode(&std::fs::read(path)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn grid(n: usize) -> FrameGrid {
        FrameGrid {
            frame_size: 256,
            hop: 256,
            n_frames: n,
            sample_rate: 16000,
        }
    }

    fn random_phonetic(seed: u64, n: usize, dim: usize) -> PhoneticFeatures<f32> {
        let mut rng = crate::rng::SplitMix64::new(seed);
        PhoneticFeatures {
            frames: (0..n * dim).map(|_| (rng.symmetric() * 20.0) as f32).collect(),
            dim,
            grid: grid(n),
            provider_id: FILE_PROVIDER_ID.into(),
        }
    }

    #[test]
    fn header_layout() {
        let f = FeatureFile::Phonetic(random_phonetic(1, 3, 2));
        let b = encode(&f);
        assert_eq!(&b[..4], b"SVCF");
        assert_eq!(u32_at(&b, 4), 1);
        assert_eq!(u32_at(&b, 8), 0);
        assert_eq!(u32_at(&b, 12), 3);
        assert_eq!(u32_at(&b, 16), 2);
        assert_eq!(u32_at(&b, 20), 256);
        assert_eq!(u32_at(&b, 24), 16000);
        assert_eq!(b.len(), 28 + 3 * 2 * 4);
    }

    #[test]
    fn file_round_trip_10x40() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("x.phonetic.svcf");
        let f = FeatureFile::Phonetic(random_phonetic(7, 10, 40));
        write_svcf(&p, &f).unwrap();
        let back: FeatureFile<f32> = ingest_features(&p).unwrap();
        match (&f, &back) {
            (FeatureFile::Phonetic(a), FeatureFile::Phonetic(b)) => {
                assert_eq!(
                    a.frames.iter().map(|v| v.to_bits()).collect::<Vec<_>>(),
                    b.frames.iter().map(|v| v.to_bits()).collect::<Vec<_>>()
                );
                assert_eq!(b.dim, 40);
                assert_eq!(b.n_frames(), 10);
            }
            _ => panic!("kind changed"),
        }
    }

    #[test]
    fn f0_columns() {
        let t = F0Track::from_values(vec![0.0f32, 220.0, 221.5], vec![0.1, 0.9, 0.95], grid(3));
        let back: FeatureFile<f32> = decode(&encode(&FeatureFile::F0(t.clone()))).unwrap();
        assert_eq!(back, FeatureFile::F0(t));
    }

    #[test]
    fn bad_magic() {
        let mut b = encode(&FeatureFile::Phonetic(random_phonetic(1, 2, 2)));
        b[..4].copy_from_slice(b"XXXX");
        let err = decode::<f32>(&b).unwrap_err();
        assert_eq!(err.to_string(), "bad magic");
    }

    #[test]
    fn version_mismatch() {
        let mut b = encode(&FeatureFile::Phonetic(random_phonetic(1, 2, 2)));
        b[4] = 2;
        assert!(matches!(decode::<f32>(&b), Err(DspError::SvcfVersion(2))));
    }

    #[test]
    fn truncated_payload() {
        let f = FeatureFile::Phonetic(random_phonetic(3, 100, 4));
        let b = encode(&f);
        let cut = &b[..HEADER_LEN + 50 * 4 * 4];
        let err = decode::<f32>(cut).unwrap_err();
        assert!(err.to_string().starts_with("truncated payload"), "{err}");
    }

    proptest! {
        #[test]
        fn arbitrary_round_trip(n in 0usize..20, dim in 1usize..8, seed in any::<u64>()) {
            let f = FeatureFile::Phonetic(random_phonetic(seed, n, dim));
            let back: FeatureFile<f32> = decode(&encode(&f)).unwrap();
            prop_assert_eq!(encode(&back), encode(&f));
        }
    }
}
