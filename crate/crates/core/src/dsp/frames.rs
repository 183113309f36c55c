use crate::real::Real;

use super::{DspError, Result};

/// Center-padded framing: frame `i` is centered on sample `i * hop`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct FrameGrid {
    pub frame_size: usize,
    pub hop: usize,
    pub n_frames: usize,
    pub sample_rate: u32,
}

impl FrameGrid {
    pub fn new(n_samples: usize, frame_size: usize, hop: usize, sample_rate: u32) -> Result<Self> {
        let grid = Self {
            frame_size,
            hop,
            n_frames: n_samples / hop.max(1) + 1,
            sample_rate,
        };
        grid.validate()?;
        Ok(grid)
    }

    pub fn validate(&self) -> Result<()> {
        if self.hop == 0 || self.frame_size < self.hop || self.sample_rate == 0 {
            return Err(DspError::BadGrid(*self));
        }
        Ok(())
    }

    /// Frame count for `n_samples` at this hop.
    pub fn frames_for(&self, n_samples: usize) -> usize {
        n_samples / self.hop + 1
    }

    /// Samples covered once the frame-rate conditioner is upsampled.
    pub fn upsampled_len(&self) -> usize {
        self.n_frames * self.hop
    }
}

/// Periodic Hann window of length `n`.
pub fn hann<T: Real>(n: usize) -> Vec<T> {
    (0..n)
        .map(|i| {
            T::lit(0.5 - 0.5 * (2.0 * std::f64::consts::PI * i as f64 / n as f64).cos())
        })
        .collect()
}

/// Maps a possibly out-of-range index onto `[0, len)` by mirror reflection
/// without repeating the edge sample (`-1 -> 1`, `len -> len - 2`).
#[inline]
pub fn reflect_index(i: isize, len: usize) -> usize {
    if len == 1 {
        return 0;
    }
    let period = 2 * (len as isize - 1);
    let mut m = i.rem_euclid(period);
    if m >= len as isize {
        m = period - m;
    }
    m as usize
}

/// Copies the `size` samples centered on `center` into `out`, reflecting at
/// the signal edges.
pub fn gather_frame<T: Real>(x: &[T], center: usize, size: usize, out: &mut [T]) {
    let start = center as isize - (size / 2) as isize;
    let len = x.len();
    if start >= 0 && start as usize + size <= len {
        out.copy_from_slice(&x[start as usize..start as usize + size]);
    } else {
        for (n, o) in out.iter_mut().enumerate() {
            *o = x[reflect_index(start + n as isize, len)];
        }
    }
}

/// True once frame `f` no longer depends on samples past `known_len`. Early
/// frames also read the mirror image of the left padding.
pub fn frame_is_settled(f: usize, hop: usize, size: usize, known_len: usize) -> bool {
    let direct = f * hop + size / 2;
    let mirrored = (size / 2).saturating_sub(f * hop) + 1;
    direct.max(mirrored) <= known_len
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn reflect_matches_numpy_reflect() {
        let len = 4;
        let got: Vec<usize> = (-3..7).map(|i| reflect_index(i, len)).collect();
        // numpy.pad([0,1,2,3], 3, mode="reflect") -> 3 2 1 0 1 2 3 2 1 0
        assert_eq!(got, vec![3, 2, 1, 0, 1, 2, 3, 2, 1, 0]);
    }

    #[test]
    fn settled_frames_ignore_later_samples() {
        let (size, hop) = (16, 4);
        let x: Vec<f64> = (0..80).map(|i| (i as f64 * 0.37).sin()).collect();
        let (mut a, mut b) = (vec![0.0; size], vec![0.0; size]);
        for known in size / 2 + 1..x.len() {
            for f in 0..x.len() / hop {
                if frame_is_settled(f, hop, size, known) {
                    gather_frame(&x[..known], f * hop, size, &mut a);
                    gather_frame(&x, f * hop, size, &mut b);
                    assert_eq!(a, b, "frame {f} with {known} samples");
                }
            }
        }
        assert!(!frame_is_settled(0, hop, size, size / 2));
        assert!(frame_is_settled(0, hop, size, size / 2 + 1));
    }

    #[test]
    fn grid_counts() {
        let g = FrameGrid::new(16000, 1024, 256, 16000).unwrap();
        assert_eq!(g.n_frames, 63);
        assert_eq!(g.upsampled_len(), 16128);
        assert!(FrameGrid::new(100, 128, 256, 16000).is_err());
        assert!(FrameGrid::new(100, 128, 0, 16000).is_err());
    }
}
