//! Log-mel filterbank features, the built-in phonetic representation.

use crate::audio_io::Waveform;
use crate::real::Real;

use super::frames::FrameGrid;
use super::stft::{check_fft, FramePower};
use super::{Result, LOG_FLOOR};

pub const MEL_BANDS: usize = 40;
pub const MELSTACK_ID: &str = "melstack-v1";

pub fn hz_to_mel(f: f64) -> f64 {
    2595.0 * (1.0 + f / 700.0).log10()
}

pub fn mel_to_hz(m: f64) -> f64 {
    700.0 * (10f64.powf(m / 2595.0) - 1.0)
}

/// Triangular filters on a mel-spaced grid from 0 Hz to Nyquist.
#[derive(Debug, Clone)]
pub struct MelFilterbank {
    pub n_bands: usize,
    pub n_bins: usize,
    /// `n_bands x n_bins`, row-major.
    pub weights: Vec<f64>,
    pub centers_hz: Vec<f64>,
}

impl MelFilterbank {
    pub fn new(n_bands: usize, fft_size: usize, sample_rate: u32) -> Self {
        let n_bins = fft_size / 2 + 1;
        let nyquist = sample_rate as f64 / 2.0;
        let top = hz_to_mel(nyquist);
        let edges: Vec<f64> = (0..n_bands + 2)
            .map(|i| mel_to_hz(top * i as f64 / (n_bands + 1) as f64))
            .collect();
        let bin_hz = sample_rate as f64 / fft_size as f64;
        let mut weights = vec![0.0; n_bands * n_bins];
        for b in 0..n_bands {
            let (lo, c, hi) = (edges[b], edges[b + 1], edges[b + 2]);
            for k in 0..n_bins {
                let f = k as f64 * bin_hz;
                let w = if f > lo && f <= c {
                    (f - lo) / (c - lo)
                } else if f > c && f < hi {
                    (hi - f) / (hi - c)
                } else {
                    0.0
                };
                weights[b * n_bins + k] = w;
            }
        }
        Self {
            n_bands,
            n_bins,
            weights,
            centers_hz: edges[1..=n_bands].to_vec(),
        }
    }

    pub fn row(&self, band: usize) -> &[f64] {
        &self.weights[band * self.n_bins..(band + 1) * self.n_bins]
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PhoneticFeatures<T> {
    /// `n_frames x dim`, row-major.
    pub frames: Vec<T>,
    pub dim: usize,
    pub grid: FrameGrid,
    pub provider_id: String,
}

impl<T: Real> PhoneticFeatures<T> {
    pub fn n_frames(&self) -> usize {
        if self.dim == 0 {
            0
        } else {
            self.frames.len() / self.dim
        }
    }

    pub fn frame(&self, i: usize) -> &[T] {
        &self.frames[i * self.dim..(i + 1) * self.dim]
    }
}

/// Per-frame log-mel energies.
pub struct MelStack<T: Real> {
    power: FramePower<T>,
    bank: Vec<T>,
    n_bands: usize,
    hop: usize,
}

impl<T: Real> MelStack<T> {
    pub fn new(grid: &FrameGrid) -> Self {
        let bank = MelFilterbank::new(MEL_BANDS, grid.frame_size, grid.sample_rate);
        Self {
            power: FramePower::new(grid.frame_size),
            bank: bank.weights.iter().map(|&w| T::lit(w)).collect(),
            n_bands: MEL_BANDS,
            hop: grid.hop,
        }
    }

    pub fn dim(&self) -> usize {
        self.n_bands
    }

    pub fn frame(&self, x: &[T], f: usize, out: &mut [T]) {
        let p = self.power.power(x, f * self.hop);
        let nb = p.len();
        for (b, o) in out.iter_mut().enumerate() {
            let e = crate::real::dot(&self.bank[b * nb..(b + 1) * nb], &p);
            *o = (e + T::lit(LOG_FLOOR)).ln();
        }
    }
}

pub fn phonetic_features<T: Real>(w: &Waveform<T>, grid: &FrameGrid) -> Result<PhoneticFeatures<T>> {
    grid.validate()?;
    check_fft(grid.frame_size, grid.hop, w.len())?;
    let stack = MelStack::new(grid);
    let n = grid.frames_for(w.len());
    let dim = stack.dim();
    let mut frames = vec![T::zero(); n * dim];
    crate::par::for_each_chunk(&mut frames, dim, |f, row| stack.frame(&w.samples, f, row));
    Ok(PhoneticFeatures {
        frames,
        dim,
        grid: FrameGrid { n_frames: n, ..*grid },
        provider_id: MELSTACK_ID.to_string(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::PI;

    fn grid(n: usize) -> FrameGrid {
        FrameGrid::new(n, 1024, 256, 16000).unwrap()
    }

    #[test]
    fn silence_is_floor() {
        let w = Waveform::new(vec![0.0f32; 3000], 16000);
        let p = phonetic_features(&w, &grid(3000)).unwrap();
        assert_eq!(p.dim, 40);
        let floor = (LOG_FLOOR as f32).ln();
        assert!(p.frames.iter().all(|&v| v == floor));
    }

    #[test]
    fn deterministic() {
        let mut rng = crate::rng::SplitMix64::new(5);
        let w = Waveform::new((0..5000).map(|_| rng.symmetric() as f32).collect::<Vec<_>>(), 16000);
        let a = phonetic_features(&w, &grid(5000)).unwrap();
        let b = phonetic_features(&w, &grid(5000)).unwrap();
        assert_eq!(
            a.frames.iter().map(|v| v.to_bits()).collect::<Vec<_>>(),
            b.frames.iter().map(|v| v.to_bits()).collect::<Vec<_>>()
        );
    }

    #[test]
    fn kilohertz_lands_in_nearest_band() {
        let n = 8000;
        let w = Waveform::new(
            (0..n).map(|t| 0.5 * (2.0 * PI * 1000.0 * t as f64 / 16000.0).sin()).collect::<Vec<f64>>(),
            16000,
        );
        let p = phonetic_features(&w, &grid(n)).unwrap();
        let bank = MelFilterbank::new(40, 1024, 16000);
        let nearest = (0..40)
            .min_by(|&a, &b| {
                (bank.centers_hz[a] - 1000.0).abs().total_cmp(&(bank.centers_hz[b] - 1000.0).abs())
            })
            .unwrap();
        let row = p.frame(p.n_frames() / 2);
        let arg = (0..40).max_by(|&a, &b| row[a].total_cmp(&row[b])).unwrap();
        assert_eq!(arg, nearest);
    }
}
