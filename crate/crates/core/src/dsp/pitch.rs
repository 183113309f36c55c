//! YIN fundamental-frequency tracker.
//!
//! Difference function, cumulative-mean normalization, absolute threshold,
//! parabolic refinement. Frames whose best dip stays above the threshold, or
//! whose refined frequency falls outside `[fmin, fmax]`, are unvoiced.

use crate::audio_io::Waveform;
use crate::real::Real;

use super::frames::{gather_frame, FrameGrid};
use super::{DspError, Result};

pub const DEFAULT_VOICING_THRESHOLD: f64 = 0.15;

#[derive(Debug, Clone, PartialEq)]
pub struct F0Track<T> {
    /// 0 on unvoiced frames.
    pub f0_hz: Vec<T>,
    pub voiced: Vec<bool>,
    pub confidence: Vec<T>,
    pub grid: FrameGrid,
}

impl<T: Real> F0Track<T> {
    /// Builds a track from `(f0, confidence)` pairs; voicing follows `f0 > 0`.
    pub fn from_values(f0_hz: Vec<T>, confidence: Vec<T>, grid: FrameGrid) -> Self {
        let voiced = f0_hz.iter().map(|&f| f > T::zero()).collect();
        let n_frames = f0_hz.len();
        Self {
            f0_hz,
            voiced,
            confidence,
            grid: FrameGrid { n_frames, ..grid },
        }
    }

    /// Constant voiced track, mostly for tests and synthetic material.
    pub fn constant(f0: f64, n_frames: usize, grid: FrameGrid) -> Self {
        Self::from_values(
            vec![T::lit(f0); n_frames],
            vec![T::one(); n_frames],
            grid,
        )
    }

    pub fn len(&self) -> usize {
        self.f0_hz.len()
    }

    pub fn is_empty(&self) -> bool {
        self.f0_hz.is_empty()
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PitchSettings {
    pub fmin: f64,
    pub fmax: f64,
    pub threshold: f64,
}

impl Default for PitchSettings {
    fn default() -> Self {
        Self {
            fmin: 80.0,
            fmax: 600.0,
            threshold: DEFAULT_VOICING_THRESHOLD,
        }
    }
}

/// Frame-wise YIN with precomputed lag bounds.
pub struct YinTracker {
    settings: PitchSettings,
    frame_size: usize,
    hop: usize,
    sample_rate: f64,
    min_lag: usize,
    max_lag: usize,
}

impl YinTracker {
    pub fn new(grid: &FrameGrid, settings: PitchSettings) -> Result<Self> {
        grid.validate()?;
        let sr = grid.sample_rate as f64;
        let PitchSettings { fmin, fmax, .. } = settings;
        if !(fmin > 0.0 && fmin < fmax && fmax < sr / 2.0) {
            return Err(DspError::PitchRange { fmin, fmax });
        }
        if (grid.frame_size as f64) < 2.0 * sr / fmin {
            return Err(DspError::PitchFrame {
                frame_size: grid.frame_size,
                needed: (2.0 * sr / fmin).ceil() as usize,
            });
        }
        let min_lag = ((sr / fmax).floor() as usize).max(2);
        let max_lag = ((sr / fmin).ceil() as usize + 1).min(grid.frame_size / 2 - 1);
        Ok(Self {
            settings,
            frame_size: grid.frame_size,
            hop: grid.hop,
            sample_rate: sr,
            min_lag,
            max_lag,
        })
    }

    /// `(f0_hz, confidence)` for frame `f`; `f0_hz == 0` means unvoiced.
    pub fn frame<T: Real>(&self, x: &[T], f: usize) -> (T, T) {
        let mut buf = vec![T::zero(); self.frame_size];
        gather_frame(x, f * self.hop, self.frame_size, &mut buf);
        let frame: Vec<f64> = buf.iter().map(|v| v.to_f64_lossy()).collect();
        let (f0, conf) = self.analyze(&frame);
        (T::lit(f0), T::lit(conf))
    }

    fn analyze(&self, frame: &[f64]) -> (f64, f64) {
        let w = self.frame_size / 2;
        let energy: f64 = frame[..w + self.max_lag].iter().map(|v| v * v).sum();
        if energy < 1e-10 {
            return (0.0, 0.0);
        }
        // d(tau) for tau in 1..=max_lag+1; index 0 unused
        let mut diff = vec![0.0; self.max_lag + 2];
        for (tau, d) in diff.iter_mut().enumerate().skip(1) {
            let a = &frame[..w];
            let b = &frame[tau..tau + w];
            *d = a.iter().zip(b).map(|(p, q)| (p - q) * (p - q)).sum();
        }
        let mut cmnd = vec![1.0; diff.len()];
        let mut running = 0.0;
        for tau in 1..diff.len() {
            running += diff[tau];
            cmnd[tau] = if running > 0.0 {
                diff[tau] * tau as f64 / running
            } else {
                1.0
            };
        }

        let mut best = None;
        let mut tau = self.min_lag;
        while tau <= self.max_lag {
            if cmnd[tau] < self.settings.threshold {
                while tau < self.max_lag && cmnd[tau + 1] < cmnd[tau] {
                    tau += 1;
                }
                best = Some(tau);
                break;
            }
            tau += 1;
        }
        let Some(tau) = best else {
            let min = cmnd[self.min_lag..=self.max_lag]
                .iter()
                .cloned()
                .fold(f64::INFINITY, f64::min);
            return (0.0, (1.0 - min).clamp(0.0, 1.0));
        };

        let (a, b, c) = (cmnd[tau - 1], cmnd[tau], cmnd[tau + 1]);
        let denom = a - 2.0 * b + c;
        let shift = if denom.abs() > 1e-12 {
            (0.5 * (a - c) / denom).clamp(-1.0, 1.0)
        } else {
            0.0
        };
        let f0 = self.sample_rate / (tau as f64 + shift);
        let conf = (1.0 - b).clamp(0.0, 1.0);
        if f0 < self.settings.fmin || f0 > self.settings.fmax {
            (0.0, conf)
        } else {
            (f0, conf)
        }
    }
}

pub fn estimate_f0<T: Real>(
    w: &Waveform<T>,
    grid: &FrameGrid,
    fmin: f64,
    fmax: f64,
) -> Result<F0Track<T>> {
    estimate_f0_with(
        w,
        grid,
        PitchSettings {
            fmin,
            fmax,
            ..PitchSettings::default()
        },
    )
}

pub fn estimate_f0_with<T: Real>(
    w: &Waveform<T>,
    grid: &FrameGrid,
    settings: PitchSettings,
) -> Result<F0Track<T>> {
    let tracker = YinTracker::new(grid, settings)?;
    let n = grid.frames_for(w.len());
    let frames = crate::par::map(n, |f| tracker.frame(&w.samples, f));
    let (f0, conf) = frames.into_iter().unzip();
    Ok(F0Track::from_values(f0, conf, FrameGrid { n_frames: n, ..*grid }))
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::PI;

    fn grid(n: usize) -> FrameGrid {
        FrameGrid::new(n, 1024, 256, 16000).unwrap()
    }

    fn sine(freq: f64, n: usize, amp: f64) -> Waveform<f64> {
        Waveform::new(
            (0..n)
                .map(|t| amp * (2.0 * PI * freq * t as f64 / 16000.0).sin())
                .collect(),
            16000,
        )
    }

    #[test]
    fn pure_220() {
        let w = sine(220.0, 16000, 0.5);
        let t = estimate_f0(&w, &grid(16000), 80.0, 600.0).unwrap();
        for i in 2..t.len() - 2 {
            assert!(t.voiced[i], "frame {i}");
            assert!((t.f0_hz[i] - 220.0).abs() <= 2.0, "frame {i}: {}", t.f0_hz[i]);
        }
    }

    #[test]
    fn silence_unvoiced() {
        let w = Waveform::new(vec![0.0f64; 8000], 16000);
        let t = estimate_f0(&w, &grid(8000), 80.0, 600.0).unwrap();
        assert!(t.voiced.iter().all(|v| !v));
        assert!(t.f0_hz.iter().all(|&f| f == 0.0));
    }

    #[test]
    fn low_level_noise_mostly_unvoiced() {
        let mut rng = crate::rng::SplitMix64::new(2024);
        let w = Waveform::new((0..32000).map(|_| 0.01 * rng.symmetric()).collect::<Vec<f64>>(), 16000);
        let t = estimate_f0(&w, &grid(32000), 80.0, 600.0).unwrap();
        let unvoiced = t.voiced.iter().filter(|v| !**v).count() as f64 / t.len() as f64;
        assert!(unvoiced >= 0.9, "unvoiced fraction {unvoiced}");
    }

    #[test]
    fn voicing_follows_f0() {
        let w = sine(300.0, 4000, 0.3);
        let t = estimate_f0(&w, &grid(4000), 80.0, 600.0).unwrap();
        for i in 0..t.len() {
            assert_eq!(t.voiced[i], t.f0_hz[i] > 0.0);
            assert!(t.f0_hz[i] == 0.0 || (80.0..=600.0).contains(&t.f0_hz[i]));
            assert!((0.0..=1.0).contains(&t.confidence[i]));
        }
    }

    #[test]
    fn preconditions() {
        let w = sine(300.0, 4000, 0.3);
        assert!(estimate_f0(&w, &grid(4000), 600.0, 80.0).is_err());
        assert!(estimate_f0(&w, &grid(4000), 80.0, 9000.0).is_err());
        // 1024-sample frame cannot hold two periods of 10 Hz
        assert!(estimate_f0(&w, &grid(4000), 10.0, 600.0).is_err());
    }

    #[test]
    fn sweep_within_one_percent() {
        let mut f = 80.0;
        while f <= 600.0 {
            let w = sine(f, 8000, 0.5);
            let t = estimate_f0(&w, &grid(8000), 80.0, 600.0).unwrap();
            for i in 2..t.len() - 2 {
                let rel = (t.f0_hz[i] - f).abs() / f;
                assert!(rel < 0.01, "f={f} frame {i}: {}", t.f0_hz[i]);
            }
            f += 17.0;
        }
    }
}
