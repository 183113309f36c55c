//! A-weighted loudness.
//!
//! Per frame: power spectrum, each bin scaled by the linear A-weighting gain
//! at its center frequency, summed, then `10 log10(sum + eps)`.

use crate::audio_io::Waveform;
use crate::real::Real;

use super::frames::FrameGrid;
use super::stft::{check_fft, FramePower};
use super::{Result, LOG_FLOOR};

const F1: f64 = 20.598_997;
const F2: f64 = 107.652_65;
const F3: f64 = 737.862_23;
const F4: f64 = 12194.217;
/// +2.00 dB normalizes the curve to 0 dB at 1 kHz.
const A1000: f64 = 2.0;

/// A-weighting gain in dB (IEC 61672 closed form).
pub fn a_weighting_db(f: f64) -> f64 {
    if f <= 0.0 {
        return f64::NEG_INFINITY;
    }
    let f2 = f * f;
    let ra = (F4 * F4 * f2 * f2)
        / ((f2 + F1 * F1) * ((f2 + F2 * F2) * (f2 + F3 * F3)).sqrt() * (f2 + F4 * F4));
    20.0 * ra.log10() + A1000
}

/// Linear power gain for each rFFT bin.
pub fn a_weighting_power_gains(fft_size: usize, sample_rate: u32) -> Vec<f64> {
    (0..=fft_size / 2)
        .map(|k| {
            let f = k as f64 * sample_rate as f64 / fft_size as f64;
            let db = a_weighting_db(f);
            if db.is_finite() {
                10f64.powf(db / 10.0)
            } else {
                0.0
            }
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct LoudnessTrack<T> {
    pub loud_db: Vec<T>,
    pub grid: FrameGrid,
}

/// Per-frame A-weighted loudness computed from a full signal.
pub struct LoudnessMeter<T: Real> {
    power: FramePower<T>,
    gains: Vec<T>,
    hop: usize,
}

impl<T: Real> LoudnessMeter<T> {
    pub fn new(grid: &FrameGrid) -> Self {
        Self {
            power: FramePower::new(grid.frame_size),
            gains: a_weighting_power_gains(grid.frame_size, grid.sample_rate)
                .into_iter()
                .map(T::lit)
                .collect(),
            hop: grid.hop,
        }
    }

    pub fn frame(&self, x: &[T], f: usize) -> T {
        let p = self.power.power(x, f * self.hop);
        let sum: T = p.iter().zip(&self.gains).map(|(&a, &g)| a * g).sum();
        T::lit(10.0) * (sum + T::lit(LOG_FLOOR)).log10()
    }
}

pub fn a_weighted_loudness<T: Real>(w: &Waveform<T>, grid: &FrameGrid) -> Result<LoudnessTrack<T>> {
    grid.validate()?;
    check_fft(grid.frame_size, grid.hop, w.len())?;
    let meter = LoudnessMeter::new(grid);
    let n = grid.frames_for(w.len());
    let loud_db = crate::par::map(n, |f| meter.frame(&w.samples, f));
    Ok(LoudnessTrack {
        loud_db,
        grid: FrameGrid { n_frames: n, ..*grid },
    })
}
