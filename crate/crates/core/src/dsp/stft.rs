use std::sync::Arc;

use rustfft::num_complex::Complex;
use rustfft::{Fft, FftPlanner};

use crate::audio_io::Waveform;
use crate::real::Real;

use super::frames::{gather_frame, hann};
use super::{DspError, Result};

/// Magnitude spectrogram, row-major `n_frames x n_bins`.
#[derive(Debug, Clone, PartialEq)]
pub struct Spectrogram<T> {
    pub n_frames: usize,
    pub n_bins: usize,
    pub data: Vec<T>,
}

impl<T: Real> Spectrogram<T> {
    pub fn frame(&self, i: usize) -> &[T] {
        &self.data[i * self.n_bins..(i + 1) * self.n_bins]
    }
}

/// Windowed real FFT of single frames with a cached plan.
pub struct FramePower<T: Real> {
    fft: Arc<dyn Fft<T>>,
    window: Vec<T>,
    size: usize,
}

impl<T: Real> FramePower<T> {
    pub fn new(size: usize) -> Self {
        let fft = FftPlanner::new().plan_fft_forward(size);
        Self {
            fft,
            window: hann(size),
            size,
        }
    }

    pub fn size(&self) -> usize {
        self.size
    }

    pub fn n_bins(&self) -> usize {
        self.size / 2 + 1
    }

    /// `|X_k|^2` for the Hann-windowed frame centered on `center`.
    pub fn power(&self, x: &[T], center: usize) -> Vec<T> {
        let mut frame = vec![T::zero(); self.size];
        gather_frame(x, center, self.size, &mut frame);
        let mut buf: Vec<Complex<T>> = frame
            .iter()
            .zip(&self.window)
            .map(|(&s, &w)| Complex::new(s * w, T::zero()))
            .collect();
        self.fft.process(&mut buf);
        buf[..self.n_bins()].iter().map(|c| c.norm_sqr()).collect()
    }
}

pub(crate) fn check_fft(fft_size: usize, hop: usize, len: usize) -> Result<()> {
    if !fft_size.is_power_of_two() || fft_size < 2 {
        return Err(DspError::FftSize(fft_size));
    }
    if hop == 0 {
        return Err(DspError::Hop);
    }
    if fft_size / 2 >= len {
        return Err(DspError::FftTooLarge { fft_size, len });
    }
    Ok(())
}

/// Hann-windowed, reflect-padded STFT magnitudes.
pub fn stft_magnitude<T: Real>(w: &Waveform<T>, fft_size: usize, hop: usize) -> Result<Spectrogram<T>> {
    check_fft(fft_size, hop, w.len())?;
    let n_frames = w.len() / hop + 1;
    let fp = FramePower::new(fft_size);
    let n_bins = fp.n_bins();
    let mut data = vec![T::zero(); n_frames * n_bins];
    crate::par::for_each_chunk(&mut data, n_bins, |f, row| {
        for (o, p) in row.iter_mut().zip(fp.power(&w.samples, f * hop)) {
            *o = p.sqrt();
        }
    });
    Ok(Spectrogram {
        n_frames,
        n_bins,
        data,
    })
}
