//! Sine excitation from an F0 track.
//!
//! `y[t] = a[t] * sin(phi[t])` with `phi[t] = phi[t-1] + 2 pi f[t] / sr`.
//! `f[t]` interpolates the per-frame F0 linearly between frame centers
//! (unvoiced frames borrow a neighbouring voiced value so the phase never
//! jumps), and `a[t]` follows the voicing of the nearest frame through
//! 10 ms linear ramps.

use std::f64::consts::PI;

use crate::audio_io::Waveform;
use crate::real::Real;

use super::pitch::F0Track;

pub const RAMP_SECONDS: f64 = 0.01;

/// Sample-by-sample oscillator. Offline synthesis and the streaming engine
/// both drive this, so the two produce identical samples.
#[derive(Debug, Clone)]
pub struct ExcitationSynth {
    phase: f64,
    ramp_pos: usize,
    ramp_len: usize,
    sample_rate: f64,
    hop: usize,
    next_t: usize,
}

impl ExcitationSynth {
    pub fn new(sample_rate: u32, hop: usize) -> Self {
        Self {
            phase: 0.0,
            ramp_pos: usize::MAX,
            ramp_len: ((RAMP_SECONDS * sample_rate as f64).round() as usize).max(1),
            sample_rate: sample_rate as f64,
            hop,
            next_t: 0,
        }
    }

    pub fn position(&self) -> usize {
        self.next_t
    }

    /// Frames past the last one needed to produce sample `t`.
    pub fn frames_needed(&self, t: usize) -> usize {
        t / self.hop + 3
    }

    /// Frequency assigned to frame `i` for phase accumulation.
    fn filled<T: Real>(f0: &[T], voiced: &[bool], i: usize) -> f64 {
        let n = f0.len();
        let i = i.min(n - 1);
        if voiced[i] {
            return f0[i].to_f64_lossy();
        }
        if i + 1 < n && voiced[i + 1] {
            return f0[i + 1].to_f64_lossy();
        }
        (0..i)
            .rev()
            .find(|&j| voiced[j])
            .map(|j| f0[j].to_f64_lossy())
            .unwrap_or(0.0)
    }

    /// Appends samples up to (excluding) `end` to `out`. Frames of `track`
    /// beyond `frames_needed(end - 1)` are never read.
    pub fn render<T: Real>(&mut self, track: &F0Track<T>, end: usize, out: &mut Vec<T>) {
        let n = track.len();
        if n == 0 {
            out.extend(std::iter::repeat_n(T::zero(), end.saturating_sub(self.next_t)));
            self.next_t = self.next_t.max(end);
            return;
        }
        let (f0, voiced) = (&track.f0_hz, &track.voiced);
        let hop = self.hop;
        if self.ramp_pos == usize::MAX {
            self.ramp_pos = if voiced[0] { self.ramp_len } else { 0 };
        }
        let mut cached = usize::MAX;
        let (mut fa, mut fb) = (0.0, 0.0);
        while self.next_t < end {
            let t = self.next_t;
            let i = t / hop;
            if i != cached {
                fa = Self::filled(f0, voiced, i);
                fb = Self::filled(f0, voiced, i + 1);
                cached = i;
            }
            let frac = (t - i * hop) as f64 / hop as f64;
            let freq = fa + (fb - fa) * frac;

            let nearest = ((t + hop / 2) / hop).min(n - 1);
            if voiced[nearest] {
                self.ramp_pos = (self.ramp_pos + 1).min(self.ramp_len);
            } else {
                self.ramp_pos = self.ramp_pos.saturating_sub(1);
            }
            let amp = self.ramp_pos as f64 / self.ramp_len as f64;

            self.phase += 2.0 * PI * freq / self.sample_rate;
            if self.phase >= 2.0 * PI {
                self.phase -= 2.0 * PI * (self.phase / (2.0 * PI)).floor();
            }
            out.push(T::lit(amp * self.phase.sin()));
            self.next_t += 1;
        }
    }
}

/// Renders `n_samples` of excitation for `f0`.
pub fn synthesize_excitation<T: Real>(f0: &F0Track<T>, n_samples: usize) -> Waveform<T> {
    let mut synth = ExcitationSynth::new(f0.grid.sample_rate, f0.grid.hop);
    let mut out = Vec::with_capacity(n_samples);
    synth.render(f0, n_samples, &mut out);
    Waveform::new(out, f0.grid.sample_rate)
}
