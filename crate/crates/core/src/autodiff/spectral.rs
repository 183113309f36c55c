//! Differentiable spectral kernels: framed DFT magnitudes through an explicit
//! windowed basis, and framed normalized autocorrelation.

use std::any::{Any, TypeId};
use std::collections::HashMap;
use std::sync::{Arc, Mutex, OnceLock};

use crate::dsp::frames::{gather_frame, reflect_index};
use crate::real::{axpy, dot, Real};

/// Hann-windowed cosine and sine rows, `(m/2 + 1) x m` each.
pub struct DftBasis<T> {
    pub size: usize,
    pub bins: usize,
    cos: Vec<T>,
    sin: Vec<T>,
}

impl<T: Real> DftBasis<T> {
    fn build(m: usize) -> Self {
        let bins = m / 2 + 1;
        let mut cos = vec![T::zero(); bins * m];
        let mut sin = vec![T::zero(); bins * m];
        let two_pi = 2.0 * std::f64::consts::PI;
        for k in 0..bins {
            for n in 0..m {
                let win = 0.5 - 0.5 * (two_pi * n as f64 / m as f64).cos();
                // (k*n) mod m keeps the angle argument small and exact
                let a = two_pi * ((k * n) % m) as f64 / m as f64;
                cos[k * m + n] = T::lit(win * a.cos());
                sin[k * m + n] = T::lit(win * a.sin());
            }
        }
        Self { size: m, bins, cos, sin }
    }

    /// Shared per `(type, size)`; building the 2048 basis is not free.
    pub fn get(m: usize) -> Arc<Self> {
        type Cache = Mutex<HashMap<(TypeId, usize), Arc<dyn Any + Send + Sync>>>;
        static CACHE: OnceLock<Cache> = OnceLock::new();
        let cache = CACHE.get_or_init(Default::default);
        let key = (TypeId::of::<T>(), m);
        if let Some(hit) = cache.lock().unwrap().get(&key) {
            return hit.clone().downcast::<Self>().expect("basis cache type");
        }
        let built = Arc::new(Self::build(m));
        cache.lock().unwrap().insert(key, built.clone());
        built
    }

    fn cos_row(&self, k: usize) -> &[T] {
        &self.cos[k * self.size..(k + 1) * self.size]
    }

    fn sin_row(&self, k: usize) -> &[T] {
        &self.sin[k * self.size..(k + 1) * self.size]
    }
}

pub fn n_frames(len: usize, hop: usize) -> usize {
    len / hop + 1
}

/// Real and imaginary parts, each `frames x bins`.
pub struct DftParts<T> {
    pub re: Vec<T>,
    pub im: Vec<T>,
}

pub fn dft_parts<T: Real>(x: &[T], m: usize, hop: usize) -> DftParts<T> {
    let basis = DftBasis::<T>::get(m);
    let bins = basis.bins;
    let frames = n_frames(x.len(), hop);
    let mut both = vec![T::zero(); frames * bins * 2];
    crate::par::for_each_chunk(&mut both, bins * 2, |f, out| {
        let mut frame = vec![T::zero(); m];
        gather_frame(x, f * hop, m, &mut frame);
        let (re, im) = out.split_at_mut(bins);
        for k in 0..bins {
            re[k] = dot(basis.cos_row(k), &frame);
            im[k] = -dot(basis.sin_row(k), &frame);
        }
    });
    let mut re = Vec::with_capacity(frames * bins);
    let mut im = Vec::with_capacity(frames * bins);
    for chunk in both.chunks_exact(bins * 2) {
        re.extend_from_slice(&chunk[..bins]);
        im.extend_from_slice(&chunk[bins..]);
    }
    DftParts { re, im }
}

/// `sqrt(re^2 + im^2)` per element.
pub fn magnitudes<T: Real>(p: &DftParts<T>) -> Vec<T> {
    p.re
        .iter()
        .zip(&p.im)
        .map(|(&r, &i)| (r * r + i * i).sqrt())
        .collect()
}

/// Gradient of `sum(g * |DFT|)` with respect to the input signal.
pub fn dft_mag_backward<T: Real>(
    g: &[T],
    parts: &DftParts<T>,
    len: usize,
    m: usize,
    hop: usize,
) -> Vec<T> {
    let basis = DftBasis::<T>::get(m);
    let bins = basis.bins;
    let frames = n_frames(len, hop);
    let mut dframes = vec![T::zero(); frames * m];
    crate::par::for_each_chunk(&mut dframes, m, |f, dp| {
        for k in 0..bins {
            let idx = f * bins + k;
            let (re, im) = (parts.re[idx], parts.im[idx]);
            let mag = (re * re + im * im).sqrt();
            // zero is a valid subgradient where the magnitude vanishes
            if mag == T::zero() || g[idx] == T::zero() {
                continue;
            }
            let scale = g[idx] / mag;
            // d|X|/dframe = (re * cos - im * sin) / |X|, with im = -<sin, frame>
            axpy(scale * re, basis.cos_row(k), dp);
            axpy(-(scale * im), basis.sin_row(k), dp);
        }
    });
    let mut dx = vec![T::zero(); len];
    let half = (m / 2) as isize;
    for (f, dp) in dframes.chunks_exact(m).enumerate() {
        let start = (f * hop) as isize - half;
        for (n, &v) in dp.iter().enumerate() {
            dx[reflect_index(start + n as isize, len)] += v;
        }
    }
    dx
}

/// Framed normalized autocorrelation over a lag range.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct AutocorrSpec {
    pub frame: usize,
    pub hop: usize,
    pub min_lag: usize,
    pub max_lag: usize,
}

impl AutocorrSpec {
    pub fn n_lags(&self) -> usize {
        self.max_lag - self.min_lag + 1
    }

    pub fn window(&self) -> usize {
        self.frame - self.max_lag
    }

    /// Zero-padded frame start for frame `f`.
    fn start(&self, f: usize) -> isize {
        (f * self.hop) as isize - (self.frame / 2) as isize
    }
}

const AC_EPS: f64 = 1e-8;

fn zero_padded<T: Real>(x: &[T], start: isize, n: usize) -> Vec<T> {
    (0..n)
        .map(|i| {
            let s = start + i as isize;
            if s >= 0 && (s as usize) < x.len() {
                x[s as usize]
            } else {
                T::zero()
            }
        })
        .collect()
}

/// `r[f, lag] = <a, b> / sqrt(|a|^2 |b|^2 + eps)` with `a = frame[0..W]`,
/// `b = frame[lag..lag+W]`.
pub fn autocorr_forward<T: Real>(x: &[T], s: &AutocorrSpec) -> Vec<T> {
    let frames = n_frames(x.len(), s.hop);
    let lags = s.n_lags();
    let w = s.window();
    let mut out = vec![T::zero(); frames * lags];
    crate::par::for_each_chunk(&mut out, lags, |f, row| {
        let fr = zero_padded(x, s.start(f), s.frame);
        let a = &fr[..w];
        let ea = dot(a, a);
        for (li, r) in row.iter_mut().enumerate() {
            let b = &fr[s.min_lag + li..s.min_lag + li + w];
            let eb = dot(b, b);
            *r = dot(a, b) / (ea * eb + T::lit(AC_EPS)).sqrt();
        }
    });
    out
}

pub fn autocorr_backward<T: Real>(g: &[T], x: &[T], s: &AutocorrSpec) -> Vec<T> {
    let frames = n_frames(x.len(), s.hop);
    let lags = s.n_lags();
    let w = s.window();
    let mut dframes = vec![T::zero(); frames * s.frame];
    crate::par::for_each_chunk(&mut dframes, s.frame, |f, dfr| {
        let fr = zero_padded(x, s.start(f), s.frame);
        let a = &fr[..w];
        let ea = dot(a, a);
        for li in 0..lags {
            let gv = g[f * lags + li];
            if gv == T::zero() {
                continue;
            }
            let lag = s.min_lag + li;
            let b = &fr[lag..lag + w];
            let eb = dot(b, b);
            let num = dot(a, b);
            let den = (ea * eb + T::lit(AC_EPS)).sqrt();
            let den3 = den * den * den;
            // dr/da = b/den - num*eb*a/den^3 ; dr/db = a/den - num*ea*b/den^3
            let ca = gv / den;
            let cb = -(gv * num / den3);
            for i in 0..w {
                dfr[i] = dfr[i] + ca * b[i] + cb * eb * a[i];
            }
            for i in 0..w {
                dfr[lag + i] = dfr[lag + i] + ca * a[i] + cb * ea * b[i];
            }
        }
    });
    let mut dx = vec![T::zero(); x.len()];
    for (f, dfr) in dframes.chunks_exact(s.frame).enumerate() {
        let start = s.start(f);
        for (i, &v) in dfr.iter().enumerate() {
            let t = start + i as isize;
            if t >= 0 && (t as usize) < x.len() {
                dx[t as usize] += v;
            }
        }
    }
    dx
}
