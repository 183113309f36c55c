//! Dilated "same" 1-D convolution kernels.
//!
//! Layout: input `[c_in, t]`, weight `[c_out, c_in, k]`, output `[c_out, t]`,
//! all row-major. Tap `j` reads `x[t + (j - (k-1)/2) * dilation]`, zero outside.

use crate::real::{axpy, dot, Real};

#[inline]
fn tap_offset(j: usize, k: usize, dilation: usize) -> isize {
    (j as isize - ((k - 1) / 2) as isize) * dilation as isize
}

/// Output index range `[lo, hi)` for which `t + off` stays inside `[0, len)`.
#[inline]
fn valid_range(off: isize, len: usize) -> (usize, usize) {
    let lo = (-off).max(0) as usize;
    let hi = (len as isize - off).clamp(0, len as isize) as usize;
    (lo.min(hi), hi)
}

pub struct ConvDims {
    pub c_in: usize,
    pub c_out: usize,
    pub k: usize,
    pub len: usize,
    pub dilation: usize,
}

pub fn forward<T: Real>(x: &[T], w: &[T], b: Option<&[T]>, d: &ConvDims) -> Vec<T> {
    let mut y = vec![T::zero(); d.c_out * d.len];
    crate::par::for_each_chunk(&mut y, d.len.max(1), |co, row| {
        if let Some(b) = b {
            row.fill(b[co]);
        }
        for ci in 0..d.c_in {
            let xr = &x[ci * d.len..(ci + 1) * d.len];
            for j in 0..d.k {
                let wv = w[(co * d.c_in + ci) * d.k + j];
                let off = tap_offset(j, d.k, d.dilation);
                let (lo, hi) = valid_range(off, d.len);
                if lo < hi {
                    let src = &xr[(lo as isize + off) as usize..(hi as isize + off) as usize];
                    axpy(wv, src, &mut row[lo..hi]);
                }
            }
        }
    });
    y
}

pub fn backward_input<T: Real>(g: &[T], w: &[T], d: &ConvDims) -> Vec<T> {
    let mut dx = vec![T::zero(); d.c_in * d.len];
    crate::par::for_each_chunk(&mut dx, d.len.max(1), |ci, row| {
        for co in 0..d.c_out {
            let gr = &g[co * d.len..(co + 1) * d.len];
            for j in 0..d.k {
                let wv = w[(co * d.c_in + ci) * d.k + j];
                let off = tap_offset(j, d.k, d.dilation);
                let (lo, hi) = valid_range(off, d.len);
                if lo < hi {
                    // y[t] used x[t + off]  =>  dx[s] += w * g[s - off]
                    let dst = &mut row[(lo as isize + off) as usize..(hi as isize + off) as usize];
                    axpy(wv, &gr[lo..hi], dst);
                }
            }
        }
    });
    dx
}

pub fn backward_weight<T: Real>(g: &[T], x: &[T], d: &ConvDims) -> Vec<T> {
    let per_out = d.c_in * d.k;
    let mut dw = vec![T::zero(); d.c_out * per_out];
    crate::par::for_each_chunk(&mut dw, per_out.max(1), |co, row| {
        let gr = &g[co * d.len..(co + 1) * d.len];
        for ci in 0..d.c_in {
            let xr = &x[ci * d.len..(ci + 1) * d.len];
            for j in 0..d.k {
                let off = tap_offset(j, d.k, d.dilation);
                let (lo, hi) = valid_range(off, d.len);
                row[ci * d.k + j] = if lo < hi {
                    dot(
                        &gr[lo..hi],
                        &xr[(lo as isize + off) as usize..(hi as isize + off) as usize],
                    )
                } else {
                    T::zero()
                };
            }
        }
    });
    dw
}

pub fn backward_bias<T: Real>(g: &[T], d: &ConvDims) -> Vec<T> {
    (0..d.c_out)
        .map(|co| g[co * d.len..(co + 1) * d.len].iter().copied().sum())
        .collect()
}
