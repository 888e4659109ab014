//! 3x3 convolution with zero padding 1 on channel-major (`c x m x h x w`)
//! activations, via im2col and GEMM.
use alloc::vec;
use alloc::vec::Vec;

use crate::scalar::{gemm, Mat, Scalar};

pub(crate) const KERNEL: usize = 3;
const PAD: usize = 1;
/// Upper bound on im2col buffer elements; larger batches are processed in
/// sample chunks.
const COLS_BUDGET: usize = 1 << 22;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) struct Dims {
    pub c: usize,
    pub b: usize,
    pub h: usize,
    pub w: usize,
}

impl Dims {
    pub fn hw(&self) -> usize {
        self.h * self.w
    }
    pub fn len(&self) -> usize {
        self.c * self.b * self.h * self.w
    }
}

pub(crate) fn out_extent(n: usize, stride: usize) -> usize {
    (n + 2 * PAD - KERNEL) / stride + 1
}

pub(crate) fn out_dims(input: Dims, cout: usize, stride: usize) -> Dims {
    Dims { c: cout, b: input.b, h: out_extent(input.h, stride), w: out_extent(input.w, stride) }
}

fn chunk_len(input: Dims, out: Dims) -> usize {
    let per_sample = input.c * KERNEL * KERNEL * out.hw();
    (COLS_BUDGET / per_sample.max(1)).clamp(1, input.b)
}

/// Output columns `lo..hi` whose tap `kx` lands inside a row of `w` pixels.
#[inline]
fn valid_span(out_w: usize, w: usize, stride: usize, kx: usize) -> (usize, usize) {
    // ix = ox * stride + kx - PAD must lie in 0..w.
    let lo = PAD.saturating_sub(kx).div_ceil(stride);
    let hi = if w + PAD > kx { ((w + PAD - kx - 1) / stride + 1).min(out_w) } else { 0 };
    (lo.min(hi), hi)
}

/// Appends the im2col matrix (`c*9 x nb*ho*wo`, row-major) for samples
/// `b0 .. b0 + nb` to the empty `cols`.
fn im2col<T: Scalar>(x: &[T], input: Dims, out: Dims, stride: usize, b0: usize, nb: usize, cols: &mut Vec<T>) {
    debug_assert!(cols.is_empty());
    for ci in 0..input.c {
        for ky in 0..KERNEL {
            for kx in 0..KERNEL {
                let (lo, hi) = valid_span(out.w, input.w, stride, kx);
                for bi in 0..nb {
                    let plane = &x[(ci * input.b + b0 + bi) * input.hw()..][..input.hw()];
                    for oy in 0..out.h {
                        let iy = (oy * stride + ky) as isize - PAD as isize;
                        if iy < 0 || iy >= input.h as isize {
                            cols.resize(cols.len() + out.w, T::zero());
                            continue;
                        }
                        let src = &plane[iy as usize * input.w..][..input.w];
                        cols.resize(cols.len() + lo, T::zero());
                        let first = lo * stride + kx - PAD;
                        if stride == 1 {
                            cols.extend_from_slice(&src[first..first + (hi - lo)]);
                        } else {
                            cols.extend(src[first..].iter().step_by(stride).take(hi - lo).copied());
                        }
                        cols.resize(cols.len() + out.w - hi, T::zero());
                    }
                }
            }
        }
    }
}

fn col2im<T: Scalar>(cols: &[T], input: Dims, out: Dims, stride: usize, b0: usize, nb: usize, dx: &mut [T]) {
    let ohw = out.hw();
    let ncols = nb * ohw;
    for ci in 0..input.c {
        for ky in 0..KERNEL {
            for kx in 0..KERNEL {
                let row = (ci * KERNEL + ky) * KERNEL + kx;
                let src = &cols[row * ncols..(row + 1) * ncols];
                let (lo, hi) = valid_span(out.w, input.w, stride, kx);
                if lo == hi {
                    continue;
                }
                let first = lo * stride + kx - PAD;
                for bi in 0..nb {
                    let plane = &mut dx[(ci * input.b + b0 + bi) * input.hw()..][..input.hw()];
                    for oy in 0..out.h {
                        let iy = (oy * stride + ky) as isize - PAD as isize;
                        if iy < 0 || iy >= input.h as isize {
                            continue;
                        }
                        let s = &src[bi * ohw + oy * out.w..][lo..hi];
                        let dst = &mut plane[iy as usize * input.w..][..input.w];
                        for (d, v) in dst[first..].iter_mut().step_by(stride).zip(s) {
                            *d = *d + *v;
                        }
                    }
                }
            }
        }
    }
}

/// `weight` is `cout x (cin*9)`; returns the channel-major output.
pub(crate) fn conv_forward<T: Scalar>(x: &[T], input: Dims, weight: &[T], cout: usize, stride: usize) -> (Vec<T>, Dims) {
    let out = out_dims(input, cout, stride);
    let k = input.c * KERNEL * KERNEL;
    let ohw = out.hw();
    let n_total = input.b * ohw;
    let mut y = vec![T::zero(); out.len()];
    let chunk = chunk_len(input, out);
    let mut cols = Vec::with_capacity(k * chunk * ohw);
    let mut b0 = 0;
    while b0 < input.b {
        let nb = chunk.min(input.b - b0);
        let ncols = nb * ohw;
        cols.clear();
        im2col(x, input, out, stride, b0, nb, &mut cols);
        gemm(
            Mat::new(weight, cout, k),
            Mat::new(&cols, k, ncols),
            T::zero(),
            &mut y[b0 * ohw..],
            n_total,
        );
        b0 += nb;
    }
    (y, out)
}

/// Returns `(d_weight, d_input)` for upstream gradient `dy`.
pub(crate) fn conv_backward<T: Scalar>(
    x: &[T],
    input: Dims,
    weight: &[T],
    cout: usize,
    stride: usize,
    dy: &[T],
) -> (Vec<T>, Vec<T>) {
    let out = out_dims(input, cout, stride);
    let k = input.c * KERNEL * KERNEL;
    let ohw = out.hw();
    let n_total = input.b * ohw;
    let mut dw = vec![T::zero(); cout * k];
    let mut dx = vec![T::zero(); input.len()];
    let chunk = chunk_len(input, out);
    let mut cols = Vec::with_capacity(k * chunk * ohw);
    let mut b0 = 0;
    while b0 < input.b {
        let nb = chunk.min(input.b - b0);
        let ncols = nb * ohw;
        cols.clear();
        im2col(x, input, out, stride, b0, nb, &mut cols);
        let cols = &mut cols[..];
        let dy_chunk = Mat::with_ld(&dy[b0 * ohw..], cout, ncols, n_total);
        // dW += dY * cols^T
        gemm(dy_chunk, Mat::t(cols, k, ncols), T::one(), &mut dw, k);
        // dcols = W^T * dY
        gemm(Mat::t(weight, cout, k), dy_chunk, T::zero(), cols, ncols);
        col2im(cols, input, out, stride, b0, nb, &mut dx);
        b0 += nb;
    }
    (dw, dx)
}
