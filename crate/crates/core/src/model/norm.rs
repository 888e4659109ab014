//! Weight standardization and group normalization, forward and backward.
use alloc::vec;
use alloc::vec::Vec;

#[allow(unused_imports)]
use num_traits::Float;

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// Per-output-channel statistics kept for the backward pass.
#[derive(Debug, Clone, Copy)]
pub(crate) struct WsStat {
    pub std: f64,
    pub denom: f64,
}

/// Standardizes each of `rows` contiguous rows to zero mean and unit
/// population std: `(w - mean) / (std + eps)`.
pub(crate) fn standardize_rows<T: Scalar>(w: &[T], rows: usize, eps: f64) -> (Vec<T>, Vec<WsStat>) {
    let n = w.len() / rows.max(1);
    let mut out = vec![T::zero(); w.len()];
    let mut stats = Vec::with_capacity(rows);
    for r in 0..rows {
        let row = &w[r * n..(r + 1) * n];
        let mean = row.iter().map(|v| v.as_f64()).sum::<f64>() / n as f64;
        let var = row.iter().map(|v| (v.as_f64() - mean).powi(2)).sum::<f64>() / n as f64;
        let std = var.sqrt();
        let denom = std + eps;
        for (o, v) in out[r * n..(r + 1) * n].iter_mut().zip(row) {
            *o = T::from_f64((v.as_f64() - mean) / denom);
        }
        stats.push(WsStat { std, denom });
    }
    (out, stats)
}

/// Gradient through [`standardize_rows`].
pub(crate) fn standardize_rows_backward<T: Scalar>(
    w: &[T],
    stats: &[WsStat],
    grad_out: &[T],
) -> Vec<T> {
    let rows = stats.len();
    let n = w.len() / rows.max(1);
    let mut grad = vec![T::zero(); w.len()];
    for (r, st) in stats.iter().enumerate() {
        let row = &w[r * n..(r + 1) * n];
        let g = &grad_out[r * n..(r + 1) * n];
        let mean = row.iter().map(|v| v.as_f64()).sum::<f64>() / n as f64;
        let g_mean = g.iter().map(|v| v.as_f64()).sum::<f64>() / n as f64;
        let gc: f64 = g.iter().zip(row).map(|(gv, wv)| gv.as_f64() * (wv.as_f64() - mean)).sum();
        let coupling = if st.std > 0.0 {
            gc / (st.denom * st.denom * n as f64 * st.std)
        } else {
            0.0
        };
        for ((o, gv), wv) in grad[r * n..(r + 1) * n].iter_mut().zip(g).zip(row) {
            let c = wv.as_f64() - mean;
            *o = T::from_f64((gv.as_f64() - g_mean) / st.denom - coupling * c);
        }
    }
    grad
}

/// Standardizes a convolution kernel per output channel (leading axis).
pub fn weight_standardize<T: Scalar>(kernel: &Tensor<T>, epsilon: f64) -> Result<Tensor<T>> {
    let rows = *kernel
        .shape()
        .first()
        .ok_or_else(|| Error::Shape(alloc::string::String::from("kernel needs an output-channel axis")))?;
    if rows == 0 {
        return Err(Error::Shape("kernel has no output channels".into()));
    }
    let (w, _) = standardize_rows(kernel.data(), rows, epsilon);
    Tensor::from_vec(kernel.shape(), w)
}

/// Where the `(channel, sample)` plane of `hw` elements starts.
#[derive(Debug, Clone, Copy)]
pub(crate) enum Layout {
    /// `m x c x h x w`, the public image layout.
    SampleMajor,
    /// `c x m x h x w`, used inside the network so convolutions are one GEMM.
    ChannelMajor,
}

impl Layout {
    #[inline]
    fn plane(self, c: usize, b: usize, channels: usize, batch: usize, hw: usize) -> usize {
        match self {
            Layout::SampleMajor => (b * channels + c) * hw,
            Layout::ChannelMajor => (c * batch + b) * hw,
        }
    }
}

#[derive(Debug, Clone, Copy)]
pub(crate) struct GnShape {
    pub channels: usize,
    pub batch: usize,
    pub hw: usize,
    pub groups: usize,
    pub layout: Layout,
}

/// Normalized activations and inverse std per `(sample, group)`.
pub(crate) struct GnCache<T> {
    pub xhat: Vec<T>,
    pub inv_std: Vec<f64>,
}

pub(crate) fn group_norm_forward<T: Scalar>(
    x: &[T],
    shape: GnShape,
    eps: f64,
    scale: &[T],
    shift: &[T],
) -> (Vec<T>, GnCache<T>) {
    let GnShape { channels, batch, hw, groups, layout } = shape;
    let cpg = channels / groups;
    let count = (cpg * hw) as f64;
    let mut y = vec![T::zero(); x.len()];
    let mut xhat = vec![T::zero(); x.len()];
    let mut inv_std = vec![0.0f64; batch * groups];
    for b in 0..batch {
        for g in 0..groups {
            let mut sum = 0.0f64;
            for c in g * cpg..(g + 1) * cpg {
                let o = layout.plane(c, b, channels, batch, hw);
                sum += x[o..o + hw].iter().map(|v| v.as_f64()).sum::<f64>();
            }
            let mean = sum / count;
            let mut sq = 0.0f64;
            for c in g * cpg..(g + 1) * cpg {
                let o = layout.plane(c, b, channels, batch, hw);
                sq += x[o..o + hw].iter().map(|v| (v.as_f64() - mean).powi(2)).sum::<f64>();
            }
            let istd = 1.0 / (sq / count + eps).sqrt();
            inv_std[b * groups + g] = istd;
            let (m, s) = (T::from_f64(mean), T::from_f64(istd));
            for c in g * cpg..(g + 1) * cpg {
                let o = layout.plane(c, b, channels, batch, hw);
                let (gamma, beta) = (scale[c], shift[c]);
                for i in o..o + hw {
                    let xh = (x[i] - m) * s;
                    xhat[i] = xh;
                    y[i] = xh * gamma + beta;
                }
            }
        }
    }
    (y, GnCache { xhat, inv_std })
}

/// Returns `(dx, dscale, dshift)`.
pub(crate) fn group_norm_backward<T: Scalar>(
    dy: &[T],
    shape: GnShape,
    cache: &GnCache<T>,
    scale: &[T],
) -> (Vec<T>, Vec<T>, Vec<T>) {
    let GnShape { channels, batch, hw, groups, layout } = shape;
    let cpg = channels / groups;
    let count = (cpg * hw) as f64;
    let mut dx = vec![T::zero(); dy.len()];
    let mut dscale = vec![0.0f64; channels];
    let mut dshift = vec![0.0f64; channels];
    for b in 0..batch {
        for g in 0..groups {
            let mut sum_dxh = 0.0f64;
            let mut sum_dxh_xh = 0.0f64;
            for c in g * cpg..(g + 1) * cpg {
                let o = layout.plane(c, b, channels, batch, hw);
                let gamma = scale[c].as_f64();
                let (mut ds, mut db) = (0.0f64, 0.0f64);
                for i in o..o + hw {
                    let d = dy[i].as_f64();
                    let xh = cache.xhat[i].as_f64();
                    ds += d * xh;
                    db += d;
                    sum_dxh += d * gamma;
                    sum_dxh_xh += d * gamma * xh;
                }
                dscale[c] += ds;
                dshift[c] += db;
            }
            let mean_d = sum_dxh / count;
            let mean_dx = sum_dxh_xh / count;
            let istd = cache.inv_std[b * groups + g];
            for c in g * cpg..(g + 1) * cpg {
                let o = layout.plane(c, b, channels, batch, hw);
                let gamma = scale[c];
                for i in o..o + hw {
                    let dxh = (dy[i] * gamma).as_f64();
                    dx[i] = T::from_f64(istd * (dxh - mean_d - cache.xhat[i].as_f64() * mean_dx));
                }
            }
        }
    }
    (
        dx,
        dscale.into_iter().map(T::from_f64).collect(),
        dshift.into_iter().map(T::from_f64).collect(),
    )
}

/// Group normalization of `m x c x h x w` activations with a per-channel
/// affine transform. Statistics are per sample and per channel group.
pub fn group_normalize<T: Scalar>(
    activations: &Tensor<T>,
    groups: usize,
    epsilon: f64,
    scale: &[T],
    shift: &[T],
) -> Result<Tensor<T>> {
    let s = activations.shape();
    if s.len() != 4 {
        return Err(Error::Shape(alloc::format!("expected m x c x h x w, got {:?}", s)));
    }
    let (batch, channels, hw) = (s[0], s[1], s[2] * s[3]);
    if groups == 0 || channels % groups != 0 {
        return Err(Error::Config(alloc::format!(
            "{} groups do not divide {} channels",
            groups,
            channels
        )));
    }
    if scale.len() != channels || shift.len() != channels {
        return Err(Error::Shape(alloc::format!(
            "affine terms need {} entries, got {} / {}",
            channels,
            scale.len(),
            shift.len()
        )));
    }
    let shape = GnShape { channels, batch, hw, groups, layout: Layout::SampleMajor };
    let (y, _) = group_norm_forward(activations.data(), shape, epsilon, scale, shift);
    Tensor::from_vec(s, y)
}
