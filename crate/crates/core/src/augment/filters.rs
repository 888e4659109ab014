use alloc::vec;
use alloc::vec::Vec;

#[allow(unused_imports)]
use num_traits::Float;

use crate::error::{contract, Result};
use crate::tensor::Tensor;

/// Reverses the last (width) axis of any tensor with at least two axes.
pub fn horizontal_flip(image: &Tensor<f32>) -> Result<Tensor<f32>> {
    let s = image.shape();
    if s.len() < 2 {
        return Err(contract!("flip needs at least a h x w image, got {:?}", s));
    }
    let mut out = image.clone();
    flip_in_place(out.data_mut(), s[s.len() - 1]);
    Ok(out)
}

pub(crate) fn flip_in_place(data: &mut [f32], width: usize) {
    if width == 0 {
        return;
    }
    for row in data.chunks_exact_mut(width) {
        row.reverse();
    }
}

/// Normalized 1-D Gaussian of radius `ceil(3 sigma)`; `[1.0]` for sigma 0.
pub fn gaussian_kernel(sigma: f64) -> Vec<f64> {
    if sigma <= 0.0 {
        return vec![1.0];
    }
    let radius = (3.0 * sigma).ceil() as isize;
    let mut k: Vec<f64> = (-radius..=radius)
        .map(|x| (-(x * x) as f64 / (2.0 * sigma * sigma)).exp())
        .collect();
    let sum: f64 = k.iter().sum();
    for v in &mut k {
        *v /= sum;
    }
    k
}

/// Mirror index without repeating the edge sample (`-1 -> 1`).
fn reflect(i: isize, n: usize) -> usize {
    if n == 1 {
        return 0;
    }
    let period = 2 * (n as isize - 1);
    let mut m = i.rem_euclid(period);
    if m >= n as isize {
        m = period - m;
    }
    m as usize
}

/// Separable Gaussian blur over the last two axes with reflect padding.
pub fn gaussian_blur(image: &Tensor<f32>, sigma: f64) -> Result<Tensor<f32>> {
    if !(sigma.is_finite() && sigma >= 0.0) {
        return Err(contract!("sigma must be a nonnegative finite number, got {}", sigma));
    }
    let s = image.shape();
    if s.len() < 2 {
        return Err(contract!("blur needs at least a h x w image, got {:?}", s));
    }
    let mut out = image.clone();
    blur_in_place(out.data_mut(), s[s.len() - 2], s[s.len() - 1], sigma);
    Ok(out)
}

pub(crate) fn blur_in_place(data: &mut [f32], h: usize, w: usize, sigma: f64) {
    if sigma == 0.0 || h * w == 0 {
        return;
    }
    let k = gaussian_kernel(sigma);
    let r = (k.len() / 2) as isize;
    let mut tmp = vec![0.0f64; h * w];
    for plane in data.chunks_exact_mut(h * w) {
        for y in 0..h {
            for x in 0..w {
                let mut acc = 0.0;
                for (j, kv) in k.iter().enumerate() {
                    acc += kv * plane[y * w + reflect(x as isize + j as isize - r, w)] as f64;
                }
                tmp[y * w + x] = acc;
            }
        }
        for y in 0..h {
            for x in 0..w {
                let mut acc = 0.0;
                for (j, kv) in k.iter().enumerate() {
                    acc += kv * tmp[reflect(y as isize + j as isize - r, h) * w + x];
                }
                plane[y * w + x] = (acc as f32).clamp(0.0, 1.0);
            }
        }
    }
}
