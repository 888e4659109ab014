//! Cutmix variants. Intra-class Cutmix only pastes patches between samples
//! that share a label, so labels are never touched.
use alloc::vec::Vec;

#[allow(unused_imports)]
use num_traits::Float;
use rand::seq::SliceRandom;
use rand::Rng as _;

use crate::rng::Rng;
use crate::tensor::LabeledBatch;

/// Half-open pixel rectangle `[x1, x2) x [y1, y2)`; `x` runs along width.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct CutBox {
    pub x1: usize,
    pub x2: usize,
    pub y1: usize,
    pub y2: usize,
}

impl CutBox {
    pub fn area(&self) -> usize {
        (self.x2 - self.x1) * (self.y2 - self.y1)
    }

    pub fn contains(&self, x: usize, y: usize) -> bool {
        (self.x1..self.x2).contains(&x) && (self.y1..self.y2).contains(&y)
    }
}

/// Box of side fractions `sqrt(1 - lambda_mix)` of the image centred at
/// `(cx, cy)`. Both ends are clipped to the image, then rounded inwards so
/// the box never exceeds the requested area.
pub fn cut_box_at(width: usize, height: usize, lambda_mix: f64, cx: f64, cy: f64) -> CutBox {
    let frac = (1.0 - lambda_mix.clamp(0.0, 1.0)).sqrt();
    let (bw, bh) = (frac * width as f64, frac * height as f64);
    let span = |center: f64, side: f64, limit: usize| {
        let lo = (center - side / 2.0).clamp(0.0, limit as f64).ceil() as usize;
        let hi = (center + side / 2.0).clamp(0.0, limit as f64).floor() as usize;
        if hi < lo {
            (lo, lo)
        } else {
            (lo, hi)
        }
    };
    let (x1, x2) = span(cx, bw, width);
    let (y1, y2) = span(cy, bh, height);
    CutBox { x1, x2, y1, y2 }
}

/// Box with a uniformly random centre.
pub fn sample_cut_box(width: usize, height: usize, lambda_mix: f64, rng: &mut Rng) -> CutBox {
    let cx = rng.random::<f64>() * width as f64;
    let cy = rng.random::<f64>() * height as f64;
    cut_box_at(width, height, lambda_mix, cx, cy)
}

/// What a Cutmix call did.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct CutmixOutcome {
    /// Batch too small to mix.
    pub skipped: bool,
    pub triggered: bool,
    pub cut: Option<CutBox>,
    /// `donors[i]` is the sample whose pixels were offered to sample `i`.
    pub donors: Vec<usize>,
    /// Positions whose pixels were actually replaced.
    pub mixed: Vec<usize>,
}

/// Copies the box region from `donors[i]` (read from the unmixed batch)
/// into sample `i` for every `i` in `positions`.
pub fn paste_region(batch: &mut LabeledBatch, donors: &[usize], positions: &[usize], cut: CutBox) {
    let original = batch.images.clone();
    let (c, h, w) = batch.image_dims();
    let n = c * h * w;
    for &i in positions {
        let src = &original.data()[donors[i] * n..(donors[i] + 1) * n];
        let dst = batch.image_mut(i);
        for ch in 0..c {
            for y in cut.y1..cut.y2 {
                let o = ch * h * w + y * w;
                dst[o + cut.x1..o + cut.x2].copy_from_slice(&src[o + cut.x1..o + cut.x2]);
            }
        }
    }
}

fn draw(batch: &LabeledBatch, cutmix_prob: f64, rng: &mut Rng) -> CutmixOutcome {
    let m = batch.len();
    if m < 2 {
        return CutmixOutcome { skipped: true, ..Default::default() };
    }
    let mut donors: Vec<usize> = (0..m).collect();
    donors.shuffle(rng);
    let rho = rng.random::<f64>();
    if rho >= cutmix_prob {
        return CutmixOutcome { donors, ..Default::default() };
    }
    let lambda_mix = rng.random::<f64>();
    let (_, h, w) = batch.image_dims();
    let cut = sample_cut_box(w, h, lambda_mix, rng);
    CutmixOutcome { triggered: true, cut: Some(cut), donors, ..Default::default() }
}

/// Intra-class Cutmix: with probability `cutmix_prob`, every sample whose
/// shuffled partner has the same label receives the partner's pixels inside
/// one random box. Labels are returned unchanged.
pub fn intra_class_cutmix(batch: &LabeledBatch, cutmix_prob: f64, rng: &mut Rng) -> (LabeledBatch, CutmixOutcome) {
    let mut out = batch.clone();
    let mut outcome = draw(batch, cutmix_prob, rng);
    if let Some(cut) = outcome.cut {
        outcome.mixed = (0..batch.len()).filter(|&i| batch.labels[outcome.donors[i]] == batch.labels[i]).collect();
        paste_region(&mut out, &outcome.donors, &outcome.mixed, cut);
    }
    (out, outcome)
}

/// Classic label-mixing Cutmix, kept only for the instability ablation.
/// Every sample receives its partner's box and the returned soft targets are
/// interpolated by the pasted area fraction.
pub fn inter_class_cutmix(batch: &LabeledBatch, cutmix_prob: f64, rng: &mut Rng) -> (LabeledBatch, Vec<f32>, CutmixOutcome) {
    let mut out = batch.clone();
    let mut targets = batch.targets();
    let mut outcome = draw(batch, cutmix_prob, rng);
    if let Some(cut) = outcome.cut {
        outcome.mixed = (0..batch.len()).collect();
        paste_region(&mut out, &outcome.donors, &outcome.mixed, cut);
        let (_, h, w) = batch.image_dims();
        let frac = cut.area() as f32 / (h * w) as f32;
        for (i, t) in targets.iter_mut().enumerate() {
            *t = (1.0 - frac) * batch.labels[i] as f32 + frac * batch.labels[outcome.donors[i]] as f32;
        }
    }
    (out, targets, outcome)
}
