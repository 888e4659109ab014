//! Data-side noise injection: flip, JPEG, blur and Cutmix.
//!
//! Each transform fires independently per sample with its configured
//! probability (draw `u ~ U(0, 1)`, apply iff `u < p`), in the order
//! flip, JPEG, blur; Cutmix then runs once over the whole batch. Per-sample
//! randomness comes from a substream keyed by the sample's batch position,
//! so results do not depend on processing order.
mod codec;
mod cutmix;
pub(crate) mod filters;

use alloc::vec::Vec;

use rand::Rng as _;

pub use codec::{jpeg_round_trip, FULL_CHROMA_QUALITY};
pub use cutmix::{cut_box_at, inter_class_cutmix, intra_class_cutmix, paste_region, sample_cut_box, CutBox, CutmixOutcome};
pub use filters::{gaussian_blur, gaussian_kernel, horizontal_flip};

use crate::error::{contract, Result};
use crate::rng::{tag, StreamKey};
use crate::tensor::LabeledBatch;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "kebab-case"))]
pub enum CutmixKind {
    /// Patches only between same-label samples; labels untouched.
    IntraClass,
    /// Label-mixing Cutmix (ablation only).
    InterClass,
}

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(default))]
pub struct AugmentationConfig {
    pub p_cutmix: f64,
    pub p_jpeg: f64,
    pub p_blur: f64,
    pub p_flip: f64,
    /// Inclusive quality interval.
    pub jpeg_quality_range: (u8, u8),
    /// Half-open sigma interval.
    pub blur_sigma_range: (f64, f64),
    pub cutmix_kind: CutmixKind,
    pub rng_seed: u64,
}

impl Default for AugmentationConfig {
    fn default() -> Self {
        Self::with_rate(0.5)
    }
}

impl AugmentationConfig {
    /// Every transform at probability `p`.
    pub fn with_rate(p: f64) -> Self {
        Self {
            p_cutmix: p,
            p_jpeg: p,
            p_blur: p,
            p_flip: p,
            jpeg_quality_range: (30, 100),
            blur_sigma_range: (0.5, 3.0),
            cutmix_kind: CutmixKind::IntraClass,
            rng_seed: 0,
        }
    }

    /// Rates used while pretraining on the source task.
    pub fn pretrain() -> Self {
        Self::with_rate(0.2)
    }

    /// Rates used during transfer.
    pub fn transfer() -> Self {
        Self::with_rate(0.5)
    }

    pub fn disabled() -> Self {
        Self::with_rate(0.0)
    }

    pub fn validate(&self) -> Result<()> {
        for (name, p) in [("p_cutmix", self.p_cutmix), ("p_jpeg", self.p_jpeg), ("p_blur", self.p_blur), ("p_flip", self.p_flip)] {
            if !(0.0..=1.0).contains(&p) {
                return Err(contract!("{} = {} is not a probability", name, p));
            }
        }
        let (qlo, qhi) = self.jpeg_quality_range;
        if !(1 <= qlo && qlo <= qhi && qhi <= 100) {
            return Err(contract!("JPEG quality range {:?} must be a nonempty subset of 1..=100", self.jpeg_quality_range));
        }
        let (slo, shi) = self.blur_sigma_range;
        if !(slo.is_finite() && shi.is_finite() && 0.0 <= slo && slo <= shi) {
            return Err(contract!("blur sigma range {:?} is invalid", self.blur_sigma_range));
        }
        Ok(())
    }

    /// Substream for augmenting the batch of step `step`.
    pub fn step_key(&self, step: u64) -> StreamKey {
        StreamKey::new(self.rng_seed).child(tag::DATA_AUGMENT).child(step)
    }
}

/// Per-sample record of what the pipeline applied.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct PipelineReport {
    pub flipped: Vec<bool>,
    pub jpeg_quality: Vec<Option<u8>>,
    pub blur_sigma: Vec<Option<f64>>,
    pub cutmix: CutmixOutcome,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AugmentedBatch {
    /// Augmented images with the original labels.
    pub batch: LabeledBatch,
    /// Training targets: the labels, or interpolated labels for
    /// label-mixing Cutmix.
    pub targets: Vec<f32>,
    pub report: PipelineReport,
}

/// Runs the noise-injection pipeline on a batch.
pub fn apply_pipeline(batch: &LabeledBatch, config: &AugmentationConfig, key: StreamKey) -> Result<AugmentedBatch> {
    config.validate()?;
    batch.validate()?;
    let (c, h, w) = batch.image_dims();
    let mut out = batch.clone();
    let m = batch.len();
    let mut report = PipelineReport {
        flipped: Vec::with_capacity(m),
        jpeg_quality: Vec::with_capacity(m),
        blur_sigma: Vec::with_capacity(m),
        cutmix: CutmixOutcome::default(),
    };
    for i in 0..m {
        let mut rng = key.child(i as u64).rng();
        // Draw every gate and parameter up front so the stream layout does
        // not depend on which transforms fire.
        let u_flip = rng.random::<f64>();
        let u_jpeg = rng.random::<f64>();
        let quality = rng.random_range(config.jpeg_quality_range.0..=config.jpeg_quality_range.1);
        let u_blur = rng.random::<f64>();
        let (slo, shi) = config.blur_sigma_range;
        let sigma = slo + (shi - slo) * rng.random::<f64>();

        let img = out.image_mut(i);
        let flip = u_flip < config.p_flip;
        if flip {
            filters::flip_in_place(img, w);
        }
        let jpeg = (u_jpeg < config.p_jpeg).then_some(quality);
        if let Some(q) = jpeg {
            codec::round_trip_in_place(img, c, h, w, q)?;
        }
        let blur = (u_blur < config.p_blur).then_some(sigma);
        if let Some(s) = blur {
            filters::blur_in_place(img, h, w, s);
        }
        report.flipped.push(flip);
        report.jpeg_quality.push(jpeg);
        report.blur_sigma.push(blur);
    }
    let mut cut_rng = key.child(tag::CUTMIX).rng();
    let (mixed, targets, outcome) = match config.cutmix_kind {
        CutmixKind::IntraClass => {
            let (b, o) = intra_class_cutmix(&out, config.p_cutmix, &mut cut_rng);
            let t = b.targets();
            (b, t, o)
        }
        CutmixKind::InterClass => inter_class_cutmix(&out, config.p_cutmix, &mut cut_rng),
    };
    report.cutmix = outcome;
    Ok(AugmentedBatch { batch: mixed, targets, report })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::Tensor;

    fn batch(m: usize) -> LabeledBatch {
        let n = m * 3 * 8 * 8;
        let data: Vec<f32> = (0..n).map(|i| ((i * 7919) % 256) as f32 / 255.0).collect();
        let labels = (0..m).map(|i| (i % 2) as u8).collect();
        LabeledBatch::new(Tensor::from_vec(&[m, 3, 8, 8], data).unwrap(), labels).unwrap()
    }

    #[test]
    fn disabled_pipeline_is_identity() {
        let b = batch(6);
        let out = apply_pipeline(&b, &AugmentationConfig::disabled(), StreamKey::new(1)).unwrap();
        assert_eq!(out.batch, b);
        assert_eq!(out.targets, b.targets());
    }

    #[test]
    fn certain_flip_flips_everything() {
        let b = batch(4);
        let cfg = AugmentationConfig { p_flip: 1.0, ..AugmentationConfig::disabled() };
        let out = apply_pipeline(&b, &cfg, StreamKey::new(2)).unwrap();
        let flipped = horizontal_flip(&b.images).unwrap();
        assert_eq!(out.batch.images, flipped);
        assert_eq!(out.batch.labels, b.labels);
    }

    #[test]
    fn replay_is_bitwise_identical() {
        let b = batch(8);
        let cfg = AugmentationConfig::transfer();
        let one = apply_pipeline(&b, &cfg, StreamKey::new(9)).unwrap();
        let two = apply_pipeline(&b, &cfg, StreamKey::new(9)).unwrap();
        assert_eq!(one, two);
        let bits = |t: &Tensor<f32>| t.data().iter().map(|v| v.to_bits()).collect::<Vec<_>>();
        assert_eq!(bits(&one.batch.images), bits(&two.batch.images));
    }

    #[test]
    fn invalid_config_is_rejected() {
        let cfg = AugmentationConfig { p_blur: 1.5, ..AugmentationConfig::default() };
        assert!(apply_pipeline(&batch(2), &cfg, StreamKey::new(0)).is_err());
        let cfg = AugmentationConfig { jpeg_quality_range: (0, 50), ..AugmentationConfig::default() };
        assert!(cfg.validate().is_err());
    }
}
