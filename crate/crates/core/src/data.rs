//! Synthetic real/fake image generator, in-memory datasets and stratified splits.
use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

#[allow(unused_imports)]
use num_traits::Float;
use rand::seq::SliceRandom;
use rand::Rng as _;

use crate::augment::filters::blur_in_place;
use crate::error::{contract, Error, Result};
use crate::rng::{tag, StreamKey};
use crate::tensor::{LabeledBatch, Tensor};

/// Default size of the transfer subset.
pub const DEFAULT_TRANSFER_SIZE: usize = 2000;

/// Highest spatial frequency of a "real" field, in cycles per pixel.
pub const FIELD_BANDWIDTH: f64 = 0.2;
const FIELD_COMPONENTS: usize = 10;
const CHROMA_WEIGHT: f64 = 0.35;
/// Gaussian blur applied to blur-residual fakes.
const RESIDUAL_SIGMA: f64 = 0.5;
/// Column grating left behind by the generator, in pixels per cycle.
const RESIDUAL_PERIOD: f64 = 3.0;
const RESIDUAL_AMPLITUDE: f64 = 0.06;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "snake_case"))]
pub enum ArtifactKind {
    /// 2x average-pool then nearest-neighbour upsample, blended in.
    CheckerboardUpsample,
    /// Gaussian smoothing plus a faint period-4 grating, blended in.
    BlurResidual,
}

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(default))]
pub struct SyntheticSpec {
    pub n_per_class: usize,
    pub image_shape: [usize; 3],
    pub artifact_kind: ArtifactKind,
    pub artifact_strength: f64,
    pub seed: u64,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        Self {
            n_per_class: 1000,
            image_shape: [3, 64, 64],
            artifact_kind: ArtifactKind::CheckerboardUpsample,
            artifact_strength: 1.0,
            seed: 0,
        }
    }
}

impl SyntheticSpec {
    pub fn validate(&self) -> Result<()> {
        if self.n_per_class == 0 {
            return Err(Error::Config("n_per_class must be at least 1".into()));
        }
        if !(self.artifact_strength > 0.0 && self.artifact_strength <= 1.0) {
            return Err(Error::Config(format!(
                "artifact_strength must lie in (0, 1], got {}",
                self.artifact_strength
            )));
        }
        let [c, h, w] = self.image_shape;
        if c == 0 || h < 2 || w < 2 || h % 2 != 0 || w % 2 != 0 {
            return Err(Error::Config(format!(
                "image shape {:?} must have channels and even spatial sides",
                self.image_shape
            )));
        }
        Ok(())
    }
}

/// Images with labels (1 = generated) and stable sample ids.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub images: Tensor<f32>,
    pub labels: Vec<u8>,
    pub ids: Vec<String>,
}

impl Dataset {
    pub fn new(images: Tensor<f32>, labels: Vec<u8>, ids: Vec<String>) -> Result<Self> {
        if ids.len() != labels.len() {
            return Err(contract!("{} ids for {} labels", ids.len(), labels.len()));
        }
        let batch = LabeledBatch::new(images, labels)?;
        Ok(Self { images: batch.images, labels: batch.labels, ids })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn image_shape(&self) -> [usize; 3] {
        let s = self.images.shape();
        [s[1], s[2], s[3]]
    }

    pub fn class_counts(&self) -> [usize; 2] {
        let pos = self.labels.iter().filter(|&&l| l == 1).count();
        [self.len() - pos, pos]
    }

    /// Copies the listed samples, in order, into a batch.
    pub fn batch(&self, indices: &[usize]) -> Result<LabeledBatch> {
        let sub = self.subset(indices)?;
        LabeledBatch::new(sub.images, sub.labels)
    }

    pub fn subset(&self, indices: &[usize]) -> Result<Dataset> {
        let [c, h, w] = self.image_shape();
        let plane = c * h * w;
        let mut data = Vec::with_capacity(indices.len() * plane);
        let mut labels = Vec::with_capacity(indices.len());
        let mut ids = Vec::with_capacity(indices.len());
        for &i in indices {
            if i >= self.len() {
                return Err(contract!("sample index {} out of range for {} samples", i, self.len()));
            }
            data.extend_from_slice(&self.images.data()[i * plane..(i + 1) * plane]);
            labels.push(self.labels[i]);
            ids.push(self.ids[i].clone());
        }
        Ok(Dataset { images: Tensor::from_vec(&[indices.len(), c, h, w], data)?, labels, ids })
    }
}

/// Smooth random field: a few random low-frequency cosines per image,
/// shared luminance plus weaker per-channel variation, rescaled into [0, 1].
fn smooth_field(rng: &mut crate::rng::Rng, c: usize, h: usize, w: usize) -> Vec<f64> {
    let max_fx = (FIELD_BANDWIDTH * w as f64).floor() as i64;
    let max_fy = (FIELD_BANDWIDTH * h as f64).floor() as i64;
    let draw_components = |rng: &mut crate::rng::Rng| -> Vec<(f64, f64, f64, f64)> {
        (0..FIELD_COMPONENTS)
            .map(|_| {
                let fx = rng.random_range(-max_fx..=max_fx) as f64;
                let fy = rng.random_range(0..=max_fy) as f64;
                let falloff = 1.0 / (1.0 + (fx * fx + fy * fy).sqrt());
                let amp = rng.random_range(0.5..1.0) * falloff;
                let phase = rng.random_range(0.0..core::f64::consts::TAU);
                (fx, fy, amp, phase)
            })
            .collect()
    };
    let render = |comps: &[(f64, f64, f64, f64)], out: &mut [f64], weight: f64| {
        // cos(u + v) = cos u cos v - sin u sin v, with u along x and v along y.
        let mut row = vec![(0.0, 0.0); w];
        let mut col = vec![(0.0, 0.0); h];
        for &(fx, fy, amp, phase) in comps {
            for (x, r) in row.iter_mut().enumerate() {
                let u = core::f64::consts::TAU * fx * x as f64 / w as f64 + phase;
                *r = (weight * amp * u.cos(), weight * amp * u.sin());
            }
            for (y, c) in col.iter_mut().enumerate() {
                let v = core::f64::consts::TAU * fy * y as f64 / h as f64;
                *c = (v.cos(), v.sin());
            }
            for (y, &(cv, sv)) in col.iter().enumerate() {
                for (o, &(cu, su)) in out[y * w..(y + 1) * w].iter_mut().zip(&row) {
                    *o += cu * cv - su * sv;
                }
            }
        }
    };
    let luminance = draw_components(rng);
    let mut field = vec![0.0; c * h * w];
    for plane in field.chunks_exact_mut(h * w) {
        render(&luminance, plane, 1.0);
        let chroma = draw_components(rng);
        render(&chroma, plane, CHROMA_WEIGHT);
    }
    let (lo, hi) = field.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| (lo.min(v), hi.max(v)));
    let span = (hi - lo).max(1e-12);
    // A random sub-range keeps overall brightness/contrast from being a cue.
    let contrast = rng.random_range(0.6..1.0);
    let offset = rng.random_range(0.0..(1.0 - contrast));
    for v in &mut field {
        *v = offset + contrast * (*v - lo) / span;
    }
    field
}

fn inject_checkerboard(field: &mut [f64], c: usize, h: usize, w: usize, strength: f64) {
    for plane in field.chunks_exact_mut(h * w).take(c) {
        let coarse: Vec<f64> = (0..(h / 2) * (w / 2))
            .map(|i| {
                let (y, x) = (2 * (i / (w / 2)), 2 * (i % (w / 2)));
                0.25 * (plane[y * w + x] + plane[y * w + x + 1] + plane[(y + 1) * w + x] + plane[(y + 1) * w + x + 1])
            })
            .collect();
        for y in 0..h {
            for x in 0..w {
                let up = coarse[(y / 2) * (w / 2) + x / 2];
                let v = &mut plane[y * w + x];
                *v = (1.0 - strength) * *v + strength * up;
            }
        }
    }
}

fn inject_blur_residual(field: &mut [f64], h: usize, w: usize, strength: f64, phase: f64) {
    let mut blurred: Vec<f32> = field.iter().map(|&v| v as f32).collect();
    blur_in_place(&mut blurred, h, w, RESIDUAL_SIGMA);
    for (plane, bplane) in field.chunks_exact_mut(h * w).zip(blurred.chunks_exact(h * w)) {
        for y in 0..h {
            for x in 0..w {
                let arg = core::f64::consts::TAU * x as f64 / RESIDUAL_PERIOD + phase;
                let fake = (bplane[y * w + x] as f64 + RESIDUAL_AMPLITUDE * arg.cos()).clamp(0.0, 1.0);
                let v = &mut plane[y * w + x];
                *v = (1.0 - strength) * *v + strength * fake;
            }
        }
    }
}

/// Balanced real/fake dataset; sample `i` depends only on `(seed, i)`.
/// Labels alternate 0, 1, 0, 1, ...
pub fn generate_synthetic(spec: &SyntheticSpec) -> Result<Dataset> {
    spec.validate()?;
    let [c, h, w] = spec.image_shape;
    let n = 2 * spec.n_per_class;
    let root = StreamKey::new(spec.seed).child(tag::SYNTHETIC);
    let mut data = Vec::with_capacity(n * c * h * w);
    let mut labels = Vec::with_capacity(n);
    let mut ids = Vec::with_capacity(n);
    for i in 0..n {
        let label = (i % 2) as u8;
        let mut rng = root.child(i as u64).rng();
        let mut field = smooth_field(&mut rng, c, h, w);
        if label == 1 {
            match spec.artifact_kind {
                ArtifactKind::CheckerboardUpsample => inject_checkerboard(&mut field, c, h, w, spec.artifact_strength),
                ArtifactKind::BlurResidual => {
                    let phase = rng.random_range(0.0..core::f64::consts::TAU);
                    inject_blur_residual(&mut field, h, w, spec.artifact_strength, phase)
                }
            }
        }
        data.extend(field.iter().map(|&v| (v as f32).clamp(0.0, 1.0)));
        labels.push(label);
        ids.push(format!("syn-{:06}", i));
    }
    Dataset::new(Tensor::from_vec(&[n, c, h, w], data)?, labels, ids)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "lowercase"))]
pub enum Split {
    Train,
    Val,
    Test,
    Transfer,
}

/// Fractions of each class assigned to train/val/test. The transfer subset
/// is carved out of the train share when `transfer` is set.
#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(default))]
pub struct SplitPlan {
    pub train: f64,
    pub val: f64,
    pub test: f64,
    pub transfer: Option<usize>,
}

impl Default for SplitPlan {
    fn default() -> Self {
        Self::new(0.8, 0.0, 0.2)
    }
}

impl SplitPlan {
    pub fn new(train: f64, val: f64, test: f64) -> Self {
        Self { train, val, test, transfer: None }
    }

    pub fn with_transfer(mut self, size: usize) -> Self {
        self.transfer = Some(size);
        self
    }

    pub fn validate(&self) -> Result<()> {
        let parts = [self.train, self.val, self.test];
        if parts.iter().any(|f| !(f.is_finite() && *f >= 0.0)) {
            return Err(Error::Config(format!("split fractions must be nonnegative, got {:?}", parts)));
        }
        if parts.iter().sum::<f64>() > 1.0 + 1e-12 {
            return Err(Error::Config(format!("split fractions sum to more than 1: {:?}", parts)));
        }
        Ok(())
    }
}

/// Per-sample split assignment; `None` marks samples left out by fractions
/// summing below one.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct DatasetManifest {
    pub ids: Vec<String>,
    pub labels: Vec<u8>,
    pub source: String,
    pub splits: Vec<Option<Split>>,
}

impl DatasetManifest {
    pub fn indices(&self, split: Split) -> Vec<usize> {
        self.splits
            .iter()
            .enumerate()
            .filter_map(|(i, s)| (*s == Some(split)).then_some(i))
            .collect()
    }
}

/// Rounded cumulative allocation: `round(sum of fractions * n)` boundaries.
fn allocate(n: usize, fractions: &[f64]) -> Vec<usize> {
    let mut out = Vec::with_capacity(fractions.len());
    let mut cum = 0.0;
    let mut prev = 0usize;
    for f in fractions {
        cum += f;
        let edge = ((cum * n as f64).round() as usize).min(n);
        out.push(edge.saturating_sub(prev));
        prev = prev.max(edge);
    }
    out
}

/// Stratified, seeded, disjoint split.
pub fn split_dataset(dataset: &Dataset, plan: &SplitPlan, source: &str, seed: u64) -> Result<DatasetManifest> {
    plan.validate()?;
    let mut rng = StreamKey::new(seed).child(tag::SPLIT).rng();
    let mut splits = vec![None; dataset.len()];
    let mut train_by_class: [Vec<usize>; 2] = [Vec::new(), Vec::new()];
    for class in 0..2u8 {
        let mut members: Vec<usize> = (0..dataset.len()).filter(|&i| dataset.labels[i] == class).collect();
        members.shuffle(&mut rng);
        let counts = allocate(members.len(), &[plan.train, plan.val, plan.test]);
        let mut cursor = members.into_iter();
        for (split, count) in [Split::Train, Split::Val, Split::Test].into_iter().zip(counts) {
            for i in cursor.by_ref().take(count) {
                splits[i] = Some(split);
                if split == Split::Train {
                    train_by_class[class as usize].push(i);
                }
            }
        }
    }
    if let Some(size) = plan.transfer {
        let pool = train_by_class[0].len() + train_by_class[1].len();
        let take = size.min(pool);
        if pool > 0 {
            let neg = ((take as f64 * train_by_class[0].len() as f64 / pool as f64).round() as usize)
                .min(train_by_class[0].len());
            let pos = (take - neg).min(train_by_class[1].len());
            for &i in train_by_class[0].iter().take(neg).chain(train_by_class[1].iter().take(pos)) {
                splits[i] = Some(Split::Transfer);
            }
        }
    }
    Ok(DatasetManifest {
        ids: dataset.ids.clone(),
        labels: dataset.labels.clone(),
        source: source.into(),
        splits,
    })
}
