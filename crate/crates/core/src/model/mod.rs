//! Small residual binary classifier with weight-standardized convolutions,
//! group normalization, head dropout and stochastic depth.
//!
//! Layout: a 3x3 stem, then one stage per [`StageSpec`] (a strided
//! transition conv followed by residual blocks), global average pooling,
//! dropout and a single-logit linear head squashed by a sigmoid. Every conv
//! is followed by group normalization; there are no batch statistics, so a
//! sample's clean prediction does not depend on its batch mates.
pub(crate) mod conv;
mod network;
pub mod norm;

use alloc::collections::BTreeMap;
use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

#[allow(unused_imports)]
use num_traits::Float;
use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};
use crate::params::{ParameterSet, Role};
use crate::rng::Rng;
use crate::scalar::Scalar;
use crate::tensor::Tensor;

pub use network::{forward_pass, ForwardPass};
pub use norm::{group_normalize, weight_standardize};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct StageSpec {
    pub width: usize,
    pub blocks: usize,
    /// Stride of the stage's transition conv (1 or 2).
    pub stride: usize,
}

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(default))]
pub struct ModelSpec {
    /// `(channels, height, width)` of input images.
    pub input_shape: [usize; 3],
    pub stem_width: usize,
    pub stages: Vec<StageSpec>,
    pub gn_groups: usize,
    pub ws_epsilon: f64,
    pub gn_epsilon: f64,
    pub dropout_rate: f64,
    pub stochastic_depth_rate: f64,
}

impl Default for ModelSpec {
    /// Four stages, about 125k parameters, for 3x64x64 inputs.
    fn default() -> Self {
        Self {
            input_shape: [3, 64, 64],
            stem_width: 8,
            stages: vec![
                StageSpec { width: 8, blocks: 1, stride: 1 },
                StageSpec { width: 16, blocks: 1, stride: 2 },
                StageSpec { width: 32, blocks: 1, stride: 2 },
                StageSpec { width: 64, blocks: 1, stride: 2 },
            ],
            gn_groups: 8,
            ws_epsilon: 1e-5,
            gn_epsilon: 1e-5,
            dropout_rate: 0.2,
            stochastic_depth_rate: 0.2,
        }
    }
}

/// Dropout and stochastic-depth rates used in noised forward passes.
#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct NoiseRates {
    pub dropout: f64,
    pub stochastic_depth: f64,
}

impl Default for NoiseRates {
    fn default() -> Self {
        Self { dropout: 0.2, stochastic_depth: 0.2 }
    }
}

/// One declared parameter: name, shape and role.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ParamDecl {
    pub name: String,
    pub shape: Vec<usize>,
    pub role: Role,
}

pub const HEAD_WEIGHT: &str = "head.weight";
pub const HEAD_BIAS: &str = "head.bias";

impl ModelSpec {
    pub fn validate(&self) -> Result<()> {
        let [c, h, w] = self.input_shape;
        if c == 0 || h == 0 || w == 0 {
            return Err(Error::Config(format!("input shape {:?} has an empty axis", self.input_shape)));
        }
        if self.stages.is_empty() {
            return Err(Error::Config("at least one stage is required".into()));
        }
        if self.gn_groups == 0 {
            return Err(Error::Config("gn_groups must be positive".into()));
        }
        for width in core::iter::once(self.stem_width).chain(self.stages.iter().map(|s| s.width)) {
            if width == 0 || width % self.gn_groups != 0 {
                return Err(Error::Config(format!(
                    "gn_groups = {} does not divide channel count {}",
                    self.gn_groups, width
                )));
            }
        }
        for s in &self.stages {
            if s.stride != 1 && s.stride != 2 {
                return Err(Error::Config(format!("stage stride must be 1 or 2, got {}", s.stride)));
            }
        }
        for (name, rate) in [("dropout_rate", self.dropout_rate), ("stochastic_depth_rate", self.stochastic_depth_rate)] {
            if !(0.0..1.0).contains(&rate) {
                return Err(Error::Config(format!("{} = {} outside [0, 1)", name, rate)));
            }
        }
        if !(self.ws_epsilon > 0.0 && self.gn_epsilon > 0.0) {
            return Err(Error::Config("normalization epsilons must be positive".into()));
        }
        Ok(())
    }

    pub fn with_noise(&self, rates: NoiseRates) -> Self {
        Self { dropout_rate: rates.dropout, stochastic_depth_rate: rates.stochastic_depth, ..self.clone() }
    }

    pub fn feature_width(&self) -> usize {
        self.stages.last().map_or(self.stem_width, |s| s.width)
    }

    pub fn num_blocks(&self) -> usize {
        self.stages.iter().map(|s| s.blocks).sum()
    }

    /// Prefix shared by every parameter of the last stage.
    pub fn top_stage_prefix(&self) -> String {
        format!("stage{}.", self.stages.len() - 1)
    }

    /// Every parameter the network reads, in declaration order.
    pub fn layout(&self) -> Vec<ParamDecl> {
        let mut out = Vec::new();
        let mut conv_gn = |prefix: &str, conv: &str, gn: &str, cin: usize, cout: usize| {
            out.push(ParamDecl { name: format!("{prefix}{conv}.weight"), shape: vec![cout, cin, 3, 3], role: Role::Feature });
            out.push(ParamDecl { name: format!("{prefix}{gn}.scale"), shape: vec![cout], role: Role::Feature });
            out.push(ParamDecl { name: format!("{prefix}{gn}.shift"), shape: vec![cout], role: Role::Feature });
        };
        conv_gn("stem.", "conv", "gn", self.input_shape[0], self.stem_width);
        let mut cin = self.stem_width;
        for (s, stage) in self.stages.iter().enumerate() {
            conv_gn(&format!("stage{s}.down."), "conv", "gn", cin, stage.width);
            for b in 0..stage.blocks {
                let p = format!("stage{s}.block{b}.");
                conv_gn(&p, "conv1", "gn1", stage.width, stage.width);
                conv_gn(&p, "conv2", "gn2", stage.width, stage.width);
            }
            cin = stage.width;
        }
        out.push(ParamDecl { name: HEAD_WEIGHT.into(), shape: vec![1, cin], role: Role::Head });
        out.push(ParamDecl { name: HEAD_BIAS.into(), shape: vec![1], role: Role::Head });
        out
    }

    pub fn num_parameters(&self) -> usize {
        self.layout().iter().map(|d| d.shape.iter().product::<usize>()).sum()
    }

    /// Fresh parameters: He-normal conv kernels, unit GN scale, zero shifts,
    /// a small random head and zero bias.
    pub fn init_params(&self, rng: &mut Rng) -> Result<ParameterSet<f32>> {
        self.validate()?;
        let mut params = ParameterSet::new();
        for decl in self.layout() {
            let n: usize = decl.shape.iter().product();
            let data: Vec<f32> = if decl.name.ends_with(".scale") {
                vec![1.0; n]
            } else if decl.name.ends_with(".shift") || decl.name == HEAD_BIAS {
                vec![0.0; n]
            } else {
                let fan_in: usize = decl.shape[1..].iter().product();
                let std = if decl.role == Role::Head { 0.01 } else { (2.0 / fan_in as f64).sqrt() };
                let normal = Normal::new(0.0, std).map_err(|e| Error::Config(format!("{e}")))?;
                (0..n).map(|_| normal.sample(rng) as f32).collect()
            };
            params.insert(decl.name, decl.role, Tensor::from_vec(&decl.shape, data)?)?;
        }
        Ok(params)
    }

    /// Errors unless `params` holds exactly the declared names, shapes and roles.
    pub fn check_params<T: Scalar>(&self, params: &ParameterSet<T>) -> Result<()> {
        let layout = self.layout();
        for decl in &layout {
            let p = params.get(&decl.name).ok_or_else(|| Error::Misaligned {
                name: decl.name.clone(),
                reason: "declared by the model but missing".into(),
            })?;
            if p.tensor.shape() != decl.shape.as_slice() {
                return Err(Error::Misaligned {
                    name: decl.name.clone(),
                    reason: format!("shape {:?}, model expects {:?}", p.tensor.shape(), decl.shape),
                });
            }
            if p.role != decl.role {
                return Err(Error::Misaligned {
                    name: decl.name.clone(),
                    reason: format!("role {:?}, model expects {:?}", p.role, decl.role),
                });
            }
        }
        if params.len() != layout.len() {
            let extra = params.names().find(|n| !layout.iter().any(|d| d.name == *n)).unwrap_or_default();
            return Err(Error::Misaligned { name: extra.into(), reason: "not declared by the model".into() });
        }
        Ok(())
    }
}

/// Role of every parameter as declared by the model: the final linear layer
/// is `Head`, everything else `Feature`.
pub fn partition_params<T: Scalar>(params: &ParameterSet<T>, spec: &ModelSpec) -> Result<BTreeMap<String, Role>> {
    spec.check_params(params)?;
    Ok(spec.layout().into_iter().map(|d| (d.name, d.role)).collect())
}

/// Forward-pass behaviour.
pub enum Mode<'r> {
    /// No dropout, no stochastic depth; deterministic.
    EvalClean,
    /// Dropout on the head and per-sample residual-branch dropping, with
    /// masks drawn from the supplied stream.
    TrainNoised(&'r mut Rng),
}

/// Probabilities that each image is generated.
pub fn forward<T: Scalar>(
    params: &ParameterSet<T>,
    spec: &ModelSpec,
    images: &Tensor<f32>,
    mode: Mode<'_>,
) -> Result<Vec<T>> {
    Ok(forward_pass(params, spec, images, mode)?.probabilities)
}

/// Clean predictions, computed in chunks of at most `chunk` images.
pub fn predict(params: &ParameterSet<f32>, spec: &ModelSpec, images: &Tensor<f32>, chunk: usize) -> Result<Vec<f32>> {
    let s = images.shape();
    if s.len() != 4 {
        return Err(Error::Shape(format!("expected m x c x h x w, got {:?}", s)));
    }
    let per = s[1] * s[2] * s[3];
    let chunk = chunk.max(1);
    let mut out = Vec::with_capacity(s[0]);
    let mut start = 0;
    while start < s[0] {
        let n = chunk.min(s[0] - start);
        let part = Tensor::from_vec(&[n, s[1], s[2], s[3]], images.data()[start * per..(start + n) * per].to_vec())?;
        out.extend(forward(params, spec, &part, Mode::EvalClean)?);
        start += n;
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::StreamKey;

    #[test]
    fn default_spec_is_desk_sized() {
        let spec = ModelSpec::default();
        spec.validate().unwrap();
        let n = spec.num_parameters();
        assert!((80_000..160_000).contains(&n), "{n}");
    }

    #[test]
    fn validation_catches_bad_groups_and_rates() {
        let mut spec = ModelSpec { gn_groups: 3, ..ModelSpec::default() };
        assert!(matches!(spec.validate(), Err(Error::Config(_))));
        spec.gn_groups = 8;
        spec.dropout_rate = 1.0;
        assert!(spec.validate().is_err());
    }

    #[test]
    fn partition_marks_only_final_layer_as_head() {
        let spec = ModelSpec::default();
        let params = spec.init_params(&mut StreamKey::new(1).rng()).unwrap();
        let roles = partition_params(&params, &spec).unwrap();
        let head: Vec<&str> = roles.iter().filter(|(_, r)| **r == Role::Head).map(|(n, _)| n.as_str()).collect();
        assert_eq!(head, vec![HEAD_BIAS, HEAD_WEIGHT]);
        assert_eq!(roles.len(), params.len());
        let feature = roles.values().filter(|r| **r == Role::Feature).count();
        assert_eq!(feature + head.len(), params.len());
        assert_eq!(params.num_scalars(), spec.num_parameters());
    }

    #[test]
    fn check_params_names_offender() {
        let spec = ModelSpec::default();
        let mut params = spec.init_params(&mut StreamKey::new(1).rng()).unwrap();
        *params.tensor_mut(HEAD_WEIGHT).unwrap() = Tensor::zeros(&[1, 3]);
        assert!(matches!(
            spec.check_params(&params),
            Err(Error::Misaligned { ref name, .. }) if name == HEAD_WEIGHT
        ));
    }
}
