//! Forward pass with cached intermediates and the matching backward pass.
use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use rand::Rng as _;

use super::conv::{conv_backward, conv_forward, Dims};
use super::norm::{group_norm_backward, group_norm_forward, standardize_rows, standardize_rows_backward, GnCache, GnShape, Layout, WsStat};
use super::{Mode, ModelSpec, HEAD_BIAS, HEAD_WEIGHT};
use crate::error::{Error, Result};
use crate::params::ParameterSet;
use crate::rng::Rng;
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// Conv followed by group normalization.
struct ConvGn {
    conv: String,
    scale: String,
    shift: String,
    cout: usize,
    stride: usize,
}

impl ConvGn {
    fn new(prefix: &str, conv: &str, gn: &str, cout: usize, stride: usize) -> Self {
        Self {
            conv: format!("{prefix}{conv}.weight"),
            scale: format!("{prefix}{gn}.scale"),
            shift: format!("{prefix}{gn}.shift"),
            cout,
            stride,
        }
    }
}

struct ConvGnCache<T> {
    input: Vec<T>,
    in_dims: Dims,
    out_dims: Dims,
    w_hat: Vec<T>,
    ws: Vec<WsStat>,
    gn: GnCache<T>,
    /// Normalized output before any activation.
    out: Vec<T>,
}

enum Step {
    /// Conv + GN + ReLU.
    Plain(ConvGn),
    /// `relu(x + branch(x))` with `branch = gn2(conv2(relu(gn1(conv1(x)))))`.
    Residual(ConvGn, ConvGn),
}

enum StepCache<T> {
    Plain(ConvGnCache<T>),
    Residual {
        first: ConvGnCache<T>,
        second: ConvGnCache<T>,
        /// Per-sample multiplier of the branch: 0 when dropped, else the
        /// survivor rescale factor (1 in clean mode).
        branch_scale: Vec<T>,
        out: Vec<T>,
    },
}

fn plan(spec: &ModelSpec) -> Vec<Step> {
    let mut steps = vec![Step::Plain(ConvGn::new("stem.", "conv", "gn", spec.stem_width, 1))];
    for (s, stage) in spec.stages.iter().enumerate() {
        steps.push(Step::Plain(ConvGn::new(&format!("stage{s}.down."), "conv", "gn", stage.width, stage.stride)));
        for b in 0..stage.blocks {
            let p = format!("stage{s}.block{b}.");
            steps.push(Step::Residual(
                ConvGn::new(&p, "conv1", "gn1", stage.width, 1),
                ConvGn::new(&p, "conv2", "gn2", stage.width, 1),
            ));
        }
    }
    steps
}

fn relu<T: Scalar>(v: &mut [T]) {
    for x in v {
        if *x < T::zero() {
            *x = T::zero();
        }
    }
}

fn gn_shape(spec: &ModelSpec, d: Dims) -> GnShape {
    GnShape { channels: d.c, batch: d.b, hw: d.hw(), groups: spec.gn_groups, layout: Layout::ChannelMajor }
}

fn unit_forward<T: Scalar>(
    unit: &ConvGn,
    params: &ParameterSet<T>,
    spec: &ModelSpec,
    input: Vec<T>,
    in_dims: Dims,
) -> Result<ConvGnCache<T>> {
    let w = params.tensor(&unit.conv)?;
    let (w_hat, ws) = standardize_rows(w.data(), unit.cout, spec.ws_epsilon);
    let (z, out_dims) = conv_forward(&input, in_dims, &w_hat, unit.cout, unit.stride);
    let scale = params.tensor(&unit.scale)?.data();
    let shift = params.tensor(&unit.shift)?.data();
    let (out, gn) = group_norm_forward(&z, gn_shape(spec, out_dims), spec.gn_epsilon, scale, shift);
    Ok(ConvGnCache { input, in_dims, out_dims, w_hat, ws, gn, out })
}

/// Accumulates parameter gradients and returns the input gradient.
fn unit_backward<T: Scalar>(
    unit: &ConvGn,
    cache: &ConvGnCache<T>,
    params: &ParameterSet<T>,
    spec: &ModelSpec,
    d_out: &[T],
    grads: &mut ParameterSet<T>,
) -> Result<Vec<T>> {
    let scale = params.tensor(&unit.scale)?.data();
    let (dz, dscale, dshift) = group_norm_backward(d_out, gn_shape(spec, cache.out_dims), &cache.gn, scale);
    let (dw_hat, dx) = conv_backward(&cache.input, cache.in_dims, &cache.w_hat, unit.cout, unit.stride, &dz);
    let w = params.tensor(&unit.conv)?.data();
    let dw = standardize_rows_backward(w, &cache.ws, &dw_hat);
    add_into(grads.tensor_mut(&unit.conv)?.data_mut(), &dw);
    add_into(grads.tensor_mut(&unit.scale)?.data_mut(), &dscale);
    add_into(grads.tensor_mut(&unit.shift)?.data_mut(), &dshift);
    Ok(dx)
}

fn add_into<T: Scalar>(dst: &mut [T], src: &[T]) {
    for (d, s) in dst.iter_mut().zip(src) {
        *d = *d + *s;
    }
}

/// Result of a forward pass, holding what the backward pass needs.
pub struct ForwardPass<T> {
    pub logits: Vec<T>,
    pub probabilities: Vec<T>,
    /// `kept[block][sample]`: whether the residual branch survived.
    pub kept: Vec<Vec<bool>>,
    spec: ModelSpec,
    caches: Vec<StepCache<T>>,
    final_dims: Dims,
    pooled: Vec<T>,
    dropout_mask: Vec<T>,
}

/// Runs the network on `m x c x h x w` images.
pub fn forward_pass<T: Scalar>(
    params: &ParameterSet<T>,
    spec: &ModelSpec,
    images: &Tensor<f32>,
    mode: Mode<'_>,
) -> Result<ForwardPass<T>> {
    spec.validate()?;
    spec.check_params(params)?;
    let s = images.shape();
    if s.len() != 4 || s[1..] != spec.input_shape[..] || s[0] == 0 {
        return Err(Error::Shape(format!(
            "images {:?} do not match model input m x {:?}",
            s, spec.input_shape
        )));
    }
    let batch = s[0];
    let mut rng: Option<&mut Rng> = match mode {
        Mode::EvalClean => None,
        Mode::TrainNoised(r) => Some(r),
    };

    // m x c x h x w  ->  c x m x h x w
    let [c, h, w] = spec.input_shape;
    let mut x = vec![T::zero(); images.len()];
    for b in 0..batch {
        for ch in 0..c {
            let src = &images.data()[(b * c + ch) * h * w..][..h * w];
            let dst = &mut x[(ch * batch + b) * h * w..][..h * w];
            for (d, v) in dst.iter_mut().zip(src) {
                *d = T::from_f64(*v as f64);
            }
        }
    }
    let mut dims = Dims { c, b: batch, h, w };

    let sd_rate = spec.stochastic_depth_rate;
    let mut caches = Vec::new();
    let mut kept = Vec::new();
    for step in plan(spec) {
        match step {
            Step::Plain(unit) => {
                let cache = unit_forward(&unit, params, spec, x, dims)?;
                let mut a = cache.out.clone();
                relu(&mut a);
                dims = cache.out_dims;
                x = a;
                caches.push(StepCache::Plain(cache));
            }
            Step::Residual(u1, u2) => {
                let first = unit_forward(&u1, params, spec, x.clone(), dims)?;
                let mut a1 = first.out.clone();
                relu(&mut a1);
                let second = unit_forward(&u2, params, spec, a1, first.out_dims)?;
                let mut keep = vec![true; batch];
                let mut branch_scale = vec![T::one(); batch];
                if let Some(r) = rng.as_deref_mut() {
                    if sd_rate > 0.0 {
                        let survivor = T::from_f64(1.0 / (1.0 - sd_rate));
                        for (k, bs) in keep.iter_mut().zip(branch_scale.iter_mut()) {
                            *k = r.random::<f64>() >= sd_rate;
                            *bs = if *k { survivor } else { T::zero() };
                        }
                    }
                }
                let hw = dims.hw();
                let mut out = x;
                for ch in 0..dims.c {
                    for (b, bs) in branch_scale.iter().enumerate() {
                        let o = (ch * batch + b) * hw;
                        for i in o..o + hw {
                            out[i] = out[i] + *bs * second.out[i];
                        }
                    }
                }
                relu(&mut out);
                x = out.clone();
                kept.push(keep);
                caches.push(StepCache::Residual { first, second, branch_scale, out });
            }
        }
    }

    // Global average pool, dropout, linear head.
    let hw = dims.hw();
    let inv_hw = T::from_f64(1.0 / hw as f64);
    let pooled: Vec<T> = (0..dims.c * batch)
        .map(|p| x[p * hw..(p + 1) * hw].iter().fold(T::zero(), |acc, v| acc + *v) * inv_hw)
        .collect();
    let mut dropout_mask = vec![T::one(); pooled.len()];
    if let Some(r) = rng.as_deref_mut() {
        let p = spec.dropout_rate;
        if p > 0.0 {
            let survivor = T::from_f64(1.0 / (1.0 - p));
            for m in dropout_mask.iter_mut() {
                *m = if r.random::<f64>() >= p { survivor } else { T::zero() };
            }
        }
    }
    let wh = params.tensor(HEAD_WEIGHT)?.data();
    let bias = params.tensor(HEAD_BIAS)?.data()[0];
    let mut logits = vec![bias; batch];
    for ch in 0..dims.c {
        for (b, l) in logits.iter_mut().enumerate() {
            let i = ch * batch + b;
            *l = *l + wh[ch] * pooled[i] * dropout_mask[i];
        }
    }
    let probabilities = logits.iter().map(|&z| sigmoid(z)).collect();
    Ok(ForwardPass {
        logits,
        probabilities,
        kept,
        spec: spec.clone(),
        caches,
        final_dims: dims,
        pooled,
        dropout_mask,
    })
}

fn sigmoid<T: Scalar>(z: T) -> T {
    if z >= T::zero() {
        T::one() / (T::one() + (-z).exp())
    } else {
        let e = z.exp();
        e / (T::one() + e)
    }
}

impl<T: Scalar> ForwardPass<T> {
    /// Parameter gradients given the loss gradient with respect to the logits.
    pub fn backward(&self, params: &ParameterSet<T>, d_logits: &[T]) -> Result<ParameterSet<T>> {
        let spec = &self.spec;
        let dims = self.final_dims;
        let batch = dims.b;
        if d_logits.len() != batch {
            return Err(Error::Shape(format!("{} logit gradients for batch of {}", d_logits.len(), batch)));
        }
        let mut grads = params.zeros_like();
        let wh = params.tensor(HEAD_WEIGHT)?.data().to_vec();
        {
            let gw = grads.tensor_mut(HEAD_WEIGHT)?.data_mut();
            for ch in 0..dims.c {
                let mut acc = T::zero();
                for b in 0..batch {
                    let i = ch * batch + b;
                    acc = acc + d_logits[b] * self.pooled[i] * self.dropout_mask[i];
                }
                gw[ch] = acc;
            }
        }
        grads.tensor_mut(HEAD_BIAS)?.data_mut()[0] = d_logits.iter().fold(T::zero(), |a, v| a + *v);

        let hw = dims.hw();
        let inv_hw = T::from_f64(1.0 / hw as f64);
        let mut dx = vec![T::zero(); dims.len()];
        for ch in 0..dims.c {
            for b in 0..batch {
                let i = ch * batch + b;
                let g = wh[ch] * d_logits[b] * self.dropout_mask[i] * inv_hw;
                dx[i * hw..(i + 1) * hw].fill(g);
            }
        }

        let steps = plan(spec);
        for (step, cache) in steps.iter().zip(&self.caches).rev() {
            match (step, cache) {
                (Step::Plain(unit), StepCache::Plain(c)) => {
                    for (d, o) in dx.iter_mut().zip(&c.out) {
                        if *o <= T::zero() {
                            *d = T::zero();
                        }
                    }
                    dx = unit_backward(unit, c, params, spec, &dx, &mut grads)?;
                }
                (Step::Residual(u1, u2), StepCache::Residual { first, second, branch_scale, out }) => {
                    for (d, o) in dx.iter_mut().zip(out) {
                        if *o <= T::zero() {
                            *d = T::zero();
                        }
                    }
                    let d = second.out_dims;
                    let mut d_branch = dx.clone();
                    for ch in 0..d.c {
                        for (b, bs) in branch_scale.iter().enumerate() {
                            let o = (ch * d.b + b) * d.hw();
                            for v in &mut d_branch[o..o + d.hw()] {
                                *v = *v * *bs;
                            }
                        }
                    }
                    let mut da1 = unit_backward(u2, second, params, spec, &d_branch, &mut grads)?;
                    for (g, o) in da1.iter_mut().zip(&first.out) {
                        if *o <= T::zero() {
                            *g = T::zero();
                        }
                    }
                    let dx_branch = unit_backward(u1, first, params, spec, &da1, &mut grads)?;
                    add_into(&mut dx, &dx_branch);
                }
                _ => unreachable!("cache layout follows the plan"),
            }
        }
        Ok(grads)
    }
}
