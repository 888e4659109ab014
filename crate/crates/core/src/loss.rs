//! Loss and regularization terms.
//!
//! Cross-entropy is averaged over the batch; the L² and starting-point
//! penalties are plain sums. All reductions are accumulated in `f64` in
//! sorted parameter-name order, so results are bit-reproducible.
use alloc::vec::Vec;

#[allow(unused_imports)]
use num_traits::Float;

use crate::error::{contract, Result};
use crate::params::{ParameterSet, Role, RoleFilter};
use crate::scalar::Scalar;

/// Predictions are clamped to `[EPS, 1 - EPS]` before taking logs.
pub const PREDICTION_EPS: f64 = 1e-7;

/// Coefficients of the regularized objectives.
#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct RegularizerWeights {
    /// Weight decay used while pretraining on the source task.
    pub lambda_pretrain: f64,
    /// Fixed starting-point coefficient of the legacy objective.
    pub alpha: f64,
    /// Fixed head L² coefficient of the legacy objective.
    pub beta: f64,
    /// Scale of the self-training gate.
    pub s: f64,
}

impl Default for RegularizerWeights {
    fn default() -> Self {
        Self { lambda_pretrain: 1e-4, alpha: 0.1, beta: 0.01, s: 1.0 }
    }
}

impl RegularizerWeights {
    pub const S_RANGE: (f64, f64) = (0.1, 2.0);

    pub fn validate(&self, allow_s_override: bool) -> Result<()> {
        for (name, v) in [("lambda_pretrain", self.lambda_pretrain), ("alpha", self.alpha), ("beta", self.beta)] {
            if !(v.is_finite() && v >= 0.0) {
                return Err(contract!("{} must be a nonnegative finite number, got {}", name, v));
            }
        }
        if !(self.s.is_finite() && self.s > 0.0) {
            return Err(contract!("s must be positive, got {}", self.s));
        }
        let (lo, hi) = Self::S_RANGE;
        if !allow_s_override && !(lo..=hi).contains(&self.s) {
            return Err(contract!("s = {} outside [{}, {}]", self.s, lo, hi));
        }
        Ok(())
    }
}

fn check_coefficient(name: &str, v: f64) -> Result<()> {
    if v.is_finite() && v >= 0.0 {
        Ok(())
    } else {
        Err(contract!("{} must be nonnegative and finite, got {}", name, v))
    }
}

fn check_pair<T: Scalar>(predictions: &[T], labels: &[f32]) -> Result<()> {
    if predictions.is_empty() {
        return Err(contract!("empty prediction vector"));
    }
    if predictions.len() != labels.len() {
        return Err(contract!(
            "{} predictions for {} labels",
            predictions.len(),
            labels.len()
        ));
    }
    if let Some(p) = predictions.iter().find(|p| !(p.as_f64() >= 0.0 && p.as_f64() <= 1.0)) {
        return Err(contract!("prediction {:?} outside [0, 1]", p));
    }
    if let Some(y) = labels.iter().find(|y| !(**y >= 0.0 && **y <= 1.0)) {
        return Err(contract!("label {} outside [0, 1]", y));
    }
    Ok(())
}

/// Mean binary cross-entropy. Labels are normally 0/1; fractional targets in
/// `[0, 1]` are accepted for label-mixing ablations.
pub fn binary_cross_entropy<T: Scalar>(predictions: &[T], labels: &[f32]) -> Result<f64> {
    check_pair(predictions, labels)?;
    let mut sum = 0.0f64;
    for (p, &y) in predictions.iter().zip(labels) {
        let p = p.as_f64().clamp(PREDICTION_EPS, 1.0 - PREDICTION_EPS);
        let y = y as f64;
        sum -= y * p.ln() + (1.0 - y) * (1.0 - p).ln();
    }
    Ok(sum / predictions.len() as f64)
}

/// Gradient of [`binary_cross_entropy`] with respect to the pre-sigmoid
/// logits that produced `probabilities`. Zero where the clamp is active.
pub fn binary_cross_entropy_logit_grad<T: Scalar>(
    probabilities: &[T],
    labels: &[f32],
) -> Result<Vec<T>> {
    check_pair(probabilities, labels)?;
    let m = probabilities.len() as f64;
    Ok(probabilities
        .iter()
        .zip(labels)
        .map(|(p, &y)| {
            let p = p.as_f64();
            if !(PREDICTION_EPS..=1.0 - PREDICTION_EPS).contains(&p) {
                T::zero()
            } else {
                T::from_f64((p - y as f64) / m)
            }
        })
        .collect())
}

/// Sum of squared entries over the tensors admitted by `filter`.
pub fn l2_norm_squared<T: Scalar>(params: &ParameterSet<T>, filter: RoleFilter) -> Result<f64> {
    let mut selected = 0usize;
    let mut sum = 0.0f64;
    for (_, p) in params.iter().filter(|(_, p)| filter.admits(p.role)) {
        selected += 1;
        for v in p.tensor.data() {
            let v = v.as_f64();
            sum += v * v;
        }
    }
    if selected == 0 {
        return Err(contract!("no parameters selected by {:?}", filter));
    }
    Ok(sum)
}

/// Squared distance of the feature parameters from their anchor values.
/// Head parameters are excluded.
pub fn sp_penalty<T: Scalar>(current: &ParameterSet<T>, anchor: &ParameterSet<T>) -> Result<f64> {
    current.check_aligned(anchor)?;
    let mut sum = 0.0f64;
    for ((_, p), (_, q)) in current.iter().zip(anchor.iter()) {
        if p.role != Role::Feature {
            continue;
        }
        for (a, b) in p.tensor.data().iter().zip(q.tensor.data()) {
            let d = a.as_f64() - b.as_f64();
            sum += d * d;
        }
    }
    Ok(sum)
}

/// Source-stage objective: cross-entropy plus weight decay on every parameter.
pub fn pretrain_loss<T: Scalar>(
    predictions: &[T],
    labels: &[f32],
    params: &ParameterSet<T>,
    lambda_pretrain: f64,
) -> Result<f64> {
    check_coefficient("lambda_pretrain", lambda_pretrain)?;
    let ce = binary_cross_entropy(predictions, labels)?;
    Ok(ce + lambda_pretrain * l2_norm_squared(params, RoleFilter::All)?)
}

/// Gated transfer objective: one coefficient `gamma` scales both the
/// starting-point penalty and the head L² term.
pub fn transfer_loss<T: Scalar>(
    predictions: &[T],
    labels: &[f32],
    current: &ParameterSet<T>,
    anchor: &ParameterSet<T>,
    gamma: f64,
) -> Result<f64> {
    check_coefficient("gamma", gamma)?;
    legacy_transfer_loss(predictions, labels, current, anchor, gamma, gamma)
}

/// Fixed-coefficient variant: `alpha` on the starting-point term, `beta` on
/// the head L² term.
pub fn legacy_transfer_loss<T: Scalar>(
    predictions: &[T],
    labels: &[f32],
    current: &ParameterSet<T>,
    anchor: &ParameterSet<T>,
    alpha: f64,
    beta: f64,
) -> Result<f64> {
    check_coefficient("alpha", alpha)?;
    check_coefficient("beta", beta)?;
    let ce = binary_cross_entropy(predictions, labels)?;
    let sp = sp_penalty(current, anchor)?;
    let head = l2_norm_squared(current, RoleFilter::Head)?;
    Ok(ce + alpha * sp + beta * head)
}

/// `grad += coef * d/dw ||w||²` over the parameters admitted by `filter`.
pub fn add_l2_grad<T: Scalar>(
    grad: &mut ParameterSet<T>,
    params: &ParameterSet<T>,
    filter: RoleFilter,
    coef: f64,
) -> Result<()> {
    grad.check_aligned(params)?;
    let two_c = T::from_f64(2.0 * coef);
    for ((_, g), (_, p)) in grad.iter_mut().zip(params.iter()) {
        if !filter.admits(p.role) {
            continue;
        }
        for (gv, &pv) in g.tensor.data_mut().iter_mut().zip(p.tensor.data()) {
            *gv = *gv + two_c * pv;
        }
    }
    Ok(())
}

/// `grad += coef * d/dw sp_penalty(w, anchor)`.
pub fn add_sp_grad<T: Scalar>(
    grad: &mut ParameterSet<T>,
    current: &ParameterSet<T>,
    anchor: &ParameterSet<T>,
    coef: f64,
) -> Result<()> {
    grad.check_aligned(current)?;
    current.check_aligned(anchor)?;
    let two_c = T::from_f64(2.0 * coef);
    for (((_, g), (_, p)), (_, q)) in grad.iter_mut().zip(current.iter()).zip(anchor.iter()) {
        if p.role != Role::Feature {
            continue;
        }
        for ((gv, &pv), &qv) in g.tensor.data_mut().iter_mut().zip(p.tensor.data()).zip(q.tensor.data()) {
            *gv = *gv + two_c * (pv - qv);
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::Tensor;
    use alloc::vec;

    fn params(feature: &[f64], head: &[f64]) -> ParameterSet<f64> {
        let mut p = ParameterSet::new();
        p.insert("conv.weight", Role::Feature, Tensor::from_vec(&[feature.len()], feature.to_vec()).unwrap())
            .unwrap();
        p.insert("head.weight", Role::Head, Tensor::from_vec(&[head.len()], head.to_vec()).unwrap())
            .unwrap();
        p
    }

    #[test]
    fn bce_examples() {
        let v = binary_cross_entropy(&[0.5f64], &[1.0]).unwrap();
        assert!((v - core::f64::consts::LN_2).abs() < 1e-12);
        let v = binary_cross_entropy(&[1.0f64], &[1.0]).unwrap();
        assert!((0.0..=1.2e-7).contains(&v));
        // Direct scalar evaluation: mean(-ln 0.9, -ln 0.8).
        let expected = 0.5 * (-0.9f64.ln() - 0.8f64.ln());
        let v = binary_cross_entropy(&[0.9f64, 0.2], &[1.0, 0.0]).unwrap();
        assert!((v - expected).abs() < 1e-12);
        assert!((v - 0.164252).abs() < 1e-6);
    }

    #[test]
    fn bce_rejects_bad_input() {
        assert!(binary_cross_entropy::<f64>(&[], &[]).is_err());
        assert!(binary_cross_entropy(&[0.5f64], &[1.0, 0.0]).is_err());
        assert!(binary_cross_entropy(&[f64::NAN], &[1.0]).is_err());
    }

    #[test]
    fn l2_examples() {
        let mut p = ParameterSet::<f64>::new();
        p.insert("w", Role::Feature, Tensor::from_vec(&[3], vec![1.0, 2.0, 2.0]).unwrap()).unwrap();
        assert_eq!(l2_norm_squared(&p, RoleFilter::All).unwrap(), 9.0);
        assert!(l2_norm_squared(&p, RoleFilter::Head).is_err());
        let z = p.zeros_like();
        assert_eq!(l2_norm_squared(&z, RoleFilter::All).unwrap(), 0.0);
        let mut one_hot = ParameterSet::<f64>::new();
        one_hot.insert("w", Role::Head, Tensor::from_vec(&[3], vec![0.0, 1.0, 0.0]).unwrap()).unwrap();
        assert_eq!(l2_norm_squared(&one_hot, RoleFilter::Head).unwrap(), 1.0);
    }

    #[test]
    fn sp_examples() {
        let anchor = params(&[1.0, 1.0], &[0.5]);
        assert_eq!(sp_penalty(&anchor, &anchor).unwrap(), 0.0);
        let moved = params(&[4.0, 5.0], &[0.5]);
        assert_eq!(sp_penalty(&moved, &anchor).unwrap(), 25.0);
        let head_only = params(&[1.0, 1.0], &[9.0]);
        assert_eq!(sp_penalty(&head_only, &anchor).unwrap(), 0.0);
    }

    #[test]
    fn sp_rejects_misaligned() {
        let a = params(&[1.0, 1.0], &[0.5]);
        let b = params(&[1.0], &[0.5]);
        assert!(matches!(
            sp_penalty(&a, &b),
            Err(crate::Error::Misaligned { ref name, .. }) if name == "conv.weight"
        ));
    }

    #[test]
    fn pretrain_examples() {
        let p = params(&[1.0, 2.0], &[2.0]); // ||w||² = 9
        let ce = binary_cross_entropy(&[0.5f64], &[1.0]).unwrap();
        assert_eq!(pretrain_loss(&[0.5f64], &[1.0], &p, 0.0).unwrap(), ce);
        let v = pretrain_loss(&[0.5f64], &[1.0], &p, 0.1).unwrap();
        assert!((v - 1.593147).abs() < 1e-6);
        let z = p.zeros_like();
        assert_eq!(pretrain_loss(&[0.5f64], &[1.0], &z, 3.0).unwrap(), ce);
    }

    #[test]
    fn transfer_examples() {
        // sp = 2 (one unit of drift in each of two entries), head ||w||² = 4.
        let anchor = params(&[0.0, 0.0], &[2.0]);
        let current = params(&[1.0, 1.0], &[2.0]);
        let ce = binary_cross_entropy(&[0.5f64], &[1.0]).unwrap();
        assert_eq!(transfer_loss(&[0.5f64], &[1.0], &current, &anchor, 0.0).unwrap() - 4.0 * 0.0, ce);
        let v = transfer_loss(&[0.5f64], &[1.0], &current, &anchor, 0.5).unwrap();
        assert!((v - 3.693147).abs() < 1e-6);

        let zero_head = params(&[1.0, 1.0], &[0.0]);
        for g in [0.0, 0.3, 7.0] {
            assert_eq!(transfer_loss(&[0.5f64], &[1.0], &zero_head, &zero_head, g).unwrap(), ce);
        }
        assert!(transfer_loss(&[0.5f64], &[1.0], &current, &anchor, -0.1).is_err());
    }

    #[test]
    fn legacy_examples() {
        let anchor = params(&[0.0, 0.0], &[2.0]);
        let current = params(&[1.0, 1.0], &[2.0]);
        // Zero cross-entropy needs a perfect (clamped) prediction; subtract it out.
        let ce = binary_cross_entropy(&[1.0f64], &[1.0]).unwrap();
        let v = legacy_transfer_loss(&[1.0f64], &[1.0], &current, &anchor, 0.1, 0.01).unwrap();
        assert!((v - ce - 0.24).abs() < 1e-12);
        let v = legacy_transfer_loss(&[0.5f64], &[1.0], &current, &anchor, 0.0, 0.0).unwrap();
        assert_eq!(v, binary_cross_entropy(&[0.5f64], &[1.0]).unwrap());
        for c in [0.0, 0.1, 0.5] {
            assert_eq!(
                legacy_transfer_loss(&[0.3f64], &[0.0], &current, &anchor, c, c).unwrap(),
                transfer_loss(&[0.3f64], &[0.0], &current, &anchor, c).unwrap()
            );
        }
    }

    #[test]
    fn penalty_gradients_match_closed_form() {
        let anchor = params(&[0.5, -1.0], &[2.0]);
        let current = params(&[1.0, 1.0], &[3.0]);
        let mut g = current.zeros_like();
        add_sp_grad(&mut g, &current, &anchor, 0.5).unwrap();
        add_l2_grad(&mut g, &current, RoleFilter::Head, 0.5).unwrap();
        assert_eq!(g.tensor("conv.weight").unwrap().data(), &[0.5, 2.0]);
        assert_eq!(g.tensor("head.weight").unwrap().data(), &[3.0]);
    }
}
