//! AUROC, forgetting reports and the finite-difference gradient oracle.
use alloc::string::String;
use alloc::vec::Vec;

use crate::error::{contract, Error, Result};
use crate::model::{predict, ModelSpec};
use crate::params::ParameterSet;
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// Area under the ROC curve via the Mann-Whitney rank sum with midranks:
/// the probability that a random positive outscores a random negative,
/// ties counting one half.
pub fn auroc<S: Scalar>(scores: &[S], labels: &[u8]) -> Result<f64> {
    if scores.len() != labels.len() {
        return Err(contract!("{} scores for {} labels", scores.len(), labels.len()));
    }
    if scores.iter().any(|s| s.is_nan()) {
        return Err(contract!("scores contain NaN"));
    }
    if let Some(l) = labels.iter().find(|&&l| l > 1) {
        return Err(contract!("label {} is not binary", l));
    }
    let n_pos = labels.iter().filter(|&&l| l == 1).count();
    let n_neg = labels.len() - n_pos;
    if n_pos == 0 || n_neg == 0 {
        return Err(Error::UndefinedMetric(alloc::format!(
            "AUROC needs both classes ({} positive, {} negative)",
            n_pos, n_neg
        )));
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].partial_cmp(&scores[b]).expect("NaN filtered above"));
    // Sum of doubled midranks keeps everything in integers.
    let mut doubled_rank_sum: u64 = 0;
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && scores[order[j + 1]] == scores[order[i]] {
            j += 1;
        }
        // Ranks i+1 ..= j+1 share the midrank (i + j + 2) / 2.
        let doubled_mid = (i + j + 2) as u64;
        let pos_in_tie = order[i..=j].iter().filter(|&&k| labels[k] == 1).count() as u64;
        doubled_rank_sum += doubled_mid * pos_in_tie;
        i = j + 1;
    }
    let n_pos = n_pos as u64;
    let doubled_u = doubled_rank_sum - n_pos * (n_pos + 1);
    Ok(doubled_u as f64 / (2 * n_pos * n_neg as u64) as f64)
}

/// Range of the self-training gate over a run.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct GammaSummary {
    pub count: usize,
    pub min: f64,
    pub max: f64,
    pub mean: f64,
    pub trace_path: Option<String>,
}

impl GammaSummary {
    pub fn from_values(values: impl IntoIterator<Item = f64>, trace_path: Option<String>) -> Option<Self> {
        let mut count = 0usize;
        let (mut min, mut max, mut sum) = (f64::INFINITY, f64::NEG_INFINITY, 0.0);
        for v in values {
            count += 1;
            min = min.min(v);
            max = max.max(v);
            sum += v;
        }
        (count > 0).then(|| Self { count, min, max, mean: sum / count as f64, trace_path })
    }
}

/// Source/target AUROC before and after transfer. Cells are `None` when
/// the corresponding data was not supplied.
#[derive(Debug, Clone, PartialEq, Default)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct EvalReport {
    pub source_before: Option<f64>,
    pub source_after: Option<f64>,
    pub target_before: Option<f64>,
    pub target_after: Option<f64>,
    /// `source_before - source_after`.
    pub forgetting_delta: Option<f64>,
    pub gamma: Option<GammaSummary>,
    pub config_digests: alloc::collections::BTreeMap<String, String>,
    pub seeds: alloc::collections::BTreeMap<String, u64>,
}

/// Clean predictions and AUROC of `params` on labelled images.
pub fn evaluate_params(
    params: &ParameterSet<f32>,
    spec: &ModelSpec,
    images: &Tensor<f32>,
    labels: &[u8],
) -> Result<(f64, Vec<f32>)> {
    let scores = predict(params, spec, images, 256)?;
    let auc = auroc(&scores, labels)?;
    Ok((auc, scores))
}

/// Labelled evaluation split.
pub struct EvalSplit<'a> {
    pub images: &'a Tensor<f32>,
    pub labels: &'a [u8],
}

/// Fills the four AUROC cells and the forgetting delta.
pub fn forgetting_report(
    before: &ParameterSet<f32>,
    after: &ParameterSet<f32>,
    spec: &ModelSpec,
    source_test: Option<EvalSplit<'_>>,
    target_test: Option<EvalSplit<'_>>,
) -> Result<EvalReport> {
    spec.check_params(before)?;
    spec.check_params(after)?;
    let mut report = EvalReport::default();
    if let Some(s) = source_test {
        report.source_before = Some(evaluate_params(before, spec, s.images, s.labels)?.0);
        report.source_after = Some(evaluate_params(after, spec, s.images, s.labels)?.0);
    }
    if let Some(t) = target_test {
        report.target_before = Some(evaluate_params(before, spec, t.images, t.labels)?.0);
        report.target_after = Some(evaluate_params(after, spec, t.images, t.labels)?.0);
    }
    report.forgetting_delta = match (report.source_before, report.source_after) {
        (Some(b), Some(a)) => Some(b - a),
        _ => None,
    };
    Ok(report)
}

/// Central-difference gradient of `loss_fn` with respect to every scalar.
pub fn numeric_gradient<T: Scalar>(
    mut loss_fn: impl FnMut(&ParameterSet<T>) -> Result<f64>,
    params: &ParameterSet<T>,
    step: f64,
) -> Result<ParameterSet<T>> {
    if !(step > 0.0 && step.is_finite()) {
        return Err(contract!("finite-difference step must be positive, got {}", step));
    }
    let mut grad = params.zeros_like();
    let mut probe = params.clone();
    let names: Vec<String> = params.names().map(String::from).collect();
    for name in &names {
        let len = params.tensor(name)?.len();
        for i in 0..len {
            let original = params.tensor(name)?.data()[i];
            probe.tensor_mut(name)?.data_mut()[i] = T::from_f64(original.as_f64() + step);
            let plus = loss_fn(&probe)?;
            probe.tensor_mut(name)?.data_mut()[i] = T::from_f64(original.as_f64() - step);
            let minus = loss_fn(&probe)?;
            probe.tensor_mut(name)?.data_mut()[i] = original;
            if !(plus.is_finite() && minus.is_finite()) {
                return Err(Error::NonFinite(alloc::format!("loss at `{}`[{}] +/- step", name, i)));
            }
            grad.tensor_mut(name)?.data_mut()[i] = T::from_f64((plus - minus) / (2.0 * step));
        }
    }
    Ok(grad)
}

/// Worst elementwise relative error `|a - n| / max(|a|, |n|, floor)`.
pub fn max_relative_error<T: Scalar>(analytic: &ParameterSet<T>, numeric: &ParameterSet<T>, floor: f64) -> Result<f64> {
    analytic.check_aligned(numeric)?;
    let mut worst = 0.0f64;
    for ((_, a), (_, n)) in analytic.iter().zip(numeric.iter()) {
        for (x, y) in a.tensor.data().iter().zip(n.tensor.data()) {
            let (x, y) = (x.as_f64(), y.as_f64());
            let denom = x.abs().max(y.abs()).max(floor);
            worst = worst.max((x - y).abs() / denom);
        }
    }
    Ok(worst)
}

/// Outcome of [`gradient_check`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GradientCheck {
    /// Coordinates compared against the analytic gradient.
    pub checked: usize,
    /// Coordinates skipped because the loss is not smooth on the probe
    /// interval (a ReLU kink lies within `step` of the point).
    pub nonsmooth: usize,
    /// Worst relative error over the checked coordinates.
    pub worst_relative: f64,
}

/// Central differences at `step` and `step / 10` must agree to this
/// relative tolerance for a coordinate to count as smooth.
pub const SMOOTHNESS_TOLERANCE: f64 = 1e-4;

/// Compares `analytic` with central differences of `loss_fn` at `step`.
/// Relative errors use `max(|a|, |n|, floor)` as denominator.
pub fn gradient_check<T: Scalar>(
    mut loss_fn: impl FnMut(&ParameterSet<T>) -> Result<f64>,
    params: &ParameterSet<T>,
    analytic: &ParameterSet<T>,
    step: f64,
    floor: f64,
) -> Result<GradientCheck> {
    analytic.check_aligned(params)?;
    let coarse = numeric_gradient(&mut loss_fn, params, step)?;
    let fine = numeric_gradient(&mut loss_fn, params, step / 10.0)?;
    let rel = |x: f64, y: f64| (x - y).abs() / x.abs().max(y.abs()).max(floor);
    let mut out = GradientCheck { checked: 0, nonsmooth: 0, worst_relative: 0.0 };
    for (((_, a), (_, n)), (_, f)) in analytic.iter().zip(coarse.iter()).zip(fine.iter()) {
        for ((a, n), f) in a.tensor.data().iter().zip(n.tensor.data()).zip(f.tensor.data()) {
            let (a, n, f) = (a.as_f64(), n.as_f64(), f.as_f64());
            if rel(n, f) > SMOOTHNESS_TOLERANCE {
                out.nonsmooth += 1;
            } else {
                out.checked += 1;
                out.worst_relative = out.worst_relative.max(rel(a, n));
            }
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::params::Role;
    use alloc::vec;

    #[test]
    fn auroc_examples() {
        assert_eq!(auroc(&[0.1f64, 0.2, 0.8, 0.9], &[0, 0, 1, 1]).unwrap(), 1.0);
        assert_eq!(auroc(&[0.5f64; 4], &[0, 1, 0, 1]).unwrap(), 0.5);
        assert_eq!(auroc(&[0.1f64, 0.4, 0.35, 0.8], &[0, 0, 1, 1]).unwrap(), 0.75);
        assert!(matches!(auroc(&[0.1f64, 0.2], &[1, 1]), Err(Error::UndefinedMetric(_))));
    }

    #[test]
    fn label_flip_complements() {
        let s = [0.1f64, 0.4, 0.35, 0.8, 0.05];
        let y = [0u8, 0, 1, 1, 1];
        let flipped: Vec<u8> = y.iter().map(|l| 1 - l).collect();
        assert_eq!(auroc(&s, &y).unwrap() + auroc(&s, &flipped).unwrap(), 1.0);
    }

    #[test]
    fn numeric_gradient_examples() {
        let mut p = ParameterSet::<f64>::new();
        p.insert("w", Role::Feature, Tensor::from_vec(&[2], vec![1.0, 2.0]).unwrap()).unwrap();
        let g = numeric_gradient(|q| crate::loss::l2_norm_squared(q, crate::RoleFilter::All), &p, 1e-4).unwrap();
        let d = g.tensor("w").unwrap().data();
        assert!((d[0] - 2.0).abs() < 1e-6 && (d[1] - 4.0).abs() < 1e-6);
        let g = numeric_gradient(|_| Ok(3.0), &p, 1e-4).unwrap();
        assert!(g.tensor("w").unwrap().data().iter().all(|v| *v == 0.0));
        assert!(numeric_gradient(|_| Ok(f64::NAN), &p, 1e-4).is_err());
    }

    #[test]
    fn gamma_summary() {
        let s = GammaSummary::from_values([0.1, 0.3, 0.2], None).unwrap();
        assert_eq!((s.count, s.min, s.max), (3, 0.1, 0.3));
        assert!((s.mean - 0.2).abs() < 1e-15);
        assert!(GammaSummary::from_values([], None).is_none());
    }
}
