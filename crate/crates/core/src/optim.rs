//! SGD with momentum and the warm-up + cosine learning-rate schedule.
#[allow(unused_imports)]
use num_traits::Float;

use crate::error::{contract, Result};
use crate::params::ParameterSet;
use crate::scalar::Scalar;

/// Heavy-ball SGD: `v = momentum * v + g; w -= lr * v`.
#[derive(Debug, Clone)]
pub struct SgdMomentum<T: Scalar = f32> {
    pub momentum: f64,
    velocity: Option<ParameterSet<T>>,
}

impl<T: Scalar> SgdMomentum<T> {
    pub fn new(momentum: f64) -> Self {
        Self { momentum, velocity: None }
    }

    /// Applies one update to the parameters accepted by `trainable`; the
    /// rest are left untouched and accumulate no velocity.
    pub fn step(
        &mut self,
        params: &mut ParameterSet<T>,
        grads: &ParameterSet<T>,
        learning_rate: f64,
        trainable: impl Fn(&str) -> bool,
    ) -> Result<()> {
        if !(learning_rate.is_finite() && learning_rate >= 0.0) {
            return Err(contract!("learning rate must be nonnegative, got {}", learning_rate));
        }
        params.check_aligned(grads)?;
        let velocity = self.velocity.get_or_insert_with(|| params.zeros_like());
        velocity.check_aligned(params)?;
        let mu = T::from_f64(self.momentum);
        let lr = T::from_f64(learning_rate);
        for (((name, p), (_, g)), (_, v)) in params.iter_mut().zip(grads.iter()).zip(velocity.iter_mut()) {
            if !trainable(name) {
                continue;
            }
            for ((w, &gv), vv) in p.tensor.data_mut().iter_mut().zip(g.tensor.data()).zip(v.tensor.data_mut()) {
                *vv = mu * *vv + gv;
                *w = *w - lr * *vv;
            }
        }
        Ok(())
    }
}

/// Linear warm-up from `base_lr / warmup_multiplier` to `base_lr` over
/// `warmup_epochs`, then cosine annealing to zero at `total_epochs`
/// (or constant `base_lr` when annealing is off).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct WarmupCosine {
    pub base_lr: f64,
    pub warmup_multiplier: f64,
    pub warmup_epochs: f64,
    pub total_epochs: f64,
    pub cosine: bool,
}

impl WarmupCosine {
    pub fn lr_at(&self, epoch: f64) -> f64 {
        let e = epoch.clamp(0.0, self.total_epochs);
        if self.warmup_epochs > 0.0 && e < self.warmup_epochs {
            let start = self.base_lr / self.warmup_multiplier.max(1.0);
            return start + (self.base_lr - start) * e / self.warmup_epochs;
        }
        if !self.cosine {
            return self.base_lr;
        }
        let span = self.total_epochs - self.warmup_epochs;
        if span <= 0.0 {
            return self.base_lr;
        }
        let progress = (e - self.warmup_epochs) / span;
        0.5 * self.base_lr * (1.0 + (core::f64::consts::PI * progress).cos())
    }
}
