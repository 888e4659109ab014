//! Source pretraining and the teacher/student transfer loop.
use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

#[allow(unused_imports)]
use num_traits::Float;
use rand::seq::SliceRandom;

use crate::augment::{apply_pipeline, AugmentationConfig, CutmixKind};
use crate::data::Dataset;
use crate::error::{contract, Error, Result};
use crate::loss::{
    add_l2_grad, add_sp_grad, binary_cross_entropy, binary_cross_entropy_logit_grad,
    legacy_transfer_loss, pretrain_loss, transfer_loss, RegularizerWeights,
};
use crate::model::{forward, forward_pass, Mode, ModelSpec};
use crate::optim::{SgdMomentum, WarmupCosine};
use crate::params::{ParameterSet, Role, RoleFilter};
use crate::rng::{tag, StreamKey};
use crate::tensor::{LabeledBatch, Tensor};

/// `s * sigmoid(-teacher_loss)`: 0.5 * s for a perfect teacher, towards 0
/// as the teacher's loss grows.
pub fn compute_gamma(teacher_mean_loss: f64, s: f64) -> f64 {
    s / (1.0 + teacher_mean_loss.exp())
}

/// Mean cross-entropy of the noised teacher on an (already augmented) batch.
pub fn teacher_evaluate(
    teacher: &ParameterSet<f32>,
    spec: &ModelSpec,
    images: &Tensor<f32>,
    targets: &[f32],
    noise: StreamKey,
) -> Result<f64> {
    let mut rng = noise.rng();
    let p = forward(teacher, spec, images, Mode::TrainNoised(&mut rng))?;
    binary_cross_entropy(&p, targets)
}

#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct GammaRecord {
    pub iteration: u64,
    pub teacher_loss: f64,
    pub gamma: f64,
}

/// One line of the metrics stream.
#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct StepMetrics {
    pub iteration: u64,
    pub learning_rate: f64,
    pub student_loss: f64,
    pub teacher_loss: Option<f64>,
    pub gamma: Option<f64>,
    pub val_loss: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SelfTrainState {
    pub teacher: ParameterSet<f32>,
    pub student: ParameterSet<f32>,
    pub iteration: u64,
    pub feedback_cycle: u64,
    pub s: f64,
    pub gamma_trace: Vec<GammaRecord>,
}

fn trace_tail(trace: &[GammaRecord]) -> String {
    let tail = &trace[trace.len().saturating_sub(5)..];
    let cells: Vec<String> = tail
        .iter()
        .map(|r| format!("(it {}, loss {:.6}, gamma {:.6})", r.iteration, r.teacher_loss, r.gamma))
        .collect();
    format!("gamma trace tail: [{}]", cells.join(", "))
}

impl SelfTrainState {
    /// Teacher and student both start from `start`.
    pub fn new(start: ParameterSet<f32>, feedback_cycle: u64, s: f64) -> Result<Self> {
        if feedback_cycle == 0 {
            return Err(Error::Config("feedback_cycle must be positive".into()));
        }
        if !(s.is_finite() && s > 0.0) {
            return Err(Error::Config(format!("s must be positive, got {}", s)));
        }
        Ok(Self { teacher: start.clone(), student: start, iteration: 0, feedback_cycle, s, gamma_trace: Vec::new() })
    }

    /// Augment, let the teacher grade the noised batch, derive gamma and take
    /// one SGD step on the gated objective. The teacher is not modified.
    pub fn transfer_step(
        &mut self,
        spec: &ModelSpec,
        raw: &LabeledBatch,
        aug: &AugmentationConfig,
        optimizer: &mut SgdMomentum<f32>,
        learning_rate: f64,
        noise_seed: u64,
    ) -> Result<StepMetrics> {
        self.teacher.check_aligned(&self.student)?;
        let step = self.iteration;
        let noised = apply_pipeline(raw, aug, aug.step_key(step))?;
        let noise_root = StreamKey::new(noise_seed);
        let teacher_loss = teacher_evaluate(
            &self.teacher,
            spec,
            &noised.batch.images,
            &noised.targets,
            noise_root.child(tag::TEACHER_NOISE).child(step),
        )?;
        if !teacher_loss.is_finite() {
            return Err(Error::NonFinite(format!(
                "teacher loss {} at iteration {}; {}",
                teacher_loss,
                step + 1,
                trace_tail(&self.gamma_trace)
            )));
        }
        let gamma = compute_gamma(teacher_loss, self.s);

        let mut rng = noise_root.child(tag::STUDENT_NOISE).child(step).rng();
        let pass = forward_pass(&self.student, spec, &noised.batch.images, Mode::TrainNoised(&mut rng))?;
        let student_loss = transfer_loss(&pass.probabilities, &noised.targets, &self.student, &self.teacher, gamma)?;
        if !student_loss.is_finite() {
            return Err(Error::NonFinite(format!(
                "student loss {} at iteration {}; {}",
                student_loss,
                step + 1,
                trace_tail(&self.gamma_trace)
            )));
        }
        let d_logits = binary_cross_entropy_logit_grad(&pass.probabilities, &noised.targets)?;
        let mut grads = pass.backward(&self.student, &d_logits)?;
        add_sp_grad(&mut grads, &self.student, &self.teacher, gamma)?;
        add_l2_grad(&mut grads, &self.student, RoleFilter::Head, gamma)?;
        optimizer.step(&mut self.student, &grads, learning_rate, |_| true)?;

        self.iteration += 1;
        self.gamma_trace.push(GammaRecord { iteration: self.iteration, teacher_loss, gamma });
        Ok(StepMetrics {
            iteration: self.iteration,
            learning_rate,
            student_loss,
            teacher_loss: Some(teacher_loss),
            gamma: Some(gamma),
            val_loss: None,
        })
    }

    /// Copies the student into the teacher on cycle boundaries. Returns
    /// whether a copy happened.
    pub fn feedback_sync(&mut self) -> bool {
        if self.iteration > 0 && self.iteration % self.feedback_cycle == 0 {
            self.teacher = self.student.clone();
            true
        } else {
            false
        }
    }
}

/// Epoch-style sampler: a fresh seeded permutation per pass over the data,
/// batches taken in order and continued across the epoch boundary.
#[derive(Debug, Clone)]
pub struct EpochSampler {
    n: usize,
    key: StreamKey,
    epoch: u64,
    order: Vec<usize>,
    cursor: usize,
}

impl EpochSampler {
    pub fn new(n: usize, key: StreamKey) -> Result<Self> {
        if n == 0 {
            return Err(contract!("cannot sample from an empty dataset"));
        }
        let mut s = Self { n, key, epoch: 0, order: Vec::new(), cursor: 0 };
        s.reshuffle();
        Ok(s)
    }

    fn reshuffle(&mut self) {
        self.order = (0..self.n).collect();
        self.order.shuffle(&mut self.key.child(self.epoch).rng());
        self.cursor = 0;
    }

    pub fn next_batch(&mut self, size: usize) -> Vec<usize> {
        let mut out = Vec::with_capacity(size);
        while out.len() < size {
            if self.cursor == self.n {
                self.epoch += 1;
                self.reshuffle();
            }
            let take = (size - out.len()).min(self.n - self.cursor);
            out.extend_from_slice(&self.order[self.cursor..self.cursor + take]);
            self.cursor += take;
        }
        out
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "kebab-case"))]
pub enum TransferMode {
    /// Gated starting-point regularization with teacher feedback.
    Tgd,
    /// Fine-tune only the top stage and head with weight decay.
    Naive,
    /// Fixed alpha/beta starting-point regularization, no teacher.
    LegacySp,
    /// As `Tgd` with the data pipeline switched off.
    NoAug,
    /// As `Tgd` with label-mixing Cutmix.
    InterCutmix,
}

impl TransferMode {
    pub const ALL: [TransferMode; 5] =
        [TransferMode::Tgd, TransferMode::Naive, TransferMode::LegacySp, TransferMode::NoAug, TransferMode::InterCutmix];

    pub fn as_str(self) -> &'static str {
        match self {
            TransferMode::Tgd => "tgd",
            TransferMode::Naive => "naive",
            TransferMode::LegacySp => "legacy-sp",
            TransferMode::NoAug => "no-aug",
            TransferMode::InterCutmix => "inter-cutmix",
        }
    }
}

impl core::str::FromStr for TransferMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|m| m.as_str() == s)
            .ok_or_else(|| Error::Config(format!("unknown transfer mode `{}`", s)))
    }
}

/// Fine-tuning baseline settings. Its run length is given in epochs over the
/// transfer set.
#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(default))]
pub struct BaselineConfig {
    pub epochs: u64,
    pub learning_rate: f64,
    pub momentum: f64,
    pub weight_decay: f64,
}

impl Default for BaselineConfig {
    fn default() -> Self {
        Self { epochs: 500, learning_rate: 0.001, momentum: 0.1, weight_decay: 1e-4 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(default))]
pub struct TransferConfig {
    pub iterations: u64,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub momentum: f64,
    pub feedback_cycle: u64,
    pub s: f64,
    /// Fixed coefficients of the legacy objective.
    pub alpha: f64,
    pub beta: f64,
    pub baseline: BaselineConfig,
    pub rng_seed: u64,
}

impl Default for TransferConfig {
    fn default() -> Self {
        let reg = RegularizerWeights::default();
        Self {
            iterations: 1000,
            batch_size: 200,
            learning_rate: 0.01,
            momentum: 0.1,
            feedback_cycle: 200,
            s: reg.s,
            alpha: reg.alpha,
            beta: reg.beta,
            baseline: BaselineConfig::default(),
            rng_seed: 0,
        }
    }
}

impl TransferConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 || self.feedback_cycle == 0 {
            return Err(Error::Config("batch_size and feedback_cycle must be positive".into()));
        }
        for (name, v) in [
            ("learning_rate", self.learning_rate),
            ("momentum", self.momentum),
            ("baseline.learning_rate", self.baseline.learning_rate),
            ("baseline.momentum", self.baseline.momentum),
            ("baseline.weight_decay", self.baseline.weight_decay),
        ] {
            if !(v.is_finite() && v >= 0.0) {
                return Err(Error::Config(format!("{} must be nonnegative, got {}", name, v)));
            }
        }
        RegularizerWeights { lambda_pretrain: 0.0, alpha: self.alpha, beta: self.beta, s: self.s }
            .validate(false)
            .map_err(|e| Error::Config(format!("{}", e)))
    }

    /// Number of optimizer steps `mode` takes on `n` transfer samples.
    pub fn steps_for(&self, mode: TransferMode, n: usize) -> u64 {
        match mode {
            TransferMode::Naive => self.baseline.epochs * n.div_ceil(self.batch_size) as u64,
            _ => self.iterations,
        }
    }
}

/// Extra per-run options not part of the recorded configuration.
pub struct RunHooks<'a> {
    /// Fixed batch scored (clean forward) after every step.
    pub validation: Option<&'a LabeledBatch>,
    pub observer: Option<&'a mut dyn FnMut(&StepMetrics)>,
}

impl Default for RunHooks<'_> {
    fn default() -> Self {
        Self { validation: None, observer: None }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TransferOutcome {
    pub student: ParameterSet<f32>,
    /// Teacher at the end of the run (the anchor for the legacy mode).
    pub teacher: ParameterSet<f32>,
    pub gamma_trace: Vec<GammaRecord>,
    pub student_losses: Vec<f64>,
    pub val_losses: Vec<f64>,
}

fn validation_loss(params: &ParameterSet<f32>, spec: &ModelSpec, val: &LabeledBatch) -> Result<f64> {
    let p = forward(params, spec, &val.images, Mode::EvalClean)?;
    binary_cross_entropy(&p, &val.targets())
}

/// Transfers a source checkpoint to `target` under `mode`.
pub fn run_transfer(
    spec: &ModelSpec,
    teacher: &ParameterSet<f32>,
    target: &Dataset,
    config: &TransferConfig,
    aug: &AugmentationConfig,
    mode: TransferMode,
    mut hooks: RunHooks<'_>,
) -> Result<TransferOutcome> {
    spec.validate()?;
    spec.check_params(teacher)?;
    config.validate()?;
    aug.validate()?;
    if target.is_empty() {
        return Err(contract!("target dataset is empty"));
    }
    let aug = match mode {
        TransferMode::NoAug => AugmentationConfig { rng_seed: aug.rng_seed, ..AugmentationConfig::disabled() },
        TransferMode::InterCutmix => AugmentationConfig { cutmix_kind: CutmixKind::InterClass, ..aug.clone() },
        _ => AugmentationConfig { cutmix_kind: CutmixKind::IntraClass, ..aug.clone() },
    };
    let root = StreamKey::new(config.rng_seed);
    let mut sampler = EpochSampler::new(target.len(), root.child(tag::SAMPLER))?;
    let steps = config.steps_for(mode, target.len());
    let mut state = SelfTrainState::new(teacher.clone(), config.feedback_cycle, config.s)?;
    let momentum = if mode == TransferMode::Naive { config.baseline.momentum } else { config.momentum };
    let mut optimizer = SgdMomentum::new(momentum);
    let mut student_losses = Vec::with_capacity(steps as usize);
    let mut val_losses = Vec::new();

    for _ in 0..steps {
        let raw = target.batch(&sampler.next_batch(config.batch_size))?;
        let mut metrics = match mode {
            TransferMode::Tgd | TransferMode::NoAug | TransferMode::InterCutmix => {
                let m = state.transfer_step(spec, &raw, &aug, &mut optimizer, config.learning_rate, config.rng_seed)?;
                state.feedback_sync();
                m
            }
            TransferMode::LegacySp | TransferMode::Naive => {
                let step = state.iteration;
                let noised = apply_pipeline(&raw, &aug, aug.step_key(step))?;
                let mut rng = root.child(tag::STUDENT_NOISE).child(step).rng();
                let student = &mut state.student;
                let pass = forward_pass(student, spec, &noised.batch.images, Mode::TrainNoised(&mut rng))?;
                let d_logits = binary_cross_entropy_logit_grad(&pass.probabilities, &noised.targets)?;
                let mut grads = pass.backward(student, &d_logits)?;
                let (loss, lr) = if mode == TransferMode::LegacySp {
                    let loss = legacy_transfer_loss(
                        &pass.probabilities,
                        &noised.targets,
                        student,
                        &state.teacher,
                        config.alpha,
                        config.beta,
                    )?;
                    add_sp_grad(&mut grads, student, &state.teacher, config.alpha)?;
                    add_l2_grad(&mut grads, student, RoleFilter::Head, config.beta)?;
                    optimizer.step(student, &grads, config.learning_rate, |_| true)?;
                    (loss, config.learning_rate)
                } else {
                    let wd = config.baseline.weight_decay;
                    let decay = baseline_decay(spec, student);
                    let loss = binary_cross_entropy(&pass.probabilities, &noised.targets)? + wd * decay;
                    add_l2_grad(&mut grads, student, RoleFilter::All, wd)?;
                    let roles = crate::model::partition_params(student, spec)?;
                    optimizer.step(student, &grads, config.baseline.learning_rate, |name| {
                        roles.get(name).is_some_and(|&r| baseline_trainable(spec, name, r))
                    })?;
                    (loss, config.baseline.learning_rate)
                };
                if !loss.is_finite() {
                    return Err(Error::NonFinite(format!("student loss {} at iteration {}", loss, step + 1)));
                }
                state.iteration += 1;
                StepMetrics {
                    iteration: state.iteration,
                    learning_rate: lr,
                    student_loss: loss,
                    teacher_loss: None,
                    gamma: None,
                    val_loss: None,
                }
            }
        };
        student_losses.push(metrics.student_loss);
        if let Some(val) = hooks.validation {
            let v = validation_loss(&state.student, spec, val)?;
            val_losses.push(v);
            metrics.val_loss = Some(v);
        }
        if let Some(obs) = hooks.observer.as_mut() {
            obs(&metrics);
        }
    }
    Ok(TransferOutcome {
        student: state.student,
        teacher: state.teacher,
        gamma_trace: state.gamma_trace,
        student_losses,
        val_losses,
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(default))]
pub struct PretrainConfig {
    pub epochs: u64,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub momentum: f64,
    pub warmup_multiplier: f64,
    pub warmup_epochs: u64,
    pub cosine_annealing: bool,
    pub lambda_pretrain: f64,
    pub rng_seed: u64,
}

impl Default for PretrainConfig {
    fn default() -> Self {
        Self {
            epochs: 300,
            batch_size: 512,
            learning_rate: 0.04,
            momentum: 0.9,
            warmup_multiplier: 4.0,
            warmup_epochs: 20,
            cosine_annealing: true,
            lambda_pretrain: RegularizerWeights::default().lambda_pretrain,
            rng_seed: 0,
        }
    }
}

impl PretrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            return Err(Error::Config("batch_size must be positive".into()));
        }
        if self.warmup_epochs > self.epochs {
            return Err(Error::Config(format!(
                "warmup_epochs ({}) exceeds epochs ({})",
                self.warmup_epochs, self.epochs
            )));
        }
        for (name, v) in [
            ("learning_rate", self.learning_rate),
            ("momentum", self.momentum),
            ("lambda_pretrain", self.lambda_pretrain),
        ] {
            if !(v.is_finite() && v >= 0.0) {
                return Err(Error::Config(format!("{} must be nonnegative, got {}", name, v)));
            }
        }
        if !(self.warmup_multiplier.is_finite() && self.warmup_multiplier >= 1.0) {
            return Err(Error::Config(format!("warmup_multiplier must be at least 1, got {}", self.warmup_multiplier)));
        }
        Ok(())
    }

    pub fn schedule(&self) -> WarmupCosine {
        WarmupCosine {
            base_lr: self.learning_rate,
            warmup_multiplier: self.warmup_multiplier,
            warmup_epochs: self.warmup_epochs as f64,
            total_epochs: self.epochs as f64,
            cosine: self.cosine_annealing,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PretrainOutcome {
    pub params: ParameterSet<f32>,
    pub losses: Vec<f64>,
}

/// Trains a fresh network on the source task.
pub fn run_pretrain(
    spec: &ModelSpec,
    source: &Dataset,
    config: &PretrainConfig,
    aug: &AugmentationConfig,
    mut hooks: RunHooks<'_>,
) -> Result<PretrainOutcome> {
    spec.validate()?;
    config.validate()?;
    aug.validate()?;
    let counts = source.class_counts();
    if counts[0] == 0 || counts[1] == 0 {
        return Err(Error::Config(format!(
            "pretraining needs both classes, got {} real / {} generated",
            counts[0], counts[1]
        )));
    }
    let root = StreamKey::new(config.rng_seed);
    let mut params = spec.init_params(&mut root.child(tag::INIT).rng())?;
    let mut sampler = EpochSampler::new(source.len(), root.child(tag::SAMPLER))?;
    let per_epoch = source.len().div_ceil(config.batch_size) as u64;
    let total = config.epochs * per_epoch;
    let schedule = config.schedule();
    let mut optimizer = SgdMomentum::new(config.momentum);
    let mut losses = Vec::with_capacity(total as usize);
    for step in 0..total {
        let lr = schedule.lr_at(step as f64 / per_epoch as f64);
        let raw = source.batch(&sampler.next_batch(config.batch_size))?;
        let noised = apply_pipeline(&raw, aug, aug.step_key(step))?;
        let mut rng = root.child(tag::STUDENT_NOISE).child(step).rng();
        let pass = forward_pass(&params, spec, &noised.batch.images, Mode::TrainNoised(&mut rng))?;
        let loss = pretrain_loss(&pass.probabilities, &noised.targets, &params, config.lambda_pretrain)?;
        if !loss.is_finite() {
            return Err(Error::NonFinite(format!("pretraining loss {} at step {}", loss, step + 1)));
        }
        let d_logits = binary_cross_entropy_logit_grad(&pass.probabilities, &noised.targets)?;
        let mut grads = pass.backward(&params, &d_logits)?;
        add_l2_grad(&mut grads, &params, RoleFilter::All, config.lambda_pretrain)?;
        optimizer.step(&mut params, &grads, lr, |_| true)?;
        losses.push(loss);
        let mut metrics = StepMetrics {
            iteration: step + 1,
            learning_rate: lr,
            student_loss: loss,
            teacher_loss: None,
            gamma: None,
            val_loss: None,
        };
        if let Some(val) = hooks.validation {
            metrics.val_loss = Some(validation_loss(&params, spec, val)?);
        }
        if let Some(obs) = hooks.observer.as_mut() {
            obs(&metrics);
        }
    }
    Ok(PretrainOutcome { params, losses })
}

/// Whether `name` is trained by the fine-tuning baseline.
pub fn baseline_trainable(spec: &ModelSpec, name: &str, role: Role) -> bool {
    role == Role::Head || name.starts_with(spec.top_stage_prefix().as_str())
}

/// Sum of squares over the parameters the baseline trains.
pub fn baseline_decay(spec: &ModelSpec, params: &ParameterSet<f32>) -> f64 {
    params
        .iter()
        .filter(|(n, p)| baseline_trainable(spec, n, p.role))
        .map(|(_, p)| p.tensor.data().iter().map(|&v| (v as f64) * (v as f64)).sum::<f64>())
        .sum()
}
