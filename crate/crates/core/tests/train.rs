use proptest::prelude::*;
use tgd_core::augment::AugmentationConfig;
use tgd_core::data::{generate_synthetic, ArtifactKind, Dataset, SyntheticSpec};
use tgd_core::model::{partition_params, ModelSpec, StageSpec, HEAD_BIAS};
use tgd_core::optim::SgdMomentum;
use tgd_core::rng::StreamKey;
use tgd_core::train::{
    baseline_trainable, compute_gamma, run_pretrain, run_transfer, teacher_evaluate, PretrainConfig, RunHooks,
    SelfTrainState, TransferConfig, TransferMode,
};
use tgd_core::ParameterSet;

fn tiny_spec() -> ModelSpec {
    ModelSpec {
        input_shape: [3, 8, 8],
        stem_width: 4,
        stages: vec![StageSpec { width: 4, blocks: 1, stride: 1 }, StageSpec { width: 8, blocks: 1, stride: 2 }],
        gn_groups: 2,
        ..ModelSpec::default()
    }
}

fn tiny_data(kind: ArtifactKind, seed: u64) -> Dataset {
    generate_synthetic(&SyntheticSpec {
        n_per_class: 12,
        image_shape: [3, 8, 8],
        artifact_kind: kind,
        artifact_strength: 1.0,
        seed,
    })
    .unwrap()
}

fn tiny_config() -> TransferConfig {
    let mut cfg = TransferConfig { iterations: 7, batch_size: 8, feedback_cycle: 3, rng_seed: 5, ..TransferConfig::default() };
    cfg.baseline.epochs = 2;
    cfg.baseline.learning_rate = 0.05;
    cfg
}

fn teacher(spec: &ModelSpec) -> ParameterSet<f32> {
    spec.init_params(&mut StreamKey::new(1).rng()).unwrap()
}

proptest! {
    #[test]
    fn gamma_is_bounded_and_decreasing(loss in 0.0..50.0f64, extra in 0.0..5.0f64, s in 0.1..=2.0f64) {
        let g = compute_gamma(loss, s);
        prop_assert!(g > 0.0 && g <= s / 2.0);
        prop_assert!((g - s / (1.0 + loss.exp())).abs() < 1e-15);
        prop_assert!(compute_gamma(loss + extra, s) <= g);
    }
}

#[test]
fn teacher_is_frozen_between_feedback_syncs() {
    let spec = tiny_spec();
    let data = tiny_data(ArtifactKind::BlurResidual, 2);
    let aug = AugmentationConfig::transfer();
    let mut state = SelfTrainState::new(teacher(&spec), 3, 1.0).unwrap();
    let mut opt = SgdMomentum::new(0.1);
    assert!(!state.feedback_sync());
    let mut anchor = state.teacher.clone();
    for step in 0..7u64 {
        let batch = data.batch(&[(step as usize) % 24, (step as usize + 5) % 24, 3, 4]).unwrap();
        let m = state.transfer_step(&spec, &batch, &aug, &mut opt, 0.05, 9).unwrap();
        assert!(state.teacher.bitwise_eq(&anchor), "teacher moved inside a cycle at step {step}");
        assert!(m.gamma.unwrap() > 0.0 && m.gamma.unwrap() <= 0.5);
        let synced = state.feedback_sync();
        assert_eq!(synced, (step + 1) % 3 == 0);
        if synced {
            assert!(state.teacher.bitwise_eq(&state.student));
            anchor = state.teacher.clone();
        } else {
            assert!(!state.teacher.bitwise_eq(&state.student));
        }
    }
    assert_eq!(state.gamma_trace.len(), 7);
}

#[test]
fn runs_replay_bitwise() {
    let spec = tiny_spec();
    let data = tiny_data(ArtifactKind::BlurResidual, 2);
    let t = teacher(&spec);
    for mode in TransferMode::ALL {
        let run = || {
            run_transfer(&spec, &t, &data, &tiny_config(), &AugmentationConfig::transfer(), mode, RunHooks::default())
                .unwrap()
        };
        let (a, b) = (run(), run());
        assert!(a.student.bitwise_eq(&b.student), "{}", mode.as_str());
        assert_eq!(a.gamma_trace, b.gamma_trace);
        assert_eq!(a.student_losses, b.student_losses);
    }
}

#[test]
fn zero_iterations_and_zero_rate_leave_the_student_alone() {
    let spec = tiny_spec();
    let data = tiny_data(ArtifactKind::BlurResidual, 2);
    let t = teacher(&spec);
    let aug = AugmentationConfig::transfer();
    let none = TransferConfig { iterations: 0, ..tiny_config() };
    let out = run_transfer(&spec, &t, &data, &none, &aug, TransferMode::Tgd, RunHooks::default()).unwrap();
    assert!(out.student.bitwise_eq(&t));
    assert!(out.gamma_trace.is_empty());

    let frozen = TransferConfig { learning_rate: 0.0, ..tiny_config() };
    let out = run_transfer(&spec, &t, &data, &frozen, &aug, TransferMode::Tgd, RunHooks::default()).unwrap();
    assert!(out.student.bitwise_eq(&t));
    assert_eq!(out.gamma_trace.len(), 7);
}

#[test]
fn naive_mode_only_moves_the_top_stage_and_head() {
    let spec = tiny_spec();
    let data = tiny_data(ArtifactKind::BlurResidual, 2);
    let t = teacher(&spec);
    let cfg = tiny_config();
    let out =
        run_transfer(&spec, &t, &data, &cfg, &AugmentationConfig::transfer(), TransferMode::Naive, RunHooks::default())
            .unwrap();
    assert_eq!(out.student_losses.len() as u64, cfg.steps_for(TransferMode::Naive, data.len()));
    let roles = partition_params(&t, &spec).unwrap();
    let mut moved = 0;
    for (name, p) in t.iter() {
        let after = out.student.tensor(name).unwrap();
        let same = p.tensor.data().iter().zip(after.data()).all(|(a, b)| a.to_bits() == b.to_bits());
        if baseline_trainable(&spec, name, roles[name]) {
            moved += usize::from(!same);
        } else {
            assert!(same, "{name} is frozen in the baseline");
        }
    }
    assert!(moved > 0);
}

#[test]
fn pretraining_is_seeded_and_epoch_zero_is_initialization() {
    let spec = tiny_spec();
    let data = tiny_data(ArtifactKind::CheckerboardUpsample, 3);
    let aug = AugmentationConfig::pretrain();
    let cfg = PretrainConfig { epochs: 2, batch_size: 8, warmup_epochs: 1, rng_seed: 4, ..PretrainConfig::default() };
    let a = run_pretrain(&spec, &data, &cfg, &aug, RunHooks::default()).unwrap();
    let b = run_pretrain(&spec, &data, &cfg, &aug, RunHooks::default()).unwrap();
    assert!(a.params.bitwise_eq(&b.params));
    assert_eq!(a.losses.len(), 6);

    let idle = PretrainConfig { epochs: 0, warmup_epochs: 0, ..cfg };
    let x = run_pretrain(&spec, &data, &idle, &aug, RunHooks::default()).unwrap();
    let y = run_pretrain(&spec, &data, &PretrainConfig { rng_seed: 40, ..idle }, &aug, RunHooks::default()).unwrap();
    assert!(x.losses.is_empty());
    assert!(!x.params.bitwise_eq(&y.params));
}

#[test]
fn confident_teacher_gives_half_s() {
    let spec = tiny_spec();
    let data = tiny_data(ArtifactKind::BlurResidual, 2);
    let mut t = teacher(&spec);
    t.tensor_mut(HEAD_BIAS).unwrap().data_mut()[0] = 40.0;
    let batch = data.batch(&[1, 3, 5]).unwrap();
    assert!(batch.labels.iter().all(|&l| l == 1));
    let loss = teacher_evaluate(&t, &spec, &batch.images, &batch.targets(), StreamKey::new(2)).unwrap();
    assert!(loss < 1e-6, "{loss}");
    assert!((compute_gamma(loss, 1.0) - 0.5).abs() < 1e-6);

    t.tensor_mut(HEAD_BIAS).unwrap().data_mut()[0] = -40.0;
    let loss = teacher_evaluate(&t, &spec, &batch.images, &batch.targets(), StreamKey::new(2)).unwrap();
    assert!(compute_gamma(loss, 1.0) < 1e-6, "{loss}");
}

#[test]
fn invalid_settings_are_config_errors() {
    let spec = tiny_spec();
    let t = teacher(&spec);
    assert!(SelfTrainState::new(t.clone(), 0, 1.0).is_err());
    assert!(SelfTrainState::new(t, 3, -1.0).is_err());
    let bad = TransferConfig { batch_size: 0, ..tiny_config() };
    assert!(matches!(bad.validate(), Err(tgd_core::Error::Config(_))));
}
