use proptest::prelude::*;
use rustfft::num_complex::Complex;
use rustfft::FftPlanner;
use tgd_core::augment::AugmentationConfig;
use tgd_core::data::{generate_synthetic, split_dataset, ArtifactKind, Dataset, Split, SplitPlan, SyntheticSpec};
use tgd_core::eval::evaluate_params;
use tgd_core::model::{ModelSpec, StageSpec};
use tgd_core::train::{run_pretrain, PretrainConfig, RunHooks};

fn spec(kind: ArtifactKind, strength: f64, n: usize, seed: u64) -> SyntheticSpec {
    SyntheticSpec { n_per_class: n, image_shape: [3, 32, 32], artifact_kind: kind, artifact_strength: strength, seed }
}

/// Mean energy per image in the top octave: every 2-D frequency with
/// max(|fx|, |fy|) >= 1/4 cycle per pixel.
fn top_octave_energy(d: &Dataset, label: u8) -> f64 {
    let [c, h, w] = d.image_shape();
    let mut planner = FftPlanner::<f64>::new();
    let (row_fft, col_fft) = (planner.plan_fft_forward(w), planner.plan_fft_forward(h));
    let mut total = 0.0;
    let mut count = 0;
    for (i, img) in d.images.data().chunks(c * h * w).enumerate() {
        if d.labels[i] != label {
            continue;
        }
        count += 1;
        for plane in img.chunks(h * w) {
            let mut buf: Vec<Complex<f64>> = plane.iter().map(|&v| Complex::new(v as f64, 0.0)).collect();
            for row in buf.chunks_mut(w) {
                row_fft.process(row);
            }
            let mut col = vec![Complex::new(0.0, 0.0); h];
            for x in 0..w {
                for y in 0..h {
                    col[y] = buf[y * w + x];
                }
                col_fft.process(&mut col);
                for y in 0..h {
                    buf[y * w + x] = col[y];
                }
            }
            let freq = |k: usize, n: usize| k.min(n - k) as f64 / n as f64;
            for y in 0..h {
                for x in 0..w {
                    if freq(x, w).max(freq(y, h)) >= 0.25 {
                        total += buf[y * w + x].norm_sqr();
                    }
                }
            }
        }
    }
    total / count as f64
}

#[test]
fn checkerboard_adds_top_octave_energy() {
    let d = generate_synthetic(&spec(ArtifactKind::CheckerboardUpsample, 1.0, 200, 1)).unwrap();
    let (real, fake) = (top_octave_energy(&d, 0), top_octave_energy(&d, 1));
    assert!(fake >= 3.0 * real, "real {real}, fake {fake}");
}

#[test]
fn artifact_energy_grows_with_strength() {
    let mut last = 0.0;
    for s in [0.1, 0.25, 0.5, 1.0] {
        let d = generate_synthetic(&spec(ArtifactKind::CheckerboardUpsample, s, 100, 2)).unwrap();
        let e = top_octave_energy(&d, 1);
        assert!(e > last, "strength {s}: {e} after {last}");
        last = e;
    }
}

#[test]
fn generation_is_deterministic_per_sample() {
    let a = generate_synthetic(&spec(ArtifactKind::BlurResidual, 1.0, 6, 9)).unwrap();
    let b = generate_synthetic(&spec(ArtifactKind::BlurResidual, 1.0, 10, 9)).unwrap();
    let n = 3 * 32 * 32;
    assert_eq!(a.images.data(), &b.images.data()[..12 * n]);
    assert_eq!(a.ids, b.ids[..12]);
    assert_ne!(a, generate_synthetic(&spec(ArtifactKind::BlurResidual, 1.0, 6, 10)).unwrap());
}

fn quick_auroc(kind: ArtifactKind, strength: f64) -> f64 {
    let model = ModelSpec {
        input_shape: [3, 32, 32],
        stages: vec![
            StageSpec { width: 8, blocks: 1, stride: 2 },
            StageSpec { width: 16, blocks: 1, stride: 2 },
            StageSpec { width: 16, blocks: 1, stride: 2 },
        ],
        ..ModelSpec::default()
    };
    let train = generate_synthetic(&spec(kind, strength, 400, 21)).unwrap();
    let test = generate_synthetic(&spec(kind, strength, 600, 22)).unwrap();
    let cfg = PretrainConfig { epochs: 10, batch_size: 32, warmup_epochs: 1, ..PretrainConfig::default() };
    let params = run_pretrain(&model, &train, &cfg, &AugmentationConfig::disabled(), RunHooks::default()).unwrap().params;
    evaluate_params(&params, &model, &test.images, &test.labels).unwrap().0
}

#[test]
fn vanishing_strength_leaves_nothing_to_learn() {
    let faint = quick_auroc(ArtifactKind::CheckerboardUpsample, 1e-6);
    assert!((faint - 0.5).abs() <= 0.05, "{faint}");
    let full = quick_auroc(ArtifactKind::CheckerboardUpsample, 1.0);
    assert!(full > 0.9, "{full}");
}

fn labels_dataset(labels: &[u8]) -> Dataset {
    let n = labels.len();
    let images = tgd_core::Tensor::from_vec(&[n, 1, 1, 1], vec![0.5; n]).unwrap();
    Dataset::new(images, labels.to_vec(), (0..n).map(|i| format!("s{i}")).collect()).unwrap()
}

fn plan_strategy() -> impl Strategy<Value = SplitPlan> {
    (0.0..=1.0f64, 0.0..=1.0f64, 0.0..=1.0f64, prop::option::of(0usize..300)).prop_map(|(a, b, c, t)| {
        let sum = (a + b + c).max(1.0);
        SplitPlan { train: a / sum, val: b / sum, test: c / sum, transfer: t }
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn splits_are_disjoint_stratified_and_seeded(
        labels in prop::collection::vec(0u8..2, 2..400),
        plan in plan_strategy(),
        seed in any::<u64>(),
    ) {
        let d = labels_dataset(&labels);
        let m = split_dataset(&d, &plan, "test", seed).unwrap();
        prop_assert_eq!(m.splits.len(), labels.len());
        let positives = labels.iter().filter(|&&l| l == 1).count() as f64 / labels.len() as f64;
        let mut sizes = Vec::new();
        for s in [Split::Train, Split::Val, Split::Test, Split::Transfer] {
            let idx = m.indices(s);
            let pos = idx.iter().filter(|&&i| labels[i] == 1).count() as f64;
            prop_assert!((pos - positives * idx.len() as f64).abs() <= 1.0 + 1e-9, "{:?}: {} of {}", s, pos, idx.len());
            sizes.push(idx.len());
        }
        if let Some(t) = plan.transfer {
            prop_assert!(sizes[3] <= t);
        }
        let other = split_dataset(&d, &plan, "test", seed.wrapping_add(1)).unwrap();
        let other_sizes: Vec<usize> = [Split::Train, Split::Val, Split::Test, Split::Transfer]
            .into_iter()
            .map(|s| other.indices(s).len())
            .collect();
        prop_assert_eq!(sizes, other_sizes);
        prop_assert_eq!(split_dataset(&d, &plan, "test", seed).unwrap(), m);
    }
}

#[test]
fn seed_changes_the_assignment() {
    let labels: Vec<u8> = (0..200).map(|i| (i % 2) as u8).collect();
    let d = labels_dataset(&labels);
    let plan = SplitPlan::new(0.5, 0.25, 0.25);
    let a = split_dataset(&d, &plan, "x", 1).unwrap();
    let b = split_dataset(&d, &plan, "x", 2).unwrap();
    assert_ne!(a.splits, b.splits);
}

#[test]
fn default_transfer_plan_takes_every_train_sample_when_short() {
    let labels: Vec<u8> = (0..100).map(|i| (i % 2) as u8).collect();
    let d = labels_dataset(&labels);
    let m = split_dataset(&d, &SplitPlan::new(0.6, 0.0, 0.4).with_transfer(2000), "x", 3).unwrap();
    assert_eq!(m.indices(Split::Transfer).len(), 60);
    assert_eq!(m.indices(Split::Test).len(), 40);
}
