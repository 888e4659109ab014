use proptest::prelude::*;
use rand::Rng as _;
use tgd_core::augment::{
    apply_pipeline, cut_box_at, horizontal_flip, intra_class_cutmix, jpeg_round_trip, AugmentationConfig, CutmixKind,
};
use tgd_core::rng::{Rng, StreamKey};
use tgd_core::tensor::LabeledBatch;
use tgd_core::Tensor;

fn random_batch(rng: &mut Rng, m: usize, c: usize, h: usize, w: usize) -> LabeledBatch {
    let data = (0..m * c * h * w).map(|_| rng.random::<f32>()).collect();
    let labels = (0..m).map(|_| rng.random_range(0..2u8)).collect();
    LabeledBatch::new(Tensor::from_vec(&[m, c, h, w], data).unwrap(), labels).unwrap()
}

fn psnr(a: &[f32], b: &[f32]) -> f64 {
    let mse = a.iter().zip(b).map(|(x, y)| ((x - y) as f64).powi(2)).sum::<f64>() / a.len() as f64;
    if mse == 0.0 {
        f64::INFINITY
    } else {
        10.0 * (1.0 / mse).log10()
    }
}

#[test]
fn intra_class_cutmix_copies_donor_boxes_and_keeps_labels() {
    let mut rng = StreamKey::new(31).rng();
    let mut fired = 0;
    for _ in 0..200 {
        let m = rng.random_range(2..12);
        let (c, h, w) = (rng.random_range(1..4), rng.random_range(1..10), rng.random_range(1..10));
        let batch = random_batch(&mut rng, m, c, h, w);
        let (out, o) = intra_class_cutmix(&batch, 0.7, &mut rng);
        assert_eq!(out.labels, batch.labels);
        let Some(cut) = o.cut else {
            assert_eq!(out, batch);
            continue;
        };
        fired += 1;
        let same: Vec<usize> = (0..m).filter(|&i| batch.labels[o.donors[i]] == batch.labels[i]).collect();
        assert_eq!(o.mixed, same);
        for i in 0..m {
            let donor = batch.image(o.donors[i]);
            let (src, dst) = (batch.image(i), out.image(i));
            for ch in 0..c {
                for y in 0..h {
                    for x in 0..w {
                        let k = (ch * h + y) * w + x;
                        let expect = if same.contains(&i) && cut.contains(x, y) { donor[k] } else { src[k] };
                        assert_eq!(dst[k].to_bits(), expect.to_bits());
                    }
                }
            }
        }
    }
    assert!(fired > 100, "{fired}");
}

#[test]
fn cutmix_gate_frequency_matches_probability() {
    let p = 0.35;
    let mut rng = StreamKey::new(32).rng();
    let batch = random_batch(&mut rng, 2, 1, 2, 2);
    let draws = 10_000;
    let fired = (0..draws).filter(|_| intra_class_cutmix(&batch, p, &mut rng).1.triggered).count();
    let sigma = (draws as f64 * p * (1.0 - p)).sqrt();
    assert!((fired as f64 - draws as f64 * p).abs() <= 3.0 * sigma, "{fired}");
}

#[test]
fn jpeg_at_full_quality_is_near_lossless_on_smooth_images() {
    let (h, w) = (32, 48);
    let mut data = Vec::new();
    for ch in 0..3 {
        for y in 0..h {
            for x in 0..w {
                data.push(((x + y + 7 * ch) as f32 / (h + w + 14) as f32).clamp(0.0, 1.0));
            }
        }
    }
    let img = Tensor::from_vec(&[3, h, w], data).unwrap();
    let once = jpeg_round_trip(&img, 100).unwrap();
    let p1 = psnr(img.data(), once.data());
    assert!(p1 > 40.0, "{p1}");
    for q in [30, 75, 100] {
        let a = jpeg_round_trip(&img, q).unwrap();
        let b = jpeg_round_trip(&a, q).unwrap();
        let (first, second) = (psnr(img.data(), a.data()), psnr(a.data(), b.data()));
        assert!(second >= first, "quality {q}: {first} then {second}");
    }
}

#[test]
fn jpeg_keeps_flat_images_flat() {
    // Below quality 25 the standard DC quantizer step exceeds 32 and a flat
    // block can move by more than two levels.
    for q in 25..=100 {
        for (c, value) in [(3, 0.2f32), (1, 0.73), (3, 1.0), (2, 0.0)] {
            let img = Tensor::from_vec(&[c, 16, 24], vec![value; c * 16 * 24]).unwrap();
            let out = jpeg_round_trip(&img, q).unwrap();
            let worst = out.data().iter().map(|v| (v - value).abs()).fold(0.0f32, f32::max);
            assert!(worst <= 2.0 / 255.0 + 1e-6, "quality {q}, value {value}: {worst}");
        }
    }
}

fn config_strategy() -> impl Strategy<Value = AugmentationConfig> {
    (0.0..=1.0f64, 0.0..=1.0f64, 0.0..=1.0f64, 0.0..=1.0f64, any::<u64>(), any::<bool>()).prop_map(
        |(c, j, b, f, seed, inter)| AugmentationConfig {
            p_cutmix: c,
            p_jpeg: j,
            p_blur: b,
            p_flip: f,
            cutmix_kind: if inter { CutmixKind::InterClass } else { CutmixKind::IntraClass },
            rng_seed: seed,
            ..AugmentationConfig::default()
        },
    )
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn pipeline_preserves_labels_and_pixel_range(cfg in config_strategy(), seed in any::<u64>(), m in 1usize..6) {
        let mut rng = StreamKey::new(seed).rng();
        let batch = random_batch(&mut rng, m, 3, 8, 8);
        let out = apply_pipeline(&batch, &cfg, cfg.step_key(seed % 1000)).unwrap();
        prop_assert_eq!(&out.batch.labels, &batch.labels);
        prop_assert!(out.batch.images.data().iter().all(|v| (0.0..=1.0).contains(v)));
        prop_assert!(out.targets.iter().all(|t| (0.0..=1.0).contains(t)));
        if cfg.cutmix_kind == CutmixKind::IntraClass {
            prop_assert_eq!(out.targets, batch.targets());
        }
        let again = apply_pipeline(&batch, &cfg, cfg.step_key(seed % 1000)).unwrap();
        prop_assert_eq!(again.batch, out.batch);
    }

    #[test]
    fn flip_is_an_involution(seed in any::<u64>(), m in 1usize..3, c in 1usize..4, h in 1usize..6, w in 1usize..7) {
        let mut rng = StreamKey::new(seed).rng();
        let img = random_batch(&mut rng, m, c, h, w).images;
        let once = horizontal_flip(&img).unwrap();
        prop_assert_eq!(horizontal_flip(&once).unwrap(), img.clone());
        let mut a: Vec<u32> = img.data().iter().map(|v| v.to_bits()).collect();
        let mut b: Vec<u32> = once.data().iter().map(|v| v.to_bits()).collect();
        a.sort_unstable();
        b.sort_unstable();
        prop_assert_eq!(a, b);
    }

    #[test]
    fn cut_boxes_stay_inside_and_never_exceed_the_area(
        w in 1usize..200, h in 1usize..200, lambda in 0.0..=1.0f64, fx in 0.0..=1.0f64, fy in 0.0..=1.0f64,
    ) {
        let b = cut_box_at(w, h, lambda, fx * w as f64, fy * h as f64);
        prop_assert!(b.x1 <= b.x2 && b.x2 <= w);
        prop_assert!(b.y1 <= b.y2 && b.y2 <= h);
        prop_assert!(b.area() as f64 <= (1.0 - lambda) * (w * h) as f64 + 1e-9);
    }
}
