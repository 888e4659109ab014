use proptest::prelude::*;
use tgd_core::data::{generate_synthetic, ArtifactKind, SyntheticSpec};
use tgd_core::eval::{auroc, forgetting_report, EvalSplit, GammaSummary};
use tgd_core::model::{ModelSpec, StageSpec};
use tgd_core::rng::StreamKey;
use tgd_core::Error;

/// Pairwise definition: P(positive scores above negative), ties count half.
fn pairwise_auroc(scores: &[f64], labels: &[u8]) -> f64 {
    let mut wins = 0.0;
    let mut pairs = 0.0;
    for (i, &si) in scores.iter().enumerate() {
        for (j, &sj) in scores.iter().enumerate() {
            if labels[i] == 1 && labels[j] == 0 {
                pairs += 1.0;
                wins += if si > sj { 1.0 } else if si == sj { 0.5 } else { 0.0 };
            }
        }
    }
    wins / pairs
}

fn scored_labels() -> impl Strategy<Value = (Vec<f64>, Vec<u8>)> {
    (2usize..120).prop_flat_map(|n| {
        // Few distinct values so ties are common.
        let scores = prop::collection::vec((0u8..12).prop_map(|k| k as f64 / 11.0), n);
        let labels = prop::collection::vec(0u8..2, n)
            .prop_filter("both classes", |l| l.contains(&0) && l.contains(&1));
        (scores, labels)
    })
}

proptest! {
    #[test]
    fn auroc_matches_pairwise_count((scores, labels) in scored_labels()) {
        let fast = auroc(&scores, &labels).unwrap();
        prop_assert!((fast - pairwise_auroc(&scores, &labels)).abs() < 1e-12);
        prop_assert!((0.0..=1.0).contains(&fast));
    }

    #[test]
    fn auroc_ignores_monotone_transforms((scores, labels) in scored_labels(), a in 0.1..10.0f64, b in -5.0..5.0f64) {
        let base = auroc(&scores, &labels).unwrap();
        let mapped: Vec<f64> = scores.iter().map(|s| (a * s + b).exp()).collect();
        prop_assert!((auroc(&mapped, &labels).unwrap() - base).abs() < 1e-12);
        let flipped: Vec<u8> = labels.iter().map(|l| 1 - l).collect();
        prop_assert!((auroc(&scores, &flipped).unwrap() - (1.0 - base)).abs() < 1e-12);
    }
}

#[test]
fn auroc_reference_values() {
    assert_eq!(auroc(&[0.1f32, 0.4, 0.35, 0.8], &[0, 0, 1, 1]).unwrap(), 0.75);
    assert_eq!(auroc(&[0.5f32; 6], &[0, 1, 0, 1, 1, 0]).unwrap(), 0.5);
    assert_eq!(auroc(&[0.9f64, 0.1], &[1, 0]).unwrap(), 1.0);
}

#[test]
fn auroc_rejects_bad_input() {
    assert!(matches!(auroc(&[0.1f32, 0.2], &[1, 1]), Err(Error::UndefinedMetric(_))));
    assert!(auroc(&[0.1f32], &[1, 0]).is_err());
    assert!(auroc(&[f32::NAN, 0.2], &[1, 0]).is_err());
    assert!(auroc(&[0.1f32, 0.2], &[2, 0]).is_err());
}

#[test]
fn same_checkpoint_reports_no_forgetting() {
    let spec = ModelSpec {
        input_shape: [3, 8, 8],
        stem_width: 4,
        stages: vec![StageSpec { width: 4, blocks: 1, stride: 2 }],
        gn_groups: 2,
        ..ModelSpec::default()
    };
    let params = spec.init_params(&mut StreamKey::new(1).rng()).unwrap();
    let make = |kind, seed| {
        generate_synthetic(&SyntheticSpec {
            n_per_class: 20,
            image_shape: [3, 8, 8],
            artifact_kind: kind,
            artifact_strength: 1.0,
            seed,
        })
        .unwrap()
    };
    let (src, tgt) = (make(ArtifactKind::CheckerboardUpsample, 2), make(ArtifactKind::BlurResidual, 3));
    let report = forgetting_report(
        &params,
        &params,
        &spec,
        Some(EvalSplit { images: &src.images, labels: &src.labels }),
        Some(EvalSplit { images: &tgt.images, labels: &tgt.labels }),
    )
    .unwrap();
    assert_eq!(report.forgetting_delta, Some(0.0));
    assert_eq!(report.target_before, report.target_after);
    assert!(report.target_after.is_some());

    let partial = forgetting_report(&params, &params, &spec, None, Some(EvalSplit { images: &tgt.images, labels: &tgt.labels })).unwrap();
    assert_eq!(partial.source_before, None);
    assert_eq!(partial.forgetting_delta, None);
}

#[test]
fn gamma_summary_of_a_trace() {
    let g = GammaSummary::from_values([0.2, 0.1, 0.3], Some("m.ndjson".into())).unwrap();
    assert_eq!((g.count, g.min, g.max), (3, 0.1, 0.3));
    assert!((g.mean - 0.2).abs() < 1e-12);
    assert!(GammaSummary::from_values([], None).is_none());
}
