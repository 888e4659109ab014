
use proptest::prelude::*;
use tempfile::tempdir;
use tgd::config::RunConfig;
use tgd::dataset::{load_dataset, save_dataset, Origin};
use tgd::digest::digest_of;
use tgd::report::{load_report, read_scores, save_report, write_scores};
use tgd::tgd_core::data::{generate_synthetic, split_dataset, ArtifactKind, SplitPlan, SyntheticSpec};
use tgd::tgd_core::eval::{EvalReport, GammaSummary};
use tgd::Error;

fn cell() -> impl Strategy<Value = Option<f64>> {
    prop::option::of(prop_oneof![0.0..=1.0f64, any::<f64>().prop_filter("finite", |v| v.is_finite())])
}

fn report_strategy() -> impl Strategy<Value = EvalReport> {
    (
        (cell(), cell(), cell(), cell(), cell()),
        prop::option::of((1usize..10_000, any::<f64>(), any::<f64>(), any::<f64>())),
        prop::collection::btree_map("[a-z]{1,8}", "[0-9a-f]{64}", 0..3),
        prop::collection::btree_map("[a-z]{1,8}", 0u64..(1 << 53), 0..3),
    )
        .prop_filter("finite gamma", |(_, g, _, _)| {
            g.is_none_or(|(_, a, b, c)| a.is_finite() && b.is_finite() && c.is_finite())
        })
        .prop_map(|((sb, sa, tb, ta, fd), g, digests, seeds)| EvalReport {
            source_before: sb,
            source_after: sa,
            target_before: tb,
            target_after: ta,
            forgetting_delta: fd,
            gamma: g.map(|(count, min, max, mean)| GammaSummary {
                count,
                min,
                max,
                mean,
                trace_path: Some("metrics.ndjson".into()),
            }),
            config_digests: digests,
            seeds,
        })
}

proptest! {
    #[test]
    fn reports_round_trip_exactly(report in report_strategy()) {
        let dir = tempdir().unwrap();
        let path = dir.path().join("report.json");
        save_report(&path, &report).unwrap();
        let back = load_report(&path).unwrap();
        prop_assert_eq!(&back, &report);
        for (a, b) in [(back.source_after, report.source_after), (back.forgetting_delta, report.forgetting_delta)] {
            prop_assert_eq!(a.map(f64::to_bits), b.map(f64::to_bits));
        }
    }

    #[test]
    fn score_dumps_round_trip_bitwise(scores in prop::collection::vec(0.0..=1.0f32, 0..50)) {
        let dir = tempdir().unwrap();
        let path = dir.path().join("scores.tsv");
        let ids: Vec<String> = (0..scores.len()).map(|i| format!("img-{i}")).collect();
        write_scores(&path, &ids, &scores).unwrap();
        let (rid, rs) = read_scores(&path).unwrap();
        prop_assert_eq!(rid, ids);
        let a: Vec<u32> = rs.iter().map(|v| v.to_bits()).collect();
        let b: Vec<u32> = scores.iter().map(|v| v.to_bits()).collect();
        prop_assert_eq!(a, b);
    }
}

#[test]
fn score_ids_with_tabs_are_refused() {
    let dir = tempdir().unwrap();
    let err = write_scores(&dir.path().join("s.tsv"), &["a\tb".into()], &[0.5]).unwrap_err();
    assert!(matches!(err, Error::Data(_)));
}

#[test]
fn datasets_round_trip_bitwise() {
    let spec = SyntheticSpec {
        n_per_class: 10,
        image_shape: [3, 8, 8],
        artifact_kind: ArtifactKind::BlurResidual,
        artifact_strength: 0.7,
        seed: 4,
    };
    let data = generate_synthetic(&spec).unwrap();
    let manifest = split_dataset(&data, &SplitPlan::new(0.5, 0.2, 0.3), "synthetic", 9).unwrap();
    let origin = Origin::Synthetic { spec: spec.clone(), spec_digest: digest_of(&spec).unwrap() };
    let dir = tempdir().unwrap();
    let doc = save_dataset(dir.path(), &data, manifest.clone(), origin).unwrap();
    let stored = load_dataset(dir.path()).unwrap();
    assert_eq!(stored.document, doc);
    assert_eq!(stored.document.manifest, manifest);
    let bits = |d: &[f32]| d.iter().map(|v| v.to_bits()).collect::<Vec<_>>();
    assert_eq!(bits(stored.dataset.images.data()), bits(data.images.data()));
    assert_eq!(stored.dataset.labels, data.labels);

    let path = dir.path().join(tgd::dataset::IMAGES_FILE);
    let mut bytes = std::fs::read(&path).unwrap();
    bytes[7] ^= 0x40;
    std::fs::write(&path, bytes).unwrap();
    assert!(matches!(load_dataset(dir.path()), Err(Error::HashMismatch { .. })));
}

#[test]
fn resolved_config_replays_from_its_frozen_text() {
    let cfg = RunConfig::from_toml_str("seed = 11\n[transfer]\niterations = 40\n").unwrap().resolved().unwrap();
    let frozen = cfg.to_toml_string().unwrap();
    let again = RunConfig::from_toml_str(&frozen).unwrap().resolved().unwrap();
    assert_eq!(again, cfg);
    assert_eq!(again.digest().unwrap(), cfg.digest().unwrap());
    assert_ne!(cfg.pretrain.rng_seed, cfg.transfer.rng_seed);
    assert!(cfg.transfer.rng_seed < 1 << 53);
}

#[test]
fn seed_changes_every_derived_seed() {
    let a = RunConfig { seed: 1, ..RunConfig::default() }.resolved().unwrap();
    let b = RunConfig { seed: 2, ..RunConfig::default() }.resolved().unwrap();
    assert_ne!(a.pretrain.rng_seed, b.pretrain.rng_seed);
    assert_ne!(a.augmentation.transfer.rng_seed, b.augmentation.transfer.rng_seed);
    assert_ne!(a.digest().unwrap(), b.digest().unwrap());
}

#[test]
fn bad_configs_are_config_errors() {
    for text in [
        "seeed = 1\n",
        "[transfer]\nfeedback_cycle = 0\n",
        "[transfer]\ns = 5.0\n",
        "[model]\ngn_groups = 3\n",
        "[data.source]\nsynthetic = { n_per_class = 4, artifact_strength = 0.0 }\n",
        "[data.target.splits]\ntrain = 0.9\ntest = 0.5\n",
    ] {
        let err = RunConfig::from_toml_str(text).and_then(|c| c.resolved()).unwrap_err();
        assert_eq!(err.exit_code(), 2, "{text}: {err}");
    }
}
