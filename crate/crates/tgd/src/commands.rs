//! The four subcommands as library functions.
//!
//! Every command writes into one run directory: its outputs, a frozen copy
//! of the resolved config (`run_config.toml`), the inputs it read
//! (`invocation.json`) and a digest of every output file (`digests.json`).
use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use serde_json::json;
use tgd_core::data::{split_dataset, Dataset, Split};
use tgd_core::eval::{auroc, EvalReport, GammaSummary};
use tgd_core::model::{predict, ModelSpec};
use tgd_core::params::ParameterSet;
use tgd_core::train::{run_pretrain, run_transfer, RunHooks, StepMetrics, TransferMode};

use crate::checkpoint::{load_checkpoint, save_checkpoint, Provenance};
use crate::cli::{EvaluateArgs, GendataArgs, PretrainArgs, TransferArgs};
use crate::config::{DataSource, RunConfig, FROZEN_CONFIG_FILE, OUTPUT_ROOT_ENV};
use crate::dataset::{load_dataset, save_dataset, Origin};
use crate::digest::{digest_of, directory_digests};
use crate::error::{io_err, Error, Result};
use crate::folder::load_image_folder;
use crate::metrics::MetricsWriter;
use crate::report::{save_report, write_scores};

pub const DIGESTS_FILE: &str = "digests.json";
pub const INVOCATION_FILE: &str = "invocation.json";
pub const METRICS_FILE: &str = "metrics.ndjson";
pub const REPORT_FILE: &str = "report.json";
pub const CHECKPOINT_DIR: &str = "checkpoint";

/// Batch size used for clean scoring.
const EVAL_CHUNK: usize = 256;

#[derive(Debug, Clone, PartialEq)]
pub struct RunSummary {
    pub out_dir: PathBuf,
    pub digests: BTreeMap<String, String>,
    pub warnings: Vec<String>,
}

fn load_config(path: &Path, seed: Option<u64>, tweak: impl FnOnce(&mut RunConfig)) -> Result<RunConfig> {
    let mut cfg = RunConfig::load(path)?;
    if let Some(s) = seed {
        cfg.seed = s;
    }
    tweak(&mut cfg);
    cfg.resolved()
}

fn prepare_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(io_err(dir))
}

fn finish_run(dir: &Path, config: Option<&RunConfig>, invocation: serde_json::Value, warnings: Vec<String>) -> Result<RunSummary> {
    if let Some(cfg) = config {
        let path = dir.join(FROZEN_CONFIG_FILE);
        fs::write(&path, cfg.to_toml_string()?).map_err(io_err(&path))?;
    }
    let path = dir.join(INVOCATION_FILE);
    fs::write(&path, serde_json::to_string_pretty(&invocation).expect("json value") + "\n").map_err(io_err(&path))?;
    let digests = directory_digests(dir, &[DIGESTS_FILE, INVOCATION_FILE])?;
    let path = dir.join(DIGESTS_FILE);
    fs::write(&path, serde_json::to_string_pretty(&digests).expect("string map") + "\n").map_err(io_err(&path))?;
    Ok(RunSummary { out_dir: dir.to_path_buf(), digests, warnings })
}

fn build_source(src: &DataSource, input_shape: [usize; 3], warnings: &mut Vec<String>) -> Result<(Dataset, Origin, String)> {
    if let Some(spec) = &src.synthetic {
        let dataset = tgd_core::data::generate_synthetic(spec)?;
        let spec_digest = digest_of(spec)?;
        let desc = format!("synthetic:{spec_digest}");
        Ok((dataset, Origin::Synthetic { spec: spec.clone(), spec_digest }, desc))
    } else {
        let folder = src.folder.as_ref().expect("validated: one source kind");
        let load = load_image_folder(&folder.path, &folder.label_map, input_shape)?;
        for (file, reason) in &load.skipped {
            warnings.push(format!("skipped {file}: {reason}"));
        }
        let desc = format!("folder:{}", folder.path.display());
        Ok((load.dataset, Origin::Folder(load.manifest), desc))
    }
}

pub fn cmd_gendata(args: &GendataArgs) -> Result<RunSummary> {
    let cfg = load_config(&args.config, args.seed, |c| {
        if let Some(s) = args.strength {
            for src in [&mut c.data.source, &mut c.data.target] {
                if let Some(spec) = src.synthetic.as_mut() {
                    spec.artifact_strength = s;
                }
            }
        }
    })?;
    let out = cfg.resolve_out(args.out.as_deref(), "data");
    prepare_dir(&out)?;
    let mut warnings = Vec::new();
    let mut digests = BTreeMap::new();
    for (name, src, purpose) in [("source", &cfg.data.source, 7), ("target", &cfg.data.target, 8)] {
        let (dataset, origin, desc) = build_source(src, cfg.model.input_shape, &mut warnings)?;
        let manifest = split_dataset(&dataset, &src.splits, &desc, cfg.derived_seed(purpose))?;
        let doc = save_dataset(&out.join(name), &dataset, manifest, origin)?;
        digests.insert(name, doc.digest()?);
    }
    let invocation = json!({ "command": "gendata", "dataset_digests": digests, "config_digest": cfg.digest()? });
    finish_run(&out, Some(&cfg), invocation, warnings)
}

fn check_shape(spec: &ModelSpec, data: &Dataset, what: &str) -> Result<()> {
    if data.image_shape() != spec.input_shape {
        return Err(Error::Config(format!(
            "{what} images are {:?} but the model expects {:?}",
            data.image_shape(),
            spec.input_shape
        )));
    }
    Ok(())
}

/// Clean scores and AUROC; the AUROC is `None` when only one class is present.
fn score(params: &ParameterSet<f32>, spec: &ModelSpec, data: &Dataset) -> Result<(Vec<f32>, Option<f64>)> {
    let scores = predict(params, spec, &data.images, EVAL_CHUNK)?;
    let auc = match auroc(&scores, &data.labels) {
        Ok(a) => Some(a),
        Err(tgd_core::Error::UndefinedMetric(_)) => None,
        Err(e) => return Err(e.into()),
    };
    Ok((scores, auc))
}

/// Streams metrics to disk from inside a training loop, keeping the first
/// write error for later.
struct Sink {
    writer: Option<MetricsWriter>,
    stage: &'static str,
    error: Option<Error>,
}

impl Sink {
    fn new(path: &Path, stage: &'static str) -> Result<Self> {
        Ok(Self { writer: Some(MetricsWriter::create(path)?), stage, error: None })
    }

    fn observe(&mut self, m: &StepMetrics) {
        if self.error.is_some() {
            return;
        }
        if let Some(w) = self.writer.as_mut() {
            if let Err(e) = w.write(self.stage, m) {
                self.error = Some(e);
            }
        }
    }

    fn finish(mut self) -> Result<()> {
        if let Some(e) = self.error.take() {
            return Err(e);
        }
        self.writer.take().map_or(Ok(()), MetricsWriter::finish)
    }
}

pub fn cmd_pretrain(args: &PretrainArgs) -> Result<RunSummary> {
    let cfg = load_config(&args.config, args.seed, |c| {
        if let Some(e) = args.epochs {
            c.pretrain.epochs = e;
            c.pretrain.warmup_epochs = c.pretrain.warmup_epochs.min(e);
        }
    })?;
    let stored = load_dataset(&args.data)?;
    let train = stored.split_or_all(&[Split::Train])?;
    check_shape(&cfg.model, &train, "source")?;
    let out = cfg.resolve_out(args.out.as_deref(), "pretrain");
    prepare_dir(&out)?;

    let mut sink = Sink::new(&out.join(METRICS_FILE), "pretrain")?;
    let mut observe = |m: &StepMetrics| sink.observe(m);
    let outcome = run_pretrain(
        &cfg.model,
        &train,
        &cfg.pretrain,
        &cfg.augmentation.pretrain,
        RunHooks { validation: None, observer: Some(&mut observe) },
    )?;
    sink.finish()?;

    let provenance = Provenance {
        config_digest: Some(cfg.digest()?),
        seed: Some(cfg.pretrain.rng_seed),
        steps: outcome.losses.len() as u64,
        ..Provenance::new("pretrain")
    };
    let manifest = save_checkpoint(&out.join(CHECKPOINT_DIR), &outcome.params, &cfg.model, provenance)?;

    let mut warnings = Vec::new();
    let test = stored.split(Split::Test)?;
    let mut source_auroc = None;
    if test.is_empty() {
        warnings.push("source dataset has no test split; AUROC not reported".into());
    } else {
        let (scores, auc) = score(&outcome.params, &cfg.model, &test)?;
        write_scores(&out.join("scores_source_test.tsv"), &test.ids, &scores)?;
        source_auroc = auc;
    }
    let report = json!({
        "source_test_auroc": source_auroc,
        "steps": outcome.losses.len(),
        "final_loss": outcome.losses.last(),
        "params_digest": manifest.params_digest,
    });
    let path = out.join(REPORT_FILE);
    fs::write(&path, serde_json::to_string_pretty(&report).expect("json") + "\n").map_err(io_err(&path))?;
    let invocation = json!({
        "command": "pretrain",
        "data": args.data,
        "data_digest": stored.document.digest()?,
        "config_digest": cfg.digest()?,
    });
    finish_run(&out, Some(&cfg), invocation, warnings)
}

pub fn cmd_transfer(args: &TransferArgs) -> Result<RunSummary> {
    let cfg = load_config(&args.config, args.seed, |c| {
        if let Some(n) = args.iterations {
            c.transfer.iterations = n;
        }
    })?;
    let mode = TransferMode::from(args.mode);
    let teacher = load_checkpoint(&args.teacher, Some(&cfg.model))?;
    let stored = load_dataset(&args.data)?;
    let transfer_set = stored.split_or_all(&[Split::Transfer, Split::Train])?;
    check_shape(&cfg.model, &transfer_set, "target")?;
    let out = cfg.resolve_out(args.out.as_deref(), &format!("transfer-{}", mode.as_str()));
    prepare_dir(&out)?;

    let mut sink = Sink::new(&out.join(METRICS_FILE), mode.as_str())?;
    let mut observe = |m: &StepMetrics| sink.observe(m);
    let outcome = run_transfer(
        &cfg.model,
        &teacher.params,
        &transfer_set,
        &cfg.transfer,
        &cfg.augmentation.transfer,
        mode,
        RunHooks { validation: None, observer: Some(&mut observe) },
    )?;
    sink.finish()?;

    let config_digest = cfg.digest()?;
    let provenance = Provenance {
        mode: Some(mode.as_str().into()),
        config_digest: Some(config_digest.clone()),
        seed: Some(cfg.transfer.rng_seed),
        steps: outcome.student_losses.len() as u64,
        parent: Some(teacher.manifest.params_digest.clone()),
        ..Provenance::new("transfer")
    };
    save_checkpoint(&out.join(CHECKPOINT_DIR), &outcome.student, &cfg.model, provenance)?;

    let mut warnings = Vec::new();
    let mut report = EvalReport {
        gamma: GammaSummary::from_values(outcome.gamma_trace.iter().map(|r| r.gamma), Some(METRICS_FILE.into())),
        ..EvalReport::default()
    };
    let test = stored.split(Split::Test)?;
    if test.is_empty() {
        warnings.push("target dataset has no test split; target AUROC not reported".into());
    } else {
        let (before, auc_before) = score(&teacher.params, &cfg.model, &test)?;
        let (after, auc_after) = score(&outcome.student, &cfg.model, &test)?;
        write_scores(&out.join("scores_target_before.tsv"), &test.ids, &before)?;
        write_scores(&out.join("scores_target_after.tsv"), &test.ids, &after)?;
        report.target_before = auc_before;
        report.target_after = auc_after;
    }
    report.config_digests.insert("run".into(), config_digest.clone());
    report.seeds.insert("transfer".into(), cfg.transfer.rng_seed);
    report.seeds.insert("augmentation".into(), cfg.augmentation.transfer.rng_seed);
    save_report(&out.join(REPORT_FILE), &report)?;
    let invocation = json!({
        "command": "transfer",
        "mode": mode.as_str(),
        "teacher": args.teacher,
        "teacher_digest": teacher.manifest.params_digest,
        "data": args.data,
        "data_digest": stored.document.digest()?,
        "config_digest": config_digest,
    });
    finish_run(&out, Some(&cfg), invocation, warnings)
}

fn default_root() -> PathBuf {
    std::env::var_os(OUTPUT_ROOT_ENV).map(PathBuf::from).unwrap_or_else(|| PathBuf::from("runs"))
}

pub fn cmd_evaluate(args: &EvaluateArgs) -> Result<RunSummary> {
    let cfg = args.config.as_deref().map(RunConfig::load).transpose()?.map(|c| c.resolved()).transpose()?;
    let after = load_checkpoint(&args.ckpt, None)?;
    let before = args.ckpt_before.as_deref().map(|p| load_checkpoint(p, Some(&after.spec))).transpose()?;
    let out = match (&cfg, args.out.as_deref()) {
        (Some(c), out) => c.resolve_out(out, "evaluate"),
        (None, Some(p)) if p.is_absolute() => p.to_path_buf(),
        (None, Some(p)) => default_root().join(p),
        (None, None) => default_root().join("evaluate"),
    };
    prepare_dir(&out)?;
    let spec = &after.spec;

    let mut warnings = Vec::new();
    let mut report = EvalReport::default();
    let mut inputs = serde_json::Map::new();
    for (which, path) in [("source", &args.source_data), ("target", &args.target_data)] {
        let Some(path) = path else {
            warnings.push(format!("no {which} data given; {which} cells left empty"));
            continue;
        };
        let stored = load_dataset(path)?;
        let data = stored.split_or_all(&[Split::Test])?;
        check_shape(spec, &data, which)?;
        inputs.insert(format!("{which}_data"), json!(path));
        inputs.insert(format!("{which}_digest"), json!(stored.document.digest()?));
        let (scores, auc_after) = score(&after.params, spec, &data)?;
        write_scores(&out.join(format!("scores_{which}_after.tsv")), &data.ids, &scores)?;
        let auc_before = match &before {
            Some(b) => {
                let (scores, auc) = score(&b.params, spec, &data)?;
                write_scores(&out.join(format!("scores_{which}_before.tsv")), &data.ids, &scores)?;
                auc
            }
            None => None,
        };
        if auc_after.is_none() {
            warnings.push(format!("{which} data has a single class; AUROC undefined"));
        }
        if which == "source" {
            report.source_after = auc_after;
            report.source_before = auc_before;
        } else {
            report.target_after = auc_after;
            report.target_before = auc_before;
        }
    }
    report.forgetting_delta = match (report.source_before, report.source_after) {
        (Some(b), Some(a)) => Some(b - a),
        _ => None,
    };
    if let Some(c) = &cfg {
        report.config_digests.insert("run".into(), c.digest()?);
        report.seeds.insert("run".into(), c.seed);
    }
    report.config_digests.insert("ckpt".into(), after.manifest.params_digest.clone());
    if let Some(b) = &before {
        report.config_digests.insert("ckpt_before".into(), b.manifest.params_digest.clone());
    }
    save_report(&out.join(REPORT_FILE), &report)?;
    inputs.insert("command".into(), json!("evaluate"));
    inputs.insert("ckpt".into(), json!(args.ckpt));
    inputs.insert("ckpt_before".into(), json!(args.ckpt_before));
    finish_run(&out, cfg.as_ref(), serde_json::Value::Object(inputs), warnings)
}
