//! Run configuration files (TOML).
//!
//! The top-level `seed` is the only seed a user sets: resolution derives the
//! seeds of every stage from it and writes them into the resolved config, so
//! a frozen copy replays exactly.
use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use tgd_core::augment::AugmentationConfig;
use tgd_core::data::{ArtifactKind, SplitPlan, SyntheticSpec, DEFAULT_TRANSFER_SIZE};
use tgd_core::model::ModelSpec;
use tgd_core::rng::StreamKey;
use tgd_core::train::{PretrainConfig, TransferConfig};

use crate::digest::digest_of;
use crate::error::{io_err, Error, Result};
use crate::folder::default_label_map;

/// Environment variable that relocates every relative output path.
pub const OUTPUT_ROOT_ENV: &str = "TGD_OUTPUT_ROOT";
pub const FROZEN_CONFIG_FILE: &str = "run_config.toml";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AugmentationStages {
    pub pretrain: AugmentationConfig,
    pub transfer: AugmentationConfig,
}

impl Default for AugmentationStages {
    fn default() -> Self {
        Self { pretrain: AugmentationConfig::pretrain(), transfer: AugmentationConfig::transfer() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FolderSource {
    pub path: PathBuf,
    #[serde(default = "default_label_map")]
    pub label_map: BTreeMap<String, u8>,
}

/// Exactly one of `synthetic` and `folder` must be set.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DataSource {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub synthetic: Option<SyntheticSpec>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub folder: Option<FolderSource>,
    #[serde(default)]
    pub splits: SplitPlan,
}

impl DataSource {
    pub fn validate(&self, name: &str) -> Result<()> {
        if self.synthetic.is_some() == self.folder.is_some() {
            return Err(Error::Config(format!("data.{name} needs exactly one of `synthetic` or `folder`")));
        }
        if let Some(s) = &self.synthetic {
            s.validate().map_err(|e| Error::Config(format!("data.{name}.synthetic: {e}")))?;
        }
        self.splits.validate().map_err(|e| Error::Config(format!("data.{name}.splits: {e}")))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataConfig {
    pub source: DataSource,
    pub target: DataSource,
}

impl Default for DataConfig {
    fn default() -> Self {
        // 4000 train / 1000 test source images; 2000 transfer / 1000 test
        // target images.
        Self {
            source: DataSource {
                synthetic: Some(SyntheticSpec {
                    n_per_class: 2500,
                    artifact_kind: ArtifactKind::CheckerboardUpsample,
                    ..SyntheticSpec::default()
                }),
                folder: None,
                splits: SplitPlan::new(0.8, 0.0, 0.2),
            },
            target: DataSource {
                synthetic: Some(SyntheticSpec {
                    n_per_class: 1500,
                    artifact_kind: ArtifactKind::BlurResidual,
                    ..SyntheticSpec::default()
                }),
                folder: None,
                splits: SplitPlan::new(2.0 / 3.0, 0.0, 1.0 / 3.0).with_transfer(DEFAULT_TRANSFER_SIZE),
            },
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OutputConfig {
    pub dir: PathBuf,
}

impl Default for OutputConfig {
    fn default() -> Self {
        Self { dir: PathBuf::from("runs") }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub seed: u64,
    pub model: ModelSpec,
    pub pretrain: PretrainConfig,
    pub transfer: TransferConfig,
    pub augmentation: AugmentationStages,
    pub data: DataConfig,
    pub output: OutputConfig,
}

/// Seeds stay below 2^53 so they survive TOML integers and JSON readers
/// that parse numbers as doubles.
fn derived_seed(seed: u64, purpose: u64) -> u64 {
    StreamKey::new(seed).child(purpose).value() & ((1 << 53) - 1)
}

impl RunConfig {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| match e.kind() {
            std::io::ErrorKind::NotFound => Error::Config(format!("config file {} not found", path.display())),
            _ => io_err(path)(e),
        })?;
        toml::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))
    }

    pub fn to_toml_string(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(format!("cannot write config: {e}")))
    }

    /// Seed for `purpose`, derived from the top-level seed.
    pub fn derived_seed(&self, purpose: u64) -> u64 {
        derived_seed(self.seed, purpose)
    }

    /// Fills every derived seed from `seed` and validates the result.
    pub fn resolved(&self) -> Result<Self> {
        let mut c = self.clone();
        let s = c.seed;
        c.pretrain.rng_seed = derived_seed(s, 1);
        c.transfer.rng_seed = derived_seed(s, 2);
        c.augmentation.pretrain.rng_seed = derived_seed(s, 3);
        c.augmentation.transfer.rng_seed = derived_seed(s, 4);
        if let Some(spec) = c.data.source.synthetic.as_mut() {
            spec.seed = derived_seed(s, 5);
        }
        if let Some(spec) = c.data.target.synthetic.as_mut() {
            spec.seed = derived_seed(s, 6);
        }
        c.validate()?;
        Ok(c)
    }

    pub fn validate(&self) -> Result<()> {
        let cfg = |e: tgd_core::Error| Error::Config(e.to_string());
        self.model.validate().map_err(cfg)?;
        self.pretrain.validate().map_err(cfg)?;
        self.transfer.validate().map_err(cfg)?;
        self.augmentation.pretrain.validate().map_err(cfg)?;
        self.augmentation.transfer.validate().map_err(cfg)?;
        self.data.source.validate("source")?;
        self.data.target.validate("target")?;
        Ok(())
    }

    /// Digest of the canonical JSON form; formatting and key order in the
    /// TOML file do not matter.
    pub fn digest(&self) -> Result<String> {
        digest_of(self)
    }

    /// Output root: `$TGD_OUTPUT_ROOT` when set, else `output.dir`.
    pub fn output_root(&self) -> PathBuf {
        std::env::var_os(OUTPUT_ROOT_ENV).map(PathBuf::from).unwrap_or_else(|| self.output.dir.clone())
    }

    /// Relative `out` paths are placed under the output root.
    pub fn resolve_out(&self, out: Option<&Path>, default_name: &str) -> PathBuf {
        match out {
            Some(p) if p.is_absolute() => p.to_path_buf(),
            Some(p) => self.output_root().join(p),
            None => self.output_root().join(default_name),
        }
    }
}
