//! Checkpoint directories: a JSON manifest plus one raw little-endian
//! `float32` file per parameter, row-major.
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use tgd_core::model::ModelSpec;
use tgd_core::params::{ParameterSet, Role};
use tgd_core::tensor::Tensor;

use crate::digest::{digest_of, sha256_hex};
use crate::error::{io_err, Error, Result};

pub const MANIFEST_FILE: &str = "manifest.json";
pub const TENSOR_DIR: &str = "tensors";
pub const FORMAT_VERSION: u32 = 1;
pub const DTYPE: &str = "float32";
pub const BYTE_ORDER: &str = "little";

/// Where a checkpoint came from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Provenance {
    /// `init`, `pretrain` or `transfer`.
    pub stage: String,
    #[serde(default)]
    pub mode: Option<String>,
    #[serde(default)]
    pub config_digest: Option<String>,
    #[serde(default)]
    pub seed: Option<u64>,
    #[serde(default)]
    pub steps: u64,
    /// Parameter digest of the checkpoint this one was trained from.
    #[serde(default)]
    pub parent: Option<String>,
    pub tool_version: String,
}

impl Provenance {
    pub fn new(stage: &str) -> Self {
        Self {
            stage: stage.into(),
            mode: None,
            config_digest: None,
            seed: None,
            steps: 0,
            parent: None,
            tool_version: env!("CARGO_PKG_VERSION").into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TensorEntry {
    pub name: String,
    pub role: Role,
    pub shape: Vec<usize>,
    pub file: String,
    pub sha256: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckpointManifest {
    pub format_version: u32,
    pub dtype: String,
    pub byte_order: String,
    pub model_spec: ModelSpec,
    /// Digest of the canonical JSON of `model_spec`.
    pub spec_hash: String,
    /// See [`params_digest`].
    pub params_digest: String,
    pub tensors: Vec<TensorEntry>,
    pub provenance: Provenance,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub params: ParameterSet<f32>,
    pub spec: ModelSpec,
    pub manifest: CheckpointManifest,
}

pub fn spec_hash(spec: &ModelSpec) -> Result<String> {
    digest_of(spec)
}

fn tensor_bytes(t: &Tensor<f32>) -> Vec<u8> {
    t.data().iter().flat_map(|v| v.to_le_bytes()).collect()
}

/// Digest over every parameter's name, role, shape and raw bytes, in name
/// order. Equal digests mean bitwise-equal parameter sets.
pub fn params_digest(params: &ParameterSet<f32>) -> String {
    let mut buf = Vec::new();
    for (name, p) in params.iter() {
        buf.extend_from_slice(name.as_bytes());
        buf.push(0);
        buf.push(match p.role {
            Role::Feature => 0,
            Role::Head => 1,
        });
        for d in p.tensor.shape() {
            buf.extend_from_slice(&(*d as u64).to_le_bytes());
        }
        buf.extend_from_slice(&tensor_bytes(&p.tensor));
    }
    sha256_hex(&buf)
}

/// Writes `params` under `dir` (created if needed) and returns the manifest.
pub fn save_checkpoint(
    dir: &Path,
    params: &ParameterSet<f32>,
    spec: &ModelSpec,
    provenance: Provenance,
) -> Result<CheckpointManifest> {
    spec.check_params(params)?;
    let tensor_dir = dir.join(TENSOR_DIR);
    fs::create_dir_all(&tensor_dir).map_err(io_err(&tensor_dir))?;
    let mut tensors = Vec::with_capacity(params.len());
    for (name, p) in params.iter() {
        let file = format!("{TENSOR_DIR}/{name}.f32");
        let bytes = tensor_bytes(&p.tensor);
        let path = dir.join(&file);
        fs::write(&path, &bytes).map_err(io_err(&path))?;
        tensors.push(TensorEntry {
            name: name.into(),
            role: p.role,
            shape: p.tensor.shape().to_vec(),
            file,
            sha256: sha256_hex(&bytes),
        });
    }
    let manifest = CheckpointManifest {
        format_version: FORMAT_VERSION,
        dtype: DTYPE.into(),
        byte_order: BYTE_ORDER.into(),
        model_spec: spec.clone(),
        spec_hash: spec_hash(spec)?,
        params_digest: params_digest(params),
        tensors,
        provenance,
    };
    let path = dir.join(MANIFEST_FILE);
    let text = serde_json::to_string_pretty(&manifest).expect("manifest serializes");
    fs::write(&path, text + "\n").map_err(io_err(&path))?;
    Ok(manifest)
}

pub fn read_manifest(dir: &Path) -> Result<CheckpointManifest> {
    let path = dir.join(MANIFEST_FILE);
    let text = fs::read_to_string(&path).map_err(io_err(&path))?;
    let corrupt = |reason: String| Error::CorruptManifest { path: path.clone(), reason };
    let m: CheckpointManifest = serde_json::from_str(&text).map_err(|e| corrupt(e.to_string()))?;
    if m.format_version != FORMAT_VERSION {
        return Err(corrupt(format!("unsupported format version {}", m.format_version)));
    }
    if m.dtype != DTYPE || m.byte_order != BYTE_ORDER {
        return Err(corrupt(format!("unsupported encoding {} / {}", m.dtype, m.byte_order)));
    }
    Ok(m)
}

/// Loads and verifies a checkpoint. With `expected`, the stored model spec
/// must match it: differing parameter shapes give [`Error::ShapeMismatch`],
/// any other difference [`Error::HashMismatch`].
pub fn load_checkpoint(dir: &Path, expected: Option<&ModelSpec>) -> Result<Checkpoint> {
    let m = read_manifest(dir)?;
    let stored_hash = spec_hash(&m.model_spec)?;
    if stored_hash != m.spec_hash {
        return Err(Error::HashMismatch { what: "stored model spec".into(), expected: m.spec_hash, found: stored_hash });
    }
    let spec = m.model_spec.clone();
    if let Some(want) = expected {
        let declared: Vec<(String, Vec<usize>)> = want.layout().into_iter().map(|d| (d.name, d.shape)).collect();
        let stored: Vec<(String, Vec<usize>)> = m.tensors.iter().map(|t| (t.name.clone(), t.shape.clone())).collect();
        let mut declared_sorted = declared.clone();
        declared_sorted.sort();
        let mut stored_sorted = stored.clone();
        stored_sorted.sort();
        if declared_sorted != stored_sorted {
            let first = declared_sorted
                .iter()
                .zip(&stored_sorted)
                .find(|(a, b)| a != b)
                .map(|(a, b)| format!("model declares {} {:?}, checkpoint has {} {:?}", a.0, a.1, b.0, b.1))
                .unwrap_or_else(|| format!("model declares {} tensors, checkpoint has {}", declared.len(), stored.len()));
            return Err(Error::ShapeMismatch(first));
        }
        let want_hash = spec_hash(want)?;
        if want_hash != m.spec_hash {
            return Err(Error::HashMismatch { what: "model spec".into(), expected: want_hash, found: m.spec_hash });
        }
    }
    let mut params = ParameterSet::new();
    for t in &m.tensors {
        let path = dir.join(&t.file);
        let bytes = fs::read(&path).map_err(io_err(&path))?;
        let n: usize = t.shape.iter().product();
        if bytes.len() != 4 * n {
            return Err(Error::ShapeMismatch(format!(
                "{}: {} bytes on disk, shape {:?} needs {}",
                t.name,
                bytes.len(),
                t.shape,
                4 * n
            )));
        }
        let found = sha256_hex(&bytes);
        if found != t.sha256 {
            return Err(Error::HashMismatch { what: format!("tensor {}", t.name), expected: t.sha256.clone(), found });
        }
        let data = bytes.chunks_exact(4).map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]])).collect();
        params.insert(t.name.clone(), t.role, Tensor::from_vec(&t.shape, data)?)?;
    }
    spec.check_params(&params).map_err(|e| Error::ShapeMismatch(e.to_string()))?;
    let found = params_digest(&params);
    if found != m.params_digest {
        return Err(Error::HashMismatch { what: "parameter set".into(), expected: m.params_digest.clone(), found });
    }
    Ok(Checkpoint { params, spec, manifest: m })
}

/// Path of a checkpoint's manifest, for messages.
pub fn manifest_path(dir: &Path) -> PathBuf {
    dir.join(MANIFEST_FILE)
}
