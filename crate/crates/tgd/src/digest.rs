//! SHA-256 digests of bytes, files, directories and canonical JSON.
use std::collections::BTreeMap;
use std::path::Path;

use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::error::{io_err, Error, Result};

pub fn sha256_hex(bytes: &[u8]) -> String {
    format!("{:x}", Sha256::digest(bytes))
}

/// Compact JSON with object keys sorted, so equal values always produce
/// equal text.
pub fn canonical_json<T: Serialize>(value: &T) -> Result<String> {
    let v = serde_json::to_value(value).map_err(|e| Error::Data(format!("cannot serialize: {e}")))?;
    Ok(serde_json::to_string(&v).expect("a JSON value always serializes"))
}

pub fn digest_of<T: Serialize>(value: &T) -> Result<String> {
    Ok(sha256_hex(canonical_json(value)?.as_bytes()))
}

pub fn file_digest(path: &Path) -> Result<String> {
    Ok(sha256_hex(&std::fs::read(path).map_err(io_err(path))?))
}

/// Digest of every regular file under `dir`, keyed by `/`-separated
/// relative path. Files named in `exclude` (at any depth) are skipped.
pub fn directory_digests(dir: &Path, exclude: &[&str]) -> Result<BTreeMap<String, String>> {
    let mut out = BTreeMap::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for entry in std::fs::read_dir(&d).map_err(io_err(&d))? {
            let entry = entry.map_err(io_err(&d))?;
            let path = entry.path();
            let ty = entry.file_type().map_err(io_err(&path))?;
            if ty.is_dir() {
                stack.push(path);
            } else if ty.is_file() {
                let name = entry.file_name().to_string_lossy().into_owned();
                if exclude.contains(&name.as_str()) {
                    continue;
                }
                let rel = path.strip_prefix(dir).expect("walked from dir");
                let key = rel.components().map(|c| c.as_os_str().to_string_lossy()).collect::<Vec<_>>().join("/");
                out.insert(key, file_digest(&path)?);
            }
        }
    }
    Ok(out)
}
