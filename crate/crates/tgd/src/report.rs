//! Evaluation reports (JSON) and score dumps (`id<TAB>score` lines).
use std::fs;
use std::path::Path;

use tgd_core::eval::EvalReport;

use crate::error::{io_err, Error, Result};

pub fn save_report(path: &Path, report: &EvalReport) -> Result<()> {
    let text = serde_json::to_string_pretty(report).map_err(|e| Error::Data(format!("report: {e}")))?;
    fs::write(path, text + "\n").map_err(io_err(path))
}

pub fn load_report(path: &Path) -> Result<EvalReport> {
    let text = fs::read_to_string(path).map_err(io_err(path))?;
    serde_json::from_str(&text).map_err(|e| Error::CorruptManifest { path: path.to_path_buf(), reason: e.to_string() })
}

/// Scores are written in Rust's shortest round-trip float notation.
pub fn write_scores(path: &Path, ids: &[String], scores: &[f32]) -> Result<()> {
    if ids.len() != scores.len() {
        return Err(Error::Data(format!("{} ids for {} scores", ids.len(), scores.len())));
    }
    let mut text = String::with_capacity(ids.len() * 24);
    for (id, s) in ids.iter().zip(scores) {
        if id.contains(['\t', '\n']) {
            return Err(Error::Data(format!("sample id {id:?} contains a tab or newline")));
        }
        text.push_str(&format!("{id}\t{s}\n"));
    }
    fs::write(path, text).map_err(io_err(path))
}

pub fn read_scores(path: &Path) -> Result<(Vec<String>, Vec<f32>)> {
    let text = fs::read_to_string(path).map_err(io_err(path))?;
    let mut ids = Vec::new();
    let mut scores = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let bad = || Error::CorruptManifest { path: path.to_path_buf(), reason: format!("line {}: {line:?}", i + 1) };
        let (id, s) = line.split_once('\t').ok_or_else(bad)?;
        ids.push(id.to_string());
        scores.push(s.parse().map_err(|_| bad())?);
    }
    Ok((ids, scores))
}
