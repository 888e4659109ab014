//! Stored datasets: `images.f32` (little-endian `n x c x h x w`) next to a
//! `dataset.json` document holding ids, labels, split assignment and origin.
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use tgd_core::data::{Dataset, DatasetManifest, Split, SyntheticSpec};
use tgd_core::tensor::Tensor;

use crate::digest::{digest_of, sha256_hex};
use crate::error::{io_err, Error, Result};
use crate::folder::FolderManifest;

pub const IMAGES_FILE: &str = "images.f32";
pub const DOCUMENT_FILE: &str = "dataset.json";

/// How the samples were produced.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Origin {
    Synthetic { spec: SyntheticSpec, spec_digest: String },
    Folder(FolderManifest),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetDocument {
    pub shape: [usize; 4],
    pub images_sha256: String,
    pub origin: Origin,
    pub manifest: DatasetManifest,
}

impl DatasetDocument {
    /// Digest identifying the stored dataset, images included.
    pub fn digest(&self) -> Result<String> {
        digest_of(self)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct StoredDataset {
    pub dataset: Dataset,
    pub document: DatasetDocument,
}

impl StoredDataset {
    /// Samples assigned to `split`, in stored order.
    pub fn split(&self, split: Split) -> Result<Dataset> {
        Ok(self.dataset.subset(&self.document.manifest.indices(split))?)
    }

    /// The first nonempty split among `preferred`, else every sample.
    pub fn split_or_all(&self, preferred: &[Split]) -> Result<Dataset> {
        for &s in preferred {
            let idx = self.document.manifest.indices(s);
            if !idx.is_empty() {
                return Ok(self.dataset.subset(&idx)?);
            }
        }
        Ok(self.dataset.clone())
    }
}

fn image_bytes(images: &Tensor<f32>) -> Vec<u8> {
    images.data().iter().flat_map(|v| v.to_le_bytes()).collect()
}

pub fn save_dataset(dir: &Path, dataset: &Dataset, manifest: DatasetManifest, origin: Origin) -> Result<DatasetDocument> {
    if manifest.ids != dataset.ids || manifest.labels != dataset.labels {
        return Err(Error::Data("split manifest does not describe this dataset".into()));
    }
    fs::create_dir_all(dir).map_err(io_err(dir))?;
    let bytes = image_bytes(&dataset.images);
    let path = dir.join(IMAGES_FILE);
    fs::write(&path, &bytes).map_err(io_err(&path))?;
    let s = dataset.images.shape();
    let doc = DatasetDocument {
        shape: [s[0], s[1], s[2], s[3]],
        images_sha256: sha256_hex(&bytes),
        origin,
        manifest,
    };
    let path = dir.join(DOCUMENT_FILE);
    let text = serde_json::to_string_pretty(&doc).expect("document serializes");
    fs::write(&path, text + "\n").map_err(io_err(&path))?;
    Ok(doc)
}

pub fn load_dataset(dir: &Path) -> Result<StoredDataset> {
    let path = dir.join(DOCUMENT_FILE);
    let text = fs::read_to_string(&path).map_err(io_err(&path))?;
    let doc: DatasetDocument = serde_json::from_str(&text)
        .map_err(|e| Error::CorruptManifest { path: path.clone(), reason: e.to_string() })?;
    let path = dir.join(IMAGES_FILE);
    let bytes = fs::read(&path).map_err(io_err(&path))?;
    let n: usize = doc.shape.iter().product();
    if bytes.len() != 4 * n {
        return Err(Error::ShapeMismatch(format!(
            "{}: {} bytes, shape {:?} needs {}",
            path.display(),
            bytes.len(),
            doc.shape,
            4 * n
        )));
    }
    let found = sha256_hex(&bytes);
    if found != doc.images_sha256 {
        return Err(Error::HashMismatch { what: path.display().to_string(), expected: doc.images_sha256, found });
    }
    let data = bytes.chunks_exact(4).map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]])).collect();
    let images = Tensor::from_vec(&doc.shape, data)?;
    let m = &doc.manifest;
    if m.splits.len() != doc.shape[0] {
        return Err(Error::CorruptManifest {
            path: dir.join(DOCUMENT_FILE),
            reason: format!("{} split entries for {} images", m.splits.len(), doc.shape[0]),
        });
    }
    let dataset = Dataset::new(images, m.labels.clone(), m.ids.clone())?;
    Ok(StoredDataset { dataset, document: doc })
}
