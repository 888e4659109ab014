//! Labelled image folders: one subfolder per class, PNG or JPEG files.
use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use image::imageops::FilterType;
use serde::{Deserialize, Serialize};
use tgd_core::data::Dataset;
use tgd_core::tensor::Tensor;

use crate::digest::sha256_hex;
use crate::error::{io_err, Error, Result};

/// Resize policy applied to every decoded image.
pub const RESIZE_POLICY: &str = "stretch to the model input size, triangle filter, no crop";

pub fn default_label_map() -> BTreeMap<String, u8> {
    BTreeMap::from([("fake".to_string(), 1), ("real".to_string(), 0)])
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FileRecord {
    /// Relative to the folder root, `/`-separated.
    pub path: String,
    pub label: u8,
    pub sha256: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FolderManifest {
    pub root: PathBuf,
    pub label_map: BTreeMap<String, u8>,
    pub image_shape: [usize; 3],
    pub resize_policy: String,
    pub files: Vec<FileRecord>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FolderLoad {
    pub dataset: Dataset,
    pub manifest: FolderManifest,
    /// Files that could not be decoded, with the reason.
    pub skipped: Vec<(String, String)>,
}

fn is_image(path: &Path) -> bool {
    matches!(
        path.extension().and_then(|e| e.to_str()).map(str::to_ascii_lowercase).as_deref(),
        Some("png" | "jpg" | "jpeg")
    )
}

fn collect(dir: &Path, out: &mut Vec<PathBuf>) -> Result<()> {
    for entry in fs::read_dir(dir).map_err(io_err(dir))? {
        let path = entry.map_err(io_err(dir))?.path();
        if path.is_dir() {
            collect(&path, out)?;
        } else if is_image(&path) {
            out.push(path);
        }
    }
    Ok(())
}

fn decode(bytes: &[u8], [c, h, w]: [usize; 3]) -> std::result::Result<Vec<f32>, String> {
    let img = image::load_from_memory(bytes).map_err(|e| e.to_string())?;
    let (w32, h32) = (w as u32, h as u32);
    let planes: Vec<Vec<u8>> = match c {
        1 => vec![image::imageops::resize(&img.to_luma8(), w32, h32, FilterType::Triangle).into_raw()],
        3 => {
            let rgb = image::imageops::resize(&img.to_rgb8(), w32, h32, FilterType::Triangle).into_raw();
            (0..3).map(|k| rgb.iter().skip(k).step_by(3).copied().collect()).collect()
        }
        _ => return Err(format!("cannot load images with {c} channels")),
    };
    Ok(planes.into_iter().flatten().map(|v| v as f32 / 255.0).collect())
}

/// Loads `root/<class>/**.{png,jpg,jpeg}` for every class named in
/// `label_map`, ordered by relative path. Undecodable files are skipped and
/// reported; a class without any usable image is an error.
pub fn load_image_folder(root: &Path, label_map: &BTreeMap<String, u8>, image_shape: [usize; 3]) -> Result<FolderLoad> {
    if label_map.values().any(|&l| l > 1) {
        return Err(Error::Config("folder labels must be 0 or 1".into()));
    }
    let mut found = Vec::new();
    for (class, &label) in label_map {
        let dir = root.join(class);
        if !dir.is_dir() {
            return Err(Error::Data(format!("class folder {} does not exist", dir.display())));
        }
        let mut files = Vec::new();
        collect(&dir, &mut files)?;
        found.extend(files.into_iter().map(|p| (p, label)));
    }
    let rel = |p: &Path| {
        p.strip_prefix(root)
            .expect("collected under root")
            .components()
            .map(|c| c.as_os_str().to_string_lossy())
            .collect::<Vec<_>>()
            .join("/")
    };
    let mut found: Vec<(String, PathBuf, u8)> = found.into_iter().map(|(p, l)| (rel(&p), p, l)).collect();
    found.sort();

    let [c, h, w] = image_shape;
    let mut data = Vec::with_capacity(found.len() * c * h * w);
    let mut labels = Vec::new();
    let mut ids = Vec::new();
    let mut files = Vec::new();
    let mut skipped = Vec::new();
    for (id, path, label) in found {
        let bytes = fs::read(&path).map_err(io_err(&path))?;
        match decode(&bytes, image_shape) {
            Ok(pixels) => {
                data.extend(pixels);
                labels.push(label);
                files.push(FileRecord { path: id.clone(), label, sha256: sha256_hex(&bytes) });
                ids.push(id);
            }
            Err(reason) => skipped.push((id, reason)),
        }
    }
    for (class, &label) in label_map {
        if !labels.contains(&label) {
            return Err(Error::Data(format!("class `{class}` has no readable images under {}", root.display())));
        }
    }
    let n = labels.len();
    let dataset = Dataset::new(Tensor::from_vec(&[n, c, h, w], data)?, labels, ids)?;
    let manifest = FolderManifest {
        root: root.to_path_buf(),
        label_map: label_map.clone(),
        image_shape,
        resize_policy: RESIZE_POLICY.into(),
        files,
    };
    Ok(FolderLoad { dataset, manifest, skipped })
}
