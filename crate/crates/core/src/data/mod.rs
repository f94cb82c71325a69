//! Dataset plumbing: the grayscale image carrier, manifest files, loading,
//! and preprocessing into network tensors.

pub mod pgm;
pub mod resize;
pub mod split;
pub mod synth;

use std::fs;
use std::io;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::nn::Tensor;

pub use pgm::{encode_pgm, parse_pgm, read_pgm, write_pgm, PgmError};
pub use resize::resize_bilinear;
pub use split::{stratified_kfold, train_val_split};
pub use synth::{generate_synthetic_dataset, SynthConfig, MIN_IMAGE_SIZE};

#[derive(Debug, Error)]
pub enum DataError {
    #[error("{path}: {source}")]
    Pgm {
        path: String,
        #[source]
        source: PgmError,
    },
    #[error("manifest line {line}: {detail}")]
    Manifest { line: usize, detail: String },
    #[error("validation error: {0}")]
    Validation(String),
    #[error(transparent)]
    Io(#[from] io::Error),
}

/// Ground-truth class of a frame. Diagnostic is the positive class.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Label {
    Diagnostic,
    Nondiagnostic,
}

impl Label {
    pub const COUNT: usize = 2;
    pub const ALL: [Label; 2] = [Label::Diagnostic, Label::Nondiagnostic];

    /// Class index used for logits and one-hot targets.
    pub fn class_index(self) -> usize {
        match self {
            Label::Diagnostic => 0,
            Label::Nondiagnostic => 1,
        }
    }

    pub fn is_diagnostic(self) -> bool {
        self == Label::Diagnostic
    }
}

/// 8-bit grayscale image, row-major.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct GrayImage {
    width: usize,
    height: usize,
    pixels: Vec<u8>,
}

impl GrayImage {
    pub fn new(width: usize, height: usize, pixels: Vec<u8>) -> Result<Self, DataError> {
        if width == 0 || height == 0 {
            return Err(DataError::Validation(format!(
                "image extents must be positive, got {width}x{height}"
            )));
        }
        if width * height != pixels.len() {
            return Err(DataError::Validation(format!(
                "{width}x{height} image needs {} pixels, got {}",
                width * height,
                pixels.len()
            )));
        }
        Ok(Self {
            width,
            height,
            pixels,
        })
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn pixels(&self) -> &[u8] {
        &self.pixels
    }

    pub fn pixels_mut(&mut self) -> &mut [u8] {
        &mut self.pixels
    }

    pub fn get(&self, x: usize, y: usize) -> u8 {
        self.pixels[y * self.width + x]
    }
}

/// One manifest line: relative image path, label, fold assignment.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestRecord {
    pub path: String,
    pub label: Label,
    pub fold: usize,
}

/// Generator parameters echoed next to the manifest.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetMeta {
    pub n_per_class: usize,
    pub image_size: usize,
    pub seed: u64,
    pub folds: usize,
}

/// The record list driving training and evaluation. Paths are relative to
/// `root` (the manifest's directory).
#[derive(Debug, Clone)]
pub struct DatasetManifest {
    pub records: Vec<ManifestRecord>,
    pub root: PathBuf,
    pub meta: Option<DatasetMeta>,
}

pub const MANIFEST_FILE: &str = "manifest.jsonl";
pub const DATASET_META_FILE: &str = "dataset_meta.json";

impl DatasetManifest {
    pub fn resolve(&self, record: &ManifestRecord) -> PathBuf {
        self.root.join(&record.path)
    }

    pub fn fold_count(&self) -> usize {
        self.records.iter().map(|r| r.fold + 1).max().unwrap_or(0)
    }

    pub fn labels(&self) -> Vec<Label> {
        self.records.iter().map(|r| r.label).collect()
    }

    pub fn folds(&self) -> Vec<usize> {
        self.records.iter().map(|r| r.fold).collect()
    }

    /// One JSON record per line.
    pub fn write_jsonl(&self, path: &Path) -> Result<(), DataError> {
        let mut out = String::new();
        for record in &self.records {
            out.push_str(&serde_json::to_string(record).expect("record serializes"));
            out.push('\n');
        }
        fs::write(path, out)?;
        Ok(())
    }
}

/// Read a JSON-lines manifest; a `dataset_meta.json` sibling is picked up
/// when present.
pub fn load_manifest(path: impl AsRef<Path>) -> Result<DatasetManifest, DataError> {
    let path = path.as_ref();
    let text = fs::read_to_string(path)?;
    let mut records = Vec::new();
    let mut seen = std::collections::HashSet::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let record: ManifestRecord =
            serde_json::from_str(line).map_err(|e| DataError::Manifest {
                line: i + 1,
                detail: e.to_string(),
            })?;
        if !seen.insert(record.path.clone()) {
            return Err(DataError::Manifest {
                line: i + 1,
                detail: format!("duplicate path {}", record.path),
            });
        }
        records.push(record);
    }
    if records.is_empty() {
        return Err(DataError::Validation(format!(
            "manifest {} has no records",
            path.display()
        )));
    }
    let root = path.parent().unwrap_or(Path::new(".")).to_path_buf();
    let meta_path = root.join(DATASET_META_FILE);
    let meta = if meta_path.exists() {
        let text = fs::read_to_string(&meta_path)?;
        Some(serde_json::from_str(&text).map_err(|e| DataError::Manifest {
            line: 0,
            detail: format!("{}: {e}", meta_path.display()),
        })?)
    } else {
        None
    };
    Ok(DatasetManifest {
        records,
        root,
        meta,
    })
}

/// Decode every image in the manifest, in record order.
pub fn load_images(manifest: &DatasetManifest) -> Result<Vec<GrayImage>, DataError> {
    manifest
        .records
        .par_iter()
        .map(|record| {
            let path = manifest.resolve(record);
            read_pgm(&path).map_err(|source| DataError::Pgm {
                path: path.display().to_string(),
                source,
            })
        })
        .collect()
}

/// Scale to 0..1 and subtract the training-set mean pixel, producing a
/// `[1, H, W]` tensor.
pub fn normalize_for_net(image: &GrayImage, mean_pixel: f64) -> Tensor<f32> {
    Tensor::from_fn(vec![1, image.height(), image.width()], |i| {
        (image.pixels()[i] as f64 / 255.0 - mean_pixel) as f32
    })
}

/// Mean pixel value (0..1 scale) over the images selected by `indices`,
/// accumulated in f64.
pub fn mean_pixel(images: &[GrayImage], indices: &[usize]) -> f64 {
    let mut acc = 0.0f64;
    let mut count = 0usize;
    for &i in indices {
        for &p in images[i].pixels() {
            acc += p as f64;
        }
        count += images[i].pixels().len();
    }
    if count == 0 {
        0.0
    } else {
        acc / (255.0 * count as f64)
    }
}

/// Stack selected images into a normalized `[B, 1, H, W]` batch.
pub fn batch_tensor(images: &[GrayImage], indices: &[usize], mean_pixel: f64) -> Tensor<f32> {
    let (h, w) = (images[indices[0]].height(), images[indices[0]].width());
    let plane = h * w;
    let mut data = vec![0.0f32; indices.len() * plane];
    for (slot, &idx) in indices.iter().enumerate() {
        let img = &images[idx];
        for (o, &p) in img.pixels().iter().enumerate() {
            data[slot * plane + o] = (p as f64 / 255.0 - mean_pixel) as f32;
        }
    }
    Tensor::new(vec![indices.len(), 1, h, w], data).expect("sizes agree by construction")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn normalize_examples() {
        let zero = GrayImage::new(2, 2, vec![0; 4]).unwrap();
        let t = normalize_for_net(&zero, 0.0);
        assert_eq!(t.shape(), &[1, 2, 2]);
        assert!(t.data().iter().all(|&v| v == 0.0));

        let bright = GrayImage::new(1, 1, vec![255]).unwrap();
        assert_eq!(normalize_for_net(&bright, 0.0).data(), &[1.0]);
    }

    #[test]
    fn mean_pixel_is_consistent_with_normalization() {
        let img = GrayImage::new(2, 1, vec![0, 255]).unwrap();
        let mean = mean_pixel(std::slice::from_ref(&img), &[0]);
        assert!((mean - 0.5).abs() < 1e-12);
        let t = normalize_for_net(&img, mean);
        assert!((t.data()[0] + 0.5).abs() < 1e-6);
        assert!((t.data()[1] - 0.5).abs() < 1e-6);
    }

    #[test]
    fn label_serde_uses_lowercase_names() {
        assert_eq!(serde_json::to_string(&Label::Diagnostic).unwrap(), "\"diagnostic\"");
        let back: Label = serde_json::from_str("\"nondiagnostic\"").unwrap();
        assert_eq!(back, Label::Nondiagnostic);
    }

    #[test]
    fn manifest_round_trip_and_duplicate_detection() {
        let dir = tempfile::tempdir().unwrap();
        let manifest = DatasetManifest {
            records: vec![
                ManifestRecord { path: "a.pgm".into(), label: Label::Diagnostic, fold: 0 },
                ManifestRecord { path: "b.pgm".into(), label: Label::Nondiagnostic, fold: 3 },
            ],
            root: dir.path().to_path_buf(),
            meta: None,
        };
        let path = dir.path().join(MANIFEST_FILE);
        manifest.write_jsonl(&path).unwrap();
        let loaded = load_manifest(&path).unwrap();
        assert_eq!(loaded.records, manifest.records);
        assert_eq!(loaded.fold_count(), 4);

        let mut text = std::fs::read_to_string(&path).unwrap();
        text.push_str("{\"path\": \"a.pgm\", \"label\": \"diagnostic\", \"fold\": 1}\n");
        std::fs::write(&path, text).unwrap();
        assert!(matches!(
            load_manifest(&path),
            Err(DataError::Manifest { line: 3, .. })
        ));
    }
}
