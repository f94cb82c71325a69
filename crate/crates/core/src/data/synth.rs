//! Synthetic surrogate dataset.
//!
//! Diagnostic frames are textured fields carrying 5-25 bright elliptical
//! "cell" blobs with sharp dark rims. Nondiagnostic frames draw uniformly
//! from four artifact subclasses: (a) directional motion smear,
//! (b) near-saturated low-structure frames, (c) low-contrast blurred
//! noise, and (d) uniform pixel noise. Subclass (d) is maximal-entropy on
//! purpose: a histogram-entropy score ranks it above every diagnostic
//! frame, while a trained classifier does not.

use std::f64::consts::PI;
use std::fs;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use super::pgm::encode_pgm;
use super::split::stratified_kfold;
use super::{
    DataError, DatasetManifest, DatasetMeta, GrayImage, Label, ManifestRecord, DATASET_META_FILE,
    MANIFEST_FILE,
};

pub const MIN_IMAGE_SIZE: usize = 32;
pub const SYNTH_FOLDS: usize = 4;

#[derive(Debug, Clone, Copy)]
pub struct SynthConfig {
    pub n_per_class: usize,
    pub image_size: usize,
    pub seed: u64,
}

impl SynthConfig {
    fn validate(&self) -> Result<(), DataError> {
        if self.n_per_class == 0 {
            return Err(DataError::Validation("n_per_class must be >= 1".into()));
        }
        if self.image_size < MIN_IMAGE_SIZE {
            return Err(DataError::Validation(format!(
                "image size {} is below minimum {MIN_IMAGE_SIZE}",
                self.image_size
            )));
        }
        Ok(())
    }
}

/// Generate `2 * n_per_class` PGM frames plus `manifest.jsonl` and
/// `dataset_meta.json` under `out_dir`. Deterministic per seed.
pub fn generate_synthetic_dataset(
    config: &SynthConfig,
    out_dir: &Path,
) -> Result<DatasetManifest, DataError> {
    config.validate()?;
    fs::create_dir_all(out_dir)?;

    let n = config.n_per_class;
    let size = config.image_size;
    let frames: Vec<(String, Label, Vec<u8>)> = (0..2 * n)
        .into_par_iter()
        .map(|index| {
            let mut rng = image_rng(config.seed, index as u64);
            let (name, label, image) = if index < n {
                (
                    format!("diag_{index:05}.pgm"),
                    Label::Diagnostic,
                    synth_diagnostic(&mut rng, size),
                )
            } else {
                (
                    format!("nondiag_{:05}.pgm", index - n),
                    Label::Nondiagnostic,
                    synth_nondiagnostic(&mut rng, size),
                )
            };
            (name, label, encode_pgm(&image))
        })
        .collect();

    for (name, _, bytes) in &frames {
        fs::write(out_dir.join(name), bytes)?;
    }

    let labels: Vec<Label> = frames.iter().map(|(_, label, _)| *label).collect();
    let folds = stratified_kfold(&labels, SYNTH_FOLDS, config.seed)?;
    let records: Vec<ManifestRecord> = frames
        .iter()
        .zip(&folds)
        .map(|((name, label, _), &fold)| ManifestRecord {
            path: name.clone(),
            label: *label,
            fold,
        })
        .collect();

    let meta = DatasetMeta {
        n_per_class: n,
        image_size: size,
        seed: config.seed,
        folds: SYNTH_FOLDS,
    };
    let manifest = DatasetManifest {
        records,
        root: out_dir.to_path_buf(),
        meta: Some(meta.clone()),
    };
    manifest.write_jsonl(&out_dir.join(MANIFEST_FILE))?;
    fs::write(
        out_dir.join(DATASET_META_FILE),
        serde_json::to_string_pretty(&meta).expect("meta serializes") + "\n",
    )?;
    Ok(manifest)
}

/// Per-image generator stream, independent of generation order.
fn image_rng(seed: u64, index: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed ^ (index + 1).wrapping_mul(0x9E37_79B9_7F4A_7C15))
}

fn synth_diagnostic(rng: &mut ChaCha8Rng, size: usize) -> GrayImage {
    let mut field = textured_field(rng, size, 115.0, 8, 30.0, 8.0);
    let blobs = rng.gen_range(5..=25);
    for _ in 0..blobs {
        draw_cell_blob(rng, &mut field, size);
    }
    to_image(&field, size)
}

fn synth_nondiagnostic(rng: &mut ChaCha8Rng, size: usize) -> GrayImage {
    match rng.gen_range(0..4) {
        0 => synth_motion_smear(rng, size),
        1 => synth_saturated(rng, size),
        2 => synth_low_contrast(rng, size),
        _ => synth_uniform_noise(rng, size),
    }
}

/// (a) Textured field smeared along one direction.
fn synth_motion_smear(rng: &mut ChaCha8Rng, size: usize) -> GrayImage {
    let field = textured_field(rng, size, 120.0, 4, 45.0, 10.0);
    let angle = rng.gen_range(0.0..PI);
    let length = (size / 4).max(8);
    let (dx, dy) = (angle.cos(), angle.sin());
    let mut smeared = vec![0.0f64; size * size];
    for y in 0..size {
        for x in 0..size {
            let mut acc = 0.0;
            for t in 0..length {
                let offset = t as f64 - (length as f64 - 1.0) / 2.0;
                let sx = (x as f64 + offset * dx).round().clamp(0.0, (size - 1) as f64) as usize;
                let sy = (y as f64 + offset * dy).round().clamp(0.0, (size - 1) as f64) as usize;
                acc += field[sy * size + sx];
            }
            smeared[y * size + x] = acc / length as f64;
        }
    }
    to_image(&smeared, size)
}

/// (b) Near-saturated frame with almost no structure.
fn synth_saturated(rng: &mut ChaCha8Rng, size: usize) -> GrayImage {
    let field = textured_field(rng, size, 238.0, 16, 8.0, 2.0);
    to_image(&field, size)
}

/// (c) Blurred noise compressed around mid-gray.
fn synth_low_contrast(rng: &mut ChaCha8Rng, size: usize) -> GrayImage {
    let noise: Vec<f64> = (0..size * size)
        .map(|_| rng.gen_range(-60.0..60.0))
        .collect();
    let blurred = box_blur(&noise, size, 1);
    let field: Vec<f64> = blurred.iter().map(|v| 118.0 + v * 0.6).collect();
    to_image(&field, size)
}

/// (d) Independent uniform pixels: maximal histogram entropy.
fn synth_uniform_noise(rng: &mut ChaCha8Rng, size: usize) -> GrayImage {
    let pixels: Vec<u8> = (0..size * size).map(|_| rng.gen_range(0..=255)).collect();
    GrayImage::new(size, size, pixels).expect("square image")
}

/// Base level plus bilinear value noise plus per-pixel jitter.
fn textured_field(
    rng: &mut ChaCha8Rng,
    size: usize,
    base: f64,
    cell: usize,
    coarse_amp: f64,
    pixel_amp: f64,
) -> Vec<f64> {
    let grid_w = size / cell + 2;
    let grid: Vec<f64> = (0..grid_w * grid_w)
        .map(|_| rng.gen_range(-1.0..1.0))
        .collect();
    let mut field = vec![0.0f64; size * size];
    for y in 0..size {
        let gy = y as f64 / cell as f64;
        let y0 = gy.floor() as usize;
        let fy = gy - y0 as f64;
        for x in 0..size {
            let gx = x as f64 / cell as f64;
            let x0 = gx.floor() as usize;
            let fx = gx - x0 as f64;
            let top = grid[y0 * grid_w + x0] * (1.0 - fx) + grid[y0 * grid_w + x0 + 1] * fx;
            let bottom =
                grid[(y0 + 1) * grid_w + x0] * (1.0 - fx) + grid[(y0 + 1) * grid_w + x0 + 1] * fx;
            let coarse = top * (1.0 - fy) + bottom * fy;
            field[y * size + x] = base + coarse * coarse_amp + rng.gen_range(-pixel_amp..pixel_amp);
        }
    }
    field
}

/// Bright elliptical interior with a sharp dark rim.
fn draw_cell_blob(rng: &mut ChaCha8Rng, field: &mut [f64], size: usize) {
    let s = size as f64;
    let cx = rng.gen_range(0.0..s);
    let cy = rng.gen_range(0.0..s);
    let rx = rng.gen_range(0.05 * s..0.11 * s);
    let ry = rng.gen_range(0.05 * s..0.11 * s);
    let theta = rng.gen_range(0.0..PI);
    let interior = rng.gen_range(165.0..205.0);
    let rim = rng.gen_range(20.0..50.0);
    let (cos_t, sin_t) = (theta.cos(), theta.sin());
    let rmax = rx.max(ry) + 1.0;

    let x_lo = ((cx - rmax).floor().max(0.0)) as usize;
    let x_hi = ((cx + rmax).ceil().min(s - 1.0)) as usize;
    let y_lo = ((cy - rmax).floor().max(0.0)) as usize;
    let y_hi = ((cy + rmax).ceil().min(s - 1.0)) as usize;
    for y in y_lo..=y_hi {
        for x in x_lo..=x_hi {
            let dx = x as f64 - cx;
            let dy = y as f64 - cy;
            let u = (dx * cos_t + dy * sin_t) / rx;
            let v = (-dx * sin_t + dy * cos_t) / ry;
            let d = (u * u + v * v).sqrt();
            if d <= 0.7 {
                field[y * size + x] = interior + rng.gen_range(-10.0..10.0);
            } else if d <= 1.0 {
                field[y * size + x] = rim + rng.gen_range(-8.0..8.0);
            }
        }
    }
}

/// Separable box blur with the given radius (window `2r + 1`).
fn box_blur(field: &[f64], size: usize, radius: usize) -> Vec<f64> {
    let r = radius as isize;
    let mut horizontal = vec![0.0f64; size * size];
    for y in 0..size {
        for x in 0..size {
            let mut acc = 0.0;
            let mut count = 0.0;
            for o in -r..=r {
                let sx = x as isize + o;
                if sx >= 0 && sx < size as isize {
                    acc += field[y * size + sx as usize];
                    count += 1.0;
                }
            }
            horizontal[y * size + x] = acc / count;
        }
    }
    let mut out = vec![0.0f64; size * size];
    for y in 0..size {
        for x in 0..size {
            let mut acc = 0.0;
            let mut count = 0.0;
            for o in -r..=r {
                let sy = y as isize + o;
                if sy >= 0 && sy < size as isize {
                    acc += horizontal[sy as usize * size + x];
                    count += 1.0;
                }
            }
            out[y * size + x] = acc / count;
        }
    }
    out
}

fn to_image(field: &[f64], size: usize) -> GrayImage {
    let pixels: Vec<u8> = field
        .iter()
        .map(|v| v.round().clamp(0.0, 255.0) as u8)
        .collect();
    GrayImage::new(size, size, pixels).expect("square image")
}
