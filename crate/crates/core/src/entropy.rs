//! Histogram-entropy baseline: Shannon entropy of the 8-bit pixel
//! histogram, normalized by the theoretical maximum of 8 bits, read as the
//! probability that a frame is informative.

use rayon::prelude::*;

use crate::data::{DataError, DatasetManifest, GrayImage};
use crate::metrics::ScoredItem;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EntropyScore {
    /// Raw histogram entropy in bits, within [0, 8].
    pub bits: f64,
    /// `bits / 8`, within [0, 1].
    pub normalized: f64,
}

/// 256-bin histogram entropy with the `0 * log 0 = 0` convention.
pub fn image_entropy(image: &GrayImage) -> Result<EntropyScore, DataError> {
    if image.pixels().is_empty() {
        return Err(DataError::Validation("entropy of an empty image".into()));
    }
    let mut histogram = [0u64; 256];
    for &p in image.pixels() {
        histogram[p as usize] += 1;
    }
    let total = image.pixels().len() as f64;
    let mut bits = 0.0f64;
    for &count in &histogram {
        if count > 0 {
            let p = count as f64 / total;
            bits -= p * p.log2();
        }
    }
    Ok(EntropyScore {
        bits,
        normalized: bits / 8.0,
    })
}

/// Per-record outcome of scoring a manifest by entropy.
#[derive(Debug)]
pub struct EntropyRun {
    /// (record index, scored item) for every readable image, in order.
    pub items: Vec<(usize, ScoredItem)>,
    /// (path, error) for every skipped image.
    pub skipped: Vec<(String, String)>,
}

/// Score every manifest image by normalized entropy. Unreadable files are
/// recorded and skipped rather than aborting the run.
pub fn entropy_classifier(manifest: &DatasetManifest) -> EntropyRun {
    let results: Vec<Result<(usize, ScoredItem), (String, String)>> = manifest
        .records
        .par_iter()
        .enumerate()
        .map(|(idx, record)| {
            let path = manifest.resolve(record);
            match crate::data::read_pgm(&path) {
                Ok(image) => {
                    let score = image_entropy(&image)
                        .expect("decoded images are never empty")
                        .normalized;
                    Ok((
                        idx,
                        ScoredItem {
                            score,
                            truth: record.label,
                        },
                    ))
                }
                Err(e) => Err((path.display().to_string(), e.to_string())),
            }
        })
        .collect();

    let mut run = EntropyRun {
        items: Vec::with_capacity(results.len()),
        skipped: Vec::new(),
    };
    for result in results {
        match result {
            Ok(pair) => run.items.push(pair),
            Err(skip) => run.skipped.push(skip),
        }
    }
    run
}
