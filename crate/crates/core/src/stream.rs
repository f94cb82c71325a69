//! Streaming inference benchmark: decode -> preprocess -> inference as
//! three pipeline stages connected by bounded channels (capacity 8, so a
//! slow stage back-pressures the ones before it). Frame order is
//! preserved end to end, and the streamed scores must be bit-identical to
//! a batched evaluation of the same checkpoint.

use std::sync::mpsc::sync_channel;
use std::time::Instant;

use serde::Serialize;
use thiserror::Error;

use crate::data::{normalize_for_net, read_pgm, resize_bilinear, DatasetManifest, GrayImage};
use crate::nets::Network;
use crate::nn::loss::softmax_rows;
use crate::nn::{NnError, Phase, Tensor};
use crate::trainer::score_images;

/// Bounded queue capacity between pipeline stages.
const QUEUE_CAPACITY: usize = 8;

/// Reference figure reported alongside measurements: a published clinical
/// study's full AlexNet sustained 95 images/second on a GTX 980 Ti,
/// inference only.
pub const REFERENCE_GPU_FULL_ALEXNET_FPS: f64 = 95.0;

#[derive(Debug, Error)]
pub enum StreamError {
    #[error("stage failure: {0}")]
    Stage(String),
    #[error(
        "streamed score for frame {frame} ({streamed}) does not match batch evaluation ({batch})"
    )]
    Mismatch {
        frame: usize,
        streamed: f64,
        batch: f64,
    },
    #[error(transparent)]
    Nn(#[from] NnError),
    #[error(transparent)]
    Train(#[from] crate::trainer::TrainError),
}

#[derive(Debug, Clone, Serialize)]
pub struct LatencyPercentilesMs {
    pub p50: f64,
    pub p90: f64,
    pub p99: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct StreamBenchReport {
    pub frames: usize,
    pub batch: usize,
    /// Wall-clock over the whole pipeline, decode included.
    pub wall_seconds: f64,
    pub end_to_end_images_per_second: f64,
    /// Time spent in the inference stage alone.
    pub inference_seconds: f64,
    pub inference_images_per_second: f64,
    pub latency_ms: LatencyPercentilesMs,
    /// Streamed scores were verified bit-identical to batch evaluation.
    pub matches_batch_eval: bool,
    /// Published single-GPU full-AlexNet figure, for context only;
    /// nothing is asserted against it.
    pub reference_gpu_full_alexnet_images_per_second: f64,
}

/// Per-frame diagnostic probabilities in manifest order, plus timing.
pub struct StreamOutcome {
    pub scores: Vec<f64>,
    pub report: StreamBenchReport,
}

/// Replay the manifest as a frame stream through the three-stage pipeline.
/// Also runs the same checkpoint in batch mode and verifies the scores
/// match bit for bit.
pub fn stream_bench(
    net: &mut Network<f32>,
    manifest: &DatasetManifest,
    batch: usize,
) -> Result<StreamOutcome, StreamError> {
    let batch = batch.max(1);
    let mean = net
        .mean_pixel()
        .ok_or_else(|| NnError::Config("checkpoint carries no mean pixel".into()))?;
    let [_, target_h, target_w] = net.input_shape();
    let paths: Vec<std::path::PathBuf> =
        manifest.records.iter().map(|r| manifest.resolve(r)).collect();
    let frames = paths.len();

    let started = Instant::now();
    let (decoded_tx, decoded_rx) = sync_channel::<(usize, GrayImage, Instant)>(QUEUE_CAPACITY);
    let (ready_tx, ready_rx) = sync_channel::<(usize, Tensor<f32>, Instant)>(QUEUE_CAPACITY);

    let outcome = std::thread::scope(|scope| -> Result<_, StreamError> {
        let decode = scope.spawn(move || -> Result<(), String> {
            for (i, path) in paths.iter().enumerate() {
                let begun = Instant::now();
                let image = read_pgm(path).map_err(|e| format!("{}: {e}", path.display()))?;
                decoded_tx
                    .send((i, image, begun))
                    .map_err(|_| "preprocess stage hung up".to_string())?;
            }
            Ok(())
        });

        let preprocess = scope.spawn(move || -> Result<(), String> {
            for (i, image, begun) in decoded_rx {
                let fitted = if (image.height(), image.width()) == (target_h, target_w) {
                    image
                } else {
                    resize_bilinear(&image, target_w, target_h).map_err(|e| e.to_string())?
                };
                let tensor = normalize_for_net(&fitted, mean);
                ready_tx
                    .send((i, tensor, begun))
                    .map_err(|_| "inference stage hung up".to_string())?;
            }
            Ok(())
        });

        // Inference stage runs on this thread.
        let mut scores = vec![0.0f64; frames];
        let mut latencies = vec![0.0f64; frames];
        let mut inference_seconds = 0.0f64;
        let mut pending: Vec<(usize, Tensor<f32>, Instant)> = Vec::with_capacity(batch);
        let classes = net.class_count();
        let diag = crate::data::Label::Diagnostic.class_index();
        let mut flush =
            |pending: &mut Vec<(usize, Tensor<f32>, Instant)>| -> Result<(), StreamError> {
                if pending.is_empty() {
                    return Ok(());
                }
                let [_, h, w] = net.input_shape();
                let plane = h * w;
                let mut data = vec![0.0f32; pending.len() * plane];
                for (slot, (_, tensor, _)) in pending.iter().enumerate() {
                    data[slot * plane..(slot + 1) * plane].copy_from_slice(tensor.data());
                }
                let x = Tensor::new(vec![pending.len(), 1, h, w], data)?;
                let infer_started = Instant::now();
                let logits = net.forward(&x, Phase::Infer)?;
                let probs = softmax_rows(&logits)?;
                inference_seconds += infer_started.elapsed().as_secs_f64();
                let done = Instant::now();
                for (slot, (frame, _, begun)) in pending.iter().enumerate() {
                    scores[*frame] = probs[slot * classes + diag];
                    latencies[*frame] = done.duration_since(*begun).as_secs_f64() * 1e3;
                }
                pending.clear();
                Ok(())
            };
        for item in ready_rx {
            pending.push(item);
            if pending.len() == batch {
                flush(&mut pending)?;
            }
        }
        flush(&mut pending)?;

        decode
            .join()
            .map_err(|_| StreamError::Stage("decode stage panicked".into()))?
            .map_err(StreamError::Stage)?;
        preprocess
            .join()
            .map_err(|_| StreamError::Stage("preprocess stage panicked".into()))?
            .map_err(StreamError::Stage)?;
        Ok((scores, latencies, inference_seconds))
    })?;
    let (scores, latencies, inference_seconds) = outcome;
    let wall_seconds = started.elapsed().as_secs_f64();

    // Batch evaluation over the same frames must agree exactly.
    let images: Vec<GrayImage> = manifest
        .records
        .iter()
        .map(|r| read_pgm(manifest.resolve(r)).map_err(|e| StreamError::Stage(e.to_string())))
        .collect::<Result<_, _>>()?;
    let all: Vec<usize> = (0..frames).collect();
    let batch_scores = score_images(net, &images, &all, 64)?;
    for (frame, (&streamed, &batched)) in scores.iter().zip(&batch_scores).enumerate() {
        if streamed.to_bits() != batched.to_bits() {
            return Err(StreamError::Mismatch {
                frame,
                streamed,
                batch: batched,
            });
        }
    }

    let report = StreamBenchReport {
        frames,
        batch,
        wall_seconds,
        end_to_end_images_per_second: frames as f64 / wall_seconds,
        inference_seconds,
        inference_images_per_second: if inference_seconds > 0.0 {
            frames as f64 / inference_seconds
        } else {
            f64::INFINITY
        },
        latency_ms: LatencyPercentilesMs {
            p50: percentile(&latencies, 50.0),
            p90: percentile(&latencies, 90.0),
            p99: percentile(&latencies, 99.0),
        },
        matches_batch_eval: true,
        reference_gpu_full_alexnet_images_per_second: REFERENCE_GPU_FULL_ALEXNET_FPS,
    };
    Ok(StreamOutcome { scores, report })
}

/// Nearest-rank percentile of an unsorted sample.
fn percentile(values: &[f64], p: f64) -> f64 {
    if values.is_empty() {
        return 0.0;
    }
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    let rank = ((p / 100.0) * sorted.len() as f64).ceil().max(1.0) as usize;
    sorted[rank.min(sorted.len()) - 1]
}
