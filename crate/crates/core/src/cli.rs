//! Command implementations behind the `cle-triage` binary. Kept
//! clap-free at the edges so integration tests can call them directly.

use std::path::Path;
use std::time::Instant;

use anyhow::{bail, Context, Result};

use crate::data::{
    generate_synthetic_dataset, load_images, load_manifest, DatasetManifest, GrayImage,
    SynthConfig, MANIFEST_FILE,
};
use crate::entropy::entropy_classifier;
use crate::metrics::ScoredItem;
use crate::nets::{
    build_full_alexnet, build_mini_alexnet, build_mini_inception_net, load_checkpoint, NetSpec,
};
use crate::report::{build_run_report, write_curves_csv, write_json, write_roc_csv, write_roc_svg, Timing};
use crate::stream::stream_bench;
use crate::trainer::{cross_validate, score_images, TrainConfig};

#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
pub enum Arch {
    MiniAlexnet,
    MiniInception,
    FullAlexnet,
}

impl Arch {
    pub fn spec(self) -> NetSpec {
        match self {
            Arch::MiniAlexnet => build_mini_alexnet(),
            Arch::MiniInception => build_mini_inception_net(),
            Arch::FullAlexnet => build_full_alexnet(),
        }
    }
}

pub fn checkpoint_filename(fold: usize) -> String {
    format!("checkpoint_fold{fold}.clet")
}

pub fn cmd_gen_data(n_per_class: usize, size: usize, seed: u64, out: &Path) -> Result<()> {
    let config = SynthConfig {
        n_per_class,
        image_size: size,
        seed,
    };
    generate_synthetic_dataset(&config, out)
        .with_context(|| format!("generating dataset under {}", out.display()))?;
    println!("{}", out.join(MANIFEST_FILE).display());
    Ok(())
}

fn load_dataset(manifest_path: &Path) -> Result<(DatasetManifest, Vec<GrayImage>)> {
    let manifest = load_manifest(manifest_path)
        .with_context(|| format!("loading manifest {}", manifest_path.display()))?;
    let images = load_images(&manifest).context("decoding manifest images")?;
    Ok((manifest, images))
}

pub fn cmd_train(
    manifest_path: &Path,
    arch: Arch,
    config_path: Option<&Path>,
    out_dir: &Path,
) -> Result<()> {
    let spec = arch.spec();
    let (manifest, images) = load_dataset(manifest_path)?;
    let [_, want_h, want_w] = spec.input;
    if let Some(img) = images
        .iter()
        .find(|img| (img.height(), img.width()) != (want_h, want_w))
    {
        bail!(
            "manifest images are {}x{} but architecture {} expects {}x{} input",
            img.height(),
            img.width(),
            spec.name,
            want_h,
            want_w
        );
    }

    let config: TrainConfig = match config_path {
        None => TrainConfig::default(),
        Some(path) => {
            let text = std::fs::read_to_string(path)
                .with_context(|| format!("reading config {}", path.display()))?;
            serde_json::from_str(&text)
                .with_context(|| format!("parsing config {}", path.display()))?
        }
    };

    std::fs::create_dir_all(out_dir)?;
    let started = Instant::now();
    let outcome = cross_validate(
        &spec,
        &images,
        &manifest.labels(),
        &manifest.folds(),
        &config,
    )?;
    let total_seconds = started.elapsed().as_secs_f64();

    for fold in &outcome.folds {
        fold.best.save(out_dir.join(checkpoint_filename(fold.fold)))?;
        write_curves_csv(
            &out_dir.join(format!("curves_fold{}.csv", fold.fold)),
            &fold.curves,
        )?;
    }

    let (mut report, _, _) = build_run_report(&spec.name, 0.5, &outcome.test_scores)?;
    report.config = Some(config);
    let scored: usize = outcome.test_scores.iter().map(Vec::len).sum();
    report.timing = Some(Timing {
        total_seconds,
        per_fold_seconds: Some(outcome.fold_seconds.clone()),
        scoring_images_per_second: Some(scored as f64 / outcome.scoring_seconds),
    });
    write_json(&out_dir.join("report.json"), &report)?;
    println!("{}", out_dir.join("report.json").display());
    Ok(())
}

/// Score each fold's test items with that fold's checkpoint.
fn score_folds(
    manifest: &DatasetManifest,
    images: &[GrayImage],
    checkpoints_dir: &Path,
) -> Result<(String, Vec<Vec<ScoredItem>>, f64)> {
    let k = manifest.fold_count();
    if k < 2 {
        bail!("manifest defines {k} folds; need at least 2");
    }
    let labels = manifest.labels();
    let folds = manifest.folds();
    let mut per_fold = Vec::with_capacity(k);
    let mut model = String::new();
    let mut scoring_seconds = 0.0f64;
    for fold in 0..k {
        let path = checkpoints_dir.join(checkpoint_filename(fold));
        let (mut net, _meta) = load_checkpoint(&path)
            .with_context(|| format!("loading checkpoint {}", path.display()))?;
        model = net.name().to_string();
        let test: Vec<usize> = (0..folds.len()).filter(|&i| folds[i] == fold).collect();
        if test.is_empty() {
            bail!("fold {fold} has no test items in the manifest");
        }
        let started = Instant::now();
        let scores = score_images(&mut net, images, &test, 64)?;
        scoring_seconds += started.elapsed().as_secs_f64();
        per_fold.push(
            scores
                .iter()
                .zip(&test)
                .map(|(&score, &i)| ScoredItem {
                    score,
                    truth: labels[i],
                })
                .collect(),
        );
    }
    Ok((model, per_fold, scoring_seconds))
}

fn write_roc_outputs(
    out_dir: &Path,
    curves: &[crate::metrics::RocCurve],
    mean_curve: &crate::metrics::RocCurve,
    title: &str,
) -> Result<()> {
    for (fold, curve) in curves.iter().enumerate() {
        write_roc_csv(&out_dir.join(format!("roc_fold{fold}.csv")), curve)?;
    }
    write_roc_csv(&out_dir.join("roc_mean.csv"), mean_curve)?;
    write_roc_svg(&out_dir.join("roc.svg"), curves, mean_curve, title)?;
    Ok(())
}

pub fn cmd_eval(
    manifest_path: &Path,
    checkpoints_dir: &Path,
    threshold: f64,
    out_dir: &Path,
) -> Result<()> {
    if !(0.0..=1.0).contains(&threshold) {
        bail!("threshold {threshold} outside [0, 1]");
    }
    let (manifest, images) = load_dataset(manifest_path)?;
    std::fs::create_dir_all(out_dir)?;
    let started = Instant::now();
    let (model, per_fold, scoring_seconds) = score_folds(&manifest, &images, checkpoints_dir)?;
    let scored: usize = per_fold.iter().map(Vec::len).sum();
    let (mut report, curves, mean_curve) = build_run_report(&model, threshold, &per_fold)?;
    report.timing = Some(Timing {
        total_seconds: started.elapsed().as_secs_f64(),
        per_fold_seconds: None,
        scoring_images_per_second: Some(scored as f64 / scoring_seconds),
    });
    write_json(&out_dir.join("report.json"), &report)?;
    write_roc_outputs(out_dir, &curves, &mean_curve, &format!("ROC: {model}"))?;
    println!("{}", out_dir.join("report.json").display());
    Ok(())
}

pub fn cmd_roc(manifest_path: &Path, checkpoints_dir: &Path, out_dir: &Path) -> Result<()> {
    let (manifest, images) = load_dataset(manifest_path)?;
    std::fs::create_dir_all(out_dir)?;
    let (model, per_fold, _) = score_folds(&manifest, &images, checkpoints_dir)?;
    let (_, curves, mean_curve) = build_run_report(&model, 0.5, &per_fold)?;
    write_roc_outputs(out_dir, &curves, &mean_curve, &format!("ROC: {model}"))?;
    println!("{}", out_dir.join("roc.svg").display());
    Ok(())
}

pub fn cmd_entropy_eval(manifest_path: &Path, threshold: f64, out_dir: &Path) -> Result<()> {
    if !(0.0..=1.0).contains(&threshold) {
        bail!("threshold {threshold} outside [0, 1]");
    }
    let manifest = load_manifest(manifest_path)
        .with_context(|| format!("loading manifest {}", manifest_path.display()))?;
    let k = manifest.fold_count();
    if k < 2 {
        bail!("manifest defines {k} folds; need at least 2");
    }
    std::fs::create_dir_all(out_dir)?;
    let started = Instant::now();
    let run = entropy_classifier(&manifest);
    let scoring_seconds = started.elapsed().as_secs_f64();
    if !run.skipped.is_empty() {
        println!("skipped {} unreadable image(s):", run.skipped.len());
        for (path, error) in &run.skipped {
            println!("  {path}: {error}");
        }
    }
    let mut per_fold: Vec<Vec<ScoredItem>> = vec![Vec::new(); k];
    let mut scores_csv = String::from("path,label,entropy_norm\n");
    for (record_idx, item) in &run.items {
        let record = &manifest.records[*record_idx];
        per_fold[record.fold].push(*item);
        let label = if record.label.is_diagnostic() {
            "diagnostic"
        } else {
            "nondiagnostic"
        };
        scores_csv.push_str(&format!("{},{},{}\n", record.path, label, item.score));
    }
    std::fs::write(out_dir.join("entropy_scores.csv"), scores_csv)?;
    let (mut report, curves, mean_curve) =
        build_run_report("entropy-baseline", threshold, &per_fold)?;
    report.timing = Some(Timing {
        total_seconds: started.elapsed().as_secs_f64(),
        per_fold_seconds: None,
        scoring_images_per_second: Some(run.items.len() as f64 / scoring_seconds),
    });
    write_json(&out_dir.join("report.json"), &report)?;
    write_roc_outputs(out_dir, &curves, &mean_curve, "ROC: entropy baseline")?;
    println!("{}", out_dir.join("report.json").display());
    Ok(())
}

pub fn cmd_stream_bench(checkpoint_path: &Path, manifest_path: &Path, batch: usize) -> Result<()> {
    let manifest = load_manifest(manifest_path)
        .with_context(|| format!("loading manifest {}", manifest_path.display()))?;
    let (mut net, _meta) = load_checkpoint(checkpoint_path)
        .with_context(|| format!("loading checkpoint {}", checkpoint_path.display()))?;
    let outcome = stream_bench(&mut net, &manifest, batch)?;
    println!(
        "{}",
        serde_json::to_string_pretty(&outcome.report).expect("report serializes")
    );
    Ok(())
}

/// Build the global worker pool, capped by `CLE_TRIAGE_THREADS` when set.
pub fn init_thread_pool() {
    let mut builder = rayon::ThreadPoolBuilder::new();
    if let Ok(value) = std::env::var("CLE_TRIAGE_THREADS") {
        if let Ok(threads) = value.trim().parse::<usize>() {
            if threads >= 1 {
                builder = builder.num_threads(threads);
            }
        }
    }
    // A second call (e.g. in tests) keeps the existing pool.
    let _ = builder.build_global();
}
