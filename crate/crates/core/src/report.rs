//! Run reports (per-fold plus mean metrics), the shipped JSON schema, and
//! CSV/SVG emission for ROC curves and training curves.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::metrics::{
    classify_at_threshold, mean_roc, metrics, roc_curve, ConfusionCounts, MetricsError, RocCurve,
    ScoredItem,
};
use crate::trainer::{EpochStats, TrainConfig};

/// JSON schema the `report.json` files validate against.
pub const RUN_REPORT_SCHEMA: &str = include_str!("../schema/run_report.schema.json");

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FoldReport {
    pub fold: usize,
    pub counts: ConfusionCounts,
    pub accuracy: Option<f64>,
    pub sensitivity: Option<f64>,
    pub specificity: Option<f64>,
    pub auc: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MeanReport {
    pub accuracy: Option<f64>,
    pub sensitivity: Option<f64>,
    pub specificity: Option<f64>,
    pub auc: f64,
}

/// Wall-clock figures. Excluded when comparing reports for determinism.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Timing {
    pub total_seconds: f64,
    pub per_fold_seconds: Option<Vec<f64>>,
    pub scoring_images_per_second: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub model: String,
    pub threshold: f64,
    pub folds: Vec<FoldReport>,
    pub mean: MeanReport,
    pub config: Option<TrainConfig>,
    pub timing: Option<Timing>,
}

/// Metrics for one fold's scored test items at the given threshold, with
/// its ROC curve.
pub fn fold_report(
    fold: usize,
    items: &[ScoredItem],
    threshold: f64,
) -> Result<(FoldReport, RocCurve), MetricsError> {
    let counts = classify_at_threshold(items, threshold)?;
    let summary = metrics(&counts);
    let roc = roc_curve(items)?;
    Ok((
        FoldReport {
            fold,
            counts,
            accuracy: summary.accuracy,
            sensitivity: summary.sensitivity,
            specificity: summary.specificity,
            auc: roc.auc,
        },
        roc,
    ))
}

fn mean_of(values: impl Iterator<Item = Option<f64>>) -> Option<f64> {
    let defined: Vec<f64> = values.flatten().collect();
    if defined.is_empty() {
        None
    } else {
        Some(defined.iter().sum::<f64>() / defined.len() as f64)
    }
}

/// Arithmetic mean of the per-fold metric columns, as in the result tables.
pub fn mean_report(folds: &[FoldReport]) -> MeanReport {
    MeanReport {
        accuracy: mean_of(folds.iter().map(|f| f.accuracy)),
        sensitivity: mean_of(folds.iter().map(|f| f.sensitivity)),
        specificity: mean_of(folds.iter().map(|f| f.specificity)),
        auc: folds.iter().map(|f| f.auc).sum::<f64>() / folds.len() as f64,
    }
}

/// Assemble the full report plus per-fold and mean ROC curves.
pub fn build_run_report(
    model: &str,
    threshold: f64,
    per_fold_items: &[Vec<ScoredItem>],
) -> Result<(RunReport, Vec<RocCurve>, RocCurve), MetricsError> {
    let mut folds = Vec::with_capacity(per_fold_items.len());
    let mut curves = Vec::with_capacity(per_fold_items.len());
    for (fold, items) in per_fold_items.iter().enumerate() {
        let (report, roc) = fold_report(fold, items, threshold)?;
        folds.push(report);
        curves.push(roc);
    }
    if folds.is_empty() {
        return Err(MetricsError::Validation("report without folds".into()));
    }
    let mean_curve = mean_roc(&curves)?;
    let report = RunReport {
        model: model.to_string(),
        threshold,
        mean: mean_report(&folds),
        folds,
        config: None,
        timing: None,
    };
    Ok((report, curves, mean_curve))
}

pub fn write_json(path: &Path, report: &RunReport) -> std::io::Result<()> {
    let mut text = serde_json::to_string_pretty(report).expect("report serializes");
    text.push('\n');
    fs::write(path, text)
}

/// `fpr,tpr,threshold` rows; the threshold column is empty for averaged
/// curves and `inf`/`-inf` at the sweep sentinels.
pub fn write_roc_csv(path: &Path, curve: &RocCurve) -> std::io::Result<()> {
    let mut out = String::from("fpr,tpr,threshold\n");
    for p in &curve.points {
        if p.threshold.is_nan() {
            out.push_str(&format!("{},{},\n", p.fpr, p.tpr));
        } else {
            out.push_str(&format!("{},{},{}\n", p.fpr, p.tpr, p.threshold));
        }
    }
    fs::write(path, out)
}

/// `epoch,train_loss,val_loss,val_acc` rows.
pub fn write_curves_csv(path: &Path, curves: &[EpochStats]) -> std::io::Result<()> {
    let mut out = String::from("epoch,train_loss,val_loss,val_acc\n");
    for c in curves {
        out.push_str(&format!(
            "{},{},{},{}\n",
            c.epoch, c.train_loss, c.val_loss, c.val_accuracy
        ));
    }
    fs::write(path, out)
}

const SVG_SIZE: f64 = 560.0;
const SVG_MARGIN: f64 = 70.0;

fn svg_x(fpr: f64) -> f64 {
    SVG_MARGIN + fpr * (SVG_SIZE - 2.0 * SVG_MARGIN)
}

fn svg_y(tpr: f64) -> f64 {
    SVG_SIZE - SVG_MARGIN - tpr * (SVG_SIZE - 2.0 * SVG_MARGIN)
}

fn polyline(curve: &RocCurve, style: &str) -> String {
    let mut points = String::new();
    for p in &curve.points {
        points.push_str(&format!("{:.2},{:.2} ", svg_x(p.fpr), svg_y(p.tpr)));
    }
    format!("  <polyline fill=\"none\" {style} points=\"{}\"/>\n", points.trim_end())
}

/// Hand-emitted SVG: one polyline per fold plus the bold mean curve,
/// sensitivity (TPR) against 1 - specificity (FPR).
pub fn write_roc_svg(
    path: &Path,
    fold_curves: &[RocCurve],
    mean_curve: &RocCurve,
    title: &str,
) -> std::io::Result<()> {
    let mut svg = String::new();
    svg.push_str(&format!(
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{0}\" height=\"{0}\" viewBox=\"0 0 {0} {0}\">\n",
        SVG_SIZE
    ));
    svg.push_str(&format!(
        "  <rect width=\"{0}\" height=\"{0}\" fill=\"white\"/>\n",
        SVG_SIZE
    ));
    svg.push_str(&format!(
        "  <text x=\"{:.2}\" y=\"30\" text-anchor=\"middle\" font-size=\"16\">{}</text>\n",
        SVG_SIZE / 2.0,
        title
    ));
    // Axes with ticks every 0.25.
    svg.push_str(&format!(
        "  <line x1=\"{0:.2}\" y1=\"{1:.2}\" x2=\"{2:.2}\" y2=\"{1:.2}\" stroke=\"black\"/>\n",
        svg_x(0.0),
        svg_y(0.0),
        svg_x(1.0)
    ));
    svg.push_str(&format!(
        "  <line x1=\"{0:.2}\" y1=\"{1:.2}\" x2=\"{0:.2}\" y2=\"{2:.2}\" stroke=\"black\"/>\n",
        svg_x(0.0),
        svg_y(0.0),
        svg_y(1.0)
    ));
    for i in 0..=4 {
        let v = i as f64 * 0.25;
        svg.push_str(&format!(
            "  <text x=\"{:.2}\" y=\"{:.2}\" text-anchor=\"middle\" font-size=\"11\">{v}</text>\n",
            svg_x(v),
            svg_y(0.0) + 18.0
        ));
        svg.push_str(&format!(
            "  <text x=\"{:.2}\" y=\"{:.2}\" text-anchor=\"end\" font-size=\"11\">{v}</text>\n",
            svg_x(0.0) - 8.0,
            svg_y(v) + 4.0
        ));
    }
    svg.push_str(&format!(
        "  <text x=\"{:.2}\" y=\"{:.2}\" text-anchor=\"middle\" font-size=\"13\">1 - specificity (FPR)</text>\n",
        SVG_SIZE / 2.0,
        SVG_SIZE - 18.0
    ));
    svg.push_str(&format!(
        "  <text x=\"20\" y=\"{:.2}\" text-anchor=\"middle\" font-size=\"13\" transform=\"rotate(-90 20 {:.2})\">sensitivity (TPR)</text>\n",
        SVG_SIZE / 2.0,
        SVG_SIZE / 2.0
    ));
    // Chance diagonal for reference.
    svg.push_str(&format!(
        "  <line x1=\"{:.2}\" y1=\"{:.2}\" x2=\"{:.2}\" y2=\"{:.2}\" stroke=\"#bbbbbb\" stroke-dasharray=\"5,5\"/>\n",
        svg_x(0.0),
        svg_y(0.0),
        svg_x(1.0),
        svg_y(1.0)
    ));
    for curve in fold_curves {
        svg.push_str(&polyline(curve, "stroke=\"#7aa6c2\" stroke-width=\"1\""));
    }
    svg.push_str(&polyline(mean_curve, "stroke=\"#c0392b\" stroke-width=\"2.5\""));
    svg.push_str("</svg>\n");
    fs::write(path, svg)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::Label;

    fn items(scores: &[(f64, bool)]) -> Vec<ScoredItem> {
        scores
            .iter()
            .map(|&(score, diag)| ScoredItem {
                score,
                truth: if diag { Label::Diagnostic } else { Label::Nondiagnostic },
            })
            .collect()
    }

    fn sample_report() -> (RunReport, Vec<RocCurve>, RocCurve) {
        let fold_a = items(&[(0.9, true), (0.8, true), (0.4, false), (0.1, false)]);
        let fold_b = items(&[(0.7, true), (0.6, false), (0.5, true), (0.2, false)]);
        build_run_report("mini-alexnet", 0.5, &[fold_a, fold_b]).unwrap()
    }

    #[test]
    fn mean_fields_are_exact_fold_means() {
        let (report, _, _) = sample_report();
        let acc_mean = report.folds.iter().map(|f| f.accuracy.unwrap()).sum::<f64>()
            / report.folds.len() as f64;
        assert!((report.mean.accuracy.unwrap() - acc_mean).abs() < 1e-12);
        let auc_mean =
            report.folds.iter().map(|f| f.auc).sum::<f64>() / report.folds.len() as f64;
        assert!((report.mean.auc - auc_mean).abs() < 1e-12);
    }

    #[test]
    fn mean_row_reproduces_published_rounding() {
        // Fold accuracies 91.35, 90.69, 90.66, 90.45 (percent) average to
        // 90.79 at two decimals.
        let folds: Vec<FoldReport> = [0.9135, 0.9069, 0.9066, 0.9045]
            .iter()
            .enumerate()
            .map(|(fold, &accuracy)| FoldReport {
                fold,
                counts: ConfusionCounts { tp: 1, fp: 1, tn: 1, fn_: 1 },
                accuracy: Some(accuracy),
                sensitivity: None,
                specificity: None,
                auc: 0.95,
            })
            .collect();
        let mean = mean_report(&folds);
        assert!((mean.accuracy.unwrap() * 100.0 - 90.79).abs() <= 0.005);
    }

    #[test]
    fn report_validates_against_the_shipped_schema() {
        let (mut report, _, _) = sample_report();
        report.timing = Some(Timing {
            total_seconds: 1.5,
            per_fold_seconds: Some(vec![0.7, 0.8]),
            scoring_images_per_second: None,
        });
        let schema = serde_json::from_str(RUN_REPORT_SCHEMA).unwrap();
        let compiled = jsonschema::JSONSchema::compile(&schema).unwrap();
        let value = serde_json::to_value(&report).unwrap();
        let result = compiled.validate(&value);
        if let Err(errors) = result {
            let msgs: Vec<String> = errors.map(|e| e.to_string()).collect();
            panic!("schema violations: {msgs:?}");
        }
    }

    #[test]
    fn undefined_metrics_serialize_as_null() {
        let (mut report, _, _) = sample_report();
        report.folds[0].sensitivity = None;
        let value = serde_json::to_value(&report).unwrap();
        assert!(value["folds"][0]["sensitivity"].is_null());
    }

    #[test]
    fn roc_csv_shape() {
        let (_, curves, mean_curve) = sample_report();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("roc.csv");
        write_roc_csv(&path, &curves[0]).unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines[0], "fpr,tpr,threshold");
        assert!(lines[1].starts_with("0,0,inf"));
        assert!(lines.last().unwrap().starts_with("1,1,"));

        let mean_path = dir.path().join("roc_mean.csv");
        write_roc_csv(&mean_path, &mean_curve).unwrap();
        let mean_text = std::fs::read_to_string(&mean_path).unwrap();
        assert!(mean_text.lines().nth(1).unwrap().ends_with(','));
    }

    #[test]
    fn svg_has_one_polyline_per_fold_plus_mean() {
        let (_, curves, mean_curve) = sample_report();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("roc.svg");
        write_roc_svg(&path, &curves, &mean_curve, "ROC").unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        assert_eq!(text.matches("<polyline").count(), curves.len() + 1);
        assert!(text.contains("1 - specificity (FPR)"));
        assert!(text.contains("sensitivity (TPR)"));
    }
}
