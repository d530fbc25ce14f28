//! Metrics and report generation: precision/recall/F1, ROC/AUC, latency
//! statistics, and the per-condition result tables.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::dataset::{make_ae_windows, make_cnn_windows, Trace};
use crate::detector::{stream_detect, tally_events};
use crate::error::{Error, Result};
use crate::models::{ae_features, AutoencoderModel, CnnModel, LstmModel, RandomForest};
use crate::sim::NormStats;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionCounts {
    pub tp: u64,
    pub fp: u64,
    pub tn: u64,
    #[serde(rename = "fn")]
    pub fn_: u64,
}

impl ConfusionCounts {
    pub fn total(&self) -> u64 {
        self.tp + self.fp + self.tn + self.fn_
    }

    pub fn observe(&mut self, predicted: bool, actual: bool) {
        match (predicted, actual) {
            (true, true) => self.tp += 1,
            (true, false) => self.fp += 1,
            (false, true) => self.fn_ += 1,
            (false, false) => self.tn += 1,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Prf1 {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    /// Set when any denominator was zero and the affected metric was
    /// reported as 0 by convention.
    pub degenerate: bool,
}

pub fn prf1(counts: &ConfusionCounts) -> Prf1 {
    let mut degenerate = false;
    let mut ratio = |num: u64, den: u64| -> f64 {
        if den == 0 {
            degenerate = true;
            0.0
        } else {
            num as f64 / den as f64
        }
    };
    let precision = ratio(counts.tp, counts.tp + counts.fp);
    let recall = ratio(counts.tp, counts.tp + counts.fn_);
    let f1 = if precision + recall == 0.0 {
        degenerate = true;
        0.0
    } else {
        2.0 * precision * recall / (precision + recall)
    };
    Prf1 {
        precision,
        recall,
        f1,
        degenerate,
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RocCurve {
    /// `(false-positive rate, true-positive rate)` from (0,0) to (1,1).
    pub points: Vec<(f64, f64)>,
    pub auc: f64,
}

/// Threshold sweep over the unique scores, descending, with tied scores
/// grouped into one step; AUC by the trapezoid rule.
pub fn roc_auc(scores: &[f64], labels: &[bool]) -> Result<RocCurve> {
    if scores.len() != labels.len() {
        return Err(Error::ShapeMismatch(format!(
            "{} scores for {} labels",
            scores.len(),
            labels.len()
        )));
    }
    if scores.is_empty() {
        return Err(Error::EmptyInput("no scores for ROC".into()));
    }
    if scores.iter().any(|s| s.is_nan()) {
        return Err(Error::InvalidConfig("NaN score in ROC input".into()));
    }
    let pos = labels.iter().filter(|&&l| l).count() as f64;
    let neg = labels.len() as f64 - pos;
    if pos == 0.0 || neg == 0.0 {
        return Err(Error::SingleClass);
    }

    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]));

    let mut points = vec![(0.0, 0.0)];
    let mut auc = 0.0;
    let (mut tp, mut fp) = (0u64, 0u64);
    let (mut last_fpr, mut last_tpr) = (0.0, 0.0);
    let mut i = 0;
    while i < order.len() {
        // Consume the whole tie group before emitting a point.
        let threshold = scores[order[i]];
        while i < order.len() && scores[order[i]] == threshold {
            if labels[order[i]] {
                tp += 1;
            } else {
                fp += 1;
            }
            i += 1;
        }
        let fpr = fp as f64 / neg;
        let tpr = tp as f64 / pos;
        auc += (fpr - last_fpr) * (tpr + last_tpr) / 2.0;
        points.push((fpr, tpr));
        last_fpr = fpr;
        last_tpr = tpr;
    }
    Ok(RocCurve { points, auc })
}

pub fn write_roc_points(path: &Path, curve: &RocCurve) -> Result<()> {
    let mut out = String::from("fpr,tpr\n");
    for (fpr, tpr) in &curve.points {
        out.push_str(&format!("{fpr},{tpr}\n"));
    }
    fs::write(path, out).map_err(|e| Error::io(format!("writing {}", path.display()), e))
}

/// Smoothed-detection bookkeeping for one LSTM row.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EventStats {
    pub buffer_capacity: usize,
    pub tp: usize,
    pub fp: usize,
    #[serde(rename = "fn")]
    pub fn_: usize,
    pub precision: f64,
    pub recall: f64,
    pub latency_min: Option<usize>,
    pub latency_mean: Option<f64>,
    pub latency_max: Option<usize>,
}

/// One model × condition line of the report.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ConditionRow {
    /// Attack condition, e.g. `"80/80"`.
    pub condition: String,
    pub model: String,
    /// What one prediction covers: `"window"` or `"sample"`.
    pub unit: String,
    pub counts: ConfusionCounts,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub degenerate: bool,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub auc: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub events: Option<EventStats>,
}

impl ConditionRow {
    fn from_counts(condition: &str, model: &str, unit: &str, counts: ConfusionCounts) -> Self {
        let m = prf1(&counts);
        ConditionRow {
            condition: condition.to_string(),
            model: model.to_string(),
            unit: unit.to_string(),
            counts,
            precision: m.precision,
            recall: m.recall,
            f1: m.f1,
            degenerate: m.degenerate,
            auc: None,
            events: None,
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub rows: Vec<ConditionRow>,
}

/// Per-window metrics for the grid classifier at threshold 0.5, stride 1.
pub fn evaluate_cnn(
    model: &CnnModel<f32>,
    traces: &[Trace],
    stats: &NormStats,
    condition: &str,
) -> Result<ConditionRow> {
    if traces.is_empty() {
        return Err(Error::EmptyInput("no traces to evaluate".into()));
    }
    let mut counts = ConfusionCounts::default();
    for (i, trace) in traces.iter().enumerate() {
        let windows = make_cnn_windows(&trace.normalized(stats), i, 1)?;
        let scores = model.score_windows(&windows)?;
        for (score, window) in scores.iter().zip(&windows) {
            counts.observe(*score >= 0.5, window.label);
        }
    }
    Ok(ConditionRow::from_counts(
        condition, "cnn", "window", counts,
    ))
}

/// Per-window metrics plus the ROC sweep for the reconstruction + forest
/// path at stride 1.
pub fn evaluate_ae_rf(
    ae: &AutoencoderModel<f32>,
    forest: &RandomForest,
    traces: &[Trace],
    stats: &NormStats,
    condition: &str,
) -> Result<(ConditionRow, RocCurve)> {
    if traces.is_empty() {
        return Err(Error::EmptyInput("no traces to evaluate".into()));
    }
    let mut counts = ConfusionCounts::default();
    let mut scores = Vec::new();
    let mut labels = Vec::new();
    for (i, trace) in traces.iter().enumerate() {
        let windows = make_ae_windows(&trace.normalized(stats), i)?;
        let features = ae_features(ae, &windows)?;
        for (row, window) in (0..windows.len()).zip(&windows) {
            let score = forest.score(features.row(row));
            counts.observe(score >= 0.5, window.label);
            scores.push(score);
            labels.push(window.label);
        }
    }
    let curve = roc_auc(&scores, &labels)?;
    let mut row = ConditionRow::from_counts(condition, "ae_rf", "window", counts);
    row.auc = Some(curve.auc);
    Ok((row, curve))
}

/// Per-sample raw metrics plus smoothed event statistics at one buffer
/// capacity.
pub fn evaluate_lstm(
    model: &LstmModel<f32>,
    traces: &[Trace],
    stats: &NormStats,
    buffer_capacity: usize,
    condition: &str,
) -> Result<ConditionRow> {
    if traces.is_empty() {
        return Err(Error::EmptyInput("no traces to evaluate".into()));
    }
    let mut counts = ConfusionCounts::default();
    let mut smoothed_per_trace = Vec::with_capacity(traces.len());
    for (i, trace) in traces.iter().enumerate() {
        let (_, records) = stream_detect(model, stats, trace, buffer_capacity, i)?;
        for (record, &label) in records.iter().zip(&trace.labels) {
            counts.observe(record.raw, label);
        }
        smoothed_per_trace.push(records.iter().map(|r| r.smoothed).collect::<Vec<bool>>());
    }
    let labels: Vec<&[bool]> = traces.iter().map(|t| t.labels.as_slice()).collect();
    let t = &tally_events(buffer_capacity, &smoothed_per_trace, &labels);
    let mut row = ConditionRow::from_counts(condition, "lstm", "sample", counts);
    row.events = Some(EventStats {
        buffer_capacity,
        tp: t.tp,
        fp: t.fp,
        fn_: t.fn_,
        precision: t.precision,
        recall: t.recall,
        latency_min: t.latency_min,
        latency_mean: t.latency_mean,
        latency_max: t.latency_max,
    });
    Ok(row)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ReportFormat {
    Json,
    Markdown,
}

pub fn render_report(report: &EvalReport, format: ReportFormat) -> String {
    match format {
        ReportFormat::Json => {
            serde_json::to_string_pretty(report).expect("report serializes") + "\n"
        }
        ReportFormat::Markdown => render_markdown(report),
    }
}

fn render_markdown(report: &EvalReport) -> String {
    let mut out = String::from("# Detection results\n\n");
    out.push_str("| condition | model | unit | precision | recall | f1 |\n");
    out.push_str("|---|---|---|---|---|---|\n");
    for row in &report.rows {
        out.push_str(&format!(
            "| {} | {} | {} | {:.3} | {:.3} | {:.3} |\n",
            row.condition, row.model, row.unit, row.precision, row.recall, row.f1
        ));
    }
    for row in &report.rows {
        if let Some(auc) = row.auc {
            out.push_str(&format!(
                "\nROC AUC ({} {}): {:.4}\n",
                row.condition, row.model, auc
            ));
        }
        if let Some(ev) = &row.events {
            out.push_str(&format!(
                "\nSmoothed events ({} {}, buffer {}): precision {:.3}, recall {:.3}\n",
                row.condition, row.model, ev.buffer_capacity, ev.precision, ev.recall
            ));
            match (ev.latency_min, ev.latency_mean, ev.latency_max) {
                (Some(lo), Some(mean), Some(hi)) => out.push_str(&format!(
                    "latency (samples): min {lo}, mean {mean:.2}, max {hi}\n"
                )),
                _ => out.push_str("latency (samples): no detections\n"),
            }
        }
        if row.degenerate {
            out.push_str(&format!(
                "\nnote: {} {} hit a zero denominator; affected metrics report 0\n",
                row.condition, row.model
            ));
        }
    }
    out
}
