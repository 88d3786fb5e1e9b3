//! In-scope accuracy, out-of-scope false positive rate, threshold sweeps
//! and report rendering.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::corpus::{Dataset, DatasetKind};
use crate::pipeline::{Decision, Pipeline, PipelineError};

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("{decisions} decisions but {gold} gold labels")]
    LengthMismatch { decisions: usize, gold: usize },
    #[error("cannot compute a metric over zero samples")]
    Empty,
    #[error("dataset `{name}` is {found}, expected {expected}")]
    WrongKind {
        name: String,
        found: DatasetKind,
        expected: &'static str,
    },
    #[error("example #{0} of the labeled set has no gold intent")]
    MissingGold(usize),
    #[error("sweep thresholds must be ascending and within [0, 1]")]
    UnsortedThresholds,
    #[error("{metric} increased from {before} to {after} between thresholds {from} and {to}")]
    NonMonotone {
        metric: &'static str,
        from: f64,
        to: f64,
        before: f64,
        after: f64,
    },
    #[error("{field} = {value} is outside [0, 100]")]
    PercentRange { field: &'static str, value: f64 },
    #[error(transparent)]
    Pipeline(#[from] PipelineError),
}

/// Correct-and-accepted decisions over all samples. Rejected in-scope
/// samples count as errors.
pub fn in_scope_accuracy<S: AsRef<str>>(
    decisions: &[Decision],
    gold: &[S],
) -> Result<f64, EvalError> {
    if decisions.len() != gold.len() {
        return Err(EvalError::LengthMismatch {
            decisions: decisions.len(),
            gold: gold.len(),
        });
    }
    if decisions.is_empty() {
        return Err(EvalError::Empty);
    }
    let correct = decisions
        .iter()
        .zip(gold)
        .filter(|(d, g)| d.intent_id() == Some(g.as_ref()))
        .count();
    Ok(correct as f64 / decisions.len() as f64)
}

/// Fraction of decisions on out-of-scope utterances that accepted any intent.
pub fn oos_fpr(decisions: &[Decision]) -> Result<f64, EvalError> {
    if decisions.is_empty() {
        return Err(EvalError::Empty);
    }
    let accepted = decisions.iter().filter(|d| d.is_in_scope()).count();
    Ok(accepted as f64 / decisions.len() as f64)
}

/// Gold labels of an in-scope dataset, in example order.
pub fn gold_labels(dataset: &Dataset) -> Result<Vec<&str>, EvalError> {
    if dataset.kind == DatasetKind::Oos {
        return Err(EvalError::WrongKind {
            name: dataset.name.clone(),
            found: dataset.kind,
            expected: "an in-scope dataset",
        });
    }
    dataset
        .examples
        .iter()
        .enumerate()
        .map(|(i, e)| e.intent_id.as_deref().ok_or(EvalError::MissingGold(i)))
        .collect()
}

fn require_oos(dataset: &Dataset) -> Result<(), EvalError> {
    if dataset.kind != DatasetKind::Oos {
        return Err(EvalError::WrongKind {
            name: dataset.name.clone(),
            found: dataset.kind,
            expected: "oos",
        });
    }
    Ok(())
}

pub fn classify_all(pipeline: &Pipeline, dataset: &Dataset) -> Result<Vec<Decision>, EvalError> {
    dataset
        .examples
        .iter()
        .map(|e| pipeline.classify(&e.text).map_err(EvalError::from))
        .collect()
}

fn classify_all_at(
    pipeline: &Pipeline,
    dataset: &Dataset,
    threshold: f64,
) -> Result<Vec<Decision>, EvalError> {
    dataset
        .examples
        .iter()
        .map(|e| {
            pipeline
                .classify_at(&e.text, threshold)
                .map_err(EvalError::from)
        })
        .collect()
}

/// Both metrics for `pipeline` in its configured mode.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Metrics {
    pub in_scope_accuracy: f64,
    pub oos_fpr: f64,
}

pub fn evaluate(
    pipeline: &Pipeline,
    labeled: &Dataset,
    oos: &Dataset,
) -> Result<Metrics, EvalError> {
    let gold = gold_labels(labeled)?;
    require_oos(oos)?;
    Ok(Metrics {
        in_scope_accuracy: in_scope_accuracy(&classify_all(pipeline, labeled)?, &gold)?,
        oos_fpr: oos_fpr(&classify_all(pipeline, oos)?)?,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SweepRow {
    pub threshold: f64,
    pub accuracy: f64,
    pub fpr: f64,
}

/// Vector-gate metrics at each threshold. Fails if either metric ever
/// increases along the (ascending) thresholds.
pub fn sweep(
    pipeline: &Pipeline,
    labeled: &Dataset,
    oos: &Dataset,
    thresholds: &[f64],
) -> Result<Vec<SweepRow>, EvalError> {
    if thresholds.windows(2).any(|w| w[0] > w[1])
        || thresholds.iter().any(|t| !(0.0..=1.0).contains(t))
    {
        return Err(EvalError::UnsortedThresholds);
    }
    let gold = gold_labels(labeled)?;
    require_oos(oos)?;
    let mut rows: Vec<SweepRow> = Vec::with_capacity(thresholds.len());
    for &threshold in thresholds {
        let row = SweepRow {
            threshold,
            accuracy: in_scope_accuracy(&classify_all_at(pipeline, labeled, threshold)?, &gold)?,
            fpr: oos_fpr(&classify_all_at(pipeline, oos, threshold)?)?,
        };
        if let Some(prev) = rows.last() {
            for (metric, before, after) in [
                ("accuracy", prev.accuracy, row.accuracy),
                ("fpr", prev.fpr, row.fpr),
            ] {
                if after > before {
                    return Err(EvalError::NonMonotone {
                        metric,
                        from: prev.threshold,
                        to: threshold,
                        before,
                        after,
                    });
                }
            }
        }
        rows.push(row);
    }
    Ok(rows)
}

/// `steps` evenly spaced thresholds from 0 to 1 inclusive.
pub fn even_thresholds(steps: usize) -> Vec<f64> {
    match steps {
        0 => Vec::new(),
        1 => vec![0.0],
        n => (0..n).map(|i| i as f64 / (n - 1) as f64).collect(),
    }
}

pub fn render_sweep(rows: &[SweepRow]) -> String {
    let mut out = String::from("threshold,in_scope_accuracy,oos_fpr\n");
    for r in rows {
        let _ = writeln!(
            out,
            "{:.3},{:.1},{:.1}",
            r.threshold,
            r.accuracy * 100.0,
            r.fpr * 100.0
        );
    }
    out
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportRow {
    pub model_name: String,
    /// Percent.
    pub in_scope_accuracy: f64,
    /// Percent.
    pub oos_fpr: f64,
}

impl ReportRow {
    pub fn new(
        model_name: impl Into<String>,
        in_scope_accuracy: f64,
        oos_fpr: f64,
    ) -> Result<Self, EvalError> {
        for (field, value) in [
            ("in_scope_accuracy", in_scope_accuracy),
            ("oos_fpr", oos_fpr),
        ] {
            if !(0.0..=100.0).contains(&value) {
                return Err(EvalError::PercentRange { field, value });
            }
        }
        Ok(Self {
            model_name: model_name.into(),
            in_scope_accuracy,
            oos_fpr,
        })
    }

    pub fn from_metrics(
        model_name: impl Into<String>,
        metrics: Metrics,
    ) -> Result<Self, EvalError> {
        Self::new(
            model_name,
            metrics.in_scope_accuracy * 100.0,
            metrics.oos_fpr * 100.0,
        )
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ReportMetadata {
    /// Sample count per evaluated split.
    pub dataset_sizes: BTreeMap<String, usize>,
    pub config_hash: Option<String>,
    /// Left empty unless explicitly requested, so reports stay reproducible.
    pub timestamp: Option<String>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub rows: Vec<ReportRow>,
    pub metadata: ReportMetadata,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ReportFormat {
    #[default]
    Table,
    Csv,
}

impl std::str::FromStr for ReportFormat {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "table" | "text" => Ok(ReportFormat::Table),
            "csv" => Ok(ReportFormat::Csv),
            other => Err(format!(
                "unknown report format `{other}` (expected table or csv)"
            )),
        }
    }
}

/// Short SHA-256 of the JSON encoding of `config`.
pub fn config_hash<T: Serialize>(config: &T) -> String {
    let json = serde_json::to_vec(config).expect("config serializes");
    hex::encode(&Sha256::digest(&json)[..8])
}

const HEADERS: [&str; 3] = ["Model Name", "In-scope Accuracy", "Out-of-scope FPR"];

pub fn render_report(report: &EvalReport, format: ReportFormat) -> String {
    match format {
        ReportFormat::Table => render_table(report),
        ReportFormat::Csv => render_csv(report),
    }
}

fn render_table(report: &EvalReport) -> String {
    let name_width = report
        .rows
        .iter()
        .map(|r| r.model_name.chars().count())
        .chain([HEADERS[0].len()])
        .max()
        .unwrap_or(0);
    let (acc_width, fpr_width) = (HEADERS[1].len(), HEADERS[2].len());
    let mut out = String::new();
    let _ = writeln!(
        out,
        "{:<name_width$} | {:>acc_width$} | {:>fpr_width$}",
        HEADERS[0], HEADERS[1], HEADERS[2]
    );
    let _ = writeln!(
        out,
        "{}-+-{}-+-{}",
        "-".repeat(name_width),
        "-".repeat(acc_width),
        "-".repeat(fpr_width)
    );
    for row in &report.rows {
        let _ = writeln!(
            out,
            "{:<name_width$} | {:>acc_width$.1} | {:>fpr_width$.1}",
            row.model_name, row.in_scope_accuracy, row.oos_fpr
        );
    }
    let meta = &report.metadata;
    for (split, n) in &meta.dataset_sizes {
        let _ = writeln!(out, "# {split}: {n} samples");
    }
    if let Some(hash) = &meta.config_hash {
        let _ = writeln!(out, "# config: {hash}");
    }
    if let Some(ts) = &meta.timestamp {
        let _ = writeln!(out, "# generated: {ts}");
    }
    out
}

fn render_csv(report: &EvalReport) -> String {
    let mut writer = csv::Writer::from_writer(Vec::new());
    writer
        .write_record(["model", "in_scope_accuracy", "oos_fpr"])
        .expect("in-memory write");
    for row in &report.rows {
        writer
            .write_record([
                row.model_name.as_str(),
                &format!("{:.1}", row.in_scope_accuracy),
                &format!("{:.1}", row.oos_fpr),
            ])
            .expect("in-memory write");
    }
    let bytes = writer.into_inner().expect("in-memory flush");
    String::from_utf8(bytes).expect("csv output is utf-8")
}
