//! Metric tables, prediction point files and histogram data.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::ablation::AblationRun;
use crate::importance::FeatureImportance;
use crate::metrics::histogram;
use crate::{ModelError, ModelReport};

pub const HISTOGRAM_BINS: usize = 20;

fn opt(v: Option<f64>, f: impl Fn(f64) -> String) -> String {
    v.map_or_else(|| "n/a".to_string(), f)
}

fn table(rows: &[(String, &ModelReport)], first: &str) -> String {
    let width = rows.iter().map(|(n, _)| n.len()).chain([first.len()]).max().unwrap_or(0);
    let mut s = String::new();
    let _ = writeln!(
        s,
        "{first:<width$}  {:>7}  {:>7}  {:>7}  {:>8}  {:>5}  {:>5}",
        "RMSE", "MAE", "R2", "Spearman", "train", "test"
    );
    for (name, r) in rows {
        let _ = writeln!(
            s,
            "{name:<width$}  {:>7.4}  {:>7.4}  {:>7}  {:>8}  {:>5}  {:>5}",
            r.rmse,
            r.mae,
            opt(r.r2, |v| format!("{v:.4}")),
            opt(r.spearman, |v| format!("{:.1}%", v * 100.0)),
            r.n_train,
            r.n_test,
        );
    }
    s
}

/// Renders the model comparison table.
pub fn metrics_table(reports: &[ModelReport]) -> String {
    let rows: Vec<(String, &ModelReport)> = reports.iter().map(|r| (r.model.label().to_string(), r)).collect();
    table(&rows, "Model")
}

pub fn ablation_table(run: &AblationRun) -> String {
    let rows: Vec<(String, &ModelReport)> = run
        .entries
        .iter()
        .map(|e| {
            let name = if e.excluded.is_empty() { "(none)".to_string() } else { e.excluded.join("+") };
            let mark = if e.beats_baseline { " *" } else { "" };
            (format!("{name}{mark}"), &e.report)
        })
        .collect();
    let mut s = format!("model: {}  seed: {}\n", run.model.as_str(), run.seed);
    s.push_str(&table(&rows, "Excluded"));
    s.push_str("* lower RMSE or MAE than the full signal set\n");
    s
}

fn create(dir: &Path) -> Result<(), ModelError> {
    fs::create_dir_all(dir)?;
    Ok(())
}

/// Writes `metrics.txt`, `metrics.json` and one `points_<model>.csv` per report.
pub fn emit_reports(reports: &[ModelReport], out_dir: &Path) -> Result<Vec<PathBuf>, ModelError> {
    if reports.is_empty() {
        return Err(ModelError::EmptyTest);
    }
    create(out_dir)?;
    let mut written = Vec::new();
    let txt = out_dir.join("metrics.txt");
    fs::write(&txt, metrics_table(reports))?;
    written.push(txt);
    let json = out_dir.join("metrics.json");
    fs::write(&json, serde_json::to_string_pretty(reports)? + "\n")?;
    written.push(json);
    for r in reports {
        let path = out_dir.join(format!("points_{}.csv", r.model.as_str()));
        let mut w = csv::Writer::from_path(&path)?;
        w.write_record(["mcq_id", "actual", "predicted", "raw"])?;
        for p in &r.points {
            w.write_record([p.mcq_id.clone(), p.actual.to_string(), p.predicted.to_string(), p.raw.to_string()])?;
        }
        w.flush()?;
        written.push(path);
    }
    Ok(written)
}

pub fn emit_ablation(run: &AblationRun, out_dir: &Path) -> Result<Vec<PathBuf>, ModelError> {
    create(out_dir)?;
    let txt = out_dir.join("ablation.txt");
    fs::write(&txt, ablation_table(run))?;
    let json = out_dir.join("ablation.json");
    fs::write(&json, serde_json::to_string_pretty(run)? + "\n")?;
    Ok(vec![txt, json])
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ImportanceReport {
    pub gain: Option<Vec<FeatureImportance>>,
    pub permutation: Vec<FeatureImportance>,
}

pub fn emit_importance(report: &ImportanceReport, out_dir: &Path) -> Result<PathBuf, ModelError> {
    create(out_dir)?;
    let path = out_dir.join("importance.json");
    fs::write(&path, serde_json::to_string_pretty(report)? + "\n")?;
    Ok(path)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Histogram {
    /// Bin edges over [0, 1]; one more than `counts`.
    pub edges: Vec<f64>,
    pub counts: Vec<usize>,
    pub total: usize,
}

impl Histogram {
    pub fn of(values: &[f64]) -> Self {
        Self {
            edges: (0..=HISTOGRAM_BINS).map(|i| i as f64 / HISTOGRAM_BINS as f64).collect(),
            counts: histogram(values, HISTOGRAM_BINS),
            total: values.len(),
        }
    }
}

/// Writes the label histogram as JSON; an empty label set is an error.
pub fn emit_histogram(labels: &[f64], path: &Path) -> Result<Histogram, ModelError> {
    if labels.is_empty() {
        return Err(ModelError::TooFewRows { need: 1, got: 0 });
    }
    if let Some(parent) = path.parent() {
        create(parent)?;
    }
    let h = Histogram::of(labels);
    fs::write(path, serde_json::to_string_pretty(&h)? + "\n")?;
    Ok(h)
}
