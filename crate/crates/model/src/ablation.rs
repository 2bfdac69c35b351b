//! Retraining with feature subsets removed.

use serde::{Deserialize, Serialize};

use crate::dataset::{split_indices, DEFAULT_TRAIN_RATIO};
use crate::{evaluate, fit_model, LabeledDataset, ModelError, ModelKind, ModelReport};

/// Features whose pairwise and joint removal is part of the default grid.
pub const PAIR_FEATURES: [&str; 3] = ["Reasoning", "DegreeCentrality", "AboveLargestGapCount"];

/// The exclusion expected to help when the signal set is noisy.
pub const WATCHED_PAIR: [&str; 2] = ["Reasoning", "AboveLargestGapCount"];

/// Baseline, every singleton, the three pairs, then the triple.
pub fn default_grid(feature_names: &[String]) -> Vec<Vec<String>> {
    let mut grid = vec![Vec::new()];
    grid.extend(feature_names.iter().map(|f| vec![f.clone()]));
    let p: Vec<String> = PAIR_FEATURES.iter().map(|s| s.to_string()).collect();
    grid.push(vec![p[0].clone(), p[1].clone()]);
    grid.push(vec![p[0].clone(), p[2].clone()]);
    grid.push(vec![p[1].clone(), p[2].clone()]);
    grid.push(p);
    grid
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationEntry {
    pub excluded: Vec<String>,
    pub report: ModelReport,
    /// Lower RMSE or lower MAE than the baseline.
    pub beats_baseline: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationRun {
    pub model: ModelKind,
    pub seed: u64,
    pub baseline: ModelReport,
    pub entries: Vec<AblationEntry>,
}

impl AblationRun {
    /// The entry excluding exactly `names` (order-insensitive).
    pub fn find(&self, names: &[&str]) -> Option<&AblationEntry> {
        self.entries.iter().find(|e| {
            e.excluded.len() == names.len()
                && names.iter().all(|n| e.excluded.iter().any(|x| x.eq_ignore_ascii_case(n)))
        })
    }

    /// Whether the watched pair scores at or below the baseline on RMSE or MAE.
    pub fn watched_pair_holds(&self) -> Option<bool> {
        let e = self.find(&WATCHED_PAIR)?;
        Some(e.report.rmse <= self.baseline.rmse || e.report.mae <= self.baseline.mae)
    }
}

/// Every set is trained and scored on the same seeded split.
pub fn ablation(
    ds: &LabeledDataset,
    sets: &[Vec<String>],
    kind: ModelKind,
    seed: u64,
) -> Result<AblationRun, ModelError> {
    ablation_with_ratio(ds, sets, kind, seed, DEFAULT_TRAIN_RATIO)
}

pub fn ablation_with_ratio(
    ds: &LabeledDataset,
    sets: &[Vec<String>],
    kind: ModelKind,
    seed: u64,
    train_ratio: f64,
) -> Result<AblationRun, ModelError> {
    let (train_idx, test_idx) = split_indices(ds.len(), train_ratio, seed)?;
    let run_one = |excluded: &[String]| -> Result<ModelReport, ModelError> {
        let reduced = ds.without(excluded)?;
        let (train, test) = (reduced.subset(&train_idx), reduced.subset(&test_idx));
        let model = fit_model(kind, &train, seed)?;
        evaluate(&model, &test, train.len(), seed, excluded)
    };
    let baseline = run_one(&[])?;
    let mut entries = Vec::with_capacity(sets.len());
    for set in sets {
        let report = if set.is_empty() { baseline.clone() } else { run_one(set)? };
        let beats_baseline = report.rmse < baseline.rmse || report.mae < baseline.mae;
        entries.push(AblationEntry { excluded: set.clone(), report, beats_baseline });
    }
    Ok(AblationRun { model: kind, seed, baseline, entries })
}
