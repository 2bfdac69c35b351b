//! Difficulty estimation: labeled datasets, regressors fitted from scratch,
//! evaluation, feature importances and exclusion ablations.

pub mod ablation;
pub mod dataset;
pub mod ensemble;
pub mod importance;
pub mod linear;
pub mod metrics;
pub mod report;
pub mod synthetic;
pub mod tree;

use std::fmt;
use std::str::FromStr;

use kgmcq_core::signals::SignalError;
use serde::{Deserialize, Serialize};

pub use dataset::{LabeledDataset, LabeledRow, RawRow, ResponseSummary};
pub use ensemble::{ForestParams, GbtParams, GradientBoosting, RandomForest};
pub use linear::LinearModel;
pub use metrics::{evaluate, ModelReport};

#[derive(Debug, thiserror::Error)]
pub enum ModelError {
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
    #[error("missing column `{0}`")]
    MissingColumn(String),
    #[error("row {row}: {message}")]
    Parse { row: usize, message: String },
    #[error("need at least {need} rows, got {got}")]
    TooFewRows { need: usize, got: usize },
    #[error("expected {expected} features, got {got}")]
    Arity { expected: usize, got: usize },
    #[error("unknown feature `{0}`")]
    UnknownFeature(String),
    #[error("every feature excluded")]
    NoFeatures,
    #[error("{id}: label {value} outside [0, 1]")]
    LabelRange { id: String, value: f64 },
    #[error("empty test set")]
    EmptyTest,
    #[error("unknown model kind `{0}` (expected linear, forest, gbt or gbt2)")]
    UnknownModel(String),
    #[error(transparent)]
    Signal(#[from] SignalError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModelKind {
    Linear,
    #[serde(rename = "forest", alias = "random_forest")]
    RandomForest,
    /// Boosting without subsampling.
    Gbt,
    /// Boosting with per-stage row subsampling.
    Gbt2,
}

impl ModelKind {
    pub const ALL: [ModelKind; 4] = [ModelKind::Linear, ModelKind::RandomForest, ModelKind::Gbt, ModelKind::Gbt2];

    /// Short name used on the command line and in file names.
    pub fn as_str(self) -> &'static str {
        match self {
            ModelKind::Linear => "linear",
            ModelKind::RandomForest => "forest",
            ModelKind::Gbt => "gbt",
            ModelKind::Gbt2 => "gbt2",
        }
    }

    pub fn label(self) -> &'static str {
        match self {
            ModelKind::Linear => "Linear Regression",
            ModelKind::RandomForest => "Random Forest",
            ModelKind::Gbt => "Gradient Boosting",
            ModelKind::Gbt2 => "Gradient Boosting (subsampled)",
        }
    }
}

impl fmt::Display for ModelKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for ModelKind {
    type Err = ModelError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_lowercase().as_str() {
            "linear" | "ols" => Ok(ModelKind::Linear),
            "forest" | "random_forest" | "rf" => Ok(ModelKind::RandomForest),
            "gbt" => Ok(ModelKind::Gbt),
            "gbt2" => Ok(ModelKind::Gbt2),
            other => Err(ModelError::UnknownModel(other.to_string())),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Regressor {
    Linear(LinearModel),
    RandomForest(RandomForest),
    Gbt(GradientBoosting),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FittedModel {
    pub kind: ModelKind,
    pub feature_names: Vec<String>,
    pub regressor: Regressor,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Prediction {
    /// Clamped to [0, 1].
    pub value: f64,
    pub raw: f64,
}

impl FittedModel {
    pub fn predict_raw(&self, features: &[f64]) -> Result<f64, ModelError> {
        if features.len() != self.feature_names.len() {
            return Err(ModelError::Arity { expected: self.feature_names.len(), got: features.len() });
        }
        Ok(match &self.regressor {
            Regressor::Linear(m) => m.predict(features),
            Regressor::RandomForest(m) => m.predict(features),
            Regressor::Gbt(m) => m.predict(features),
        })
    }

    pub fn predict(&self, features: &[f64]) -> Result<Prediction, ModelError> {
        let raw = self.predict_raw(features)?;
        Ok(Prediction { value: raw.clamp(0.0, 1.0), raw })
    }

    pub fn predict_all(&self, ds: &LabeledDataset) -> Result<Vec<Prediction>, ModelError> {
        ds.rows.iter().map(|r| self.predict(&r.features)).collect()
    }

    pub fn save(&self, path: &std::path::Path) -> Result<(), ModelError> {
        std::fs::write(path, serde_json::to_string(self)?)?;
        Ok(())
    }

    pub fn load(path: &std::path::Path) -> Result<Self, ModelError> {
        Ok(serde_json::from_str(&std::fs::read_to_string(path)?)?)
    }
}

/// Fits `kind` with its default hyperparameters and the given seed.
pub fn fit_model(kind: ModelKind, train: &LabeledDataset, seed: u64) -> Result<FittedModel, ModelError> {
    if train.is_empty() {
        return Err(ModelError::TooFewRows { need: 1, got: 0 });
    }
    let (x, y) = (train.x(), train.y());
    let regressor = match kind {
        ModelKind::Linear => Regressor::Linear(LinearModel::fit(&x, &y)),
        ModelKind::RandomForest => {
            Regressor::RandomForest(RandomForest::fit(&x, &y, &ForestParams { seed, ..Default::default() }))
        }
        ModelKind::Gbt => Regressor::Gbt(GradientBoosting::fit(&x, &y, &GbtParams { seed, ..Default::default() })),
        ModelKind::Gbt2 => {
            Regressor::Gbt(GradientBoosting::fit(&x, &y, &GbtParams { seed, ..GbtParams::subsampled() }))
        }
    };
    Ok(FittedModel { kind, feature_names: train.feature_names.clone(), regressor })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny() -> LabeledDataset {
        let rows: Vec<RawRow> = (0..6)
            .map(|i| RawRow {
                mcq_id: format!("q{i}"),
                raw: [i as f64, 0.0, 1.0, 0.5, 0.2, 3.0, 60.0, 1.0, (i % 2) as f64],
                difficulty: 0.1 * i as f64,
                liking: None,
                responses: Some(10),
            })
            .collect();
        dataset::build_dataset(&rows, None).unwrap()
    }

    #[test]
    fn kind_names_roundtrip() {
        for k in ModelKind::ALL {
            assert_eq!(k.as_str().parse::<ModelKind>().unwrap(), k);
        }
        assert!("xgb".parse::<ModelKind>().is_err());
    }

    #[test]
    fn clamp_keeps_raw() {
        let m = FittedModel {
            kind: ModelKind::Linear,
            feature_names: vec!["a".into()],
            regressor: Regressor::Linear(LinearModel { coefficients: vec![1.0], intercept: 0.2, regularized: false }),
        };
        let p = m.predict(&[1.0]).unwrap();
        assert_eq!(p.value, 1.0);
        assert!((p.raw - 1.2).abs() < 1e-15);
        assert!(matches!(m.predict(&[1.0, 2.0]), Err(ModelError::Arity { expected: 1, got: 2 })));
    }

    #[test]
    fn every_kind_fits_and_serializes() {
        let ds = tiny();
        for k in ModelKind::ALL {
            let m = fit_model(k, &ds, 7).unwrap();
            let back: FittedModel = serde_json::from_str(&serde_json::to_string(&m).unwrap()).unwrap();
            let row = &ds.rows[3].features;
            assert_eq!(m.predict_raw(row).unwrap(), back.predict_raw(row).unwrap());
        }
    }
}
