//! Split-gain and permutation feature importances.

use kgmcq_core::hashing::derive_seed;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::metrics::rmse;
use crate::{FittedModel, LabeledDataset, ModelError, Regressor};

pub const PERMUTATION_REPEATS: usize = 10;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureImportance {
    pub feature: String,
    pub value: f64,
}

/// Summed squared-error reductions per feature over every split of every
/// tree, normalized to sum to 1. `None` for the linear model.
pub fn gain_importance(model: &FittedModel) -> Option<Vec<FeatureImportance>> {
    let trees: Vec<_> = match &model.regressor {
        Regressor::Linear(_) => return None,
        Regressor::RandomForest(f) => f.trees.iter().collect(),
        Regressor::Gbt(g) => g.stages.iter().collect(),
    };
    let mut totals = vec![0.0; model.feature_names.len()];
    for t in trees {
        for (acc, g) in totals.iter_mut().zip(&t.gains) {
            *acc += g;
        }
    }
    let sum: f64 = totals.iter().sum();
    if sum > 0.0 {
        totals.iter_mut().for_each(|v| *v /= sum);
    } else {
        log::warn!("model has no splits; importances are all zero");
    }
    Some(
        model
            .feature_names
            .iter()
            .zip(totals)
            .map(|(f, value)| FeatureImportance { feature: f.clone(), value })
            .collect(),
    )
}

/// Mean increase in test RMSE when one column is shuffled, over
/// [`PERMUTATION_REPEATS`] seeded shuffles.
pub fn permutation_importance(
    model: &FittedModel,
    test: &LabeledDataset,
    seed: u64,
) -> Result<Vec<FeatureImportance>, ModelError> {
    if test.is_empty() {
        return Err(ModelError::EmptyTest);
    }
    let x = test.x();
    let y = test.y();
    let score = |rows: &[Vec<f64>]| -> Result<f64, ModelError> {
        let pred = rows.iter().map(|r| model.predict(r).map(|p| p.value)).collect::<Result<Vec<_>, _>>()?;
        Ok(rmse(&pred, &y))
    };
    let base = score(&x)?;
    let mut out = Vec::with_capacity(model.feature_names.len());
    for (j, name) in model.feature_names.iter().enumerate() {
        let mut total = 0.0;
        for r in 0..PERMUTATION_REPEATS {
            let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, &["perm", name, &r.to_string()]));
            let mut column: Vec<f64> = x.iter().map(|row| row[j]).collect();
            column.shuffle(&mut rng);
            let mut shuffled = x.clone();
            for (row, v) in shuffled.iter_mut().zip(column) {
                row[j] = v;
            }
            total += score(&shuffled)? - base;
        }
        out.push(FeatureImportance { feature: name.clone(), value: total / PERMUTATION_REPEATS as f64 });
    }
    Ok(out)
}
