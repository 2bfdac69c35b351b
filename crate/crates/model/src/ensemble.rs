//! Bagged forests and gradient-boosted trees.

use kgmcq_core::hashing::derive_seed;
use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::tree::{mean, RegressionTree, TreeParams};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ForestParams {
    pub n_trees: usize,
    pub tree: TreeParams,
    pub seed: u64,
}

impl Default for ForestParams {
    fn default() -> Self {
        Self { n_trees: 100, tree: TreeParams::default(), seed: 42 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RandomForest {
    pub trees: Vec<RegressionTree>,
    pub params: ForestParams,
}

impl RandomForest {
    /// Each tree sees a bootstrap sample drawn from its own seeded stream,
    /// so trees can be grown in parallel without changing the result.
    pub fn fit(x: &[Vec<f64>], y: &[f64], params: &ForestParams) -> Self {
        let n = x.len();
        let trees = (0..params.n_trees.max(1))
            .into_par_iter()
            .map(|t| {
                let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(params.seed, &["forest", &t.to_string()]));
                let boot: Vec<usize> = (0..n).map(|_| rng.gen_range(0..n)).collect();
                RegressionTree::fit(x, y, &boot, &params.tree)
            })
            .collect();
        Self { trees, params: *params }
    }

    pub fn predict(&self, row: &[f64]) -> f64 {
        mean(self.trees.iter().map(|t| t.predict(row)))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GbtParams {
    pub n_stages: usize,
    pub learning_rate: f64,
    pub max_depth: usize,
    pub min_samples_leaf: usize,
    /// Fraction of rows drawn without replacement for each stage.
    pub subsample: f64,
    pub seed: u64,
}

impl Default for GbtParams {
    fn default() -> Self {
        Self { n_stages: 100, learning_rate: 0.1, max_depth: 3, min_samples_leaf: 1, subsample: 1.0, seed: 42 }
    }
}

impl GbtParams {
    /// The regularized variant: per-stage subsampling of 80% of rows.
    pub fn subsampled() -> Self {
        Self { subsample: 0.8, ..Self::default() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GradientBoosting {
    pub init: f64,
    pub stages: Vec<RegressionTree>,
    pub params: GbtParams,
}

impl GradientBoosting {
    pub fn fit(x: &[Vec<f64>], y: &[f64], params: &GbtParams) -> Self {
        let n = x.len();
        let init = mean(y.iter().copied());
        let mut pred = vec![init; n];
        let tree_params = TreeParams {
            max_depth: Some(params.max_depth),
            min_samples_leaf: params.min_samples_leaf,
            min_samples_split: 2,
        };
        let take = ((n as f64 * params.subsample).floor() as usize).clamp(1, n.max(1));
        let mut stages = Vec::with_capacity(params.n_stages);
        for s in 0..params.n_stages {
            let residual: Vec<f64> = y.iter().zip(&pred).map(|(t, p)| t - p).collect();
            let rows: Vec<usize> = if take < n {
                let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(params.seed, &["gbt", &s.to_string()]));
                let mut r = sample(&mut rng, n, take).into_vec();
                r.sort_unstable();
                r
            } else {
                (0..n).collect()
            };
            let tree = RegressionTree::fit(x, &residual, &rows, &tree_params);
            for (p, row) in pred.iter_mut().zip(x) {
                *p += params.learning_rate * tree.predict(row);
            }
            stages.push(tree);
        }
        Self { init, stages, params: *params }
    }

    pub fn predict(&self, row: &[f64]) -> f64 {
        let mut v = self.init;
        for t in &self.stages {
            v += self.params.learning_rate * t.predict(row);
        }
        v
    }
}
