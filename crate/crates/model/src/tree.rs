//! CART regression trees grown by squared-error reduction.

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TreeParams {
    /// `None` grows until leaves are pure or too small to split.
    pub max_depth: Option<usize>,
    pub min_samples_leaf: usize,
    pub min_samples_split: usize,
}

impl Default for TreeParams {
    fn default() -> Self {
        Self { max_depth: None, min_samples_leaf: 1, min_samples_split: 2 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum Node {
    Leaf { value: f64 },
    Split { feature: usize, threshold: f64, left: usize, right: usize },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegressionTree {
    pub nodes: Vec<Node>,
    pub n_features: usize,
    /// Summed squared-error reduction of the splits on each feature.
    pub gains: Vec<f64>,
}

struct Best {
    feature: usize,
    threshold: f64,
    gain: f64,
    split_at: usize,
}

impl RegressionTree {
    /// Fits on the rows listed in `sample` (indices may repeat).
    pub fn fit(x: &[Vec<f64>], y: &[f64], sample: &[usize], params: &TreeParams) -> Self {
        let n_features = x.first().map_or(0, Vec::len);
        let mut tree = RegressionTree { nodes: Vec::new(), n_features, gains: vec![0.0; n_features] };
        let mut idx = sample.to_vec();
        tree.grow(x, y, &mut idx, 0, params);
        tree
    }

    fn grow(&mut self, x: &[Vec<f64>], y: &[f64], idx: &mut [usize], depth: usize, p: &TreeParams) -> usize {
        let id = self.nodes.len();
        let value = mean(idx.iter().map(|&i| y[i]));
        self.nodes.push(Node::Leaf { value });
        let splittable = idx.len() >= p.min_samples_split.max(2)
            && idx.len() >= 2 * p.min_samples_leaf.max(1)
            && p.max_depth.is_none_or(|d| depth < d);
        if !splittable {
            return id;
        }
        let Some(best) = self.best_split(x, y, idx, p) else {
            return id;
        };
        self.gains[best.feature] += best.gain;
        idx.sort_by(|&a, &b| x[a][best.feature].total_cmp(&x[b][best.feature]).then(a.cmp(&b)));
        let (l, r) = idx.split_at_mut(best.split_at);
        let left = self.grow(x, y, l, depth + 1, p);
        let right = self.grow(x, y, r, depth + 1, p);
        self.nodes[id] = Node::Split { feature: best.feature, threshold: best.threshold, left, right };
        id
    }

    fn best_split(&self, x: &[Vec<f64>], y: &[f64], idx: &[usize], p: &TreeParams) -> Option<Best> {
        let n = idx.len();
        let total: f64 = idx.iter().map(|&i| y[i]).sum();
        let total_sq: f64 = idx.iter().map(|&i| y[i] * y[i]).sum();
        let parent_sse = total_sq - total * total / n as f64;
        let min_leaf = p.min_samples_leaf.max(1);
        let mut best: Option<Best> = None;
        let mut order = idx.to_vec();
        #[allow(clippy::needless_range_loop)] // f indexes columns of every row
        for f in 0..self.n_features {
            order.sort_by(|&a, &b| x[a][f].total_cmp(&x[b][f]).then(a.cmp(&b)));
            let (mut ls, mut lsq) = (0.0, 0.0);
            for k in 1..n {
                let yi = y[order[k - 1]];
                ls += yi;
                lsq += yi * yi;
                let (lo, hi) = (x[order[k - 1]][f], x[order[k]][f]);
                if lo == hi || k < min_leaf || n - k < min_leaf {
                    continue;
                }
                let (nl, nr) = (k as f64, (n - k) as f64);
                let rs = total - ls;
                let rsq = total_sq - lsq;
                let sse = (lsq - ls * ls / nl) + (rsq - rs * rs / nr);
                let gain = parent_sse - sse;
                if gain > 1e-12 && best.as_ref().is_none_or(|b| gain > b.gain) {
                    let mut threshold = lo + (hi - lo) / 2.0;
                    if threshold >= hi {
                        threshold = lo;
                    }
                    best = Some(Best { feature: f, threshold, gain, split_at: k });
                }
            }
        }
        best
    }

    pub fn predict(&self, row: &[f64]) -> f64 {
        let mut i = 0;
        loop {
            match self.nodes[i] {
                Node::Leaf { value } => return value,
                Node::Split { feature, threshold, left, right } => {
                    i = if row[feature] <= threshold { left } else { right };
                }
            }
        }
    }

    pub fn split_count(&self) -> usize {
        self.nodes.iter().filter(|n| matches!(n, Node::Split { .. })).count()
    }
}

pub(crate) fn mean(values: impl Iterator<Item = f64>) -> f64 {
    let (mut sum, mut n) = (0.0, 0usize);
    for v in values {
        sum += v;
        n += 1;
    }
    if n == 0 {
        0.0
    } else {
        sum / n as f64
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn step_function_is_split_at_midpoint() {
        let x: Vec<Vec<f64>> = (0..10).map(|i| vec![i as f64, 0.0]).collect();
        let y: Vec<f64> = (0..10).map(|i| if i < 4 { 1.0 } else { 5.0 }).collect();
        let all: Vec<usize> = (0..10).collect();
        let t = RegressionTree::fit(&x, &y, &all, &TreeParams::default());
        assert_eq!(t.split_count(), 1);
        assert_eq!(t.nodes[0], Node::Split { feature: 0, threshold: 3.5, left: 1, right: 2 });
        assert_eq!(t.predict(&[2.0, 9.0]), 1.0);
        assert_eq!(t.predict(&[7.0, 9.0]), 5.0);
        // gain = total SSE = 4*(1-3.4)^2 + 6*(5-3.4)^2
        assert!((t.gains[0] - (4.0 * 2.4f64.powi(2) + 6.0 * 1.6f64.powi(2))).abs() < 1e-9);
        assert_eq!(t.gains[1], 0.0);
    }

    #[test]
    fn depth_and_leaf_limits() {
        let x: Vec<Vec<f64>> = (0..16).map(|i| vec![i as f64]).collect();
        let y: Vec<f64> = (0..16).map(|i| (i * i) as f64).collect();
        let all: Vec<usize> = (0..16).collect();
        let full = RegressionTree::fit(&x, &y, &all, &TreeParams::default());
        for (row, target) in x.iter().zip(&y) {
            assert_eq!(full.predict(row), *target);
        }
        let stump = RegressionTree::fit(&x, &y, &all, &TreeParams { max_depth: Some(1), ..Default::default() });
        assert_eq!(stump.split_count(), 1);
        let leafy = RegressionTree::fit(&x, &y, &all, &TreeParams { min_samples_leaf: 8, ..Default::default() });
        assert_eq!(leafy.split_count(), 1);
    }

    #[test]
    fn constant_target_and_single_row_are_leaves() {
        let x = vec![vec![1.0], vec![2.0], vec![3.0]];
        let t = RegressionTree::fit(&x, &[0.5, 0.5, 0.5], &[0, 1, 2], &TreeParams::default());
        assert_eq!(t.nodes, vec![Node::Leaf { value: 0.5 }]);
        let t = RegressionTree::fit(&x, &[0.1, 0.5, 0.9], &[2], &TreeParams::default());
        assert_eq!(t.predict(&[0.0]), 0.9);
    }
}
