//! Ordinary least squares with an intercept.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

/// Ridge term added to the normal equations when they are singular.
pub const RIDGE_FALLBACK: f64 = 1e-8;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinearModel {
    pub coefficients: Vec<f64>,
    pub intercept: f64,
    /// Whether the ridge fallback was needed.
    pub regularized: bool,
}

impl LinearModel {
    /// Solves the centered normal equations by Cholesky. A failed or
    /// numerically singular factorization retries with a small ridge term.
    pub fn fit(x: &[Vec<f64>], y: &[f64]) -> Self {
        let n = x.len();
        let p = x.first().map_or(0, Vec::len);
        if n == 0 {
            return Self { coefficients: vec![0.0; p], intercept: 0.0, regularized: false };
        }
        if n <= p {
            log::warn!("linear fit with {n} rows for {p} features");
        }
        let x_mean: Vec<f64> = (0..p).map(|j| x.iter().map(|r| r[j]).sum::<f64>() / n as f64).collect();
        let y_mean = y.iter().sum::<f64>() / n as f64;
        let xc = DMatrix::from_fn(n, p, |i, j| x[i][j] - x_mean[j]);
        let yc = DVector::from_fn(n, |i, _| y[i] - y_mean);
        let xtx = xc.transpose() * &xc;
        let xty = xc.transpose() * yc;

        let solve = |m: DMatrix<f64>| -> Option<DVector<f64>> {
            let chol = m.cholesky()?;
            let diag = chol.l_dirty().diagonal();
            let (lo, hi) = diag.iter().fold((f64::INFINITY, 0.0f64), |(lo, hi), &d| (lo.min(d), hi.max(d)));
            // squared pivot ratio approximates the inverse condition number
            if p > 0 && (lo / hi).powi(2) < 1e-12 {
                return None;
            }
            let beta = chol.solve(&xty);
            beta.iter().all(|v| v.is_finite()).then_some(beta)
        };
        let (beta, regularized) = match solve(xtx.clone()) {
            Some(b) => (b, false),
            None => {
                let mut ridge = xtx;
                for j in 0..p {
                    ridge[(j, j)] += RIDGE_FALLBACK;
                }
                let beta = ridge
                    .clone()
                    .cholesky()
                    .map(|c| c.solve(&xty))
                    .or_else(|| ridge.lu().solve(&xty))
                    .unwrap_or_else(|| DVector::zeros(p));
                (beta, true)
            }
        };
        let coefficients: Vec<f64> = beta.iter().copied().collect();
        let intercept = y_mean - coefficients.iter().zip(&x_mean).map(|(b, m)| b * m).sum::<f64>();
        Self { coefficients, intercept, regularized }
    }

    pub fn predict(&self, row: &[f64]) -> f64 {
        self.intercept + self.coefficients.iter().zip(row).map(|(b, v)| b * v).sum::<f64>()
    }
}
