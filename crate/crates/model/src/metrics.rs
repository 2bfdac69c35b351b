//! Regression metrics.

use serde::{Deserialize, Serialize};

use crate::{FittedModel, LabeledDataset, ModelError, ModelKind};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredictionPoint {
    pub mcq_id: String,
    pub actual: f64,
    pub predicted: f64,
    pub raw: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelReport {
    pub model: ModelKind,
    pub rmse: f64,
    pub mae: f64,
    /// Missing when the test labels are constant.
    pub r2: Option<f64>,
    /// Missing when either side is constant.
    pub spearman: Option<f64>,
    pub n_train: usize,
    pub n_test: usize,
    pub seed: u64,
    pub excluded: Vec<String>,
    #[serde(skip)]
    pub points: Vec<PredictionPoint>,
}

/// Scores the clamped predictions of `model` on `test`.
pub fn evaluate(
    model: &FittedModel,
    test: &LabeledDataset,
    n_train: usize,
    seed: u64,
    excluded: &[String],
) -> Result<ModelReport, ModelError> {
    if test.is_empty() {
        return Err(ModelError::EmptyTest);
    }
    let mut points = Vec::with_capacity(test.len());
    for row in &test.rows {
        let p = model.predict(&row.features)?;
        points.push(PredictionPoint { mcq_id: row.mcq_id.clone(), actual: row.label, predicted: p.value, raw: p.raw });
    }
    let pred: Vec<f64> = points.iter().map(|p| p.predicted).collect();
    let actual = test.y();
    let r2 = r2(&pred, &actual);
    if r2.is_none() {
        log::warn!("constant test labels; R2 undefined");
    }
    Ok(ModelReport {
        model: model.kind,
        rmse: rmse(&pred, &actual),
        mae: mae(&pred, &actual),
        r2,
        spearman: spearman(&pred, &actual),
        n_train,
        n_test: test.len(),
        seed,
        excluded: excluded.to_vec(),
        points,
    })
}

/// Never below [`mae`]: when every error has the same magnitude the two are
/// equal, and independent rounding could otherwise put RMSE an ulp under.
pub fn rmse(pred: &[f64], actual: &[f64]) -> f64 {
    let n = pred.len() as f64;
    (pred.iter().zip(actual).map(|(p, a)| (p - a).powi(2)).sum::<f64>() / n).sqrt().max(mae(pred, actual))
}

pub fn mae(pred: &[f64], actual: &[f64]) -> f64 {
    let n = pred.len() as f64;
    pred.iter().zip(actual).map(|(p, a)| (p - a).abs()).sum::<f64>() / n
}

/// `1 - SS_res / SS_tot` with the mean of `actual`; `None` when `actual` is constant.
pub fn r2(pred: &[f64], actual: &[f64]) -> Option<f64> {
    if actual.iter().all(|a| *a == actual[0]) {
        return None;
    }
    let m = actual.iter().sum::<f64>() / actual.len() as f64;
    let ss_tot: f64 = actual.iter().map(|a| (a - m).powi(2)).sum();
    let ss_res: f64 = pred.iter().zip(actual).map(|(p, a)| (a - p).powi(2)).sum();
    Some(1.0 - ss_res / ss_tot)
}

/// `None` when either side is constant or shorter than two.
pub fn pearson(a: &[f64], b: &[f64]) -> Option<f64> {
    let n = a.len();
    if n < 2 || b.len() != n {
        return None;
    }
    let ma = a.iter().sum::<f64>() / n as f64;
    let mb = b.iter().sum::<f64>() / n as f64;
    let (mut sab, mut saa, mut sbb) = (0.0, 0.0, 0.0);
    for (x, y) in a.iter().zip(b) {
        let (dx, dy) = (x - ma, y - mb);
        sab += dx * dy;
        saa += dx * dx;
        sbb += dy * dy;
    }
    if a.iter().all(|x| *x == a[0]) || b.iter().all(|y| *y == b[0]) {
        return None;
    }
    Some((sab / (saa * sbb).sqrt()).clamp(-1.0, 1.0))
}

/// 1-based ranks; tied values share the mean of their positions.
pub fn average_ranks(values: &[f64]) -> Vec<f64> {
    let mut order: Vec<usize> = (0..values.len()).collect();
    order.sort_by(|&i, &j| values[i].total_cmp(&values[j]));
    let mut ranks = vec![0.0; values.len()];
    let mut start = 0;
    while start < order.len() {
        let mut end = start + 1;
        while end < order.len() && values[order[end]] == values[order[start]] {
            end += 1;
        }
        let avg = (start + end + 1) as f64 / 2.0;
        for &i in &order[start..end] {
            ranks[i] = avg;
        }
        start = end;
    }
    ranks
}

pub fn spearman(a: &[f64], b: &[f64]) -> Option<f64> {
    pearson(&average_ranks(a), &average_ranks(b))
}

/// Equal-width histogram over [0, 1]; the last bin includes 1.0.
pub fn histogram(values: &[f64], bins: usize) -> Vec<usize> {
    let mut counts = vec![0; bins];
    for &v in values {
        let b = ((v.clamp(0.0, 1.0) * bins as f64).floor() as usize).min(bins - 1);
        counts[b] += 1;
    }
    counts
}
