//! Per-question and corpus-level response statistics.

use kgmcq_model::metrics::{pearson, spearman};
use kgmcq_model::report::Histogram;
use kgmcq_model::ResponseSummary;
use serde::{Deserialize, Serialize};

use crate::ServiceError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct McqStats {
    pub mcq_id: String,
    pub responses: usize,
    pub incorrect: usize,
    pub incorrect_rate: Option<f64>,
    pub mean_liking: Option<f64>,
}

impl From<&ResponseSummary> for McqStats {
    fn from(s: &ResponseSummary) -> Self {
        Self {
            mcq_id: s.mcq_id.clone(),
            responses: s.responses,
            incorrect: s.incorrect,
            incorrect_rate: s.incorrect_rate(),
            mean_liking: s.liking_mean,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorpusStats {
    pub mcqs: usize,
    pub answered_mcqs: usize,
    pub responses: usize,
    pub mean_incorrect_rate: f64,
    pub mean_liking: Option<f64>,
    /// Between per-question mean liking and incorrect rate.
    pub liking_difficulty_pearson: Option<f64>,
    pub liking_difficulty_spearman: Option<f64>,
    pub histogram: Histogram,
}

/// Needs at least two questions with responses.
pub fn corpus_stats(summaries: &[ResponseSummary]) -> Result<CorpusStats, ServiceError> {
    let answered: Vec<&ResponseSummary> = summaries.iter().filter(|s| s.responses > 0).collect();
    if answered.len() < 2 {
        return Err(ServiceError::InsufficientData { answered: answered.len() });
    }
    let rates: Vec<f64> = answered.iter().filter_map(|s| s.incorrect_rate()).collect();
    let (liked_rates, likings): (Vec<f64>, Vec<f64>) =
        answered.iter().filter_map(|s| Some((s.incorrect_rate()?, s.liking_mean?))).unzip();
    let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
    Ok(CorpusStats {
        mcqs: summaries.len(),
        answered_mcqs: answered.len(),
        responses: answered.iter().map(|s| s.responses).sum(),
        mean_incorrect_rate: mean(&rates),
        mean_liking: (!likings.is_empty()).then(|| mean(&likings)),
        liking_difficulty_pearson: pearson(&likings, &liked_rates),
        liking_difficulty_spearman: spearman(&likings, &liked_rates),
        histogram: Histogram::of(&rates),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn summary(id: &str, n: usize, wrong: usize, liking: Option<f64>) -> ResponseSummary {
        ResponseSummary { mcq_id: id.into(), responses: n, incorrect: wrong, liking_mean: liking }
    }

    #[test]
    fn liking_opposite_to_difficulty_correlates_negatively() {
        let s: Vec<ResponseSummary> =
            (1..=5).map(|w| summary(&format!("q{w}"), 10, w, Some(1.0 - w as f64 / 10.0))).collect();
        let c = corpus_stats(&s).unwrap();
        assert!((c.liking_difficulty_pearson.unwrap() + 1.0).abs() < 1e-12);
        assert!((c.liking_difficulty_spearman.unwrap() + 1.0).abs() < 1e-12);
        assert!((c.mean_incorrect_rate - 0.3).abs() < 1e-12);
        assert_eq!(c.histogram.counts.iter().sum::<usize>(), 5);
    }

    #[test]
    fn uniform_labels_leave_correlation_missing() {
        let s: Vec<ResponseSummary> = (0..4).map(|i| summary(&format!("q{i}"), 4, 1, Some(0.1 * i as f64))).collect();
        let c = corpus_stats(&s).unwrap();
        assert_eq!(c.liking_difficulty_pearson, None);
        assert_eq!(c.liking_difficulty_spearman, None);
    }

    #[test]
    fn needs_two_answered_questions() {
        let s = vec![summary("a", 3, 1, None), summary("b", 0, 0, None)];
        assert!(matches!(corpus_stats(&s), Err(ServiceError::InsufficientData { answered: 1 })));
        let m = McqStats::from(&s[1]);
        assert_eq!((m.responses, m.incorrect_rate, m.mean_liking), (0, None, None));
    }
}
