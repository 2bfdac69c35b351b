//! Labeled datasets: joining signals with response labels, outlier
//! exclusion, normalization and the seeded train/test split.

use std::collections::HashMap;
use std::path::Path;

use kgmcq_core::signals::{apply_normalization, fit_normalization, signal_index, SIGNAL_COUNT};
use kgmcq_core::{NormParams, RawSignals, SIGNAL_NAMES};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::ModelError;

pub const DEFAULT_OUTLIER_THRESHOLD: f64 = 0.97;
pub const DEFAULT_TRAIN_RATIO: f64 = 0.8;

/// Aggregated responses for one question.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResponseSummary {
    pub mcq_id: String,
    pub responses: usize,
    pub incorrect: usize,
    pub liking_mean: Option<f64>,
}

impl ResponseSummary {
    pub fn incorrect_rate(&self) -> Option<f64> {
        (self.responses > 0).then(|| self.incorrect as f64 / self.responses as f64)
    }
}

/// A labeled row before normalization.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RawRow {
    pub mcq_id: String,
    pub raw: [f64; SIGNAL_COUNT],
    pub difficulty: f64,
    pub liking: Option<f64>,
    pub responses: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabeledRow {
    pub mcq_id: String,
    pub features: Vec<f64>,
    pub label: f64,
    pub liking: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabeledDataset {
    pub feature_names: Vec<String>,
    pub rows: Vec<LabeledRow>,
    pub norm: NormParams,
    /// Ids removed by the outlier threshold.
    pub excluded: Vec<String>,
}

impl LabeledDataset {
    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn x(&self) -> Vec<Vec<f64>> {
        self.rows.iter().map(|r| r.features.clone()).collect()
    }

    pub fn y(&self) -> Vec<f64> {
        self.rows.iter().map(|r| r.label).collect()
    }

    pub fn subset(&self, idx: &[usize]) -> LabeledDataset {
        LabeledDataset { rows: idx.iter().map(|&i| self.rows[i].clone()).collect(), ..self.clone_meta() }
    }

    fn clone_meta(&self) -> LabeledDataset {
        LabeledDataset {
            feature_names: self.feature_names.clone(),
            rows: Vec::new(),
            norm: self.norm.clone(),
            excluded: self.excluded.clone(),
        }
    }

    /// Drops the named feature columns.
    pub fn without(&self, exclude: &[String]) -> Result<LabeledDataset, ModelError> {
        let mut drop = vec![false; self.feature_names.len()];
        for name in exclude {
            let i = self
                .feature_names
                .iter()
                .position(|n| n.eq_ignore_ascii_case(name))
                .ok_or_else(|| ModelError::UnknownFeature(name.clone()))?;
            drop[i] = true;
        }
        if drop.iter().all(|&d| d) {
            return Err(ModelError::NoFeatures);
        }
        let keep = |v: &[f64]| -> Vec<f64> { v.iter().zip(&drop).filter(|(_, d)| !**d).map(|(x, _)| *x).collect() };
        Ok(LabeledDataset {
            feature_names: self.feature_names.iter().zip(&drop).filter(|(_, d)| !**d).map(|(n, _)| n.clone()).collect(),
            rows: self.rows.iter().map(|r| LabeledRow { features: keep(&r.features), ..r.clone() }).collect(),
            ..self.clone_meta()
        })
    }
}

/// Joins signals with response summaries. Questions without responses or
/// without a complete signal record are left out with a warning.
pub fn join_labels(
    signals: &[(String, RawSignals)],
    responses: &[ResponseSummary],
    warnings: &mut Vec<String>,
) -> Vec<RawRow> {
    let by_id: HashMap<&str, &ResponseSummary> = responses.iter().map(|r| (r.mcq_id.as_str(), r)).collect();
    let mut rows = Vec::new();
    for (id, raw) in signals {
        let Some(values) = raw.values() else {
            warnings.push(format!("{id}: missing LLMExtraFact; excluded"));
            continue;
        };
        let Some(summary) = by_id.get(id.as_str()).filter(|s| s.responses > 0) else {
            warnings.push(format!("{id}: no responses; excluded"));
            continue;
        };
        rows.push(RawRow {
            mcq_id: id.clone(),
            raw: values,
            difficulty: summary.incorrect_rate().expect("responses > 0"),
            liking: summary.liking_mean,
            responses: Some(summary.responses),
        });
    }
    rows
}

/// Applies the outlier threshold (rows with label >= threshold are
/// dropped), then fits normalization on the retained rows.
pub fn build_dataset(rows: &[RawRow], threshold: Option<f64>) -> Result<LabeledDataset, ModelError> {
    for r in rows {
        if !(0.0..=1.0).contains(&r.difficulty) {
            return Err(ModelError::LabelRange { id: r.mcq_id.clone(), value: r.difficulty });
        }
    }
    let (kept, excluded): (Vec<&RawRow>, Vec<&RawRow>) =
        rows.iter().partition(|r| threshold.is_none_or(|t| r.difficulty < t));
    let raw: Vec<[f64; SIGNAL_COUNT]> = kept.iter().map(|r| r.raw).collect();
    let norm = fit_normalization(&raw)?;
    Ok(LabeledDataset {
        feature_names: SIGNAL_NAMES.iter().map(|s| s.to_string()).collect(),
        rows: kept
            .iter()
            .map(|r| LabeledRow {
                mcq_id: r.mcq_id.clone(),
                features: apply_normalization(&r.raw, &norm).0.to_vec(),
                label: r.difficulty,
                liking: r.liking,
            })
            .collect(),
        norm,
        excluded: excluded.iter().map(|r| r.mcq_id.clone()).collect(),
    })
}

pub fn assemble_dataset(
    signals: &[(String, RawSignals)],
    responses: &[ResponseSummary],
    threshold: Option<f64>,
    warnings: &mut Vec<String>,
) -> Result<LabeledDataset, ModelError> {
    build_dataset(&join_labels(signals, responses, warnings), threshold)
}

/// Seeded shuffle, then the first `floor(n * ratio)` indices train.
pub fn split_indices(n: usize, ratio: f64, seed: u64) -> Result<(Vec<usize>, Vec<usize>), ModelError> {
    if n < 5 {
        return Err(ModelError::TooFewRows { need: 5, got: n });
    }
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let n_train = (n as f64 * ratio).floor() as usize;
    let test = idx.split_off(n_train);
    Ok((idx, test))
}

pub fn split_train_test(
    ds: &LabeledDataset,
    ratio: f64,
    seed: u64,
) -> Result<(LabeledDataset, LabeledDataset), ModelError> {
    let (train, test) = split_indices(ds.len(), ratio, seed)?;
    Ok((ds.subset(&train), ds.subset(&test)))
}

pub const LABEL_COLUMN: &str = "difficulty";
pub const LIKING_COLUMN: &str = "liking";

/// Header canonical form: lowercase alphanumerics with any `signal` prefix removed.
fn canonical(header: &str) -> String {
    let c: String = header.chars().filter(|c| c.is_ascii_alphanumeric()).flat_map(|c| c.to_lowercase()).collect();
    c.strip_prefix("signal").map(str::to_string).unwrap_or(c)
}

fn feature_alias(canon: &str) -> Option<usize> {
    let name = match canon {
        "nodeembeddingsimilarity" => "NodeEmbedSim",
        "textembeddingsimilarity" => "TextEmbedSim",
        "fleschreadingease" => "Readability",
        "degree" => "DegreeCentrality",
        other => return SIGNAL_NAMES.iter().position(|n| n.to_ascii_lowercase() == other),
    };
    signal_index(name).ok()
}

const ID_ALIASES: &[&str] = &["mcqid", "id", "questionid", "qid"];
const LABEL_ALIASES: &[&str] = &[
    "difficulty",
    "incorrectrate",
    "incorrectanswerrate",
    "incorrectresponserate",
    "label",
    "difficultyscore",
    "groundtruth",
];
const LIKING_ALIASES: &[&str] = &["liking", "likingscore", "avgliking", "meanliking", "liked"];
const RESPONSES_ALIASES: &[&str] = &["responses", "nresponses", "responsecount", "numresponses"];

fn find(headers: &[String], aliases: &[&str]) -> Option<usize> {
    aliases.iter().find_map(|a| headers.iter().position(|h| h == a))
}

fn parse_cell(v: &str, row: usize, column: &str) -> Result<f64, ModelError> {
    v.trim().parse::<f64>().map_err(|e| ModelError::Parse { row, message: format!("column `{column}`: {e} ({v:?})") })
}

/// Reads a labeled table. Headers are matched leniently (case,
/// punctuation, a `Signal` prefix and a few synonyms are ignored); when both
/// raw and `norm_` signal columns exist the raw ones are used. Liking on a
/// 0-100 scale is rescaled to [0, 1].
pub fn read_table(path: &Path) -> Result<Vec<RawRow>, ModelError> {
    let mut reader = csv::ReaderBuilder::new().trim(csv::Trim::All).from_path(path)?;
    let raw_headers: Vec<String> = reader.headers()?.iter().map(str::to_string).collect();
    let headers: Vec<String> = raw_headers.iter().map(|h| canonical(h)).collect();

    let mut feature_cols = [None; SIGNAL_COUNT];
    for (j, h) in headers.iter().enumerate() {
        if let Some(i) = feature_alias(h) {
            feature_cols[i].get_or_insert(j);
        }
    }
    for (j, h) in headers.iter().enumerate() {
        if let Some(i) = h.strip_prefix("norm").and_then(feature_alias) {
            feature_cols[i].get_or_insert(j);
        }
    }
    for (i, col) in feature_cols.iter().enumerate() {
        if col.is_none() {
            return Err(ModelError::MissingColumn(SIGNAL_NAMES[i].to_string()));
        }
    }
    let id_col = find(&headers, ID_ALIASES);
    let label_col = find(&headers, LABEL_ALIASES).ok_or_else(|| ModelError::MissingColumn(LABEL_COLUMN.into()))?;
    let liking_col = find(&headers, LIKING_ALIASES);
    let responses_col = find(&headers, RESPONSES_ALIASES);

    let mut rows = Vec::new();
    let mut liking_percent = false;
    for (i, record) in reader.records().enumerate() {
        let record = record?;
        let line = i + 2;
        let cell = |j: usize| record.get(j).unwrap_or_default();
        let mut raw = [0.0; SIGNAL_COUNT];
        for (k, col) in feature_cols.iter().enumerate() {
            let j = col.expect("checked above");
            raw[k] = parse_cell(cell(j), line, &raw_headers[j])?;
        }
        let liking = match liking_col.map(cell) {
            Some(v) if !v.is_empty() => Some(parse_cell(v, line, LIKING_COLUMN)?),
            _ => None,
        };
        liking_percent |= liking.is_some_and(|l| l > 1.0);
        rows.push(RawRow {
            mcq_id: id_col.map(|j| cell(j).to_string()).unwrap_or_else(|| format!("row-{:04}", i + 1)),
            raw,
            difficulty: parse_cell(cell(label_col), line, LABEL_COLUMN)?,
            liking,
            responses: match responses_col.map(cell) {
                Some(v) if !v.is_empty() => Some(parse_cell(v, line, "responses")? as usize),
                _ => None,
            },
        });
    }
    if liking_percent {
        for r in &mut rows {
            r.liking = r.liking.map(|l| l / 100.0);
        }
    }
    Ok(rows)
}

pub fn write_table(path: &Path, rows: &[RawRow]) -> Result<(), ModelError> {
    write_table_to(std::fs::File::create(path)?, rows)
}

/// Serializes rows in the layout read back by [`read_table`].
pub fn write_table_to<W: std::io::Write>(out: W, rows: &[RawRow]) -> Result<(), ModelError> {
    let mut w = csv::Writer::from_writer(out);
    let mut header = vec!["mcq_id".to_string()];
    header.extend(SIGNAL_NAMES.iter().map(|s| s.to_string()));
    header.extend([LABEL_COLUMN.to_string(), LIKING_COLUMN.to_string(), "responses".to_string()]);
    w.write_record(&header)?;
    for r in rows {
        let mut rec = vec![r.mcq_id.clone()];
        rec.extend(r.raw.iter().map(|v| v.to_string()));
        rec.push(r.difficulty.to_string());
        rec.push(r.liking.map(|v| v.to_string()).unwrap_or_default());
        rec.push(r.responses.map(|v| v.to_string()).unwrap_or_default());
        w.write_record(&rec)?;
    }
    w.flush()?;
    Ok(())
}

/// Reads the signals file written by the signal engine (raw columns only).
pub fn read_signals(path: &Path) -> Result<Vec<(String, RawSignals)>, ModelError> {
    let mut reader = csv::ReaderBuilder::new().trim(csv::Trim::All).from_path(path)?;
    let headers: Vec<String> = reader.headers()?.iter().map(str::to_string).collect();
    let col =
        |name: &str| headers.iter().position(|h| h == name).ok_or_else(|| ModelError::MissingColumn(name.to_string()));
    let id = col("mcq_id")?;
    let cols: Vec<usize> = SIGNAL_NAMES.iter().map(|n| col(n)).collect::<Result<_, _>>()?;
    let mut out = Vec::new();
    for (i, record) in reader.records().enumerate() {
        let record = record?;
        let line = i + 2;
        let get = |k: usize| parse_cell(record.get(cols[k]).unwrap_or_default(), line, SIGNAL_NAMES[k]);
        let small = |k: usize| get(k).map(|v| v as u8);
        let extra = record.get(cols[8]).unwrap_or_default();
        out.push((
            record.get(id).unwrap_or_default().to_string(),
            RawSignals {
                reasoning: small(0)?,
                extra_triple: small(1)?,
                distractor_depth: get(2)?,
                node_embed_sim: get(3)?,
                text_embed_sim: get(4)?,
                degree_centrality: get(5)?,
                readability: get(6)?,
                above_largest_gap_count: small(7)?,
                llm_extra_fact: if extra.is_empty() { None } else { Some(small(8)?) },
            },
        ));
    }
    Ok(out)
}
