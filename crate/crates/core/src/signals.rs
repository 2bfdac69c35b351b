//! The nine difficulty signals and their min-max normalization.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::embeddings::{cosine_or_zero, EmbeddingError, NodeEmbeddingTable, TextEmbedder};
use crate::graph::{GraphError, KnowledgeGraph};
use crate::llm::prompts::{extra_fact_prompt, parse_yes_no};
use crate::llm::ChatBackend;
use crate::mcq::{subgraph_facts, Mcq, McqError, SubgraphKind};

pub const SIGNAL_COUNT: usize = 9;

/// Column order of every signal vector, file and model.
pub const SIGNAL_NAMES: [&str; SIGNAL_COUNT] = [
    "Reasoning",
    "ExtraTriple",
    "DistractorDepth",
    "NodeEmbedSim",
    "TextEmbedSim",
    "DegreeCentrality",
    "Readability",
    "AboveLargestGapCount",
    "LLMExtraFact",
];

pub const TEXT_SIM_EPSILON: f64 = 1e-6;

#[derive(Debug, thiserror::Error)]
pub enum SignalError {
    #[error("{signal}: {source}")]
    Embedding {
        signal: &'static str,
        #[source]
        source: EmbeddingError,
    },
    #[error(transparent)]
    Graph(#[from] GraphError),
    #[error(transparent)]
    Mcq(#[from] McqError),
    #[error("readability of an empty stem is undefined")]
    EmptyStem,
    #[error("cannot fit normalization on an empty dataset")]
    EmptyDataset,
    #[error("unknown signal `{0}`")]
    UnknownSignal(String),
    #[error("mcq {0} has no llm_extra_fact value")]
    MissingSignal(String),
    #[error("signals file line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

fn emb(signal: &'static str) -> impl FnOnce(EmbeddingError) -> SignalError {
    move |source| SignalError::Embedding { signal, source }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RawSignals {
    pub reasoning: u8,
    pub extra_triple: u8,
    pub distractor_depth: f64,
    pub node_embed_sim: f64,
    pub text_embed_sim: f64,
    pub degree_centrality: f64,
    pub readability: f64,
    pub above_largest_gap_count: u8,
    /// Missing when the judge could not be reached; such rows are not modeled.
    pub llm_extra_fact: Option<u8>,
}

impl RawSignals {
    /// The nine values in [`SIGNAL_NAMES`] order, if none is missing.
    pub fn values(&self) -> Option<[f64; SIGNAL_COUNT]> {
        Some([
            f64::from(self.reasoning),
            f64::from(self.extra_triple),
            self.distractor_depth,
            self.node_embed_sim,
            self.text_embed_sim,
            self.degree_centrality,
            self.readability,
            f64::from(self.above_largest_gap_count),
            f64::from(self.llm_extra_fact?),
        ])
    }
}

/// Nine normalized components, each in [0, 1].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SignalVector(pub [f64; SIGNAL_COUNT]);

pub fn signal_index(name: &str) -> Result<usize, SignalError> {
    SIGNAL_NAMES
        .iter()
        .position(|n| n.eq_ignore_ascii_case(name))
        .ok_or_else(|| SignalError::UnknownSignal(name.to_string()))
}

pub fn signal_reasoning(mcq: &Mcq) -> u8 {
    u8::from(mcq.subgraph.kind == SubgraphKind::Quintuple)
}

pub fn signal_extra_triple(mcq: &Mcq) -> u8 {
    u8::from(mcq.subgraph.extra.is_some())
}

pub fn signal_distractor_depth(mcq: &Mcq) -> f64 {
    mcq.distractor_depths.iter().map(|&d| d as f64).sum::<f64>() / mcq.distractor_depths.len() as f64
}

pub fn signal_node_embed_sim(
    mcq: &Mcq,
    table: &NodeEmbeddingTable,
    warnings: &mut Vec<String>,
) -> Result<f64, SignalError> {
    let name = "NodeEmbedSim";
    let key = table.get(&mcq.key).map_err(emb(name))?;
    let mut total = 0.0;
    for d in &mcq.distractors {
        let v = table.get(d).map_err(emb(name))?;
        total += cosine_or_zero(v, key, warnings).map_err(emb(name))?;
    }
    Ok(total / mcq.distractors.len() as f64)
}

/// Mean distractor-stem similarity over the key-stem similarity, with the
/// denominator clamped at [`TEXT_SIM_EPSILON`].
pub fn text_sim_ratio(distractor_sims: &[f64], key_sim: f64, warnings: &mut Vec<String>) -> f64 {
    let mean = distractor_sims.iter().sum::<f64>() / distractor_sims.len() as f64;
    let denom = if key_sim < TEXT_SIM_EPSILON {
        warnings.push(format!("key-stem similarity {key_sim} below epsilon; clamped"));
        TEXT_SIM_EPSILON
    } else {
        key_sim
    };
    (mean / denom).max(0.0)
}

fn node_name<'a>(g: &'a KnowledgeGraph, id: &str) -> Result<&'a str, GraphError> {
    g.node(id).map(|n| n.name.as_str()).ok_or_else(|| GraphError::NotFound(id.to_string()))
}

/// Embeds the stem followed by the key and distractor names.
fn option_embeddings(
    mcq: &Mcq,
    g: &KnowledgeGraph,
    embedder: &dyn TextEmbedder,
    signal: &'static str,
) -> Result<Vec<crate::embeddings::EmbeddingVector>, SignalError> {
    let mut texts = vec![mcq.stem.as_str()];
    for id in mcq.options() {
        texts.push(node_name(g, id)?);
    }
    embedder.embed_batch(&texts).map_err(emb(signal))
}

pub fn signal_text_embed_sim(
    mcq: &Mcq,
    g: &KnowledgeGraph,
    embedder: &dyn TextEmbedder,
    warnings: &mut Vec<String>,
) -> Result<f64, SignalError> {
    let name = "TextEmbedSim";
    let vecs = option_embeddings(mcq, g, embedder, name)?;
    let stem = &vecs[0];
    let key_sim = cosine_or_zero(&vecs[1], stem, warnings).map_err(emb(name))?;
    let mut sims = Vec::new();
    for v in &vecs[2..] {
        sims.push(cosine_or_zero(v, stem, warnings).map_err(emb(name))?);
    }
    Ok(text_sim_ratio(&sims, key_sim, warnings))
}

pub fn signal_degree_centrality(mcq: &Mcq, g: &KnowledgeGraph) -> Result<f64, SignalError> {
    let nodes = mcq.subgraph.nodes();
    let mut total = 0usize;
    for id in &nodes {
        total += g.degree_centrality(id)?;
    }
    Ok(total as f64 / nodes.len() as f64)
}

pub fn flesch(words: usize, sentences: usize, syllables: usize) -> f64 {
    206.835 - 1.015 * (words as f64 / sentences as f64) - 84.6 * (syllables as f64 / words as f64)
}

/// Vowel groups (a, e, i, o, u, y), minus a silent final "e" unless the
/// word ends in "le"; at least one.
pub fn count_syllables(word: &str) -> usize {
    let w: Vec<char> = word.chars().filter(|c| c.is_alphabetic()).flat_map(char::to_lowercase).collect();
    let is_vowel = |c: char| "aeiouy".contains(c);
    let mut groups = 0usize;
    let mut prev = false;
    for &c in &w {
        let v = is_vowel(c);
        if v && !prev {
            groups += 1;
        }
        prev = v;
    }
    let n = w.len();
    if n >= 1 && w[n - 1] == 'e' && !(n >= 2 && w[n - 2] == 'l') {
        groups = groups.saturating_sub(1);
    }
    groups.max(1)
}

/// Whitespace tokens with punctuation removed; tokens left empty are dropped.
pub fn stem_words(text: &str) -> Vec<String> {
    text.split_whitespace()
        .map(|t| t.chars().filter(|c| c.is_alphanumeric()).collect::<String>())
        .filter(|t| !t.is_empty())
        .collect()
}

/// Runs of terminal punctuation; text without any counts as one sentence.
pub fn count_sentences(text: &str) -> usize {
    let mut runs = 0;
    let mut prev = false;
    for c in text.chars() {
        let term = matches!(c, '.' | '!' | '?');
        if term && !prev {
            runs += 1;
        }
        prev = term;
    }
    runs.max(1)
}

pub fn signal_readability(stem: &str) -> Result<f64, SignalError> {
    let words = stem_words(stem);
    if words.is_empty() {
        return Err(SignalError::EmptyStem);
    }
    let syllables: usize = words.iter().map(|w| count_syllables(w)).sum();
    Ok(flesch(words.len(), count_sentences(stem), syllables))
}

/// Sorts the four similarities descending and returns the 1-based position
/// of the largest adjacent gap (first position on ties).
pub fn above_largest_gap(sims: [f64; 4]) -> u8 {
    let mut sorted = sims;
    sorted.sort_by(|a, b| b.total_cmp(a));
    let mut best = 0;
    let mut best_gap = f64::NEG_INFINITY;
    for i in 0..3 {
        let gap = sorted[i] - sorted[i + 1];
        if gap > best_gap {
            best_gap = gap;
            best = i;
        }
    }
    best as u8 + 1
}

pub fn signal_above_largest_gap(
    mcq: &Mcq,
    g: &KnowledgeGraph,
    embedder: &dyn TextEmbedder,
    warnings: &mut Vec<String>,
) -> Result<u8, SignalError> {
    let name = "AboveLargestGapCount";
    let vecs = option_embeddings(mcq, g, embedder, name)?;
    let mut sims = [0.0; 4];
    for (s, v) in sims.iter_mut().zip(&vecs[1..]) {
        *s = cosine_or_zero(v, &vecs[0], warnings).map_err(emb(name))?;
    }
    Ok(above_largest_gap(sims))
}

/// `Ok(None)` when the judge is unreachable or its verdict unreadable.
pub fn signal_llm_extra_fact(
    mcq: &Mcq,
    g: &KnowledgeGraph,
    backend: &dyn ChatBackend,
    warnings: &mut Vec<String>,
) -> Result<Option<u8>, SignalError> {
    let facts = subgraph_facts(g, &mcq.subgraph)?;
    match backend.complete(&extra_fact_prompt(&mcq.stem, &facts)) {
        Ok(reply) => match parse_yes_no(&reply) {
            Some(v) => Ok(Some(u8::from(v))),
            None => {
                warnings.push(format!("{}: unreadable extra-fact verdict {reply:?}", mcq.id));
                Ok(None)
            }
        },
        Err(e) => {
            warnings.push(format!("{}: extra-fact judge failed: {e}", mcq.id));
            Ok(None)
        }
    }
}

pub struct SignalContext<'a> {
    pub graph: &'a KnowledgeGraph,
    pub node_embeddings: &'a NodeEmbeddingTable,
    pub text_embedder: &'a dyn TextEmbedder,
    pub judge: &'a dyn ChatBackend,
}

pub fn compute_all(mcq: &Mcq, ctx: &SignalContext<'_>, warnings: &mut Vec<String>) -> Result<RawSignals, SignalError> {
    Ok(RawSignals {
        reasoning: signal_reasoning(mcq),
        extra_triple: signal_extra_triple(mcq),
        distractor_depth: signal_distractor_depth(mcq),
        node_embed_sim: signal_node_embed_sim(mcq, ctx.node_embeddings, warnings)?,
        text_embed_sim: signal_text_embed_sim(mcq, ctx.graph, ctx.text_embedder, warnings)?,
        degree_centrality: signal_degree_centrality(mcq, ctx.graph)?,
        readability: signal_readability(&mcq.stem)?,
        above_largest_gap_count: signal_above_largest_gap(mcq, ctx.graph, ctx.text_embedder, warnings)?,
        llm_extra_fact: signal_llm_extra_fact(mcq, ctx.graph, ctx.judge, warnings)?,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SignalRange {
    pub min: f64,
    pub max: f64,
}

/// Per-signal ranges in [`SIGNAL_NAMES`] order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NormParams {
    pub names: Vec<String>,
    pub ranges: Vec<SignalRange>,
}

/// Min and max per column; a constant column gets `(min, min + 1)` so it
/// normalizes to 0.
pub fn fit_normalization(rows: &[[f64; SIGNAL_COUNT]]) -> Result<NormParams, SignalError> {
    if rows.is_empty() {
        return Err(SignalError::EmptyDataset);
    }
    let ranges = (0..SIGNAL_COUNT)
        .map(|j| {
            let min = rows.iter().map(|r| r[j]).fold(f64::INFINITY, f64::min);
            let max = rows.iter().map(|r| r[j]).fold(f64::NEG_INFINITY, f64::max);
            if max > min {
                SignalRange { min, max }
            } else {
                SignalRange { min, max: min + 1.0 }
            }
        })
        .collect();
    Ok(NormParams { names: SIGNAL_NAMES.iter().map(|s| s.to_string()).collect(), ranges })
}

pub fn apply_normalization(raw: &[f64; SIGNAL_COUNT], params: &NormParams) -> SignalVector {
    let mut out = [0.0; SIGNAL_COUNT];
    for (j, o) in out.iter_mut().enumerate() {
        let SignalRange { min, max } = params.ranges[j];
        *o = ((raw[j] - min) / (max - min)).clamp(0.0, 1.0);
    }
    SignalVector(out)
}

impl NormParams {
    pub fn save(&self, path: &Path) -> Result<(), SignalError> {
        let text = serde_json::to_string_pretty(self).map_err(std::io::Error::from)?;
        fs::write(path, text + "\n")?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self, SignalError> {
        let text = fs::read_to_string(path)?;
        let params: Self =
            serde_json::from_str(&text).map_err(|e| SignalError::Parse { line: e.line(), message: e.to_string() })?;
        if params.ranges.len() != SIGNAL_COUNT {
            return Err(SignalError::Parse { line: 0, message: "expected 9 ranges".into() });
        }
        Ok(params)
    }
}

/// One row of the signals file.
#[derive(Debug, Clone, PartialEq)]
pub struct SignalRow {
    pub mcq_id: String,
    pub raw: RawSignals,
}

pub fn signals_header() -> String {
    let mut h = String::from("mcq_id");
    for n in SIGNAL_NAMES {
        let _ = write!(h, ",{n}");
    }
    for n in SIGNAL_NAMES {
        let _ = write!(h, ",norm_{n}");
    }
    h
}

fn fmt_value(v: f64) -> String {
    // shortest round-trip representation keeps files byte-stable
    format!("{v}")
}

/// Writes raw and normalized columns. Rows with a missing signal keep empty
/// cells and are not normalized.
pub fn write_signals_csv(path: &Path, rows: &[SignalRow], params: &NormParams) -> Result<(), SignalError> {
    let mut text = signals_header();
    text.push('\n');
    for row in rows {
        text.push_str(&row.mcq_id);
        let r = &row.raw;
        let cells = [
            Some(f64::from(r.reasoning)),
            Some(f64::from(r.extra_triple)),
            Some(r.distractor_depth),
            Some(r.node_embed_sim),
            Some(r.text_embed_sim),
            Some(r.degree_centrality),
            Some(r.readability),
            Some(f64::from(r.above_largest_gap_count)),
            r.llm_extra_fact.map(f64::from),
        ];
        for c in cells {
            text.push(',');
            if let Some(v) = c {
                text.push_str(&fmt_value(v));
            }
        }
        match r.values() {
            Some(values) => {
                for v in apply_normalization(&values, params).0 {
                    text.push(',');
                    text.push_str(&fmt_value(v));
                }
            }
            None => text.push_str(&",".repeat(SIGNAL_COUNT)),
        }
        text.push('\n');
    }
    fs::write(path, text)?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn flesch_examples() {
        assert!((flesch(10, 1, 15) - 69.785).abs() < 1e-6);
        assert!((flesch(10, 1, 10) - 112.085).abs() < 1e-6);
        assert!((flesch(1, 1, 1) - 121.22).abs() < 1e-6);
        assert!((signal_readability("a").unwrap() - 121.22).abs() < 1e-6);
        assert!(matches!(signal_readability(" ?! "), Err(SignalError::EmptyStem)));
    }

    #[test]
    fn syllable_and_sentence_counters() {
        let cases = [
            ("a", 1),
            ("the", 1),
            ("table", 2),
            ("capital", 3),
            ("river", 2),
            ("flows", 1),
            ("which", 1),
            ("country", 2),
            ("Seine", 1),
            ("queue", 1),
            ("rhythm", 1),
            ("1815", 1),
            ("people", 2),
            ("made", 1),
        ];
        for (w, n) in cases {
            assert_eq!(count_syllables(w), n, "{w}");
        }
        assert_eq!(count_sentences("One. Two?! Three"), 2);
        assert_eq!(count_sentences("no punctuation"), 1);
        assert_eq!(stem_words("Which city, on the Seine?"), ["Which", "city", "on", "the", "Seine"]);
    }

    #[test]
    fn gap_examples() {
        assert_eq!(above_largest_gap([0.9, 0.8, 0.4, 0.3]), 2);
        assert_eq!(above_largest_gap([0.9, 0.5, 0.4, 0.3]), 1);
        assert_eq!(above_largest_gap([0.5; 4]), 1);
        assert_eq!(above_largest_gap([0.3, 0.4, 0.9, 0.8]), 2);
    }

    #[test]
    fn text_ratio_examples() {
        let mut w = Vec::new();
        assert!((text_sim_ratio(&[0.2, 0.3, 0.4], 0.6, &mut w) - 0.5).abs() < 1e-12);
        assert!((text_sim_ratio(&[0.7; 3], 0.7, &mut w) - 1.0).abs() < 1e-12);
        assert!(w.is_empty());
        let v = text_sim_ratio(&[1e-7; 3], 0.0, &mut w);
        assert!((v - 0.1).abs() < 1e-9);
        assert_eq!(w.len(), 1);
    }

    #[test]
    fn normalization_examples() {
        let mut rows = vec![[0.0; 9]; 3];
        for (r, v) in rows.iter_mut().zip([10.0, 60.0, 110.0]) {
            r[6] = v;
            r[2] = 0.5;
        }
        rows[0][0] = 1.0;
        let p = fit_normalization(&rows).unwrap();
        assert_eq!(p.ranges[6], SignalRange { min: 10.0, max: 110.0 });
        assert_eq!(p.ranges[0], SignalRange { min: 0.0, max: 1.0 });
        assert_eq!(p.ranges[2], SignalRange { min: 0.5, max: 1.5 });
        let mid = apply_normalization(&rows[1], &p);
        assert_eq!(mid.0[6], 0.5);
        assert_eq!(mid.0[2], 0.0);
        assert_eq!(apply_normalization(&rows[0], &p).0[6], 0.0);
        assert_eq!(apply_normalization(&rows[2], &p).0[6], 1.0);
        let mut out = rows[2];
        out[6] = 500.0;
        assert_eq!(apply_normalization(&out, &p).0[6], 1.0);
        assert!(fit_normalization(&[]).is_err());
    }

    proptest! {
        #[test]
        fn gap_is_permutation_invariant(s in prop::array::uniform4(-1.0f64..1.0), perm in Just([3usize, 1, 0, 2])) {
            let p = [s[perm[0]], s[perm[1]], s[perm[2]], s[perm[3]]];
            prop_assert_eq!(above_largest_gap(s), above_largest_gap(p));
            prop_assert!((1..=3).contains(&above_largest_gap(s)));
        }

        #[test]
        fn normalized_components_in_unit_interval(
            rows in prop::collection::vec(prop::array::uniform9(-50.0f64..50.0), 1..20),
            probe in prop::array::uniform9(-500.0f64..500.0),
        ) {
            let p = fit_normalization(&rows).unwrap();
            for r in rows.iter().chain(std::iter::once(&probe)) {
                prop_assert!(apply_normalization(r, &p).0.iter().all(|v| (0.0..=1.0).contains(v)));
            }
            for j in 0..9 {
                let col: Vec<f64> = rows.iter().map(|r| apply_normalization(r, &p).0[j]).collect();
                if rows.iter().any(|r| r[j] != rows[0][j]) {
                    prop_assert!(col.contains(&0.0) && col.contains(&1.0));
                }
            }
        }
    }
}
