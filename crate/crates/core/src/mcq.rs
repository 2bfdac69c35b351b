//! Multiple-choice question generation: key selection, subgraph sampling,
//! stem writing, depth-graded distractors and LLM validation with retries.

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use rand::distributions::{Distribution, WeightedIndex};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::graph::{GraphError, KnowledgeGraph, RelationEdge};
use crate::hashing::derive_seed;
use crate::llm::prompts::{parse_yes_no, stem_prompt, validation_prompt, FactRecord, FactRole};
use crate::llm::stub::word_tokens;
use crate::llm::{ChatBackend, LlmError};
use crate::signals::RawSignals;

#[derive(Debug, thiserror::Error)]
pub enum McqError {
    #[error(transparent)]
    Graph(#[from] GraphError),
    #[error(transparent)]
    Llm(#[from] LlmError),
    #[error("insufficient distractors: found {found}, need 3")]
    InsufficientDistractors { found: usize },
    #[error("stem still names the key after {attempts} attempt(s)")]
    KeyLeak { attempts: usize },
    #[error("model returned an empty stem")]
    EmptyStem,
    #[error("invalid subgraph: {0}")]
    InvalidSubgraph(String),
    #[error("invalid mcq {id}: {message}")]
    InvalidMcq { id: String, message: String },
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SubgraphKind {
    Triple,
    Quintuple,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AssociatedSubgraph {
    pub kind: SubgraphKind,
    pub key: String,
    /// One edge for a triple; two edges forming a path from the key for a quintuple.
    pub main: Vec<RelationEdge>,
    pub extra: Option<RelationEdge>,
}

impl AssociatedSubgraph {
    pub fn edges(&self) -> impl Iterator<Item = &RelationEdge> {
        self.main.iter().chain(self.extra.as_ref())
    }

    /// V_s: every endpoint of a main or extra edge.
    pub fn nodes(&self) -> BTreeSet<String> {
        self.edges().flat_map(|e| [e.src.clone(), e.dst.clone()]).collect()
    }

    pub fn validate(&self) -> Result<(), McqError> {
        let bad = |m: &str| Err(McqError::InvalidSubgraph(m.to_string()));
        match (self.kind, self.main.len()) {
            (SubgraphKind::Triple, 1) | (SubgraphKind::Quintuple, 2) => {}
            _ => return bad("main edge count does not match kind"),
        }
        let Some(mid) = self.main[0].other(&self.key) else {
            return bad("first main edge does not touch the key");
        };
        if self.kind == SubgraphKind::Quintuple {
            match self.main[1].other(mid) {
                Some(end) if end != self.key && end != mid => {}
                _ => return bad("main edges do not form a simple path from the key"),
            }
        }
        if let Some(extra) = &self.extra {
            if !extra.touches(&self.key) || self.main.contains(extra) {
                return bad("extra edge must touch the key and differ from main edges");
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Mcq {
    pub id: String,
    pub stem: String,
    pub key: String,
    pub distractors: Vec<String>,
    pub distractor_depths: Vec<usize>,
    pub subgraph: AssociatedSubgraph,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub raw_signals: Option<RawSignals>,
    pub attempts: usize,
}

impl Mcq {
    /// Checks the structural invariants against the source graph.
    pub fn check(&self, g: &KnowledgeGraph, max_depth: usize) -> Result<(), McqError> {
        let fail = |m: String| Err(McqError::InvalidMcq { id: self.id.clone(), message: m });
        if self.stem.trim().is_empty() {
            return fail("empty stem".into());
        }
        if self.distractors.len() != 3 || self.distractor_depths.len() != 3 {
            return fail("need exactly 3 distractors with depths".into());
        }
        let distinct: BTreeSet<&String> = self.distractors.iter().collect();
        if distinct.len() != 3 || distinct.contains(&self.key) {
            return fail("distractors must be distinct and differ from the key".into());
        }
        let key = g.node(&self.key).ok_or_else(|| GraphError::NotFound(self.key.clone()))?;
        for (d, depth) in self.distractors.iter().zip(&self.distractor_depths) {
            let node = g.node(d).ok_or_else(|| GraphError::NotFound(d.clone()))?;
            if !node.has_type(&key.entity_type) {
                return fail(format!("distractor `{d}` has type `{}`", node.entity_type));
            }
            if !(1..=max_depth).contains(depth) {
                return fail(format!("distractor depth {depth} outside 1..={max_depth}"));
            }
        }
        if self.subgraph.key != self.key {
            return fail("subgraph is anchored at a different node".into());
        }
        self.subgraph.validate()
    }

    pub fn options(&self) -> Vec<&str> {
        std::iter::once(self.key.as_str()).chain(self.distractors.iter().map(String::as_str)).collect()
    }
}

/// Relative weights of the four subgraph shapes.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct KindWeights {
    pub triple: f64,
    pub triple_extra: f64,
    pub quintuple: f64,
    pub quintuple_extra: f64,
}

impl Default for KindWeights {
    fn default() -> Self {
        Self { triple: 1.0, triple_extra: 1.0, quintuple: 1.0, quintuple_extra: 1.0 }
    }
}

impl KindWeights {
    pub fn only(kind: SubgraphKind, extra: bool) -> Self {
        let mut w = Self { triple: 0.0, triple_extra: 0.0, quintuple: 0.0, quintuple_extra: 0.0 };
        match (kind, extra) {
            (SubgraphKind::Triple, false) => w.triple = 1.0,
            (SubgraphKind::Triple, true) => w.triple_extra = 1.0,
            (SubgraphKind::Quintuple, false) => w.quintuple = 1.0,
            (SubgraphKind::Quintuple, true) => w.quintuple_extra = 1.0,
        }
        w
    }

    fn draw<R: Rng + ?Sized>(&self, rng: &mut R) -> Result<(SubgraphKind, bool), McqError> {
        let weights = [self.triple, self.triple_extra, self.quintuple, self.quintuple_extra];
        let dist =
            WeightedIndex::new(weights).map_err(|e| McqError::InvalidSubgraph(format!("bad kind weights: {e}")))?;
        Ok(match dist.sample(rng) {
            0 => (SubgraphKind::Triple, false),
            1 => (SubgraphKind::Triple, true),
            2 => (SubgraphKind::Quintuple, false),
            _ => (SubgraphKind::Quintuple, true),
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GenerationConfig {
    pub keys: usize,
    pub per_key: usize,
    pub max_depth: usize,
    pub retries: usize,
    /// Extra stem requests (with a reminder) when a stem names the key.
    pub leak_retries: usize,
    pub kind_weights: KindWeights,
    pub seed: u64,
}

impl Default for GenerationConfig {
    fn default() -> Self {
        Self {
            keys: 40,
            per_key: 4,
            max_depth: 5,
            retries: 3,
            leak_retries: 2,
            kind_weights: KindWeights::default(),
            seed: 42,
        }
    }
}

pub fn select_keys(g: &KnowledgeGraph, k: usize) -> Vec<String> {
    g.top_k_by_centrality(k)
}

pub fn sample_subgraph<R: Rng + ?Sized>(
    g: &KnowledgeGraph,
    key: &str,
    rng: &mut R,
    weights: &KindWeights,
) -> Result<AssociatedSubgraph, McqError> {
    let (kind, want_extra) = weights.draw(rng)?;
    let first = g.sample_triple(key, rng)?;
    let (kind, main) = match kind {
        SubgraphKind::Triple => (SubgraphKind::Triple, vec![first]),
        SubgraphKind::Quintuple => match g.sample_quintuple(key, rng) {
            Ok((e1, _, e2)) => (SubgraphKind::Quintuple, vec![e1, e2]),
            Err(GraphError::NoCandidate(msg)) => {
                log::debug!("{msg}; falling back to a triple");
                (SubgraphKind::Triple, vec![first])
            }
            Err(e) => return Err(e.into()),
        },
    };
    let extra = if want_extra {
        let extra = g.sample_extra_triple(key, &main, rng)?;
        if extra.is_none() {
            log::debug!("`{key}` has no spare edge for an extra triple");
        }
        extra
    } else {
        None
    };
    Ok(AssociatedSubgraph { kind, key: key.to_string(), main, extra })
}

pub fn fact_of(g: &KnowledgeGraph, edge: &RelationEdge) -> Result<FactRecord, McqError> {
    let node = |id: &str| g.node(id).ok_or_else(|| GraphError::NotFound(id.to_string()));
    let (s, o) = (node(&edge.src)?, node(&edge.dst)?);
    Ok(FactRecord {
        subject: s.name.clone(),
        subject_type: s.entity_type.clone(),
        predicate: edge.predicate.clone(),
        object: o.name.clone(),
        object_type: o.entity_type.clone(),
    })
}

pub fn subgraph_facts(g: &KnowledgeGraph, sub: &AssociatedSubgraph) -> Result<Vec<FactRecord>, McqError> {
    sub.edges().map(|e| fact_of(g, e)).collect()
}

/// True when the name's tokens occur contiguously in the text's tokens.
pub fn mentions_name(text: &str, name: &str) -> bool {
    let needle = word_tokens(name);
    if needle.is_empty() {
        return false;
    }
    word_tokens(text).windows(needle.len()).any(|w| w == needle.as_slice())
}

pub fn generate_stem(
    g: &KnowledgeGraph,
    sub: &AssociatedSubgraph,
    backend: &dyn ChatBackend,
    leak_retries: usize,
) -> Result<String, McqError> {
    let key = g.node(&sub.key).ok_or_else(|| GraphError::NotFound(sub.key.clone()))?;
    let mut facts = Vec::new();
    for e in &sub.main {
        facts.push((FactRole::Path, fact_of(g, e)?));
    }
    if let Some(e) = &sub.extra {
        facts.push((FactRole::Extra, fact_of(g, e)?));
    }
    for attempt in 0..=leak_retries {
        let prompt = stem_prompt(&key.name, &key.entity_type, &facts, attempt > 0);
        let reply = backend.complete(&prompt)?;
        let stem = reply.lines().map(str::trim).filter(|l| !l.is_empty()).collect::<Vec<_>>().join(" ");
        if stem.is_empty() {
            return Err(McqError::EmptyStem);
        }
        if !mentions_name(&stem, &key.name) {
            return Ok(stem);
        }
        log::debug!("stem names the key `{}`; regenerating", key.name);
    }
    Err(McqError::KeyLeak { attempts: leak_retries + 1 })
}

/// Picks three same-type distractors outside V_s: one per ascending depth
/// level first, then the shallowest remaining. Returned sorted by depth.
pub fn select_distractors<R: Rng + ?Sized>(
    g: &KnowledgeGraph,
    sub: &AssociatedSubgraph,
    max_depth: usize,
    rng: &mut R,
) -> Result<Vec<(String, usize)>, McqError> {
    let key = g.node(&sub.key).ok_or_else(|| GraphError::NotFound(sub.key.clone()))?;
    let exclude = sub.nodes();
    let mut levels: BTreeMap<usize, Vec<String>> = BTreeMap::new();
    for (id, depth) in g.bfs_depths(&key.id, max_depth, Some(&key.entity_type))? {
        if !exclude.contains(&id) {
            levels.entry(depth).or_default().push(id);
        }
    }
    let found: usize = levels.values().map(Vec::len).sum();
    if found < 3 {
        return Err(McqError::InsufficientDistractors { found });
    }
    // level lists are in ascending id order (bfs output is an ordered map)
    let mut picked = Vec::with_capacity(3);
    for (&depth, level) in levels.iter_mut() {
        if picked.len() == 3 {
            break;
        }
        picked.push((level.remove(rng.gen_range(0..level.len())), depth));
    }
    for (&depth, level) in levels.iter_mut() {
        while picked.len() < 3 && !level.is_empty() {
            picked.push((level.remove(rng.gen_range(0..level.len())), depth));
        }
    }
    picked.sort_by_key(|(_, d)| *d);
    Ok(picked)
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ValidationOutcome {
    pub valid: bool,
    /// Distractors the judge considered a possibly correct answer.
    pub judged_correct: Vec<String>,
    pub errors: Vec<String>,
}

/// One judge prompt per distractor. Any "yes", unreadable verdict or
/// transport failure makes the question invalid.
pub fn validate_mcq(g: &KnowledgeGraph, mcq: &Mcq, backend: &dyn ChatBackend) -> Result<ValidationOutcome, McqError> {
    let facts = subgraph_facts(g, &mcq.subgraph)?;
    let mut outcome = ValidationOutcome { valid: true, ..Default::default() };
    for d in &mcq.distractors {
        let name = &g.node(d).ok_or_else(|| GraphError::NotFound(d.clone()))?.name;
        match backend.complete(&validation_prompt(&mcq.stem, name, &facts)) {
            Ok(reply) => match parse_yes_no(&reply) {
                Some(false) => {}
                Some(true) => outcome.judged_correct.push(d.clone()),
                None => outcome.errors.push(format!("unreadable verdict for `{d}`: {reply:?}")),
            },
            Err(e) => outcome.errors.push(format!("validation of `{d}` failed: {e}")),
        }
    }
    outcome.valid = outcome.judged_correct.is_empty() && outcome.errors.is_empty();
    Ok(outcome)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "reason", rename_all = "snake_case")]
pub enum AbortReason {
    NoCandidate { message: String },
    InsufficientDistractors { found: usize },
    DuplicateSubgraph,
    KeyLeak,
    Transport { message: String },
    Invalid { judged_correct: Vec<String>, errors: Vec<String> },
    Other { message: String },
}

impl std::fmt::Display for AbortReason {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            AbortReason::NoCandidate { message } => write!(f, "no candidate subgraph: {message}"),
            AbortReason::InsufficientDistractors { found } => {
                write!(f, "insufficient distractors (found {found})")
            }
            AbortReason::DuplicateSubgraph => write!(f, "duplicate subgraph for this key"),
            AbortReason::KeyLeak => write!(f, "stem names the key"),
            AbortReason::Transport { message } => write!(f, "transport failure: {message}"),
            AbortReason::Invalid { judged_correct, errors } => {
                write!(f, "validation failed (judged correct: {judged_correct:?}; errors: {})", errors.len())
            }
            AbortReason::Other { message } => write!(f, "{message}"),
        }
    }
}

impl From<McqError> for AbortReason {
    fn from(e: McqError) -> Self {
        match e {
            McqError::Graph(GraphError::NoCandidate(message)) => AbortReason::NoCandidate { message },
            McqError::InsufficientDistractors { found } => AbortReason::InsufficientDistractors { found },
            McqError::KeyLeak { .. } => AbortReason::KeyLeak,
            McqError::Llm(e) => AbortReason::Transport { message: e.to_string() },
            other => AbortReason::Other { message: other.to_string() },
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AbortReport {
    pub key: String,
    pub slot: usize,
    /// One entry per failed attempt, in order.
    pub reasons: Vec<AbortReason>,
}

pub fn attempt_rng(seed: u64, key: &str, slot: usize, attempt: usize) -> ChaCha8Rng {
    let (slot, attempt) = (slot.to_string(), attempt.to_string());
    ChaCha8Rng::seed_from_u64(derive_seed(seed, &["mcq", key, &slot, &attempt]))
}

/// Runs up to `config.retries` attempts for one (key, slot). Subgraphs in
/// `used` (earlier questions for the same key) count as failed attempts.
pub fn generate_mcq_with_retry(
    g: &KnowledgeGraph,
    key: &str,
    slot: usize,
    config: &GenerationConfig,
    backend: &dyn ChatBackend,
    used: &[AssociatedSubgraph],
) -> Result<Mcq, AbortReport> {
    let mut reasons = Vec::new();
    for attempt in 0..config.retries.max(1) {
        let mut rng = attempt_rng(config.seed, key, slot, attempt);
        match try_once(g, key, config, backend, used, &mut rng) {
            Ok(mut mcq) => {
                mcq.attempts = attempt + 1;
                return Ok(mcq);
            }
            Err(reason) => {
                log::debug!("{key}#{slot} attempt {}: {reason}", attempt + 1);
                reasons.push(reason);
            }
        }
    }
    Err(AbortReport { key: key.to_string(), slot, reasons })
}

fn try_once(
    g: &KnowledgeGraph,
    key: &str,
    config: &GenerationConfig,
    backend: &dyn ChatBackend,
    used: &[AssociatedSubgraph],
    rng: &mut ChaCha8Rng,
) -> Result<Mcq, AbortReason> {
    let sub = sample_subgraph(g, key, rng, &config.kind_weights)?;
    if used.contains(&sub) {
        return Err(AbortReason::DuplicateSubgraph);
    }
    // distractors first: a scarce key fails without spending an LLM call
    let picked = select_distractors(g, &sub, config.max_depth, rng)?;
    let stem = generate_stem(g, &sub, backend, config.leak_retries)?;
    let (distractors, distractor_depths) = picked.into_iter().unzip();
    let mcq = Mcq {
        id: String::new(),
        stem,
        key: key.to_string(),
        distractors,
        distractor_depths,
        subgraph: sub,
        raw_signals: None,
        attempts: 0,
    };
    let outcome = validate_mcq(g, &mcq, backend)?;
    if !outcome.valid {
        return Err(AbortReason::Invalid { judged_correct: outcome.judged_correct, errors: outcome.errors });
    }
    Ok(mcq)
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct GenerationRun {
    pub mcqs: Vec<Mcq>,
    pub aborts: Vec<AbortReport>,
}

/// Generates up to `per_key` questions for each of the top `keys` nodes.
/// Keys run in parallel; ids are assigned afterwards in (key rank, slot)
/// order, so output does not depend on scheduling.
pub fn generate_all(g: &KnowledgeGraph, config: &GenerationConfig, backend: &dyn ChatBackend) -> GenerationRun {
    let keys = select_keys(g, config.keys);
    let per_key: Vec<(Vec<Mcq>, Vec<AbortReport>)> = keys
        .par_iter()
        .map(|key| {
            let mut made: Vec<Mcq> = Vec::new();
            let mut aborted = Vec::new();
            for slot in 0..config.per_key {
                let used: Vec<AssociatedSubgraph> = made.iter().map(|m| m.subgraph.clone()).collect();
                match generate_mcq_with_retry(g, key, slot, config, backend, &used) {
                    Ok(m) => made.push(m),
                    Err(report) => aborted.push(report),
                }
            }
            (made, aborted)
        })
        .collect();
    let mut run = GenerationRun::default();
    for (made, aborted) in per_key {
        run.mcqs.extend(made);
        run.aborts.extend(aborted);
    }
    for (i, m) in run.mcqs.iter_mut().enumerate() {
        m.id = format!("mcq-{:04}", i + 1);
    }
    run
}

pub fn write_mcqs(path: &Path, mcqs: &[Mcq]) -> Result<(), McqError> {
    let mut out = BufWriter::new(fs::File::create(path)?);
    for m in mcqs {
        serde_json::to_writer(&mut out, m).map_err(std::io::Error::from)?;
        out.write_all(b"\n")?;
    }
    out.flush()?;
    Ok(())
}

pub fn read_mcqs(path: &Path) -> Result<Vec<Mcq>, McqError> {
    let reader = BufReader::new(fs::File::open(path)?);
    let mut out = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let mcq = serde_json::from_str(&line).map_err(|e| McqError::Parse { line: i + 1, message: e.to_string() })?;
        out.push(mcq);
    }
    Ok(out)
}

/// Shuffles a copy of the options with the given rng (used by presenters).
pub fn shuffled_options<R: Rng + ?Sized>(mcq: &Mcq, rng: &mut R) -> Vec<String> {
    let mut opts: Vec<String> = mcq.options().into_iter().map(str::to_string).collect();
    opts.shuffle(rng);
    opts
}
