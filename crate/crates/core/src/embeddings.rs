//! Node and text embeddings.
//!
//! Node embeddings use fast random projection: a sparse random sign vector
//! per node, repeatedly averaged over neighbours, with each propagation
//! power row-normalized and mixed by per-iteration weights. Base vectors
//! are seeded by node id, so results do not depend on insertion order.
//!
//! Text embeddings come from a [`TextEmbedder`]: either an HTTP provider or
//! a deterministic feature-hashing fallback for hermetic runs.

use std::collections::{BTreeMap, BTreeSet};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use serde_json::json;

use crate::graph::KnowledgeGraph;
use crate::hashing::{derive_seed, stable_u64};
use crate::llm::http::{HttpClient, RetryPolicy};
use crate::llm::stub::word_tokens;
use crate::llm::{read_credential, LlmError};

#[derive(Debug, thiserror::Error)]
pub enum EmbeddingError {
    #[error("cannot embed an empty graph")]
    EmptyGraph,
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error("dimension mismatch: {0} vs {1}")]
    DimMismatch(usize, usize),
    #[error("cosine similarity is undefined for a zero vector")]
    ZeroVector,
    #[error("vector has no components or a non-finite value")]
    InvalidVector,
    #[error("text has no tokens to embed")]
    EmptyText,
    #[error("no embedding for node `{0}`")]
    MissingNode(String),
    #[error("embedding backend: {0}")]
    Backend(#[from] LlmError),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct EmbeddingVector(Vec<f64>);

impl EmbeddingVector {
    pub fn new(values: Vec<f64>) -> Result<Self, EmbeddingError> {
        if values.is_empty() || values.iter().any(|v| !v.is_finite()) {
            return Err(EmbeddingError::InvalidVector);
        }
        Ok(Self(values))
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn values(&self) -> &[f64] {
        &self.0
    }

    pub fn norm(&self) -> f64 {
        self.0.iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    pub fn is_zero(&self) -> bool {
        self.0.iter().all(|&v| v == 0.0)
    }
}

pub fn cosine(a: &EmbeddingVector, b: &EmbeddingVector) -> Result<f64, EmbeddingError> {
    if a.dim() != b.dim() {
        return Err(EmbeddingError::DimMismatch(a.dim(), b.dim()));
    }
    let (na, nb) = (a.norm(), b.norm());
    if na == 0.0 || nb == 0.0 {
        return Err(EmbeddingError::ZeroVector);
    }
    let dot: f64 = a.0.iter().zip(&b.0).map(|(x, y)| x * y).sum();
    Ok((dot / (na * nb)).clamp(-1.0, 1.0))
}

/// Cosine that maps a zero vector to similarity 0 and records a warning.
pub fn cosine_or_zero(
    a: &EmbeddingVector,
    b: &EmbeddingVector,
    warnings: &mut Vec<String>,
) -> Result<f64, EmbeddingError> {
    match cosine(a, b) {
        Err(EmbeddingError::ZeroVector) => {
            warnings.push("zero vector in cosine similarity; using 0".into());
            Ok(0.0)
        }
        other => other,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FastRpConfig {
    pub dim: usize,
    /// Weight of propagation power 1, 2, ... in the final embedding.
    pub iteration_weights: Vec<f64>,
    pub seed: u64,
}

impl Default for FastRpConfig {
    fn default() -> Self {
        Self { dim: 128, iteration_weights: vec![0.0, 1.0, 1.0], seed: 42 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NodeEmbeddingTable {
    pub dim: usize,
    pub seed: u64,
    pub vectors: BTreeMap<String, EmbeddingVector>,
    /// Nodes whose propagated vector is all zeros (isolated nodes).
    pub zero_vectors: BTreeSet<String>,
}

impl NodeEmbeddingTable {
    pub fn get(&self, id: &str) -> Result<&EmbeddingVector, EmbeddingError> {
        self.vectors.get(id).ok_or_else(|| EmbeddingError::MissingNode(id.to_string()))
    }
}

/// Sparse sign vector with density `1/sqrt(dim)`, seeded by node id.
pub fn sparse_sign_vector(node_id: &str, dim: usize, seed: u64) -> Vec<f64> {
    let density = 1.0 / (dim as f64).sqrt();
    let scale = (1.0 / density).sqrt() / (dim as f64).sqrt();
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, &["fastrp", node_id]));
    (0..dim)
        .map(|_| {
            if rng.gen::<f64>() < density {
                if rng.gen::<bool>() {
                    scale
                } else {
                    -scale
                }
            } else {
                0.0
            }
        })
        .collect()
}

pub fn fastrp_embed(graph: &KnowledgeGraph, config: &FastRpConfig) -> Result<NodeEmbeddingTable, EmbeddingError> {
    if config.dim < 2 {
        return Err(EmbeddingError::InvalidConfig("dim must be at least 2".into()));
    }
    let base: BTreeMap<String, Vec<f64>> =
        graph.nodes().map(|n| (n.id.clone(), sparse_sign_vector(&n.id, config.dim, config.seed))).collect();
    let mut table = fastrp_propagate(graph, &base, &config.iteration_weights)?;
    table.seed = config.seed;
    Ok(table)
}

/// Propagates caller-supplied base vectors through the degree-normalized
/// undirected adjacency.
pub fn fastrp_propagate(
    graph: &KnowledgeGraph,
    base: &BTreeMap<String, Vec<f64>>,
    iteration_weights: &[f64],
) -> Result<NodeEmbeddingTable, EmbeddingError> {
    if graph.is_empty() {
        return Err(EmbeddingError::EmptyGraph);
    }
    if !iteration_weights.iter().any(|&w| w != 0.0) {
        return Err(EmbeddingError::InvalidConfig("at least one iteration weight must be nonzero".into()));
    }
    let ids: Vec<&str> = graph.nodes().map(|n| n.id.as_str()).collect();
    let index: BTreeMap<&str, usize> = ids.iter().enumerate().map(|(i, id)| (*id, i)).collect();
    let dim =
        base.values().next().map(Vec::len).ok_or_else(|| EmbeddingError::InvalidConfig("no base vectors".into()))?;

    // neighbour lists with edge multiplicity, sorted so float sums do not
    // depend on insertion order
    let mut adjacency: Vec<Vec<usize>> = vec![Vec::new(); ids.len()];
    for edge in graph.edges() {
        let (s, d) = (index[edge.src.as_str()], index[edge.dst.as_str()]);
        adjacency[s].push(d);
        adjacency[d].push(s);
    }
    adjacency.iter_mut().for_each(|n| n.sort_unstable());

    let mut current: Vec<Vec<f64>> = Vec::with_capacity(ids.len());
    for id in &ids {
        let row = base.get(*id).ok_or_else(|| EmbeddingError::MissingNode(id.to_string()))?;
        if row.len() != dim {
            return Err(EmbeddingError::DimMismatch(row.len(), dim));
        }
        current.push(row.clone());
    }

    let mut out = vec![vec![0.0; dim]; ids.len()];
    for &weight in iteration_weights {
        let next: Vec<Vec<f64>> = adjacency
            .iter()
            .map(|neighbours| {
                let mut row = vec![0.0; dim];
                if neighbours.is_empty() {
                    return row;
                }
                for &j in neighbours {
                    for (acc, v) in row.iter_mut().zip(&current[j]) {
                        *acc += v;
                    }
                }
                let deg = neighbours.len() as f64;
                row.iter_mut().for_each(|x| *x /= deg);
                l2_normalize(&mut row);
                row
            })
            .collect();
        for (acc, row) in out.iter_mut().zip(&next) {
            for (a, v) in acc.iter_mut().zip(row) {
                *a += weight * v;
            }
        }
        current = next;
    }

    let mut vectors = BTreeMap::new();
    let mut zero_vectors = BTreeSet::new();
    for (id, mut row) in ids.iter().zip(out) {
        if !l2_normalize(&mut row) {
            zero_vectors.insert(id.to_string());
        }
        vectors.insert(id.to_string(), EmbeddingVector(row));
    }
    if !zero_vectors.is_empty() {
        log::warn!("{} node(s) received a zero embedding", zero_vectors.len());
    }
    Ok(NodeEmbeddingTable { dim, seed: 0, vectors, zero_vectors })
}

/// Normalizes in place; returns false (leaving zeros) for a zero row.
fn l2_normalize(row: &mut [f64]) -> bool {
    let norm = row.iter().map(|v| v * v).sum::<f64>().sqrt();
    if norm == 0.0 {
        return false;
    }
    row.iter_mut().for_each(|v| *v /= norm);
    true
}

pub trait TextEmbedder: Send + Sync {
    fn embed_batch(&self, texts: &[&str]) -> Result<Vec<EmbeddingVector>, EmbeddingError>;

    fn embed(&self, text: &str) -> Result<EmbeddingVector, EmbeddingError> {
        let mut batch = self.embed_batch(&[text])?;
        batch.pop().ok_or(EmbeddingError::EmptyText)
    }
}

/// Hermetic text embedding: token unigrams, token bigrams and character
/// trigrams hashed into a fixed number of buckets, then L2-normalized.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct HashingEmbedder {
    pub dim: usize,
}

impl Default for HashingEmbedder {
    fn default() -> Self {
        Self { dim: 256 }
    }
}

impl HashingEmbedder {
    fn features(text: &str) -> Vec<String> {
        let tokens = word_tokens(text);
        let mut features: Vec<String> = tokens.iter().map(|t| format!("w:{t}")).collect();
        features.extend(tokens.windows(2).map(|w| format!("b:{} {}", w[0], w[1])));
        for token in &tokens {
            let padded: Vec<char> = format!("#{token}#").chars().collect();
            features.extend(padded.windows(3).map(|w| format!("c:{}", w.iter().collect::<String>())));
        }
        features
    }

    pub fn embed_one(&self, text: &str) -> Result<EmbeddingVector, EmbeddingError> {
        let features = Self::features(text);
        if features.is_empty() {
            return Err(EmbeddingError::EmptyText);
        }
        let mut values = vec![0.0; self.dim];
        for f in &features {
            values[(stable_u64(&["text-hash", f]) % self.dim as u64) as usize] += 1.0;
        }
        l2_normalize(&mut values);
        Ok(EmbeddingVector(values))
    }
}

impl TextEmbedder for HashingEmbedder {
    fn embed_batch(&self, texts: &[&str]) -> Result<Vec<EmbeddingVector>, EmbeddingError> {
        texts.iter().map(|t| self.embed_one(t)).collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HttpEmbedderConfig {
    pub endpoint: String,
    pub model: String,
    pub api_key_env: String,
    #[serde(default)]
    pub retry: RetryPolicy,
    #[serde(default)]
    pub requests_per_second: Option<f64>,
    #[serde(default = "default_in_flight")]
    pub max_in_flight: usize,
}

fn default_in_flight() -> usize {
    4
}

/// Provider adapter: POST `{"model", "input": [..]}`, expect `{"vectors": [[..]]}`.
#[derive(Debug)]
pub struct HttpEmbedder {
    client: HttpClient,
    endpoint: String,
    model: String,
    api_key: String,
}

impl HttpEmbedder {
    pub fn from_config(cfg: &HttpEmbedderConfig) -> Result<Self, EmbeddingError> {
        let api_key = read_credential(&cfg.api_key_env)?;
        Ok(Self::with_api_key(cfg, api_key))
    }

    pub fn with_api_key(cfg: &HttpEmbedderConfig, api_key: String) -> Self {
        Self {
            client: HttpClient::new(cfg.retry, cfg.requests_per_second, cfg.max_in_flight),
            endpoint: cfg.endpoint.clone(),
            model: cfg.model.clone(),
            api_key,
        }
    }
}

impl TextEmbedder for HttpEmbedder {
    fn embed_batch(&self, texts: &[&str]) -> Result<Vec<EmbeddingVector>, EmbeddingError> {
        if texts.iter().any(|t| t.trim().is_empty()) {
            return Err(EmbeddingError::EmptyText);
        }
        let body = json!({ "model": self.model, "input": texts });
        let (reply, _) = self.client.post_json(&self.endpoint, Some(&self.api_key), &body)?;
        let rows: Vec<Vec<f64>> = serde_json::from_value(reply["vectors"].clone())
            .map_err(|e| LlmError::Malformed(format!("bad `vectors` field: {e}")))?;
        if rows.len() != texts.len() {
            return Err(LlmError::Malformed(format!("expected {} vectors, got {}", texts.len(), rows.len())).into());
        }
        rows.into_iter().map(EmbeddingVector::new).collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum TextBackendKind {
    Hashing {
        #[serde(default = "default_hash_dim")]
        dim: usize,
    },
    Live(HttpEmbedderConfig),
}

fn default_hash_dim() -> usize {
    256
}

impl Default for TextBackendKind {
    fn default() -> Self {
        TextBackendKind::Hashing { dim: 256 }
    }
}

impl TextBackendKind {
    pub fn build(&self) -> Result<Box<dyn TextEmbedder>, EmbeddingError> {
        Ok(match self {
            TextBackendKind::Hashing { dim } => {
                if *dim == 0 {
                    return Err(EmbeddingError::InvalidConfig("dim must be positive".into()));
                }
                Box::new(HashingEmbedder { dim: *dim })
            }
            TextBackendKind::Live(cfg) => Box::new(HttpEmbedder::from_config(cfg)?),
        })
    }
}
