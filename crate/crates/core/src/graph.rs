//! In-memory knowledge graph.
//!
//! Nodes are typed entities keyed by a normalized name, edges are directed
//! labeled relations. Both directions are indexed so that degree queries,
//! undirected BFS and incident-edge sampling are cheap. The graph is built
//! once by a single writer and then shared read-only.

use std::collections::{BTreeMap, BTreeSet, HashMap, HashSet, VecDeque};
use std::fmt;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use rand::Rng;
use serde::{Deserialize, Serialize};

#[derive(Debug, thiserror::Error)]
pub enum GraphError {
    #[error("validation error: {0}")]
    Validation(String),
    #[error("unknown node id `{0}`")]
    NotFound(String),
    #[error("no candidate: {0}")]
    NoCandidate(String),
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Canonical node id for a display name: trimmed, inner whitespace
/// collapsed, lowercased.
pub fn normalize_name(name: &str) -> String {
    name.split_whitespace().collect::<Vec<_>>().join(" ").to_lowercase()
}

fn normalize_predicate(predicate: &str) -> String {
    predicate.trim().to_lowercase()
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EntityNode {
    pub id: String,
    pub name: String,
    pub entity_type: String,
}

impl EntityNode {
    /// Builds a node whose id is the normalized name.
    pub fn new(name: &str, entity_type: &str) -> Self {
        Self {
            id: normalize_name(name),
            name: name.split_whitespace().collect::<Vec<_>>().join(" "),
            entity_type: entity_type.trim().to_string(),
        }
    }

    /// Entity types compare case-insensitively.
    pub fn has_type(&self, entity_type: &str) -> bool {
        self.entity_type.eq_ignore_ascii_case(entity_type.trim())
    }

    fn validate(&self) -> Result<(), GraphError> {
        if self.id.trim().is_empty() {
            return Err(GraphError::Validation("empty node id".into()));
        }
        if self.entity_type.trim().is_empty() {
            return Err(GraphError::Validation(format!("node `{}` has an empty entity type", self.id)));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct RelationEdge {
    pub src: String,
    pub predicate: String,
    pub dst: String,
}

impl RelationEdge {
    pub fn touches(&self, id: &str) -> bool {
        self.src == id || self.dst == id
    }

    /// The endpoint that is not `id`. Returns `None` if `id` is not incident.
    pub fn other(&self, id: &str) -> Option<&str> {
        if self.src == id {
            Some(&self.dst)
        } else if self.dst == id {
            Some(&self.src)
        } else {
            None
        }
    }

    /// Dedup key: predicates compare case-insensitively after trimming.
    fn key(&self) -> (String, String, String) {
        (self.src.clone(), normalize_predicate(&self.predicate), self.dst.clone())
    }
}

impl fmt::Display for RelationEdge {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "({}, {}, {})", self.src, self.predicate, self.dst)
    }
}

/// Outcome of [`KnowledgeGraph::add_triple`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AddOutcome {
    Inserted,
    Duplicate,
}

#[derive(Debug, Clone, Default)]
pub struct KnowledgeGraph {
    nodes: BTreeMap<String, EntityNode>,
    edges: Vec<RelationEdge>,
    edge_keys: HashSet<(String, String, String)>,
    out_edges: HashMap<String, Vec<usize>>,
    in_edges: HashMap<String, Vec<usize>>,
    warnings: Vec<String>,
}

impl PartialEq for KnowledgeGraph {
    /// Equality up to set ordering of nodes and edges.
    fn eq(&self, other: &Self) -> bool {
        if self.nodes != other.nodes || self.edges.len() != other.edges.len() {
            return false;
        }
        let mine: BTreeSet<_> = self.edges.iter().collect();
        let theirs: BTreeSet<_> = other.edges.iter().collect();
        mine == theirs
    }
}

impl KnowledgeGraph {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn node_count(&self) -> usize {
        self.nodes.len()
    }

    pub fn edge_count(&self) -> usize {
        self.edges.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn node(&self, id: &str) -> Option<&EntityNode> {
        self.nodes.get(id)
    }

    pub fn contains(&self, id: &str) -> bool {
        self.nodes.contains_key(id)
    }

    /// Nodes in ascending id order.
    pub fn nodes(&self) -> impl Iterator<Item = &EntityNode> {
        self.nodes.values()
    }

    pub fn edges(&self) -> &[RelationEdge] {
        &self.edges
    }

    /// Type conflicts and other non-fatal notes recorded during construction.
    pub fn warnings(&self) -> &[String] {
        &self.warnings
    }

    pub fn contains_edge(&self, edge: &RelationEdge) -> bool {
        self.edge_keys.contains(&edge.key())
    }

    /// Inserts a node, or keeps the existing one when the id is taken.
    /// A differing name or type on an existing id is recorded as a warning.
    pub fn upsert_node(&mut self, node: EntityNode) -> Result<&EntityNode, GraphError> {
        node.validate()?;
        let id = node.id.clone();
        match self.nodes.get(&id) {
            Some(existing) => {
                if !existing.has_type(&node.entity_type) {
                    let msg = format!(
                        "type conflict for `{}`: kept `{}`, ignored `{}`",
                        id, existing.entity_type, node.entity_type
                    );
                    log::warn!("{msg}");
                    self.warnings.push(msg);
                }
            }
            None => {
                self.nodes.insert(id.clone(), node);
            }
        }
        Ok(&self.nodes[&id])
    }

    /// Upserts both endpoints and adds the directed edge. Exact duplicates
    /// (same endpoints, predicate equal after trim and case folding) are no-ops.
    pub fn add_triple(
        &mut self,
        subject: EntityNode,
        predicate: &str,
        object: EntityNode,
    ) -> Result<AddOutcome, GraphError> {
        let predicate = predicate.trim();
        if predicate.is_empty() {
            return Err(GraphError::Validation("empty predicate".into()));
        }
        subject.validate()?;
        object.validate()?;
        if subject.id == object.id {
            return Err(GraphError::Validation(format!("self-loop on `{}` via `{}`", subject.id, predicate)));
        }
        let src = self.upsert_node(subject)?.id.clone();
        let dst = self.upsert_node(object)?.id.clone();
        let edge = RelationEdge { src, predicate: predicate.to_string(), dst };
        self.insert_edge(edge)
    }

    fn insert_edge(&mut self, edge: RelationEdge) -> Result<AddOutcome, GraphError> {
        if !self.edge_keys.insert(edge.key()) {
            return Ok(AddOutcome::Duplicate);
        }
        let idx = self.edges.len();
        self.out_edges.entry(edge.src.clone()).or_default().push(idx);
        self.in_edges.entry(edge.dst.clone()).or_default().push(idx);
        self.edges.push(edge);
        Ok(AddOutcome::Inserted)
    }

    fn require(&self, id: &str) -> Result<&EntityNode, GraphError> {
        self.nodes.get(id).ok_or_else(|| GraphError::NotFound(id.to_string()))
    }

    /// In-degree plus out-degree.
    pub fn degree_centrality(&self, id: &str) -> Result<usize, GraphError> {
        self.require(id)?;
        Ok(self.degree_unchecked(id))
    }

    fn degree_unchecked(&self, id: &str) -> usize {
        self.out_edges.get(id).map_or(0, Vec::len) + self.in_edges.get(id).map_or(0, Vec::len)
    }

    /// The `k` most central node ids, descending by degree, ties by ascending id.
    pub fn top_k_by_centrality(&self, k: usize) -> Vec<String> {
        let mut ranked: Vec<(usize, &String)> = self.nodes.keys().map(|id| (self.degree_unchecked(id), id)).collect();
        ranked.sort_by(|a, b| b.0.cmp(&a.0).then_with(|| a.1.cmp(b.1)));
        ranked.into_iter().take(k).map(|(_, id)| id.clone()).collect()
    }

    /// Indices of edges incident to `id` (either direction), ascending.
    fn incident_indices(&self, id: &str) -> Vec<usize> {
        let mut idx: Vec<usize> =
            self.out_edges.get(id).into_iter().chain(self.in_edges.get(id)).flatten().copied().collect();
        idx.sort_unstable();
        idx.dedup();
        idx
    }

    /// Edges incident to `id`, in insertion order.
    pub fn incident_edges(&self, id: &str) -> Vec<&RelationEdge> {
        self.incident_indices(id).into_iter().map(|i| &self.edges[i]).collect()
    }

    /// Distinct undirected neighbours of `id`, ascending.
    pub fn neighbors(&self, id: &str) -> Vec<&str> {
        let mut out: Vec<&str> =
            self.incident_indices(id).into_iter().filter_map(|i| self.edges[i].other(id)).collect();
        out.sort_unstable();
        out.dedup();
        out
    }

    /// Shortest undirected hop counts from `from`, limited to `1..=max_depth`.
    ///
    /// The start node is never reported. With a type filter, only nodes of
    /// that type are reported but traversal still passes through every node.
    pub fn bfs_depths(
        &self,
        from: &str,
        max_depth: usize,
        type_filter: Option<&str>,
    ) -> Result<BTreeMap<String, usize>, GraphError> {
        self.require(from)?;
        if max_depth == 0 {
            return Err(GraphError::Validation("max_depth must be >= 1".into()));
        }
        let mut seen: HashMap<&str, usize> = HashMap::new();
        seen.insert(from, 0);
        let mut queue = VecDeque::from([from]);
        while let Some(current) = queue.pop_front() {
            let depth = seen[current];
            if depth == max_depth {
                continue;
            }
            for next in self.neighbors(current) {
                if !seen.contains_key(next) {
                    seen.insert(next, depth + 1);
                    queue.push_back(next);
                }
            }
        }
        Ok(seen
            .into_iter()
            .filter(|(id, depth)| *depth > 0 && { type_filter.is_none_or(|t| self.nodes[*id].has_type(t)) })
            .map(|(id, depth)| (id.to_string(), depth))
            .collect())
    }

    /// A uniformly random edge incident to `key`.
    pub fn sample_triple<R: Rng + ?Sized>(&self, key: &str, rng: &mut R) -> Result<RelationEdge, GraphError> {
        self.require(key)?;
        let incident = self.incident_indices(key);
        if incident.is_empty() {
            return Err(GraphError::NoCandidate(format!("`{key}` has no incident edges")));
        }
        Ok(self.edges[incident[rng.gen_range(0..incident.len())]].clone())
    }

    /// Every simple 2-edge path that starts at `key`, ignoring direction.
    pub fn two_paths(&self, key: &str) -> Vec<(RelationEdge, RelationEdge)> {
        let mut paths = Vec::new();
        for first in self.incident_indices(key) {
            let e1 = &self.edges[first];
            let Some(mid) = e1.other(key) else { continue };
            for second in self.incident_indices(mid) {
                if second == first {
                    continue;
                }
                let e2 = &self.edges[second];
                match e2.other(mid) {
                    Some(end) if end != key && end != mid => {
                        paths.push((e1.clone(), e2.clone()));
                    }
                    _ => {}
                }
            }
        }
        paths
    }

    /// A uniformly random simple 2-edge path anchored at `key`.
    /// Returns `(key→mid edge, mid id, mid→end edge)` with original directions.
    pub fn sample_quintuple<R: Rng + ?Sized>(
        &self,
        key: &str,
        rng: &mut R,
    ) -> Result<(RelationEdge, String, RelationEdge), GraphError> {
        self.require(key)?;
        let mut paths = self.two_paths(key);
        if paths.is_empty() {
            return Err(GraphError::NoCandidate(format!("`{key}` has no 2-edge path")));
        }
        let (e1, e2) = paths.swap_remove(rng.gen_range(0..paths.len()));
        let mid = e1.other(key).expect("path edge touches key").to_string();
        Ok((e1, mid, e2))
    }

    /// A random key-incident edge outside `exclude`; `None` when nothing is left.
    pub fn sample_extra_triple<R: Rng + ?Sized>(
        &self,
        key: &str,
        exclude: &[RelationEdge],
        rng: &mut R,
    ) -> Result<Option<RelationEdge>, GraphError> {
        self.require(key)?;
        let candidates: Vec<usize> =
            self.incident_indices(key).into_iter().filter(|&i| !exclude.contains(&self.edges[i])).collect();
        if candidates.is_empty() {
            return Ok(None);
        }
        Ok(Some(self.edges[candidates[rng.gen_range(0..candidates.len())]].clone()))
    }

    pub fn save(&self, path: &Path) -> Result<(), GraphError> {
        let mut out = BufWriter::new(File::create(path)?);
        self.write_records(&mut out)?;
        out.flush()?;
        Ok(())
    }

    /// Writes one record per line: every triple sorted by
    /// (subject, predicate, object), then a node record for each isolated node.
    pub fn write_records<W: Write>(&self, out: &mut W) -> Result<(), GraphError> {
        let mut edges: Vec<&RelationEdge> = self.edges.iter().collect();
        edges.sort_by(|a, b| a.key().cmp(&b.key()).then_with(|| a.cmp(b)));
        for edge in edges {
            let s = &self.nodes[&edge.src];
            let o = &self.nodes[&edge.dst];
            let record = TripleRecord {
                subject: s.name.clone(),
                subject_type: Some(s.entity_type.clone()),
                predicate: edge.predicate.clone(),
                object: o.name.clone(),
                object_type: Some(o.entity_type.clone()),
            };
            serde_json::to_writer(&mut *out, &record).map_err(std::io::Error::other)?;
            out.write_all(b"\n")?;
        }
        for node in self.nodes.values() {
            if self.degree_unchecked(&node.id) == 0 {
                let record = NodeRecord { node: node.name.clone(), node_type: node.entity_type.clone() };
                serde_json::to_writer(&mut *out, &record).map_err(std::io::Error::other)?;
                out.write_all(b"\n")?;
            }
        }
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self, GraphError> {
        Self::read_records(BufReader::new(File::open(path)?))
    }

    /// Parses the line-delimited graph format. Triples may omit an endpoint
    /// type only when that endpoint was declared earlier in the file.
    pub fn read_records<R: BufRead>(reader: R) -> Result<Self, GraphError> {
        let mut graph = Self::new();
        for (i, line) in reader.lines().enumerate() {
            let line_no = i + 1;
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let parse_err = |message: String| GraphError::Parse { line: line_no, message };
            let value: serde_json::Value = serde_json::from_str(&line).map_err(|e| parse_err(e.to_string()))?;
            if value.get("node").is_some() {
                let rec: NodeRecord = serde_json::from_value(value).map_err(|e| parse_err(e.to_string()))?;
                graph.upsert_node(EntityNode::new(&rec.node, &rec.node_type)).map_err(|e| parse_err(e.to_string()))?;
                continue;
            }
            let rec: TripleRecord = serde_json::from_value(value).map_err(|e| parse_err(e.to_string()))?;
            let resolve = |name: &str, ty: &Option<String>| -> Result<EntityNode, GraphError> {
                match ty {
                    Some(t) => Ok(EntityNode::new(name, t)),
                    None => graph
                        .node(&normalize_name(name))
                        .cloned()
                        .ok_or_else(|| parse_err(format!("dangling reference to undeclared node `{}`", name))),
                }
            };
            let subject = resolve(&rec.subject, &rec.subject_type)?;
            let object = resolve(&rec.object, &rec.object_type)?;
            graph.add_triple(subject, &rec.predicate, object).map_err(|e| parse_err(e.to_string()))?;
        }
        Ok(graph)
    }
}

#[derive(Debug, Serialize, Deserialize)]
struct TripleRecord {
    subject: String,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    subject_type: Option<String>,
    predicate: String,
    object: String,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    object_type: Option<String>,
}

#[derive(Debug, Serialize, Deserialize)]
struct NodeRecord {
    node: String,
    #[serde(rename = "type")]
    node_type: String,
}
