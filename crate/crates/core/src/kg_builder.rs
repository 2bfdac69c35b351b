//! Corpus ingestion and LLM triple extraction into a merged knowledge graph.

use std::fs;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::graph::{AddOutcome, EntityNode, GraphError, KnowledgeGraph};
use crate::llm::prompts::{extraction_prompt, FactRecord};
use crate::llm::{ChatBackend, LlmError};

pub const DEFAULT_CHUNK_BUDGET: usize = 4000;

#[derive(Debug, thiserror::Error)]
pub enum KgBuildError {
    #[error("no documents to process")]
    EmptyBatch,
    #[error("document `{0}` has an empty body")]
    EmptyDocument(String),
    #[error("no triples could be extracted from any document")]
    NoTriples,
    #[error("chunk budget must be positive")]
    ZeroBudget,
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error(transparent)]
    Llm(#[from] LlmError),
    #[error(transparent)]
    Graph(#[from] GraphError),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Document {
    pub id: String,
    pub title: String,
    pub body: String,
    pub source: String,
}

impl Document {
    pub fn new(id: &str, title: &str, body: &str, source: &str) -> Result<Self, KgBuildError> {
        if body.trim().is_empty() {
            return Err(KgBuildError::EmptyDocument(id.to_string()));
        }
        Ok(Self { id: id.to_string(), title: title.to_string(), body: body.to_string(), source: source.to_string() })
    }
}

#[derive(Debug, Default)]
pub struct IngestOutcome {
    pub documents: Vec<Document>,
    pub skipped: Vec<String>,
    pub failures: Vec<(PathBuf, String)>,
}

/// Splits text into chunks of at most `budget` characters. Paragraphs
/// (blank-line separated) are packed greedily; a paragraph longer than the
/// budget is split at the last whitespace that fits.
pub fn chunk_text(text: &str, budget: usize) -> Vec<String> {
    let mut chunks = Vec::new();
    let mut current = String::new();
    let mut current_len = 0;
    for paragraph in split_paragraphs(text) {
        for piece in split_long(paragraph, budget) {
            let len = piece.chars().count();
            if current_len > 0 && current_len + 2 + len > budget {
                chunks.push(std::mem::take(&mut current));
                current_len = 0;
            }
            if current_len > 0 {
                current.push_str("\n\n");
                current_len += 2;
            }
            current.push_str(piece);
            current_len += len;
        }
    }
    if current_len > 0 {
        chunks.push(current);
    }
    chunks
}

fn split_paragraphs(text: &str) -> Vec<&str> {
    let mut out = Vec::new();
    let mut start: Option<usize> = None;
    let mut end = 0;
    let mut offset = 0;
    for line in text.split_inclusive('\n') {
        if line.trim().is_empty() {
            if let Some(s) = start.take() {
                out.push(text[s..end].trim_end());
            }
        } else {
            start.get_or_insert(offset);
            end = offset + line.len();
        }
        offset += line.len();
    }
    if let Some(s) = start {
        out.push(text[s..end].trim_end());
    }
    out
}

fn split_long(paragraph: &str, budget: usize) -> Vec<&str> {
    let mut out = Vec::new();
    let mut rest = paragraph;
    while rest.chars().count() > budget {
        let limit = rest.char_indices().nth(budget).map(|(i, _)| i).unwrap_or(rest.len());
        let cut = rest[..=limit.min(rest.len() - 1)].rfind(char::is_whitespace).filter(|&i| i > 0).unwrap_or(limit);
        out.push(rest[..cut].trim_end());
        rest = rest[cut..].trim_start();
    }
    if !rest.is_empty() {
        out.push(rest);
    }
    out
}

fn title_from_stem(stem: &str) -> String {
    stem.replace(['_', '-'], " ")
}

/// Reads each path as UTF-8 text. Files that cannot be read are reported
/// per file; empty files are skipped with a warning.
pub fn ingest_documents(paths: &[PathBuf], budget: usize) -> Result<IngestOutcome, KgBuildError> {
    if budget == 0 {
        return Err(KgBuildError::ZeroBudget);
    }
    let mut outcome = IngestOutcome::default();
    for path in paths {
        let text = match fs::read_to_string(path) {
            Ok(t) => t,
            Err(e) => {
                log::warn!("cannot read {}: {e}", path.display());
                outcome.failures.push((path.clone(), e.to_string()));
                continue;
            }
        };
        let stem =
            path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_else(|| path.display().to_string());
        if text.trim().is_empty() {
            log::warn!("skipping empty file {}", path.display());
            outcome.skipped.push(stem);
            continue;
        }
        let chunks = chunk_text(&text, budget);
        let title = title_from_stem(&stem);
        let source = path.display().to_string();
        if chunks.len() == 1 {
            outcome.documents.push(Document::new(&stem, &title, &chunks[0], &source)?);
        } else {
            for (i, chunk) in chunks.iter().enumerate() {
                let id = format!("{stem}#{}", i + 1);
                outcome.documents.push(Document::new(&id, &title, chunk, &source)?);
            }
        }
    }
    if outcome.documents.is_empty() {
        return Err(KgBuildError::EmptyBatch);
    }
    Ok(outcome)
}

/// Ingests every `.txt` and `.md` file in `dir`, in file-name order.
pub fn ingest_dir(dir: &Path, budget: usize) -> Result<IngestOutcome, KgBuildError> {
    let io = |source| KgBuildError::Io { path: dir.to_path_buf(), source };
    let mut paths = Vec::new();
    for entry in fs::read_dir(dir).map_err(io)? {
        let path = entry.map_err(io)?.path();
        let ext = path.extension().and_then(|e| e.to_str()).unwrap_or_default();
        if path.is_file() && matches!(ext, "txt" | "md") {
            paths.push(path);
        }
    }
    paths.sort();
    ingest_documents(&paths, budget)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GraphDocument {
    pub doc_id: String,
    pub records: Vec<FactRecord>,
    /// Non-blank reply lines that did not parse as a five-field record.
    pub dropped_lines: usize,
}

pub fn extract_graph_document(doc: &Document, backend: &dyn ChatBackend) -> Result<GraphDocument, LlmError> {
    let reply = backend.complete(&extraction_prompt(&doc.title, &doc.body))?;
    let mut records = Vec::new();
    let mut dropped_lines = 0;
    for line in reply.lines().filter(|l| !l.trim().is_empty()) {
        match FactRecord::parse_line(line) {
            Some(r) => records.push(r),
            None => dropped_lines += 1,
        }
    }
    if dropped_lines > 0 {
        log::info!("{}: dropped {dropped_lines} malformed line(s)", doc.id);
    }
    if records.is_empty() {
        log::warn!("{}: no triples extracted", doc.id);
    }
    Ok(GraphDocument { doc_id: doc.id.clone(), records, dropped_lines })
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Provenance {
    pub src: String,
    pub predicate: String,
    pub dst: String,
    pub doc_id: String,
    pub record_index: usize,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct BuildReport {
    pub docs_processed: usize,
    pub docs_without_triples: Vec<String>,
    pub docs_failed: Vec<(String, String)>,
    pub records_extracted: usize,
    pub triples_kept: usize,
    pub duplicates: usize,
    pub records_rejected: usize,
    pub lines_dropped: usize,
    pub provenance: Vec<Provenance>,
    pub warnings: Vec<String>,
}

/// Extracts every document (concurrently) and merges the results in
/// document-id order, so the graph does not depend on input order.
pub fn build_kg(docs: &[Document], backend: &dyn ChatBackend) -> Result<(KnowledgeGraph, BuildReport), KgBuildError> {
    if docs.is_empty() {
        return Err(KgBuildError::EmptyBatch);
    }
    let mut ordered: Vec<&Document> = docs.iter().collect();
    ordered.sort_by(|a, b| a.id.cmp(&b.id));
    let extracted: Vec<(String, Result<GraphDocument, LlmError>)> =
        ordered.par_iter().map(|d| (d.id.clone(), extract_graph_document(d, backend))).collect();

    let mut report = BuildReport::default();
    let mut graph = KnowledgeGraph::new();
    for (doc_id, result) in extracted {
        let gd = match result {
            Ok(gd) => gd,
            Err(e) => {
                log::warn!("{doc_id}: extraction failed: {e}");
                report.docs_failed.push((doc_id, e.to_string()));
                continue;
            }
        };
        report.docs_processed += 1;
        report.lines_dropped += gd.dropped_lines;
        report.records_extracted += gd.records.len();
        if gd.records.is_empty() {
            report.docs_without_triples.push(doc_id.clone());
        }
        for (record_index, r) in gd.records.iter().enumerate() {
            let subject = EntityNode::new(&r.subject, &r.subject_type);
            let object = EntityNode::new(&r.object, &r.object_type);
            let (src, dst) = (subject.id.clone(), object.id.clone());
            match graph.add_triple(subject, &r.predicate, object) {
                Ok(outcome) => {
                    if outcome == AddOutcome::Inserted {
                        report.triples_kept += 1;
                    } else {
                        report.duplicates += 1;
                    }
                    report.provenance.push(Provenance {
                        src,
                        predicate: r.predicate.trim().to_string(),
                        dst,
                        doc_id: doc_id.clone(),
                        record_index,
                    });
                }
                Err(e) => {
                    report.records_rejected += 1;
                    report.warnings.push(format!("{doc_id}[{record_index}]: {e}"));
                }
            }
        }
    }
    report.warnings.extend(graph.warnings().iter().cloned());
    if graph.edge_count() == 0 {
        return Err(KgBuildError::NoTriples);
    }
    Ok((graph, report))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::llm::StubBackend;

    fn doc(id: &str, body: &str) -> Document {
        Document::new(id, id, body, "mem").unwrap()
    }

    #[test]
    fn chunking_respects_budget_and_paragraphs() {
        // ten paragraphs of 999 chars; packing at 4000 fits three per chunk
        // (3*999 + 2*2 = 3001, a fourth would make 4002)
        let para = "x".repeat(999);
        let text = vec![para.clone(); 10].join("\n\n");
        assert_eq!(text.chars().count(), 10 * 999 + 9 * 2);
        let chunks = chunk_text(&text, 4000);
        let sizes: Vec<usize> = chunks.iter().map(|c| c.chars().count()).collect();
        assert_eq!(sizes, vec![3 * 999 + 4, 3 * 999 + 4, 3 * 999 + 4, 999]);
        assert!(chunks.iter().all(|c| !c.starts_with('\n') && !c.ends_with('\n')));
    }

    #[test]
    fn ten_thousand_chars_give_three_chunks() {
        // any two 3333-char paragraphs exceed the budget, so each is its own chunk
        let paras: Vec<String> = (0..3).map(|i| char::from(b'a' + i).to_string().repeat(3333)).collect();
        let text = paras.join("\n\n");
        assert_eq!(text.chars().count(), 10003);
        let chunks = chunk_text(&text, 4000);
        assert_eq!(chunks, paras);
    }

    #[test]
    fn oversized_paragraph_splits_on_whitespace() {
        let text = "alpha beta gamma delta";
        assert_eq!(chunk_text(text, 11), vec!["alpha beta", "gamma delta"]);
        assert_eq!(chunk_text("abcdefghij", 4), vec!["abcd", "efgh", "ij"]);
    }

    #[test]
    fn extraction_counts_drops_and_keeps_duplicates() {
        let reply = "Paris | City | capital_of | France | Country\n\
                     Lyon | City | located_in | France | Country\n\
                     just some words\n\
                     Paris | City | capital_of | France | Country";
        let backend = move |_: &crate::llm::ChatPrompt| Ok(reply.to_string());
        let gd = extract_graph_document(&doc("d", "ignored"), &backend).unwrap();
        assert_eq!(gd.records.len(), 3);
        assert_eq!(gd.dropped_lines, 1);
    }

    #[test]
    fn stub_extracts_typed_fact_from_document() {
        let d = doc("paris", "Paris is the capital.\nParis (City) | capital_of | France (Country)\n");
        let gd = extract_graph_document(&d, &StubBackend::synthesizing()).unwrap();
        assert_eq!(gd.records.len(), 1);
        assert_eq!(gd.records[0].object_type, "Country");
    }

    #[test]
    fn build_merges_shared_entities_and_is_order_invariant() {
        let a = doc("a", "Paris | City | capital_of | France | Country\nSeine | River | flows_through | Paris | City");
        let b = doc("b", "Lyon | City | located_in | France | Country\nParis | City | capital_of | France | Country");
        let stub = StubBackend::synthesizing();
        let (g1, r1) = build_kg(&[a.clone(), b.clone()], &stub).unwrap();
        let (g2, _) = build_kg(&[b, a], &stub).unwrap();
        assert_eq!(g1, g2);
        assert_eq!(g1.node_count(), 4);
        assert_eq!(g1.edge_count(), 3);
        assert_eq!(r1.duplicates, 1);
        for edge in g1.edges() {
            assert!(r1
                .provenance
                .iter()
                .any(|p| p.src == edge.src && p.dst == edge.dst && p.predicate == edge.predicate));
        }
    }

    #[test]
    fn build_errors() {
        let stub = StubBackend::synthesizing();
        assert!(matches!(build_kg(&[], &stub), Err(KgBuildError::EmptyBatch)));
        let d = doc("prose", "No facts at all here.");
        assert!(matches!(build_kg(&[d], &stub), Err(KgBuildError::NoTriples)));
        assert!(Document::new("x", "x", "  \n", "mem").is_err());
    }

    #[test]
    fn failed_extraction_is_reported_and_batch_continues() {
        let backend = |p: &crate::llm::ChatPrompt| {
            if p.user.contains("TITLE: bad") {
                Err(LlmError::Transport { attempts: 3, message: "down".into() })
            } else {
                Ok("Paris | City | capital_of | France | Country".to_string())
            }
        };
        let (g, report) = build_kg(&[doc("bad", "x"), doc("good", "y")], &backend).unwrap();
        assert_eq!(g.edge_count(), 1);
        assert_eq!(report.docs_failed.len(), 1);
        assert_eq!(report.docs_processed, 1);
    }
}
