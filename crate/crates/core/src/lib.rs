//! Knowledge-graph driven multiple-choice question generation.
//!
//! The crate covers the generation side of the pipeline: building a
//! knowledge graph from documents through an LLM, sampling subgraphs and
//! distractors to produce validated MCQs, and computing the nine
//! interpretable difficulty signals for every question.

pub mod embeddings;
pub mod graph;
pub mod hashing;
pub mod kg_builder;
pub mod llm;
pub mod mcq;
pub mod signals;

pub use graph::{EntityNode, GraphError, KnowledgeGraph, RelationEdge};

pub use mcq::{AssociatedSubgraph, Mcq, SubgraphKind};
pub use signals::{NormParams, RawSignals, SignalVector, SIGNAL_NAMES};
