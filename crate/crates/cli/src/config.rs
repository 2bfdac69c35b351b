//! Pipeline configuration: one TOML file plus dotted-key overrides.

use std::collections::BTreeSet;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use kgmcq_core::embeddings::TextBackendKind;
use kgmcq_core::kg_builder::DEFAULT_CHUNK_BUDGET;
use kgmcq_core::llm::BackendKind;
use kgmcq_core::mcq::GenerationConfig;
use kgmcq_model::dataset::{DEFAULT_OUTLIER_THRESHOLD, DEFAULT_TRAIN_RATIO};
use kgmcq_model::ModelKind;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Paths {
    pub corpus: PathBuf,
    /// Artifacts without an explicit path go here.
    pub work_dir: PathBuf,
    pub graph: Option<PathBuf>,
    pub mcqs: Option<PathBuf>,
    pub signals: Option<PathBuf>,
    pub responses: Option<PathBuf>,
    pub dataset: Option<PathBuf>,
    pub report_dir: Option<PathBuf>,
}

impl Default for Paths {
    fn default() -> Self {
        Self {
            corpus: PathBuf::from("data/micro-corpus"),
            work_dir: PathBuf::from("runs/default"),
            graph: None,
            mcqs: None,
            signals: None,
            responses: None,
            dataset: None,
            report_dir: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct IngestConfig {
    /// Characters per extraction chunk.
    pub chunk_budget: usize,
}

impl Default for IngestConfig {
    fn default() -> Self {
        Self { chunk_budget: DEFAULT_CHUNK_BUDGET }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EmbeddingConfig {
    pub node_dim: usize,
    pub node_iteration_weights: Vec<f64>,
    pub node_seed: u64,
    pub text: TextBackendKind,
}

impl Default for EmbeddingConfig {
    fn default() -> Self {
        Self {
            node_dim: 128,
            node_iteration_weights: vec![0.0, 1.0, 1.0],
            node_seed: 42,
            text: TextBackendKind::default(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RespondentSource {
    /// Read the log written by `serve`.
    Log,
    /// Deterministic simulated respondents, for offline runs.
    Simulated,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RespondentConfig {
    pub source: RespondentSource,
    pub per_mcq: usize,
    pub seed: u64,
}

impl Default for RespondentConfig {
    fn default() -> Self {
        Self { source: RespondentSource::Simulated, per_mcq: 38, seed: 7 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DatasetConfig {
    /// Labels at or above this are dropped; `None` keeps every row.
    pub outlier_threshold: Option<f64>,
    pub train_ratio: f64,
}

impl Default for DatasetConfig {
    fn default() -> Self {
        Self { outlier_threshold: Some(DEFAULT_OUTLIER_THRESHOLD), train_ratio: DEFAULT_TRAIN_RATIO }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    /// Models fitted by `train` when none is named and by `report`.
    pub kinds: Vec<ModelKind>,
    pub ablation_kind: ModelKind,
    pub seed: u64,
    pub exclude: Vec<String>,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self { kinds: ModelKind::ALL.to_vec(), ablation_kind: ModelKind::Gbt, seed: 42, exclude: Vec::new() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ServeConfig {
    pub addr: String,
    pub static_dir: Option<PathBuf>,
    /// Seeds the option order shown to each session.
    pub seed: u64,
}

impl Default for ServeConfig {
    fn default() -> Self {
        Self { addr: "127.0.0.1:8080".into(), static_dir: None, seed: 42 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    pub paths: Paths,
    pub backend: BackendKind,
    pub ingest: IngestConfig,
    pub embeddings: EmbeddingConfig,
    pub generation: GenerationConfig,
    pub respondents: RespondentConfig,
    pub dataset: DatasetConfig,
    pub model: ModelConfig,
    pub serve: ServeConfig,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            paths: Paths::default(),
            backend: BackendKind::stub(),
            ingest: IngestConfig::default(),
            embeddings: EmbeddingConfig::default(),
            generation: GenerationConfig::default(),
            respondents: RespondentConfig::default(),
            dataset: DatasetConfig::default(),
            model: ModelConfig::default(),
            serve: ServeConfig::default(),
        }
    }
}

/// Sets `a.b.c = value` in a TOML tree. The value is parsed as a TOML
/// literal and kept as a string when that fails.
pub fn apply_override(root: &mut toml::Table, assignment: &str) -> Result<()> {
    let (key, raw) = assignment.split_once('=').with_context(|| format!("override `{assignment}` needs key=value"))?;
    let raw = raw.trim();
    let value = toml::from_str::<toml::Table>(&format!("v = {raw}"))
        .ok()
        .and_then(|mut t| t.remove("v"))
        .unwrap_or_else(|| toml::Value::String(raw.to_string()));
    let parts: Vec<&str> = key.trim().split('.').collect();
    let (last, parents) = parts.split_last().context("empty override key")?;
    let mut table = root;
    for p in parents {
        table = table
            .entry(p.to_string())
            .or_insert_with(|| toml::Value::Table(toml::Table::new()))
            .as_table_mut()
            .with_context(|| format!("`{p}` is not a table"))?;
    }
    table.insert(last.to_string(), value);
    Ok(())
}

impl PipelineConfig {
    pub fn from_toml(text: &str, overrides: &[String]) -> Result<Self> {
        let mut table: toml::Table = toml::from_str(text).context("parsing config")?;
        for o in overrides {
            apply_override(&mut table, o)?;
        }
        let cfg: PipelineConfig = table.try_into().context("invalid config")?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Reads `path` (or starts from defaults) and applies overrides. Relative
    /// paths in a file are taken relative to the working directory.
    pub fn load(path: Option<&Path>, overrides: &[String]) -> Result<Self> {
        let text = match path {
            Some(p) => std::fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))?,
            None => String::new(),
        };
        Self::from_toml(&text, overrides)
    }

    fn artifact(&self, explicit: &Option<PathBuf>, name: &str) -> PathBuf {
        explicit.clone().unwrap_or_else(|| self.paths.work_dir.join(name))
    }

    pub fn graph_path(&self) -> PathBuf {
        self.artifact(&self.paths.graph, "graph.jsonl")
    }

    pub fn mcqs_path(&self) -> PathBuf {
        self.artifact(&self.paths.mcqs, "mcqs.jsonl")
    }

    pub fn signals_path(&self) -> PathBuf {
        self.artifact(&self.paths.signals, "signals.csv")
    }

    pub fn responses_path(&self) -> PathBuf {
        self.artifact(&self.paths.responses, "responses.jsonl")
    }

    pub fn dataset_path(&self) -> PathBuf {
        self.artifact(&self.paths.dataset, "dataset.csv")
    }

    pub fn report_dir(&self) -> PathBuf {
        self.artifact(&self.paths.report_dir, "report")
    }

    pub fn validate(&self) -> Result<()> {
        let g = &self.generation;
        if g.keys == 0 {
            bail!("generation.keys must be at least 1");
        }
        if g.max_depth == 0 {
            bail!("generation.max_depth must be at least 1");
        }
        if g.per_key == 0 || g.retries == 0 {
            bail!("generation.per_key and generation.retries must be at least 1");
        }
        if self.ingest.chunk_budget == 0 {
            bail!("ingest.chunk_budget must be positive");
        }
        if !(self.dataset.train_ratio > 0.0 && self.dataset.train_ratio < 1.0) {
            bail!("dataset.train_ratio must lie strictly between 0 and 1");
        }
        if self.model.kinds.is_empty() {
            bail!("model.kinds must name at least one model");
        }
        if self.respondents.per_mcq == 0 {
            bail!("respondents.per_mcq must be at least 1");
        }
        let paths = [
            self.graph_path(),
            self.mcqs_path(),
            self.signals_path(),
            self.responses_path(),
            self.dataset_path(),
            self.report_dir(),
            self.paths.corpus.clone(),
        ];
        let distinct: BTreeSet<&PathBuf> = paths.iter().collect();
        if distinct.len() != paths.len() {
            bail!("artifact paths must be distinct");
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_file_is_the_default() {
        assert_eq!(PipelineConfig::from_toml("", &[]).unwrap(), PipelineConfig::default());
    }

    #[test]
    fn example_config_parses() {
        let text = include_str!("../../../config/example.toml");
        let cfg = PipelineConfig::from_toml(text, &[]).unwrap();
        assert_eq!(cfg.generation.keys, 40);
        assert_eq!(cfg.respondents.source, RespondentSource::Simulated);
    }

    #[test]
    fn overrides_and_validation() {
        let cfg = PipelineConfig::from_toml(
            "[generation]\nkeys = 5\n",
            &["generation.seed=9".into(), "paths.work_dir=/tmp/x".into(), "model.kinds=[\"gbt\"]".into()],
        )
        .unwrap();
        assert_eq!((cfg.generation.keys, cfg.generation.seed), (5, 9));
        assert_eq!(cfg.graph_path(), PathBuf::from("/tmp/x/graph.jsonl"));
        assert_eq!(cfg.model.kinds, vec![ModelKind::Gbt]);
        assert!(PipelineConfig::from_toml("", &["generation.keys=0".into()]).is_err());
        assert!(PipelineConfig::from_toml("", &["generation.max_depth=0".into()]).is_err());
        assert!(PipelineConfig::from_toml("", &["paths.mcqs=runs/default/graph.jsonl".into()]).is_err());
        assert!(PipelineConfig::from_toml("[bogus]\nx = 1\n", &[]).is_err());
    }
}
