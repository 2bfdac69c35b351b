//! The staged pipeline. Every stage reads the previous stage's artifact
//! files and writes its own, so any stage can be rerun alone.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use kgmcq_core::embeddings::{fastrp_embed, FastRpConfig};
use kgmcq_core::hashing::stable_hex;
use kgmcq_core::kg_builder::{build_kg, ingest_dir};
use kgmcq_core::llm::ChatBackend;
use kgmcq_core::mcq::{generate_all, read_mcqs, write_mcqs};
use kgmcq_core::signals::{compute_all, fit_normalization, write_signals_csv, SignalContext, SignalRow};
use kgmcq_core::KnowledgeGraph;
use kgmcq_model::ablation::{ablation_with_ratio, default_grid};
use kgmcq_model::dataset::{build_dataset, join_labels, read_signals, read_table, split_indices, write_table};
use kgmcq_model::importance::{gain_importance, permutation_importance};
use kgmcq_model::report::{
    ablation_table, emit_ablation, emit_histogram, emit_importance, emit_reports, metrics_table, ImportanceReport,
};
use kgmcq_model::{evaluate, fit_model, FittedModel, LabeledDataset, ModelKind, ModelReport};
use kgmcq_service::summaries_from_log;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::config::{PipelineConfig, RespondentSource};
use crate::simulate::simulate_responses;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Stage {
    BuildKg,
    Generate,
    Signals,
    Collect,
    Assemble,
    Train,
    Ablate,
    Report,
}

impl Stage {
    pub const ALL: [Stage; 8] = [
        Stage::BuildKg,
        Stage::Generate,
        Stage::Signals,
        Stage::Collect,
        Stage::Assemble,
        Stage::Train,
        Stage::Ablate,
        Stage::Report,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Stage::BuildKg => "build-kg",
            Stage::Generate => "generate",
            Stage::Signals => "signals",
            Stage::Collect => "collect",
            Stage::Assemble => "assemble",
            Stage::Train => "train",
            Stage::Ablate => "ablate",
            Stage::Report => "report",
        }
    }

    pub fn parse(s: &str) -> Option<Stage> {
        Stage::ALL.into_iter().find(|st| st.name() == s)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageOutcome {
    pub stage: Stage,
    pub skipped: bool,
    pub outputs: Vec<PathBuf>,
    pub summary: String,
}

fn sidecar(path: &Path, name: &str) -> PathBuf {
    path.with_file_name(name)
}

fn ensure_parent(path: &Path) -> Result<()> {
    if let Some(p) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(p).with_context(|| format!("creating {}", p.display()))?;
    }
    Ok(())
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    ensure_parent(path)?;
    fs::write(path, serde_json::to_string_pretty(value)? + "\n").with_context(|| format!("writing {}", path.display()))
}

fn backend(cfg: &PipelineConfig) -> Result<Box<dyn ChatBackend>> {
    cfg.backend.build().context("configuring the LLM backend")
}

pub fn ingest_and_build(cfg: &PipelineConfig) -> Result<StageOutcome> {
    let ingest = ingest_dir(&cfg.paths.corpus, cfg.ingest.chunk_budget)
        .with_context(|| format!("reading corpus {}", cfg.paths.corpus.display()))?;
    for (path, why) in &ingest.failures {
        log::warn!("skipped {}: {why}", path.display());
    }
    if ingest.documents.is_empty() {
        bail!("no readable documents in {}", cfg.paths.corpus.display());
    }
    let backend = backend(cfg)?;
    let (graph, report) = build_kg(&ingest.documents, backend.as_ref())?;
    let graph_path = cfg.graph_path();
    ensure_parent(&graph_path)?;
    graph.save(&graph_path)?;
    let report_path = sidecar(&graph_path, "build_report.json");
    write_json(&report_path, &report)?;
    Ok(StageOutcome {
        stage: Stage::BuildKg,
        skipped: false,
        outputs: vec![graph_path, report_path],
        summary: format!(
            "{} documents, {} nodes, {} edges ({} duplicates, {} rejected)",
            report.docs_processed,
            graph.node_count(),
            graph.edge_count(),
            report.duplicates,
            report.records_rejected
        ),
    })
}

pub fn generate(cfg: &PipelineConfig) -> Result<StageOutcome> {
    let graph = KnowledgeGraph::load(&cfg.graph_path()).context("loading graph")?;
    let backend = backend(cfg)?;
    let run = generate_all(&graph, &cfg.generation, backend.as_ref());
    for m in &run.mcqs {
        m.check(&graph, cfg.generation.max_depth).with_context(|| format!("{} failed its invariants", m.id))?;
    }
    let mcq_path = cfg.mcqs_path();
    ensure_parent(&mcq_path)?;
    write_mcqs(&mcq_path, &run.mcqs)?;
    let aborts_path = sidecar(&mcq_path, "aborts.json");
    write_json(&aborts_path, &run.aborts)?;
    Ok(StageOutcome {
        stage: Stage::Generate,
        skipped: false,
        outputs: vec![mcq_path, aborts_path],
        summary: format!("{} questions, {} aborted slots", run.mcqs.len(), run.aborts.len()),
    })
}

pub fn signals(cfg: &PipelineConfig) -> Result<StageOutcome> {
    let graph = KnowledgeGraph::load(&cfg.graph_path()).context("loading graph")?;
    let mcqs = read_mcqs(&cfg.mcqs_path()).context("loading questions")?;
    if mcqs.is_empty() {
        bail!("no questions to score");
    }
    let table = fastrp_embed(
        &graph,
        &FastRpConfig {
            dim: cfg.embeddings.node_dim,
            iteration_weights: cfg.embeddings.node_iteration_weights.clone(),
            seed: cfg.embeddings.node_seed,
        },
    )?;
    let embedder = cfg.embeddings.text.build()?;
    let judge = backend(cfg)?;
    let ctx = SignalContext {
        graph: &graph,
        node_embeddings: &table,
        text_embedder: embedder.as_ref(),
        judge: judge.as_ref(),
    };
    let scored: Vec<(SignalRow, Vec<String>)> = mcqs
        .par_iter()
        .map(|m| {
            let mut warnings = Vec::new();
            let raw = compute_all(m, &ctx, &mut warnings)?;
            Ok((SignalRow { mcq_id: m.id.clone(), raw }, warnings))
        })
        .collect::<Result<_, kgmcq_core::signals::SignalError>>()?;
    let mut warnings = 0;
    for (row, ws) in &scored {
        for w in ws {
            log::warn!("{}: {w}", row.mcq_id);
            warnings += 1;
        }
    }
    let rows: Vec<SignalRow> = scored.into_iter().map(|(r, _)| r).collect();
    let complete: Vec<[f64; 9]> = rows.iter().filter_map(|r| r.raw.values()).collect();
    let norm = fit_normalization(&complete).context("every question is missing a signal")?;
    let path = cfg.signals_path();
    ensure_parent(&path)?;
    write_signals_csv(&path, &rows, &norm)?;
    let norm_path = sidecar(&path, "norm.json");
    norm.save(&norm_path)?;
    Ok(StageOutcome {
        stage: Stage::Signals,
        skipped: false,
        outputs: vec![path, norm_path],
        summary: format!("{} scored, {} incomplete, {warnings} warnings", rows.len(), rows.len() - complete.len()),
    })
}

pub fn collect(cfg: &PipelineConfig) -> Result<StageOutcome> {
    let log_path = cfg.responses_path();
    match cfg.respondents.source {
        RespondentSource::Simulated => {
            let mcqs = read_mcqs(&cfg.mcqs_path())?;
            let signals = read_signals(&cfg.signals_path())?;
            ensure_parent(&log_path)?;
            let s = simulate_responses(
                mcqs,
                &signals,
                cfg.respondents.per_mcq,
                cfg.respondents.seed,
                cfg.serve.seed,
                &log_path,
            )?;
            Ok(StageOutcome {
                stage: Stage::Collect,
                skipped: false,
                outputs: vec![log_path],
                summary: format!("{} simulated sessions, {} responses", s.sessions, s.responses),
            })
        }
        RespondentSource::Log => {
            if !log_path.exists() {
                bail!("response log {} not found; run `serve` to collect answers first", log_path.display());
            }
            let summaries = summaries_from_log(&log_path)?;
            let total: usize = summaries.iter().map(|s| s.responses).sum();
            Ok(StageOutcome {
                stage: Stage::Collect,
                skipped: false,
                outputs: vec![log_path],
                summary: format!("{total} logged responses over {} questions", summaries.len()),
            })
        }
    }
}

pub fn assemble(cfg: &PipelineConfig) -> Result<StageOutcome> {
    let signals = read_signals(&cfg.signals_path())?;
    let summaries = summaries_from_log(&cfg.responses_path())?;
    let mut warnings = Vec::new();
    let rows = join_labels(&signals, &summaries, &mut warnings);
    for w in &warnings {
        log::warn!("{w}");
    }
    if rows.is_empty() {
        bail!("no question has both signals and responses");
    }
    let path = cfg.dataset_path();
    ensure_parent(&path)?;
    write_table(&path, &rows)?;
    let hist_path = sidecar(&path, "histogram.json");
    let labels: Vec<f64> = rows.iter().map(|r| r.difficulty).collect();
    emit_histogram(&labels, &hist_path)?;
    let mean = labels.iter().sum::<f64>() / labels.len() as f64;
    Ok(StageOutcome {
        stage: Stage::Assemble,
        skipped: false,
        outputs: vec![path, hist_path],
        summary: format!("{} labeled rows, mean incorrect rate {mean:.3}, {} left out", rows.len(), warnings.len()),
    })
}

/// Reads a labeled table and applies the outlier threshold and exclusions.
pub fn load_dataset(path: &Path, threshold: Option<f64>, exclude: &[String]) -> Result<LabeledDataset> {
    let rows = read_table(path).with_context(|| format!("reading {}", path.display()))?;
    let ds = build_dataset(&rows, threshold)?;
    if !ds.excluded.is_empty() {
        log::info!("outlier threshold removed {}", ds.excluded.join(", "));
    }
    Ok(if exclude.is_empty() { ds } else { ds.without(exclude)? })
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainOutput {
    pub reports: Vec<ModelReport>,
    pub models: Vec<FittedModel>,
    pub files: Vec<PathBuf>,
}

/// Fits each kind on one seeded split and writes models, metrics and points.
pub fn train_models(
    ds: &LabeledDataset,
    kinds: &[ModelKind],
    seed: u64,
    train_ratio: f64,
    exclude: &[String],
    out_dir: &Path,
) -> Result<TrainOutput> {
    let (train_idx, test_idx) = split_indices(ds.len(), train_ratio, seed)?;
    let (train, test) = (ds.subset(&train_idx), ds.subset(&test_idx));
    let fitted: Vec<(FittedModel, ModelReport)> = kinds
        .par_iter()
        .map(|&k| {
            let m = fit_model(k, &train, seed)?;
            let r = evaluate(&m, &test, train.len(), seed, exclude)?;
            Ok((m, r))
        })
        .collect::<Result<_, kgmcq_model::ModelError>>()?;
    let (models, reports): (Vec<FittedModel>, Vec<ModelReport>) = fitted.into_iter().unzip();
    let mut files = emit_reports(&reports, out_dir)?;
    let model_dir = out_dir.join("models");
    fs::create_dir_all(&model_dir)?;
    for m in &models {
        let p = model_dir.join(format!("{}.json", m.kind.as_str()));
        m.save(&p)?;
        files.push(p);
    }
    Ok(TrainOutput { reports, models, files })
}

pub fn train(cfg: &PipelineConfig) -> Result<StageOutcome> {
    let ds = load_dataset(&cfg.dataset_path(), cfg.dataset.outlier_threshold, &cfg.model.exclude)?;
    let out = train_models(
        &ds,
        &cfg.model.kinds,
        cfg.model.seed,
        cfg.dataset.train_ratio,
        &cfg.model.exclude,
        &cfg.report_dir(),
    )?;
    let best = out.reports.iter().min_by(|a, b| a.rmse.total_cmp(&b.rmse)).expect("at least one model");
    Ok(StageOutcome {
        stage: Stage::Train,
        skipped: false,
        outputs: out.files,
        summary: format!(
            "{} models on {} rows; lowest RMSE {:.4} ({})",
            out.reports.len(),
            ds.len(),
            best.rmse,
            best.model
        ),
    })
}

pub fn ablate(cfg: &PipelineConfig) -> Result<StageOutcome> {
    let ds = load_dataset(&cfg.dataset_path(), cfg.dataset.outlier_threshold, &[])?;
    let grid = default_grid(&ds.feature_names);
    let run = ablation_with_ratio(&ds, &grid, cfg.model.ablation_kind, cfg.model.seed, cfg.dataset.train_ratio)?;
    let files = emit_ablation(&run, &cfg.report_dir())?;
    let better = run.entries.iter().filter(|e| e.beats_baseline).count();
    Ok(StageOutcome {
        stage: Stage::Ablate,
        skipped: false,
        outputs: files,
        summary: format!("{} exclusion sets, {better} beat the full signal set", run.entries.len()),
    })
}

/// Importances for the ablation model kind plus a combined summary file.
pub fn report(cfg: &PipelineConfig) -> Result<StageOutcome> {
    let dir = cfg.report_dir();
    let ds = load_dataset(&cfg.dataset_path(), cfg.dataset.outlier_threshold, &cfg.model.exclude)?;
    let kind = cfg.model.ablation_kind;
    let model_path = dir.join("models").join(format!("{}.json", kind.as_str()));
    let model = if model_path.exists() {
        FittedModel::load(&model_path)?
    } else {
        let (tr, _) = split_indices(ds.len(), cfg.dataset.train_ratio, cfg.model.seed)?;
        fit_model(kind, &ds.subset(&tr), cfg.model.seed)?
    };
    let (_, te) = split_indices(ds.len(), cfg.dataset.train_ratio, cfg.model.seed)?;
    let importance = ImportanceReport {
        gain: gain_importance(&model),
        permutation: permutation_importance(&model, &ds.subset(&te), cfg.model.seed)?,
    };
    let imp_path = emit_importance(&importance, &dir)?;

    let mut md = String::from("# Difficulty model report\n\n");
    let metrics_path = dir.join("metrics.json");
    if metrics_path.exists() {
        let reports: Vec<ModelReport> = serde_json::from_str(&fs::read_to_string(&metrics_path)?)?;
        md.push_str("## Models\n\n```\n");
        md.push_str(&metrics_table(&reports));
        md.push_str("```\n\n");
    }
    let ablation_path = dir.join("ablation.json");
    if ablation_path.exists() {
        let run = serde_json::from_str(&fs::read_to_string(&ablation_path)?)?;
        md.push_str("## Exclusions\n\n```\n");
        md.push_str(&ablation_table(&run));
        md.push_str("```\n\n");
    }
    md.push_str(&format!("## Feature importance ({})\n\n| feature | gain | permutation |\n|---|---|---|\n", kind));
    for (i, p) in importance.permutation.iter().enumerate() {
        let gain = importance.gain.as_ref().map_or("n/a".to_string(), |g| format!("{:.4}", g[i].value));
        md.push_str(&format!("| {} | {gain} | {:.4} |\n", p.feature, p.value));
    }
    let md_path = dir.join("report.md");
    fs::write(&md_path, md)?;
    Ok(StageOutcome {
        stage: Stage::Report,
        skipped: false,
        outputs: vec![imp_path, md_path],
        summary: format!("importances for {kind} written to {}", dir.display()),
    })
}

pub fn run_stage(cfg: &PipelineConfig, stage: Stage) -> Result<StageOutcome> {
    match stage {
        Stage::BuildKg => ingest_and_build(cfg),
        Stage::Generate => generate(cfg),
        Stage::Signals => signals(cfg),
        Stage::Collect => collect(cfg),
        Stage::Assemble => assemble(cfg),
        Stage::Train => train(cfg),
        Stage::Ablate => ablate(cfg),
        Stage::Report => report(cfg),
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
struct Manifest {
    stages: BTreeMap<Stage, ManifestEntry>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct ManifestEntry {
    fingerprint: String,
    outputs: Vec<PathBuf>,
    summary: String,
}

fn hash_files(dir: &Path) -> Result<String> {
    let mut entries: Vec<PathBuf> = fs::read_dir(dir)
        .with_context(|| format!("reading {}", dir.display()))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.is_file())
        .collect();
    entries.sort();
    let mut parts = Vec::new();
    for p in entries {
        parts.push(p.file_name().unwrap_or_default().to_string_lossy().into_owned());
        parts.push(stable_hex(&[&String::from_utf8_lossy(&fs::read(&p)?)]));
    }
    let refs: Vec<&str> = parts.iter().map(String::as_str).collect();
    Ok(stable_hex(&refs))
}

/// Configuration that can change what a stage writes, chained to the
/// previous stage's fingerprint.
fn fingerprint(cfg: &PipelineConfig, stage: Stage, previous: &str) -> Result<String> {
    let section = match stage {
        Stage::BuildKg => serde_json::json!({
            "corpus": hash_files(&cfg.paths.corpus)?,
            "ingest": cfg.ingest,
            "backend": cfg.backend,
            "out": cfg.graph_path(),
        }),
        Stage::Generate => {
            serde_json::json!({"generation": cfg.generation, "backend": cfg.backend, "out": cfg.mcqs_path()})
        }
        Stage::Signals => {
            serde_json::json!({"embeddings": cfg.embeddings, "backend": cfg.backend, "out": cfg.signals_path()})
        }
        Stage::Collect => {
            let log = cfg.responses_path();
            let content = match cfg.respondents.source {
                RespondentSource::Log if log.exists() => stable_hex(&[&fs::read_to_string(&log)?]),
                _ => String::new(),
            };
            serde_json::json!({"respondents": cfg.respondents, "seed": cfg.serve.seed, "out": log, "log": content})
        }
        Stage::Assemble => serde_json::json!({"out": cfg.dataset_path()}),
        Stage::Train | Stage::Ablate | Stage::Report => {
            serde_json::json!({"dataset": cfg.dataset, "model": cfg.model, "out": cfg.report_dir()})
        }
    };
    Ok(stable_hex(&[previous, stage.name(), &section.to_string()]))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub stages: Vec<StageOutcome>,
}

impl RunReport {
    pub fn ran(&self) -> Vec<Stage> {
        self.stages.iter().filter(|s| !s.skipped).map(|s| s.stage).collect()
    }
}

/// Runs every stage in order. Unless `force` is set, a stage whose
/// fingerprint and outputs match the manifest from a previous run is
/// skipped. A failure stops the run and names the stage.
pub fn run_all(cfg: &PipelineConfig, force: bool) -> Result<RunReport> {
    // credentials are checked before any stage runs
    backend(cfg)?;
    cfg.embeddings.text.build().context("configuring the text embedder")?;
    fs::create_dir_all(&cfg.paths.work_dir)?;
    let manifest_path = cfg.paths.work_dir.join("manifest.json");
    let mut manifest: Manifest = match fs::read_to_string(&manifest_path) {
        Ok(text) if !force => serde_json::from_str(&text).unwrap_or_default(),
        _ => Manifest::default(),
    };
    let mut previous = String::new();
    let mut stages = Vec::new();
    let mut dirty = false;
    for stage in Stage::ALL {
        let fp = fingerprint(cfg, stage, &previous)?;
        let done = manifest
            .stages
            .get(&stage)
            .filter(|e| !dirty && e.fingerprint == fp && e.outputs.iter().all(|p| p.exists()));
        let outcome = match done {
            Some(e) => {
                log::info!("{}: up to date", stage.name());
                StageOutcome { stage, skipped: true, outputs: e.outputs.clone(), summary: e.summary.clone() }
            }
            None => {
                dirty = true;
                log::info!("{}: running", stage.name());
                let o = run_stage(cfg, stage).with_context(|| format!("stage `{}` failed", stage.name()))?;
                log::info!("{}: {}", stage.name(), o.summary);
                manifest.stages.insert(
                    stage,
                    ManifestEntry { fingerprint: fp.clone(), outputs: o.outputs.clone(), summary: o.summary.clone() },
                );
                write_json(&manifest_path, &manifest)?;
                o
            }
        };
        previous = fp;
        stages.push(outcome);
    }
    let report = RunReport { stages };
    write_json(&cfg.paths.work_dir.join("run_report.json"), &report)?;
    Ok(report)
}
