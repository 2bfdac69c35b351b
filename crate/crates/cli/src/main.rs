use std::net::SocketAddr;
use std::path::PathBuf;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use kgmcq_cli::config::RespondentSource;
use kgmcq_cli::pipeline::{self, Stage, StageOutcome};
use kgmcq_cli::PipelineConfig;
use kgmcq_model::ModelKind;
use kgmcq_service::ServiceConfig;

#[derive(Parser)]
#[command(name = "kgmcq", version, about = "Knowledge-graph MCQ generation and difficulty estimation")]
struct Cli {
    /// Pipeline configuration file (TOML). Defaults apply when omitted.
    #[arg(short, long, global = true)]
    config: Option<PathBuf>,
    /// Override a config value, e.g. `--set generation.seed=7`. Repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE", global = true)]
    overrides: Vec<String>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Extract a knowledge graph from the corpus.
    BuildKg {
        #[arg(long)]
        corpus: Option<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Generate questions from the graph.
    Generate {
        #[arg(long)]
        graph: Option<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        keys: Option<usize>,
        #[arg(long)]
        per_key: Option<usize>,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Compute the difficulty signals of every question.
    Signals {
        #[arg(long)]
        graph: Option<PathBuf>,
        #[arg(long)]
        mcqs: Option<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Serve questions to respondents over HTTP.
    Serve {
        #[arg(long)]
        addr: Option<String>,
        #[arg(long)]
        mcqs: Option<PathBuf>,
        #[arg(long)]
        signals: Option<PathBuf>,
        #[arg(long)]
        log: Option<PathBuf>,
        /// Directory of built quiz front-end assets.
        #[arg(long)]
        static_dir: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Join signals with response labels into a training table.
    Assemble {
        #[arg(long)]
        signals: Option<PathBuf>,
        #[arg(long)]
        responses: Option<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
        /// Produce the response log with simulated respondents first.
        #[arg(long)]
        simulate: bool,
    },
    /// Train and evaluate difficulty models.
    Train {
        #[command(flatten)]
        data: DataArgs,
        /// linear, forest, gbt or gbt2; every configured model when omitted.
        #[arg(long)]
        model: Option<ModelKind>,
        /// Feature names to drop, comma separated.
        #[arg(long, value_delimiter = ',')]
        exclude: Vec<String>,
    },
    /// Retrain with signal subsets removed.
    Ablate {
        #[command(flatten)]
        data: DataArgs,
        #[arg(long, default_value = "default")]
        grid: String,
        #[arg(long)]
        model: Option<ModelKind>,
    },
    /// Feature importances and a combined summary.
    Report {
        #[command(flatten)]
        data: DataArgs,
        #[arg(long)]
        model: Option<ModelKind>,
    },
    /// Every stage in order, skipping stages that are already up to date.
    RunAll {
        /// Rerun every stage.
        #[arg(long)]
        force: bool,
    },
}

#[derive(Args)]
struct DataArgs {
    /// Labeled table (signals plus difficulty labels).
    #[arg(long)]
    data: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory for tables, point files and models.
    #[arg(long)]
    report: Option<PathBuf>,
    /// Labels at or above this value are dropped.
    #[arg(long, conflicts_with = "no_outlier_filter")]
    threshold: Option<f64>,
    #[arg(long)]
    no_outlier_filter: bool,
}

impl DataArgs {
    fn apply(&self, cfg: &mut PipelineConfig) {
        if let Some(d) = &self.data {
            cfg.paths.dataset = Some(d.clone());
        }
        if let Some(s) = self.seed {
            cfg.model.seed = s;
        }
        if let Some(r) = &self.report {
            cfg.paths.report_dir = Some(r.clone());
        }
        if let Some(t) = self.threshold {
            cfg.dataset.outlier_threshold = Some(t);
        }
        if self.no_outlier_filter {
            cfg.dataset.outlier_threshold = None;
        }
    }
}

fn print(o: &StageOutcome) {
    println!("{}{}: {}", o.stage.name(), if o.skipped { " (up to date)" } else { "" }, o.summary);
    for p in &o.outputs {
        println!("  {}", p.display());
    }
}

fn run_one(cfg: &PipelineConfig, stage: Stage) -> Result<()> {
    cfg.validate()?;
    let o = pipeline::run_stage(cfg, stage).with_context(|| format!("stage `{}` failed", stage.name()))?;
    print(&o);
    Ok(())
}

fn main() -> Result<()> {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    let mut cfg = PipelineConfig::load(cli.config.as_deref(), &cli.overrides)?;
    match cli.command {
        Command::BuildKg { corpus, out } => {
            if let Some(c) = corpus {
                cfg.paths.corpus = c;
            }
            cfg.paths.graph = out.or(cfg.paths.graph);
            run_one(&cfg, Stage::BuildKg)
        }
        Command::Generate { graph, out, keys, per_key, seed } => {
            cfg.paths.graph = graph.or(cfg.paths.graph);
            cfg.paths.mcqs = out.or(cfg.paths.mcqs);
            cfg.generation.keys = keys.unwrap_or(cfg.generation.keys);
            cfg.generation.per_key = per_key.unwrap_or(cfg.generation.per_key);
            cfg.generation.seed = seed.unwrap_or(cfg.generation.seed);
            run_one(&cfg, Stage::Generate)
        }
        Command::Signals { graph, mcqs, out } => {
            cfg.paths.graph = graph.or(cfg.paths.graph);
            cfg.paths.mcqs = mcqs.or(cfg.paths.mcqs);
            cfg.paths.signals = out.or(cfg.paths.signals);
            run_one(&cfg, Stage::Signals)
        }
        Command::Serve { addr, mcqs, signals, log, static_dir, seed } => {
            cfg.paths.mcqs = mcqs.or(cfg.paths.mcqs);
            cfg.paths.signals = signals.or(cfg.paths.signals);
            cfg.paths.responses = log.or(cfg.paths.responses);
            let addr: SocketAddr = addr.unwrap_or(cfg.serve.addr.clone()).parse().context("invalid --addr")?;
            let signals_path = cfg.signals_path();
            let service = ServiceConfig {
                addr,
                mcqs: cfg.mcqs_path(),
                signals: signals_path.exists().then_some(signals_path),
                log: cfg.responses_path(),
                static_dir: static_dir.or(cfg.serve.static_dir.clone()),
                seed: seed.unwrap_or(cfg.serve.seed),
            };
            let rt = tokio::runtime::Runtime::new()?;
            rt.block_on(kgmcq_service::serve(&service))?;
            Ok(())
        }
        Command::Assemble { signals, responses, out, simulate } => {
            cfg.paths.signals = signals.or(cfg.paths.signals);
            cfg.paths.responses = responses.or(cfg.paths.responses);
            cfg.paths.dataset = out.or(cfg.paths.dataset);
            if simulate {
                cfg.respondents.source = RespondentSource::Simulated;
                run_one(&cfg, Stage::Collect)?;
            }
            run_one(&cfg, Stage::Assemble)
        }
        Command::Train { data, model, exclude } => {
            data.apply(&mut cfg);
            if let Some(m) = model {
                cfg.model.kinds = vec![m];
            }
            if !exclude.is_empty() {
                cfg.model.exclude = exclude;
            }
            run_one(&cfg, Stage::Train)
        }
        Command::Ablate { data, grid, model } => {
            if grid != "default" {
                bail!("unknown grid `{grid}` (only `default` is available)");
            }
            data.apply(&mut cfg);
            cfg.model.ablation_kind = model.unwrap_or(cfg.model.ablation_kind);
            run_one(&cfg, Stage::Ablate)
        }
        Command::Report { data, model } => {
            data.apply(&mut cfg);
            cfg.model.ablation_kind = model.unwrap_or(cfg.model.ablation_kind);
            run_one(&cfg, Stage::Report)
        }
        Command::RunAll { force } => {
            let report = pipeline::run_all(&cfg, force)?;
            for o in &report.stages {
                print(o);
            }
            Ok(())
        }
    }
}
