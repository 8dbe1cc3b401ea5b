use std::io::{self, Write};
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use serde_json::{json, Value};
use tsgraph::config::PipelineConfig;
use tsgraph::pipeline::{write_synthetic, Pipeline, Stage};
use tsgraph::scoring::Aggregation;
use tsgraph::synth::{generate, AnomalyKind, SynthConfig};
use tsgraph::Error;

#[derive(Parser)]
#[command(
    name = "tsgraph",
    version,
    about = "Multivariate time-series anomaly detection over an event graph"
)]
struct Cli {
    /// Run configuration (TOML).
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Run directory; for `synth`, the dataset directory.
    #[arg(long, global = true)]
    out_dir: Option<PathBuf>,
    /// Overrides the configured seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Build missing or stale upstream stages instead of failing.
    #[arg(long, global = true)]
    build_deps: bool,
    #[command(flatten)]
    ablation: Ablation,
    #[command(subcommand)]
    command: Command,
}

#[derive(clap::Args)]
struct Ablation {
    /// Embed nodes from memory alone.
    #[arg(long, global = true)]
    no_attention: bool,
    /// Drop the forecast-distance factor.
    #[arg(long, global = true)]
    no_forecast: bool,
    /// Drop the residual-surprisal factor.
    #[arg(long, global = true)]
    no_residual: bool,
    /// Score change surprisal only, without the model.
    #[arg(long, global = true)]
    surprisal_only: bool,
    #[arg(long, global = true, value_enum)]
    aggregation: Option<AggregationArg>,
}

#[derive(Clone, Copy, ValueEnum)]
enum AggregationArg {
    Max,
    Sum,
}

#[derive(Clone, Copy, ValueEnum)]
enum KindArg {
    Spike,
    LevelShift,
    Noise,
}

#[derive(Subcommand)]
enum Command {
    /// Discover motifs and cluster them into events.
    Events,
    /// Match windows to events and build the edge streams.
    Graph,
    /// Train the temporal graph model.
    Train,
    /// Score the test windows.
    Score,
    /// Evaluate scores against labels.
    Eval,
    /// Write event-bar and score-trace figures.
    Plot,
    /// Generate a labelled synthetic dataset with a matching config.
    Synth {
        #[arg(long, default_value_t = 5)]
        series: usize,
        #[arg(long, default_value_t = 5000)]
        length: usize,
        #[arg(long, default_value_t = 2500)]
        train_length: usize,
        #[arg(long, default_value_t = 10)]
        anomalies: usize,
        #[arg(long, value_enum, value_delimiter = ',', default_values_t = [KindArg::Spike, KindArg::LevelShift])]
        kinds: Vec<KindArg>,
    },
}

fn stage_of(cmd: &Command) -> Option<Stage> {
    Some(match cmd {
        Command::Events => Stage::Events,
        Command::Graph => Stage::Graph,
        Command::Train => Stage::Train,
        Command::Score => Stage::Score,
        Command::Eval => Stage::Eval,
        Command::Plot => Stage::Plot,
        Command::Synth { .. } => return None,
    })
}

fn apply_overrides(cfg: &mut PipelineConfig, cli: &Cli) {
    if let Some(seed) = cli.seed {
        cfg.seed = seed;
    }
    let a = &cli.ablation;
    if a.no_attention {
        cfg.model.use_attention = false;
    }
    if a.no_forecast {
        cfg.score.use_forecast = false;
    }
    if a.no_residual {
        cfg.score.use_residual = false;
    }
    if a.surprisal_only {
        cfg.score.surprisal_only = true;
    }
    match a.aggregation {
        Some(AggregationArg::Max) => cfg.score.aggregation = Aggregation::Max,
        Some(AggregationArg::Sum) => cfg.score.aggregation = Aggregation::Sum,
        None => {}
    }
}

fn run(cli: &Cli) -> Result<Value, Error> {
    if let Command::Synth {
        series,
        length,
        train_length,
        anomalies,
        kinds,
    } = &cli.command
    {
        let dir = cli
            .out_dir
            .clone()
            .unwrap_or_else(|| PathBuf::from("synthetic"));
        let mut cfg = SynthConfig {
            n_series: *series,
            length: *length,
            train_length: *train_length,
            n_anomalies: *anomalies,
            kinds: kinds
                .iter()
                .map(|k| match k {
                    KindArg::Spike => AnomalyKind::Spike,
                    KindArg::LevelShift => AnomalyKind::LevelShift,
                    KindArg::Noise => AnomalyKind::Noise,
                })
                .collect(),
            ..SynthConfig::default()
        };
        if let Some(seed) = cli.seed {
            cfg.seed = seed;
        }
        let data = generate(&cfg)?;
        let config = write_synthetic(&data, &dir, 0)?;
        return Ok(json!({
            "command": "synth",
            "dir": dir,
            "config": config,
            "anomalies": data.anomalies.len(),
        }));
    }
    let stage = stage_of(&cli.command).expect("non-synth command maps to a stage");
    let path = cli
        .config
        .as_ref()
        .ok_or_else(|| Error::InvalidParam("--config is required".into()))?;
    let mut cfg = PipelineConfig::load(path)?;
    apply_overrides(&mut cfg, cli);
    let dir = cli.out_dir.clone().unwrap_or_else(|| PathBuf::from("run"));
    let mut pipeline = Pipeline::open(cfg, &dir, cli.build_deps)?;
    let log = pipeline.run(stage)?;
    let stages: Vec<Value> = log
        .iter()
        .map(|(s, status)| json!({"stage": s.name(), "status": status}))
        .collect();
    let mut out = json!({
        "command": stage.name(),
        "run_dir": dir,
        "stages": stages,
    });
    if stage == Stage::Eval {
        let r = pipeline.report()?.report;
        out["metrics"] = json!({
            "precision": r.precision,
            "recall": r.recall,
            "f1": r.f1,
            "threshold": r.threshold,
            "n_segments": r.n_segments,
            "n_detected": r.n_detected,
        });
    }
    Ok(out)
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match run(&cli) {
        Ok(v) => {
            let _ = writeln!(io::stdout().lock(), "{v:#}");
            ExitCode::SUCCESS
        }
        Err(e) => {
            let v = json!({"error": {"kind": e.kind(), "message": e.to_string()}});
            eprintln!("{v}");
            ExitCode::FAILURE
        }
    }
}
