use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::Context;
use clap::{Args, Parser, Subcommand};
use log::info;

use patternscope::pipeline::{Pipeline, PipelineConfig, PipelineError, Stage, StageOutcome};
use patternscope::synth::{generate, SynthSpec};
use patternscope::verifier::{serve_exchange, ModelSet};

/// Mine UI design-pattern usage from app screens and relate it to ratings
/// and installs.
#[derive(Debug, Parser)]
#[command(name = "patternscope", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Args)]
struct StageArgs {
    /// Pipeline configuration (TOML).
    #[arg(long)]
    config: PathBuf,
    /// Overrides the configured seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Overrides the configured output directory.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Re-run even when inputs are unchanged.
    #[arg(long)]
    stage_force: bool,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Parse hierarchies, screenshots, metadata and exclusions.
    Ingest(StageArgs),
    /// Keyword detection of candidate components.
    Detect(StageArgs),
    /// Per-kind location heatmaps.
    Heatmap(StageArgs),
    /// Candidate crops and mined negatives.
    Crop(StageArgs),
    /// Train the per-kind reference verifiers.
    Train(StageArgs),
    /// Score candidates and aggregate per-app usage.
    Verify(StageArgs),
    /// Group, bucket, correlation and category statistics.
    Analyze(StageArgs),
    /// Charts, heatmap images and contact sheets.
    Report(StageArgs),
    /// Every stage in order.
    All(StageArgs),
    /// Write a synthetic corpus with planted ground truth.
    Synth {
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        apps: Option<usize>,
        #[arg(long)]
        seed: Option<u64>,
        /// Generator settings (TOML); defaults otherwise.
        #[arg(long)]
        spec: Option<PathBuf>,
    },
    /// Serve an exchange directory with trained reference models.
    Score {
        /// Directory of `<Kind>.model` files.
        #[arg(long)]
        models: PathBuf,
        exchange_dir: PathBuf,
    },
}

fn run_stages(args: &StageArgs, stage: Option<Stage>) -> Result<(), PipelineError> {
    let mut config = PipelineConfig::load(&args.config)?;
    if let Some(seed) = args.seed {
        config.seed = seed;
    }
    if let Some(out) = &args.out {
        config.out = out.clone();
    }
    let pipeline = Pipeline::new(config)?;
    let outcomes = match stage {
        Some(s) => vec![(s, pipeline.run_stage(s, args.stage_force)?)],
        None => pipeline.run_all(args.stage_force)?,
    };
    for (s, o) in outcomes {
        let verb = match o {
            StageOutcome::Ran => "done",
            StageOutcome::Skipped => "unchanged",
        };
        println!("{s}: {verb}");
    }
    Ok(())
}

fn synth(out: &Path, apps: Option<usize>, seed: Option<u64>, spec: Option<&Path>) -> anyhow::Result<()> {
    let mut spec = match spec {
        Some(p) => {
            let text = fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))?;
            toml::from_str(&text).with_context(|| format!("parsing {}", p.display()))?
        }
        None => SynthSpec::default(),
    };
    if let Some(n) = apps {
        spec.apps = n;
    }
    if let Some(s) = seed {
        spec.seed = s;
    }
    let output = generate(&spec, out)?;
    let config = "corpus = \"screens\"\nmetadata = \"metadata.csv\"\nexclusions = \"exclusions.txt\"\nout = \"out\"\n";
    let config_path = out.join("pipeline.toml");
    fs::write(&config_path, config).with_context(|| format!("writing {}", config_path.display()))?;
    info!("{} planted instances, {} decoys", output.instances.len(), output.decoys.len());
    println!("{} apps written to {}", output.truth.len(), out.display());
    Ok(())
}

fn score(models: &Path, dir: &Path) -> anyhow::Result<()> {
    let set = ModelSet::load_dir(models)?;
    anyhow::ensure!(!set.models.is_empty(), "no models found in {}", models.display());
    let n = serve_exchange(dir, &set)?;
    info!("scored {n} crops");
    Ok(())
}

fn report_error(e: &dyn std::error::Error) {
    eprintln!("error: {e}");
    let mut source = e.source();
    while let Some(s) = source {
        eprintln!("  caused by: {s}");
        source = s.source();
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    let (args, stage) = match &cli.command {
        Command::Ingest(a) => (a, Some(Stage::Ingest)),
        Command::Detect(a) => (a, Some(Stage::Detect)),
        Command::Heatmap(a) => (a, Some(Stage::Heatmap)),
        Command::Crop(a) => (a, Some(Stage::Crop)),
        Command::Train(a) => (a, Some(Stage::Train)),
        Command::Verify(a) => (a, Some(Stage::Verify)),
        Command::Analyze(a) => (a, Some(Stage::Analyze)),
        Command::Report(a) => (a, Some(Stage::Report)),
        Command::All(a) => (a, None),
        Command::Synth { out, apps, seed, spec } => {
            return match synth(out, *apps, *seed, spec.as_deref()) {
                Ok(()) => ExitCode::SUCCESS,
                Err(e) => {
                    eprintln!("error: {e:#}");
                    ExitCode::FAILURE
                }
            };
        }
        Command::Score { models, exchange_dir } => {
            return match score(models, exchange_dir) {
                Ok(()) => ExitCode::SUCCESS,
                Err(e) => {
                    eprintln!("error: {e:#}");
                    ExitCode::FAILURE
                }
            };
        }
    };
    match run_stages(args, stage) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            report_error(&e);
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
