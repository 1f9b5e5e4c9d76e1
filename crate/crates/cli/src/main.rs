//! `convo`: config-driven pipeline runner.
//!
//! Exit status 0 on success, 1 when a numerical step fails, 2 for bad
//! configuration or input.

mod commands;
mod config;
mod failure;
mod manifest;

use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::Context;
use clap::{Args, Parser, Subcommand};

use crate::commands::DetectOverrides;
use crate::config::Config;
use crate::failure::Failure;
use crate::manifest::Run;

#[derive(Debug, Parser)]
#[command(
    name = "convo",
    version,
    about = "Conversational fluidity analysis pipeline"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Args)]
struct Common {
    /// JSON run configuration.
    #[arg(long)]
    config: PathBuf,
    /// Output directory; overrides the config's `out_dir`.
    #[arg(long)]
    out_dir: Option<PathBuf>,
    /// Run seed; overrides the config's `seed`.
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Detect silence and overlap events and sample clip windows.
    Detect {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        rms_threshold: Option<f64>,
        /// Minimum silence length in seconds.
        #[arg(long)]
        min_silence: Option<f64>,
        /// Analysis frame length in seconds.
        #[arg(long)]
        frame_len: Option<f64>,
        /// Analysis frame hop in seconds.
        #[arg(long)]
        frame_hop: Option<f64>,
        /// Clips sampled per trigger kind.
        #[arg(long)]
        per_kind: Option<usize>,
    },
    /// Granger-causality coupling of participant motion per clip.
    Gc {
        #[command(flatten)]
        common: Common,
    },
    /// Fuse per-domain features, coupling and labels into one dataset.
    Fuse {
        #[command(flatten)]
        common: Common,
    },
    /// Rater reliability filtering and clip labels.
    Labels {
        #[command(flatten)]
        common: Common,
    },
    /// Cross-validated training with hyperparameter search.
    Train {
        #[command(flatten)]
        common: Common,
    },
    /// Score trained fold models against another task's labels.
    Cross {
        #[command(flatten)]
        common: Common,
    },
    /// Summary statistics and scores across finished stages.
    Report {
        #[command(flatten)]
        common: Common,
    },
}

fn configure_threads() -> Result<(), Failure> {
    let Ok(v) = std::env::var("CONVO_THREADS") else {
        return Ok(());
    };
    let n: usize = v
        .parse()
        .ok()
        .filter(|n| *n > 0)
        .with_context(|| format!("CONVO_THREADS must be a positive integer, got `{v}`"))
        .map_err(Failure::input)?;
    rayon::ThreadPoolBuilder::new()
        .num_threads(n)
        .build_global()
        .context("cannot size the worker pool")
        .map_err(Failure::input)
}

fn execute(cli: Cli) -> Result<(), Failure> {
    configure_threads()?;
    let (name, common) = match &cli.command {
        Command::Detect { common, .. } => ("detect", common),
        Command::Gc { common } => ("gc", common),
        Command::Fuse { common } => ("fuse", common),
        Command::Labels { common } => ("labels", common),
        Command::Train { common } => ("train", common),
        Command::Cross { common } => ("cross", common),
        Command::Report { common } => ("report", common),
    };
    let (cfg, base) = Config::load(&common.config)?;
    let seed = common.seed.unwrap_or(cfg.seed);
    let out_dir = common
        .out_dir
        .clone()
        .or_else(|| cfg.out_dir.clone())
        .unwrap_or(base);
    let snapshot = serde_json::to_value(&cfg)
        .context("config snapshot")
        .map_err(Failure::input)?;
    let mut run = Run::new(name, seed, out_dir, snapshot);

    match &cli.command {
        Command::Detect {
            rms_threshold,
            min_silence,
            frame_len,
            frame_hop,
            per_kind,
            ..
        } => {
            let over = DetectOverrides {
                rms_threshold: *rms_threshold,
                min_silence_s: *min_silence,
                frame_len_s: *frame_len,
                frame_hop_s: *frame_hop,
                per_kind: *per_kind,
            };
            commands::detect(&cfg, &mut run, &over)?
        }
        Command::Gc { .. } => commands::gc(&cfg, &mut run)?,
        Command::Fuse { .. } => commands::fuse(&cfg, &mut run)?,
        Command::Labels { .. } => commands::labels(&cfg, &mut run)?,
        Command::Train { .. } => commands::train(&cfg, &mut run)?,
        Command::Cross { .. } => commands::cross(&cfg, &mut run)?,
        Command::Report { .. } => commands::report(&cfg, &mut run)?,
    }
    for path in run.commit().map_err(Failure::input)? {
        log::info!("wrote {}", path.display());
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    match execute(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {f}");
            f.exit_code()
        }
    }
}
