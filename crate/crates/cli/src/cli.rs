//! Argument parsing and dispatch.

use std::path::PathBuf;

use clap::{Parser, Subcommand};
use serde_json::Value;

use crate::artifact::input_error;
use crate::commands::{self, Ctx, PlotRequest};
use crate::config::RunConfig;

#[derive(Debug, Parser)]
#[command(
    name = "cardiotwin",
    version,
    about = "Cardiac activation digital-twin toolkit"
)]
pub struct Cli {
    /// JSON run configuration; defaults are used for missing fields.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Overrides the configuration seed.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Root directory for all stage outputs.
    #[arg(long, global = true, default_value = "run")]
    pub out: PathBuf,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Print the resolved configuration as JSON.
    Config,
    /// Build the phantom anatomy family.
    Phantom,
    /// Simulate one activation map and ECG.
    Simulate {
        /// Mesh JSON to use instead of the phantom family.
        #[arg(long)]
        mesh: Option<PathBuf>,
    },
    /// Sample and simulate the virtual cohort.
    Cohort {
        #[arg(long)]
        per_mesh: Option<usize>,
    },
    /// Train the network on the cohort.
    Train {
        #[arg(long)]
        epochs: Option<usize>,
    },
    /// Predict activation parameters for the TEST split.
    Infer,
    /// Score TEST predictions and run the correlation study.
    Eval {
        /// Recompute predictions instead of reading stored ones.
        #[arg(long)]
        live: bool,
    },
    /// Invert TEST subjects with coordinate descent on the forward model.
    Baseline {
        #[arg(long)]
        subjects: Option<usize>,
    },
    /// Render SVG figures. Without a kind, plots everything available.
    Plot {
        #[command(subcommand)]
        kind: Option<PlotKind>,
    },
}

#[derive(Debug, Subcommand)]
pub enum PlotKind {
    /// Eight-lead overlay of a prediction and optional ground truth.
    Ecg {
        #[arg(long)]
        pred: PathBuf,
        #[arg(long)]
        gt: Option<PathBuf>,
    },
    /// Scatter with regression line from a scatter CSV.
    Scatter {
        #[arg(long)]
        csv: PathBuf,
    },
    /// Activation map on the mesh nodes.
    Atm {
        #[arg(long)]
        atm: PathBuf,
        #[arg(long)]
        mesh: PathBuf,
    },
}

pub fn resolve_config(cli: &Cli) -> anyhow::Result<RunConfig> {
    let mut cfg = match &cli.config {
        Some(path) => RunConfig::load(path)?,
        None => RunConfig::default(),
    };
    if let Some(seed) = cli.seed {
        cfg.seed = seed;
    }
    match &cli.command {
        Command::Cohort { per_mesh: Some(n) } => cfg.cohort.per_mesh = *n,
        Command::Train { epochs: Some(n) } => cfg.train.epochs = *n,
        Command::Baseline { subjects: Some(n) } => cfg.baseline.subjects = *n,
        _ => {}
    }
    cfg.train_config()
        .check()
        .map_err(|e| input_error(format!("train config: {e}")))?;
    Ok(cfg)
}

/// Runs the selected command and returns its JSON summary.
pub fn run(cli: Cli) -> anyhow::Result<Value> {
    let cfg = resolve_config(&cli)?;
    if let Command::Config = cli.command {
        return Ok(serde_json::to_value(&cfg)?);
    }
    let ctx = Ctx { cfg, out: cli.out };
    match cli.command {
        Command::Config => unreachable!("handled above"),
        Command::Phantom => commands::phantom(&ctx),
        Command::Simulate { mesh } => commands::simulate(&ctx, mesh.as_deref()),
        Command::Cohort { .. } => commands::cohort(&ctx),
        Command::Train { .. } => commands::train_cmd(&ctx),
        Command::Infer => commands::infer_cmd(&ctx),
        Command::Eval { live } => commands::eval_cmd(&ctx, live),
        Command::Baseline { .. } => commands::baseline_cmd(&ctx),
        Command::Plot { kind } => {
            let requests: Vec<PlotRequest> = kind
                .map(|k| match k {
                    PlotKind::Ecg { pred, gt } => PlotRequest::Ecg { pred, gt },
                    PlotKind::Scatter { csv } => PlotRequest::Scatter { csv },
                    PlotKind::Atm { atm, mesh } => PlotRequest::Atm { atm, mesh },
                })
                .into_iter()
                .collect();
            commands::plot(&ctx, &requests)
        }
    }
}
