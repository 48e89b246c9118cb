//! `gender-audit`: train gender classifiers, extend them to a non-binary
//! class, stack them, and audit every model for disparate impact.
//!
//! Exit status is 0 on success, 1 for invalid input or configuration and 2
//! for failures while running.

mod commands;
mod config;
mod failure;
mod pipeline;
mod rundir;
mod stages;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};


#[derive(Parser, Debug)]
#[command(name = "gender-audit", version, about = "Gender classification with transfer learning, stacking and fairness audits")]
pub struct Cli {
    #[command(flatten)]
    pub global: Global,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Args, Debug, Clone)]
pub struct Global {
    /// Run configuration (TOML). Defaults apply when omitted.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Overrides the configured seed.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Root under which timestamped run directories are created.
    #[arg(long, global = true, env = rundir::OUT_ENV, default_value = "runs")]
    pub out: PathBuf,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Validate a manifest and print its group distribution.
    Ingest {
        manifest: PathBuf,
        /// Assign train/val/test splits and write the result to the run directory.
        #[arg(long)]
        split: bool,
        /// Split record by record instead of keeping identities together.
        #[arg(long)]
        record_level: bool,
    },
    /// Generate a synthetic pattern dataset.
    Synth {
        /// Images per gender/tone group.
        #[arg(long, default_value_t = 16)]
        per_group: usize,
        /// Image side; defaults to the configured input side.
        #[arg(long)]
        side: Option<usize>,
    },
    /// Augment and/or oversample the training split of a manifest.
    Rebalance {
        manifest: PathBuf,
        /// Target proportion for a group, e.g. `male/dark=0.1521`. Repeatable.
        #[arg(long = "target", value_name = "GROUP=P")]
        targets: Vec<String>,
        /// Raise a gender or group to a count, e.g. `male=1019`.
        #[arg(long, value_name = "CLASS=N")]
        oversample: Option<String>,
    },
    /// Train the baseline network on the manifest's train/val splits.
    Train {
        manifest: PathBuf,
        /// Classes to train on; defaults to the configured baseline classes.
        #[arg(long, value_delimiter = ',')]
        classes: Vec<String>,
    },
    /// Build and train a transfer model.
    Transfer {
        manifest: PathBuf,
        #[arg(long, value_enum)]
        kind: TransferKind,
        /// Trained baseline bundle (feature-extraction and fine-tune).
        #[arg(long)]
        base: Option<PathBuf>,
    },
    /// Fit a stacked ensemble over trained base models.
    Stack {
        manifest: PathBuf,
        #[arg(long, value_enum)]
        kind: StackKind,
        /// Base model as `ID=DIR`. Repeatable; order is the column order.
        #[arg(long = "model", value_name = "ID=DIR", required = true)]
        models: Vec<String>,
    },
    /// Evaluate a model or ensemble on the manifest's test split.
    Evaluate {
        manifest: PathBuf,
        #[arg(long, conflicts_with = "ensemble", required_unless_present = "ensemble")]
        model: Option<PathBuf>,
        #[arg(long)]
        ensemble: Option<PathBuf>,
        #[arg(long)]
        name: String,
    },
    /// Render evaluation reports as one table.
    Report {
        #[arg(required = true)]
        reports: Vec<PathBuf>,
    },
    /// Draw learning curves or a misclassification grid.
    Plot {
        #[arg(value_enum)]
        kind: PlotKind,
        /// A history CSV (curves) or an evaluation report (grid).
        input: PathBuf,
    },
    /// Run every stage from the configuration.
    Pipeline,
}

#[derive(ValueEnum, Debug, Clone, Copy, PartialEq, Eq)]
pub enum TransferKind {
    FeatureExtraction,
    FineTune,
    Backbone,
}

#[derive(ValueEnum, Debug, Clone, Copy, PartialEq, Eq)]
pub enum StackKind {
    Logistic,
    Adaboost,
}

#[derive(ValueEnum, Debug, Clone, Copy, PartialEq, Eq)]
pub enum PlotKind {
    Curves,
    Grid,
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 1 } else { 0 });
        }
    };
    match commands::run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}

