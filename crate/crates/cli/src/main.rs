//! `dta`: dataset preparation, training, cross-validation, ablations,
//! ranking and attention export for the binding affinity model.

mod commands;
mod config;
mod manifest;

use std::path::PathBuf;
use std::process::ExitCode;
use std::str::FromStr;

use clap::{Parser, Subcommand};
use dta_core::data::DataError;
use dta_core::model::{FusionVariant, ModelError};
use dta_core::protein::ProteinError;
use dta_core::train::{SweepParam, TrainError};

use config::{ConfigArgs, ConfigError};

const EXIT_CODES: &str =
    "Exit codes: 0 success, 1 other failure, 2 usage, 3 input data, 4 configuration, 5 training or model";

#[derive(Debug, Parser)]
#[command(name = "dta", version, about = "Drug-target binding affinity pipeline", after_help = EXIT_CODES)]
struct Cli {
    /// Repeat for more log output.
    #[arg(short, long, action = clap::ArgAction::Count, global = true)]
    verbose: u8,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Transform, filter and join raw affinity and descriptor tables.
    Prepare {
        /// CSV with smiles, protein_sequence, pdb_id, measure, value.
        #[arg(long)]
        affinities: PathBuf,
        /// CSV with pdb_id, avg_rmsf, avg_gyr, div_se, div_mm.
        #[arg(long)]
        descriptors: PathBuf,
        #[arg(long, default_value_t = 1.0)]
        bin_width: f64,
        #[arg(long, short)]
        out: PathBuf,
    },
    /// Dataset counts and affinity histogram.
    Summarize {
        #[arg(long)]
        dataset: PathBuf,
        #[arg(long, default_value_t = 1.0)]
        bin_width: f64,
        #[arg(long, short)]
        out: PathBuf,
    },
    /// Train one model on the whole dataset or on all but one fold.
    Train {
        #[arg(long)]
        dataset: PathBuf,
        #[command(flatten)]
        config: ConfigArgs,
        /// Hold this fold out and report its metrics.
        #[arg(long)]
        holdout_fold: Option<usize>,
        #[arg(long, short)]
        out: PathBuf,
    },
    /// k-fold cross-validation.
    Cv {
        #[arg(long)]
        dataset: PathBuf,
        #[command(flatten)]
        config: ConfigArgs,
        /// Train folds concurrently.
        #[arg(long)]
        parallel: bool,
        /// Skip writing per-fold checkpoints.
        #[arg(long)]
        no_checkpoints: bool,
        #[arg(long, short)]
        out: PathBuf,
    },
    /// Rank candidate pairs by predicted affinity.
    Predict {
        #[arg(long)]
        checkpoint: PathBuf,
        /// CSV with smiles, protein_sequence, pdb_id.
        #[arg(long)]
        candidates: PathBuf,
        #[arg(long)]
        descriptors: PathBuf,
        #[arg(long, short)]
        out: PathBuf,
    },
    /// Ablation table. Without --fusion, the convolution and descriptor
    /// ablations; with --fusion all, one row per fusion variant.
    Ablate {
        #[arg(long)]
        dataset: PathBuf,
        #[command(flatten)]
        config: ConfigArgs,
        #[arg(long)]
        parallel: bool,
        #[arg(long, short)]
        out: PathBuf,
    },
    /// Cross-validate over a grid of one hyperparameter.
    Sweep {
        #[arg(long)]
        dataset: PathBuf,
        #[command(flatten)]
        config: ConfigArgs,
        /// P (dropout), D (dilation), H (heads) or L (GCN layers).
        #[arg(long)]
        param: SweepParam,
        /// Comma-separated values; defaults to the reference grid.
        #[arg(long, value_delimiter = ',')]
        values: Option<Vec<f64>>,
        #[arg(long)]
        parallel: bool,
        #[arg(long, short)]
        out: PathBuf,
    },
    /// Attention weights of one drug-protein pair.
    ExportAttention {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        descriptors: PathBuf,
        #[arg(long)]
        smiles: String,
        #[arg(long)]
        sequence: String,
        #[arg(long)]
        pdb_id: String,
        /// Keep the N sequence positions with the highest head-averaged weight.
        #[arg(long)]
        top: Option<usize>,
        #[arg(long, short)]
        out: PathBuf,
    },
}

/// `--fusion` value: a single variant, or `all` for the ablation table.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FusionChoice {
    All,
    One(FusionVariant),
}

impl FromStr for FusionChoice {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        if s.trim().eq_ignore_ascii_case("all") {
            return Ok(FusionChoice::All);
        }
        s.parse().map(FusionChoice::One).map_err(|e: ModelError| e.to_string())
    }
}

fn run(cli: Cli) -> anyhow::Result<()> {
    use commands::*;
    match cli.command {
        Command::Prepare {
            affinities,
            descriptors,
            bin_width,
            out,
        } => prepare_cmd(&affinities, &descriptors, bin_width, &out),
        Command::Summarize {
            dataset,
            bin_width,
            out,
        } => summarize_cmd(&dataset, bin_width, &out),
        Command::Train {
            dataset,
            config,
            holdout_fold,
            out,
        } => train_cmd(&dataset, &config.load()?, holdout_fold, &out),
        Command::Cv {
            dataset,
            config,
            parallel,
            no_checkpoints,
            out,
        } => cv_cmd(&dataset, &config.load()?, parallel, !no_checkpoints, &out),
        Command::Predict {
            checkpoint,
            candidates,
            descriptors,
            out,
        } => predict_cmd(&checkpoint, &candidates, &descriptors, &out),
        Command::Ablate {
            dataset,
            config,
            parallel,
            out,
        } => {
            let fusion = config.fusion;
            let base = ConfigArgs { fusion: None, ..config };
            ablate_cmd(&dataset, &base.load()?, fusion, parallel, &out)
        }
        Command::Sweep {
            dataset,
            config,
            param,
            values,
            parallel,
            out,
        } => sweep_cmd(&dataset, &config.load()?, param, values, parallel, &out),
        Command::ExportAttention {
            checkpoint,
            descriptors,
            smiles,
            sequence,
            pdb_id,
            top,
            out,
        } => export_attention_cmd(AttentionArgs {
            checkpoint: &checkpoint,
            descriptors: &descriptors,
            smiles: &smiles,
            sequence: &sequence,
            pdb_id: &pdb_id,
            top,
            out: &out,
        }),
    }
}

fn exit_code(err: &anyhow::Error) -> u8 {
    for cause in err.chain() {
        if cause.is::<ConfigError>() {
            return 4;
        }
        if cause.is::<DataError>() || cause.is::<ProteinError>() {
            return 3;
        }
        if let Some(e) = cause.downcast_ref::<ModelError>() {
            return match e {
                ModelError::InvalidConfig { .. } | ModelError::UnknownVariant(_) => 4,
                _ => 5,
            };
        }
        if let Some(e) = cause.downcast_ref::<TrainError>() {
            return match e {
                TrainError::InvalidConfig { .. } | TrainError::InvalidValue { .. } => 4,
                TrainError::Model(ModelError::InvalidConfig { .. }) => 4,
                TrainError::Data(_) | TrainError::Protein(_) | TrainError::Smiles { .. } => 3,
                _ => 5,
            };
        }
    }
    1
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level))
        .format_timestamp(None)
        .init();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}
