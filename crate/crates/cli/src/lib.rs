//! The `prlf` command line: data generation, training, evaluation, sweeps,
//! ablations, the phase diagnostic and plots. Every command writes a
//! [`manifest::RunManifest`] next to its outputs.

pub mod commands;
pub mod config;
pub mod error;
pub mod manifest;
pub mod plot;

use std::ffi::OsString;
use std::path::PathBuf;

use clap::{Parser, Subcommand, ValueEnum};
use prlf::datagen::{ModalitySubset, Split};

pub use error::CliError;

#[derive(Debug, Parser)]
#[command(name = "prlf", version, about = "Train and evaluate PRLF models on synthetic multimodal data")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,

    /// TOML config file with [data], [model], [train] and [eval] sections.
    #[arg(long, global = true, env = "PRLF_CONFIG")]
    pub config: Option<PathBuf>,

    /// Seed for data generation and training.
    #[arg(long, global = true, env = "PRLF_SEED")]
    pub seed: Option<u64>,

    /// Output directory.
    #[arg(long, global = true, env = "PRLF_OUT", default_value = "runs")]
    pub out: PathBuf,

    /// Intra-modality missing rate for eval and ablate.
    #[arg(long, global = true, env = "PRLF_P")]
    pub p: Option<f64>,

    /// Available modalities for eval, e.g. "lav" or "la".
    #[arg(long, global = true, env = "PRLF_SUBSET")]
    pub subset: Option<ModalitySubset>,

    /// Interaction steps.
    #[arg(long, global = true, env = "PRLF_STEPS")]
    pub steps: Option<usize>,

    /// Variant trained by `ablate`.
    #[arg(long, global = true, env = "PRLF_ABLATE", value_enum)]
    pub ablate: Option<Ablation>,

    /// Training epochs.
    #[arg(long, global = true, env = "PRLF_EPOCHS")]
    pub epochs: Option<usize>,

    /// Directory written by gen-data; data is generated from the config otherwise.
    #[arg(long, global = true, env = "PRLF_DATA")]
    pub data: Option<PathBuf>,

    /// Checkpoint to evaluate; defaults to <out>/checkpoint.bin.
    #[arg(long, global = true, env = "PRLF_CHECKPOINT")]
    pub checkpoint: Option<PathBuf>,

    /// Split to evaluate on (eval defaults to val, other commands to test).
    #[arg(long, global = true, env = "PRLF_SPLIT", value_enum)]
    pub split: Option<SplitArg>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Write train/val/test datasets and their ground-truth sidecars.
    GenData,
    /// Train a model; writes checkpoint.bin and loss_log.tsv.
    Train,
    /// Evaluate a checkpoint under --p and --subset.
    Eval,
    /// F1 over the intra-modality missing rates.
    SweepIntra,
    /// F1 over the seven modality subsets and their average.
    SweepInter,
    /// Train and evaluate an ablated variant at --p.
    Ablate,
    /// Phase difference of the final features under masking.
    PhaseDiag,
    /// Render F1-versus-rate curves from sweep-intra tables.
    Plot {
        /// sweep-intra tables; each becomes one curve.
        #[arg(long = "input", required = true)]
        inputs: Vec<PathBuf>,
    },
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum Ablation {
    Full,
    /// Fisher importance only (w = 1).
    WoCmi,
    /// Confidence only (w = 0).
    WoFimi,
    /// μ fixed at (1/3, 1/3, 1/3).
    WoAmre,
    /// One step with the cross path zeroed.
    WoPi,
    /// η1 = 0.
    WoLuni,
    /// η2 = 0.
    WoLphase,
    /// steps = 1..=5.
    Steps,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum SplitArg {
    Train,
    Val,
    Test,
}

impl From<SplitArg> for Split {
    fn from(s: SplitArg) -> Self {
        match s {
            SplitArg::Train => Split::Train,
            SplitArg::Val => Split::Val,
            SplitArg::Test => Split::Test,
        }
    }
}

/// Parses `args` (including the program name), runs the command and returns
/// the process exit code. Diagnostics go to stderr.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return e.exit_code();
        }
    };
    match commands::execute(&cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("prlf: {e}");
            e.exit_code()
        }
    }
}
