use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};
use mfmil::eval::Protocol;
use mfmil::features::PairMode;
use mfmil::synth::ContextMode;
use mfmil::ChannelMode;
use serde::{Deserialize, Serialize};

#[derive(Debug, Parser)]
#[command(name = "mfmil", version, about = "Weakly supervised localization with multi-fold MIL")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a synthetic dataset.
    Gen(GenArgs),
    /// Train a detector from weak (or mixed) supervision.
    Train(TrainArgs),
    /// Refine the final selections of a run with edge-based objectness.
    Refine(RefineArgs),
    /// CorLoc, AP and error modes of a run.
    Eval(EvalArgs),
    /// Diagnostics.
    #[command(subcommand)]
    Diag(DiagCommand),
    /// Aggregate several runs into one CSV.
    Report(ReportArgs),
    /// Re-run the command recorded in a run manifest.
    Replay(ReplayArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TrainMode {
    Standard,
    Multifold,
    Mixed,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Channels {
    F,
    Fb,
    Fc,
}

impl From<Channels> for ChannelMode {
    fn from(c: Channels) -> Self {
        match c {
            Channels::F => ChannelMode::ForegroundOnly,
            Channels::Fb => ChannelMode::ForegroundPlusBackground,
            Channels::Fc => ChannelMode::ForegroundPlusContrastive,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ProtocolArg {
    #[value(name = "11pt")]
    ElevenPoint,
    #[value(name = "cont")]
    Continuous,
}

impl From<ProtocolArg> for Protocol {
    fn from(p: ProtocolArg) -> Self {
        match p {
            ProtocolArg::ElevenPoint => Protocol::ElevenPoint,
            ProtocolArg::Continuous => Protocol::Continuous,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum PairsArg {
    All,
    Within,
}

impl From<PairsArg> for PairMode {
    fn from(p: PairsArg) -> Self {
        match p {
            PairsArg::All => PairMode::AllPairs,
            PairsArg::Within => PairMode::WithinImage,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ContextArg {
    /// Background descriptor of the window's complement.
    Complement,
    /// One background descriptor for the whole image.
    Full,
}

impl From<ContextArg> for ContextMode {
    fn from(c: ContextArg) -> Self {
        match c {
            ContextArg::Complement => ContextMode::WindowComplement,
            ContextArg::Full => ContextMode::FullImage,
        }
    }
}

/// Unset options keep the generator defaults.
#[derive(Debug, Args)]
pub struct GenArgs {
    /// Output directory for manifest.json, features.milf and planted.json.
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub n_pos: Option<usize>,
    #[arg(long)]
    pub n_neg: Option<usize>,
    #[arg(long)]
    pub dim: Option<usize>,
    /// Class signal strength.
    #[arg(long)]
    pub alpha: Option<f64>,
    #[arg(long)]
    pub noise: Option<f64>,
    #[arg(long)]
    pub candidates: Option<usize>,
    #[arg(long)]
    pub jitter: Option<f64>,
    #[arg(long)]
    pub clutter: Option<usize>,
    #[arg(long)]
    pub context_signal: Option<f64>,
    #[arg(long, value_enum)]
    pub context: Option<ContextArg>,
    /// Omit background descriptors.
    #[arg(long)]
    pub no_background: bool,
    /// Also emit descriptors of mirrored windows.
    #[arg(long)]
    pub flips: bool,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    /// Dataset manifest or its directory.
    #[arg(long)]
    pub data: PathBuf,
    /// Run directory to create.
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, value_enum, default_value = "multifold")]
    pub mode: TrainMode,
    #[arg(long, default_value_t = 10)]
    pub k: usize,
    #[arg(long, default_value_t = 10)]
    pub iters: usize,
    #[arg(long, default_value_t = 1.0)]
    pub c: f64,
    #[arg(long, value_enum, default_value = "f")]
    pub channels: Channels,
    /// Fraction of positives trained on their ground truth (mixed mode).
    #[arg(long, default_value_t = 0.0)]
    pub sup_fraction: f64,
    /// Seed for choosing the supervised images; defaults to --seed.
    #[arg(long)]
    pub sup_seed: Option<u64>,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub threads: Option<usize>,
    #[arg(long, default_value_t = 2)]
    pub mining_rounds: usize,
    /// Positive class weight; defaults to |neg| / |pos| clamped to [1, 100].
    #[arg(long)]
    pub pos_weight: Option<f64>,
}

#[derive(Debug, Args)]
pub struct RefineArgs {
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    pub run: PathBuf,
    /// Directory for refined.csv and refine.json; defaults to the run directory.
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long, default_value_t = 10)]
    pub top_n: usize,
    #[arg(long, default_value_t = 0.5)]
    pub w_cls: f64,
    #[arg(long, default_value_t = 0.5)]
    pub w_obj: f64,
    /// Rescore the top windows without moving them.
    #[arg(long)]
    pub no_local_search: bool,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    pub run: PathBuf,
    #[arg(long, value_enum, default_value = "11pt")]
    pub protocol: ProtocolArg,
    /// Dataset to detect on for AP; defaults to --data.
    #[arg(long)]
    pub test: Option<PathBuf>,
    #[arg(long, default_value_t = 0.3)]
    pub nms: f64,
    /// Evaluate the selections in refined.csv instead of the final ones.
    #[arg(long)]
    pub refined: bool,
}

#[derive(Debug, Subcommand)]
pub enum DiagCommand {
    /// Score distributions of selected, overlapping and other windows.
    ScoreHist(ScoreHistArgs),
    /// Inner products of centered, normalized descriptors.
    DotHist(DotHistArgs),
    /// Fraction of unchanged standard-MIL selections for several C.
    CSweep(CSweepArgs),
}

#[derive(Debug, Args)]
pub struct ScoreHistArgs {
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    pub run: PathBuf,
    #[arg(long, default_value_t = 20)]
    pub bins: usize,
    /// Defaults to score_hist.csv in the run directory.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct DotHistArgs {
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long, value_enum, default_value = "all")]
    pub pairs: PairsArg,
    /// Number of windows sampled.
    #[arg(long, default_value_t = 200)]
    pub samples: usize,
    #[arg(long, default_value_t = 20)]
    pub bins: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// CSV destination; printed to standard output when absent.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct CSweepArgs {
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long, value_delimiter = ',', default_value = "0.1,1,10,100")]
    pub cs: Vec<f64>,
    #[arg(long, default_value_t = 10)]
    pub iters: usize,
    #[arg(long, value_enum, default_value = "f")]
    pub channels: Channels,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub threads: Option<usize>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct ReportArgs {
    /// Run directories.
    #[arg(required = true)]
    pub runs: Vec<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct ReplayArgs {
    /// A run_manifest.json written by an earlier command.
    pub manifest: PathBuf,
    /// Replaces the recorded output location.
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub threads: Option<usize>,
}
