use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

use attn_edit::directions::{CombinedVariant, DEFAULT_TOP_K};
use attn_edit::io::Dtype;
use attn_edit::schedule::{DEFAULT_TOTAL_STEPS, DEFAULT_T_HIGH_FRAC, DEFAULT_T_LOW_FRAC};

mod commands;
mod error;

#[derive(Debug, Parser)]
#[command(name = "attn-edit", version, about = "Editing directions from self-attention weights")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Write the leading eigen-directions of one layer's combined matrix.
    Extract(ExtractArgs),
    /// Check the first-order sensitivity model numerically on one layer.
    Validate(ValidateArgs),
    /// Report how close latents are to the whitening assumptions.
    WhitenReport(WhitenArgs),
    /// Apply a direction to latents under timestep gating.
    Edit(EditArgs),
    /// Tabulate edit magnitude and predicted sensitivity over an alpha sweep.
    SweepSeries(SweepSeriesArgs),
    /// Generate synthetic weight containers or whitened latent files.
    #[command(subcommand)]
    Synth(SynthCommand),
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum VariantArg {
    Final,
    Eqc,
}

impl From<VariantArg> for CombinedVariant {
    fn from(v: VariantArg) -> Self {
        match v {
            VariantArg::Final => CombinedVariant::FinalExpr,
            VariantArg::Eqc => CombinedVariant::EqC,
        }
    }
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum DtypeArg {
    F32,
    F64,
}

impl From<DtypeArg> for Dtype {
    fn from(d: DtypeArg) -> Self {
        match d {
            DtypeArg::F32 => Dtype::F32,
            DtypeArg::F64 => Dtype::F64,
        }
    }
}

#[derive(Debug, Args)]
pub struct ExtractArgs {
    #[arg(long)]
    pub weights: PathBuf,
    #[arg(long)]
    pub layer: String,
    #[arg(long, default_value_t = DEFAULT_TOP_K)]
    pub top_k: usize,
    #[arg(long, value_enum, default_value = "final")]
    pub variant: VariantArg,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct ValidateArgs {
    #[arg(long)]
    pub weights: PathBuf,
    #[arg(long)]
    pub layer: String,
    #[arg(long, default_value_t = 1e-3)]
    pub alpha: f64,
    /// Whitened latent samples per Monte-Carlo estimate.
    #[arg(long, default_value_t = 256)]
    pub samples: usize,
    #[arg(long, default_value_t = 32)]
    pub tokens: usize,
    /// Random directions for the variant audit.
    #[arg(long, default_value_t = 200)]
    pub directions: usize,
    #[arg(long, default_value_t = 7)]
    pub seed: u64,
    /// Print the report as JSON.
    #[arg(long)]
    pub json: bool,
}

#[derive(Debug, Args)]
pub struct WhitenArgs {
    #[arg(long)]
    pub latents: PathBuf,
    #[arg(long)]
    pub weights: PathBuf,
    #[arg(long)]
    pub layer: String,
    #[arg(long, default_value_t = 0)]
    pub rank: usize,
    #[arg(long, default_value_t = 1e-3)]
    pub alpha: f64,
    #[arg(long, value_enum, default_value = "final")]
    pub variant: VariantArg,
    #[arg(long)]
    pub json: bool,
}

#[derive(Debug, Args)]
pub struct ScheduleArgs {
    #[arg(long, default_value_t = DEFAULT_T_LOW_FRAC)]
    pub t_low: f64,
    #[arg(long, default_value_t = DEFAULT_T_HIGH_FRAC)]
    pub t_high: f64,
    /// Defaults to the latent file's header value.
    #[arg(long)]
    pub total_steps: Option<u32>,
}

#[derive(Debug, Args)]
pub struct EditArgs {
    #[arg(long)]
    pub latents: PathBuf,
    #[arg(long)]
    pub directions: PathBuf,
    #[arg(long, default_value_t = 0)]
    pub rank: usize,
    /// Edit strength; ignored when --sweep-points is given.
    #[arg(long, allow_hyphen_values = true, required_unless_present = "sweep_points")]
    pub alpha: Option<f64>,
    #[command(flatten)]
    pub schedule: ScheduleArgs,
    /// Write one edited file per point of an even alpha grid.
    #[arg(long)]
    pub sweep_points: Option<usize>,
    #[arg(long, default_value_t = -0.4, allow_hyphen_values = true)]
    pub alpha_min: f64,
    #[arg(long, default_value_t = 0.4, allow_hyphen_values = true)]
    pub alpha_max: f64,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct SweepSeriesArgs {
    #[arg(long)]
    pub latents: PathBuf,
    #[arg(long)]
    pub directions: PathBuf,
    #[arg(long, default_value_t = 0)]
    pub rank: usize,
    /// Index of the latent sample to sweep.
    #[arg(long, default_value_t = 0)]
    pub sample: usize,
    #[arg(long, default_value_t = -0.4, allow_hyphen_values = true)]
    pub alpha_min: f64,
    #[arg(long, default_value_t = 0.4, allow_hyphen_values = true)]
    pub alpha_max: f64,
    #[arg(long, default_value_t = 9)]
    pub points: usize,
    #[command(flatten)]
    pub schedule: ScheduleArgs,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Subcommand)]
pub enum SynthCommand {
    /// Gaussian projections with N(0, 1/d) entries.
    Weights {
        #[arg(long)]
        d: usize,
        #[arg(long, default_value = "layer0")]
        layer: String,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, value_enum, default_value = "f64")]
        dtype: DtypeArg,
        #[arg(long)]
        out: PathBuf,
    },
    /// Whitened Gaussian token samples, timesteps spread over 0..T.
    Latents {
        #[arg(long)]
        samples: usize,
        #[arg(long)]
        tokens: usize,
        #[arg(long)]
        d: usize,
        #[arg(long, default_value_t = DEFAULT_TOTAL_STEPS)]
        total_steps: u32,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, value_enum, default_value = "f64")]
        dtype: DtypeArg,
        #[arg(long)]
        out: PathBuf,
    },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Extract(a) => commands::extract(&a),
        Command::Validate(a) => commands::validate(&a),
        Command::WhitenReport(a) => commands::whiten_report(&a),
        Command::Edit(a) => commands::edit(&a),
        Command::SweepSeries(a) => commands::sweep_series(&a),
        Command::Synth(s) => commands::synth(&s),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("{e}");
            e.exit_code()
        }
    }
}
