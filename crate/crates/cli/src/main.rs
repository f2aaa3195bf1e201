mod commands;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use rmnp::error::Error;
use rmnp::modality::Modality;

/// Multi-modal bot detection with calibrated uncertainty.
#[derive(Parser, Debug)]
#[command(name = "rmnp", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Generate a synthetic dataset directory.
    Synth(SynthArgs),
    /// Train a model and write its checkpoint, epoch log and test metrics.
    Train(TrainArgs),
    /// Evaluate a checkpoint on a dataset split.
    Eval(EvalArgs),
    /// Copy a dataset with forged human-to-bot edges added.
    Perturb(PerturbArgs),
    /// Entropy histograms per dataset and a forward-pass timing table.
    Report(ReportArgs),
}

#[derive(Args, Debug)]
pub struct SynthArgs {
    #[arg(long, default_value_t = 1000)]
    pub n: usize,
    #[arg(long = "bot-frac", default_value_t = 0.3)]
    pub bot_frac: f64,
    /// Class separation per modality: metadata,text,graph.
    #[arg(long, value_delimiter = ',', default_value = "4,4,4")]
    pub sep: Vec<f64>,
    #[arg(long, default_value_t = 0.9)]
    pub homophily: f64,
    #[arg(long = "d-text", default_value_t = 32)]
    pub d_text: usize,
    #[arg(long = "mean-degree", default_value_t = 4.0)]
    pub mean_degree: f64,
    /// Fraction of bots whose camouflaged modality looks human.
    #[arg(long, default_value_t = 0.0)]
    pub camouflage: f64,
    #[arg(long = "camouflage-modality", default_value = "text")]
    pub camouflage_modality: Modality,
    /// Per-coordinate translation of all class means, in noise standard deviations.
    #[arg(long, default_value_t = 0.0)]
    pub shift: f64,
    #[arg(long = "world-seed", default_value_t = 0)]
    pub world_seed: u64,
    #[arg(long, default_value_t = 7)]
    pub seed: u64,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args, Debug)]
pub struct TrainArgs {
    #[arg(long)]
    pub data: PathBuf,
    /// Output directory.
    #[arg(long)]
    pub out: PathBuf,
    /// Repeatable: no_ucd, no_ccr, mlp_gating, poe_uniform.
    #[arg(long)]
    pub ablate: Vec<String>,
    /// gpoe_evidential, poe_uniform or gpoe_mlp.
    #[arg(long)]
    pub fusion: Option<String>,
    #[arg(long)]
    pub lambda1: Option<f64>,
    #[arg(long)]
    pub lambda2: Option<f64>,
    #[arg(long)]
    pub tau: Option<f64>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub batch: Option<usize>,
    #[arg(long)]
    pub lr: Option<f64>,
    #[arg(long = "weight-decay")]
    pub weight_decay: Option<f64>,
    #[arg(long = "z-samples")]
    pub z_samples: Option<usize>,
    #[arg(long = "d-hidden")]
    pub d_hidden: Option<usize>,
    #[arg(long = "n-context")]
    pub n_context: Option<usize>,
    #[arg(long)]
    pub layers: Option<usize>,
    /// Decode with the mean logits instead of sampling them.
    #[arg(long = "mean-logits")]
    pub mean_logits: bool,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Print every epoch record to stderr.
    #[arg(long)]
    pub verbose: bool,
}

#[derive(Args, Debug)]
pub struct EvalArgs {
    #[arg(long)]
    pub model: PathBuf,
    #[arg(long)]
    pub data: PathBuf,
    /// train, val, test or all.
    #[arg(long, default_value = "test")]
    pub split: String,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Metrics CSV path; stdout when omitted.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Also write one row per account to this CSV.
    #[arg(long = "per-account")]
    pub per_account: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct PerturbArgs {
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    pub proportion: f64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args, Debug)]
pub struct ReportArgs {
    #[arg(long)]
    pub model: PathBuf,
    /// Repeatable; one histogram per dataset.
    #[arg(long, required = true)]
    pub data: Vec<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long = "batch-sizes", value_delimiter = ',', default_value = "256,512,1024,2048")]
    pub batch_sizes: Vec<usize>,
    #[arg(long, default_value_t = 5)]
    pub repetitions: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

/// Failure of a command, mapped to the process exit code.
#[derive(Debug)]
pub enum Failure {
    Usage(String),
    Numerical(String),
}

impl Failure {
    fn code(&self) -> u8 {
        match self {
            Failure::Usage(_) => 2,
            Failure::Numerical(_) => 3,
        }
    }
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        match e {
            Error::NonFinite { .. } | Error::Domain(_) => Failure::Numerical(e.to_string()),
            other => Failure::Usage(other.to_string()),
        }
    }
}

impl std::fmt::Display for Failure {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Failure::Usage(m) | Failure::Numerical(m) => f.write_str(m),
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    if let Ok(v) = std::env::var("RMNP_THREADS") {
        let limited = v
            .trim()
            .parse::<usize>()
            .map_err(|e| e.to_string())
            .and_then(rmnp::par::limit_threads);
        if let Err(e) = limited {
            eprintln!("error: RMNP_THREADS={v}: {e}");
            return ExitCode::from(2);
        }
    }
    let result = match cli.command {
        Command::Synth(a) => commands::synth(&a),
        Command::Train(a) => commands::train(&a),
        Command::Eval(a) => commands::eval(&a),
        Command::Perturb(a) => commands::perturb(&a),
        Command::Report(a) => commands::report(&a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {f}");
            ExitCode::from(f.code())
        }
    }
}
