mod commands;
mod io;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

#[derive(Parser, Debug)]
#[command(name = "hfpc", version, about = "Health factor for process control on wafermaps")]
pub struct Cli {
    /// Root seed for every random stream.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// JSON config for the subcommand; flags override its fields.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    #[arg(short, long, global = true)]
    pub verbose: bool,
    /// Worker threads (falls back to HFPC_JOBS, then all cores).
    #[arg(long, global = true)]
    pub jobs: Option<usize>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Generate a synthetic wafermap corpus.
    Synth(SynthArgs),
    /// Extract LBP/RLBP/HOG features for a dataset.
    Features(FeaturesArgs),
    /// Train a pattern classifier.
    Train(TrainArgs),
    /// Evaluate a trained classifier on labelled features.
    Eval(EvalArgs),
    /// Repeated balanced-split classifier benchmark.
    Bench(BenchArgs),
    /// Score every wafermap of a dataset with one intensity indicator.
    Score(ScoreArgs),
    /// Health reports for every wafermap of a dataset.
    Hf(HfArgs),
    /// Health-factor threshold sweep.
    Sweep(SweepArgs),
    /// Error-rate bounds under Beta criticality.
    Bounds(BoundsArgs),
    /// Compare intensity indicators across graded groups.
    IntensityStudy(StudyArgs),
}

#[derive(Args, Debug)]
pub struct SynthArgs {
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub per_type: Option<usize>,
    /// Comma-separated pattern types.
    #[arg(long, value_delimiter = ',')]
    pub types: Option<Vec<String>>,
    #[arg(long)]
    pub intensity: Option<f64>,
    #[arg(long, alias = "noise")]
    pub noise_sigma: Option<f64>,
    #[arg(long)]
    pub width: Option<usize>,
    #[arg(long)]
    pub height: Option<usize>,
    /// Pattern types labelled critical in the manifest.
    #[arg(long, value_delimiter = ',')]
    pub critical: Option<Vec<String>>,
    /// Graded corpus instead: weak,mediocre,strong counts (one type only).
    #[arg(long, value_delimiter = ',')]
    pub study: Option<Vec<usize>>,
}

#[derive(Args, Debug)]
pub struct FeaturesArgs {
    #[arg(long)]
    pub dataset: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args, Debug)]
pub struct TrainArgs {
    #[arg(long, default_value = "rf")]
    pub kind: String,
    #[arg(long)]
    pub features: PathBuf,
    /// Defaults to the dataset recorded in the features run manifest.
    #[arg(long)]
    pub manifest: Option<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args, Debug)]
pub struct EvalArgs {
    #[arg(long)]
    pub model: PathBuf,
    #[arg(long)]
    pub features: PathBuf,
    /// Dataset manifest with the labels; defaults to the one recorded in the
    /// run manifest of the features file.
    #[arg(long)]
    pub manifest: Option<PathBuf>,
    #[arg(long)]
    pub report: PathBuf,
    #[arg(long, default_value_t = 0.0)]
    pub beta: f64,
    #[arg(long, default_value_t = 0.05)]
    pub xi: f64,
}

#[derive(Args, Debug)]
pub struct BenchArgs {
    #[arg(long)]
    pub dataset: PathBuf,
    #[arg(long, value_delimiter = ',', default_value = "nb,rf,svml,lr")]
    pub kinds: Vec<String>,
    #[arg(long)]
    pub runs: Option<usize>,
    #[arg(long)]
    pub train: Option<usize>,
    #[arg(long)]
    pub test: Option<usize>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args, Debug)]
pub struct ScoreArgs {
    /// moran (alias hf), yfail, dpat, lof or iso.
    #[arg(long, default_value = "moran")]
    pub method: String,
    #[arg(long)]
    pub dataset: PathBuf,
    #[arg(long, allow_hyphen_values = true)]
    pub spec_lo: Option<f64>,
    #[arg(long, allow_hyphen_values = true)]
    pub spec_hi: Option<f64>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args, Debug)]
pub struct HfArgs {
    #[arg(long)]
    pub model: PathBuf,
    #[arg(long, alias = "crit")]
    pub criticality: PathBuf,
    #[arg(long)]
    pub tau: f64,
    #[arg(long)]
    pub dataset: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args, Debug)]
pub struct SweepArgs {
    #[arg(long)]
    pub dataset: PathBuf,
    #[arg(long, default_value = "rf")]
    pub clf: String,
    #[arg(long, alias = "criticality")]
    pub crit: PathBuf,
    /// `A:B:STEP` or a comma list.
    #[arg(long)]
    pub taus: Option<String>,
    #[arg(long)]
    pub runs: Option<usize>,
    #[arg(long)]
    pub train: Option<usize>,
    #[arg(long)]
    pub test: Option<usize>,
    #[arg(long)]
    pub tau_ref: Option<f64>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args, Debug)]
pub struct BoundsArgs {
    #[arg(long)]
    pub confusion: PathBuf,
    #[arg(long, value_delimiter = ',')]
    pub alpha: Vec<f64>,
    #[arg(long, default_value = "0:1:0.01")]
    pub taus: String,
    #[arg(long, default_value_t = 100_000)]
    pub samples: usize,
    /// Indices of critical ground-truth classes (overrides the file).
    #[arg(long, value_delimiter = ',')]
    pub critical: Option<Vec<usize>>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args, Debug)]
pub struct StudyArgs {
    #[arg(long)]
    pub dataset: PathBuf,
    #[arg(long, value_delimiter = ',', default_value = "hf,dpat,yfail,lof,iso")]
    pub methods: Vec<String>,
    #[arg(long, allow_hyphen_values = true)]
    pub spec_lo: Option<f64>,
    #[arg(long, allow_hyphen_values = true)]
    pub spec_hi: Option<f64>,
    #[arg(long)]
    pub out: PathBuf,
}

fn main() -> ExitCode {
    // clap exits with status 2 on usage errors
    let cli = Cli::parse();
    let jobs = cli
        .jobs
        .or_else(|| std::env::var("HFPC_JOBS").ok().and_then(|v| v.parse().ok()))
        .filter(|&n| n > 0);
    if let Some(n) = jobs {
        let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
    }
    match commands::run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error[{}]: {e}", e.name());
            ExitCode::from(1)
        }
    }
}
