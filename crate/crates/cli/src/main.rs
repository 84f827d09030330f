//! `mmft` — operator entry point for the multi-modal forecaster.
//!
//! Exit codes: 0 on success; 1 when a verification command ran to
//! completion but the property failed (gradcheck, converge-check);
//! 2 for configuration/parameter problems; 3 for data problems
//! (missing or malformed files); 4 for numeric failures (non-finite
//! losses, violated internal contracts).

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use mmft_core::Error;

mod commands;

#[derive(Parser)]
#[command(name = "mmft", version, about = "Multi-modal market forecaster: data, training, evaluation, diagnostics")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Generate a synthetic market dataset with a planted ground-truth ledger.
    Gen(GenArgs),
    /// Train the model and write a checkpoint plus loss history.
    Train(TrainArgs),
    /// Score a trained checkpoint on a held-out split.
    Evaluate(EvaluateArgs),
    /// Retrain with each channel removed and tabulate the damage.
    Ablate(AblateArgs),
    /// Quantify per-event counterfactual impact with a trained model.
    Impact(ImpactArgs),
    /// Verify the q-linear convergence bound on the diagnostic quadratic.
    ConvergeCheck(ConvergeArgs),
    /// Run the finite-difference gradient suites.
    Gradcheck(GradcheckArgs),
    /// Time encoder forward passes across input lengths (informational).
    Bench(BenchArgs),
}

/// Flags shared by every command that reads a run configuration.
#[derive(Args)]
struct ConfigOpts {
    /// JSON run configuration; built-in defaults apply when omitted.
    #[arg(long, value_name = "FILE")]
    config: Option<PathBuf>,
    /// Override one config key (repeatable), e.g. --set epochs=40.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    set: Vec<String>,
    /// Random seed override.
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Args)]
struct GenArgs {
    /// JSON generator spec; built-in defaults apply when omitted.
    #[arg(long, value_name = "FILE")]
    config: Option<PathBuf>,
    /// Override one generator key (repeatable), e.g. --set n_days=500.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    set: Vec<String>,
    /// Random seed override.
    #[arg(long)]
    seed: Option<u64>,
    /// Directory the dataset files are written to.
    #[arg(long, value_name = "DIR")]
    out_dir: PathBuf,
}

#[derive(Args)]
struct TrainArgs {
    #[command(flatten)]
    config: ConfigOpts,
    /// Directory holding prices.csv, macro.csv, docs.jsonl, events.json.
    #[arg(long, value_name = "DIR")]
    data_dir: PathBuf,
    /// Directory for the checkpoint and training reports.
    #[arg(long, value_name = "DIR")]
    out_dir: PathBuf,
}

#[derive(Args)]
struct EvaluateArgs {
    #[command(flatten)]
    config: ConfigOpts,
    #[arg(long, value_name = "DIR")]
    data_dir: PathBuf,
    #[arg(long, value_name = "DIR")]
    out_dir: PathBuf,
    /// Checkpoint written by `mmft train`.
    #[arg(long, value_name = "FILE")]
    checkpoint: PathBuf,
    /// Which held-out split to score: val or test.
    #[arg(long, default_value = "test")]
    split: String,
}

#[derive(Args)]
struct AblateArgs {
    #[command(flatten)]
    config: ConfigOpts,
    #[arg(long, value_name = "DIR")]
    data_dir: PathBuf,
    #[arg(long, value_name = "DIR")]
    out_dir: PathBuf,
}

#[derive(Args)]
struct ImpactArgs {
    #[command(flatten)]
    config: ConfigOpts,
    #[arg(long, value_name = "DIR")]
    data_dir: PathBuf,
    #[arg(long, value_name = "DIR")]
    out_dir: PathBuf,
    /// Checkpoint written by `mmft train`.
    #[arg(long, value_name = "FILE")]
    checkpoint: PathBuf,
    /// Post-event measurement window, in trading days.
    #[arg(long, default_value_t = 63)]
    horizon: usize,
}

#[derive(Args)]
struct ConvergeArgs {
    /// Strong-convexity constant μ.
    #[arg(long, default_value_t = 1.0)]
    mu: f64,
    /// Gradient Lipschitz constant L.
    #[arg(long, default_value_t = 3.0)]
    l: f64,
    /// Step size η; must satisfy 0 < η ≤ 2/(μ+L).
    #[arg(long, default_value_t = 0.5)]
    eta: f64,
    #[arg(long, default_value_t = 200)]
    steps: usize,
}

#[derive(Args)]
struct GradcheckArgs {
    /// "all" or one suite name (see --help output of a failed run).
    #[arg(long, default_value = "all")]
    scope: String,
    /// Random instances per operation.
    #[arg(long, default_value_t = 10)]
    instances: usize,
    #[arg(long, default_value_t = 42)]
    seed: u64,
}

#[derive(Args)]
struct BenchArgs {
    /// Comma-separated sequence lengths, e.g. 64,128,256.
    #[arg(long, default_value = "64,128,256")]
    sizes: String,
    /// Also write bench.csv here.
    #[arg(long, value_name = "DIR")]
    out_dir: Option<PathBuf>,
}

/// Exit class for an error: configuration, data, or numeric.
fn exit_class(e: &Error) -> u8 {
    match e {
        Error::Config(_) | Error::Param { .. } => 2,
        Error::Input(_) | Error::Parse { .. } | Error::Io { .. } => 3,
        _ => 4,
    }
}

fn main() -> ExitCode {
    // Die quietly when the reader closes the pipe (e.g. `mmft ... | head`)
    // instead of panicking on the next write to stdout.
    #[cfg(unix)]
    unsafe {
        libc::signal(libc::SIGPIPE, libc::SIG_DFL);
    }
    let cli = Cli::parse();
    let run = match cli.cmd {
        Cmd::Gen(a) => commands::gen(a),
        Cmd::Train(a) => commands::train(a),
        Cmd::Evaluate(a) => commands::evaluate(a),
        Cmd::Ablate(a) => commands::ablate(a),
        Cmd::Impact(a) => commands::impact(a),
        Cmd::ConvergeCheck(a) => commands::converge_check(a),
        Cmd::Gradcheck(a) => commands::gradcheck(a),
        Cmd::Bench(a) => commands::bench(a),
    };
    match run {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_class(&e))
        }
    }
}
