//! `flurka` command-line driver. Every subcommand writes CSV to stdout or
//! `--out`.
//!
//! Exit codes: 0 success, 1 failed assertion, 2 usage or configuration
//! error, 3 numeric overflow.

mod commands;
mod output;
mod sweep;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

use crate::sweep::Sweep;

#[derive(Debug, Parser)]
#[command(
    name = "flurka",
    version,
    about = "Fused low-rank and kernel attention experiments"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Time forward passes of attention variants over a configuration sweep.
    Bench(BenchArgs),
    /// Analytic FLOP counts and regime predicates.
    Costmodel(CostArgs),
    /// Numerical rank of kernelized attention matrices.
    Rank(RankArgs),
    /// Decomposed approximation error of the fused mechanism.
    Errbound(ErrArgs),
    /// Compare analytic gradients against central differences.
    Gradcheck(GradArgs),
    /// Train a one-layer model on the synthetic neighbourhood-mean task.
    Train(TrainArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum VariantArg {
    Full,
    Lowrank,
    Kernel,
    Flurka,
    FlurkaNaive,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum KernelArg {
    Prf,
    Elu,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum KernelChoice {
    Prf,
    Elu,
    Both,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum ProjArg {
    Practical,
    Theorem,
    Identity,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum BaseArg {
    Lowrank,
    Kernel,
}

#[derive(Debug, Args)]
struct OutArgs {
    /// Write CSV here instead of stdout.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct BenchArgs {
    /// Variants to time; comma separated.
    #[arg(long, value_enum, value_delimiter = ',', required = true)]
    variant: Vec<VariantArg>,
    #[arg(long, value_enum, default_value = "prf")]
    kernel: KernelArg,
    /// PRF feature count; defaults to d_h.
    #[arg(long)]
    features: Option<usize>,
    #[arg(long)]
    n: Sweep,
    /// Must equal heads * dh when given.
    #[arg(long)]
    dm: Option<Sweep>,
    #[arg(long)]
    dk: Sweep,
    #[arg(long)]
    dh: Sweep,
    #[arg(long)]
    heads: Sweep,
    #[arg(long, default_value_t = 30)]
    reps: usize,
    #[arg(long, default_value_t = 5)]
    warmup: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 1.0)]
    input_std: f64,
    #[command(flatten)]
    out: OutArgs,
}

#[derive(Debug, Args)]
struct CostArgs {
    #[arg(long)]
    n: Sweep,
    #[arg(long)]
    dm: Sweep,
    #[arg(long)]
    dk: Sweep,
    #[arg(long)]
    dh: Sweep,
    #[arg(long)]
    heads: Sweep,
    /// Append the smallest N at which the fused count wins.
    #[arg(long)]
    crossover: bool,
    #[arg(long, default_value_t = 100_000, requires = "crossover")]
    n_max: u64,
    #[command(flatten)]
    out: OutArgs,
}

#[derive(Debug, Args)]
struct RankArgs {
    #[arg(long, default_value_t = 128)]
    n: usize,
    /// Feature dimension. For the ELU map this is the head width.
    #[arg(long, default_value_t = 64)]
    dp: usize,
    /// Head width; defaults to dp.
    #[arg(long)]
    dh: Option<usize>,
    #[arg(long, default_value_t = 6)]
    heads: usize,
    #[arg(long, default_value_t = 12)]
    layers: usize,
    #[arg(long, value_enum, default_value = "prf")]
    kernel: KernelArg,
    /// `machine`, `rel:<factor>` or `abs:<value>`.
    #[arg(long, default_value = "machine")]
    tol: String,
    #[arg(long, default_value_t = 1.0)]
    input_std: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[command(flatten)]
    out: OutArgs,
}

#[derive(Debug, Args)]
struct ErrArgs {
    #[arg(long, default_value_t = 64)]
    n: usize,
    /// Defaults to n for identity projections and n/4 otherwise.
    #[arg(long)]
    dk: Option<usize>,
    #[arg(long, default_value_t = 8)]
    dh: usize,
    #[arg(long, default_value_t = 1)]
    heads: usize,
    /// PRF feature count.
    #[arg(long, default_value_t = 64)]
    m: usize,
    #[arg(long, value_enum, default_value = "prf")]
    kernel: KernelArg,
    #[arg(long, value_enum, default_value = "practical")]
    proj: ProjArg,
    #[arg(long, default_value_t = flurka::fusion::DEFAULT_DELTA)]
    delta: f64,
    #[arg(long, default_value_t = 20)]
    trials: usize,
    #[arg(long, default_value_t = 0.5)]
    input_std: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[command(flatten)]
    out: OutArgs,
}

#[derive(Debug, Args)]
struct GradArgs {
    #[arg(long, value_enum, value_delimiter = ',', default_value = "flurka")]
    variant: Vec<VariantArg>,
    #[arg(long, value_enum, default_value = "both")]
    kernel: KernelChoice,
    #[arg(long, default_value_t = 8)]
    features: usize,
    #[arg(long, default_value_t = 5)]
    seeds: u64,
    #[arg(long, default_value_t = 12)]
    n: usize,
    #[arg(long, default_value_t = 4)]
    dk: usize,
    #[arg(long, default_value_t = 4)]
    dh: usize,
    #[arg(long, default_value_t = 2)]
    heads: usize,
    #[command(flatten)]
    out: OutArgs,
}

#[derive(Debug, Args)]
struct TrainArgs {
    #[arg(long, value_enum, default_value = "flurka")]
    variant: VariantArg,
    #[arg(long, value_enum, default_value = "elu")]
    kernel: KernelArg,
    #[arg(long, default_value_t = 16)]
    features: usize,
    #[arg(long, default_value_t = 32)]
    n: usize,
    #[arg(long, default_value_t = 8)]
    dk: usize,
    #[arg(long, default_value_t = 4)]
    dh: usize,
    #[arg(long, default_value_t = 2)]
    heads: usize,
    #[arg(long, default_value_t = 500)]
    steps: usize,
    #[arg(long, default_value_t = 1e-2)]
    lr: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Fraction of steps trained on the base model before transfer.
    #[arg(long, requires = "base")]
    alpha: Option<f64>,
    #[arg(long, value_enum, requires = "alpha")]
    base: Option<BaseArg>,
    #[command(flatten)]
    out: OutArgs,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Bench(a) => commands::bench(a),
        Command::Costmodel(a) => commands::costmodel(a),
        Command::Rank(a) => commands::rank(a),
        Command::Errbound(a) => commands::errbound(a),
        Command::Gradcheck(a) => commands::gradcheck(a),
        Command::Train(a) => commands::train(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("flurka: {}", e.message);
            ExitCode::from(e.code)
        }
    }
}
