//! `warpgraph` command-line front end.
//!
//! Exit codes: 0 success, 1 internal error, 2 usage or input error, 3 a check
//! suite failed. Errors are reported on stderr as one JSON object per line.

mod commands;
mod lists;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

#[derive(Parser, Debug)]
#[command(name = "warpgraph", version, about = "Non-rigid RGB-D frame-pair tracking and PCG preconditioner benchmarking")]
struct Cli {
    /// Worker threads (0 = one per core). Outputs do not depend on this.
    #[arg(long, global = true, default_value_t = 0)]
    threads: usize,
    /// Base seed for commands that draw random data.
    #[arg(long, global = true, default_value_t = 0)]
    seed: u64,
    /// Output directory.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Tracker configuration JSON; flags override its fields.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Track a target frame onto a source frame.
    Track(commands::TrackArgs),
    /// Depth-only refinement of an existing graph.
    Refine(commands::RefineArgs),
    /// Benchmark preconditioners over a directory of NRAB systems.
    BenchPcg(commands::BenchArgs),
    /// Generate synthetic scenes with ground truth.
    GenSynth(commands::GenSynthArgs),
    /// Finite-difference checks of every analytic derivative.
    GradCheck(commands::GradCheckArgs),
    /// Score a graph against ground-truth flow.
    Eval(commands::EvalArgs),
    /// Track synthetic scenes and dump every Gauss-Newton system as NRAB.
    DumpSystems(commands::DumpArgs),
}

/// Flags shared by every command.
#[derive(Debug)]
pub struct Global {
    pub seed: u64,
    pub out: Option<PathBuf>,
    pub config: Option<PathBuf>,
}

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error(transparent)]
    Core(#[from] warpgraph::Error),
    #[error("{0}")]
    CheckFailed(String),
    #[error("{0}")]
    Internal(String),
}

impl CliError {
    fn exit_code(&self) -> u8 {
        match self {
            CliError::Usage(_) => 2,
            CliError::Core(e) if e.is_input_error() => 2,
            CliError::Core(_) | CliError::Internal(_) => 1,
            CliError::CheckFailed(_) => 3,
        }
    }

    fn kind(&self) -> &'static str {
        match self.exit_code() {
            2 => "input",
            3 => "check_failed",
            _ => "internal",
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    if cli.threads > 0 {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(cli.threads).build_global() {
            return report(&CliError::Internal(format!("thread pool: {e}")));
        }
    }
    let global = Global { seed: cli.seed, out: cli.out, config: cli.config };
    let result = match cli.command {
        Command::Track(a) => commands::track(&global, a),
        Command::Refine(a) => commands::refine(&global, a),
        Command::BenchPcg(a) => commands::bench_pcg(&global, a),
        Command::GenSynth(a) => commands::gen_synth(&global, a),
        Command::GradCheck(a) => commands::grad_check(&global, a),
        Command::Eval(a) => commands::eval(&global, a),
        Command::DumpSystems(a) => commands::dump_systems(&global, a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => report(&e),
    }
}

fn report(e: &CliError) -> ExitCode {
    let line = serde_json::json!({
        "error": { "kind": e.kind(), "code": e.exit_code(), "message": e.to_string() }
    });
    eprintln!("{line}");
    ExitCode::from(e.exit_code())
}
