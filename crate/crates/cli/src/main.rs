//! `ktune`: ahead-of-time kernel autotuning from the command line.
//!
//! Exit codes: 0 success, 1 hard error, 2 partial (some shape had no viable
//! configuration, or a check failed softly), 3 not found, 64 usage error.

mod analyze;
mod cache_cmd;
mod exit;
mod inputs;
mod report_cmd;
mod runner_check;
mod space_cmd;
mod synth_runner;
mod tune;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

use exit::{CmdResult, USAGE};

#[derive(Parser, Debug)]
#[command(name = "ktune", version, about = "Autotune JIT-compiled GPU kernels")]
struct Cli {
    /// Log filter, e.g. `info` or `ktune_core=debug`.
    #[arg(long, global = true, default_value = "warn", value_name = "LEVEL")]
    log_level: String,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Tune every shape, consulting the cache first.
    Tune(Box<TuneArgs>),
    /// Inspect a configuration space file.
    #[command(subcommand)]
    Space(SpaceCmd),
    /// Manage the result cache.
    Cache(CacheArgs),
    /// Count unique mnemonics and instructions in assembly listings.
    AnalyzeAsm(AsmArgs),
    /// Check that a runner speaks the wire protocol.
    RunnerCheck(RunnerCheckArgs),
    /// Normalization, relative-performance and transfer reports.
    #[command(subcommand)]
    Report(ReportCmd),
    /// Serve the wire protocol from a synthetic cost profile.
    #[command(hide = true)]
    SynthRunner(SynthRunnerArgs),
}

#[derive(Copy, Clone, Debug, PartialEq, Eq, ValueEnum)]
pub enum StrategyKind {
    Exhaustive,
    Random,
    Halving,
}

#[derive(Args, Debug, Default)]
pub struct TuneArgs {
    /// JSON run manifest; flags given alongside override its fields.
    #[arg(long)]
    pub manifest: Option<PathBuf>,
    #[arg(long)]
    pub space: Option<PathBuf>,
    /// Shape such as `seq_len=512,batch=4`; repeatable.
    #[arg(long = "shape")]
    pub shapes: Vec<String>,
    /// File with one shape per line.
    #[arg(long = "shapes")]
    pub shapes_file: Option<PathBuf>,
    /// Synthetic cost profile evaluated in-process.
    #[arg(long)]
    pub synthetic: Option<PathBuf>,
    /// Runner command line; repeat with --parallel-runners to fan out.
    #[arg(long = "runner")]
    pub runners: Vec<String>,
    #[arg(long)]
    pub parallel_runners: bool,
    #[arg(long, value_enum)]
    pub strategy: Option<StrategyKind>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Number of configurations for the random strategy.
    #[arg(long)]
    pub samples: Option<usize>,
    #[arg(long)]
    pub initial_fraction: Option<f64>,
    #[arg(long)]
    pub keep_fraction: Option<f64>,
    #[arg(long)]
    pub rounds: Option<usize>,
    #[arg(long, value_delimiter = ',')]
    pub reps_schedule: Option<Vec<u32>>,
    #[arg(long)]
    pub max_evals: Option<u64>,
    #[arg(long)]
    pub max_wall_ms: Option<f64>,
    #[arg(long)]
    pub warmups: Option<u32>,
    #[arg(long)]
    pub reps: Option<u32>,
    #[arg(long)]
    pub timeout_ms: Option<u64>,
    #[arg(long, default_value_t = 10_000)]
    pub handshake_timeout_ms: u64,
    #[arg(long, env = "KTUNE_CACHE_DIR")]
    pub cache_dir: Option<PathBuf>,
    /// Directory receiving one `.result.json` per shape.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Re-tune even on a cache hit and overwrite the stored entry.
    #[arg(long)]
    pub force: bool,
    /// One JSON summary object per shape on stdout.
    #[arg(long)]
    pub json: bool,
}

#[derive(Subcommand, Debug)]
pub enum SpaceCmd {
    /// Validate and print the digest.
    Check {
        file: PathBuf,
        #[arg(long)]
        json: bool,
    },
    /// Print raw and valid cardinalities.
    Count {
        file: PathBuf,
        #[arg(long)]
        json: bool,
    },
    /// Stream valid configurations as JSON lines.
    Enumerate {
        file: PathBuf,
        #[arg(long)]
        limit: Option<usize>,
    },
}

#[derive(Args, Debug)]
pub struct CacheArgs {
    #[arg(long, env = "KTUNE_CACHE_DIR", global = true)]
    pub cache_dir: Option<PathBuf>,
    #[command(subcommand)]
    pub command: CacheCmd,
}

#[derive(Subcommand, Debug)]
pub enum CacheCmd {
    List {
        #[arg(long)]
        json: bool,
    },
    /// Print one entry; the key may be a unique prefix.
    Show {
        key: String,
    },
    Invalidate {
        key: String,
    },
    /// Write a bundle of the given keys, or of every entry.
    Export {
        keys: Vec<String>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    Import {
        bundle: PathBuf,
    },
}

#[derive(Args, Debug)]
pub struct AsmArgs {
    /// `.ptx`, `.s` or `.asm` files, or directories containing them.
    #[arg(required = true)]
    pub inputs: Vec<PathBuf>,
    /// Source id of the autotuner's choice.
    #[arg(long)]
    pub best: Option<String>,
    /// Where `diversity.csv` and `diversity.json` are written.
    #[arg(long, default_value = ".")]
    pub out_dir: PathBuf,
    #[arg(long)]
    pub json: bool,
}

#[derive(Args, Debug)]
pub struct RunnerCheckArgs {
    /// Runner command line.
    #[arg(
        long,
        conflicts_with = "synthetic",
        required_unless_present = "synthetic"
    )]
    pub runner: Option<String>,
    /// Check the built-in synthetic runner serving this profile.
    #[arg(long)]
    pub synthetic: Option<PathBuf>,
    /// Space whose first valid configuration is the probe.
    #[arg(long)]
    pub space: PathBuf,
    #[arg(long, default_value = "n=1024")]
    pub shape: String,
    #[arg(long, default_value_t = 10_000)]
    pub timeout_ms: u64,
    #[arg(long)]
    pub json: bool,
}

#[derive(Subcommand, Debug)]
pub enum ReportCmd {
    /// Divide latencies by the baseline's leftmost value per group.
    Normalize {
        input: PathBuf,
        #[arg(long)]
        baseline: String,
        /// Shape dimension on the x axis; may be omitted for one-dimension tables.
        #[arg(long)]
        x_key: Option<String>,
        #[arg(long, value_enum, default_value_t = AnchorArg::PerGroup)]
        anchor: AnchorArg,
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        json: bool,
    },
    /// Sorted per-shape ratios baseline/candidate with a summary.
    Cdf {
        #[arg(long)]
        baseline: PathBuf,
        candidate: PathBuf,
        /// Implementation to take from the baseline file when it holds several.
        #[arg(long)]
        baseline_impl: Option<String>,
        #[arg(long)]
        candidate_impl: Option<String>,
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        json: bool,
    },
    /// Measure one platform's best configurations on another.
    Transfer {
        /// Result files, bundles or directories from the source platform.
        #[arg(long, required = true, num_args = 1..)]
        from: Vec<PathBuf>,
        /// Native results on the target platform.
        #[arg(long, required = true, num_args = 1..)]
        to: Vec<PathBuf>,
        #[arg(long)]
        space: PathBuf,
        #[arg(
            long,
            conflicts_with = "synthetic",
            required_unless_present = "synthetic"
        )]
        runner: Option<String>,
        #[arg(long)]
        synthetic: Option<PathBuf>,
        /// Restrict to these shapes; defaults to every source shape.
        #[arg(long = "shape")]
        shapes: Vec<String>,
        #[arg(long)]
        warmups: Option<u32>,
        #[arg(long)]
        reps: Option<u32>,
        #[arg(long)]
        timeout_ms: Option<u64>,
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        json: bool,
    },
}

#[derive(Copy, Clone, Debug, PartialEq, Eq, ValueEnum)]
pub enum AnchorArg {
    PerGroup,
    Global,
}

#[derive(Args, Debug)]
pub struct SynthRunnerArgs {
    #[arg(long)]
    pub profile: PathBuf,
    #[arg(long)]
    pub space: PathBuf,
    /// garbled, garbled-hello, version, silence, hello-silence, error,
    /// bad-reps, bad-shutdown, die-after=N, transient-rate=X.
    #[arg(long = "fault")]
    pub faults: Vec<String>,
    /// Directory remembering which requests already had a transient fault.
    #[arg(long)]
    pub fault_state: Option<PathBuf>,
}

fn run(cli: Cli) -> CmdResult {
    match cli.command {
        Command::Tune(args) => tune::run(*args),
        Command::Space(cmd) => space_cmd::run(cmd),
        Command::Cache(args) => cache_cmd::run(args),
        Command::AnalyzeAsm(args) => analyze::run(args),
        Command::RunnerCheck(args) => runner_check::run(args),
        Command::Report(cmd) => report_cmd::run(cmd),
        Command::SynthRunner(args) => synth_runner::run(args),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            use clap::error::ErrorKind;
            let code = match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => 0,
                _ => USAGE,
            };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    env_logger::Builder::new()
        .parse_filters(&cli.log_level)
        .format_timestamp(None)
        .init();
    match run(cli) {
        Ok(code) => ExitCode::from(code),
        Err(f) => {
            eprintln!("error: {:#}", f.error);
            ExitCode::from(f.code)
        }
    }
}
