mod commands;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{ArgAction, Args, Parser, Subcommand};
use speedlab_core::engines::{AccountingMode, EngineKind};
use speedlab_core::stats::analysis::Analysis;
use speedlab_core::transport::CongestionAlgo;
use speedlab_core::Direction;

#[derive(Debug, Parser)]
#[command(
    name = "speedlab",
    version,
    about = "Speed-test engines over simulated and real links, with paired-test statistics"
)]
pub struct Cli {
    /// Log more (-v info, -vv debug)
    #[arg(short, long, action = ArgAction::Count, global = true)]
    pub verbose: u8,
    /// Seed for simulated runs, overriding any config
    #[arg(long, global = true, env = "SPEEDLAB_SEED")]
    pub seed: Option<u64>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Run a measurement server until terminated
    Serve {
        /// Address to listen on, e.g. 0.0.0.0:9000
        #[arg(long, value_name = "ADDR:PORT")]
        listen: String,
    },
    /// Run one speed test against a measurement server
    Test(TestArgs),
    /// Run an experiment grid on the simulated link
    Matrix {
        /// Experiment JSON file, or the name of a canned config
        #[arg(long, value_name = "PATH|NAME")]
        config: String,
        /// Output directory (created if absent)
        #[arg(long, value_name = "DIR")]
        out: PathBuf,
        /// Override the number of repetitions per cell
        #[arg(long)]
        reps: Option<usize>,
    },
    /// Run back-to-back paired tests on one simulated link
    Paired(PairedArgs),
    /// Generate synthetic household test histories with known ground truth
    Generate(GenerateArgs),
    /// Run a statistical analysis over a test-result CSV
    Analyze(AnalyzeArgs),
    /// List or run the canned figure experiments
    Figures {
        #[command(subcommand)]
        action: FiguresCommand,
    },
}

#[derive(Debug, Args)]
pub struct TestArgs {
    /// Server address
    #[arg(long, value_name = "ADDR:PORT")]
    pub server: String,
    /// Engine: single | adaptive
    #[arg(long, default_value = "single")]
    pub engine: EngineKind,
    /// Direction: down | up
    #[arg(long, default_value = "down")]
    pub direction: Direction,
    /// Upload byte counter: app | acked
    #[arg(long, default_value = "acked")]
    pub accounting: AccountingMode,
    /// Write the full report as JSON to this file
    #[arg(long, value_name = "FILE")]
    pub out: Option<PathBuf>,
    /// Connect timeout in seconds
    #[arg(long, default_value_t = 5.0)]
    pub connect_timeout_s: f64,
}

#[derive(Debug, Args)]
pub struct PairedArgs {
    /// Output directory (created if absent)
    #[arg(long, value_name = "DIR")]
    pub out: PathBuf,
    #[arg(long, default_value_t = 100.0)]
    pub capacity_mbps: f64,
    #[arg(long, default_value_t = 10.0)]
    pub rtt_ms: f64,
    /// Random loss probability in [0, 1)
    #[arg(long, default_value_t = 0.0)]
    pub loss: f64,
    /// Congestion control: bbr | cubic
    #[arg(long, default_value = "bbr")]
    pub cca: CongestionAlgo,
    /// Persistent background flows on the link
    #[arg(long, default_value_t = 0)]
    pub cross: usize,
    /// Direction: down | up
    #[arg(long, default_value = "down")]
    pub direction: Direction,
    /// Upload byte counter: app | acked
    #[arg(long, default_value = "acked")]
    pub accounting: AccountingMode,
    /// Idle seconds between the two tests of a pair
    #[arg(long, default_value_t = 5.0)]
    pub gap_s: f64,
    /// Engine that runs first: adaptive | single
    #[arg(long, default_value = "adaptive")]
    pub first: EngineKind,
    /// Number of pairs
    #[arg(long, default_value_t = 10)]
    pub reps: usize,
    /// Household id written to the output
    #[arg(long, default_value = "sim")]
    pub household: String,
}

#[derive(Debug, Args)]
pub struct GenerateArgs {
    /// Output directory (created if absent)
    #[arg(long, value_name = "DIR")]
    pub out: PathBuf,
    /// Generator JSON config; flags below override it
    #[arg(long, value_name = "FILE")]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub households: Option<usize>,
    /// Households whose single-stream path is congested at peak hours
    #[arg(long)]
    pub degraded: Option<usize>,
    #[arg(long)]
    pub days: Option<u32>,
    /// Index of a server that under-performs
    #[arg(long)]
    pub slow_server: Option<usize>,
}

#[derive(Debug, Args)]
pub struct AnalyzeArgs {
    /// Test-result CSV (external or matrix layout)
    #[arg(long, value_name = "FILE")]
    pub input: PathBuf,
    /// paired-ttest | reldiff-classes | server-rank | time-of-day | consistency
    #[arg(long)]
    pub analysis: Analysis,
    /// Output directory (created if absent)
    #[arg(long, value_name = "DIR")]
    pub out: PathBuf,
    /// Local UTC offset applied to every timestamp, e.g. -05:00
    #[arg(long, value_name = "OFFSET", allow_hyphen_values = true)]
    pub tz: Option<String>,
    /// Significance level
    #[arg(long, default_value_t = 0.01)]
    pub alpha: f64,
    /// Longest gap in seconds between two tests that form a pair
    #[arg(long, default_value_t = 600.0)]
    pub pair_gap_s: f64,
    /// Tests a server needs in a household to be ranked
    #[arg(long, default_value_t = 10)]
    pub min_server_tests: usize,
    /// Tests each of the peak and off-peak groups needs
    #[arg(long, default_value_t = 30)]
    pub min_group_tests: usize,
    /// Tool whose servers are ranked: adaptive | single
    #[arg(long, default_value = "adaptive")]
    pub rank_tool: EngineKind,
}

#[derive(Debug, Subcommand)]
pub enum FiguresCommand {
    /// List the canned figure experiments
    List,
    /// Run canned experiments and write CSV, gnuplot data and scripts
    Run {
        /// Figure names; all of them if omitted
        names: Vec<String>,
        /// Output directory (created if absent)
        #[arg(long, value_name = "DIR")]
        out: PathBuf,
        /// Override the number of repetitions per cell
        #[arg(long)]
        reps: Option<usize>,
    },
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.exit_code() == 0 {
                ExitCode::SUCCESS
            } else {
                ExitCode::from(1)
            };
        }
    };
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    match commands::run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.code())
        }
    }
}
