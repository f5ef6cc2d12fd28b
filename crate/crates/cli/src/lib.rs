//! The `composability` command line: fetch raw logs into a cache, discover
//! wrapped tokens, classify transfers and emit reports, or generate a
//! synthetic chain with its ground truth.

use std::ffi::OsString;
use std::fmt;
use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};

mod commands;
pub mod config;

pub use config::{ConfigArgs, RunConfig};

/// Process exit codes, one per failure class.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Exit {
    Ok = 0,
    Failure = 1,
    Network = 2,
    Corrupt = 3,
    MissingInput = 4,
    NoClassifiedEvents = 5,
    Infeasible = 6,
    Locked = 7,
    Usage = 64,
}

#[derive(Debug)]
pub struct CliError {
    pub code: Exit,
    pub message: String,
}

impl CliError {
    pub fn new(code: Exit, message: impl Into<String>) -> Self {
        CliError {
            code,
            message: message.into(),
        }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.message)
    }
}

#[derive(Parser, Debug)]
#[command(name = "composability", version, about = "Plain versus composed ERC-20 transfer activity")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Fill the raw-log cache for a block range.
    Fetch(FetchArgs),
    /// Find wrapped tokens by their deposit and redemption traffic.
    Discover(DiscoverArgs),
    /// Count transfers per root, composition distance and bucket.
    Classify(ClassifyArgs),
    /// Merge existing count reports into one.
    Report(ClassifyArgs),
    /// Generate a synthetic chain and its expected results.
    Synth(SynthArgs),
}

#[derive(Args, Debug)]
pub struct FetchArgs {
    #[command(flatten)]
    pub config: ConfigArgs,
    /// Import a raw-log file instead of querying an endpoint.
    #[arg(long)]
    pub from_file: Option<PathBuf>,
    /// Fetch blocks within the reorg safety depth of the head.
    #[arg(long)]
    pub allow_near_head: bool,
}

#[derive(Args, Debug)]
pub struct DiscoverArgs {
    #[command(flatten)]
    pub config: ConfigArgs,
    /// Where to write the discovered registry.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args, Debug)]
pub struct ClassifyArgs {
    #[command(flatten)]
    pub config: ConfigArgs,
    /// Reports to merge instead of scanning the cache.
    #[arg(long = "counts-in")]
    pub counts_in: Vec<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args, Debug)]
pub struct SynthArgs {
    /// Scenario TOML file.
    pub scenario: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
}

/// Parses `args` and runs the command, returning the process exit code.
pub fn run_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { Exit::Usage as i32 } else { Exit::Ok as i32 };
        }
    };
    match run(cli) {
        Ok(()) => Exit::Ok as i32,
        Err(e) => {
            eprintln!("error: {e}");
            e.code as i32
        }
    }
}

pub fn run(cli: Cli) -> Result<(), CliError> {
    match cli.command {
        Command::Fetch(a) => commands::fetch(a),
        Command::Discover(a) => commands::discover(a),
        Command::Classify(a) => commands::classify(a, false),
        Command::Report(a) => commands::classify(a, true),
        Command::Synth(a) => commands::synth(a),
    }
}
