use std::fmt;
use std::path::{Path, PathBuf};
use std::time::Duration;

use clap::Args;
use composability_core::classification::{
    Bucketing, CountMode, CountingPolicy, MonthCalendar, DEFAULT_BUCKET_BLOCKS,
};
use composability_core::ingestion::{BlockRange, RetryPolicy, DEFAULT_SEGMENT_BLOCKS, RPC_URL_ENV};
use composability_core::pipeline::DiscoveryParams;
use serde::Deserialize;

use crate::{CliError, Exit};

pub const CONFIG_ENV: &str = "COMPOSABILITY_CONFIG";
pub const DEFAULT_CACHE_DIR: &str = "composability-cache";

/// Settings shared by every pipeline command. Each one resolves from its
/// flag, then its environment variable, then the config file, then the
/// built-in default.
#[derive(Args, Debug, Default, Clone)]
pub struct ConfigArgs {
    /// TOML file with any of the settings below, using underscores.
    #[arg(long, env = CONFIG_ENV)]
    pub config: Option<PathBuf>,
    /// JSON-RPC endpoint for `fetch`.
    #[arg(long, env = RPC_URL_ENV)]
    pub endpoint: Option<String>,
    #[arg(long, env = "COMPOSABILITY_CACHE_DIR")]
    pub cache_dir: Option<PathBuf>,
    /// Roots file: `root_id,token,initial_distance`.
    #[arg(long, env = "COMPOSABILITY_ROOTS")]
    pub roots: Option<PathBuf>,
    /// Registry of wrapping edges.
    #[arg(long, env = "COMPOSABILITY_REGISTRY")]
    pub registry: Option<PathBuf>,
    #[arg(long)]
    pub from_block: Option<u64>,
    #[arg(long)]
    pub to_block: Option<u64>,
    /// `event` or `tx`.
    #[arg(long, value_parser = parse_mode)]
    pub count_mode: Option<CountMode>,
    /// `true` or `false`.
    #[arg(long, action = clap::ArgAction::Set)]
    pub include_mint_burn: Option<bool>,
    #[arg(long)]
    pub bucket_blocks: Option<u64>,
    /// `block_number,unix_timestamp` file; buckets become UTC calendar months.
    #[arg(long)]
    pub timestamps: Option<PathBuf>,
    #[arg(long)]
    pub max_depth: Option<u32>,
    #[arg(long)]
    pub min_evidence: Option<u64>,
    #[arg(long)]
    pub min_holders: Option<u64>,
    #[arg(long)]
    pub segment_blocks: Option<u64>,
    /// Segments fetched concurrently.
    #[arg(long)]
    pub workers: Option<usize>,
    #[arg(long)]
    pub retry_attempts: Option<u32>,
    #[arg(long)]
    pub retry_initial_ms: Option<u64>,
}

fn parse_mode(s: &str) -> Result<CountMode, String> {
    s.parse()
}

#[derive(Deserialize, Debug, Default)]
#[serde(deny_unknown_fields)]
struct FileConfig {
    endpoint: Option<String>,
    cache_dir: Option<PathBuf>,
    roots: Option<PathBuf>,
    registry: Option<PathBuf>,
    from_block: Option<u64>,
    to_block: Option<u64>,
    count_mode: Option<String>,
    include_mint_burn: Option<bool>,
    bucket_blocks: Option<u64>,
    timestamps: Option<PathBuf>,
    max_depth: Option<u32>,
    min_evidence: Option<u64>,
    min_holders: Option<u64>,
    segment_blocks: Option<u64>,
    workers: Option<usize>,
    retry_attempts: Option<u32>,
    retry_initial_ms: Option<u64>,
}

impl FileConfig {
    /// Relative paths in a config file are relative to the file itself.
    fn rebase(&mut self, base: &Path) {
        for p in [&mut self.cache_dir, &mut self.roots, &mut self.registry, &mut self.timestamps]
            .into_iter()
            .flatten()
        {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        }
    }
}

#[derive(Debug, Clone)]
pub struct RunConfig {
    pub endpoint: Option<String>,
    pub cache_dir: PathBuf,
    pub roots_path: Option<PathBuf>,
    pub registry_path: Option<PathBuf>,
    pub from_block: Option<u64>,
    pub to_block: Option<u64>,
    pub policy: CountingPolicy,
    pub bucket_blocks: u64,
    pub timestamps: Option<PathBuf>,
    pub discovery: DiscoveryParams,
    pub segment_blocks: u64,
    pub workers: usize,
    pub retry: RetryPolicy,
}

impl RunConfig {
    pub fn resolve(args: &ConfigArgs) -> Result<RunConfig, CliError> {
        let file = match &args.config {
            Some(path) => {
                let text = std::fs::read_to_string(path).map_err(|e| {
                    CliError::new(Exit::MissingInput, format!("config file {}: {e}", path.display()))
                })?;
                let mut file = toml::from_str::<FileConfig>(&text).map_err(|e| {
                    CliError::new(Exit::Usage, format!("config file {}: {e}", path.display()))
                })?;
                file.rebase(path.parent().unwrap_or(Path::new("")));
                file
            }
            None => FileConfig::default(),
        };
        let file_mode = file
            .count_mode
            .as_deref()
            .map(str::parse::<CountMode>)
            .transpose()
            .map_err(|e| CliError::new(Exit::Usage, format!("config file: {e}")))?;
        let defaults = DiscoveryParams::default();
        let retry_defaults = RetryPolicy::default();
        let cfg = RunConfig {
            endpoint: args.endpoint.clone().or(file.endpoint),
            cache_dir: args
                .cache_dir
                .clone()
                .or(file.cache_dir)
                .unwrap_or_else(|| PathBuf::from(DEFAULT_CACHE_DIR)),
            roots_path: args.roots.clone().or(file.roots),
            registry_path: args.registry.clone().or(file.registry),
            from_block: args.from_block.or(file.from_block),
            to_block: args.to_block.or(file.to_block),
            policy: CountingPolicy {
                mode: args.count_mode.or(file_mode).unwrap_or(CountMode::EventLevel),
                include_mint_burn: args.include_mint_burn.or(file.include_mint_burn).unwrap_or(true),
            },
            bucket_blocks: args
                .bucket_blocks
                .or(file.bucket_blocks)
                .unwrap_or(DEFAULT_BUCKET_BLOCKS),
            timestamps: args.timestamps.clone().or(file.timestamps),
            discovery: DiscoveryParams {
                max_depth: args.max_depth.or(file.max_depth).unwrap_or(defaults.max_depth),
                min_evidence: args.min_evidence.or(file.min_evidence).unwrap_or(defaults.min_evidence),
                min_holders: args.min_holders.or(file.min_holders).unwrap_or(defaults.min_holders),
            },
            segment_blocks: args
                .segment_blocks
                .or(file.segment_blocks)
                .unwrap_or(DEFAULT_SEGMENT_BLOCKS),
            workers: args.workers.or(file.workers).unwrap_or(1).max(1),
            retry: RetryPolicy {
                max_attempts: args
                    .retry_attempts
                    .or(file.retry_attempts)
                    .unwrap_or(retry_defaults.max_attempts)
                    .max(1),
                initial_delay: args
                    .retry_initial_ms
                    .or(file.retry_initial_ms)
                    .map(Duration::from_millis)
                    .unwrap_or(retry_defaults.initial_delay),
                factor: retry_defaults.factor,
            },
        };
        if cfg.bucket_blocks == 0 || cfg.segment_blocks == 0 {
            return Err(CliError::new(Exit::Usage, "bucket_blocks and segment_blocks must be at least 1"));
        }
        Ok(cfg)
    }

    pub fn range(&self) -> Result<BlockRange, CliError> {
        match (self.from_block, self.to_block) {
            (Some(from), Some(to)) => {
                BlockRange::new(from, to).map_err(|e| CliError::new(Exit::Usage, e.to_string()))
            }
            _ => Err(CliError::new(
                Exit::Usage,
                "a block range is required: set --from-block and --to-block",
            )),
        }
    }

    pub fn bucketing(&self) -> Result<Bucketing, CliError> {
        let range = self.range()?;
        let bucketing = match &self.timestamps {
            Some(path) => {
                let calendar = MonthCalendar::load(path).map_err(|e| match e {
                    composability_core::classification::ClassifyError::Io(io) => {
                        CliError::new(Exit::MissingInput, format!("timestamps {}: {io}", path.display()))
                    }
                    other => CliError::new(Exit::MissingInput, other.to_string()),
                })?;
                Bucketing::months(range, calendar)
            }
            None => Bucketing::fixed(range, self.bucket_blocks),
        };
        bucketing.map_err(|e| CliError::new(Exit::Usage, e.to_string()))
    }

    pub fn require_path<'a>(&self, path: &'a Option<PathBuf>, what: &str) -> Result<&'a Path, CliError> {
        path.as_deref()
            .ok_or_else(|| CliError::new(Exit::MissingInput, format!("no {what} given")))
    }
}

/// `scheme://host` of an endpoint; paths and query strings often carry keys.
fn redact(url: &str) -> String {
    match url.split_once("://") {
        Some((scheme, rest)) => {
            let host = rest.split(['/', '?']).next().unwrap_or("");
            let host = host.rsplit('@').next().unwrap_or(host);
            format!("{scheme}://{host}/…")
        }
        None => "<set>".into(),
    }
}

fn show(path: &Option<PathBuf>) -> String {
    path.as_ref()
        .map_or_else(|| "<unset>".into(), |p| p.display().to_string())
}

fn show_num(v: Option<u64>) -> String {
    v.map_or_else(|| "<unset>".into(), |v| v.to_string())
}

impl fmt::Display for RunConfig {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "resolved configuration:")?;
        writeln!(
            f,
            "  endpoint = {}",
            self.endpoint.as_deref().map_or_else(|| "<unset>".into(), redact)
        )?;
        writeln!(f, "  cache_dir = {}", self.cache_dir.display())?;
        writeln!(f, "  roots = {}", show(&self.roots_path))?;
        writeln!(f, "  registry = {}", show(&self.registry_path))?;
        writeln!(f, "  from_block = {}", show_num(self.from_block))?;
        writeln!(f, "  to_block = {}", show_num(self.to_block))?;
        writeln!(f, "  count_mode = {}", self.policy.mode.as_str())?;
        writeln!(f, "  include_mint_burn = {}", self.policy.include_mint_burn)?;
        writeln!(f, "  bucket_blocks = {}", self.bucket_blocks)?;
        writeln!(f, "  timestamps = {}", show(&self.timestamps))?;
        writeln!(f, "  max_depth = {}", self.discovery.max_depth)?;
        writeln!(f, "  min_evidence = {}", self.discovery.min_evidence)?;
        writeln!(f, "  min_holders = {}", self.discovery.min_holders)?;
        writeln!(f, "  segment_blocks = {}", self.segment_blocks)?;
        writeln!(f, "  workers = {}", self.workers)?;
        writeln!(f, "  retry_attempts = {}", self.retry.max_attempts)?;
        write!(f, "  retry_initial_ms = {}", self.retry.initial_delay.as_millis())
    }
}
