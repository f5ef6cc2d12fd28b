use std::fs;
use std::io::{BufWriter, Write};
use std::path::Path;

use composability_core::classification::{parse_report, ClassifiedCount, ClassifyError, CountMode, CountingPolicy};
use composability_core::derivation_graph::{
    compute_distances, load_registry, load_roots, write_registry, write_roots, DerivationGraph, GraphError,
};
use composability_core::ingestion::{
    fetch_into_cache, replay_file, write_cache, write_log_lines, BlockRange, CachedRange, FetchOptions, IngestError,
    JsonRpcProvider, LogCache,
};
use composability_core::pipeline::{self, render_report};
use composability_core::synthetic_chain::{generate, ScenarioSpec, SynthError};

use crate::{ClassifyArgs, CliError, DiscoverArgs, Exit, FetchArgs, RunConfig, SynthArgs};

fn io_error(path: &Path, e: &std::io::Error) -> CliError {
    let code = if e.kind() == std::io::ErrorKind::NotFound {
        Exit::MissingInput
    } else {
        Exit::Failure
    };
    CliError::new(code, format!("{}: {e}", path.display()))
}

fn ingest(e: IngestError) -> CliError {
    let code = match &e {
        IngestError::Io { source, .. } if source.kind() == std::io::ErrorKind::NotFound => Exit::MissingInput,
        IngestError::Io { .. } => Exit::Failure,
        IngestError::Parse { .. }
        | IngestError::Order(_)
        | IngestError::OutOfRange { .. }
        | IngestError::Corrupt(_) => Exit::Corrupt,
        IngestError::InvalidRange { .. } | IngestError::NearHead { .. } => Exit::Usage,
        IngestError::Locked(_) => Exit::Locked,
        IngestError::NetworkExhausted { .. }
        | IngestError::ProviderLimit { .. }
        | IngestError::MalformedResponse(_) => Exit::Network,
    };
    CliError::new(code, e.to_string())
}

fn graph(e: GraphError) -> CliError {
    match e {
        GraphError::Scan(e) => ingest(e),
        GraphError::Io { path, source } => io_error(&path, &source),
        other => CliError::new(Exit::MissingInput, other.to_string()),
    }
}

fn classify_err(e: ClassifyError) -> CliError {
    match e {
        ClassifyError::Scan(e) => ingest(e),
        ClassifyError::Parse { .. } => CliError::new(Exit::MissingInput, e.to_string()),
        other => CliError::new(Exit::Failure, other.to_string()),
    }
}

fn synth_err(e: SynthError) -> CliError {
    match e {
        SynthError::Io(e) => CliError::new(Exit::MissingInput, e.to_string()),
        other => CliError::new(Exit::Infeasible, other.to_string()),
    }
}

fn write_file(path: &Path, write: impl FnOnce(&mut BufWriter<fs::File>) -> std::io::Result<()>) -> Result<(), CliError> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| io_error(dir, &e))?;
    }
    let file = fs::File::create(path).map_err(|e| io_error(path, &e))?;
    let mut out = BufWriter::new(file);
    write(&mut out)
        .and_then(|_| out.flush())
        .map_err(|e| io_error(path, &e))
}

/// Opens the cache and checks it holds every block of `range` intact.
fn covered_cache(cfg: &RunConfig, range: &BlockRange) -> Result<LogCache, CliError> {
    if !cfg.cache_dir.is_dir() {
        return Err(CliError::new(
            Exit::MissingInput,
            format!("no cache at {}; run fetch first", cfg.cache_dir.display()),
        ));
    }
    let cache = LogCache::open(&cfg.cache_dir).map_err(ingest)?;
    if let Some(gap) = cache.coverage_gap(range) {
        return Err(CliError::new(
            Exit::MissingInput,
            format!("cache {} is missing blocks {gap}; run fetch first", cfg.cache_dir.display()),
        ));
    }
    cache.verify().map_err(ingest)?;
    Ok(cache)
}

fn load_graph(cfg: &RunConfig, require_registry: bool) -> Result<DerivationGraph, CliError> {
    let roots = load_roots(cfg.require_path(&cfg.roots_path, "roots file (--roots)")?).map_err(graph)?;
    match &cfg.registry_path {
        Some(path) => load_registry(path, roots).map_err(graph),
        None if require_registry => Err(CliError::new(Exit::MissingInput, "no registry given (--registry)")),
        None => DerivationGraph::roots_only(roots).map_err(graph),
    }
}

pub fn fetch(a: FetchArgs) -> Result<(), CliError> {
    let cfg = RunConfig::resolve(&a.config)?;
    eprintln!("{cfg}");
    let range = cfg.range()?;
    let mut cache = LogCache::open(&cfg.cache_dir).map_err(ingest)?;
    let _lock = cache.lock().map_err(ingest)?;
    cache.verify().map_err(ingest)?;
    let before = cache.segments().count();

    match &a.from_file {
        Some(path) => {
            let logs = replay_file(path)
                .map_err(ingest)?
                .filter(|r| r.as_ref().map_or(true, |l| range.contains(l.position.block_number)));
            let checkpoint = write_cache(logs, &cfg.cache_dir, range, cfg.segment_blocks).map_err(ingest)?;
            println!(
                "imported {}: {} new segments; cache holds {} records through block {}",
                path.display(),
                checkpoint.segments.len() - before,
                checkpoint.total_records(),
                checkpoint.last_complete_block.map_or_else(|| "-".into(), |b| b.to_string()),
            );
        }
        None => {
            let url = cfg.endpoint.as_deref().ok_or_else(|| {
                CliError::new(Exit::MissingInput, "no endpoint: set --endpoint or COMPOSABILITY_RPC_URL")
            })?;
            let provider = JsonRpcProvider::new(url);
            let options = FetchOptions {
                segment_blocks: cfg.segment_blocks,
                token_filter: None,
                retry: cfg.retry,
                allow_near_head: a.allow_near_head,
                workers: cfg.workers,
            };
            let summary = fetch_into_cache(&provider, &mut cache, range, &options).map_err(ingest)?;
            println!(
                "fetched {} new segments ({} records) with {} requests, {} retries, {} range splits; cache through block {}",
                summary.new_segments,
                summary.new_records,
                summary.stats.requests,
                summary.stats.retries,
                summary.stats.splits,
                summary
                    .checkpoint
                    .last_complete_block
                    .map_or_else(|| "-".into(), |b| b.to_string()),
            );
        }
    }
    Ok(())
}

pub fn discover(a: DiscoverArgs) -> Result<(), CliError> {
    let cfg = RunConfig::resolve(&a.config)?;
    eprintln!("{cfg}");
    let range = cfg.range()?;
    let seed = load_graph(&cfg, false)?;
    let cache = covered_cache(&cfg, &range)?;
    let outcome = pipeline::discover(&CachedRange { cache: &cache, range }, seed, &cfg.discovery).map_err(graph)?;
    for it in &outcome.iterations {
        println!(
            "iteration {}: {} edges admitted over {} transactions",
            it.iteration,
            it.admitted.len(),
            it.scan.transactions
        );
    }
    write_file(&a.out, |out| write_registry(&outcome.graph, out, true))?;
    println!(
        "wrote {} edges to {} (checksum {})",
        outcome.graph.edge_count(),
        a.out.display(),
        outcome.graph.structure_checksum()
    );
    Ok(())
}

pub fn classify(a: ClassifyArgs, merge_only: bool) -> Result<(), CliError> {
    let cfg = RunConfig::resolve(&a.config)?;
    eprintln!("{cfg}");
    let bucketing = cfg.bucketing()?;
    let graph = load_graph(&cfg, true)?;
    let policy = cfg.policy;

    let counts = if a.counts_in.is_empty() {
        if merge_only {
            return Err(CliError::new(Exit::Usage, "report needs at least one --counts-in file"));
        }
        let range = cfg.range()?;
        let cache = covered_cache(&cfg, &range)?;
        let distances = compute_distances(&graph);
        let (counts, stats, scan) =
            pipeline::classify(&CachedRange { cache: &cache, range }, &distances, policy, &bucketing)
                .map_err(classify_err)?;
        println!(
            "{} transfers in {} transactions; {} involve a tracked token, {} mint or burn; {} malformed logs skipped",
            stats.events, stats.transactions, stats.tracked_events, stats.zero_address_events, scan.malformed
        );
        counts
    } else {
        merge_reports(&a.counts_in, &graph, &policy, &bucketing.to_string())?
    };

    if counts.is_empty() {
        return Err(CliError::new(
            Exit::NoClassifiedEvents,
            "no transfer of a root or derived token fell in the range; nothing to report",
        ));
    }
    let text = render_report(&counts, &graph, &policy, &bucketing).map_err(classify_err)?;
    write_file(&a.out, |out| out.write_all(text.as_bytes()))?;
    println!("wrote {} count cells to {}", counts.len(), a.out.display());
    Ok(())
}

fn merge_reports(
    paths: &[std::path::PathBuf],
    graph: &DerivationGraph,
    policy: &CountingPolicy,
    bucketing: &str,
) -> Result<ClassifiedCount, CliError> {
    let checksum = graph.structure_checksum().to_string();
    let want = [("policy", policy.to_string()), ("bucketing", bucketing.to_string()), ("graph_checksum", checksum)];
    let mut merged = ClassifiedCount::new();
    for path in paths {
        let text = fs::read_to_string(path).map_err(|e| io_error(path, &e))?;
        let parsed = parse_report(&path.display().to_string(), &text).map_err(classify_err)?;
        for (key, value) in &want {
            let got = parsed.header_value(key).unwrap_or("<missing>");
            if got != value {
                return Err(CliError::new(
                    Exit::MissingInput,
                    format!("{}: {key} is {got:?}, expected {value:?}", path.display()),
                ));
            }
        }
        merged.merge(&parsed.counts);
    }
    Ok(merged)
}

pub fn synth(a: SynthArgs) -> Result<(), CliError> {
    let spec = ScenarioSpec::load(&a.scenario).map_err(|e| match e {
        SynthError::Io(e) => io_error(&a.scenario, &e),
        other => synth_err(other),
    })?;
    let scenario = generate(&spec).map_err(synth_err)?;
    let out = &a.out;
    fs::create_dir_all(out).map_err(|e| io_error(out, &e))?;

    let logs = scenario.logs();
    write_file(&out.join("logs.tsv"), |w| write_log_lines(w, &logs).map(|_| ()))?;
    write_file(&out.join("roots.csv"), |w| write_roots(&scenario.roots, w))?;
    write_file(&out.join("registry.csv"), |w| write_registry(&scenario.truth.graph, w, true))?;
    for (mode, name) in [(CountMode::EventLevel, "report.csv"), (CountMode::TransactionLevel, "report.tx.csv")] {
        let policy = CountingPolicy {
            mode,
            include_mint_burn: true,
        };
        let text = render_report(scenario.truth.counts_for(&policy), &scenario.truth.graph, &policy, &scenario.bucketing)
            .map_err(classify_err)?;
        write_file(&out.join(name), |w| w.write_all(text.as_bytes()))?;
    }
    write_file(&out.join("config.toml"), |w| {
        writeln!(w, "from_block = {}", spec.from_block)?;
        writeln!(w, "to_block = {}", spec.to_block)?;
        writeln!(w, "bucket_blocks = {}", spec.bucket_blocks)?;
        writeln!(w, "roots = \"roots.csv\"")?;
        writeln!(w, "cache_dir = \"cache\"")
    })?;
    println!(
        "{} transfers in {} transactions over blocks {}..={} ({} buckets); {} planted edges; written to {}",
        logs.len(),
        scenario.transactions.len(),
        spec.from_block,
        spec.to_block,
        scenario.bucketing.bucket_count(),
        scenario.truth.graph.edge_count(),
        out.display()
    );
    Ok(())
}
