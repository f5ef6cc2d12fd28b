//! Python bindings, imported as `composability`.
//!
//! Addresses and hashes cross the boundary as `0x` hex strings and token
//! amounts as Python ints.

use std::collections::HashMap;
use std::fmt::Display;
use std::path::PathBuf;

use composability_core::chain_model::{self as chain, Address, Amount, LogPosition, Word};
use composability_core::classification::{self as cls, Bucketing, CountKey, CountMode, CountingPolicy};
use composability_core::derivation_graph::{self as dg, compute_distances};
use composability_core::ingestion::{self as ing, BlockRange, CachedRange, LogCache};
use composability_core::pipeline::{self, DiscoveryParams};
use composability_core::synthetic_chain::{self as synth, ScenarioSpec};
use pyo3::create_exception;
use pyo3::exceptions::PyException;
use pyo3::prelude::*;
use pyo3::types::PyInt;

create_exception!(
    composability,
    ComposabilityError,
    PyException,
    "Invalid input, corrupt cache, infeasible scenario or failed fetch."
);

fn err(e: impl Display) -> PyErr {
    ComposabilityError::new_err(e.to_string())
}

fn policy(mode: &str, include_mint_burn: bool) -> PyResult<CountingPolicy> {
    Ok(CountingPolicy {
        mode: mode.parse::<CountMode>().map_err(err)?,
        include_mint_burn,
    })
}

fn address(text: &str) -> PyResult<Address> {
    text.parse().map_err(err)
}

fn range(from_block: u64, to_block: u64) -> PyResult<BlockRange> {
    BlockRange::new(from_block, to_block).map_err(err)
}

fn amount_to_py<'py>(py: Python<'py>, value: &Amount) -> PyResult<Bound<'py, PyAny>> {
    py.get_type::<PyInt>().call1((value.to_string(),))
}

fn amount_from_py(value: &Bound<'_, PyAny>) -> PyResult<Amount> {
    let text = value.cast::<PyInt>()?.str()?.to_string();
    Amount::from_dec_str(&text).map_err(|_| err(format!("{text} is not a uint256")))
}

#[pyfunction]
fn transfer_topic0() -> String {
    chain::transfer_topic0().to_string()
}

#[pyfunction]
fn format_share(numerator: u64, denominator: u64) -> PyResult<String> {
    if denominator == 0 {
        return Err(err("denominator is zero"));
    }
    Ok(cls::format_share(numerator, denominator))
}

/// Decodes one raw-log line; `None` for logs that are not ERC-20 transfers.
#[pyfunction]
fn decode_log_line(line: &str) -> PyResult<Option<TransferEvent>> {
    let log = ing::parse_log_line(line).map_err(err)?;
    Ok(chain::decode_transfer(&log)
        .map_err(err)?
        .map(|inner| TransferEvent { inner }))
}

#[pyclass(frozen, eq, skip_from_py_object, module = "composability")]
#[derive(Clone, PartialEq)]
struct TransferEvent {
    inner: chain::TransferEvent,
}

#[pymethods]
impl TransferEvent {
    #[new]
    fn new(
        token: &str,
        sender: &str,
        recipient: &str,
        value: &Bound<'_, PyAny>,
        block_number: u64,
        tx_hash: &str,
        log_index: u32,
    ) -> PyResult<Self> {
        Ok(TransferEvent {
            inner: chain::TransferEvent {
                token: address(token)?,
                from: address(sender)?,
                to: address(recipient)?,
                value: amount_from_py(value)?,
                position: LogPosition {
                    block_number,
                    tx_hash: tx_hash.parse::<Word>().map_err(err)?,
                    log_index,
                },
            },
        })
    }

    #[getter]
    fn token(&self) -> String {
        self.inner.token.to_string()
    }

    #[getter]
    fn sender(&self) -> String {
        self.inner.from.to_string()
    }

    #[getter]
    fn recipient(&self) -> String {
        self.inner.to.to_string()
    }

    #[getter]
    fn value<'py>(&self, py: Python<'py>) -> PyResult<Bound<'py, PyAny>> {
        amount_to_py(py, &self.inner.value)
    }

    #[getter]
    fn block_number(&self) -> u64 {
        self.inner.position.block_number
    }

    #[getter]
    fn tx_hash(&self) -> String {
        self.inner.position.tx_hash.to_string()
    }

    #[getter]
    fn log_index(&self) -> u32 {
        self.inner.position.log_index
    }

    fn is_mint(&self) -> bool {
        self.inner.is_mint()
    }

    fn is_burn(&self) -> bool {
        self.inner.is_burn()
    }

    /// The event as a raw-log line.
    fn encode_line(&self) -> String {
        ing::format_log_line(&chain::encode_transfer(&self.inner))
    }

    fn __repr__(&self) -> String {
        format!(
            "TransferEvent(token={}, block={}, log_index={}, value={})",
            self.inner.token, self.inner.position.block_number, self.inner.position.log_index, self.inner.value
        )
    }
}

/// Transfer counts keyed by `(root, bucket, delta)`.
#[pyclass(eq, skip_from_py_object, module = "composability")]
#[derive(Clone, Default, PartialEq)]
struct ClassifiedCount {
    inner: cls::ClassifiedCount,
}

#[pymethods]
impl ClassifiedCount {
    #[new]
    fn new() -> Self {
        Self::default()
    }

    #[pyo3(signature = (root, delta, bucket, n = 1))]
    fn add(&mut self, root: &str, delta: u32, bucket: u32, n: u64) {
        self.inner.add(CountKey::new(root, delta, bucket), n);
    }

    fn get(&self, root: &str, delta: u32, bucket: u32) -> u64 {
        self.inner.get(root, delta, bucket)
    }

    fn merge(&mut self, other: PyRef<'_, ClassifiedCount>) {
        self.inner.merge(&other.inner);
    }

    /// `(root, bucket, delta, count)` in report order.
    fn items(&self) -> Vec<(String, u32, u32, u64)> {
        self.inner
            .iter()
            .map(|(k, n)| (k.root.clone(), k.bucket, k.delta, n))
            .collect()
    }

    fn total(&self) -> u64 {
        self.inner.total()
    }

    /// `(composed, total)` for one root and bucket.
    #[pyo3(signature = (root, bucket, initial_distance = 0))]
    fn share_parts(&self, root: &str, bucket: u32, initial_distance: u32) -> (u64, u64) {
        self.inner.share_parts(root, bucket, initial_distance)
    }

    #[pyo3(signature = (root, bucket, initial_distance = 0))]
    fn composed_share(&self, root: &str, bucket: u32, initial_distance: u32) -> PyResult<f64> {
        match self.inner.share_parts(root, bucket, initial_distance) {
            (_, 0) => Err(err(format!("no transfers of {root} in bucket {bucket}"))),
            (c, t) => Ok(c as f64 / t as f64),
        }
    }

    fn __len__(&self) -> usize {
        self.inner.len()
    }

    fn __repr__(&self) -> String {
        format!("ClassifiedCount({} cells, {} transfers)", self.inner.len(), self.inner.total())
    }
}

/// Roots plus wrapping edges.
#[pyclass(frozen, skip_from_py_object, module = "composability")]
#[derive(Clone)]
struct DerivationGraph {
    inner: dg::DerivationGraph,
}

#[pymethods]
impl DerivationGraph {
    #[staticmethod]
    #[pyo3(signature = (roots, registry = None))]
    fn load(roots: PathBuf, registry: Option<PathBuf>) -> PyResult<Self> {
        let roots = dg::load_roots(roots).map_err(err)?;
        let inner = match registry {
            Some(path) => dg::load_registry(path, roots),
            None => dg::DerivationGraph::roots_only(roots),
        }
        .map_err(err)?;
        Ok(DerivationGraph { inner })
    }

    /// `(root_id, member_tokens, initial_distance)`.
    #[getter]
    fn roots(&self) -> Vec<(String, Vec<String>, u32)> {
        self.inner
            .roots()
            .iter()
            .map(|r| {
                (
                    r.root_id.clone(),
                    r.member_tokens.iter().map(ToString::to_string).collect(),
                    r.initial_distance,
                )
            })
            .collect()
    }

    /// `(parent, child, label, evidence_txs, evidence_holders)`.
    #[getter]
    fn edges(&self) -> Vec<(String, String, String, u64, u64)> {
        self.inner
            .edges()
            .map(|e| {
                (
                    e.parent.to_string(),
                    e.child.to_string(),
                    e.label.clone(),
                    e.evidence_tx_count,
                    e.evidence_holder_count,
                )
            })
            .collect()
    }

    #[getter]
    fn edge_count(&self) -> usize {
        self.inner.edge_count()
    }

    #[getter]
    fn checksum(&self) -> String {
        self.inner.structure_checksum().to_string()
    }

    /// `{(root_id, token): delta}` for every token reachable from a root.
    fn distances(&self) -> HashMap<(String, String), u32> {
        compute_distances(&self.inner)
            .entries()
            .into_iter()
            .map(|(root, token, d)| ((root.to_owned(), token.to_string()), d))
            .collect()
    }

    #[pyo3(signature = (path, with_evidence = true))]
    fn write_registry(&self, path: PathBuf, with_evidence: bool) -> PyResult<()> {
        let mut out = Vec::new();
        dg::write_registry(&self.inner, &mut out, with_evidence).map_err(err)?;
        std::fs::write(&path, out).map_err(err)
    }

    fn __repr__(&self) -> String {
        format!(
            "DerivationGraph({} roots, {} edges)",
            self.inner.roots().len(),
            self.inner.edge_count()
        )
    }
}

/// A generated chain with its planted graph and expected counts.
#[pyclass(frozen, module = "composability")]
struct Scenario {
    inner: synth::Scenario,
    spec: ScenarioSpec,
}

impl Scenario {
    fn build(spec: ScenarioSpec) -> PyResult<Self> {
        let inner = synth::generate(&spec).map_err(err)?;
        Ok(Scenario { inner, spec })
    }
}

#[pymethods]
impl Scenario {
    #[staticmethod]
    fn load(path: PathBuf) -> PyResult<Self> {
        Self::build(ScenarioSpec::load(path).map_err(err)?)
    }

    #[staticmethod]
    fn from_toml(text: &str) -> PyResult<Self> {
        Self::build(ScenarioSpec::from_toml(text).map_err(err)?)
    }

    #[getter]
    fn from_block(&self) -> u64 {
        self.spec.from_block
    }

    #[getter]
    fn to_block(&self) -> u64 {
        self.spec.to_block
    }

    #[getter]
    fn bucket_blocks(&self) -> u64 {
        self.spec.bucket_blocks
    }

    #[getter]
    fn bucket_count(&self) -> u32 {
        self.inner.bucketing.bucket_count()
    }

    #[getter]
    fn transaction_count(&self) -> usize {
        self.inner.transactions.len()
    }

    #[getter]
    fn event_count(&self) -> usize {
        self.inner.transactions.iter().map(|t| t.events.len()).sum()
    }

    /// `{address: name}` for root members and planted children.
    #[getter]
    fn token_names(&self) -> HashMap<String, String> {
        self.inner
            .token_names
            .iter()
            .map(|(a, n)| (a.to_string(), n.clone()))
            .collect()
    }

    fn token(&self, name: &str) -> Option<String> {
        self.inner.token(name).map(|a| a.to_string())
    }

    fn events(&self) -> Vec<TransferEvent> {
        self.inner
            .events()
            .into_iter()
            .map(|inner| TransferEvent { inner })
            .collect()
    }

    /// Writes the chain as a raw-log file and returns the number of lines.
    fn write_logs(&self, path: PathBuf) -> PyResult<u64> {
        let mut out = std::io::BufWriter::new(std::fs::File::create(&path).map_err(err)?);
        ing::write_log_lines(&mut out, &self.inner.logs()).map_err(err)
    }

    fn planted_graph(&self) -> DerivationGraph {
        DerivationGraph {
            inner: self.inner.truth.graph.clone(),
        }
    }

    #[pyo3(signature = (mode = "event", include_mint_burn = true))]
    fn truth(&self, mode: &str, include_mint_burn: bool) -> PyResult<ClassifiedCount> {
        Ok(ClassifiedCount {
            inner: self.inner.truth.counts_for(&policy(mode, include_mint_burn)?).clone(),
        })
    }

    /// Discovery over the scenario's logs, starting from its roots.
    #[pyo3(signature = (max_depth = 8, min_evidence = 5, min_holders = 3))]
    fn discover(&self, py: Python<'_>, max_depth: u32, min_evidence: u64, min_holders: u64) -> PyResult<DerivationGraph> {
        let params = DiscoveryParams {
            max_depth,
            min_evidence,
            min_holders,
        };
        let seed = dg::DerivationGraph::roots_only(self.inner.roots.clone()).map_err(err)?;
        let outcome = py
            .detach(|| pipeline::discover(&self.inner.logs(), seed, &params))
            .map_err(err)?;
        Ok(DerivationGraph { inner: outcome.graph })
    }

    #[pyo3(signature = (graph, mode = "event", include_mint_burn = true))]
    fn classify(
        &self,
        py: Python<'_>,
        graph: &DerivationGraph,
        mode: &str,
        include_mint_burn: bool,
    ) -> PyResult<ClassifiedCount> {
        let policy = policy(mode, include_mint_burn)?;
        let distances = compute_distances(&graph.inner);
        let (inner, _, _) = py
            .detach(|| pipeline::classify(&self.inner.logs(), &distances, policy, &self.inner.bucketing))
            .map_err(err)?;
        Ok(ClassifiedCount { inner })
    }

    /// The report text for `counts` over this scenario's buckets.
    #[pyo3(signature = (counts, graph, mode = "event", include_mint_burn = true))]
    fn report(
        &self,
        counts: &ClassifiedCount,
        graph: &DerivationGraph,
        mode: &str,
        include_mint_burn: bool,
    ) -> PyResult<String> {
        let policy = policy(mode, include_mint_burn)?;
        pipeline::render_report(&counts.inner, &graph.inner, &policy, &self.inner.bucketing).map_err(err)
    }

    /// Differences between `counts`/`graph` and the planted truth, one
    /// string each; empty when they agree.
    #[pyo3(signature = (counts, graph, mode = "event", include_mint_burn = true))]
    fn verify(
        &self,
        counts: &ClassifiedCount,
        graph: &DerivationGraph,
        mode: &str,
        include_mint_burn: bool,
    ) -> PyResult<Vec<String>> {
        let policy = policy(mode, include_mint_burn)?;
        let report = synth::verify(&counts.inner, &graph.inner, &self.inner.truth, &policy);
        Ok(report.mismatches.iter().map(ToString::to_string).collect())
    }

    fn __repr__(&self) -> String {
        format!(
            "Scenario(blocks {}..={}, {} events)",
            self.spec.from_block,
            self.spec.to_block,
            self.event_count()
        )
    }
}

fn open_covered(cache_dir: &PathBuf, range: &BlockRange) -> PyResult<LogCache> {
    let cache = LogCache::open(cache_dir).map_err(err)?;
    if let Some(gap) = cache.coverage_gap(range) {
        return Err(err(format!("cache is missing blocks {gap}")));
    }
    cache.verify().map_err(err)?;
    Ok(cache)
}

/// Imports a raw-log file into a cache; returns `(segments, records)` held.
#[pyfunction]
#[pyo3(signature = (log_file, cache_dir, from_block, to_block, segment_blocks = ing::DEFAULT_SEGMENT_BLOCKS))]
fn import_logs(
    py: Python<'_>,
    log_file: PathBuf,
    cache_dir: PathBuf,
    from_block: u64,
    to_block: u64,
    segment_blocks: u64,
) -> PyResult<(usize, u64)> {
    let range = range(from_block, to_block)?;
    py.detach(|| {
        let cache = LogCache::open(&cache_dir)?;
        let _lock = cache.lock()?;
        let logs = ing::replay_file(&log_file)?.filter(|r| r.as_ref().map_or(true, |l| range.contains(l.position.block_number)));
        let cp = ing::write_cache(logs, &cache_dir, range, segment_blocks)?;
        Ok::<_, ing::IngestError>((cp.segments.len(), cp.total_records()))
    })
    .map_err(err)
}

/// Fills a cache from a JSON-RPC endpoint; returns the new segment count.
#[pyfunction]
#[pyo3(signature = (endpoint, cache_dir, from_block, to_block, segment_blocks = ing::DEFAULT_SEGMENT_BLOCKS, workers = 1, allow_near_head = false))]
fn fetch(
    py: Python<'_>,
    endpoint: String,
    cache_dir: PathBuf,
    from_block: u64,
    to_block: u64,
    segment_blocks: u64,
    workers: usize,
    allow_near_head: bool,
) -> PyResult<usize> {
    let range = range(from_block, to_block)?;
    py.detach(|| {
        let mut cache = LogCache::open(&cache_dir)?;
        let _lock = cache.lock()?;
        let provider = ing::JsonRpcProvider::new(endpoint);
        let options = ing::FetchOptions {
            segment_blocks,
            workers: workers.max(1),
            allow_near_head,
            ..ing::FetchOptions::default()
        };
        ing::fetch_into_cache(&provider, &mut cache, range, &options).map(|s| s.new_segments)
    })
    .map_err(err)
}

/// Discovery over a cached block range, starting from `seed`.
#[pyfunction]
#[pyo3(signature = (cache_dir, seed, from_block, to_block, max_depth = 8, min_evidence = 5, min_holders = 3))]
fn discover_cache(
    py: Python<'_>,
    cache_dir: PathBuf,
    seed: &DerivationGraph,
    from_block: u64,
    to_block: u64,
    max_depth: u32,
    min_evidence: u64,
    min_holders: u64,
) -> PyResult<DerivationGraph> {
    let range = range(from_block, to_block)?;
    let cache = open_covered(&cache_dir, &range)?;
    let params = DiscoveryParams {
        max_depth,
        min_evidence,
        min_holders,
    };
    let seed = seed.inner.clone();
    let outcome = py
        .detach(|| pipeline::discover(&CachedRange { cache: &cache, range }, seed, &params))
        .map_err(err)?;
    Ok(DerivationGraph { inner: outcome.graph })
}

/// Counts over a cached block range in fixed block-window buckets.
#[pyfunction]
#[pyo3(signature = (cache_dir, graph, from_block, to_block, mode = "event", include_mint_burn = true, bucket_blocks = cls::DEFAULT_BUCKET_BLOCKS))]
fn classify_cache(
    py: Python<'_>,
    cache_dir: PathBuf,
    graph: &DerivationGraph,
    from_block: u64,
    to_block: u64,
    mode: &str,
    include_mint_burn: bool,
    bucket_blocks: u64,
) -> PyResult<ClassifiedCount> {
    let range = range(from_block, to_block)?;
    let policy = policy(mode, include_mint_burn)?;
    let bucketing = Bucketing::fixed(range, bucket_blocks).map_err(err)?;
    let cache = open_covered(&cache_dir, &range)?;
    let distances = compute_distances(&graph.inner);
    let (inner, _, _) = py
        .detach(|| pipeline::classify(&CachedRange { cache: &cache, range }, &distances, policy, &bucketing))
        .map_err(err)?;
    Ok(ClassifiedCount { inner })
}

#[pymodule]
fn composability(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add("ComposabilityError", m.py().get_type::<ComposabilityError>())?;
    m.add_class::<TransferEvent>()?;
    m.add_class::<ClassifiedCount>()?;
    m.add_class::<DerivationGraph>()?;
    m.add_class::<Scenario>()?;
    m.add_function(wrap_pyfunction!(transfer_topic0, m)?)?;
    m.add_function(wrap_pyfunction!(format_share, m)?)?;
    m.add_function(wrap_pyfunction!(decode_log_line, m)?)?;
    m.add_function(wrap_pyfunction!(import_logs, m)?)?;
    m.add_function(wrap_pyfunction!(fetch, m)?)?;
    m.add_function(wrap_pyfunction!(discover_cache, m)?)?;
    m.add_function(wrap_pyfunction!(classify_cache, m)?)?;
    Ok(())
}
