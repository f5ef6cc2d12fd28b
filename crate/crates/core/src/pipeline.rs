//! The stages wired together: discover over a log source, then classify the
//! same source against the resulting graph.

use crate::classification::{
    emit_report, AggregateStats, Aggregator, Bucketing, ClassifiedCount, ClassifyError, CountingPolicy, ReportMeta,
};
use crate::derivation_graph::{
    compute_distances, run_discovery_from, DerivationGraph, DiscoveryOutcome, DistanceMap, GraphError,
    DEFAULT_MIN_EVIDENCE, DEFAULT_MIN_HOLDERS,
};
use crate::ingestion::{ScanStats, TransferScan};

pub const DEFAULT_MAX_DEPTH: u32 = 8;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct DiscoveryParams {
    pub max_depth: u32,
    pub min_evidence: u64,
    pub min_holders: u64,
}

impl Default for DiscoveryParams {
    fn default() -> Self {
        DiscoveryParams {
            max_depth: DEFAULT_MAX_DEPTH,
            min_evidence: DEFAULT_MIN_EVIDENCE,
            min_holders: DEFAULT_MIN_HOLDERS,
        }
    }
}

pub fn discover<S: TransferScan + ?Sized>(
    source: &S,
    seed: DerivationGraph,
    params: &DiscoveryParams,
) -> Result<DiscoveryOutcome, GraphError> {
    run_discovery_from(source, seed, params.max_depth, params.min_evidence, params.min_holders)
}

/// Aggregates every transfer of `source`.
pub fn classify<S: TransferScan + ?Sized>(
    source: &S,
    distances: &DistanceMap,
    policy: CountingPolicy,
    bucketing: &Bucketing,
) -> Result<(ClassifiedCount, AggregateStats, ScanStats), ClassifyError> {
    let mut agg = Aggregator::new(distances, policy, bucketing);
    let scan = source.scan_transactions::<ClassifyError>(&mut |_, events| {
        for e in events {
            agg.push(e)?;
        }
        Ok(())
    })?;
    let (counts, stats) = agg.finish();
    Ok((counts, stats, scan))
}

/// Header lines that identify the graph a report was computed against.
pub fn report_meta(graph: &DerivationGraph) -> ReportMeta {
    ReportMeta {
        graph_checksum: Some(graph.structure_checksum()),
        extra: vec![("graph_edges".into(), graph.edge_count().to_string())],
    }
}

/// A full report as text.
pub fn render_report(
    counts: &ClassifiedCount,
    graph: &DerivationGraph,
    policy: &CountingPolicy,
    bucketing: &Bucketing,
) -> Result<String, ClassifyError> {
    let mut out = Vec::new();
    emit_report(counts, bucketing, policy, graph.roots(), &report_meta(graph), &mut out)?;
    Ok(String::from_utf8(out).expect("report is ASCII"))
}

/// Discovery followed by classification, as one call.
pub fn run<S: TransferScan + ?Sized>(
    source: &S,
    seed: DerivationGraph,
    params: &DiscoveryParams,
    policy: CountingPolicy,
    bucketing: &Bucketing,
) -> Result<(DiscoveryOutcome, ClassifiedCount), ClassifyError> {
    let outcome = discover(source, seed, params).map_err(|e| match e {
        GraphError::Scan(e) => ClassifyError::Scan(e),
        other => ClassifyError::Bucketing(other.to_string()),
    })?;
    let distances = compute_distances(&outcome.graph);
    let (counts, _, _) = classify(source, &distances, policy, bucketing)?;
    Ok((outcome, counts))
}
