//! Wrapped-token discovery from transfer co-occurrence inside transactions.
//!
//! Deposit-mint: holder `H` sends tracked token `T` to contract `C`, and in
//! the same transaction `C` mints its own token to `H`. Burn-redeem is the
//! reverse: `H` burns token `M` and receives tracked token `T` from `M`.
//! Either is one piece of evidence for the wrapping edge `T -> C`.

use std::collections::{BTreeMap, BTreeSet, HashSet};

use super::{DerivationGraph, EdgeOrigin, GraphError, WrapEdge};
use crate::chain_model::{Address, TransferEvent, Word};
use crate::ingestion::{IngestError, ScanStats, TransferScan};

pub const DEFAULT_MIN_EVIDENCE: u64 = 5;
pub const DEFAULT_MIN_HOLDERS: u64 = 3;

#[derive(Clone, Debug, Default, PartialEq, Eq)]
struct PairEvidence {
    transactions: u64,
    holders: BTreeSet<Address>,
}

/// Evidence per candidate edge. Tallies over disjoint transaction sets merge
/// by summing transaction counts and uniting holder sets.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct EvidenceTally {
    pairs: BTreeMap<(Address, Address), PairEvidence>,
}

impl EvidenceTally {
    pub fn new() -> Self {
        Self::default()
    }

    /// Records the patterns found in one transaction's transfers.
    pub fn observe_transaction(
        &mut self,
        events: &[TransferEvent],
        tracked: &BTreeSet<Address>,
        root_members: &HashSet<Address>,
    ) {
        let mut found: BTreeSet<(Address, Address, Address)> = BTreeSet::new();
        let positive = |e: &TransferEvent| !e.value.is_zero();

        // deposit-mint
        for m in events.iter().filter(|e| {
            e.from.is_zero() && !e.to.is_zero() && positive(e) && !root_members.contains(&e.token)
        }) {
            let holder = m.to;
            let wrapper = m.token;
            for d in events {
                if d.to == wrapper
                    && d.from == holder
                    && d.token != wrapper
                    && positive(d)
                    && tracked.contains(&d.token)
                {
                    found.insert((d.token, wrapper, holder));
                }
            }
        }
        // burn-redeem
        for b in events.iter().filter(|e| {
            e.to.is_zero() && !e.from.is_zero() && positive(e) && !root_members.contains(&e.token)
        }) {
            let holder = b.from;
            let wrapper = b.token;
            for r in events {
                if r.from == wrapper
                    && r.to == holder
                    && r.token != wrapper
                    && positive(r)
                    && tracked.contains(&r.token)
                {
                    found.insert((r.token, wrapper, holder));
                }
            }
        }

        let mut counted: BTreeSet<(Address, Address)> = BTreeSet::new();
        for (parent, child, holder) in found {
            let ev = self.pairs.entry((parent, child)).or_default();
            if counted.insert((parent, child)) {
                ev.transactions += 1;
            }
            ev.holders.insert(holder);
        }
    }

    pub fn merge(&mut self, other: EvidenceTally) {
        for (key, ev) in other.pairs {
            let mine = self.pairs.entry(key).or_default();
            mine.transactions += ev.transactions;
            mine.holders.extend(ev.holders);
        }
    }

    pub fn evidence(&self, parent: &Address, child: &Address) -> Option<(u64, u64)> {
        self.pairs
            .get(&(*parent, *child))
            .map(|e| (e.transactions, e.holders.len() as u64))
    }

    /// Pairs meeting both thresholds, excluding edges already in `graph`.
    pub fn candidates(
        &self,
        graph: &DerivationGraph,
        min_evidence: u64,
        min_holders: u64,
    ) -> Vec<WrapEdge> {
        self.pairs
            .iter()
            .filter(|((p, c), ev)| {
                ev.transactions >= min_evidence
                    && ev.holders.len() as u64 >= min_holders
                    && graph.edge(p, c).is_none()
            })
            .map(|((p, c), ev)| WrapEdge {
                parent: *p,
                child: *c,
                label: String::new(),
                weight: 1,
                evidence_tx_count: ev.transactions,
                evidence_holder_count: ev.holders.len() as u64,
                origin: EdgeOrigin::Discovered,
            })
            .collect()
    }
}

/// Scans transaction groups for wrapping evidence against the tokens
/// currently in `graph` and returns the new edges that meet the thresholds.
pub fn discover_edges<I>(
    tx_groups: I,
    graph: &DerivationGraph,
    min_evidence: u64,
    min_holders: u64,
) -> Vec<WrapEdge>
where
    I: IntoIterator<Item = (Word, Vec<TransferEvent>)>,
{
    let members = graph.root_members();
    let mut tally = EvidenceTally::new();
    for (_, events) in tx_groups {
        tally.observe_transaction(&events, graph.nodes(), &members);
    }
    tally.candidates(graph, min_evidence, min_holders)
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct IterationReport {
    /// 1-based.
    pub iteration: u32,
    pub admitted: Vec<(Address, Address)>,
    pub scan: ScanStats,
}

#[derive(Clone, Debug)]
pub struct DiscoveryOutcome {
    pub graph: DerivationGraph,
    pub iterations: Vec<IterationReport>,
}

impl DiscoveryOutcome {
    /// Iteration in which an edge was admitted.
    pub fn admitted_in(&self, parent: &Address, child: &Address) -> Option<u32> {
        self.iterations
            .iter()
            .find(|r| r.admitted.contains(&(*parent, *child)))
            .map(|r| r.iteration)
    }
}

/// Expands the roots generation by generation until an iteration admits
/// nothing or `max_depth` generations have been admitted.
pub fn run_discovery<S: TransferScan + ?Sized>(
    source: &S,
    roots: Vec<super::RootSpec>,
    max_depth: u32,
    min_evidence: u64,
    min_holders: u64,
) -> Result<DiscoveryOutcome, GraphError> {
    let seed = DerivationGraph::roots_only(roots)?;
    run_discovery_from(source, seed, max_depth, min_evidence, min_holders)
}

/// Like [`run_discovery`], starting from an existing graph (e.g. a curated
/// registry) whose nodes are all tracked from the first iteration.
pub fn run_discovery_from<S: TransferScan + ?Sized>(
    source: &S,
    seed: DerivationGraph,
    max_depth: u32,
    min_evidence: u64,
    min_holders: u64,
) -> Result<DiscoveryOutcome, GraphError> {
    let mut graph = seed;
    let members = graph.root_members();
    let mut iterations = Vec::new();
    for iteration in 1..=max_depth {
        let mut tally = EvidenceTally::new();
        let tracked = graph.nodes().clone();
        let scan = source.scan_transactions::<IngestError>(&mut |_, events| {
            tally.observe_transaction(events, &tracked, &members);
            Ok(())
        })?;
        let mut admitted = Vec::new();
        for edge in tally.candidates(&graph, min_evidence, min_holders) {
            let key = edge.key();
            if graph.admit(edge)? {
                admitted.push(key);
            }
        }
        let done = admitted.is_empty();
        iterations.push(IterationReport {
            iteration,
            admitted,
            scan,
        });
        if done {
            break;
        }
    }
    Ok(DiscoveryOutcome { graph, iterations })
}
