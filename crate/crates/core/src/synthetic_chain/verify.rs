use std::collections::BTreeSet;
use std::fmt;

use super::GroundTruth;
use crate::chain_model::Address;
use crate::classification::{ClassifiedCount, CountKey, CountingPolicy};
use crate::derivation_graph::DerivationGraph;

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum Mismatch {
    MissingEdge { parent: Address, child: Address },
    UnexpectedEdge { parent: Address, child: Address },
    Count { key: CountKey, expected: u64, actual: u64 },
}

impl fmt::Display for Mismatch {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Mismatch::MissingEdge { parent, child } => write!(f, "missing edge {parent} -> {child}"),
            Mismatch::UnexpectedEdge { parent, child } => write!(f, "unexpected edge {parent} -> {child}"),
            Mismatch::Count { key, expected, actual } => write!(
                f,
                "count {} delta={} bucket={}: expected {expected}, got {actual}",
                key.root, key.delta, key.bucket
            ),
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct MismatchReport {
    pub mismatches: Vec<Mismatch>,
}

impl MismatchReport {
    pub fn is_empty(&self) -> bool {
        self.mismatches.is_empty()
    }

    pub fn len(&self) -> usize {
        self.mismatches.len()
    }
}

impl fmt::Display for MismatchReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.is_empty() {
            return writeln!(f, "no mismatches");
        }
        for m in &self.mismatches {
            writeln!(f, "{m}")?;
        }
        Ok(())
    }
}

/// Compares pipeline output against the truth for `policy`: edge sets and
/// every count cell, exactly.
pub fn verify(
    counts: &ClassifiedCount,
    graph: &DerivationGraph,
    truth: &GroundTruth,
    policy: &CountingPolicy,
) -> MismatchReport {
    let mut mismatches = Vec::new();
    let want = truth.graph.edge_keys();
    let got = graph.edge_keys();
    for (parent, child) in want.difference(&got) {
        mismatches.push(Mismatch::MissingEdge {
            parent: *parent,
            child: *child,
        });
    }
    for (parent, child) in got.difference(&want) {
        mismatches.push(Mismatch::UnexpectedEdge {
            parent: *parent,
            child: *child,
        });
    }

    let expected = truth.counts_for(policy);
    let keys: BTreeSet<&CountKey> = expected.iter().chain(counts.iter()).map(|(k, _)| k).collect();
    for key in keys {
        let e = expected.get(&key.root, key.delta, key.bucket);
        let a = counts.get(&key.root, key.delta, key.bucket);
        if e != a {
            mismatches.push(Mismatch::Count {
                key: key.clone(),
                expected: e,
                actual: a,
            });
        }
    }
    MismatchReport { mismatches }
}
