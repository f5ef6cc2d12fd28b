//! The graph of wrapped tokens descending from root assets, and the
//! composition distance of every token to each root.
//!
//! Edges are unit-weight wrapping operations `parent -> child`. A token's
//! distance to a root is the root's initial distance plus the number of
//! wraps on the shortest path from any of the root's member tokens.

mod discovery;
mod distance;
mod registry;

use std::collections::{BTreeMap, BTreeSet, HashSet};
use std::fmt;
use std::path::PathBuf;

use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::chain_model::{Address, Word};

pub use discovery::{
    discover_edges, run_discovery, run_discovery_from, DiscoveryOutcome, EvidenceTally,
    IterationReport, DEFAULT_MIN_EVIDENCE, DEFAULT_MIN_HOLDERS,
};
pub use distance::{compute_distances, DistanceMap, RootIndex};
pub use registry::{
    load_registry, load_roots, parse_registry, parse_roots, write_registry, write_roots,
    ACYCLIC_DIRECTIVE, REGISTRY_HEADER, REGISTRY_HEADER_WITH_EVIDENCE, ROOTS_HEADER,
};

#[derive(Debug, Error)]
pub enum GraphError {
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{source_name}:{line}: {message}")]
    Parse {
        source_name: String,
        line: usize,
        message: String,
    },
    #[error("{source_name}:{line}: parent {parent} is not reachable from any root")]
    UnreachableParent {
        source_name: String,
        line: usize,
        parent: Address,
    },
    #[error("{source_name}:{line}: duplicate edge {parent} -> {child}")]
    DuplicateEdge {
        source_name: String,
        line: usize,
        parent: Address,
        child: Address,
    },
    #[error("registry declares itself acyclic but contains a cycle through {0}")]
    Cycle(Address),
    #[error("edge {0} -> {0} is a self-loop")]
    SelfLoop(Address),
    #[error("invalid roots: {0}")]
    InvalidRoots(String),
    #[error("root sets differ between merged graphs")]
    RootMismatch,
    #[error(transparent)]
    Scan(#[from] crate::ingestion::IngestError),
}

/// One root asset: a label, the tokens that count as the plain asset, and the
/// distance those tokens start at (1 for assets bridged from another chain).
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct RootSpec {
    pub root_id: String,
    pub member_tokens: Vec<Address>,
    pub initial_distance: u32,
}

impl RootSpec {
    pub fn new(root_id: impl Into<String>, member_tokens: Vec<Address>, initial_distance: u32) -> Self {
        RootSpec {
            root_id: root_id.into(),
            member_tokens,
            initial_distance,
        }
    }
}

/// Checks root ids are unique and member sets non-empty, distinct and disjoint.
pub fn validate_roots(roots: &[RootSpec]) -> Result<(), GraphError> {
    let mut ids = HashSet::new();
    let mut seen = HashSet::new();
    for root in roots {
        if root.root_id.is_empty() || root.root_id.contains(',') {
            return Err(GraphError::InvalidRoots(format!(
                "root id {:?} must be non-empty and comma-free",
                root.root_id
            )));
        }
        if !ids.insert(root.root_id.as_str()) {
            return Err(GraphError::InvalidRoots(format!(
                "root id {} declared twice",
                root.root_id
            )));
        }
        if root.member_tokens.is_empty() {
            return Err(GraphError::InvalidRoots(format!(
                "root {} has no member tokens",
                root.root_id
            )));
        }
        for t in &root.member_tokens {
            if t.is_zero() {
                return Err(GraphError::InvalidRoots(format!(
                    "root {} lists the zero address",
                    root.root_id
                )));
            }
            if !seen.insert(*t) {
                return Err(GraphError::InvalidRoots(format!(
                    "token {t} appears more than once across roots"
                )));
            }
        }
    }
    Ok(())
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum EdgeOrigin {
    Curated,
    Discovered,
}

impl EdgeOrigin {
    pub fn as_str(&self) -> &'static str {
        match self {
            EdgeOrigin::Curated => "curated",
            EdgeOrigin::Discovered => "discovered",
        }
    }
}

impl fmt::Display for EdgeOrigin {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for EdgeOrigin {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "curated" => Ok(EdgeOrigin::Curated),
            "discovered" => Ok(EdgeOrigin::Discovered),
            other => Err(format!("unknown origin {other:?}")),
        }
    }
}

/// A single wrapping operation from `parent` to `child`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct WrapEdge {
    pub parent: Address,
    pub child: Address,
    pub label: String,
    /// Always 1.
    pub weight: u32,
    pub evidence_tx_count: u64,
    pub evidence_holder_count: u64,
    pub origin: EdgeOrigin,
}

impl WrapEdge {
    pub fn curated(parent: Address, child: Address, label: impl Into<String>) -> Self {
        WrapEdge {
            parent,
            child,
            label: label.into(),
            weight: 1,
            evidence_tx_count: 0,
            evidence_holder_count: 0,
            origin: EdgeOrigin::Curated,
        }
    }

    pub fn key(&self) -> (Address, Address) {
        (self.parent, self.child)
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct DerivationGraph {
    roots: Vec<RootSpec>,
    nodes: BTreeSet<Address>,
    edges: BTreeMap<(Address, Address), WrapEdge>,
}

impl DerivationGraph {
    /// A graph holding only the root member tokens.
    pub fn roots_only(roots: Vec<RootSpec>) -> Result<Self, GraphError> {
        validate_roots(&roots)?;
        let nodes = roots
            .iter()
            .flat_map(|r| r.member_tokens.iter().copied())
            .collect();
        Ok(DerivationGraph {
            roots,
            nodes,
            edges: BTreeMap::new(),
        })
    }

    /// Builds a graph from roots and edges, checking every edge parent is
    /// reachable from a root member.
    pub fn from_edges(roots: Vec<RootSpec>, edges: Vec<WrapEdge>) -> Result<Self, GraphError> {
        let mut g = Self::roots_only(roots)?;
        for e in edges {
            if e.parent == e.child {
                return Err(GraphError::SelfLoop(e.parent));
            }
            if g.edges.contains_key(&e.key()) {
                return Err(GraphError::DuplicateEdge {
                    source_name: "<edges>".into(),
                    line: 0,
                    parent: e.parent,
                    child: e.child,
                });
            }
            g.nodes.insert(e.parent);
            g.nodes.insert(e.child);
            g.edges.insert(e.key(), e);
        }
        if let Some(p) = g.unreachable_parents().into_iter().next() {
            return Err(GraphError::UnreachableParent {
                source_name: "<edges>".into(),
                line: 0,
                parent: p,
            });
        }
        Ok(g)
    }

    pub fn roots(&self) -> &[RootSpec] {
        &self.roots
    }

    pub fn nodes(&self) -> &BTreeSet<Address> {
        &self.nodes
    }

    pub fn edges(&self) -> impl Iterator<Item = &WrapEdge> {
        self.edges.values()
    }

    pub fn edge(&self, parent: &Address, child: &Address) -> Option<&WrapEdge> {
        self.edges.get(&(*parent, *child))
    }

    pub fn edge_count(&self) -> usize {
        self.edges.len()
    }

    pub fn edge_keys(&self) -> BTreeSet<(Address, Address)> {
        self.edges.keys().copied().collect()
    }

    pub fn contains(&self, token: &Address) -> bool {
        self.nodes.contains(token)
    }

    pub fn root_members(&self) -> HashSet<Address> {
        self.roots
            .iter()
            .flat_map(|r| r.member_tokens.iter().copied())
            .collect()
    }

    pub fn is_root_member(&self, token: &Address) -> bool {
        self.roots.iter().any(|r| r.member_tokens.contains(token))
    }

    /// Adds an edge whose parent is already a node. Returns `false` if the
    /// edge exists; existing edges are never rewritten.
    pub fn admit(&mut self, edge: WrapEdge) -> Result<bool, GraphError> {
        if edge.parent == edge.child {
            return Err(GraphError::SelfLoop(edge.parent));
        }
        if !self.nodes.contains(&edge.parent) {
            return Err(GraphError::UnreachableParent {
                source_name: "<admit>".into(),
                line: 0,
                parent: edge.parent,
            });
        }
        if self.edges.contains_key(&edge.key()) {
            return Ok(false);
        }
        self.nodes.insert(edge.child);
        self.edges.insert(edge.key(), edge);
        Ok(true)
    }

    pub(crate) fn adjacency(&self) -> BTreeMap<Address, Vec<Address>> {
        let mut adj: BTreeMap<Address, Vec<Address>> = BTreeMap::new();
        for (p, c) in self.edges.keys() {
            adj.entry(*p).or_default().push(*c);
        }
        adj
    }

    fn reachable(&self) -> HashSet<Address> {
        let adj = self.adjacency();
        let mut seen: HashSet<Address> = self.root_members();
        let mut stack: Vec<Address> = seen.iter().copied().collect();
        while let Some(n) = stack.pop() {
            for c in adj.get(&n).into_iter().flatten() {
                if seen.insert(*c) {
                    stack.push(*c);
                }
            }
        }
        seen
    }

    fn unreachable_parents(&self) -> Vec<Address> {
        let reach = self.reachable();
        self.edges
            .keys()
            .map(|(p, _)| *p)
            .filter(|p| !reach.contains(p))
            .collect()
    }

    /// Returns a node on a directed cycle, if any.
    pub fn find_cycle(&self) -> Option<Address> {
        let adj = self.adjacency();
        // 0 = unvisited, 1 = on stack, 2 = done
        let mut state: BTreeMap<Address, u8> = BTreeMap::new();
        for start in &self.nodes {
            if state.get(start).copied().unwrap_or(0) != 0 {
                continue;
            }
            let mut stack: Vec<(Address, usize)> = vec![(*start, 0)];
            state.insert(*start, 1);
            while let Some((node, i)) = stack.pop() {
                let children = adj.get(&node).map(Vec::as_slice).unwrap_or(&[]);
                if i < children.len() {
                    stack.push((node, i + 1));
                    let c = children[i];
                    match state.get(&c).copied().unwrap_or(0) {
                        0 => {
                            state.insert(c, 1);
                            stack.push((c, 0));
                        }
                        1 => return Some(c),
                        _ => {}
                    }
                } else {
                    state.insert(node, 2);
                }
            }
        }
        None
    }

    /// SHA-256 over the roots and the edge set, ignoring labels, origins and
    /// evidence counts: two graphs with the same checksum yield the same
    /// distances.
    pub fn structure_checksum(&self) -> Word {
        let mut lines: Vec<String> = Vec::new();
        for r in &self.roots {
            let mut members = r.member_tokens.clone();
            members.sort();
            for m in members {
                lines.push(format!("root,{},{},{}", r.root_id, r.initial_distance, m));
            }
        }
        lines.sort();
        for (p, c) in self.edges.keys() {
            lines.push(format!("edge,{p},{c}"));
        }
        let mut h = Sha256::new();
        for l in &lines {
            h.update(l.as_bytes());
            h.update(b"\n");
        }
        Word(h.finalize().into())
    }
}

fn same_roots(a: &[RootSpec], b: &[RootSpec]) -> bool {
    let norm = |roots: &[RootSpec]| {
        let mut v: Vec<(String, u32, BTreeSet<Address>)> = roots
            .iter()
            .map(|r| {
                (
                    r.root_id.clone(),
                    r.initial_distance,
                    r.member_tokens.iter().copied().collect(),
                )
            })
            .collect();
        v.sort();
        v
    };
    norm(a) == norm(b)
}

/// Unions two graphs over the same roots. Where both hold an edge, the result
/// is marked curated and keeps the discovered evidence counts.
pub fn merge_graphs(
    curated: &DerivationGraph,
    discovered: &DerivationGraph,
) -> Result<DerivationGraph, GraphError> {
    if !same_roots(&curated.roots, &discovered.roots) {
        return Err(GraphError::RootMismatch);
    }
    let mut out = curated.clone();
    out.nodes.extend(discovered.nodes.iter().copied());
    for (key, edge) in &discovered.edges {
        match out.edges.get_mut(key) {
            Some(existing) => {
                existing.origin = EdgeOrigin::Curated;
                existing.evidence_tx_count = existing.evidence_tx_count.max(edge.evidence_tx_count);
                existing.evidence_holder_count =
                    existing.evidence_holder_count.max(edge.evidence_holder_count);
                if existing.label.is_empty() {
                    existing.label = edge.label.clone();
                }
            }
            None => {
                out.edges.insert(*key, edge.clone());
            }
        }
    }
    Ok(out)
}
