use std::collections::{BTreeMap, HashSet};
use std::io::Write;
use std::path::Path;

use super::{validate_roots, DerivationGraph, EdgeOrigin, GraphError, RootSpec, WrapEdge};
use crate::chain_model::Address;

pub const REGISTRY_HEADER: &str = "parent,child,label,origin";
pub const REGISTRY_HEADER_WITH_EVIDENCE: &str =
    "parent,child,label,origin,evidence_tx,evidence_holders";
pub const ROOTS_HEADER: &str = "root_id,token_address,initial_distance";
/// Comment directive that makes a registry assert it has no cycles.
pub const ACYCLIC_DIRECTIVE: &str = "#! acyclic";

fn read(path: &Path) -> Result<String, GraphError> {
    std::fs::read_to_string(path).map_err(|e| GraphError::Io {
        path: path.to_path_buf(),
        source: e,
    })
}

/// Reads a roots file: one `root_id,token_address,initial_distance` per line.
/// Root order follows first appearance.
pub fn load_roots(path: impl AsRef<Path>) -> Result<Vec<RootSpec>, GraphError> {
    let path = path.as_ref();
    parse_roots(&read(path)?, &path.display().to_string())
}

pub fn parse_roots(text: &str, source_name: &str) -> Result<Vec<RootSpec>, GraphError> {
    let mut roots: Vec<RootSpec> = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line_no = i + 1;
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') || line == ROOTS_HEADER {
            continue;
        }
        let err = |message: String| GraphError::Parse {
            source_name: source_name.to_owned(),
            line: line_no,
            message,
        };
        let parts: Vec<&str> = line.split(',').map(str::trim).collect();
        if parts.len() != 3 {
            return Err(err(format!("expected 3 fields, found {}", parts.len())));
        }
        let token: Address = parts[1].parse().map_err(|e| err(format!("token_address: {e}")))?;
        let initial: u32 = parts[2]
            .parse()
            .map_err(|e| err(format!("initial_distance: {e}")))?;
        match roots.iter_mut().find(|r| r.root_id == parts[0]) {
            Some(r) => {
                if r.initial_distance != initial {
                    return Err(err(format!(
                        "root {} has conflicting initial distances {} and {initial}",
                        r.root_id, r.initial_distance
                    )));
                }
                r.member_tokens.push(token);
            }
            None => roots.push(RootSpec::new(parts[0], vec![token], initial)),
        }
    }
    validate_roots(&roots)?;
    Ok(roots)
}

pub fn write_roots<W: Write>(roots: &[RootSpec], out: &mut W) -> std::io::Result<()> {
    writeln!(out, "{ROOTS_HEADER}")?;
    for r in roots {
        for t in &r.member_tokens {
            writeln!(out, "{},{},{}", r.root_id, t, r.initial_distance)?;
        }
    }
    Ok(())
}

/// Loads a registry of wrapping edges on top of `roots`.
pub fn load_registry(path: impl AsRef<Path>, roots: Vec<RootSpec>) -> Result<DerivationGraph, GraphError> {
    let path = path.as_ref();
    parse_registry(&read(path)?, &path.display().to_string(), roots)
}

/// Parses registry text. Lines may appear in any order; every parent must
/// end up reachable from some root member.
pub fn parse_registry(
    text: &str,
    source_name: &str,
    roots: Vec<RootSpec>,
) -> Result<DerivationGraph, GraphError> {
    let mut graph = DerivationGraph::roots_only(roots)?;
    let mut header_seen = false;
    let mut with_evidence = false;
    let mut acyclic = false;
    let mut lines_of: BTreeMap<(Address, Address), usize> = BTreeMap::new();

    for (i, raw) in text.lines().enumerate() {
        let line_no = i + 1;
        let line = raw.trim();
        let err = |message: String| GraphError::Parse {
            source_name: source_name.to_owned(),
            line: line_no,
            message,
        };
        if line.is_empty() {
            continue;
        }
        if line.starts_with('#') {
            if line == ACYCLIC_DIRECTIVE {
                acyclic = true;
            }
            continue;
        }
        if !header_seen {
            match line {
                REGISTRY_HEADER => with_evidence = false,
                REGISTRY_HEADER_WITH_EVIDENCE => with_evidence = true,
                other => {
                    return Err(err(format!(
                        "expected header {REGISTRY_HEADER:?}, found {other:?}"
                    )))
                }
            }
            header_seen = true;
            continue;
        }
        let parts: Vec<&str> = line.split(',').map(str::trim).collect();
        let want = if with_evidence { 6 } else { 4 };
        if parts.len() != want {
            return Err(err(format!("expected {want} fields, found {}", parts.len())));
        }
        let parent: Address = parts[0].parse().map_err(|e| err(format!("parent: {e}")))?;
        let child: Address = parts[1].parse().map_err(|e| err(format!("child: {e}")))?;
        let origin: EdgeOrigin = parts[3].parse().map_err(err)?;
        let (evidence_tx_count, evidence_holder_count) = if with_evidence {
            (
                parts[4].parse().map_err(|e| err(format!("evidence_tx: {e}")))?,
                parts[5].parse().map_err(|e| err(format!("evidence_holders: {e}")))?,
            )
        } else {
            (0, 0)
        };
        if parent == child {
            return Err(err(format!("self-loop on {parent}")));
        }
        if lines_of.insert((parent, child), line_no).is_some() {
            return Err(GraphError::DuplicateEdge {
                source_name: source_name.to_owned(),
                line: line_no,
                parent,
                child,
            });
        }
        graph.nodes.insert(parent);
        graph.nodes.insert(child);
        graph.edges.insert(
            (parent, child),
            WrapEdge {
                parent,
                child,
                label: parts[2].to_owned(),
                weight: 1,
                evidence_tx_count,
                evidence_holder_count,
                origin,
            },
        );
    }
    if !header_seen {
        return Err(GraphError::Parse {
            source_name: source_name.to_owned(),
            line: 0,
            message: format!("missing header {REGISTRY_HEADER:?}"),
        });
    }

    let unreachable: HashSet<Address> = graph.unreachable_parents().into_iter().collect();
    if let Some(((parent, _), line)) = lines_of
        .iter()
        .filter(|((p, _), _)| unreachable.contains(p))
        .min_by_key(|(_, line)| **line)
    {
        return Err(GraphError::UnreachableParent {
            source_name: source_name.to_owned(),
            line: *line,
            parent: *parent,
        });
    }
    if acyclic {
        if let Some(node) = graph.find_cycle() {
            return Err(GraphError::Cycle(node));
        }
    }
    Ok(graph)
}

/// Writes edges sorted by `(parent, child)`. With `with_evidence`, appends the
/// `evidence_tx,evidence_holders` columns.
pub fn write_registry<W: Write>(
    graph: &DerivationGraph,
    out: &mut W,
    with_evidence: bool,
) -> std::io::Result<()> {
    if with_evidence {
        writeln!(out, "{REGISTRY_HEADER_WITH_EVIDENCE}")?;
    } else {
        writeln!(out, "{REGISTRY_HEADER}")?;
    }
    for e in graph.edges() {
        write!(out, "{},{},{},{}", e.parent, e.child, e.label, e.origin)?;
        if with_evidence {
            write!(out, ",{},{}", e.evidence_tx_count, e.evidence_holder_count)?;
        }
        writeln!(out)?;
    }
    Ok(())
}
