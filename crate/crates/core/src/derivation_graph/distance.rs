use std::collections::{BTreeMap, VecDeque};

use super::DerivationGraph;
use crate::chain_model::Address;

/// Position of a root in [`DistanceMap::root_ids`].
pub type RootIndex = usize;

/// Composition distance of every reachable token to every root.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct DistanceMap {
    root_ids: Vec<String>,
    initial: Vec<u32>,
    by_token: BTreeMap<Address, Vec<(RootIndex, u32)>>,
}

impl DistanceMap {
    pub fn root_ids(&self) -> &[String] {
        &self.root_ids
    }

    pub fn root_index(&self, root_id: &str) -> Option<RootIndex> {
        self.root_ids.iter().position(|r| r == root_id)
    }

    pub fn initial_distance(&self, root: RootIndex) -> u32 {
        self.initial[root]
    }

    pub fn get(&self, root_id: &str, token: &Address) -> Option<u32> {
        let idx = self.root_index(root_id)?;
        self.by_token
            .get(token)?
            .iter()
            .find(|(r, _)| *r == idx)
            .map(|(_, d)| *d)
    }

    /// Every `(root, δ)` label carried by `token`, ordered by root index.
    pub fn labels(&self, token: &Address) -> &[(RootIndex, u32)] {
        self.by_token.get(token).map(Vec::as_slice).unwrap_or(&[])
    }

    /// All entries as `(root_id, token, δ)`, by root then token.
    pub fn entries(&self) -> Vec<(&str, Address, u32)> {
        let mut out: Vec<(&str, Address, u32)> = self
            .by_token
            .iter()
            .flat_map(|(t, labels)| {
                labels
                    .iter()
                    .map(move |(r, d)| (self.root_ids[*r].as_str(), *t, *d))
            })
            .collect();
        out.sort();
        out
    }

    pub fn tokens(&self) -> impl Iterator<Item = &Address> {
        self.by_token.keys()
    }

    pub fn len(&self) -> usize {
        self.by_token.values().map(Vec::len).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.by_token.is_empty()
    }
}

/// Multi-source BFS per root: members start at the root's initial distance
/// and every wrap adds one.
pub fn compute_distances(graph: &DerivationGraph) -> DistanceMap {
    let adj = graph.adjacency();
    let mut by_token: BTreeMap<Address, Vec<(RootIndex, u32)>> = BTreeMap::new();
    for (idx, root) in graph.roots().iter().enumerate() {
        let mut dist: BTreeMap<Address, u32> = BTreeMap::new();
        let mut queue = VecDeque::new();
        for m in &root.member_tokens {
            if dist.insert(*m, root.initial_distance).is_none() {
                queue.push_back(*m);
            }
        }
        while let Some(node) = queue.pop_front() {
            let d = dist[&node];
            for child in adj.get(&node).into_iter().flatten() {
                if !dist.contains_key(child) {
                    dist.insert(*child, d + 1);
                    queue.push_back(*child);
                }
            }
        }
        for (token, d) in dist {
            by_token.entry(token).or_default().push((idx, d));
        }
    }
    DistanceMap {
        root_ids: graph.roots().iter().map(|r| r.root_id.clone()).collect(),
        initial: graph.roots().iter().map(|r| r.initial_distance).collect(),
        by_token,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::derivation_graph::{RootSpec, WrapEdge};

    fn a(n: u8) -> Address {
        Address([n; 20])
    }

    #[test]
    fn worked_chain() {
        // asset -> LP share -> meta LP share
        let g = DerivationGraph::from_edges(
            vec![RootSpec::new("DAI", vec![a(1)], 0)],
            vec![WrapEdge::curated(a(1), a(2), "lp"), WrapEdge::curated(a(2), a(3), "meta")],
        )
        .unwrap();
        let d = compute_distances(&g);
        assert_eq!(d.get("DAI", &a(1)), Some(0));
        assert_eq!(d.get("DAI", &a(2)), Some(1));
        assert_eq!(d.get("DAI", &a(3)), Some(2));
        assert_eq!(d.get("DAI", &a(4)), None);
        assert_eq!(d.get("USDC", &a(1)), None);
    }

    #[test]
    fn bridged_root_starts_at_one() {
        let g = DerivationGraph::from_edges(
            vec![RootSpec::new("BTC", vec![a(1), a(2), a(3)], 1)],
            vec![WrapEdge::curated(a(1), a(9), "")],
        )
        .unwrap();
        let d = compute_distances(&g);
        for m in 1..=3 {
            assert_eq!(d.get("BTC", &a(m)), Some(1));
        }
        assert_eq!(d.get("BTC", &a(9)), Some(2));
    }

    #[test]
    fn shortest_parent_wins() {
        // 1 -> 2 -> 3 -> 5 and 1 -> 4 -> 5: node 5 at distance 2
        let g = DerivationGraph::from_edges(
            vec![RootSpec::new("R", vec![a(1)], 0)],
            vec![
                WrapEdge::curated(a(1), a(2), ""),
                WrapEdge::curated(a(2), a(3), ""),
                WrapEdge::curated(a(3), a(5), ""),
                WrapEdge::curated(a(1), a(4), ""),
                WrapEdge::curated(a(4), a(5), ""),
                WrapEdge::curated(a(5), a(2), ""),
            ],
        )
        .unwrap();
        let d = compute_distances(&g);
        assert_eq!(d.get("R", &a(5)), Some(2));
        assert_eq!(d.get("R", &a(2)), Some(1));
        assert_eq!(d.get("R", &a(3)), Some(2));
    }

    #[test]
    fn two_root_lp() {
        let g = DerivationGraph::from_edges(
            vec![
                RootSpec::new("DAI", vec![a(1)], 0),
                RootSpec::new("WETH", vec![a(2)], 0),
            ],
            vec![WrapEdge::curated(a(1), a(7), ""), WrapEdge::curated(a(2), a(7), "")],
        )
        .unwrap();
        let d = compute_distances(&g);
        assert_eq!(d.labels(&a(7)), &[(0, 1), (1, 1)]);
        assert_eq!(d.len(), 4);
        assert_eq!(
            d.entries(),
            vec![("DAI", a(1), 0), ("DAI", a(7), 1), ("WETH", a(2), 0), ("WETH", a(7), 1)]
        );
    }
}
