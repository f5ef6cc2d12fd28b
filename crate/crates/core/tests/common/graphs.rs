use std::collections::BTreeSet;

use composability_core::chain_model::Address;
use composability_core::derivation_graph::RootSpec;
use rand::Rng;
use rand_chacha::ChaCha8Rng;

pub fn node(i: usize) -> Address {
    let mut a = [0u8; 20];
    a[18] = (i >> 8) as u8;
    a[19] = i as u8;
    a[0] = 0xaa;
    Address(a)
}

/// A random multi-root graph. Parents are drawn from nodes already reachable
/// and children never from root members, which the graph requires; edges
/// back into reached nodes still form cycles.
pub fn random_graph(rng: &mut ChaCha8Rng) -> (Vec<RootSpec>, Vec<(Address, Address)>) {
    let n = rng.random_range(2..=50);
    let root_count = rng.random_range(1..=3.min(n - 1));
    let mut roots = Vec::new();
    let mut next = 0;
    for r in 0..root_count {
        let members = rng.random_range(1..=2).min(n - next - 1).max(1);
        roots.push(RootSpec::new(
            format!("R{r}"),
            (next..next + members).map(node).collect(),
            rng.random_range(0..=1),
        ));
        next += members;
        if next >= n - 1 {
            break;
        }
    }
    let member_count = next;
    let edge_target = rng.random_range(0..=150);
    let mut edges = BTreeSet::new();
    let mut reached: Vec<usize> = (0..member_count).collect();
    for _ in 0..edge_target * 3 {
        if edges.len() >= edge_target {
            break;
        }
        let p = reached[rng.random_range(0..reached.len())];
        let c = rng.random_range(member_count..n);
        if p != c && edges.insert((node(p), node(c))) && !reached.contains(&c) {
            reached.push(c);
        }
    }
    (roots, edges.into_iter().collect())
}
