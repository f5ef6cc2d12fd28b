use std::sync::OnceLock;

use composability_core::chain_model::TransferEvent;
use composability_core::classification::{aggregate, ClassifiedCount, CountMode, CountingPolicy};
use composability_core::derivation_graph::{compute_distances, DistanceMap};
use composability_core::synthetic_chain::{generate, Scenario, ScenarioSpec};
use proptest::prelude::*;

const SCENARIO: &str = concat!(env!("CARGO_MANIFEST_DIR"), "/scenarios/two-level-noise.toml");

struct Fixture {
    scenario: Scenario,
    events: Vec<TransferEvent>,
    distances: DistanceMap,
    /// Indices where a new transaction starts.
    boundaries: Vec<usize>,
}

fn fixture() -> &'static Fixture {
    static F: OnceLock<Fixture> = OnceLock::new();
    F.get_or_init(|| {
        let scenario = generate(&ScenarioSpec::load(SCENARIO).unwrap()).unwrap();
        let events = scenario.events();
        let distances = compute_distances(&scenario.truth.graph);
        let boundaries = (1..events.len())
            .filter(|&i| events[i].position.tx_hash != events[i - 1].position.tx_hash)
            .collect();
        Fixture {
            scenario,
            events,
            distances,
            boundaries,
        }
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn shard_aggregates_merge_to_the_single_pass(
        picks in proptest::collection::vec(any::<prop::sample::Index>(), 10),
        tx_level in any::<bool>(),
        include_mint_burn in any::<bool>(),
    ) {
        let f = fixture();
        let policy = CountingPolicy {
            mode: if tx_level { CountMode::TransactionLevel } else { CountMode::EventLevel },
            include_mint_burn,
        };
        let bucketing = &f.scenario.bucketing;
        let whole = aggregate(&f.events, &f.distances, policy, bucketing).unwrap();

        let mut cuts: Vec<usize> = picks.iter().map(|i| f.boundaries[i.index(f.boundaries.len())]).collect();
        cuts.sort_unstable();
        cuts.dedup();
        let mut merged = ClassifiedCount::new();
        let mut start = 0;
        for end in cuts.into_iter().chain([f.events.len()]) {
            merged.merge(&aggregate(&f.events[start..end], &f.distances, policy, bucketing).unwrap());
            start = end;
        }
        prop_assert_eq!(&merged, &whole);
        prop_assert_eq!(&whole, f.scenario.truth.counts_for(&policy));
    }
}
