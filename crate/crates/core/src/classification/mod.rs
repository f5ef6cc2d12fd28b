//! Labels transfers with `(root, δ)` and counts them per time bucket.
//!
//! Counts are exact integers end to end; shares are derived only when a
//! report is written.

mod bucketing;
mod report;

use std::collections::{BTreeMap, HashMap};
use std::fmt;
use std::ops::AddAssign;

use thiserror::Error;

use crate::chain_model::{LogPosition, TransferEvent, Word};
use crate::derivation_graph::{DistanceMap, RootSpec};
use crate::ingestion::{check_order, OrderViolation};

pub use bucketing::{BucketScheme, Bucketing, MonthCalendar, DEFAULT_BUCKET_BLOCKS};
pub use report::{
    emit_report, format_share, parse_report, ParsedReport, ReportMeta, REPORT_COLUMNS,
};

#[derive(Debug, Error)]
pub enum ClassifyError {
    #[error(transparent)]
    Order(#[from] OrderViolation),
    #[error("no transfers recorded for root {root} in bucket {bucket}")]
    NoData { root: String, bucket: u32 },
    #[error("root {0} is not among the configured roots")]
    UnknownRoot(String),
    #[error("invalid bucketing: {0}")]
    Bucketing(String),
    #[error("{source_name}:{line}: {message}")]
    Parse {
        source_name: String,
        line: usize,
        message: String,
    },
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Scan(#[from] crate::ingestion::IngestError),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum CountMode {
    /// Every labeled transfer counts once per label.
    EventLevel,
    /// One count per transaction and root, at the deepest δ touched.
    TransactionLevel,
}

impl CountMode {
    pub fn as_str(&self) -> &'static str {
        match self {
            CountMode::EventLevel => "event",
            CountMode::TransactionLevel => "tx",
        }
    }
}

impl std::str::FromStr for CountMode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "event" | "event_level" => Ok(CountMode::EventLevel),
            "tx" | "transaction" | "transaction_level" => Ok(CountMode::TransactionLevel),
            other => Err(format!("unknown count mode {other:?} (expected event or tx)")),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct CountingPolicy {
    pub mode: CountMode,
    /// Whether transfers from or to the zero address are counted.
    pub include_mint_burn: bool,
}

impl Default for CountingPolicy {
    fn default() -> Self {
        CountingPolicy {
            mode: CountMode::EventLevel,
            include_mint_burn: true,
        }
    }
}

impl fmt::Display for CountingPolicy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "mode={} include_mint_burn={}",
            self.mode.as_str(),
            self.include_mint_burn
        )
    }
}

/// Key of a count cell. Field order gives the report order.
#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct CountKey {
    pub root: String,
    pub bucket: u32,
    pub delta: u32,
}

impl CountKey {
    pub fn new(root: impl Into<String>, delta: u32, bucket: u32) -> Self {
        CountKey {
            root: root.into(),
            bucket,
            delta,
        }
    }
}

/// Counts keyed by `(root, δ, bucket)`. A commutative monoid under
/// [`ClassifiedCount::merge`] with the empty table as identity.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct ClassifiedCount {
    entries: BTreeMap<CountKey, u64>,
}

impl ClassifiedCount {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, key: CountKey, n: u64) {
        if n > 0 {
            *self.entries.entry(key).or_default() += n;
        }
    }

    pub fn get(&self, root: &str, delta: u32, bucket: u32) -> u64 {
        self.entries
            .get(&CountKey::new(root, delta, bucket))
            .copied()
            .unwrap_or(0)
    }

    pub fn merge(&mut self, other: &ClassifiedCount) {
        for (k, v) in &other.entries {
            self.add(k.clone(), *v);
        }
    }

    pub fn iter(&self) -> impl Iterator<Item = (&CountKey, u64)> {
        self.entries.iter().map(|(k, v)| (k, *v))
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn total(&self) -> u64 {
        self.entries.values().sum()
    }

    pub fn root_total(&self, root: &str) -> u64 {
        self.entries
            .iter()
            .filter(|(k, _)| k.root == root)
            .map(|(_, v)| v)
            .sum()
    }

    /// `(composed, total)` for one root and bucket, where composed means
    /// δ above the root's initial distance.
    pub fn share_parts(&self, root: &str, bucket: u32, initial_distance: u32) -> (u64, u64) {
        let lo = CountKey::new(root, 0, bucket);
        let hi = CountKey::new(root, u32::MAX, bucket);
        let mut composed = 0;
        let mut total = 0;
        for (k, v) in self.entries.range(lo..=hi) {
            total += v;
            if k.delta > initial_distance {
                composed += v;
            }
        }
        (composed, total)
    }
}

impl AddAssign<&ClassifiedCount> for ClassifiedCount {
    fn add_assign(&mut self, rhs: &ClassifiedCount) {
        self.merge(rhs);
    }
}

impl FromIterator<(CountKey, u64)> for ClassifiedCount {
    fn from_iter<T: IntoIterator<Item = (CountKey, u64)>>(iter: T) -> Self {
        let mut c = ClassifiedCount::new();
        for (k, v) in iter {
            c.add(k, v);
        }
        c
    }
}

/// Fraction of a root's transfers in `bucket` that are composed (δ above the
/// root's initial distance). Integer sums first, one division at the end.
pub fn composed_share(
    counts: &ClassifiedCount,
    root: &str,
    bucket: u32,
    roots: &[RootSpec],
) -> Result<f64, ClassifyError> {
    let spec = roots
        .iter()
        .find(|r| r.root_id == root)
        .ok_or_else(|| ClassifyError::UnknownRoot(root.to_owned()))?;
    let (composed, total) = counts.share_parts(root, bucket, spec.initial_distance);
    if total == 0 {
        return Err(ClassifyError::NoData {
            root: root.to_owned(),
            bucket,
        });
    }
    Ok(composed as f64 / total as f64)
}

/// The `(root, δ)` labels of one transfer. Empty for untracked tokens, and for
/// mints and burns when the policy excludes them.
pub fn classify_event<'d>(
    event: &TransferEvent,
    distances: &'d DistanceMap,
    policy: &CountingPolicy,
) -> Vec<(&'d str, u32)> {
    if !policy.include_mint_burn && event.touches_zero_address() {
        return Vec::new();
    }
    distances
        .labels(&event.token)
        .iter()
        .map(|(r, d)| (distances.root_ids()[*r].as_str(), *d))
        .collect()
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct AggregateStats {
    pub events: u64,
    pub transactions: u64,
    /// Events of tracked tokens, whatever the mint/burn policy.
    pub tracked_events: u64,
    /// Tracked events that mint or burn; the count that moves when
    /// `include_mint_burn` flips.
    pub zero_address_events: u64,
    pub outside_buckets: u64,
}

impl AddAssign for AggregateStats {
    fn add_assign(&mut self, o: AggregateStats) {
        self.events += o.events;
        self.transactions += o.transactions;
        self.tracked_events += o.tracked_events;
        self.zero_address_events += o.zero_address_events;
        self.outside_buckets += o.outside_buckets;
    }
}

/// Streaming counter. Memory is one transaction's per-root maxima plus the
/// count table.
pub struct Aggregator<'a> {
    distances: &'a DistanceMap,
    policy: CountingPolicy,
    bucketing: &'a Bucketing,
    cells: HashMap<(usize, u32, u32), u64>,
    last: Option<LogPosition>,
    open_tx: Option<(Word, Option<u32>)>,
    tx_max: Vec<Option<u32>>,
    stats: AggregateStats,
}

impl<'a> Aggregator<'a> {
    pub fn new(distances: &'a DistanceMap, policy: CountingPolicy, bucketing: &'a Bucketing) -> Self {
        Aggregator {
            distances,
            policy,
            bucketing,
            cells: HashMap::new(),
            last: None,
            open_tx: None,
            tx_max: vec![None; distances.root_ids().len()],
            stats: AggregateStats::default(),
        }
    }

    fn close_tx(&mut self) {
        if let Some((_, Some(bucket))) = self.open_tx.take() {
            for (root, slot) in self.tx_max.iter_mut().enumerate() {
                if let Some(d) = slot.take() {
                    *self.cells.entry((root, d, bucket)).or_default() += 1;
                }
            }
        }
        self.tx_max.iter_mut().for_each(|s| *s = None);
    }

    pub fn push(&mut self, event: &TransferEvent) -> Result<(), ClassifyError> {
        check_order(self.last.as_ref(), &event.position)?;
        self.last = Some(event.position);
        self.stats.events += 1;

        let tx = event.position.tx_hash;
        let new_tx = self.open_tx.as_ref().is_none_or(|(h, _)| *h != tx);
        let bucket = self.bucketing.bucket_of(event.position.block_number);
        if new_tx {
            self.close_tx();
            self.stats.transactions += 1;
            self.open_tx = Some((tx, bucket));
        }

        let labels = self.distances.labels(&event.token);
        if labels.is_empty() {
            return Ok(());
        }
        self.stats.tracked_events += 1;
        if event.touches_zero_address() {
            self.stats.zero_address_events += 1;
            if !self.policy.include_mint_burn {
                return Ok(());
            }
        }
        let Some(bucket) = bucket else {
            self.stats.outside_buckets += 1;
            return Ok(());
        };
        match self.policy.mode {
            CountMode::EventLevel => {
                for (root, d) in labels {
                    *self.cells.entry((*root, *d, bucket)).or_default() += 1;
                }
            }
            CountMode::TransactionLevel => {
                for (root, d) in labels {
                    let slot = &mut self.tx_max[*root];
                    *slot = Some(slot.map_or(*d, |m| m.max(*d)));
                }
            }
        }
        Ok(())
    }

    pub fn finish(mut self) -> (ClassifiedCount, AggregateStats) {
        self.close_tx();
        let ids = self.distances.root_ids();
        let counts = self
            .cells
            .into_iter()
            .map(|((r, d, b), n)| (CountKey::new(ids[r].clone(), d, b), n))
            .collect();
        (counts, self.stats)
    }
}

/// Counts a position-sorted transfer stream.
pub fn aggregate<'e, I>(
    events: I,
    distances: &DistanceMap,
    policy: CountingPolicy,
    bucketing: &Bucketing,
) -> Result<ClassifiedCount, ClassifyError>
where
    I: IntoIterator<Item = &'e TransferEvent>,
{
    let mut agg = Aggregator::new(distances, policy, bucketing);
    for e in events {
        agg.push(e)?;
    }
    Ok(agg.finish().0)
}

/// Splits `events` into `shards` transaction-aligned slices, counts them on
/// separate threads and merges the results.
pub fn aggregate_sharded(
    events: &[TransferEvent],
    distances: &DistanceMap,
    policy: CountingPolicy,
    bucketing: &Bucketing,
    shards: usize,
) -> Result<(ClassifiedCount, AggregateStats), ClassifyError> {
    let bounds = shard_bounds(events, shards.max(1));
    let parts: Vec<Result<(ClassifiedCount, AggregateStats), ClassifyError>> =
        std::thread::scope(|s| {
            let handles: Vec<_> = bounds
                .windows(2)
                .map(|w| {
                    let slice = &events[w[0]..w[1]];
                    s.spawn(move || {
                        let mut agg = Aggregator::new(distances, policy, bucketing);
                        for e in slice {
                            agg.push(e)?;
                        }
                        Ok(agg.finish())
                    })
                })
                .collect();
            handles
                .into_iter()
                .map(|h| h.join().expect("aggregation shard panicked"))
                .collect()
        });
    let mut counts = ClassifiedCount::new();
    let mut stats = AggregateStats::default();
    let mut prev_last: Option<&TransferEvent> = None;
    for (part, w) in parts.into_iter().zip(bounds.windows(2)) {
        let (c, s) = part?;
        if let (Some(p), Some(first)) = (prev_last, events.get(w[0])) {
            if w[0] < w[1] {
                check_order(Some(&p.position), &first.position)?;
            }
        }
        if w[0] < w[1] {
            prev_last = events.get(w[1] - 1);
        }
        counts.merge(&c);
        stats += s;
    }
    Ok((counts, stats))
}

/// Cut points at transaction boundaries, roughly evenly spaced.
pub fn shard_bounds(events: &[TransferEvent], shards: usize) -> Vec<usize> {
    let mut bounds = vec![0];
    for i in 1..shards {
        let mut cut = events.len() * i / shards;
        while cut > 0
            && cut < events.len()
            && events[cut].position.tx_hash == events[cut - 1].position.tx_hash
        {
            cut += 1;
        }
        let cut = cut.max(*bounds.last().unwrap());
        bounds.push(cut.min(events.len()));
    }
    bounds.push(events.len());
    bounds
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::chain_model::{keccak256, Address, Amount};
    use crate::derivation_graph::{compute_distances, DerivationGraph, WrapEdge};
    use crate::ingestion::BlockRange;

    fn a(n: u8) -> Address {
        Address([n; 20])
    }

    fn ev(token: Address, from: Address, block: u64, tx: u8, idx: u32) -> TransferEvent {
        TransferEvent {
            token,
            from,
            to: a(200),
            value: Amount::from(1u64),
            position: LogPosition {
                block_number: block,
                tx_hash: keccak256(&[tx]),
                log_index: idx,
            },
        }
    }

    fn fixture() -> (Vec<RootSpec>, DistanceMap) {
        let roots = vec![
            RootSpec::new("DAI", vec![a(1)], 0),
            RootSpec::new("WETH", vec![a(2)], 0),
            RootSpec::new("BTC", vec![a(3)], 1),
        ];
        let g = DerivationGraph::from_edges(
            roots.clone(),
            vec![
                WrapEdge::curated(a(1), a(10), ""),
                WrapEdge::curated(a(2), a(10), ""),
                WrapEdge::curated(a(1), a(11), ""),
                WrapEdge::curated(a(3), a(12), ""),
            ],
        )
        .unwrap();
        (roots, compute_distances(&g))
    }

    fn buckets() -> Bucketing {
        Bucketing::fixed(BlockRange::new(0, 99).unwrap(), 10).unwrap()
    }

    #[test]
    fn labels() {
        let (_, d) = fixture();
        let p = CountingPolicy::default();
        assert!(classify_event(&ev(a(99), a(50), 1, 1, 0), &d, &p).is_empty());
        assert_eq!(classify_event(&ev(a(1), a(50), 1, 1, 0), &d, &p), vec![("DAI", 0)]);
        assert_eq!(
            classify_event(&ev(a(10), a(50), 1, 1, 0), &d, &p),
            vec![("DAI", 1), ("WETH", 1)]
        );
        let mint = ev(a(10), Address::ZERO, 1, 1, 0);
        assert_eq!(classify_event(&mint, &d, &p).len(), 2);
        let strict = CountingPolicy {
            include_mint_burn: false,
            ..p
        };
        assert!(classify_event(&mint, &d, &strict).is_empty());
    }

    #[test]
    fn two_event_fixture_modes() {
        let (_, d) = fixture();
        let events = vec![ev(a(1), a(50), 5, 1, 0), ev(a(11), a(50), 5, 1, 1)];
        let b = buckets();
        let ev_counts = aggregate(&events, &d, CountingPolicy::default(), &b).unwrap();
        assert_eq!(ev_counts.get("DAI", 0, 0), 1);
        assert_eq!(ev_counts.get("DAI", 1, 0), 1);
        assert_eq!(ev_counts.total(), 2);

        let tx_policy = CountingPolicy {
            mode: CountMode::TransactionLevel,
            include_mint_burn: true,
        };
        let tx_counts = aggregate(&events, &d, tx_policy, &b).unwrap();
        assert_eq!(tx_counts.get("DAI", 1, 0), 1);
        assert_eq!(tx_counts.total(), 1);
    }

    #[test]
    fn empty_and_disordered() {
        let (_, d) = fixture();
        let b = buckets();
        assert!(aggregate(&[], &d, CountingPolicy::default(), &b).unwrap().is_empty());
        let events = vec![ev(a(1), a(50), 5, 1, 3), ev(a(1), a(50), 5, 1, 2)];
        assert!(matches!(
            aggregate(&events, &d, CountingPolicy::default(), &b),
            Err(ClassifyError::Order(_))
        ));
    }

    #[test]
    fn mint_burn_delta_is_reported() {
        let (_, d) = fixture();
        let b = buckets();
        let events = vec![
            ev(a(1), a(50), 1, 1, 0),
            ev(a(10), Address::ZERO, 1, 1, 1),
            ev(a(1), a(50), 2, 2, 0),
            ev(a(99), Address::ZERO, 3, 3, 0),
        ];
        let run = |include| {
            let mut agg = Aggregator::new(
                &d,
                CountingPolicy {
                    mode: CountMode::EventLevel,
                    include_mint_burn: include,
                },
                &b,
            );
            for e in &events {
                agg.push(e).unwrap();
            }
            agg.finish()
        };
        let (with, stats) = run(true);
        let (without, _) = run(false);
        assert_eq!(stats.zero_address_events, 1);
        assert_eq!(stats.tracked_events, 3);
        assert_eq!(stats.transactions, 3);
        // the one mint carries two labels
        assert_eq!(with.total() - without.total(), 2);
    }

    #[test]
    fn shares() {
        let roots = vec![RootSpec::new("DAI", vec![a(1)], 0), RootSpec::new("BTC", vec![a(3)], 1)];
        let mut c = ClassifiedCount::new();
        c.add(CountKey::new("DAI", 0, 0), 4_149_654);
        c.add(CountKey::new("DAI", 1, 0), 1_000_000);
        c.add(CountKey::new("DAI", 2, 0), 33_674);
        let s = composed_share(&c, "DAI", 0, &roots).unwrap();
        assert_eq!(s, 1_033_674f64 / 5_183_328f64);
        assert!(matches!(
            composed_share(&c, "DAI", 1, &roots),
            Err(ClassifyError::NoData { .. })
        ));
        assert!(composed_share(&c, "USDC", 0, &roots).is_err());

        let mut btc = ClassifiedCount::new();
        btc.add(CountKey::new("BTC", 1, 0), 10);
        assert_eq!(composed_share(&btc, "BTC", 0, &roots).unwrap(), 0.0);
        btc.add(CountKey::new("BTC", 2, 1), 10);
        assert_eq!(composed_share(&btc, "BTC", 1, &roots).unwrap(), 1.0);
    }

    #[test]
    fn sharding_matches_single_pass() {
        let (_, d) = fixture();
        let b = buckets();
        let tokens = [a(1), a(2), a(10), a(11), a(12), a(3), a(99)];
        let mut events = Vec::new();
        for i in 0..400u32 {
            let block = (i / 5) as u64;
            let tx = (i / 3) as u8;
            let token = tokens[(i as usize * 7) % tokens.len()];
            let from = if i % 11 == 0 { Address::ZERO } else { a(50) };
            let mut e = ev(token, from, block, tx, i);
            e.position.tx_hash = keccak256(&(i / 3).to_be_bytes());
            events.push(e);
        }
        for policy in [
            CountingPolicy::default(),
            CountingPolicy {
                mode: CountMode::TransactionLevel,
                include_mint_burn: false,
            },
        ] {
            let single = aggregate(&events, &d, policy, &b).unwrap();
            for shards in [1, 2, 4, 7] {
                let (merged, _) = aggregate_sharded(&events, &d, policy, &b, shards).unwrap();
                assert_eq!(merged, single, "{shards} shards, {policy}");
            }
        }
    }

    #[test]
    fn monoid_laws() {
        let mut x = ClassifiedCount::new();
        x.add(CountKey::new("DAI", 0, 0), 3);
        let mut y = ClassifiedCount::new();
        y.add(CountKey::new("DAI", 0, 0), 2);
        y.add(CountKey::new("DAI", 1, 4), 1);
        let mut xy = x.clone();
        xy += &y;
        let mut yx = y.clone();
        yx += &x;
        assert_eq!(xy, yx);
        assert_eq!(xy.get("DAI", 0, 0), 5);
        let mut id = x.clone();
        id += &ClassifiedCount::new();
        assert_eq!(id, x);
    }
}
