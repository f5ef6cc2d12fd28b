//! Raw-log acquisition: the tab-separated line format, file replay,
//! transaction grouping, the segmented on-disk cache and the JSON-RPC fetcher.

mod cache;
mod rpc;
mod scan;

use std::fmt;
use std::fs::File;
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};

use thiserror::Error;

use crate::chain_model::{
    decode_hex_bytes, encode_hex_bytes, Address, HexError, LogPosition, Positioned, RawLog, Word,
};

pub use cache::{write_cache, CacheLock, CacheSegment, Checkpoint, LogCache, CHECKPOINT_FILE};
pub use scan::{transfers, CachedRange, ScanStats, TransferScan, Transfers};
pub use rpc::{
    fetch_into_cache, fetch_logs, FetchOptions, FetchStats, FetchSummary, JsonRpcProvider,
    LogProvider, LogQuery, ProviderError, RetryPolicy, REORG_SAFETY_DEPTH,
};

/// Environment variable holding the default JSON-RPC endpoint.
pub const RPC_URL_ENV: &str = "COMPOSABILITY_RPC_URL";

/// Default cache segment width in blocks.
pub const DEFAULT_SEGMENT_BLOCKS: u64 = 10_000;

#[derive(Debug, Error)]
pub enum IngestError {
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}:{line}: {message}")]
    Parse {
        path: PathBuf,
        line: usize,
        message: String,
    },
    #[error(transparent)]
    Order(#[from] OrderViolation),
    #[error("log at block {block} lies outside {range}")]
    OutOfRange { block: u64, range: BlockRange },
    #[error("invalid block range: from {from} > to {to}")]
    InvalidRange { from: u64, to: u64 },
    #[error("cache corrupted: {0}")]
    Corrupt(String),
    #[error("cache is locked by another process ({0})")]
    Locked(PathBuf),
    #[error("network failure after {attempts} attempts: {message}")]
    NetworkExhausted { attempts: u32, message: String },
    #[error("provider result limit hit on single block {block}; cannot subdivide further")]
    ProviderLimit { block: u64 },
    #[error("malformed provider response: {0}")]
    MalformedResponse(String),
    #[error("range ends at {to_block}, within {depth} blocks of chain head {head}; pass allow_near_head to override")]
    NearHead { to_block: u64, head: u64, depth: u64 },
}

impl IngestError {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        IngestError::Io {
            path: path.into(),
            source,
        }
    }
}

/// Two consecutive stream items that are not in strict position order.
#[derive(Debug, Error, Clone, PartialEq, Eq)]
#[error("ordering violation: ({prev_block}, {prev_index}) followed by ({next_block}, {next_index})")]
pub struct OrderViolation {
    pub prev_block: u64,
    pub prev_index: u32,
    pub next_block: u64,
    pub next_index: u32,
}

impl OrderViolation {
    pub fn between(prev: &LogPosition, next: &LogPosition) -> Self {
        OrderViolation {
            prev_block: prev.block_number,
            prev_index: prev.log_index,
            next_block: next.block_number,
            next_index: next.log_index,
        }
    }
}

/// Checks strict `(block, log_index)` order between consecutive positions.
pub fn check_order(prev: Option<&LogPosition>, next: &LogPosition) -> Result<(), OrderViolation> {
    match prev {
        Some(p) if !p.strictly_before(next) => Err(OrderViolation::between(p, next)),
        _ => Ok(()),
    }
}

/// Inclusive block interval.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct BlockRange {
    pub from_block: u64,
    pub to_block: u64,
}

impl BlockRange {
    pub fn new(from_block: u64, to_block: u64) -> Result<Self, IngestError> {
        if from_block > to_block {
            return Err(IngestError::InvalidRange {
                from: from_block,
                to: to_block,
            });
        }
        Ok(BlockRange {
            from_block,
            to_block,
        })
    }

    pub fn contains(&self, block: u64) -> bool {
        self.from_block <= block && block <= self.to_block
    }

    pub fn block_count(&self) -> u64 {
        self.to_block - self.from_block + 1
    }

    /// Splits into consecutive pieces of at most `width` blocks.
    pub fn chunks(&self, width: u64) -> Vec<BlockRange> {
        let width = width.max(1);
        let mut out = Vec::new();
        let mut start = self.from_block;
        loop {
            let end = start.saturating_add(width - 1).min(self.to_block);
            out.push(BlockRange {
                from_block: start,
                to_block: end,
            });
            if end == self.to_block {
                break;
            }
            start = end + 1;
        }
        out
    }

    /// Halves the range; `None` for a single block.
    pub fn bisect(&self) -> Option<(BlockRange, BlockRange)> {
        if self.from_block == self.to_block {
            return None;
        }
        let mid = self.from_block + (self.to_block - self.from_block) / 2;
        Some((
            BlockRange {
                from_block: self.from_block,
                to_block: mid,
            },
            BlockRange {
                from_block: mid + 1,
                to_block: self.to_block,
            },
        ))
    }
}

impl fmt::Display for BlockRange {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "[{}, {}]", self.from_block, self.to_block)
    }
}

/// Formats one log as a raw-log line (no trailing newline).
///
/// `block_number<TAB>tx_hash<TAB>log_index<TAB>emitter<TAB>topics<TAB>data`,
/// with block and index in decimal, topics comma-separated.
pub fn format_log_line(log: &RawLog) -> String {
    let topics = log
        .topics
        .iter()
        .map(|t| t.to_string())
        .collect::<Vec<_>>()
        .join(",");
    format!(
        "{}\t{}\t{}\t{}\t{}\t{}",
        log.position.block_number,
        log.position.tx_hash,
        log.position.log_index,
        log.emitter,
        topics,
        encode_hex_bytes(&log.data)
    )
}

/// Parses one raw-log line. The error is a bare message; callers attach location.
pub fn parse_log_line(line: &str) -> Result<RawLog, String> {
    let fields: Vec<&str> = line.split('\t').collect();
    if fields.len() != 6 {
        return Err(format!("expected 6 tab-separated fields, found {}", fields.len()));
    }
    let hex_err = |what: &str, e: HexError| format!("{what}: {e}");
    let block_number = fields[0]
        .parse::<u64>()
        .map_err(|e| format!("block_number: {e}"))?;
    let tx_hash: Word = fields[1].parse().map_err(|e| hex_err("tx_hash", e))?;
    let log_index = fields[2]
        .parse::<u32>()
        .map_err(|e| format!("log_index: {e}"))?;
    let emitter: Address = fields[3].parse().map_err(|e| hex_err("emitter", e))?;
    let topics = if fields[4].is_empty() {
        Vec::new()
    } else {
        fields[4]
            .split(',')
            .map(|t| t.parse::<Word>().map_err(|e| hex_err("topic", e)))
            .collect::<Result<Vec<_>, _>>()?
    };
    if topics.len() > 4 {
        return Err(format!("at most 4 topics allowed, found {}", topics.len()));
    }
    let data = decode_hex_bytes(fields[5]).map_err(|e| hex_err("data", e))?;
    Ok(RawLog {
        emitter,
        topics,
        data,
        position: LogPosition {
            block_number,
            tx_hash,
            log_index,
        },
    })
}

/// Writes logs in raw-log line format, one per line.
pub fn write_log_lines<'a, W: Write>(
    out: &mut W,
    logs: impl IntoIterator<Item = &'a RawLog>,
) -> std::io::Result<u64> {
    let mut n = 0;
    for log in logs {
        writeln!(out, "{}", format_log_line(log))?;
        n += 1;
    }
    Ok(n)
}

/// Streaming reader over a raw-log file. Verifies strict ordering and stops
/// after the first error.
pub struct LogFileReader {
    path: PathBuf,
    lines: std::io::Lines<BufReader<File>>,
    line_no: usize,
    last: Option<LogPosition>,
    done: bool,
}

impl Iterator for LogFileReader {
    type Item = Result<RawLog, IngestError>;

    fn next(&mut self) -> Option<Self::Item> {
        if self.done {
            return None;
        }
        loop {
            let line = match self.lines.next()? {
                Ok(l) => l,
                Err(e) => {
                    self.done = true;
                    return Some(Err(IngestError::io(&self.path, e)));
                }
            };
            self.line_no += 1;
            if line.is_empty() {
                continue;
            }
            let log = match parse_log_line(&line) {
                Ok(log) => log,
                Err(message) => {
                    self.done = true;
                    return Some(Err(IngestError::Parse {
                        path: self.path.clone(),
                        line: self.line_no,
                        message,
                    }));
                }
            };
            if let Err(v) = check_order(self.last.as_ref(), &log.position) {
                self.done = true;
                return Some(Err(IngestError::Parse {
                    path: self.path.clone(),
                    line: self.line_no,
                    message: v.to_string(),
                }));
            }
            self.last = Some(log.position);
            return Some(Ok(log));
        }
    }
}

/// Replays a raw-log file in file order without loading it into memory.
pub fn replay_file(path: impl AsRef<Path>) -> Result<LogFileReader, IngestError> {
    let path = path.as_ref().to_path_buf();
    let file = File::open(&path).map_err(|e| IngestError::io(&path, e))?;
    Ok(LogFileReader {
        path,
        lines: BufReader::new(file).lines(),
        line_no: 0,
        last: None,
        done: false,
    })
}

/// Groups a position-sorted stream into per-transaction batches.
///
/// A transaction's logs must be contiguous; a hash reappearing after its
/// group closed within the same block is an ordering violation.
pub struct TxGroups<I, T> {
    inner: I,
    pending: Option<T>,
    last: Option<LogPosition>,
    closed_in_block: Vec<Word>,
    failed: bool,
}

impl<I, T, E> Iterator for TxGroups<I, T>
where
    I: Iterator<Item = Result<T, E>>,
    T: Positioned,
    E: From<OrderViolation>,
{
    type Item = Result<(Word, Vec<T>), E>;

    fn next(&mut self) -> Option<Self::Item> {
        if self.failed {
            return None;
        }
        let first = match self.pending.take() {
            Some(item) => item,
            None => match self.pull()? {
                Ok(item) => item,
                Err(e) => return Some(Err(e)),
            },
        };
        let tx = first.position().tx_hash;
        let block = first.position().block_number;
        let mut group = vec![first];
        loop {
            match self.pull() {
                None => break,
                Some(Err(e)) => return Some(Err(e)),
                Some(Ok(item)) => {
                    if item.position().tx_hash == tx {
                        group.push(item);
                    } else {
                        if item.position().block_number != block {
                            self.closed_in_block.clear();
                        } else {
                            self.closed_in_block.push(tx);
                        }
                        self.pending = Some(item);
                        break;
                    }
                }
            }
        }
        if self.pending.is_none() {
            self.closed_in_block.clear();
        }
        Some(Ok((tx, group)))
    }
}

impl<I, T, E> TxGroups<I, T>
where
    I: Iterator<Item = Result<T, E>>,
    T: Positioned,
    E: From<OrderViolation>,
{
    fn pull(&mut self) -> Option<Result<T, E>> {
        match self.inner.next()? {
            Err(e) => {
                self.failed = true;
                Some(Err(e))
            }
            Ok(item) => {
                let pos = *item.position();
                if let Err(v) = check_order(self.last.as_ref(), &pos) {
                    self.failed = true;
                    return Some(Err(v.into()));
                }
                if self.closed_in_block.contains(&pos.tx_hash)
                    && self.last.map(|l| l.block_number) == Some(pos.block_number)
                {
                    self.failed = true;
                    let prev = self.last.unwrap_or(pos);
                    return Some(Err(OrderViolation::between(&prev, &pos).into()));
                }
                self.last = Some(pos);
                Some(Ok(item))
            }
        }
    }
}

/// Groups a fallible, position-sorted stream by transaction hash.
pub fn group_by_transaction<I, T, E>(items: I) -> TxGroups<I::IntoIter, T>
where
    I: IntoIterator<Item = Result<T, E>>,
    T: Positioned,
    E: From<OrderViolation>,
{
    TxGroups {
        inner: items.into_iter(),
        pending: None,
        last: None,
        closed_in_block: Vec::new(),
        failed: false,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::chain_model::{encode_transfer, keccak256, Amount, TransferEvent};

    fn log(block: u64, tx: u8, idx: u32) -> RawLog {
        encode_transfer(&TransferEvent {
            token: Address([7; 20]),
            from: Address([1; 20]),
            to: Address([2; 20]),
            value: Amount::from(idx as u64 + 1),
            position: LogPosition {
                block_number: block,
                tx_hash: keccak256(&[tx]),
                log_index: idx,
            },
        })
    }

    #[test]
    fn line_round_trip() {
        let l = log(9_193_266, 1, 0);
        let line = format_log_line(&l);
        assert_eq!(line.split('\t').count(), 6);
        assert!(line.starts_with("9193266\t0x"));
        assert_eq!(parse_log_line(&line).unwrap(), l);

        let mut odd = l.clone();
        odd.topics.clear();
        odd.data.clear();
        assert_eq!(parse_log_line(&format_log_line(&odd)).unwrap(), odd);
    }

    #[test]
    fn bad_lines() {
        assert!(parse_log_line("1\t2").is_err());
        let good = format_log_line(&log(1, 1, 0));
        assert!(parse_log_line(&good.replace("\t0x0707", "\t0xzz07")).is_err());
        let five = format!("{}\t0x", good.rsplit_once('\t').unwrap().0.rsplit_once('\t').unwrap().0);
        let many = format!(
            "{}\t{},{},{},{},{}\t0x",
            five.rsplit_once('\t').unwrap().0,
            Word::ZERO,
            Word::ZERO,
            Word::ZERO,
            Word::ZERO,
            Word::ZERO
        );
        assert!(parse_log_line(&many).unwrap_err().contains("at most 4"));
    }

    #[test]
    fn range_helpers() {
        assert!(BlockRange::new(5, 4).is_err());
        let r = BlockRange::new(10, 34).unwrap();
        let c = r.chunks(10);
        assert_eq!(c.len(), 3);
        assert_eq!(c[2], BlockRange::new(30, 34).unwrap());
        assert_eq!(r.block_count(), 25);
        let (a, b) = r.bisect().unwrap();
        assert_eq!((a.to_block + 1, b.to_block), (b.from_block, 34));
        assert!(BlockRange::new(3, 3).unwrap().bisect().is_none());
        assert_eq!(BlockRange::new(0, u64::MAX).unwrap().chunks(u64::MAX).len(), 2);
    }

    fn ok(logs: Vec<RawLog>) -> Vec<Result<RawLog, OrderViolation>> {
        logs.into_iter().map(Ok).collect()
    }

    #[test]
    fn grouping_single_tx() {
        let groups: Vec<_> = group_by_transaction(ok(vec![log(1, 1, 0), log(1, 1, 1), log(1, 1, 2)]))
            .collect::<Result<_, _>>()
            .unwrap();
        assert_eq!(groups.len(), 1);
        assert_eq!(groups[0].1.len(), 3);
        assert_eq!(groups[0].0, keccak256(&[1]));
    }

    #[test]
    fn grouping_conserves() {
        let input = vec![
            log(1, 1, 0),
            log(1, 2, 1),
            log(1, 2, 2),
            log(2, 3, 0),
            log(3, 4, 0),
            log(3, 4, 5),
        ];
        let groups: Vec<_> = group_by_transaction(ok(input.clone()))
            .collect::<Result<Vec<_>, _>>()
            .unwrap();
        assert_eq!(groups.len(), 4);
        let flat: Vec<RawLog> = groups.into_iter().flat_map(|(_, g)| g).collect();
        assert_eq!(flat, input);
    }

    #[test]
    fn grouping_rejects_disorder() {
        let res: Result<Vec<_>, _> =
            group_by_transaction(ok(vec![log(2, 1, 0), log(1, 2, 0)])).collect();
        assert!(res.is_err());
        // tx 1 reappears after tx 2 inside the same block
        let res: Result<Vec<_>, _> =
            group_by_transaction(ok(vec![log(1, 1, 0), log(1, 2, 1), log(1, 1, 2)])).collect();
        assert!(res.is_err());
        let res: Result<Vec<_>, _> =
            group_by_transaction(ok(vec![log(1, 1, 0), log(1, 1, 0)])).collect();
        assert!(res.is_err());
    }

    #[test]
    fn replay_checks_order() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("logs.tsv");
        let a = log(1, 1, 0);
        let b = log(1, 1, 1);
        std::fs::write(
            &path,
            format!("{}\n{}\n{}\n", format_log_line(&a), format_log_line(&b), format_log_line(&b)),
        )
        .unwrap();
        let items: Vec<_> = replay_file(&path).unwrap().collect();
        assert_eq!(items.len(), 3);
        assert!(items[0].is_ok() && items[1].is_ok());
        match &items[2] {
            Err(IngestError::Parse { line, .. }) => assert_eq!(*line, 3),
            other => panic!("unexpected {other:?}"),
        }

        std::fs::write(&path, "").unwrap();
        assert_eq!(replay_file(&path).unwrap().count(), 0);

        std::fs::write(&path, "garbage\n").unwrap();
        let first = replay_file(&path).unwrap().next().unwrap();
        assert!(matches!(first, Err(IngestError::Parse { line: 1, .. })));
    }
}
