use std::sync::atomic::{AtomicU64, Ordering};
use std::thread;
use std::time::Duration;

use serde_json::{json, Value};

use super::{check_order, BlockRange, Checkpoint, IngestError, LogCache};
use crate::chain_model::{
    decode_hex_bytes, format_hex_quantity, parse_hex_quantity, transfer_topic0, Address,
    LogPosition, RawLog, Word,
};

/// Blocks behind the head that a fetched range must stay clear of.
pub const REORG_SAFETY_DEPTH: u64 = 64;

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum ProviderError {
    /// The provider refused the span as too large or too many results.
    TooManyResults(String),
    /// Transport-level failure; retried with backoff.
    Network(String),
    Malformed(String),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LogQuery {
    pub range: BlockRange,
    pub topic0: Word,
    pub emitters: Option<Vec<Address>>,
}

/// Source of `eth_getLogs`-style results.
pub trait LogProvider {
    fn get_logs(&self, query: &LogQuery) -> Result<Vec<RawLog>, ProviderError>;
    fn head_block(&self) -> Result<u64, ProviderError>;
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RetryPolicy {
    pub initial_delay: Duration,
    pub factor: u32,
    pub max_attempts: u32,
}

impl Default for RetryPolicy {
    fn default() -> Self {
        RetryPolicy {
            initial_delay: Duration::from_millis(500),
            factor: 2,
            max_attempts: 6,
        }
    }
}

impl RetryPolicy {
    /// No sleeping between attempts; for tests and mocks.
    pub fn immediate(max_attempts: u32) -> Self {
        RetryPolicy {
            initial_delay: Duration::ZERO,
            factor: 1,
            max_attempts,
        }
    }

    fn run<T>(
        &self,
        stats: &mut FetchStats,
        mut op: impl FnMut() -> Result<T, ProviderError>,
    ) -> Result<T, RetryOutcome> {
        let mut delay = self.initial_delay;
        let attempts = self.max_attempts.max(1);
        for attempt in 1..=attempts {
            stats.requests += 1;
            match op() {
                Ok(v) => return Ok(v),
                Err(ProviderError::Network(msg)) => {
                    if attempt == attempts {
                        return Err(RetryOutcome::Fatal(IngestError::NetworkExhausted {
                            attempts,
                            message: msg,
                        }));
                    }
                    stats.retries += 1;
                    if !delay.is_zero() {
                        thread::sleep(delay);
                    }
                    delay *= self.factor;
                }
                Err(ProviderError::TooManyResults(_)) => return Err(RetryOutcome::TooMany),
                Err(ProviderError::Malformed(msg)) => {
                    return Err(RetryOutcome::Fatal(IngestError::MalformedResponse(msg)))
                }
            }
        }
        unreachable!("attempt loop always returns")
    }
}

enum RetryOutcome {
    TooMany,
    Fatal(IngestError),
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct FetchStats {
    pub requests: u64,
    pub retries: u64,
    pub splits: u64,
}

impl FetchStats {
    fn absorb(&mut self, other: FetchStats) {
        self.requests += other.requests;
        self.retries += other.retries;
        self.splits += other.splits;
    }
}

/// Fetches every `Transfer` log in `range`, bisecting the span whenever the
/// provider reports too many results. Output is sorted by position.
pub fn fetch_logs<P: LogProvider + ?Sized>(
    provider: &P,
    range: BlockRange,
    token_filter: Option<&[Address]>,
    retry: &RetryPolicy,
) -> Result<(Vec<RawLog>, FetchStats), IngestError> {
    let topic0 = transfer_topic0();
    let mut stats = FetchStats::default();
    let mut out = Vec::new();
    let mut stack = vec![range];
    while let Some(span) = stack.pop() {
        let query = LogQuery {
            range: span,
            topic0,
            emitters: token_filter.map(|t| t.to_vec()),
        };
        match retry.run(&mut stats, || provider.get_logs(&query)) {
            Ok(logs) => out.extend(logs),
            Err(RetryOutcome::TooMany) => match span.bisect() {
                Some((left, right)) => {
                    stats.splits += 1;
                    stack.push(right);
                    stack.push(left);
                }
                None => {
                    return Err(IngestError::ProviderLimit {
                        block: span.from_block,
                    })
                }
            },
            Err(RetryOutcome::Fatal(e)) => return Err(e),
        }
    }

    out.retain(|log| {
        log.topics.first() == Some(&topic0)
            && token_filter.is_none_or(|f| f.contains(&log.emitter))
    });
    for log in &out {
        if !range.contains(log.position.block_number) {
            return Err(IngestError::MalformedResponse(format!(
                "log at block {} outside requested {range}",
                log.position.block_number
            )));
        }
    }
    out.sort_by_key(|l| l.position);
    let mut last: Option<&LogPosition> = None;
    for log in &out {
        check_order(last, &log.position).map_err(|v| {
            IngestError::MalformedResponse(format!("duplicate or conflicting log positions: {v}"))
        })?;
        last = Some(&log.position);
    }
    Ok((out, stats))
}

#[derive(Debug, Clone)]
pub struct FetchOptions {
    pub segment_blocks: u64,
    pub token_filter: Option<Vec<Address>>,
    pub retry: RetryPolicy,
    pub allow_near_head: bool,
    /// Segments fetched concurrently; writes stay in block order.
    pub workers: usize,
}

impl Default for FetchOptions {
    fn default() -> Self {
        FetchOptions {
            segment_blocks: super::DEFAULT_SEGMENT_BLOCKS,
            token_filter: None,
            retry: RetryPolicy::default(),
            allow_near_head: false,
            workers: 1,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FetchSummary {
    pub new_segments: usize,
    pub new_records: u64,
    pub stats: FetchStats,
    pub checkpoint: Checkpoint,
}

/// Fills the missing segments of `range` in `cache` from `provider`.
///
/// On failure, every segment preceding the failing one has been persisted,
/// so calling again resumes where the failed run stopped.
pub fn fetch_into_cache<P: LogProvider + Sync + ?Sized>(
    provider: &P,
    cache: &mut LogCache,
    range: BlockRange,
    opts: &FetchOptions,
) -> Result<FetchSummary, IngestError> {
    let mut stats = FetchStats::default();
    let plan = cache.plan(&range, opts.segment_blocks);
    if !plan.is_empty() && !opts.allow_near_head {
        let head = match opts.retry.run(&mut stats, || provider.head_block()) {
            Ok(h) => h,
            Err(RetryOutcome::Fatal(e)) => return Err(e),
            Err(RetryOutcome::TooMany) => {
                return Err(IngestError::MalformedResponse(
                    "eth_blockNumber reported a result limit".into(),
                ))
            }
        };
        if range.to_block.saturating_add(REORG_SAFETY_DEPTH) > head {
            return Err(IngestError::NearHead {
                to_block: range.to_block,
                head,
                depth: REORG_SAFETY_DEPTH,
            });
        }
    }

    let filter = opts.token_filter.as_deref();
    let mut new_segments = 0;
    let mut new_records = 0;
    for batch in plan.chunks(opts.workers.max(1)) {
        let results: Vec<Result<(Vec<RawLog>, FetchStats), IngestError>> = if batch.len() == 1 {
            vec![fetch_logs(provider, batch[0], filter, &opts.retry)]
        } else {
            thread::scope(|s| {
                let handles: Vec<_> = batch
                    .iter()
                    .map(|seg| s.spawn(move || fetch_logs(provider, *seg, filter, &opts.retry)))
                    .collect();
                handles
                    .into_iter()
                    .map(|h| h.join().expect("fetch worker panicked"))
                    .collect()
            })
        };
        for (seg, res) in batch.iter().zip(results) {
            let (logs, s) = res?;
            stats.absorb(s);
            if cache.write_segment(*seg, &logs)? {
                new_segments += 1;
                new_records += logs.len() as u64;
            }
        }
    }
    Ok(FetchSummary {
        new_segments,
        new_records,
        stats,
        checkpoint: cache.checkpoint(range.from_block),
    })
}

/// Blocking Ethereum JSON-RPC client over HTTP.
pub struct JsonRpcProvider {
    url: String,
    agent: ureq::Agent,
    next_id: AtomicU64,
}

impl JsonRpcProvider {
    pub fn new(url: impl Into<String>) -> Self {
        let agent = ureq::Agent::config_builder()
            .http_status_as_error(false)
            .timeout_global(Some(Duration::from_secs(120)))
            .build()
            .new_agent();
        JsonRpcProvider {
            url: url.into(),
            agent,
            next_id: AtomicU64::new(1),
        }
    }

    fn call(&self, method: &str, params: Value) -> Result<Value, ProviderError> {
        let id = self.next_id.fetch_add(1, Ordering::Relaxed);
        let body = json!({"jsonrpc": "2.0", "id": id, "method": method, "params": params});
        let mut resp = self
            .agent
            .post(&self.url)
            .send_json(&body)
            .map_err(|e| ProviderError::Network(e.to_string()))?;
        let status = resp.status().as_u16();
        let parsed: Result<Value, _> = resp.body_mut().read_json::<Value>();
        if let Ok(v) = &parsed {
            if let Some(err) = v.get("error") {
                return Err(classify_rpc_error(err));
            }
        }
        if status == 429 || status >= 500 {
            return Err(ProviderError::Network(format!("HTTP {status}")));
        }
        if !(200..300).contains(&status) {
            return Err(ProviderError::Malformed(format!("HTTP {status}")));
        }
        let v = parsed.map_err(|e| ProviderError::Malformed(format!("invalid JSON body: {e}")))?;
        v.get("result")
            .cloned()
            .ok_or_else(|| ProviderError::Malformed("response has neither result nor error".into()))
    }
}

fn classify_rpc_error(err: &Value) -> ProviderError {
    let code = err.get("code").and_then(Value::as_i64).unwrap_or(0);
    let message = err
        .get("message")
        .and_then(Value::as_str)
        .unwrap_or("")
        .to_string();
    let lower = message.to_ascii_lowercase();
    if code == 429 || lower.contains("rate limit") || lower.contains("timeout") {
        return ProviderError::Network(message);
    }
    const LIMIT_HINTS: [&str; 6] = [
        "too many",
        "more than",
        "limit",
        "exceed",
        "range too large",
        "response size",
    ];
    if code == -32005 || LIMIT_HINTS.iter().any(|h| lower.contains(h)) {
        return ProviderError::TooManyResults(message);
    }
    ProviderError::Malformed(format!("rpc error {code}: {message}"))
}

fn field<'a>(obj: &'a Value, key: &str) -> Result<&'a str, ProviderError> {
    obj.get(key)
        .and_then(Value::as_str)
        .ok_or_else(|| ProviderError::Malformed(format!("log object missing string field {key:?}")))
}

/// Converts one `eth_getLogs` result object. Returns `None` for removed logs.
pub(crate) fn parse_rpc_log(obj: &Value) -> Result<Option<RawLog>, ProviderError> {
    if obj.get("removed").and_then(Value::as_bool) == Some(true) {
        return Ok(None);
    }
    let bad = |e: crate::chain_model::HexError| ProviderError::Malformed(e.to_string());
    let topics = obj
        .get("topics")
        .and_then(Value::as_array)
        .ok_or_else(|| ProviderError::Malformed("log object missing topics".into()))?
        .iter()
        .map(|t| {
            t.as_str()
                .ok_or_else(|| ProviderError::Malformed("non-string topic".into()))
                .and_then(|s| s.parse::<Word>().map_err(bad))
        })
        .collect::<Result<Vec<_>, _>>()?;
    let log_index = parse_hex_quantity(field(obj, "logIndex")?).map_err(bad)?;
    Ok(Some(RawLog {
        emitter: field(obj, "address")?.parse().map_err(bad)?,
        topics,
        data: decode_hex_bytes(field(obj, "data")?).map_err(bad)?,
        position: LogPosition {
            block_number: parse_hex_quantity(field(obj, "blockNumber")?).map_err(bad)?,
            tx_hash: field(obj, "transactionHash")?.parse().map_err(bad)?,
            log_index: u32::try_from(log_index)
                .map_err(|_| ProviderError::Malformed(format!("logIndex {log_index} too large")))?,
        },
    }))
}

impl LogProvider for JsonRpcProvider {
    fn get_logs(&self, query: &LogQuery) -> Result<Vec<RawLog>, ProviderError> {
        let mut filter = json!({
            "fromBlock": format_hex_quantity(query.range.from_block),
            "toBlock": format_hex_quantity(query.range.to_block),
            "topics": [query.topic0.to_string()],
        });
        if let Some(emitters) = &query.emitters {
            filter["address"] = Value::from(
                emitters
                    .iter()
                    .map(|a| Value::from(a.to_string()))
                    .collect::<Vec<_>>(),
            );
        }
        let result = self.call("eth_getLogs", json!([filter]))?;
        let items = result
            .as_array()
            .ok_or_else(|| ProviderError::Malformed("eth_getLogs result is not an array".into()))?;
        let mut out = Vec::with_capacity(items.len());
        for item in items {
            if let Some(log) = parse_rpc_log(item)? {
                out.push(log);
            }
        }
        Ok(out)
    }

    fn head_block(&self) -> Result<u64, ProviderError> {
        let v = self.call("eth_blockNumber", json!([]))?;
        let s = v
            .as_str()
            .ok_or_else(|| ProviderError::Malformed("eth_blockNumber result is not a string".into()))?;
        parse_hex_quantity(s).map_err(|e| ProviderError::Malformed(e.to_string()))
    }
}
