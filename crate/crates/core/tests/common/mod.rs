#![allow(dead_code)]

use std::collections::{BTreeMap, HashMap, HashSet};
use std::io::{BufRead, BufReader, Read, Write};
use std::net::TcpListener;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Mutex;

use composability_core::chain_model::{Address, RawLog, TransferEvent};
use composability_core::classification::{Bucketing, ClassifiedCount, CountKey, CountMode, CountingPolicy};
use composability_core::derivation_graph::RootSpec;
use composability_core::ingestion::{LogProvider, LogQuery, ProviderError};

/// In-memory `eth_getLogs` endpoint that refuses spans over `max_span`
/// blocks or answers over `max_results` logs, and fails every request
/// in a scripted outage window.
pub struct MockEndpoint {
    pub logs: Vec<RawLog>,
    pub head: u64,
    pub max_span: u64,
    pub max_results: usize,
    pub requests: AtomicU64,
    pub refusals: AtomicU64,
    outage: Mutex<Option<(u64, u64)>>,
}

impl MockEndpoint {
    pub fn new(logs: Vec<RawLog>, head: u64) -> Self {
        MockEndpoint {
            logs,
            head,
            max_span: u64::MAX,
            max_results: usize::MAX,
            requests: AtomicU64::new(0),
            refusals: AtomicU64::new(0),
            outage: Mutex::new(None),
        }
    }

    /// Requests numbered `from..from + len` (0-based) fail with a network error.
    pub fn outage(&self, from: u64, len: u64) {
        *self.outage.lock().unwrap() = Some((from, len));
    }

    pub fn clear_outage(&self) {
        *self.outage.lock().unwrap() = None;
    }
}

impl LogProvider for MockEndpoint {
    fn get_logs(&self, q: &LogQuery) -> Result<Vec<RawLog>, ProviderError> {
        let n = self.requests.fetch_add(1, Ordering::SeqCst);
        if let Some((from, len)) = *self.outage.lock().unwrap() {
            if n >= from && n < from + len {
                return Err(ProviderError::Network("connection reset".into()));
            }
        }
        if q.range.block_count() > self.max_span {
            self.refusals.fetch_add(1, Ordering::SeqCst);
            return Err(ProviderError::TooManyResults("block range too wide".into()));
        }
        let out: Vec<RawLog> = self
            .logs
            .iter()
            .filter(|l| q.range.contains(l.position.block_number))
            .filter(|l| l.topics.first() == Some(&q.topic0))
            .filter(|l| q.emitters.as_ref().is_none_or(|e| e.contains(&l.emitter)))
            .cloned()
            .collect();
        if out.len() > self.max_results {
            self.refusals.fetch_add(1, Ordering::SeqCst);
            return Err(ProviderError::TooManyResults("query returned more than 10000 results".into()));
        }
        Ok(out)
    }

    fn head_block(&self) -> Result<u64, ProviderError> {
        Ok(self.head)
    }
}

/// Shortest distance from any member of `root` to every reachable node: the
/// smallest `k` for which some walk of exactly `k` edges arrives there, found
/// by expanding the whole walk frontier one length at a time.
pub fn brute_force_distances(root: &RootSpec, edges: &[(Address, Address)]) -> HashMap<Address, u32> {
    let nodes: HashSet<Address> = edges
        .iter()
        .flat_map(|(p, c)| [*p, *c])
        .chain(root.member_tokens.iter().copied())
        .collect();
    let mut best = HashMap::new();
    let mut frontier: HashSet<Address> = root.member_tokens.iter().copied().collect();
    for k in 0..=nodes.len() as u32 {
        for n in &frontier {
            best.entry(*n).or_insert(root.initial_distance + k);
        }
        frontier = edges
            .iter()
            .filter(|(p, _)| frontier.contains(p))
            .map(|(_, c)| *c)
            .collect();
        if frontier.is_empty() {
            break;
        }
    }
    best
}

/// Counts transfers one event at a time with labels from the brute-force
/// distances.
pub fn naive_counts(
    events: &[TransferEvent],
    roots: &[RootSpec],
    edges: &[(Address, Address)],
    policy: CountingPolicy,
    bucketing: &Bucketing,
) -> ClassifiedCount {
    let dist: Vec<HashMap<Address, u32>> = roots.iter().map(|r| brute_force_distances(r, edges)).collect();
    let mut counts = ClassifiedCount::new();
    let mut per_tx: BTreeMap<(u64, [u8; 32]), BTreeMap<usize, u32>> = BTreeMap::new();
    let mut tx_order = Vec::new();
    for e in events {
        if !policy.include_mint_burn && (e.from == Address::ZERO || e.to == Address::ZERO) {
            continue;
        }
        let Some(bucket) = bucketing.bucket_of(e.position.block_number) else {
            continue;
        };
        let key = (e.position.block_number, e.position.tx_hash.0);
        if !per_tx.contains_key(&key) {
            tx_order.push(key);
            per_tx.insert(key, BTreeMap::new());
        }
        for (r, d) in dist.iter().enumerate() {
            if let Some(delta) = d.get(&e.token) {
                match policy.mode {
                    CountMode::EventLevel => counts.add(CountKey::new(roots[r].root_id.clone(), *delta, bucket), 1),
                    CountMode::TransactionLevel => {
                        let m = per_tx.get_mut(&key).unwrap().entry(r).or_insert(*delta);
                        *m = (*m).max(*delta);
                    }
                }
            }
        }
    }
    for key in tx_order {
        let bucket = bucketing.bucket_of(key.0);
        for (r, d) in &per_tx[&key] {
            counts.add(CountKey::new(roots[*r].root_id.clone(), *d, bucket.unwrap()), 1);
        }
    }
    counts
}

/// A one-thread HTTP/1.1 server that answers each POST body with
/// `respond(body)` as `(status, json)`. Returns the base URL.
pub fn serve_json<F>(respond: F) -> String
where
    F: Fn(&str) -> (u16, String) + Send + 'static,
{
    let listener = TcpListener::bind("127.0.0.1:0").unwrap();
    let addr = listener.local_addr().unwrap();
    std::thread::spawn(move || {
        for stream in listener.incoming() {
            let Ok(mut stream) = stream else { continue };
            let mut reader = BufReader::new(stream.try_clone().unwrap());
            let mut length = 0usize;
            loop {
                let mut line = String::new();
                if reader.read_line(&mut line).unwrap_or(0) == 0 {
                    break;
                }
                let l = line.trim_end();
                if l.is_empty() {
                    break;
                }
                if let Some((k, v)) = l.split_once(':') {
                    if k.eq_ignore_ascii_case("content-length") {
                        length = v.trim().parse().unwrap_or(0);
                    }
                }
            }
            let mut body = vec![0; length];
            if reader.read_exact(&mut body).is_err() {
                continue;
            }
            let (status, json) = respond(&String::from_utf8_lossy(&body));
            let reply = format!(
                "HTTP/1.1 {status} X\r\ncontent-type: application/json\r\ncontent-length: {}\r\nconnection: close\r\n\r\n{json}",
                json.len()
            );
            let _ = stream.write_all(reply.as_bytes());
        }
    });
    format!("http://{addr}")
}

pub fn log_json(log: &RawLog) -> serde_json::Value {
    serde_json::json!({
        "address": log.emitter.to_string(),
        "topics": log.topics.iter().map(|t| t.to_string()).collect::<Vec<_>>(),
        "data": composability_core::chain_model::encode_hex_bytes(&log.data),
        "blockNumber": format!("{:#x}", log.position.block_number),
        "transactionHash": log.position.tx_hash.to_string(),
        "logIndex": format!("{:#x}", log.position.log_index),
        "removed": false,
    })
}

/// Serves `endpoint` as JSON-RPC over HTTP. Refusals become `-32005` errors
/// and outages become HTTP 503.
pub fn serve_endpoint(endpoint: std::sync::Arc<MockEndpoint>) -> String {
    use composability_core::chain_model::{parse_hex_quantity, Word};
    use composability_core::ingestion::BlockRange;
    serve_json(move |body| {
        let req: serde_json::Value = serde_json::from_str(body).unwrap();
        let id = req["id"].clone();
        let reply = |result: serde_json::Value| (200, serde_json::json!({"jsonrpc": "2.0", "id": id, "result": result}).to_string());
        match req["method"].as_str().unwrap() {
            "eth_blockNumber" => reply(format!("{:#x}", endpoint.head).into()),
            "eth_getLogs" => {
                let f = &req["params"][0];
                let range = BlockRange::new(
                    parse_hex_quantity(f["fromBlock"].as_str().unwrap()).unwrap(),
                    parse_hex_quantity(f["toBlock"].as_str().unwrap()).unwrap(),
                )
                .unwrap();
                let topic0: Word = f["topics"][0].as_str().unwrap().parse().unwrap();
                let emitters = f["address"].as_array().map(|a| {
                    a.iter().map(|v| v.as_str().unwrap().parse().unwrap()).collect()
                });
                match endpoint.get_logs(&LogQuery { range, topic0, emitters }) {
                    Ok(logs) => reply(logs.iter().map(log_json).collect::<Vec<_>>().into()),
                    Err(ProviderError::TooManyResults(m)) => (
                        200,
                        serde_json::json!({"jsonrpc": "2.0", "id": id, "error": {"code": -32005, "message": m}}).to_string(),
                    ),
                    Err(_) => (503, "{}".to_string()),
                }
            }
            other => panic!("unexpected method {other}"),
        }
    })
}

/// Every file under `dir` with its bytes, keyed by relative path; the lock
/// file is skipped.
pub fn dir_snapshot(dir: &std::path::Path) -> BTreeMap<String, Vec<u8>> {
    fn visit(base: &std::path::Path, dir: &std::path::Path, out: &mut BTreeMap<String, Vec<u8>>) {
        for entry in std::fs::read_dir(dir).unwrap() {
            let path = entry.unwrap().path();
            if path.is_dir() {
                visit(base, &path, out);
            } else if path.file_name().unwrap() != ".lock" {
                let rel = path.strip_prefix(base).unwrap().to_string_lossy().into_owned();
                out.insert(rel, std::fs::read(&path).unwrap());
            }
        }
    }
    let mut out = BTreeMap::new();
    visit(dir, dir, &mut out);
    out
}
