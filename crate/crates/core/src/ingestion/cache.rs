use std::collections::BTreeMap;
use std::fs::{self, File, OpenOptions};
use std::io::Write;
use std::path::{Path, PathBuf};

use sha2::{Digest, Sha256};

use super::{
    check_order, format_log_line, replay_file, BlockRange, IngestError, LogFileReader,
};
use crate::chain_model::{LogPosition, RawLog, Word};

pub const CHECKPOINT_FILE: &str = "checkpoint.txt";
const SEGMENT_DIR: &str = "segments";
const LOCK_FILE: &str = ".lock";

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct CacheSegment {
    pub range: BlockRange,
    pub record_count: u64,
    /// SHA-256 of the segment file bytes.
    pub checksum: Word,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Checkpoint {
    /// Highest block of the completed run of segments starting at the
    /// requested `from_block`; `None` when that block itself is not cached.
    pub last_complete_block: Option<u64>,
    pub segments: Vec<CacheSegment>,
}

impl Checkpoint {
    fn compute(from_block: u64, segments: &BTreeMap<u64, CacheSegment>) -> Self {
        let mut last = None;
        let mut expect = from_block;
        for seg in segments.values() {
            if seg.range.from_block > expect {
                break;
            }
            if seg.range.to_block >= expect {
                last = Some(seg.range.to_block);
                match seg.range.to_block.checked_add(1) {
                    Some(n) => expect = n,
                    None => break,
                }
            }
        }
        Checkpoint {
            last_complete_block: last,
            segments: segments.values().cloned().collect(),
        }
    }

    pub fn total_records(&self) -> u64 {
        self.segments.iter().map(|s| s.record_count).sum()
    }
}

/// Exclusive advisory lock on a cache directory, released on drop.
#[derive(Debug)]
pub struct CacheLock {
    _file: File,
}

/// A directory of block-range segments plus a checkpoint record.
///
/// Segment files use the raw-log line format and are written through a
/// temporary file and rename; the checkpoint is rewritten the same way after
/// every segment, so an interrupted run leaves only whole segments behind.
#[derive(Debug)]
pub struct LogCache {
    dir: PathBuf,
    origin: Option<u64>,
    segments: BTreeMap<u64, CacheSegment>,
}

fn sha256_file(path: &Path) -> Result<Word, IngestError> {
    let bytes = fs::read(path).map_err(|e| IngestError::io(path, e))?;
    Ok(Word(Sha256::digest(&bytes).into()))
}

fn write_atomic(path: &Path, bytes: &[u8]) -> Result<(), IngestError> {
    let tmp = path.with_extension("tmp");
    {
        let mut f = File::create(&tmp).map_err(|e| IngestError::io(&tmp, e))?;
        f.write_all(bytes).map_err(|e| IngestError::io(&tmp, e))?;
        f.sync_all().map_err(|e| IngestError::io(&tmp, e))?;
    }
    fs::rename(&tmp, path).map_err(|e| IngestError::io(path, e))
}

impl LogCache {
    /// Opens (creating if needed) a cache directory and loads its checkpoint.
    pub fn open(dir: impl AsRef<Path>) -> Result<Self, IngestError> {
        let dir = dir.as_ref().to_path_buf();
        fs::create_dir_all(dir.join(SEGMENT_DIR)).map_err(|e| IngestError::io(&dir, e))?;
        let mut cache = LogCache {
            dir,
            origin: None,
            segments: BTreeMap::new(),
        };
        let cp = cache.dir.join(CHECKPOINT_FILE);
        if cp.exists() {
            let text = fs::read_to_string(&cp).map_err(|e| IngestError::io(&cp, e))?;
            cache.parse_checkpoint(&text)?;
        }
        Ok(cache)
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    /// Takes the directory's advisory lock without blocking.
    pub fn lock(&self) -> Result<CacheLock, IngestError> {
        let path = self.dir.join(LOCK_FILE);
        let file = OpenOptions::new()
            .create(true)
            .truncate(false)
            .write(true)
            .open(&path)
            .map_err(|e| IngestError::io(&path, e))?;
        match file.try_lock() {
            Ok(()) => Ok(CacheLock { _file: file }),
            Err(fs::TryLockError::WouldBlock) => Err(IngestError::Locked(path)),
            Err(fs::TryLockError::Error(e)) => Err(IngestError::io(&path, e)),
        }
    }

    fn parse_checkpoint(&mut self, text: &str) -> Result<(), IngestError> {
        let corrupt = |line: &str| IngestError::Corrupt(format!("bad checkpoint line {line:?}"));
        for line in text.lines() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| corrupt(line))?;
            match key {
                "from_block" => {
                    self.origin = Some(value.parse().map_err(|_| corrupt(line))?);
                }
                "last_complete_block" => {}
                "segment" => {
                    let parts: Vec<&str> = value.split(',').collect();
                    if parts.len() != 4 {
                        return Err(corrupt(line));
                    }
                    let from = parts[0].parse().map_err(|_| corrupt(line))?;
                    let to = parts[1].parse().map_err(|_| corrupt(line))?;
                    let range = BlockRange::new(from, to).map_err(|_| corrupt(line))?;
                    let seg = CacheSegment {
                        range,
                        record_count: parts[2].parse().map_err(|_| corrupt(line))?,
                        checksum: parts[3].parse().map_err(|_| corrupt(line))?,
                    };
                    self.segments.insert(from, seg);
                }
                _ => return Err(corrupt(line)),
            }
        }
        let mut prev: Option<&CacheSegment> = None;
        for seg in self.segments.values() {
            if let Some(p) = prev {
                if p.range.to_block >= seg.range.from_block {
                    return Err(IngestError::Corrupt(format!(
                        "overlapping segments {} and {}",
                        p.range, seg.range
                    )));
                }
            }
            prev = Some(seg);
        }
        Ok(())
    }

    fn render_checkpoint(&self) -> String {
        let origin = self.origin.unwrap_or(0);
        let cp = Checkpoint::compute(origin, &self.segments);
        let mut out = String::new();
        out.push_str(&format!("from_block={origin}\n"));
        match cp.last_complete_block {
            Some(b) => out.push_str(&format!("last_complete_block={b}\n")),
            None => out.push_str("last_complete_block=none\n"),
        }
        for seg in self.segments.values() {
            out.push_str(&format!(
                "segment={},{},{},{}\n",
                seg.range.from_block, seg.range.to_block, seg.record_count, seg.checksum
            ));
        }
        out
    }

    fn segment_path(&self, range: &BlockRange) -> PathBuf {
        self.dir
            .join(SEGMENT_DIR)
            .join(format!("{:012}-{:012}.tsv", range.from_block, range.to_block))
    }

    pub fn segments(&self) -> impl Iterator<Item = &CacheSegment> {
        self.segments.values()
    }

    pub fn checkpoint(&self, from_block: u64) -> Checkpoint {
        Checkpoint::compute(from_block, &self.segments)
    }

    /// Sub-ranges of `range` not covered by any segment, in ascending order.
    pub fn uncovered(&self, range: &BlockRange) -> Vec<BlockRange> {
        let mut out = Vec::new();
        let mut cursor = Some(range.from_block);
        for seg in self.segments.values() {
            let Some(c) = cursor else { break };
            if seg.range.to_block < c {
                continue;
            }
            if seg.range.from_block > range.to_block {
                break;
            }
            if seg.range.from_block > c {
                out.push(BlockRange {
                    from_block: c,
                    to_block: seg.range.from_block - 1,
                });
            }
            cursor = seg.range.to_block.checked_add(1);
        }
        if let Some(c) = cursor {
            if c <= range.to_block {
                out.push(BlockRange {
                    from_block: c,
                    to_block: range.to_block,
                });
            }
        }
        out
    }

    /// First uncovered sub-range of `range`, if any.
    pub fn coverage_gap(&self, range: &BlockRange) -> Option<BlockRange> {
        self.uncovered(range).into_iter().next()
    }

    /// Segment ranges still to be written for `range`, each at most `width` blocks.
    pub fn plan(&self, range: &BlockRange, width: u64) -> Vec<BlockRange> {
        self.uncovered(range)
            .iter()
            .flat_map(|gap| gap.chunks(width))
            .collect()
    }

    /// Persists one segment. Returns `false` when an identical segment already
    /// exists; a different segment over the same range is a corruption error.
    pub fn write_segment(&mut self, range: BlockRange, logs: &[RawLog]) -> Result<bool, IngestError> {
        let mut last: Option<&LogPosition> = None;
        let mut body = String::new();
        for log in logs {
            if !range.contains(log.position.block_number) {
                return Err(IngestError::OutOfRange {
                    block: log.position.block_number,
                    range,
                });
            }
            check_order(last, &log.position)?;
            last = Some(&log.position);
            body.push_str(&format_log_line(log));
            body.push('\n');
        }
        let checksum = Word(Sha256::digest(body.as_bytes()).into());

        if let Some(existing) = self.segments.get(&range.from_block) {
            if existing.range == range && existing.checksum == checksum {
                return Ok(false);
            }
            return Err(IngestError::Corrupt(format!(
                "segment {} already cached with different contents",
                existing.range
            )));
        }
        if self
            .segments
            .values()
            .any(|s| s.range.from_block <= range.to_block && range.from_block <= s.range.to_block)
        {
            return Err(IngestError::Corrupt(format!(
                "segment {range} overlaps an existing segment"
            )));
        }

        write_atomic(&self.segment_path(&range), body.as_bytes())?;
        self.segments.insert(
            range.from_block,
            CacheSegment {
                range,
                record_count: logs.len() as u64,
                checksum,
            },
        );
        self.origin = Some(self.origin.map_or(range.from_block, |o| o.min(range.from_block)));
        let rendered = self.render_checkpoint();
        write_atomic(&self.dir.join(CHECKPOINT_FILE), rendered.as_bytes())?;
        Ok(true)
    }

    /// Re-hashes every segment file against the checkpoint.
    pub fn verify(&self) -> Result<(), IngestError> {
        for seg in self.segments.values() {
            self.verify_segment(seg)?;
        }
        Ok(())
    }

    fn verify_segment(&self, seg: &CacheSegment) -> Result<(), IngestError> {
        let path = self.segment_path(&seg.range);
        if !path.exists() {
            return Err(IngestError::Corrupt(format!(
                "segment file {} missing",
                path.display()
            )));
        }
        let actual = sha256_file(&path)?;
        if actual != seg.checksum {
            return Err(IngestError::Corrupt(format!(
                "checksum mismatch for {}: expected {}, found {}",
                path.display(),
                seg.checksum,
                actual
            )));
        }
        Ok(())
    }

    /// Streams cached logs within `range` in position order. Each segment's
    /// checksum is verified before it is read.
    pub fn replay(&self, range: BlockRange) -> CacheReplay<'_> {
        let pending = self
            .segments
            .values()
            .filter(|s| s.range.from_block <= range.to_block && range.from_block <= s.range.to_block)
            .collect::<Vec<_>>();
        CacheReplay {
            cache: self,
            range,
            pending: pending.into_iter(),
            current: None,
            failed: false,
        }
    }
}

pub struct CacheReplay<'a> {
    cache: &'a LogCache,
    range: BlockRange,
    pending: std::vec::IntoIter<&'a CacheSegment>,
    current: Option<LogFileReader>,
    failed: bool,
}

impl Iterator for CacheReplay<'_> {
    type Item = Result<RawLog, IngestError>;

    fn next(&mut self) -> Option<Self::Item> {
        if self.failed {
            return None;
        }
        loop {
            if let Some(reader) = self.current.as_mut() {
                match reader.next() {
                    Some(Ok(log)) => {
                        if self.range.contains(log.position.block_number) {
                            return Some(Ok(log));
                        }
                        continue;
                    }
                    Some(Err(e)) => {
                        self.failed = true;
                        return Some(Err(e));
                    }
                    None => self.current = None,
                }
            }
            let seg = self.pending.next()?;
            let opened = self
                .cache
                .verify_segment(seg)
                .and_then(|_| replay_file(self.cache.segment_path(&seg.range)));
            match opened {
                Ok(reader) => self.current = Some(reader),
                Err(e) => {
                    self.failed = true;
                    return Some(Err(e));
                }
            }
        }
    }
}

/// Persists a position-sorted log stream into `dir` as segments of at most
/// `segment_blocks` blocks covering `range`.
///
/// Segments already present are skipped, so rerunning over a cached range
/// writes nothing, and rerunning after an interrupted stream completes the
/// cache exactly as an uninterrupted run would have. A stream error stops the
/// run after the last fully received segment.
pub fn write_cache<I, E>(
    logs: I,
    dir: impl AsRef<Path>,
    range: BlockRange,
    segment_blocks: u64,
) -> Result<Checkpoint, IngestError>
where
    I: IntoIterator<Item = Result<RawLog, E>>,
    E: Into<IngestError>,
{
    let mut cache = LogCache::open(dir)?;
    let plan = cache.plan(&range, segment_blocks);
    let mut plan_iter = plan.into_iter().peekable();
    let mut buffer: Vec<RawLog> = Vec::new();
    let mut last: Option<LogPosition> = None;

    for item in logs {
        let log = item.map_err(Into::into)?;
        let block = log.position.block_number;
        if !range.contains(block) {
            return Err(IngestError::OutOfRange { block, range });
        }
        check_order(last.as_ref(), &log.position)?;
        last = Some(log.position);

        while let Some(seg) = plan_iter.peek() {
            if seg.to_block < block {
                let seg = plan_iter.next().expect("peeked");
                cache.write_segment(seg, &buffer)?;
                buffer.clear();
            } else {
                break;
            }
        }
        match plan_iter.peek() {
            Some(seg) if seg.contains(block) => buffer.push(log),
            // already cached
            _ => {}
        }
    }
    for seg in plan_iter {
        cache.write_segment(seg, &buffer)?;
        buffer.clear();
    }
    Ok(cache.checkpoint(range.from_block))
}
