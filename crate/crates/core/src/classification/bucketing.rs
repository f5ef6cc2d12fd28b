use std::fmt;
use std::path::{Path, PathBuf};

use chrono::{DateTime, Datelike};

use super::ClassifyError;
use crate::ingestion::BlockRange;

/// About thirty days of blocks at ~6,500 blocks per day.
pub const DEFAULT_BUCKET_BLOCKS: u64 = 195_000;

/// A `block_number,unix_timestamp` table, ascending in both columns.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct MonthCalendar {
    source: String,
    points: Vec<(u64, i64)>,
}

impl MonthCalendar {
    pub fn from_points(source: impl Into<String>, points: Vec<(u64, i64)>) -> Result<Self, ClassifyError> {
        let source = source.into();
        for (i, w) in points.windows(2).enumerate() {
            if w[1].0 <= w[0].0 || w[1].1 < w[0].1 {
                return Err(ClassifyError::Parse {
                    source_name: source.clone(),
                    line: i + 2,
                    message: "blocks must strictly ascend and timestamps must not decrease".into(),
                });
            }
        }
        for (b, ts) in &points {
            if DateTime::from_timestamp(*ts, 0).is_none() {
                return Err(ClassifyError::Parse {
                    source_name: source.clone(),
                    line: 0,
                    message: format!("block {b}: timestamp {ts} out of range"),
                });
            }
        }
        Ok(MonthCalendar { source, points })
    }

    pub fn parse(source: impl Into<String>, text: &str) -> Result<Self, ClassifyError> {
        let source = source.into();
        let mut points = Vec::new();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') || line == "block_number,unix_timestamp" {
                continue;
            }
            let err = |message: String| ClassifyError::Parse {
                source_name: source.clone(),
                line: i + 1,
                message,
            };
            let (b, t) = line
                .split_once(',')
                .ok_or_else(|| err("expected block_number,unix_timestamp".into()))?;
            let b = b.trim().parse().map_err(|e| err(format!("block: {e}")))?;
            let t = t.trim().parse().map_err(|e| err(format!("timestamp: {e}")))?;
            points.push((b, t));
        }
        Self::from_points(source, points)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, ClassifyError> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path)?;
        Self::parse(path.display().to_string(), &text)
    }

    pub fn source(&self) -> &str {
        &self.source
    }

    fn month_of(ts: i64) -> i64 {
        let dt = DateTime::from_timestamp(ts, 0).expect("validated timestamp");
        dt.year() as i64 * 12 + dt.month0() as i64
    }

    /// Month key of a block: the month of the last mapped block at or before it.
    fn month_of_block(&self, block: u64) -> Option<i64> {
        let idx = self.points.partition_point(|(b, _)| *b <= block);
        (idx > 0).then(|| Self::month_of(self.points[idx - 1].1))
    }

    /// First mapped block whose month key is at least `key`.
    fn first_block_from(&self, key: i64) -> Option<u64> {
        self.points
            .iter()
            .find(|(_, ts)| Self::month_of(*ts) >= key)
            .map(|(b, _)| *b)
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum BucketScheme {
    FixedBlockWindow { width: u64 },
    TimestampMonths(MonthCalendar),
}

/// Partition of an analysis range into consecutive buckets, indexed from 0
/// at the range start.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Bucketing {
    scheme: BucketScheme,
    range: BlockRange,
    origin_month: i64,
}

impl Bucketing {
    pub fn fixed(range: BlockRange, width: u64) -> Result<Self, ClassifyError> {
        if width == 0 {
            return Err(ClassifyError::Bucketing("bucket width must be at least 1".into()));
        }
        Ok(Bucketing {
            scheme: BucketScheme::FixedBlockWindow { width },
            range,
            origin_month: 0,
        })
    }

    pub fn months(range: BlockRange, calendar: MonthCalendar) -> Result<Self, ClassifyError> {
        let origin_month = calendar.month_of_block(range.from_block).ok_or_else(|| {
            ClassifyError::Bucketing(format!(
                "timestamp mapping {} does not cover origin block {}",
                calendar.source, range.from_block
            ))
        })?;
        Ok(Bucketing {
            scheme: BucketScheme::TimestampMonths(calendar),
            range,
            origin_month,
        })
    }

    pub fn scheme(&self) -> &BucketScheme {
        &self.scheme
    }

    pub fn range(&self) -> BlockRange {
        self.range
    }

    pub fn origin_block(&self) -> u64 {
        self.range.from_block
    }

    pub fn bucket_of(&self, block: u64) -> Option<u32> {
        if !self.range.contains(block) {
            return None;
        }
        match &self.scheme {
            BucketScheme::FixedBlockWindow { width } => {
                Some(((block - self.range.from_block) / width) as u32)
            }
            BucketScheme::TimestampMonths(cal) => {
                cal.month_of_block(block).map(|m| (m - self.origin_month) as u32)
            }
        }
    }

    fn start_of(&self, bucket: u32) -> Option<u64> {
        let start = match &self.scheme {
            BucketScheme::FixedBlockWindow { width } => self
                .range
                .from_block
                .checked_add((bucket as u64).checked_mul(*width)?)?,
            BucketScheme::TimestampMonths(cal) => {
                if bucket == 0 {
                    self.range.from_block
                } else {
                    cal.first_block_from(self.origin_month + bucket as i64)?
                        .max(self.range.from_block)
                }
            }
        };
        (start <= self.range.to_block).then_some(start)
    }

    /// Inclusive first and last block of a bucket, or `None` when the bucket
    /// is past the range or, for calendar months, holds no blocks.
    pub fn bounds(&self, bucket: u32) -> Option<(u64, u64)> {
        let start = self.start_of(bucket)?;
        let end = match self.start_of(bucket + 1) {
            Some(next) if next <= start => return None,
            Some(next) => next - 1,
            None => self.range.to_block,
        };
        (self.bucket_of(start) == Some(bucket)).then_some((start, end))
    }

    /// One past the highest bucket index the range reaches.
    pub fn bucket_count(&self) -> u32 {
        self.bucket_of(self.range.to_block).map_or(0, |b| b + 1)
    }

    pub fn mapping_path(&self) -> Option<PathBuf> {
        match &self.scheme {
            BucketScheme::TimestampMonths(cal) => Some(PathBuf::from(&cal.source)),
            BucketScheme::FixedBlockWindow { .. } => None,
        }
    }
}

impl fmt::Display for Bucketing {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match &self.scheme {
            BucketScheme::FixedBlockWindow { width } => write!(f, "fixed_block_window width={width}")?,
            BucketScheme::TimestampMonths(cal) => write!(f, "timestamp_months mapping={}", cal.source)?,
        }
        write!(
            f,
            " origin_block={} end_block={}",
            self.range.from_block, self.range.to_block
        )
    }
}
