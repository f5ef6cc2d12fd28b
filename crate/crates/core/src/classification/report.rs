use std::collections::BTreeMap;
use std::io::Write;

use super::{Bucketing, ClassifiedCount, ClassifyError, CountKey, CountingPolicy};
use crate::chain_model::Word;
use crate::derivation_graph::RootSpec;

pub const REPORT_COLUMNS: &str =
    "root,bucket_index,bucket_start_block,bucket_end_block,delta,count,composed_share_of_bucket";

/// Extra header lines. Written as `# key: value` after policy and bucketing.
#[derive(Clone, Debug, Default)]
pub struct ReportMeta {
    pub graph_checksum: Option<Word>,
    pub extra: Vec<(String, String)>,
}

/// `numerator / denominator` as a decimal with six fractional digits,
/// rounded half to even.
pub fn format_share(numerator: u64, denominator: u64) -> String {
    assert!(denominator > 0 && numerator <= denominator);
    let scaled = numerator as u128 * 1_000_000;
    let d = denominator as u128;
    let mut q = scaled / d;
    let r2 = (scaled % d) * 2;
    if r2 > d || (r2 == d && q % 2 == 1) {
        q += 1;
    }
    format!("{}.{:06}", q / 1_000_000, q % 1_000_000)
}

pub fn emit_report<W: Write>(
    counts: &ClassifiedCount,
    bucketing: &Bucketing,
    policy: &CountingPolicy,
    roots: &[RootSpec],
    meta: &ReportMeta,
    out: &mut W,
) -> Result<(), ClassifyError> {
    writeln!(out, "# policy: {policy}")?;
    writeln!(out, "# bucketing: {bucketing}")?;
    if let Some(c) = &meta.graph_checksum {
        writeln!(out, "# graph_checksum: {c}")?;
    }
    for (k, v) in &meta.extra {
        writeln!(out, "# {k}: {v}")?;
    }
    writeln!(out, "{REPORT_COLUMNS}")?;

    let mut shares: BTreeMap<(&str, u32), String> = BTreeMap::new();
    for (key, n) in counts.iter() {
        let root = key.root.as_str();
        let share = match shares.get(&(root, key.bucket)) {
            Some(s) => s.clone(),
            None => {
                let spec = roots
                    .iter()
                    .find(|r| r.root_id == root)
                    .ok_or_else(|| ClassifyError::UnknownRoot(root.to_owned()))?;
                let (composed, total) = counts.share_parts(root, key.bucket, spec.initial_distance);
                let s = format_share(composed, total);
                shares.insert((root, key.bucket), s.clone());
                s
            }
        };
        let (start, end) = bucketing.bounds(key.bucket).ok_or_else(|| {
            ClassifyError::Bucketing(format!(
                "bucket {} of root {root} lies outside {bucketing}",
                key.bucket
            ))
        })?;
        writeln!(
            out,
            "{root},{},{start},{end},{},{n},{share}",
            key.bucket, key.delta
        )?;
    }
    Ok(())
}

/// A report read back from its CSV form.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct ParsedReport {
    pub header: Vec<(String, String)>,
    pub counts: ClassifiedCount,
    pub bounds: BTreeMap<u32, (u64, u64)>,
}

impl ParsedReport {
    pub fn header_value(&self, key: &str) -> Option<&str> {
        self.header
            .iter()
            .find(|(k, _)| k == key)
            .map(|(_, v)| v.as_str())
    }
}

pub fn parse_report(source_name: &str, text: &str) -> Result<ParsedReport, ClassifyError> {
    let mut report = ParsedReport::default();
    let mut seen_columns = false;
    for (i, line) in text.lines().enumerate() {
        let err = |message: String| ClassifyError::Parse {
            source_name: source_name.to_owned(),
            line: i + 1,
            message,
        };
        if let Some(comment) = line.strip_prefix('#') {
            if let Some((k, v)) = comment.trim().split_once(':') {
                report.header.push((k.trim().to_owned(), v.trim().to_owned()));
            }
            continue;
        }
        if line.trim().is_empty() {
            continue;
        }
        if !seen_columns {
            if line != REPORT_COLUMNS {
                return Err(err(format!("expected column header {REPORT_COLUMNS:?}")));
            }
            seen_columns = true;
            continue;
        }
        let cols: Vec<&str> = line.split(',').collect();
        if cols.len() != 7 {
            return Err(err(format!("expected 7 columns, found {}", cols.len())));
        }
        let num = |idx: usize, what: &str| -> Result<u64, ClassifyError> {
            cols[idx]
                .parse::<u64>()
                .map_err(|e| err(format!("{what}: {e}")))
        };
        let bucket = u32::try_from(num(1, "bucket_index")?).map_err(|e| err(e.to_string()))?;
        let start = num(2, "bucket_start_block")?;
        let end = num(3, "bucket_end_block")?;
        let delta = u32::try_from(num(4, "delta")?).map_err(|e| err(e.to_string()))?;
        let count = num(5, "count")?;
        if let Some(prev) = report.bounds.insert(bucket, (start, end)) {
            if prev != (start, end) {
                return Err(err(format!("bucket {bucket} has inconsistent bounds")));
            }
        }
        let key = CountKey::new(cols[0], delta, bucket);
        if report.counts.get(&key.root, delta, bucket) != 0 {
            return Err(err(format!("duplicate row for {} δ={delta} bucket={bucket}", key.root)));
        }
        report.counts.add(key, count);
    }
    if !seen_columns {
        return Err(ClassifyError::Parse {
            source_name: source_name.to_owned(),
            line: text.lines().count(),
            message: "missing column header".into(),
        });
    }
    Ok(report)
}
