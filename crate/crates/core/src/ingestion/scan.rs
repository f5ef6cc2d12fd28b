use super::{group_by_transaction, BlockRange, IngestError, LogCache};
use crate::chain_model::{decode_transfer, RawLog, TransferEvent, Word};

/// Tallies from one pass over a log source.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct ScanStats {
    pub transactions: u64,
    pub logs: u64,
    pub transfers: u64,
    /// Logs with the `Transfer` signature but a non-standard shape; skipped.
    pub malformed: u64,
}

/// A replayable source of position-sorted logs, visited one transaction at a
/// time with its decoded transfers.
pub trait TransferScan {
    fn scan_transactions<E: From<IngestError>>(
        &self,
        visit: &mut dyn FnMut(&Word, &[TransferEvent]) -> Result<(), E>,
    ) -> Result<ScanStats, E>;
}

fn decode_group(group: &[RawLog], stats: &mut ScanStats) -> Vec<TransferEvent> {
    let mut out = Vec::with_capacity(group.len());
    for log in group {
        stats.logs += 1;
        match decode_transfer(log) {
            Ok(Some(t)) => out.push(t),
            Ok(None) => {}
            Err(_) => stats.malformed += 1,
        }
    }
    stats.transfers += out.len() as u64;
    out
}

fn scan_stream<I, E>(
    logs: I,
    visit: &mut dyn FnMut(&Word, &[TransferEvent]) -> Result<(), E>,
) -> Result<ScanStats, E>
where
    I: Iterator<Item = Result<RawLog, IngestError>>,
    E: From<IngestError>,
{
    let mut stats = ScanStats::default();
    for group in group_by_transaction(logs) {
        let (tx, logs) = group?;
        stats.transactions += 1;
        let transfers = decode_group(&logs, &mut stats);
        if !transfers.is_empty() {
            visit(&tx, &transfers)?;
        }
    }
    Ok(stats)
}

impl TransferScan for [RawLog] {
    fn scan_transactions<E: From<IngestError>>(
        &self,
        visit: &mut dyn FnMut(&Word, &[TransferEvent]) -> Result<(), E>,
    ) -> Result<ScanStats, E> {
        scan_stream(self.iter().cloned().map(Ok), visit)
    }
}

impl TransferScan for Vec<RawLog> {
    fn scan_transactions<E: From<IngestError>>(
        &self,
        visit: &mut dyn FnMut(&Word, &[TransferEvent]) -> Result<(), E>,
    ) -> Result<ScanStats, E> {
        self.as_slice().scan_transactions(visit)
    }
}

/// A block range of a [`LogCache`].
pub struct CachedRange<'a> {
    pub cache: &'a LogCache,
    pub range: BlockRange,
}

impl TransferScan for CachedRange<'_> {
    fn scan_transactions<E: From<IngestError>>(
        &self,
        visit: &mut dyn FnMut(&Word, &[TransferEvent]) -> Result<(), E>,
    ) -> Result<ScanStats, E> {
        scan_stream(self.cache.replay(self.range), visit)
    }
}

/// Decoded transfers of a sorted log stream. Malformed `Transfer` logs are
/// skipped and counted.
pub struct Transfers<I> {
    inner: I,
    pub malformed: u64,
}

impl<I: Iterator<Item = Result<RawLog, IngestError>>> Iterator for Transfers<I> {
    type Item = Result<TransferEvent, IngestError>;

    fn next(&mut self) -> Option<Self::Item> {
        loop {
            match self.inner.next()? {
                Err(e) => return Some(Err(e)),
                Ok(log) => match decode_transfer(&log) {
                    Ok(Some(t)) => return Some(Ok(t)),
                    Ok(None) => {}
                    Err(_) => self.malformed += 1,
                },
            }
        }
    }
}

pub fn transfers<I>(logs: I) -> Transfers<I::IntoIter>
where
    I: IntoIterator<Item = Result<RawLog, IngestError>>,
{
    Transfers {
        inner: logs.into_iter(),
        malformed: 0,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::chain_model::{encode_transfer, keccak256, Address, Amount, LogPosition};

    fn log(block: u64, tx: u8, idx: u32) -> RawLog {
        encode_transfer(&TransferEvent {
            token: Address([5; 20]),
            from: Address([1; 20]),
            to: Address([2; 20]),
            value: Amount::from(1u64),
            position: LogPosition {
                block_number: block,
                tx_hash: keccak256(&[tx]),
                log_index: idx,
            },
        })
    }

    #[test]
    fn scan_counts_and_skips() {
        let mut bad = log(1, 2, 1);
        bad.data.truncate(5);
        let mut other = log(2, 3, 0);
        other.topics[0] = Word::ZERO;
        let logs = vec![log(1, 1, 0), bad, other, log(2, 4, 1)];
        let mut seen = Vec::new();
        let stats = logs
            .scan_transactions::<IngestError>(&mut |tx, evs| {
                seen.push((*tx, evs.len()));
                Ok(())
            })
            .unwrap();
        assert_eq!(
            stats,
            ScanStats {
                transactions: 4,
                logs: 4,
                transfers: 2,
                malformed: 1
            }
        );
        assert_eq!(seen.len(), 2);

        let mut it = transfers(logs.into_iter().map(Ok));
        assert_eq!(it.by_ref().count(), 2);
        assert_eq!(it.malformed, 1);
    }
}
