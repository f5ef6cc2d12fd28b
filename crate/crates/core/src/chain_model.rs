//! Chain data types and the ERC-20 `Transfer` log codec.
//!
//! The atomic unit counted everywhere downstream is a single `Transfer` log
//! event. Anything that is not a `Transfer` decodes to `None`; a log that
//! carries the `Transfer` signature but the wrong ABI shape is an error.

use std::cmp::Ordering;
use std::fmt;
use std::str::FromStr;
use std::sync::OnceLock;

use sha3::{Digest, Keccak256};
use thiserror::Error;

uint::construct_uint! {
    /// Unsigned 256-bit token amount.
    pub struct Amount(4);
}

/// ASCII preimage of the ERC-20 `Transfer` event signature.
pub const TRANSFER_SIGNATURE: &str = "Transfer(address,address,uint256)";

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum HexError {
    #[error("empty hex string")]
    Empty,
    #[error("missing 0x prefix in {0:?}")]
    MissingPrefix(String),
    #[error("invalid hex digits in {0:?}")]
    InvalidDigit(String),
    #[error("expected {expected} bytes, got {actual} in {text:?}")]
    Length {
        expected: usize,
        actual: usize,
        text: String,
    },
    #[error("quantity {0:?} overflows 64 bits")]
    Overflow(String),
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum DecodeError {
    #[error("malformed Transfer log at block {block} index {log_index}: {reason}")]
    Malformed {
        block: u64,
        log_index: u32,
        reason: String,
    },
}

fn strip_prefix(text: &str) -> Result<&str, HexError> {
    if text.is_empty() {
        return Err(HexError::Empty);
    }
    text.strip_prefix("0x")
        .or_else(|| text.strip_prefix("0X"))
        .ok_or_else(|| HexError::MissingPrefix(text.to_owned()))
}

fn decode_fixed<const N: usize>(text: &str) -> Result<[u8; N], HexError> {
    let digits = strip_prefix(text)?;
    if digits.len() != N * 2 {
        return Err(HexError::Length {
            expected: N,
            actual: digits.len() / 2,
            text: text.to_owned(),
        });
    }
    let mut out = [0u8; N];
    hex::decode_to_slice(digits, &mut out).map_err(|_| HexError::InvalidDigit(text.to_owned()))?;
    Ok(out)
}

/// Decodes `0x`-prefixed hex of any even length (`"0x"` is the empty string).
pub fn decode_hex_bytes(text: &str) -> Result<Vec<u8>, HexError> {
    let digits = strip_prefix(text)?;
    hex::decode(digits).map_err(|_| HexError::InvalidDigit(text.to_owned()))
}

pub fn encode_hex_bytes(bytes: &[u8]) -> String {
    format!("0x{}", hex::encode(bytes))
}

/// A 20-byte account or contract identifier.
#[derive(Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Default)]
pub struct Address(pub [u8; 20]);

impl Address {
    pub const ZERO: Address = Address([0u8; 20]);

    pub fn is_zero(&self) -> bool {
        self.0 == [0u8; 20]
    }

    pub fn as_bytes(&self) -> &[u8; 20] {
        &self.0
    }

    /// Left-pads the address into an ABI word.
    pub fn to_word(&self) -> Word {
        let mut w = [0u8; 32];
        w[12..].copy_from_slice(&self.0);
        Word(w)
    }

    /// Low 20 bytes of an ABI word.
    pub fn from_word(word: &Word) -> Address {
        let mut a = [0u8; 20];
        a.copy_from_slice(&word.0[12..]);
        Address(a)
    }
}

impl fmt::Display for Address {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "0x{}", hex::encode(self.0))
    }
}

impl fmt::Debug for Address {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        fmt::Display::fmt(self, f)
    }
}

impl FromStr for Address {
    type Err = HexError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        decode_fixed::<20>(s).map(Address)
    }
}

/// A 32-byte word: topics, transaction hashes, digests.
#[derive(Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Default)]
pub struct Word(pub [u8; 32]);

impl Word {
    pub const ZERO: Word = Word([0u8; 32]);

    pub fn as_bytes(&self) -> &[u8; 32] {
        &self.0
    }
}

impl fmt::Display for Word {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "0x{}", hex::encode(self.0))
    }
}

impl fmt::Debug for Word {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        fmt::Display::fmt(self, f)
    }
}

impl FromStr for Word {
    type Err = HexError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        decode_fixed::<32>(s).map(Word)
    }
}

pub fn keccak256(bytes: &[u8]) -> Word {
    Word(Keccak256::digest(bytes).into())
}

/// Where a log sits in the chain. Ordered by `(block_number, log_index)`;
/// the hash only breaks ties between otherwise identical coordinates.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct LogPosition {
    pub block_number: u64,
    pub tx_hash: Word,
    pub log_index: u32,
}

impl Ord for LogPosition {
    fn cmp(&self, other: &Self) -> Ordering {
        (self.block_number, self.log_index, self.tx_hash).cmp(&(
            other.block_number,
            other.log_index,
            other.tx_hash,
        ))
    }
}

impl PartialOrd for LogPosition {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl LogPosition {
    /// Strict stream order: block and log index both matter, hash does not.
    pub fn strictly_before(&self, other: &LogPosition) -> bool {
        (self.block_number, self.log_index) < (other.block_number, other.log_index)
    }
}

/// Anything that carries a position in the log stream.
pub trait Positioned {
    fn position(&self) -> &LogPosition;
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct RawLog {
    pub emitter: Address,
    pub topics: Vec<Word>,
    pub data: Vec<u8>,
    pub position: LogPosition,
}

impl Positioned for RawLog {
    fn position(&self) -> &LogPosition {
        &self.position
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct TransferEvent {
    pub token: Address,
    pub from: Address,
    pub to: Address,
    pub value: Amount,
    pub position: LogPosition,
}

impl TransferEvent {
    pub fn is_mint(&self) -> bool {
        self.from.is_zero()
    }

    pub fn is_burn(&self) -> bool {
        self.to.is_zero()
    }

    pub fn touches_zero_address(&self) -> bool {
        self.is_mint() || self.is_burn()
    }
}

impl Positioned for TransferEvent {
    fn position(&self) -> &LogPosition {
        &self.position
    }
}

pub fn transfer_topic0() -> Word {
    static TOPIC: OnceLock<Word> = OnceLock::new();
    *TOPIC.get_or_init(|| keccak256(TRANSFER_SIGNATURE.as_bytes()))
}

/// Decodes an ERC-20 `Transfer`. Returns `Ok(None)` for any other event.
pub fn decode_transfer(log: &RawLog) -> Result<Option<TransferEvent>, DecodeError> {
    match log.topics.first() {
        Some(t0) if *t0 == transfer_topic0() => {}
        _ => return Ok(None),
    }
    let malformed = |reason: String| DecodeError::Malformed {
        block: log.position.block_number,
        log_index: log.position.log_index,
        reason,
    };
    if log.topics.len() != 3 {
        return Err(malformed(format!(
            "expected 3 topics, found {}",
            log.topics.len()
        )));
    }
    if log.data.len() != 32 {
        return Err(malformed(format!(
            "expected 32 data bytes, found {}",
            log.data.len()
        )));
    }
    Ok(Some(TransferEvent {
        token: log.emitter,
        from: Address::from_word(&log.topics[1]),
        to: Address::from_word(&log.topics[2]),
        value: Amount::from_big_endian(&log.data),
        position: log.position,
    }))
}

pub fn encode_transfer(event: &TransferEvent) -> RawLog {
    RawLog {
        emitter: event.token,
        topics: vec![transfer_topic0(), event.from.to_word(), event.to.to_word()],
        data: event.value.to_big_endian().to_vec(),
        position: event.position,
    }
}

/// Parses a JSON-RPC quantity such as `"0x8c4ed2"`. Leading zeros are accepted.
pub fn parse_hex_quantity(text: &str) -> Result<u64, HexError> {
    let digits = strip_prefix(text)?;
    if digits.is_empty() {
        return Err(HexError::Empty);
    }
    if !digits.bytes().all(|b| b.is_ascii_hexdigit()) {
        return Err(HexError::InvalidDigit(text.to_owned()));
    }
    let significant = digits.trim_start_matches('0');
    if significant.len() > 16 {
        return Err(HexError::Overflow(text.to_owned()));
    }
    if significant.is_empty() {
        return Ok(0);
    }
    u64::from_str_radix(significant, 16).map_err(|_| HexError::InvalidDigit(text.to_owned()))
}

pub fn format_hex_quantity(value: u64) -> String {
    format!("0x{value:x}")
}

#[cfg(test)]
mod tests {
    use super::*;

    fn pos(block: u64, idx: u32) -> LogPosition {
        LogPosition {
            block_number: block,
            tx_hash: keccak256(&block.to_be_bytes()),
            log_index: idx,
        }
    }

    fn sample() -> TransferEvent {
        TransferEvent {
            token: "0x6b175474e89094c44da98b954eedeac495271d0f".parse().unwrap(),
            from: "0x00000000000000000000000000000000000000aa".parse().unwrap(),
            to: "0x00000000000000000000000000000000000000bb".parse().unwrap(),
            value: Amount::from(1_000_000u64),
            position: pos(9_193_266, 4),
        }
    }

    #[test]
    fn topic0_is_pinned() {
        // Computed independently with pycryptodome's Keccak-256.
        assert_eq!(
            transfer_topic0().to_string(),
            "0xddf252ad1be2c89b69c2b068fc378daa952ba7f163c4a11628f55a4df523b3ef"
        );
        assert_eq!(transfer_topic0(), transfer_topic0());
        let approval = keccak256(b"Approval(address,address,uint256)");
        assert_eq!(
            approval.to_string(),
            "0x8c5be1e5ebec7d5bd14f71427d1e84f3dd0314c0f7b2291e5b200ac8c7c3b925"
        );
        assert_ne!(approval, transfer_topic0());
    }

    #[test]
    fn non_transfer_is_absent() {
        let mut log = encode_transfer(&sample());
        log.topics[0] = keccak256(b"Approval(address,address,uint256)");
        assert_eq!(decode_transfer(&log), Ok(None));
        log.topics.clear();
        assert_eq!(decode_transfer(&log), Ok(None));
    }

    #[test]
    fn wrong_shape_is_malformed() {
        let mut log = encode_transfer(&sample());
        log.topics.pop();
        assert!(matches!(
            decode_transfer(&log),
            Err(DecodeError::Malformed { block: 9_193_266, log_index: 4, .. })
        ));

        let mut log = encode_transfer(&sample());
        log.data.push(0);
        assert!(decode_transfer(&log).is_err());

        // value moved into a fourth indexed topic (ERC-721 style)
        let mut log = encode_transfer(&sample());
        log.topics.push(Word::ZERO);
        log.data.clear();
        assert!(decode_transfer(&log).is_err());
    }

    #[test]
    fn encode_layout() {
        let mut e = sample();
        e.value = Amount::zero();
        e.from = Address::ZERO;
        let log = encode_transfer(&e);
        assert_eq!(log.data, vec![0u8; 32]);
        assert_eq!(log.topics[1], Word::ZERO);
        assert_eq!(log.emitter, e.token);
        assert_eq!(&log.topics[2].0[..12], &[0u8; 12]);
        assert_eq!(decode_transfer(&log).unwrap().unwrap(), e);
        assert!(e.is_mint());
    }

    #[test]
    fn max_amount_survives() {
        let mut e = sample();
        e.value = Amount::MAX;
        let log = encode_transfer(&e);
        assert_eq!(log.data, vec![0xffu8; 32]);
        assert_eq!(decode_transfer(&log).unwrap().unwrap().value, Amount::MAX);
    }

    #[test]
    fn hex_quantities() {
        assert_eq!(parse_hex_quantity("0x0"), Ok(0));
        assert_eq!(parse_hex_quantity("0x8c4ed2"), Ok(9_195_218));
        assert_eq!(parse_hex_quantity("0x00008c4ed2"), Ok(9_195_218));
        assert_eq!(parse_hex_quantity("0xffffffffffffffff"), Ok(u64::MAX));
        assert!(matches!(parse_hex_quantity("0xZZ"), Err(HexError::InvalidDigit(_))));
        assert_eq!(parse_hex_quantity(""), Err(HexError::Empty));
        assert_eq!(parse_hex_quantity("0x"), Err(HexError::Empty));
        assert!(matches!(parse_hex_quantity("8c4ed2"), Err(HexError::MissingPrefix(_))));
        assert!(matches!(
            parse_hex_quantity("0x10000000000000000"),
            Err(HexError::Overflow(_))
        ));
        assert_eq!(format_hex_quantity(9_195_218), "0x8c4ed2");
    }

    #[test]
    fn address_text_form() {
        let a: Address = "0xA0b86991c6218b36c1d19d4a2e9eb0ce3606eB48".parse().unwrap();
        assert_eq!(a.to_string(), "0xa0b86991c6218b36c1d19d4a2e9eb0ce3606eb48");
        assert_eq!(a.to_string().len(), 42);
        assert!(!a.is_zero());
        assert!(Address::ZERO.is_zero());
        assert!("0x1234".parse::<Address>().is_err());
    }

    #[test]
    fn position_order() {
        let a = pos(10, 3);
        let b = pos(10, 4);
        let c = pos(11, 0);
        assert!(a < b && b < c);
        assert!(a.strictly_before(&b));
        assert!(!a.strictly_before(&a));
    }
}
