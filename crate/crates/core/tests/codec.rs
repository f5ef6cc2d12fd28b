use composability_core::chain_model::{
    decode_transfer, encode_transfer, keccak256, transfer_topic0, Address, Amount, LogPosition, TransferEvent, Word,
};
use composability_core::ingestion::{format_log_line, parse_log_line};
use proptest::prelude::*;

fn amount() -> impl Strategy<Value = Amount> {
    prop_oneof![
        Just(Amount::zero()),
        Just(Amount::MAX),
        any::<u64>().prop_map(Amount::from),
        any::<[u64; 4]>().prop_map(Amount),
    ]
}

fn event() -> impl Strategy<Value = TransferEvent> {
    (
        any::<[u8; 20]>(),
        prop_oneof![Just([0u8; 20]), any::<[u8; 20]>()],
        prop_oneof![Just([0u8; 20]), any::<[u8; 20]>()],
        amount(),
        any::<u64>(),
        any::<[u8; 32]>(),
        any::<u32>(),
    )
        .prop_map(|(token, from, to, value, block, tx, idx)| TransferEvent {
            token: Address(token),
            from: Address(from),
            to: Address(to),
            value,
            position: LogPosition {
                block_number: block,
                tx_hash: Word(tx),
                log_index: idx,
            },
        })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(10_000))]

    #[test]
    fn decode_inverts_encode(e in event()) {
        let log = encode_transfer(&e);
        prop_assert_eq!(decode_transfer(&log).unwrap(), Some(e));
    }

    #[test]
    fn log_line_round_trip(e in event()) {
        let log = encode_transfer(&e);
        let line = format_log_line(&log);
        prop_assert!(!line.contains('\n'));
        prop_assert_eq!(parse_log_line(&line).unwrap(), log);
    }
}

proptest! {
    #[test]
    fn non_transfer_topics_are_ignored(e in event(), topic in any::<[u8; 32]>()) {
        let mut log = encode_transfer(&e);
        prop_assume!(Word(topic) != transfer_topic0());
        log.topics[0] = Word(topic);
        prop_assert_eq!(decode_transfer(&log).unwrap(), None);
    }

    #[test]
    fn address_padding_is_ignored(e in event(), byte in 1u8.., at in 0usize..12) {
        let mut log = encode_transfer(&e);
        log.topics[1].0[at] = byte;
        log.topics[2].0[at] = byte;
        prop_assert_eq!(decode_transfer(&log).unwrap(), Some(e));
    }

    #[test]
    fn wrong_shape_is_malformed(e in event(), extra in 1usize..4, cut in 0usize..32) {
        let mut log = encode_transfer(&e);
        log.topics.truncate(3 - extra.min(2));
        prop_assert!(decode_transfer(&log).is_err());
        let mut log = encode_transfer(&e);
        log.data.truncate(cut);
        prop_assert!(decode_transfer(&log).is_err());
    }
}

#[test]
fn topic0_matches_signature_hash() {
    assert_eq!(transfer_topic0(), keccak256(b"Transfer(address,address,uint256)"));
    assert_eq!(
        transfer_topic0().to_string(),
        "0xddf252ad1be2c89b69c2b068fc378daa952ba7f163c4a11628f55a4df523b3ef"
    );
}
