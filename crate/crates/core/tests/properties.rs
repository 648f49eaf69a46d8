use std::collections::{BTreeMap, BTreeSet};

use bprel_core::cbor::{Decoder, Encoder};
use bprel_core::collection::coalesce;
use bprel_core::custody::{cteb, CtebData, DispositionCode};
use bprel_core::reporting::{CrebData, ReportReason, ReportTypes};
use bprel_core::signal::Signal;
use bprel_core::{
    Bundle, BundleSequenceCollection, BundleTag, CrcType, EndpointId, Error, PrimaryBlock,
    SequenceCounterTable, SequenceScope,
};
use proptest::prelude::*;

fn eid() -> impl Strategy<Value = EndpointId> {
    (1u64..1_000_000, 0u64..70_000).prop_map(|(n, s)| EndpointId::ipn(n, s))
}

fn scope() -> impl Strategy<Value = SequenceScope> {
    prop_oneof![
        eid().prop_map(SequenceScope::PerDestination),
        (1u64..u64::MAX).prop_map(|i| SequenceScope::explicit(i).unwrap()),
    ]
}

fn crc() -> impl Strategy<Value = CrcType> {
    prop_oneof![
        Just(CrcType::None),
        Just(CrcType::Crc16),
        Just(CrcType::Crc32c)
    ]
}

fn bundle() -> impl Strategy<Value = Bundle> {
    (
        (
            eid(),
            eid(),
            eid(),
            any::<u64>(),
            any::<u64>(),
            1u64..u64::MAX,
            crc(),
        ),
        proptest::collection::vec(any::<u8>(), 0..300),
        proptest::option::of((any::<u64>(), 0u64..50, any::<u8>(), eid(), eid(), 0usize..5)),
        proptest::option::of((any::<u64>(), any::<u64>(), eid())),
    )
        .prop_map(|((dst, src, rpt, t, seq, life, crc), payload, creb, ct)| {
            let mut b = Bundle::new(
                PrimaryBlock {
                    flags: 0,
                    crc_type: crc,
                    destination: dst,
                    source: src,
                    report_to: rpt,
                    creation_time: t,
                    creation_sequence: seq,
                    lifetime: life,
                },
                payload,
            );
            if let Some((n, id, types, bs, re, extra)) = creb {
                let mut d = CrebData::new(n);
                if extra >= 1 {
                    d.sequence_id = Some(id);
                }
                if extra >= 2 {
                    d.report_types = Some(ReportTypes(types as u64));
                }
                if extra >= 3 {
                    d.block_source = Some(bs);
                }
                if extra >= 4 {
                    d.report_endpoint = Some(re);
                }
                b.insert_extension(bprel_core::bundle::CREB_BLOCK_TYPE, d.encode().unwrap());
            }
            if let Some((n, id, bs)) = ct {
                let data = CtebData {
                    sequence_number: n,
                    sequence_id: id,
                    block_source: bs.admin(),
                }
                .encode();
                b.insert_extension(bprel_core::bundle::CTEB_BLOCK_TYPE, data);
            }
            b
        })
}

proptest! {
    #[test]
    fn bundles_round_trip(b in bundle()) {
        let bytes = b.encode();
        prop_assert_eq!(Bundle::decode(&bytes).unwrap(), b);
    }

    #[test]
    fn creb_round_trips(n in any::<u64>(), id in any::<u64>(), types in any::<u64>(), bs in eid(), re in eid(), k in 0usize..5) {
        let mut d = CrebData::new(n);
        if k >= 1 { d.sequence_id = Some(id); }
        if k >= 2 { d.report_types = Some(ReportTypes(types)); }
        if k >= 3 { d.block_source = Some(bs); }
        if k >= 4 { d.report_endpoint = Some(re); }
        prop_assert_eq!(CrebData::decode(&d.encode().unwrap()).unwrap(), d);
    }

    #[test]
    fn cteb_round_trips(n in any::<u64>(), id in any::<u64>(), bs in eid()) {
        let d = CtebData { sequence_number: n, sequence_id: id, block_source: bs };
        prop_assert_eq!(CtebData::decode(&d.encode()).unwrap(), d);
    }

    #[test]
    fn crc_detects_single_byte_corruption(b in bundle(), pos in any::<prop::sample::Index>(), flip in 1u8..=255) {
        prop_assume!(b.primary.crc_type != CrcType::None);
        let mut bytes = b.encode();
        // keep the outer array framing intact
        let i = 1 + pos.index(bytes.len() - 2);
        bytes[i] ^= flip;
        prop_assert_ne!(Bundle::decode(&bytes).ok(), Some(b));
    }

    #[test]
    fn coalesce_then_expand_is_identity(
        groups in proptest::collection::vec((scope(), eid(), proptest::collection::btree_set(0u64..500, 1..60)), 1..5)
    ) {
        let tags: BTreeSet<BundleTag> = groups
            .iter()
            .flat_map(|(s, src, ns)| ns.iter().map(move |n| BundleTag::new(*s, *n, src.admin())))
            .collect();
        let c = coalesce(&tags);
        prop_assert_eq!(c.tag_count() as usize, tags.len());
        let receiver = EndpointId::ipn(7, 0);
        prop_assert_eq!(c.expand(receiver, u64::MAX).unwrap(), tags.clone());
        let omitted = c.clone().omit_block_source(receiver);
        prop_assert_eq!(omitted.expand(receiver, u64::MAX).unwrap(), tags);
        let mut enc = Encoder::new();
        c.encode(&mut enc);
        let bytes = enc.into_bytes();
        let mut dec = Decoder::new(&bytes);
        prop_assert_eq!(BundleSequenceCollection::decode(&mut dec).unwrap(), c.clone());
        let text = c.to_string();
        prop_assert_eq!(text.parse::<BundleSequenceCollection>().unwrap(), c);
    }

    #[test]
    fn coalesced_runs_are_maximal(ns in proptest::collection::btree_set(0u64..200, 1..120)) {
        let s = SequenceScope::PerDestination(EndpointId::ipn(1, 1));
        let src = EndpointId::ipn(2, 0);
        let tags: BTreeSet<BundleTag> = ns.iter().map(|n| BundleTag::new(s, *n, src)).collect();
        let c = coalesce(&tags);
        let runs = ns.iter().zip(ns.iter().skip(1)).filter(|(a, b)| **b != **a + 1).count() + 1;
        prop_assert_eq!(c.len(), runs);
    }

    #[test]
    fn signals_round_trip(entries in proptest::collection::btree_map(
        prop_oneof![Just(1i64), Just(2), Just(-1), Just(-2), 3i64..100, -100i64..-2],
        proptest::collection::btree_set(0u64..100, 1..30), 1..5)
    ) {
        let s = SequenceScope::PerDestination(EndpointId::ipn(3, 1));
        let map: BTreeMap<DispositionCode, BTreeSet<BundleTag>> = entries
            .iter()
            .map(|(k, ns)| (DispositionCode(*k), ns.iter().map(|n| BundleTag::new(s, *n, EndpointId::ipn(4, 0))).collect()))
            .collect();
        let signal = Signal::from_tags(&map);
        let decoded = Signal::<DispositionCode>::decode(&signal.to_bytes()).unwrap();
        prop_assert_eq!(decoded.expand(EndpointId::ipn(9, 0), u64::MAX).unwrap(), map);
    }

    #[test]
    fn counters_never_repeat_within_a_cycle(max in 1u64..500, draws in 1usize..1000) {
        let mut t = SequenceCounterTable::new(max);
        let s = SequenceScope::explicit(3).unwrap();
        let seen: Vec<u64> = (0..draws).map(|_| t.next_sequence_number(s)).collect();
        for (i, n) in seen.iter().enumerate() {
            prop_assert_eq!(*n, i as u64 % (max + 1));
        }
    }

    #[test]
    fn scopes_do_not_share_counters(order in proptest::collection::vec(0usize..3, 1..200)) {
        let scopes = [
            SequenceScope::PerDestination(EndpointId::ipn(1, 1)),
            SequenceScope::PerDestination(EndpointId::ipn(1, 2)),
            SequenceScope::explicit(8).unwrap(),
        ];
        let mut t = SequenceCounterTable::default();
        let mut expected = [0u64; 3];
        for i in order {
            prop_assert_eq!(t.next_sequence_number(scopes[i]), expected[i]);
            expected[i] += 1;
        }
    }
}

#[test]
fn reason_keys_keep_numeric_values() {
    let s = SequenceScope::PerDestination(EndpointId::ipn(21, 1));
    let mut map = BTreeMap::new();
    map.insert(
        ReportReason::DELIVERY,
        [BundleTag::new(s, 0, EndpointId::ipn(31, 0))]
            .into_iter()
            .collect::<BTreeSet<_>>(),
    );
    map.insert(
        ReportReason(7),
        [BundleTag::new(s, 1, EndpointId::ipn(31, 0))]
            .into_iter()
            .collect(),
    );
    let decoded = Signal::<ReportReason>::decode(&Signal::from_tags(&map).to_bytes()).unwrap();
    assert_eq!(
        decoded.entries.keys().copied().collect::<Vec<_>>(),
        vec![ReportReason::DELIVERY, ReportReason(7)]
    );
}

#[test]
fn cteb_on_a_decoded_bundle_is_found() {
    let mut b = Bundle::new(
        PrimaryBlock {
            flags: 0,
            crc_type: CrcType::Crc32c,
            destination: EndpointId::ipn(30, 1),
            source: EndpointId::ipn(10, 1),
            report_to: EndpointId::ipn(10, 1),
            creation_time: 1,
            creation_sequence: 0,
            lifetime: 10,
        },
        vec![9; 4],
    );
    b.insert_extension(bprel_core::bundle::CTEB_BLOCK_TYPE, vec![0x82, 0x00, 0x00]);
    let decoded = Bundle::decode(&b.encode()).unwrap();
    assert!(matches!(cteb(&decoded), Err(Error::MalformedBlock(_))));
}
