//! Compressed Bundle Reporting: the Compressed Reporting Extension Block
//! (CREB) and the Compressed Reporting Signal (CRS) administrative record.

use alloc::collections::{BTreeMap, BTreeSet};
use alloc::vec::Vec;
use core::fmt;
use core::str::FromStr;

use crate::bundle::{Bundle, PrimaryBlock, CREB_BLOCK_TYPE};
use crate::cbor::{Decoder, Encoder};
use crate::eid::EndpointId;
use crate::sequence::{derive_tag, BundleTag};
use crate::signal::{
    decode_signal, AdminRecord, DraftTable, Signal, SignalDraft, SignalKey, CRS_RECORD_TYPE,
};
use crate::time::SimTime;
use crate::Error;

/// Status report reason. Codes above 3 are preserved but never acted on.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct ReportReason(pub u64);

impl ReportReason {
    pub const RECEPTION: ReportReason = ReportReason(0);
    pub const FORWARDING: ReportReason = ReportReason(1);
    pub const DELIVERY: ReportReason = ReportReason(2);
    pub const DELETION: ReportReason = ReportReason(3);

    pub fn is_known(self) -> bool {
        self.0 <= 3
    }

    pub fn name(self) -> Option<&'static str> {
        Some(match self.0 {
            0 => "reception",
            1 => "forwarding",
            2 => "delivery",
            3 => "deletion",
            _ => return None,
        })
    }
}

impl SignalKey for ReportReason {
    fn to_wire(self) -> i64 {
        self.0 as i64
    }

    fn from_wire(v: i64) -> Result<Self, Error> {
        u64::try_from(v)
            .map(ReportReason)
            .map_err(|_| Error::MalformedSignal("report reason must be unsigned"))
    }
}

impl fmt::Display for ReportReason {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.name() {
            Some(n) => f.write_str(n),
            None => write!(f, "reason-{}", self.0),
        }
    }
}

impl FromStr for ReportReason {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self, Error> {
        Ok(match s {
            "reception" => Self::RECEPTION,
            "forwarding" => Self::FORWARDING,
            "delivery" => Self::DELIVERY,
            "deletion" => Self::DELETION,
            other => ReportReason(
                other
                    .parse()
                    .map_err(|_| Error::Config("unknown report reason"))?,
            ),
        })
    }
}

/// Requested report types as carried in a CREB: bit k set requests reason k.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Hash)]
pub struct ReportTypes(pub u64);

impl ReportTypes {
    pub const NONE: ReportTypes = ReportTypes(0);

    pub fn of(reasons: &[ReportReason]) -> Self {
        let mut t = ReportTypes::NONE;
        for r in reasons {
            t = t.with(*r);
        }
        t
    }

    pub fn with(self, r: ReportReason) -> Self {
        if r.0 < 64 {
            ReportTypes(self.0 | (1 << r.0))
        } else {
            self
        }
    }

    pub fn contains(self, r: ReportReason) -> bool {
        r.0 < 64 && self.0 & (1 << r.0) != 0
    }

    pub fn is_empty(self) -> bool {
        self.0 == 0
    }

    pub fn iter(self) -> impl Iterator<Item = ReportReason> {
        (0..64)
            .filter(move |k| self.0 & (1 << k) != 0)
            .map(ReportReason)
    }
}

impl fmt::Display for ReportTypes {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.is_empty() {
            return f.write_str("none");
        }
        for (i, r) in self.iter().enumerate() {
            if i > 0 {
                f.write_str("|")?;
            }
            write!(f, "{r}")?;
        }
        Ok(())
    }
}

impl FromStr for ReportTypes {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self, Error> {
        if s == "none" || s.is_empty() {
            return Ok(ReportTypes::NONE);
        }
        let reasons = s
            .split(['|', ','])
            .map(str::parse)
            .collect::<Result<Vec<ReportReason>, _>>()?;
        Ok(ReportTypes::of(&reasons))
    }
}

/// CREB fields exactly as they appear on the wire. A field may only be
/// present if every earlier field is.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct CrebData {
    pub sequence_number: u64,
    pub sequence_id: Option<u64>,
    pub report_types: Option<ReportTypes>,
    pub block_source: Option<EndpointId>,
    pub report_endpoint: Option<EndpointId>,
}

impl CrebData {
    pub fn new(sequence_number: u64) -> Self {
        CrebData {
            sequence_number,
            sequence_id: None,
            report_types: None,
            block_source: None,
            report_endpoint: None,
        }
    }

    fn field_count(&self) -> Result<usize, Error> {
        let present = [
            self.sequence_id.is_some(),
            self.report_types.is_some(),
            self.block_source.is_some(),
            self.report_endpoint.is_some(),
        ];
        let count = present.iter().take_while(|p| **p).count();
        if present[count..].iter().any(|p| *p) {
            return Err(Error::PrefixViolation);
        }
        Ok(1 + count)
    }

    pub fn encode(&self) -> Result<Vec<u8>, Error> {
        let n = self.field_count()?;
        let mut enc = Encoder::new();
        enc.array(n).uint(self.sequence_number);
        if let Some(id) = self.sequence_id {
            enc.uint(id);
        }
        if let Some(t) = self.report_types {
            enc.uint(t.0);
        }
        if let Some(src) = self.block_source {
            src.encode(&mut enc);
        }
        if let Some(rep) = self.report_endpoint {
            rep.encode(&mut enc);
        }
        Ok(enc.into_bytes())
    }

    /// Decodes the raw fields without applying defaults.
    pub fn decode(bytes: &[u8]) -> Result<Self, Error> {
        let mut dec = Decoder::new(bytes);
        let n = dec.array().map_err(Error::block)?;
        if !(1..=5).contains(&n) {
            return Err(Error::MalformedBlock("creb must have 1 to 5 fields"));
        }
        let mut d = CrebData::new(dec.uint().map_err(Error::block)?);
        if n >= 2 {
            d.sequence_id = Some(dec.uint().map_err(Error::block)?);
        }
        if n >= 3 {
            d.report_types = Some(ReportTypes(dec.uint().map_err(Error::block)?));
        }
        if n >= 4 {
            d.block_source = Some(EndpointId::decode(&mut dec).map_err(block_eid)?);
        }
        if n >= 5 {
            d.report_endpoint = Some(EndpointId::decode(&mut dec).map_err(block_eid)?);
        }
        dec.finish().map_err(Error::block)?;
        Ok(d)
    }

    /// Applies the decoding defaults against the carrying bundle.
    pub fn resolve(&self, primary: &PrimaryBlock) -> ResolvedCreb {
        ResolvedCreb {
            tag: derive_tag(
                self.sequence_id,
                self.sequence_number,
                self.block_source,
                primary,
            ),
            report_types: self.report_types.unwrap_or(ReportTypes::NONE),
            report_to: resolve_report_destination(self, primary),
        }
    }
}

pub(crate) fn block_eid(e: Error) -> Error {
    match e {
        Error::MalformedEid(m) => Error::MalformedBlock(m),
        other => other,
    }
}

/// A CREB with its defaults applied.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct ResolvedCreb {
    pub tag: BundleTag,
    /// Empty when the CREB requests no reporting.
    pub report_types: ReportTypes,
    pub report_to: EndpointId,
}

pub fn encode_creb(d: &CrebData) -> Result<Vec<u8>, Error> {
    d.encode()
}

pub fn decode_creb(bytes: &[u8], primary: &PrimaryBlock) -> Result<ResolvedCreb, Error> {
    Ok(CrebData::decode(bytes)?.resolve(primary))
}

/// Report endpoint if given, else the block source if given, else the
/// bundle's source.
pub fn resolve_report_destination(d: &CrebData, primary: &PrimaryBlock) -> EndpointId {
    d.report_endpoint
        .or(d.block_source)
        .unwrap_or(primary.source)
}

/// Every CREB of `bundle`, resolved. Malformed blocks are skipped.
pub fn crebs(bundle: &Bundle) -> impl Iterator<Item = ResolvedCreb> + '_ {
    bundle
        .blocks_of_type(CREB_BLOCK_TYPE)
        .filter_map(move |b| CrebData::decode(&b.data).ok())
        .map(move |d| d.resolve(&bundle.primary))
}

pub type CrsDraft = SignalDraft<ReportReason>;
pub type CrsTable = DraftTable<ReportReason>;

/// What [`record_event`] did.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct RecordOutcome {
    /// (report destination, tag) pairs added to drafts.
    pub queued: Vec<(EndpointId, BundleTag)>,
    /// Drafts that reached their bundle limit and must be sent now.
    pub flushed: Vec<CrsDraft>,
}

/// Adds the bundle's tag to the CRS draft of every CREB that requests
/// `event`. CREBs inserted by the local node are ignored.
pub fn record_event(
    drafts: &mut CrsTable,
    local_admin: EndpointId,
    bundle: &Bundle,
    event: ReportReason,
    now: SimTime,
) -> RecordOutcome {
    let mut out = RecordOutcome::default();
    for creb in crebs(bundle) {
        if creb.tag.block_source == local_admin || !creb.report_types.contains(event) {
            continue;
        }
        out.queued.push((creb.report_to, creb.tag));
        if let Some(d) = drafts.add(creb.report_to, event, creb.tag, now) {
            out.flushed.push(d);
        }
    }
    out
}

/// CRS content for a draft. Block sources equal to the destination node's
/// administrative endpoint are omitted.
pub fn crs_signal(draft: &CrsDraft) -> Signal<ReportReason> {
    let receiver = draft.destination.admin();
    draft
        .signal()
        .map_collections(|c| c.omit_block_source(receiver))
}

/// Encodes the draft as a CRS administrative record.
pub fn build_crs(draft: &CrsDraft) -> Vec<u8> {
    AdminRecord::encode(CRS_RECORD_TYPE, &crs_signal(draft).to_bytes())
}

/// Parses a CRS (administrative record or bare map) into reason → tags.
pub fn parse_crs(
    bytes: &[u8],
    receiver_admin: EndpointId,
    max_number: u64,
) -> Result<BTreeMap<ReportReason, BTreeSet<BundleTag>>, Error> {
    decode_signal::<ReportReason>(bytes, CRS_RECORD_TYPE)?.expand(receiver_admin, max_number)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::bundle::CrcType;
    use crate::sequence::SequenceScope;
    use alloc::string::ToString;

    fn lunar_primary(seq: u64) -> PrimaryBlock {
        PrimaryBlock {
            flags: 0,
            crc_type: CrcType::Crc32c,
            destination: EndpointId::ipn(21, 1),
            source: EndpointId::ipn(31, 1),
            report_to: EndpointId::ipn(31, 1),
            creation_time: seq,
            creation_sequence: seq,
            lifetime: 3_600_000,
        }
    }

    fn lunar_bundle(seq: u64) -> Bundle {
        let mut b = Bundle::new(lunar_primary(seq), Vec::new());
        let creb = CrebData {
            sequence_number: seq,
            sequence_id: Some(0),
            report_types: Some(ReportTypes::of(&[ReportReason::DELIVERY])),
            block_source: None,
            report_endpoint: None,
        };
        b.insert_extension(CREB_BLOCK_TYPE, creb.encode().unwrap());
        b
    }

    #[test]
    fn creb_single_field() {
        assert_eq!(CrebData::new(42).encode().unwrap(), [0x81, 0x18, 0x2a]);
    }

    #[test]
    fn creb_delivery_request() {
        let d = CrebData {
            sequence_number: 9,
            sequence_id: Some(0),
            report_types: Some(ReportTypes::of(&[ReportReason::DELIVERY])),
            block_source: None,
            report_endpoint: None,
        };
        assert_eq!(d.encode().unwrap(), [0x83, 0x09, 0x00, 0x04]);
        assert_eq!(CrebData::decode(&[0x83, 0x09, 0x00, 0x04]), Ok(d));
    }

    #[test]
    fn creb_prefix_rule() {
        let mut d = CrebData::new(1);
        d.report_types = Some(ReportTypes(4));
        assert_eq!(d.encode(), Err(Error::PrefixViolation));
        let mut d = CrebData::new(1);
        d.sequence_id = Some(3);
        d.report_endpoint = Some(EndpointId::ipn(1, 1));
        assert_eq!(d.encode(), Err(Error::PrefixViolation));
    }

    #[test]
    fn creb_decode_errors() {
        assert!(matches!(
            CrebData::decode(&[0x80]),
            Err(Error::MalformedBlock(_))
        ));
        assert!(matches!(
            CrebData::decode(&[0x86, 0, 0, 0, 0, 0, 0]),
            Err(Error::MalformedBlock(_))
        ));
        assert!(matches!(
            CrebData::decode(&[0x82, 0x01, 0x41, 0x00]),
            Err(Error::MalformedBlock(_))
        ));
        assert!(matches!(
            CrebData::decode(&[0x84, 0x01, 0x00, 0x04, 0x82, 0x01, 0x00]),
            Err(Error::MalformedBlock(_))
        ));
    }

    #[test]
    fn creb_defaults() {
        let r = decode_creb(&[0x81, 0x09], &lunar_primary(0)).unwrap();
        assert_eq!(
            r.tag.scope,
            SequenceScope::PerDestination(EndpointId::ipn(21, 1))
        );
        assert_eq!(r.tag.block_source, EndpointId::ipn(31, 0));
        assert_eq!(r.tag.number, 9);
        assert!(r.report_types.is_empty());
    }

    #[test]
    fn report_destination_rules() {
        let p = lunar_primary(0);
        let mut d = CrebData::new(0);
        assert_eq!(resolve_report_destination(&d, &p), EndpointId::ipn(31, 1));
        d.sequence_id = Some(0);
        d.report_types = Some(ReportTypes(4));
        d.block_source = Some(EndpointId::ipn(31, 0));
        assert_eq!(resolve_report_destination(&d, &p), EndpointId::ipn(31, 0));
        d.report_endpoint = Some(EndpointId::ipn(9, 0));
        assert_eq!(resolve_report_destination(&d, &p), EndpointId::ipn(9, 0));
    }

    #[test]
    fn record_event_matches_requested_type() {
        let limits = crate::signal::FlushLimits {
            max_bundles: 100,
            max_pending: crate::SimDuration::from_secs(10),
        };
        let mut table = CrsTable::new(limits);
        let rover = EndpointId::ipn(21, 0);
        let b = lunar_bundle(3);
        let out = record_event(&mut table, rover, &b, ReportReason::DELETION, SimTime::ZERO);
        assert!(out.queued.is_empty());
        assert!(table.is_empty());
        let out = record_event(&mut table, rover, &b, ReportReason::DELIVERY, SimTime::ZERO);
        assert_eq!(
            out.queued,
            [(EndpointId::ipn(31, 1), crebs(&b).next().unwrap().tag)]
        );
        assert_eq!(
            table.drafts().next().unwrap().destination,
            EndpointId::ipn(31, 1)
        );
        // the inserting node never reports on its own block
        let out = record_event(
            &mut table,
            EndpointId::ipn(31, 0),
            &b,
            ReportReason::DELIVERY,
            SimTime::ZERO,
        );
        assert!(out.queued.is_empty());
    }

    #[test]
    fn count_threshold_flushes_at_limit() {
        let limits = crate::signal::FlushLimits {
            max_bundles: 100,
            max_pending: crate::SimDuration::from_secs(10),
        };
        let mut table = CrsTable::new(limits);
        let rover = EndpointId::ipn(21, 0);
        for n in 0..99 {
            let out = record_event(
                &mut table,
                rover,
                &lunar_bundle(n),
                ReportReason::DELIVERY,
                SimTime::ZERO,
            );
            assert!(out.flushed.is_empty());
        }
        let out = record_event(
            &mut table,
            rover,
            &lunar_bundle(99),
            ReportReason::DELIVERY,
            SimTime::ZERO,
        );
        assert_eq!(out.flushed.len(), 1);
        assert_eq!(out.flushed[0].tag_count(), 100);
        assert!(table.is_empty());
    }

    #[test]
    fn age_threshold_is_inclusive() {
        let limits = crate::signal::FlushLimits {
            max_bundles: 100,
            max_pending: crate::SimDuration::from_secs(10),
        };
        let mut table = CrsTable::new(limits);
        assert!(table.poll_flush(SimTime::from_secs_f64(5.0)).is_empty());
        record_event(
            &mut table,
            EndpointId::ipn(21, 0),
            &lunar_bundle(0),
            ReportReason::DELIVERY,
            SimTime::from_secs_f64(1.2),
        );
        assert_eq!(table.next_deadline(), Some(SimTime::from_secs_f64(11.2)));
        assert!(table.poll_flush(SimTime::from_secs_f64(11.19)).is_empty());
        assert_eq!(table.poll_flush(SimTime::from_secs_f64(11.2)).len(), 1);
    }

    #[test]
    fn crs_for_gap_case() {
        let limits = crate::signal::FlushLimits {
            max_bundles: 100,
            max_pending: crate::SimDuration::from_secs(10),
        };
        let mut table = CrsTable::new(limits);
        for n in (0..50).filter(|&n| n != 17) {
            record_event(
                &mut table,
                EndpointId::ipn(21, 0),
                &lunar_bundle(n),
                ReportReason::DELIVERY,
                SimTime::ZERO,
            );
        }
        let draft = table
            .poll_flush(SimTime::from_secs_f64(10.0))
            .pop()
            .unwrap();
        let sig = crs_signal(&draft);
        let c = &sig.entries[&ReportReason::DELIVERY];
        assert_eq!(c.to_string(), "dst(ipn:21.1):0+17,dst(ipn:21.1):18+32");
        let bytes = build_crs(&draft);
        let back = parse_crs(&bytes, EndpointId::ipn(31, 0), u64::MAX).unwrap();
        assert_eq!(back, draft.entries);
    }

    #[test]
    fn crs_singleton_and_bad_payloads() {
        let mut d = CrsDraft::new(EndpointId::ipn(31, 1), SimTime::ZERO);
        let tag = BundleTag::new(
            SequenceScope::PerDestination(EndpointId::ipn(21, 1)),
            0,
            EndpointId::ipn(31, 0),
        );
        d.insert(ReportReason::DELIVERY, tag);
        let bytes = build_crs(&d);
        // [64, {2: [[0, 1, [2, [21, 1]]]]}]
        assert_eq!(
            bytes,
            [0x82, 0x18, 0x40, 0xa1, 0x02, 0x81, 0x83, 0x00, 0x01, 0x82, 0x02, 0x82, 0x15, 0x01]
        );
        assert!(matches!(
            parse_crs(&[0x82, 0x18, 0x40, 0x80], EndpointId::ipn(1, 0), u64::MAX),
            Err(Error::MalformedSignal(_))
        ));
        assert!(matches!(
            parse_crs(&[0xa1, 0x41, 0x00, 0x80], EndpointId::ipn(1, 0), u64::MAX),
            Err(Error::MalformedSignal(_))
        ));
        assert!(matches!(
            parse_crs(&[0xa1, 0x20, 0x80], EndpointId::ipn(1, 0), u64::MAX),
            Err(Error::MalformedSignal(_))
        ));
    }
}
