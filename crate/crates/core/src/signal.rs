//! Machinery shared by Compressed Reporting Signals and Compressed Custody
//! Signals: the administrative-record envelope, the key → collection map, and
//! pending drafts with their count/age flush rules.

use alloc::collections::{BTreeMap, BTreeSet};
use alloc::vec::Vec;

use crate::cbor::{encode_int, Decoder, Encoder};
use crate::collection::{coalesce, BundleSequenceCollection};
use crate::eid::EndpointId;
use crate::sequence::BundleTag;
use crate::time::{SimDuration, SimTime};
use crate::Error;

/// Administrative record type for a Compressed Reporting Signal.
pub const CRS_RECORD_TYPE: u64 = 64;
/// Administrative record type for a Compressed Custody Signal.
pub const CCS_RECORD_TYPE: u64 = 65;

/// A map key of a compressed signal (report reason or disposition code).
pub trait SignalKey: Copy + Ord + core::fmt::Debug {
    fn to_wire(self) -> i64;
    fn from_wire(v: i64) -> Result<Self, Error>;
}

/// `[record type, record content]` carried as the payload of an
/// administrative bundle.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AdminRecord<'a> {
    pub record_type: u64,
    pub content: &'a [u8],
}

impl<'a> AdminRecord<'a> {
    pub fn encode(record_type: u64, content: &[u8]) -> Vec<u8> {
        let mut enc = Encoder::new();
        enc.array(2).uint(record_type).raw(content);
        enc.into_bytes()
    }

    pub fn decode(bytes: &'a [u8]) -> Result<Self, Error> {
        let mut dec = Decoder::new(bytes);
        if dec.array().map_err(Error::signal)? != 2 {
            return Err(Error::MalformedSignal(
                "administrative record must be [type, content]",
            ));
        }
        let record_type = dec.uint().map_err(Error::signal)?;
        let content = dec.item().map_err(Error::signal)?;
        dec.finish().map_err(Error::signal)?;
        Ok(AdminRecord {
            record_type,
            content,
        })
    }
}

/// Key → Bundle Sequence Collection map as it appears on the wire.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Signal<K: SignalKey> {
    pub entries: BTreeMap<K, BundleSequenceCollection>,
}

impl<K: SignalKey> Default for Signal<K> {
    fn default() -> Self {
        Signal {
            entries: BTreeMap::new(),
        }
    }
}

impl<K: SignalKey> Signal<K> {
    pub fn from_tags(entries: &BTreeMap<K, BTreeSet<BundleTag>>) -> Self {
        Signal {
            entries: entries
                .iter()
                .filter(|(_, t)| !t.is_empty())
                .map(|(k, t)| (*k, coalesce(t)))
                .collect(),
        }
    }

    pub fn map_collections(
        mut self,
        mut f: impl FnMut(BundleSequenceCollection) -> BundleSequenceCollection,
    ) -> Self {
        for c in self.entries.values_mut() {
            *c = f(core::mem::take(c));
        }
        self
    }

    pub fn sequence_count(&self) -> usize {
        self.entries.values().map(|c| c.len()).sum()
    }

    /// Entries in bytewise order of their encoded keys, the order they
    /// take on the wire.
    pub fn wire_order(&self) -> Vec<(K, &BundleSequenceCollection)> {
        let mut keyed: Vec<(Vec<u8>, K, &BundleSequenceCollection)> = self
            .entries
            .iter()
            .map(|(k, c)| (encode_int(k.to_wire()), *k, c))
            .collect();
        keyed.sort_by(|a, b| a.0.cmp(&b.0));
        keyed.into_iter().map(|(_, k, c)| (k, c)).collect()
    }

    pub fn encode(&self, enc: &mut Encoder) {
        let entries = self.wire_order();
        enc.map(entries.len());
        for (k, c) in entries {
            enc.int(k.to_wire());
            c.encode(enc);
        }
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut enc = Encoder::new();
        self.encode(&mut enc);
        enc.into_bytes()
    }

    pub fn decode(bytes: &[u8]) -> Result<Self, Error> {
        let mut dec = Decoder::new(bytes);
        let n = dec
            .map()
            .map_err(|_| Error::MalformedSignal("signal content must be a map"))?;
        let mut entries = BTreeMap::new();
        for _ in 0..n {
            let key = dec
                .int()
                .map_err(|_| Error::MalformedSignal("signal keys must be integers"))?;
            let key = K::from_wire(key)?;
            let collection = BundleSequenceCollection::decode(&mut dec)?;
            if entries.insert(key, collection).is_some() {
                return Err(Error::MalformedSignal("duplicate signal key"));
            }
        }
        dec.finish().map_err(Error::signal)?;
        Ok(Signal { entries })
    }

    pub fn expand(
        &self,
        receiver_admin: EndpointId,
        max_number: u64,
    ) -> Result<BTreeMap<K, BTreeSet<BundleTag>>, Error> {
        self.entries
            .iter()
            .map(|(k, c)| Ok((*k, c.expand(receiver_admin, max_number)?)))
            .collect()
    }
}

/// Decodes a signal from either a full administrative record of the expected
/// type or a bare content map.
pub fn decode_signal<K: SignalKey>(bytes: &[u8], record_type: u64) -> Result<Signal<K>, Error> {
    match Decoder::new(bytes).peek_major() {
        Ok(crate::cbor::MAJOR_ARRAY) => {
            let rec = AdminRecord::decode(bytes)?;
            if rec.record_type != record_type {
                return Err(Error::MalformedSignal(
                    "unexpected administrative record type",
                ));
            }
            Signal::decode(rec.content)
        }
        _ => Signal::decode(bytes),
    }
}

/// Count and age thresholds for sending a pending signal.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct FlushLimits {
    pub max_bundles: usize,
    pub max_pending: SimDuration,
}

/// A pending signal toward one destination.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SignalDraft<K: SignalKey> {
    pub destination: EndpointId,
    pub created_at: SimTime,
    pub entries: BTreeMap<K, BTreeSet<BundleTag>>,
    distinct: BTreeSet<BundleTag>,
}

impl<K: SignalKey> SignalDraft<K> {
    pub fn new(destination: EndpointId, created_at: SimTime) -> Self {
        SignalDraft {
            destination,
            created_at,
            entries: BTreeMap::new(),
            distinct: BTreeSet::new(),
        }
    }

    /// Distinct tags across all keys.
    pub fn tag_count(&self) -> usize {
        self.distinct.len()
    }

    pub fn is_empty(&self) -> bool {
        self.distinct.is_empty()
    }

    /// Returns false if the (key, tag) pair was already present.
    pub fn insert(&mut self, key: K, tag: BundleTag) -> bool {
        self.distinct.insert(tag);
        self.entries.entry(key).or_default().insert(tag)
    }

    pub fn signal(&self) -> Signal<K> {
        Signal::from_tags(&self.entries)
    }
}

/// All pending drafts of one signal kind on a node, keyed by destination.
#[derive(Debug, Clone)]
pub struct DraftTable<K: SignalKey> {
    drafts: BTreeMap<EndpointId, SignalDraft<K>>,
    limits: FlushLimits,
}

impl<K: SignalKey> DraftTable<K> {
    pub fn new(limits: FlushLimits) -> Self {
        DraftTable {
            drafts: BTreeMap::new(),
            limits,
        }
    }

    pub fn limits(&self) -> FlushLimits {
        self.limits
    }

    pub fn is_empty(&self) -> bool {
        self.drafts.is_empty()
    }

    pub fn drafts(&self) -> impl Iterator<Item = &SignalDraft<K>> {
        self.drafts.values()
    }

    /// Adds `tag` under `key` to the draft toward `destination`, creating the
    /// draft if needed. A draft that reaches the bundle limit is removed and
    /// returned for sending.
    pub fn add(
        &mut self,
        destination: EndpointId,
        key: K,
        tag: BundleTag,
        now: SimTime,
    ) -> Option<SignalDraft<K>> {
        let draft = self
            .drafts
            .entry(destination)
            .or_insert_with(|| SignalDraft::new(destination, now));
        draft.insert(key, tag);
        if draft.tag_count() >= self.limits.max_bundles.max(1) {
            self.drafts.remove(&destination)
        } else {
            None
        }
    }

    /// Removes and returns every draft whose age has reached the pending limit.
    pub fn poll_flush(&mut self, now: SimTime) -> Vec<SignalDraft<K>> {
        let due: Vec<EndpointId> = self
            .drafts
            .values()
            .filter(|d| now.saturating_since(d.created_at) >= self.limits.max_pending)
            .map(|d| d.destination)
            .collect();
        due.into_iter()
            .filter_map(|d| self.drafts.remove(&d))
            .collect()
    }

    pub fn next_deadline(&self) -> Option<SimTime> {
        self.drafts
            .values()
            .map(|d| d.created_at + self.limits.max_pending)
            .min()
    }
}
