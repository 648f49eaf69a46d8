//! Compressed Custody Signalling: the Custody Transfer Extension Block
//! (CTEB), disposition codes, custody policies and the Compressed Custody
//! Signal (CCS) administrative record.

use alloc::boxed::Box;
use alloc::collections::{BTreeMap, BTreeSet, VecDeque};
use alloc::vec::Vec;
use core::fmt;
use core::str::FromStr;

use rand_chacha::ChaCha8Rng;
use rand_core::{RngCore, SeedableRng};

use crate::bundle::{Bundle, BundleId, PrimaryBlock, CTEB_BLOCK_TYPE};
use crate::cbor::{Decoder, Encoder};
use crate::eid::EndpointId;
use crate::reporting::block_eid;
use crate::sequence::{BundleTag, SequenceScope};
use crate::signal::{
    decode_signal, AdminRecord, DraftTable, Signal, SignalDraft, SignalKey, CCS_RECORD_TYPE,
};
use crate::time::SimTime;
use crate::Error;

/// CTEB contents. All three fields are mandatory; there is no report
/// endpoint because signals always go to the block source.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct CtebData {
    pub sequence_number: u64,
    /// 0 selects the per-destination counter.
    pub sequence_id: u64,
    pub block_source: EndpointId,
}

impl CtebData {
    pub fn for_tag(tag: &BundleTag) -> Self {
        CtebData {
            sequence_number: tag.number,
            sequence_id: tag.scope.wire_id(),
            block_source: tag.block_source,
        }
    }

    pub fn encode(&self) -> Vec<u8> {
        let mut enc = Encoder::new();
        enc.array(3)
            .uint(self.sequence_number)
            .uint(self.sequence_id);
        self.block_source.encode(&mut enc);
        enc.into_bytes()
    }

    pub fn decode(bytes: &[u8]) -> Result<Self, Error> {
        let mut dec = Decoder::new(bytes);
        if dec.array().map_err(Error::block)? != 3 {
            return Err(Error::MalformedBlock("cteb must have exactly 3 fields"));
        }
        let sequence_number = dec.uint().map_err(Error::block)?;
        let sequence_id = dec.uint().map_err(Error::block)?;
        let block_source = EndpointId::decode(&mut dec).map_err(block_eid)?;
        dec.finish().map_err(Error::block)?;
        Ok(CtebData {
            sequence_number,
            sequence_id,
            block_source,
        })
    }

    pub fn tag(&self, primary: &PrimaryBlock) -> BundleTag {
        BundleTag::new(
            SequenceScope::from_id(self.sequence_id, primary.destination),
            self.sequence_number,
            self.block_source,
        )
    }
}

pub fn encode_cteb(d: &CtebData) -> Vec<u8> {
    d.encode()
}

pub fn decode_cteb(bytes: &[u8]) -> Result<CtebData, Error> {
    CtebData::decode(bytes)
}

/// The bundle's CTEB, if any. A malformed CTEB is an error.
pub fn cteb(bundle: &Bundle) -> Result<Option<CtebData>, Error> {
    bundle
        .blocks_of_type(CTEB_BLOCK_TYPE)
        .next()
        .map(|b| CtebData::decode(&b.data))
        .transpose()
}

/// Custody disposition. Positive codes accept custody, negative codes refuse it.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct DispositionCode(pub i64);

impl DispositionCode {
    pub const ACCEPTED: DispositionCode = DispositionCode(1);
    pub const ACCEPTED_DUPLICATE: DispositionCode = DispositionCode(2);
    pub const REFUSED_DROPPED: DispositionCode = DispositionCode(-1);
    pub const REFUSED_FORWARDED: DispositionCode = DispositionCode(-2);

    pub fn is_acceptance(self) -> bool {
        self.0 > 0
    }

    pub fn is_reserved(self) -> bool {
        self.0.unsigned_abs() > 2
    }
}

impl SignalKey for DispositionCode {
    fn to_wire(self) -> i64 {
        self.0
    }

    fn from_wire(v: i64) -> Result<Self, Error> {
        if v == 0 {
            return Err(Error::MalformedSignal("disposition code 0 is undefined"));
        }
        Ok(DispositionCode(v))
    }
}

impl fmt::Display for DispositionCode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

/// Node-local state that prevents a stored bundle from being discarded.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum RetentionConstraint {
    /// Held while the agent decides whether to accept custody.
    CustodyPending,
    /// Held while this node is the bundle's custodian.
    CustodyAccepted,
}

impl fmt::Display for RetentionConstraint {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            RetentionConstraint::CustodyPending => "COMPRESSED_CUSTODY_PENDING",
            RetentionConstraint::CustodyAccepted => "COMPRESSED_CUSTODY_ACCEPTED",
        })
    }
}

/// Bookkeeping for one bundle this node is custodian of.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CustodyRecord {
    /// Identity stamped into the CTEB by this node.
    pub tag: BundleTag,
    pub bundle: BundleId,
    pub retransmission_deadline: SimTime,
    pub retransmit_count: u32,
    pub last_sent: SimTime,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum CustodyDecision {
    Accept,
    RefuseDrop,
    RefuseForward,
}

impl CustodyDecision {
    pub fn as_str(self) -> &'static str {
        match self {
            CustodyDecision::Accept => "accept",
            CustodyDecision::RefuseDrop => "drop",
            CustodyDecision::RefuseForward => "forward",
        }
    }
}

impl fmt::Display for CustodyDecision {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for CustodyDecision {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self, Error> {
        match s {
            "accept" => Ok(CustodyDecision::Accept),
            "drop" | "refuse_drop" => Ok(CustodyDecision::RefuseDrop),
            "forward" | "refuse_forward" => Ok(CustodyDecision::RefuseForward),
            _ => Err(Error::Config(
                "custody decision must be accept, drop or forward",
            )),
        }
    }
}

/// Decisions replayed per incoming sequence number. The n-th arrival of a
/// number uses the n-th entry of its list; once a list is exhausted (or for
/// unlisted numbers) `default` applies.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ScriptedPolicy {
    pub decisions: BTreeMap<u64, Vec<CustodyDecision>>,
    pub default: CustodyDecision,
    arrivals: BTreeMap<BundleTag, usize>,
}

impl ScriptedPolicy {
    pub fn new(decisions: BTreeMap<u64, Vec<CustodyDecision>>, default: CustodyDecision) -> Self {
        ScriptedPolicy {
            decisions,
            default,
            arrivals: BTreeMap::new(),
        }
    }

    fn evaluate(&mut self, tag: &BundleTag) -> CustodyDecision {
        let n = self.arrivals.entry(*tag).or_insert(0);
        let d = self
            .decisions
            .get(&tag.number)
            .and_then(|l| l.get(*n))
            .copied()
            .unwrap_or(self.default);
        *n += 1;
        d
    }
}

/// Accept / drop / forward with fixed probabilities from a seeded stream.
#[derive(Debug, Clone)]
pub struct ProbabilisticPolicy {
    pub p_accept: f64,
    pub p_drop: f64,
    pub p_forward: f64,
    rng: ChaCha8Rng,
}

impl ProbabilisticPolicy {
    pub fn new(p_accept: f64, p_drop: f64, p_forward: f64, seed: u64) -> Result<Self, Error> {
        let ps = [p_accept, p_drop, p_forward];
        if ps.iter().any(|p| !p.is_finite() || *p < 0.0)
            || (ps.iter().sum::<f64>() - 1.0).abs() > 1e-9
        {
            return Err(Error::Config(
                "custody probabilities must be non-negative and sum to 1",
            ));
        }
        Ok(ProbabilisticPolicy {
            p_accept,
            p_drop,
            p_forward,
            rng: ChaCha8Rng::seed_from_u64(seed),
        })
    }

    fn evaluate(&mut self) -> CustodyDecision {
        // 53 random bits -> uniform in [0, 1)
        let u = (self.rng.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64);
        if u < self.p_accept {
            CustodyDecision::Accept
        } else if u < self.p_accept + self.p_drop {
            CustodyDecision::RefuseDrop
        } else {
            CustodyDecision::RefuseForward
        }
    }
}

#[derive(Debug, Clone, Default)]
pub enum CustodyPolicy {
    #[default]
    AlwaysAccept,
    Scripted(ScriptedPolicy),
    Probabilistic(Box<ProbabilisticPolicy>),
}

impl CustodyPolicy {
    /// The policy's decision for an incoming CTEB tag.
    pub fn evaluate(&mut self, tag: &BundleTag) -> CustodyDecision {
        match self {
            CustodyPolicy::AlwaysAccept => CustodyDecision::Accept,
            CustodyPolicy::Scripted(s) => s.evaluate(tag),
            CustodyPolicy::Probabilistic(p) => p.evaluate(),
        }
    }
}

/// Bounded FIFO set of previous-custodian tags this node accepted custody for.
#[derive(Debug, Clone)]
pub struct RecentlyAccepted {
    order: VecDeque<BundleTag>,
    set: BTreeSet<BundleTag>,
    capacity: usize,
}

impl RecentlyAccepted {
    pub fn new(capacity: usize) -> Self {
        RecentlyAccepted {
            order: VecDeque::new(),
            set: BTreeSet::new(),
            capacity: capacity.max(1),
        }
    }

    pub fn contains(&self, tag: &BundleTag) -> bool {
        self.set.contains(tag)
    }

    pub fn insert(&mut self, tag: BundleTag) {
        if !self.set.insert(tag) {
            return;
        }
        self.order.push_back(tag);
        while self.order.len() > self.capacity {
            if let Some(old) = self.order.pop_front() {
                self.set.remove(&old);
            }
        }
    }

    pub fn len(&self) -> usize {
        self.set.len()
    }

    pub fn is_empty(&self) -> bool {
        self.set.is_empty()
    }
}

pub type CcsDraft = SignalDraft<DispositionCode>;
pub type CcsTable = DraftTable<DispositionCode>;

/// CCS content for a draft; block sources are always omitted.
pub fn ccs_signal(draft: &CcsDraft) -> Signal<DispositionCode> {
    draft.signal().map_collections(|c| c.without_block_source())
}

pub fn build_ccs(draft: &CcsDraft) -> Vec<u8> {
    AdminRecord::encode(CCS_RECORD_TYPE, &ccs_signal(draft).to_bytes())
}

/// Parses a CCS (administrative record or bare map); every tag gets the
/// receiving custodian as block source.
pub fn parse_ccs(
    bytes: &[u8],
    receiver_admin: EndpointId,
    max_number: u64,
) -> Result<BTreeMap<DispositionCode, BTreeSet<BundleTag>>, Error> {
    decode_signal::<DispositionCode>(bytes, CCS_RECORD_TYPE)?.expand(receiver_admin, max_number)
}
