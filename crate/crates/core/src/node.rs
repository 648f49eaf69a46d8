//! The node agent: bundle reception, forwarding and delivery, reporting and
//! custody bookkeeping, signal drafting and retransmission timers.
//!
//! A [`Node`] is a pure state machine. Every entry point takes the current
//! time and returns an [`Output`] with the encoded bundles to transmit and the
//! events that happened, in order. Nothing is sent or timed internally.

use alloc::collections::{BTreeMap, BTreeSet};
use alloc::vec::Vec;
use core::num::NonZeroU64;

use crate::bundle::{
    Bundle, BundleId, CrcType, PrimaryBlock, CREB_BLOCK_TYPE, CTEB_BLOCK_TYPE, FLAG_ADMIN_RECORD,
};
use crate::collection::{detect_gaps, BundleSequenceCollection};
use crate::custody::{
    build_ccs, ccs_signal, cteb, CcsDraft, CcsTable, CtebData, CustodyDecision, CustodyPolicy,
    CustodyRecord, DispositionCode, RecentlyAccepted, RetentionConstraint,
};
use crate::eid::EndpointId;
use crate::reporting::{
    build_crs, crebs, crs_signal, record_event, CrebData, CrsDraft, CrsTable, ReportReason,
    ReportTypes,
};
use crate::sequence::{BundleTag, SequenceCounterTable, SequenceScope, DEFAULT_SEQUENCE_MAX};
use crate::signal::{
    AdminRecord, FlushLimits, Signal, SignalKey, CCS_RECORD_TYPE, CRS_RECORD_TYPE,
};
use crate::store::BundleStore;
use crate::time::{SimDuration, SimTime};
use crate::Error;

/// Which counter a node draws new sequence numbers from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum ScopePolicy {
    #[default]
    PerDestination,
    Explicit(NonZeroU64),
}

/// A CREB this node adds to bundles it forwards on behalf of others.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct CrebPolicy {
    pub report_types: ReportTypes,
    pub report_to: Option<EndpointId>,
}

/// Management parameters of a node.
#[derive(Debug, Clone, PartialEq)]
pub struct Mib {
    pub crs_limits: FlushLimits,
    pub ccs_limits: FlushLimits,
    pub retransmission_timer: SimDuration,
    pub sequence_max: u64,
    pub store_capacity: usize,
    pub duplicate_capacity: usize,
    pub default_lifetime: SimDuration,
    pub scope_policy: ScopePolicy,
    pub creb_policy: Option<CrebPolicy>,
    /// Double the retransmission timer (up to 8x) on every duplicate advisory.
    pub timer_backoff: bool,
    /// Retransmit bundles whose acceptance was skipped over in a CCS or CRS.
    pub gap_retransmit: bool,
    /// Retransmit everything held for a neighbor when a contact with it opens.
    pub retransmit_on_contact: bool,
}

impl Default for Mib {
    fn default() -> Self {
        Mib {
            crs_limits: FlushLimits {
                max_bundles: 100,
                max_pending: SimDuration::from_secs(10),
            },
            ccs_limits: FlushLimits {
                max_bundles: 100,
                max_pending: SimDuration::from_secs(10),
            },
            retransmission_timer: SimDuration::from_secs(20),
            sequence_max: DEFAULT_SEQUENCE_MAX,
            store_capacity: 10_000,
            duplicate_capacity: 1 << 16,
            default_lifetime: SimDuration::from_secs(3600),
            scope_policy: ScopePolicy::PerDestination,
            creb_policy: None,
            timer_backoff: false,
            gap_retransmit: false,
            retransmit_on_contact: false,
        }
    }
}

#[derive(Debug, Clone)]
pub struct NodeConfig {
    pub node: u64,
    /// Destination node number to next-hop node number.
    pub routes: BTreeMap<u64, u64>,
    pub default_route: Option<u64>,
    pub mib: Mib,
    pub policy: CustodyPolicy,
}

impl NodeConfig {
    pub fn new(node: u64) -> Self {
        NodeConfig {
            node,
            routes: BTreeMap::new(),
            default_route: None,
            mib: Mib::default(),
            policy: CustodyPolicy::AlwaysAccept,
        }
    }

    pub fn route(mut self, destination: u64, next_hop: u64) -> Self {
        self.routes.insert(destination, next_hop);
        self
    }
}

/// How an application bundle should be sent.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct SendOptions {
    /// Adds a CREB requesting these reports when set.
    pub report_types: Option<ReportTypes>,
    pub report_to: Option<EndpointId>,
    pub custody: bool,
    pub lifetime: Option<SimDuration>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SignalKind {
    Crs,
    Ccs,
}

impl SignalKind {
    pub fn as_str(self) -> &'static str {
        match self {
            SignalKind::Crs => "CRS",
            SignalKind::Ccs => "CCS",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DeletionReason {
    NoRoute,
    CustodyRefused,
    Expired,
}

impl DeletionReason {
    pub fn as_str(self) -> &'static str {
        match self {
            DeletionReason::NoRoute => "no_route",
            DeletionReason::CustodyRefused => "custody_refused",
            DeletionReason::Expired => "expired",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TriggerKind {
    TimerExpiry,
    ContactStart,
    ExplicitCommand,
    ForwardingFailure,
    GapDetected,
    RefusedDropped,
}

impl TriggerKind {
    pub fn as_str(self) -> &'static str {
        match self {
            TriggerKind::TimerExpiry => "timer",
            TriggerKind::ContactStart => "contact",
            TriggerKind::ExplicitCommand => "command",
            TriggerKind::ForwardingFailure => "forwarding_failure",
            TriggerKind::GapDetected => "gap",
            TriggerKind::RefusedDropped => "refused_dropped",
        }
    }
}

/// Conditions that make a custodian resend bundles it holds.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum RetransmissionTrigger {
    TimerExpiry(BundleTag),
    ContactStart { next_hop: u64 },
    ExplicitCommand(Vec<BundleTag>),
    ForwardingFailure(BundleTag),
    GapDetected(Vec<BundleTag>),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum NodeEvent {
    AduSent {
        bundle: BundleId,
        destination: EndpointId,
        tag: Option<BundleTag>,
        custody: bool,
    },
    Received {
        bundle: BundleId,
        admin: bool,
    },
    Delivered {
        bundle: BundleId,
        tag: Option<BundleTag>,
    },
    Forwarded {
        bundle: BundleId,
        next_hop: u64,
        admin: bool,
    },
    Deleted {
        bundle: BundleId,
        reason: DeletionReason,
    },
    ReportQueued {
        destination: EndpointId,
        reason: ReportReason,
        tag: BundleTag,
    },
    DispositionQueued {
        destination: EndpointId,
        code: DispositionCode,
        tag: BundleTag,
    },
    SignalSent {
        kind: SignalKind,
        destination: EndpointId,
        created_at: SimTime,
        tags: usize,
        content: Vec<(i64, BundleSequenceCollection)>,
    },
    SignalReceived {
        kind: SignalKind,
        source: EndpointId,
        content: Vec<(i64, BundleSequenceCollection)>,
    },
    CustodyRequested {
        bundle: BundleId,
        tag: BundleTag,
    },
    /// `retained` is false at the destination, where delivery ends the chain.
    CustodyAccepted {
        bundle: BundleId,
        previous: BundleTag,
        tag: Option<BundleTag>,
        retained: bool,
    },
    CustodyRefused {
        bundle: BundleId,
        tag: BundleTag,
        decision: CustodyDecision,
    },
    CustodyReleased {
        bundle: BundleId,
        tag: BundleTag,
        code: DispositionCode,
    },
    Retransmitted {
        bundle: BundleId,
        tag: BundleTag,
        trigger: TriggerKind,
        count: u32,
    },
    DuplicateReceived {
        bundle: BundleId,
        tag: BundleTag,
    },
    DuplicateAdvisory {
        tag: BundleTag,
        timer: SimDuration,
    },
    UnknownTag {
        tag: BundleTag,
        code: DispositionCode,
    },
    GapDetected {
        reason: ReportReason,
        scope: SequenceScope,
        missing: Vec<u64>,
    },
    CustodyExpired {
        bundle: BundleId,
        tag: BundleTag,
    },
    Malformed {
        error: Error,
    },
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Transmission {
    pub next_hop: u64,
    pub bytes: Vec<u8>,
    pub bundle: BundleId,
    pub admin: bool,
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Output {
    pub transmissions: Vec<Transmission>,
    pub events: Vec<NodeEvent>,
}

impl Output {
    pub fn extend(&mut self, other: Output) {
        self.transmissions.extend(other.transmissions);
        self.events.extend(other.events);
    }
}

fn expiry(primary: &PrimaryBlock) -> SimTime {
    SimTime::from_millis(primary.creation_time.saturating_add(primary.lifetime))
}

fn wire_content<K: SignalKey>(s: &Signal<K>) -> Vec<(i64, BundleSequenceCollection)> {
    s.wire_order()
        .into_iter()
        .map(|(k, c)| (k.to_wire(), c.clone()))
        .collect()
}

#[derive(Debug, Clone)]
pub struct Node {
    config: NodeConfig,
    counters: SequenceCounterTable,
    store: BundleStore,
    custody: BTreeMap<BundleTag, CustodyRecord>,
    crs: CrsTable,
    ccs: CcsTable,
    accepted: RecentlyAccepted,
    creation_sequence: u64,
    last_creation_ms: u64,
    timer_factor: u64,
}

impl Node {
    pub fn new(config: NodeConfig) -> Self {
        let mib = &config.mib;
        Node {
            counters: SequenceCounterTable::new(mib.sequence_max),
            store: BundleStore::new(mib.store_capacity),
            custody: BTreeMap::new(),
            crs: CrsTable::new(mib.crs_limits),
            ccs: CcsTable::new(mib.ccs_limits),
            accepted: RecentlyAccepted::new(mib.duplicate_capacity),
            creation_sequence: 0,
            last_creation_ms: u64::MAX,
            timer_factor: 1,
            config,
        }
    }

    pub fn number(&self) -> u64 {
        self.config.node
    }

    pub fn admin(&self) -> EndpointId {
        EndpointId::ipn(self.config.node, 0)
    }

    pub fn config(&self) -> &NodeConfig {
        &self.config
    }

    pub fn store(&self) -> &BundleStore {
        &self.store
    }

    pub fn counters(&self) -> &SequenceCounterTable {
        &self.counters
    }

    pub fn custody_records(&self) -> impl Iterator<Item = &CustodyRecord> {
        self.custody.values()
    }

    pub fn crs_drafts(&self) -> impl Iterator<Item = &CrsDraft> {
        self.crs.drafts()
    }

    pub fn ccs_drafts(&self) -> impl Iterator<Item = &CcsDraft> {
        self.ccs.drafts()
    }

    pub fn retransmission_timer(&self) -> SimDuration {
        self.config
            .mib
            .retransmission_timer
            .saturating_mul(self.timer_factor)
    }

    pub fn next_hop(&self, destination_node: u64) -> Option<u64> {
        self.config
            .routes
            .get(&destination_node)
            .copied()
            .or(self.config.default_route)
    }

    fn scope_for(&self, destination: EndpointId) -> SequenceScope {
        match self.config.mib.scope_policy {
            ScopePolicy::PerDestination => SequenceScope::PerDestination(destination),
            ScopePolicy::Explicit(id) => SequenceScope::Explicit(id),
        }
    }

    fn next_primary(
        &mut self,
        destination: EndpointId,
        source: EndpointId,
        flags: u64,
        lifetime: SimDuration,
        now: SimTime,
    ) -> PrimaryBlock {
        let ms = now.as_millis();
        if ms != self.last_creation_ms {
            self.last_creation_ms = ms;
            self.creation_sequence = 0;
        }
        let seq = self.creation_sequence;
        self.creation_sequence += 1;
        PrimaryBlock {
            flags,
            crc_type: CrcType::Crc32c,
            destination,
            source,
            report_to: source,
            creation_time: ms,
            creation_sequence: seq,
            lifetime: lifetime.as_millis().max(1),
        }
    }

    /// Originates an application bundle from a local endpoint.
    pub fn send_adu(
        &mut self,
        source: EndpointId,
        destination: EndpointId,
        payload: Vec<u8>,
        options: &SendOptions,
        now: SimTime,
    ) -> Result<Output, Error> {
        if source.node != self.config.node {
            return Err(Error::Config("source endpoint is not on this node"));
        }
        let lifetime = options.lifetime.unwrap_or(self.config.mib.default_lifetime);
        let primary = self.next_primary(destination, source, 0, lifetime, now);
        let mut bundle = Bundle::new(primary, payload);
        let mut out = Output::default();

        // CREB and CTEB share one sequence number so both name the same tag.
        let scope = self.scope_for(destination);
        let local = destination.node == self.config.node;
        let wants_custody = options.custody && !local;
        let number = (options.report_types.is_some() || wants_custody)
            .then(|| self.counters.next_sequence_number(scope));
        let tag = number.map(|n| BundleTag::new(scope, n, self.admin()));

        if let (Some(types), Some(n)) = (options.report_types, number) {
            let mut creb = CrebData::new(n);
            creb.sequence_id = Some(scope.wire_id());
            creb.report_types = Some(types);
            if let Some(rep) = options.report_to {
                creb.block_source = Some(self.admin());
                creb.report_endpoint = Some(rep);
            }
            bundle.insert_extension(CREB_BLOCK_TYPE, creb.encode()?);
        }
        out.events.push(NodeEvent::AduSent {
            bundle: bundle.id(),
            destination,
            tag,
            custody: wants_custody,
        });

        if local {
            self.deliver(&bundle, now, &mut out);
            return Ok(out);
        }
        let Some(next_hop) = self.next_hop(destination.node) else {
            self.delete(&bundle, DeletionReason::NoRoute, now, &mut out);
            return Ok(out);
        };
        if wants_custody {
            let tag = tag.expect("custody implies a sequence number");
            if let Err(e) = self.take_custody(&mut bundle, tag, now, &mut out) {
                out.events.push(NodeEvent::Malformed { error: e });
                return Err(e);
            }
            out.events.push(NodeEvent::CustodyRequested {
                bundle: bundle.id(),
                tag,
            });
        }
        self.transmit(&bundle, next_hop, now, &mut out);
        Ok(out)
    }

    /// Stamps a CTEB for `tag`, stores the bundle under ACCEPTED and opens a
    /// custody record.
    fn take_custody(
        &mut self,
        bundle: &mut Bundle,
        tag: BundleTag,
        now: SimTime,
        _out: &mut Output,
    ) -> Result<(), Error> {
        let data = CtebData::for_tag(&tag).encode();
        match bundle
            .blocks
            .iter_mut()
            .find(|b| b.block_type == CTEB_BLOCK_TYPE)
        {
            Some(b) => b.data = data,
            None => {
                bundle.insert_extension(CTEB_BLOCK_TYPE, data);
            }
        }
        let id = bundle.id();
        self.store.insert(
            bundle.clone(),
            RetentionConstraint::CustodyAccepted,
            expiry(&bundle.primary),
        )?;
        self.store
            .remove_constraint(&id, RetentionConstraint::CustodyPending);
        self.custody.insert(
            tag,
            CustodyRecord {
                tag,
                bundle: id,
                retransmission_deadline: now + self.retransmission_timer(),
                retransmit_count: 0,
                last_sent: now,
            },
        );
        Ok(())
    }

    /// Processes one encoded bundle arriving from a neighbor.
    pub fn on_receive(&mut self, bytes: &[u8], now: SimTime) -> Output {
        let mut out = Output::default();
        let bundle = match Bundle::decode(bytes) {
            Ok(b) => b,
            Err(error) => {
                out.events.push(NodeEvent::Malformed { error });
                return out;
            }
        };
        let admin = bundle.primary.is_admin_record();
        out.events.push(NodeEvent::Received {
            bundle: bundle.id(),
            admin,
        });
        let local = bundle.primary.destination.node == self.config.node;

        if admin {
            if local {
                self.dispatch_admin(&bundle, now, &mut out);
            } else {
                self.forward(&bundle, now, &mut out);
            }
            return out;
        }
        if expiry(&bundle.primary) <= now {
            self.delete(&bundle, DeletionReason::Expired, now, &mut out);
            return out;
        }
        self.report(&bundle, ReportReason::RECEPTION, now, &mut out);

        match cteb(&bundle) {
            Err(error) => {
                out.events.push(NodeEvent::Malformed { error });
            }
            Ok(Some(c)) => self.custody_transfer(bundle, c, local, now, &mut out),
            Ok(None) if local => self.deliver(&bundle, now, &mut out),
            Ok(None) => {
                let mut bundle = bundle;
                self.stamp_creb(&mut bundle, None);
                self.forward(&bundle, now, &mut out);
            }
        }
        out
    }

    fn custody_transfer(
        &mut self,
        mut bundle: Bundle,
        c: CtebData,
        local: bool,
        now: SimTime,
        out: &mut Output,
    ) {
        let previous = c.tag(&bundle.primary);
        let to = previous.block_source;
        let id = bundle.id();
        if self.accepted.contains(&previous) {
            out.events.push(NodeEvent::DuplicateReceived {
                bundle: id,
                tag: previous,
            });
            self.queue_disposition(to, DispositionCode::ACCEPTED_DUPLICATE, previous, now, out);
            return;
        }

        let routable = local || self.next_hop(bundle.primary.destination.node).is_some();
        let decision = if !routable
            || self
                .store
                .insert(
                    bundle.clone(),
                    RetentionConstraint::CustodyPending,
                    expiry(&bundle.primary),
                )
                .is_err()
        {
            CustodyDecision::RefuseDrop
        } else {
            self.config.policy.evaluate(&previous)
        };

        match decision {
            CustodyDecision::Accept if local => {
                self.store.release(&id, RetentionConstraint::CustodyPending);
                self.accepted.insert(previous);
                out.events.push(NodeEvent::CustodyAccepted {
                    bundle: id,
                    previous,
                    tag: None,
                    retained: false,
                });
                self.queue_disposition(to, DispositionCode::ACCEPTED, previous, now, out);
                self.deliver(&bundle, now, out);
            }
            CustodyDecision::Accept => {
                let scope = self.scope_for(bundle.primary.destination);
                let n = self.counters.next_sequence_number(scope);
                let tag = BundleTag::new(scope, n, self.admin());
                self.stamp_creb(&mut bundle, Some(n));
                if let Err(error) = self.take_custody(&mut bundle, tag, now, out) {
                    out.events.push(NodeEvent::Malformed { error });
                    return;
                }
                self.accepted.insert(previous);
                out.events.push(NodeEvent::CustodyAccepted {
                    bundle: id,
                    previous,
                    tag: Some(tag),
                    retained: true,
                });
                self.queue_disposition(to, DispositionCode::ACCEPTED, previous, now, out);
                self.forward(&bundle, now, out);
            }
            CustodyDecision::RefuseDrop => {
                self.store.release(&id, RetentionConstraint::CustodyPending);
                out.events.push(NodeEvent::CustodyRefused {
                    bundle: id,
                    tag: previous,
                    decision,
                });
                self.queue_disposition(to, DispositionCode::REFUSED_DROPPED, previous, now, out);
                self.delete(&bundle, DeletionReason::CustodyRefused, now, out);
            }
            CustodyDecision::RefuseForward => {
                self.store.release(&id, RetentionConstraint::CustodyPending);
                out.events.push(NodeEvent::CustodyRefused {
                    bundle: id,
                    tag: previous,
                    decision,
                });
                self.queue_disposition(to, DispositionCode::REFUSED_FORWARDED, previous, now, out);
                if local {
                    self.deliver(&bundle, now, out);
                } else {
                    self.forward(&bundle, now, out);
                }
            }
        }
    }

    /// Adds this node's own CREB when a CREB policy is configured and the
    /// bundle does not already carry one from here.
    fn stamp_creb(&mut self, bundle: &mut Bundle, number: Option<u64>) {
        let Some(policy) = self.config.mib.creb_policy else {
            return;
        };
        let admin = self.admin();
        if bundle.primary.source.node == self.config.node
            || crebs(bundle).any(|c| c.tag.block_source == admin)
        {
            return;
        }
        let scope = self.scope_for(bundle.primary.destination);
        let n = number.unwrap_or_else(|| self.counters.next_sequence_number(scope));
        let creb = CrebData {
            sequence_number: n,
            sequence_id: Some(scope.wire_id()),
            report_types: Some(policy.report_types),
            block_source: Some(admin),
            report_endpoint: policy.report_to,
        };
        if let Ok(data) = creb.encode() {
            bundle.insert_extension(CREB_BLOCK_TYPE, data);
        }
    }

    fn first_tag(bundle: &Bundle) -> Option<BundleTag> {
        crebs(bundle)
            .next()
            .map(|c| c.tag)
            .or_else(|| cteb(bundle).ok().flatten().map(|c| c.tag(&bundle.primary)))
    }

    fn deliver(&mut self, bundle: &Bundle, now: SimTime, out: &mut Output) {
        out.events.push(NodeEvent::Delivered {
            bundle: bundle.id(),
            tag: Self::first_tag(bundle),
        });
        self.report(bundle, ReportReason::DELIVERY, now, out);
    }

    fn delete(&mut self, bundle: &Bundle, reason: DeletionReason, now: SimTime, out: &mut Output) {
        out.events.push(NodeEvent::Deleted {
            bundle: bundle.id(),
            reason,
        });
        if !bundle.primary.is_admin_record() {
            self.report(bundle, ReportReason::DELETION, now, out);
        }
    }

    fn forward(&mut self, bundle: &Bundle, now: SimTime, out: &mut Output) {
        match self.next_hop(bundle.primary.destination.node) {
            Some(hop) => self.transmit(bundle, hop, now, out),
            None => self.delete(bundle, DeletionReason::NoRoute, now, out),
        }
    }

    fn transmit(&mut self, bundle: &Bundle, next_hop: u64, now: SimTime, out: &mut Output) {
        let admin = bundle.primary.is_admin_record();
        out.transmissions.push(Transmission {
            next_hop,
            bytes: bundle.encode(),
            bundle: bundle.id(),
            admin,
        });
        out.events.push(NodeEvent::Forwarded {
            bundle: bundle.id(),
            next_hop,
            admin,
        });
        if !admin && bundle.primary.source.node != self.config.node {
            self.report(bundle, ReportReason::FORWARDING, now, out);
        }
    }

    fn report(&mut self, bundle: &Bundle, reason: ReportReason, now: SimTime, out: &mut Output) {
        let admin = self.admin();
        let outcome = record_event(&mut self.crs, admin, bundle, reason, now);
        for (destination, tag) in outcome.queued {
            out.events.push(NodeEvent::ReportQueued {
                destination,
                reason,
                tag,
            });
        }
        for draft in outcome.flushed {
            self.send_crs(&draft, now, out);
        }
    }

    fn queue_disposition(
        &mut self,
        to: EndpointId,
        code: DispositionCode,
        tag: BundleTag,
        now: SimTime,
        out: &mut Output,
    ) {
        out.events.push(NodeEvent::DispositionQueued {
            destination: to,
            code,
            tag,
        });
        if let Some(draft) = self.ccs.add(to, code, tag, now) {
            self.send_ccs(&draft, now, out);
        }
    }

    fn send_crs(&mut self, draft: &CrsDraft, now: SimTime, out: &mut Output) {
        let content = wire_content(&crs_signal(draft));
        self.send_signal(
            SignalKind::Crs,
            draft.destination,
            draft.created_at,
            draft.tag_count(),
            content,
            build_crs(draft),
            now,
            out,
        );
    }

    fn send_ccs(&mut self, draft: &CcsDraft, now: SimTime, out: &mut Output) {
        let content = wire_content(&ccs_signal(draft));
        self.send_signal(
            SignalKind::Ccs,
            draft.destination,
            draft.created_at,
            draft.tag_count(),
            content,
            build_ccs(draft),
            now,
            out,
        );
    }

    #[allow(clippy::too_many_arguments)]
    fn send_signal(
        &mut self,
        kind: SignalKind,
        destination: EndpointId,
        created_at: SimTime,
        tags: usize,
        content: Vec<(i64, BundleSequenceCollection)>,
        record: Vec<u8>,
        now: SimTime,
        out: &mut Output,
    ) {
        out.events.push(NodeEvent::SignalSent {
            kind,
            destination,
            created_at,
            tags,
            content,
        });
        let lifetime = self.config.mib.default_lifetime;
        let primary = self.next_primary(
            destination.admin(),
            self.admin(),
            FLAG_ADMIN_RECORD,
            lifetime,
            now,
        );
        let bundle = Bundle::new(primary, record);
        if destination.node == self.config.node {
            self.dispatch_admin(&bundle, now, out);
        } else {
            self.forward(&bundle, now, out);
        }
    }

    fn dispatch_admin(&mut self, bundle: &Bundle, now: SimTime, out: &mut Output) {
        let record = match AdminRecord::decode(bundle.payload()) {
            Ok(r) => r,
            Err(error) => {
                out.events.push(NodeEvent::Malformed { error });
                return;
            }
        };
        let source = bundle.primary.source;
        let max = self.counters.max_value();
        match record.record_type {
            CRS_RECORD_TYPE => {
                let parsed = Signal::<ReportReason>::decode(record.content).and_then(|s| {
                    let tags = s.expand(self.admin(), max)?;
                    Ok((s, tags))
                });
                match parsed {
                    Ok((signal, tags)) => {
                        out.events.push(NodeEvent::SignalReceived {
                            kind: SignalKind::Crs,
                            source,
                            content: wire_content(&signal),
                        });
                        self.process_crs(&tags, now, out);
                    }
                    Err(error) => out.events.push(NodeEvent::Malformed { error }),
                }
            }
            CCS_RECORD_TYPE => {
                let parsed = Signal::<DispositionCode>::decode(record.content).and_then(|s| {
                    let tags = s.expand(self.admin(), max)?;
                    Ok((s, tags))
                });
                match parsed {
                    Ok((signal, tags)) => {
                        out.events.push(NodeEvent::SignalReceived {
                            kind: SignalKind::Ccs,
                            source,
                            content: wire_content(&signal),
                        });
                        out.extend(self.process_ccs(&tags, now));
                    }
                    Err(error) => out.events.push(NodeEvent::Malformed { error }),
                }
            }
            _ => out.events.push(NodeEvent::Malformed {
                error: Error::MalformedSignal("unsupported administrative record type"),
            }),
        }
    }

    /// Reports interior gaps among tags this node stamped, per reason and scope.
    fn process_crs(
        &mut self,
        tags: &BTreeMap<ReportReason, BTreeSet<BundleTag>>,
        now: SimTime,
        out: &mut Output,
    ) {
        let admin = self.admin();
        let mut retransmit = Vec::new();
        for (reason, set) in tags {
            let mine: BTreeSet<BundleTag> = set
                .iter()
                .filter(|t| t.block_source == admin)
                .copied()
                .collect();
            let scopes: BTreeSet<SequenceScope> = mine.iter().map(|t| t.scope).collect();
            for scope in scopes {
                let mut numbers = mine.iter().filter(|t| t.scope == scope).map(|t| t.number);
                let lo = numbers.next().unwrap_or(0);
                let hi = numbers.next_back().unwrap_or(lo);
                let missing: Vec<u64> = detect_gaps(&mine, &scope, lo, hi).into_iter().collect();
                if missing.is_empty() {
                    continue;
                }
                retransmit.extend(missing.iter().map(|n| BundleTag::new(scope, *n, admin)));
                out.events.push(NodeEvent::GapDetected {
                    reason: *reason,
                    scope,
                    missing,
                });
            }
        }
        if self.config.mib.gap_retransmit && !retransmit.is_empty() {
            out.extend(
                self.on_retransmission_trigger(RetransmissionTrigger::GapDetected(retransmit), now),
            );
        }
    }

    /// Applies custody dispositions addressed to this node.
    pub fn process_ccs(
        &mut self,
        tags: &BTreeMap<DispositionCode, BTreeSet<BundleTag>>,
        now: SimTime,
    ) -> Output {
        let mut out = Output::default();
        let mut accepted: BTreeMap<SequenceScope, BTreeSet<u64>> = BTreeMap::new();
        for (code, set) in tags {
            for tag in set {
                let Some(record) = self.custody.get(tag) else {
                    out.events.push(NodeEvent::UnknownTag {
                        tag: *tag,
                        code: *code,
                    });
                    continue;
                };
                let bundle = record.bundle;
                if code.is_acceptance() {
                    self.custody.remove(tag);
                    self.store
                        .release(&bundle, RetentionConstraint::CustodyAccepted);
                    accepted.entry(tag.scope).or_default().insert(tag.number);
                    out.events.push(NodeEvent::CustodyReleased {
                        bundle,
                        tag: *tag,
                        code: *code,
                    });
                    if *code == DispositionCode::ACCEPTED_DUPLICATE {
                        if self.config.mib.timer_backoff {
                            self.timer_factor = (self.timer_factor * 2).min(8);
                        }
                        out.events.push(NodeEvent::DuplicateAdvisory {
                            tag: *tag,
                            timer: self.retransmission_timer(),
                        });
                    }
                } else if *code == DispositionCode::REFUSED_DROPPED {
                    self.retransmit(tag, TriggerKind::RefusedDropped, now, &mut out);
                } else {
                    let deadline = now + self.retransmission_timer();
                    if let Some(r) = self.custody.get_mut(tag) {
                        r.retransmission_deadline = deadline;
                    }
                }
            }
        }
        if self.config.mib.gap_retransmit {
            let admin = self.admin();
            let skipped: Vec<BundleTag> = self
                .custody
                .keys()
                .filter(|t| {
                    t.block_source == admin
                        && accepted.get(&t.scope).is_some_and(|ns| {
                            matches!((ns.first(), ns.last()), (Some(lo), Some(hi)) if *lo < t.number && t.number < *hi)
                        })
                })
                .copied()
                .collect();
            if !skipped.is_empty() {
                out.extend(
                    self.on_retransmission_trigger(
                        RetransmissionTrigger::GapDetected(skipped),
                        now,
                    ),
                );
            }
        }
        out
    }

    fn retransmit(
        &mut self,
        tag: &BundleTag,
        trigger: TriggerKind,
        now: SimTime,
        out: &mut Output,
    ) {
        let timer = self.retransmission_timer();
        let Some(record) = self.custody.get_mut(tag) else {
            return;
        };
        record.retransmission_deadline = now + timer;
        let Some(stored) = self.store.get(&record.bundle) else {
            return;
        };
        let bundle = stored.bundle.clone();
        let Some(hop) = self
            .config
            .routes
            .get(&bundle.primary.destination.node)
            .copied()
            .or(self.config.default_route)
        else {
            return;
        };
        record.retransmit_count += 1;
        record.last_sent = now;
        out.events.push(NodeEvent::Retransmitted {
            bundle: bundle.id(),
            tag: *tag,
            trigger,
            count: record.retransmit_count,
        });
        out.transmissions.push(Transmission {
            next_hop: hop,
            bytes: bundle.encode(),
            bundle: bundle.id(),
            admin: false,
        });
        out.events.push(NodeEvent::Forwarded {
            bundle: bundle.id(),
            next_hop: hop,
            admin: false,
        });
    }

    pub fn on_retransmission_trigger(
        &mut self,
        trigger: RetransmissionTrigger,
        now: SimTime,
    ) -> Output {
        let mut out = Output::default();
        match trigger {
            RetransmissionTrigger::TimerExpiry(tag) => {
                self.retransmit(&tag, TriggerKind::TimerExpiry, now, &mut out)
            }
            RetransmissionTrigger::ForwardingFailure(tag) => {
                self.retransmit(&tag, TriggerKind::ForwardingFailure, now, &mut out)
            }
            RetransmissionTrigger::ExplicitCommand(tags) => {
                for t in tags {
                    self.retransmit(&t, TriggerKind::ExplicitCommand, now, &mut out);
                }
            }
            RetransmissionTrigger::GapDetected(tags) => {
                for t in tags {
                    self.retransmit(&t, TriggerKind::GapDetected, now, &mut out);
                }
            }
            RetransmissionTrigger::ContactStart { next_hop } => {
                if !self.config.mib.retransmit_on_contact {
                    return out;
                }
                let held: Vec<BundleTag> = self
                    .custody
                    .values()
                    .filter(|r| {
                        self.store.get(&r.bundle).is_some_and(|s| {
                            self.next_hop(s.bundle.primary.destination.node) == Some(next_hop)
                        })
                    })
                    .map(|r| r.tag)
                    .collect();
                for t in held {
                    self.retransmit(&t, TriggerKind::ContactStart, now, &mut out);
                }
            }
        }
        out
    }

    /// Flushes aged signal drafts, drops expired bundles and fires due
    /// retransmission timers.
    pub fn on_timer(&mut self, now: SimTime) -> Output {
        let mut out = Output::default();
        for draft in self.crs.poll_flush(now) {
            self.send_crs(&draft, now, &mut out);
        }
        for draft in self.ccs.poll_flush(now) {
            self.send_ccs(&draft, now, &mut out);
        }
        for id in self.store.expired(now) {
            let Some(stored) = self.store.expire(&id) else {
                continue;
            };
            let held: Vec<BundleTag> = self
                .custody
                .values()
                .filter(|r| r.bundle == id)
                .map(|r| r.tag)
                .collect();
            for tag in held {
                self.custody.remove(&tag);
                out.events
                    .push(NodeEvent::CustodyExpired { bundle: id, tag });
            }
            self.delete(&stored.bundle, DeletionReason::Expired, now, &mut out);
        }
        let due: Vec<BundleTag> = self
            .custody
            .values()
            .filter(|r| r.retransmission_deadline <= now)
            .map(|r| r.tag)
            .collect();
        for tag in due {
            self.retransmit(&tag, TriggerKind::TimerExpiry, now, &mut out);
        }
        out
    }

    /// Earliest time at which [`Node::on_timer`] has work to do.
    pub fn next_deadline(&self) -> Option<SimTime> {
        [
            self.crs.next_deadline(),
            self.ccs.next_deadline(),
            self.custody
                .values()
                .map(|r| r.retransmission_deadline)
                .min(),
            self.store.next_expiry(),
        ]
        .into_iter()
        .flatten()
        .min()
    }
}
