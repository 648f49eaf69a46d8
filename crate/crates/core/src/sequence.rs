//! Sequence-based bundle identity.
//!
//! A node that inserts a reporting or custody block stamps the bundle with a
//! sequence number drawn from one of its sequence counters. Sequence ID 0 is
//! reserved: it selects the counter kept for the bundle's destination
//! endpoint. The triple (scope, number, block source) is unique network-wide.

use alloc::collections::BTreeMap;
use core::fmt;
use core::num::NonZeroU64;
use core::str::FromStr;

use crate::bundle::PrimaryBlock;
use crate::eid::EndpointId;
use crate::Error;

/// Default largest sequence number before a counter wraps.
pub const DEFAULT_SEQUENCE_MAX: u64 = u32::MAX as u64;

/// Which counter a sequence number was drawn from.
///
/// Ordering puts per-destination scopes first, then explicit IDs ascending.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum SequenceScope {
    /// Reserved sequence ID 0: one counter per destination endpoint.
    PerDestination(EndpointId),
    Explicit(NonZeroU64),
}

impl SequenceScope {
    /// Maps a wire sequence ID to a scope; 0 selects the destination's counter.
    pub fn from_id(id: u64, destination: EndpointId) -> Self {
        match NonZeroU64::new(id) {
            Some(id) => SequenceScope::Explicit(id),
            None => SequenceScope::PerDestination(destination),
        }
    }

    pub fn explicit(id: u64) -> Option<Self> {
        NonZeroU64::new(id).map(SequenceScope::Explicit)
    }

    /// The sequence ID as carried in an extension block.
    pub fn wire_id(&self) -> u64 {
        match self {
            SequenceScope::PerDestination(_) => 0,
            SequenceScope::Explicit(id) => id.get(),
        }
    }
}

impl fmt::Display for SequenceScope {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            SequenceScope::PerDestination(d) => write!(f, "dst({d})"),
            SequenceScope::Explicit(id) => write!(f, "id({id})"),
        }
    }
}

impl FromStr for SequenceScope {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self, Error> {
        let bad = Error::Config("scope must be dst(<eid>) or id(<n>)");
        if let Some(inner) = s.strip_prefix("dst(").and_then(|r| r.strip_suffix(')')) {
            return Ok(SequenceScope::PerDestination(inner.parse()?));
        }
        if let Some(inner) = s.strip_prefix("id(").and_then(|r| r.strip_suffix(')')) {
            let id: u64 = inner.parse().map_err(|_| bad)?;
            return SequenceScope::explicit(id).ok_or(bad);
        }
        Err(bad)
    }
}

/// Network-unique identity of one stamped bundle.
///
/// Field order makes the derived ordering group tags by (scope, block source)
/// with sequence numbers ascending inside each group.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct BundleTag {
    pub scope: SequenceScope,
    pub block_source: EndpointId,
    pub number: u64,
}

impl BundleTag {
    pub fn new(scope: SequenceScope, number: u64, block_source: EndpointId) -> Self {
        BundleTag {
            scope,
            block_source,
            number,
        }
    }
}

impl fmt::Display for BundleTag {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}/{}@{}", self.scope, self.number, self.block_source)
    }
}

impl FromStr for BundleTag {
    type Err = Error;

    /// Parses `dst(ipn:21.1)/17@ipn:31.0` or `id(8)/0@ipn:10.0`.
    fn from_str(s: &str) -> Result<Self, Error> {
        let bad = Error::Config("tag must be <scope>/<number>@<eid>");
        let (scope, rest) = s.split_once(")/").ok_or(bad)?;
        let (number, source) = rest.split_once('@').ok_or(bad)?;
        let scope: SequenceScope = alloc::format!("{scope})").parse()?;
        Ok(BundleTag::new(
            scope,
            number.parse().map_err(|_| bad)?,
            source.parse()?,
        ))
    }
}

/// Per-node set of Bundle Sequence Counters.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SequenceCounterTable {
    counters: BTreeMap<SequenceScope, u64>,
    max_value: u64,
}

impl Default for SequenceCounterTable {
    fn default() -> Self {
        Self::new(DEFAULT_SEQUENCE_MAX)
    }
}

impl SequenceCounterTable {
    pub fn new(max_value: u64) -> Self {
        SequenceCounterTable {
            counters: BTreeMap::new(),
            max_value,
        }
    }

    pub fn max_value(&self) -> u64 {
        self.max_value
    }

    /// Returns the counter's current value and advances it modulo `max + 1`.
    pub fn next_sequence_number(&mut self, scope: SequenceScope) -> u64 {
        let max = self.max_value;
        let slot = self.counters.entry(scope).or_insert(0);
        let current = *slot;
        *slot = if current >= max { 0 } else { current + 1 };
        current
    }

    /// The number the next call for `scope` will return.
    pub fn peek(&self, scope: &SequenceScope) -> u64 {
        self.counters.get(scope).copied().unwrap_or(0)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&SequenceScope, &u64)> {
        self.counters.iter()
    }
}

/// Builds the tag for a block's identification fields, applying the decoding
/// defaults: absent or zero ID selects the destination's counter, absent block
/// source means the source node's administrative endpoint.
pub fn derive_tag(
    scope_field: Option<u64>,
    sequence_number: u64,
    block_source_field: Option<EndpointId>,
    primary: &PrimaryBlock,
) -> BundleTag {
    let scope = SequenceScope::from_id(scope_field.unwrap_or(0), primary.destination);
    let block_source = block_source_field.unwrap_or(primary.source).admin();
    BundleTag::new(scope, sequence_number, block_source)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::bundle::CrcType;
    use alloc::string::ToString;
    use alloc::vec::Vec;

    fn primary(src: EndpointId, dst: EndpointId) -> PrimaryBlock {
        PrimaryBlock {
            flags: 0,
            crc_type: CrcType::Crc32c,
            destination: dst,
            source: src,
            report_to: src,
            creation_time: 0,
            creation_sequence: 0,
            lifetime: 1,
        }
    }

    #[test]
    fn counter_counts_from_zero_and_wraps() {
        let mut t = SequenceCounterTable::new(3);
        let s = SequenceScope::explicit(17).unwrap();
        let got: Vec<u64> = (0..5).map(|_| t.next_sequence_number(s)).collect();
        assert_eq!(got, [0, 1, 2, 3, 0]);
    }

    #[test]
    fn per_destination_counters_are_independent() {
        let mut t = SequenceCounterTable::default();
        let a = SequenceScope::PerDestination(EndpointId::ipn(2, 1));
        let b = SequenceScope::PerDestination(EndpointId::ipn(8, 9));
        let mut got_a = Vec::new();
        let mut got_b = Vec::new();
        for _ in 0..3 {
            got_a.push(t.next_sequence_number(a));
            got_b.push(t.next_sequence_number(b));
        }
        assert_eq!(got_a, [0, 1, 2]);
        assert_eq!(got_b, [0, 1, 2]);
    }

    #[test]
    fn derive_tag_explicit_scope() {
        let p = primary(EndpointId::ipn(5, 0), EndpointId::ipn(2, 1));
        let t = derive_tag(Some(17), 4, Some(EndpointId::ipn(5, 0)), &p);
        assert_eq!(
            t,
            BundleTag::new(
                SequenceScope::explicit(17).unwrap(),
                4,
                EndpointId::ipn(5, 0)
            )
        );
    }

    #[test]
    fn derive_tag_defaults() {
        let p = primary(EndpointId::ipn(31, 1), EndpointId::ipn(21, 1));
        let t = derive_tag(None, 9, None, &p);
        assert_eq!(
            t,
            BundleTag::new(
                SequenceScope::PerDestination(EndpointId::ipn(21, 1)),
                9,
                EndpointId::ipn(31, 0)
            )
        );
        assert_eq!(derive_tag(Some(0), 9, None, &p), t);
    }

    #[test]
    fn text_forms_round_trip() {
        let t = BundleTag::new(
            SequenceScope::PerDestination(EndpointId::ipn(21, 1)),
            17,
            EndpointId::ipn(31, 0),
        );
        assert_eq!(t.to_string(), "dst(ipn:21.1)/17@ipn:31.0");
        assert_eq!(t.to_string().parse::<BundleTag>(), Ok(t));
        let e = BundleTag::new(
            SequenceScope::explicit(8).unwrap(),
            0,
            EndpointId::ipn(10, 0),
        );
        assert_eq!(e.to_string().parse::<BundleTag>(), Ok(e));
        assert!("id(0)/1@ipn:1.0".parse::<BundleTag>().is_err());
    }
}
