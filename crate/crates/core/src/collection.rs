//! Bundle Sequences and Bundle Sequence Collections: run-length encoded sets
//! of bundle tags, the payload of every compressed signal.

use alloc::collections::BTreeSet;
use alloc::vec::Vec;
use core::fmt;
use core::str::FromStr;

use crate::cbor::{Decoder, Encoder, MAJOR_ARRAY, MAJOR_UINT};
use crate::eid::EndpointId;
use crate::sequence::{BundleTag, SequenceScope};
use crate::Error;

/// Sequence numbers `first ..= first + length - 1` within one scope.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct BundleSequence {
    pub scope: SequenceScope,
    /// `None` means "the administrative endpoint of the node receiving the report".
    pub block_source: Option<EndpointId>,
    pub first: u64,
    pub length: u64,
}

impl BundleSequence {
    pub fn last(&self) -> Option<u64> {
        self.first.checked_add(self.length.checked_sub(1)?)
    }

    pub fn encode(&self, enc: &mut Encoder) {
        enc.array(if self.block_source.is_some() { 4 } else { 3 })
            .uint(self.first)
            .uint(self.length);
        match self.scope {
            SequenceScope::Explicit(id) => {
                enc.uint(id.get());
            }
            SequenceScope::PerDestination(dest) => dest.encode(enc),
        }
        if let Some(src) = self.block_source {
            src.encode(enc);
        }
    }

    pub fn decode(dec: &mut Decoder<'_>) -> Result<Self, Error> {
        let len = dec.array().map_err(Error::signal)?;
        if !(3..=4).contains(&len) {
            return Err(Error::MalformedSignal(
                "bundle sequence must have 3 or 4 elements",
            ));
        }
        let first = dec.uint().map_err(Error::signal)?;
        let length = dec.uint().map_err(Error::signal)?;
        if length == 0 {
            return Err(Error::MalformedSignal(
                "bundle sequence length must be positive",
            ));
        }
        let scope = match dec.peek_major().map_err(Error::signal)? {
            MAJOR_UINT => {
                let id = dec.uint().map_err(Error::signal)?;
                SequenceScope::explicit(id).ok_or(Error::MalformedSignal(
                    "sequence id 0 must be sent as an eid",
                ))?
            }
            MAJOR_ARRAY => {
                SequenceScope::PerDestination(EndpointId::decode(dec).map_err(signal_eid)?)
            }
            _ => {
                return Err(Error::MalformedSignal(
                    "sequence scope must be an id or an eid",
                ))
            }
        };
        let block_source = if len == 4 {
            Some(EndpointId::decode(dec).map_err(signal_eid)?)
        } else {
            None
        };
        Ok(BundleSequence {
            scope,
            block_source,
            first,
            length,
        })
    }
}

fn signal_eid(e: Error) -> Error {
    match e {
        Error::MalformedEid(m) => Error::MalformedSignal(m),
        other => other,
    }
}

impl fmt::Display for BundleSequence {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}:{}+{}", self.scope, self.first, self.length)?;
        if let Some(src) = self.block_source {
            write!(f, "@{src}")?;
        }
        Ok(())
    }
}

impl FromStr for BundleSequence {
    type Err = Error;

    /// `dst(ipn:21.1):0+17`, `id(8):0+2@ipn:10.0`.
    fn from_str(s: &str) -> Result<Self, Error> {
        let bad = Error::Config("sequence must be <scope>:<first>+<length>[@<eid>]");
        let close = s.find("):").ok_or(bad)?;
        let scope: SequenceScope = s[..=close].parse()?;
        let rest = &s[close + 2..];
        let (range, source) = match rest.split_once('@') {
            Some((r, src)) => (r, Some(src.parse()?)),
            None => (rest, None),
        };
        let (first, length) = range.split_once('+').ok_or(bad)?;
        let first = first.parse().map_err(|_| bad)?;
        let length: u64 = length.parse().map_err(|_| bad)?;
        if length == 0 {
            return Err(bad);
        }
        Ok(BundleSequence {
            scope,
            block_source: source,
            first,
            length,
        })
    }
}

/// An ordered list of bundle sequences.
#[derive(Debug, Clone, Default, PartialEq, Eq, Hash)]
pub struct BundleSequenceCollection {
    pub sequences: Vec<BundleSequence>,
}

impl BundleSequenceCollection {
    pub fn is_empty(&self) -> bool {
        self.sequences.is_empty()
    }

    pub fn len(&self) -> usize {
        self.sequences.len()
    }

    /// Total number of tags described.
    pub fn tag_count(&self) -> u64 {
        self.sequences.iter().map(|s| s.length).sum()
    }

    pub fn iter(&self) -> core::slice::Iter<'_, BundleSequence> {
        self.sequences.iter()
    }

    /// Drops the block source from every sequence where it equals `receiver_admin`.
    pub fn omit_block_source(mut self, receiver_admin: EndpointId) -> Self {
        for s in &mut self.sequences {
            if s.block_source == Some(receiver_admin) {
                s.block_source = None;
            }
        }
        self
    }

    pub fn without_block_source(mut self) -> Self {
        for s in &mut self.sequences {
            s.block_source = None;
        }
        self
    }

    /// Expands back into tags, filling absent block sources with
    /// `receiver_admin`. Fails if a sequence runs past `max_number`.
    pub fn expand(
        &self,
        receiver_admin: EndpointId,
        max_number: u64,
    ) -> Result<BTreeSet<BundleTag>, Error> {
        let mut out = BTreeSet::new();
        for s in &self.sequences {
            let last = s.last().ok_or(Error::Overflow)?;
            if last > max_number {
                return Err(Error::Overflow);
            }
            let src = s.block_source.unwrap_or(receiver_admin);
            out.extend((s.first..=last).map(|n| BundleTag::new(s.scope, n, src)));
        }
        Ok(out)
    }

    pub fn encode(&self, enc: &mut Encoder) {
        enc.array(self.sequences.len());
        for s in &self.sequences {
            s.encode(enc);
        }
    }

    pub fn decode(dec: &mut Decoder<'_>) -> Result<Self, Error> {
        let n = dec.array().map_err(Error::signal)?;
        let mut sequences = Vec::new();
        for _ in 0..n {
            sequences.push(BundleSequence::decode(dec)?);
        }
        Ok(BundleSequenceCollection { sequences })
    }
}

impl fmt::Display for BundleSequenceCollection {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for (i, s) in self.sequences.iter().enumerate() {
            if i > 0 {
                f.write_str(",")?;
            }
            write!(f, "{s}")?;
        }
        Ok(())
    }
}

impl FromStr for BundleSequenceCollection {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self, Error> {
        let s = s.trim();
        if s.is_empty() {
            return Ok(Self::default());
        }
        let sequences = s
            .split(',')
            .map(|p| p.trim().parse())
            .collect::<Result<Vec<_>, _>>()?;
        Ok(BundleSequenceCollection { sequences })
    }
}

/// Partitions tags by (scope, block source) and emits maximal runs of
/// consecutive numbers. Output is ordered by (scope, block source, first) and
/// always carries an explicit block source.
pub fn coalesce<'a, I>(tags: I) -> BundleSequenceCollection
where
    I: IntoIterator<Item = &'a BundleTag>,
{
    let sorted: BTreeSet<&BundleTag> = tags.into_iter().collect();
    let mut sequences: Vec<BundleSequence> = Vec::new();
    for tag in sorted {
        if let Some(run) = sequences.last_mut() {
            let same_group = run.scope == tag.scope && run.block_source == Some(tag.block_source);
            if same_group && run.first.checked_add(run.length) == Some(tag.number) {
                run.length += 1;
                continue;
            }
        }
        sequences.push(BundleSequence {
            scope: tag.scope,
            block_source: Some(tag.block_source),
            first: tag.number,
            length: 1,
        });
    }
    BundleSequenceCollection { sequences }
}

/// Sequence numbers in `lo..=hi` that no tag of `scope` reports.
pub fn detect_gaps(
    reported: &BTreeSet<BundleTag>,
    scope: &SequenceScope,
    lo: u64,
    hi: u64,
) -> BTreeSet<u64> {
    let present: BTreeSet<u64> = reported
        .iter()
        .filter(|t| &t.scope == scope)
        .map(|t| t.number)
        .collect();
    (lo..=hi).filter(|n| !present.contains(n)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::string::ToString;
    use alloc::vec;

    fn dst(n: u64, s: u64) -> SequenceScope {
        SequenceScope::PerDestination(EndpointId::ipn(n, s))
    }

    #[test]
    fn coalesces_two_scopes() {
        let src = EndpointId::ipn(10, 0);
        let id8 = SequenceScope::explicit(8).unwrap();
        let mut tags: BTreeSet<BundleTag> =
            (4..=9).map(|n| BundleTag::new(dst(1, 1), n, src)).collect();
        tags.extend((0..=1).map(|n| BundleTag::new(id8, n, src)));
        let c = coalesce(&tags);
        assert_eq!(
            c.sequences,
            vec![
                BundleSequence {
                    scope: dst(1, 1),
                    block_source: Some(src),
                    first: 4,
                    length: 6
                },
                BundleSequence {
                    scope: id8,
                    block_source: Some(src),
                    first: 0,
                    length: 2
                },
            ]
        );
    }

    #[test]
    fn gap_splits_run() {
        let src = EndpointId::ipn(31, 0);
        let tags: BTreeSet<BundleTag> = (0..50u64)
            .filter(|&n| n != 17)
            .map(|n| BundleTag::new(dst(21, 1), n, src))
            .collect();
        let c = coalesce(&tags);
        let runs: Vec<(u64, u64)> = c.iter().map(|s| (s.first, s.length)).collect();
        assert_eq!(runs, [(0, 17), (18, 32)]);
        assert!(coalesce(&BTreeSet::new()).is_empty());
    }

    #[test]
    fn expand_fills_receiver() {
        let id8 = SequenceScope::explicit(8).unwrap();
        let c = BundleSequenceCollection {
            sequences: vec![BundleSequence {
                scope: id8,
                block_source: None,
                first: 0,
                length: 2,
            }],
        };
        let rx = EndpointId::ipn(10, 0);
        let got = c.expand(rx, u64::MAX).unwrap();
        assert_eq!(
            got,
            [BundleTag::new(id8, 0, rx), BundleTag::new(id8, 1, rx)]
                .into_iter()
                .collect()
        );
    }

    #[test]
    fn expand_six() {
        let c: BundleSequenceCollection = "dst(ipn:1.1):4+6@ipn:10.0".parse().unwrap();
        let got = c.expand(EndpointId::ipn(99, 0), u64::MAX).unwrap();
        assert_eq!(
            got.iter().map(|t| t.number).collect::<Vec<_>>(),
            [4, 5, 6, 7, 8, 9]
        );
    }

    #[test]
    fn expand_overflow() {
        let c: BundleSequenceCollection = "id(3):8+4".parse().unwrap();
        assert_eq!(c.expand(EndpointId::ipn(1, 0), 10), Err(Error::Overflow));
        assert!(c.expand(EndpointId::ipn(1, 0), 11).is_ok());
        let wrap = BundleSequenceCollection {
            sequences: vec![BundleSequence {
                scope: dst(1, 1),
                block_source: None,
                first: u64::MAX,
                length: 2,
            }],
        };
        assert_eq!(
            wrap.expand(EndpointId::ipn(1, 0), u64::MAX),
            Err(Error::Overflow)
        );
    }

    #[test]
    fn wire_form() {
        let s = BundleSequence {
            scope: SequenceScope::explicit(8).unwrap(),
            block_source: None,
            first: 0,
            length: 2,
        };
        let mut e = Encoder::new();
        s.encode(&mut e);
        assert_eq!(e.into_bytes(), [0x83, 0x00, 0x02, 0x08]);
        let s = BundleSequence {
            scope: dst(1, 1),
            block_source: None,
            first: 4,
            length: 6,
        };
        let mut e = Encoder::new();
        s.encode(&mut e);
        let bytes = e.into_bytes();
        assert_eq!(bytes, [0x83, 0x04, 0x06, 0x82, 0x02, 0x82, 0x01, 0x01]);
        assert_eq!(BundleSequence::decode(&mut Decoder::new(&bytes)), Ok(s));
        // scope encoded as uint 0 is not allowed
        assert!(BundleSequence::decode(&mut Decoder::new(&[0x83, 0x00, 0x01, 0x00])).is_err());
        assert!(BundleSequence::decode(&mut Decoder::new(&[0x83, 0x00, 0x00, 0x01])).is_err());
    }

    #[test]
    fn gaps() {
        let src = EndpointId::ipn(31, 0);
        let scope = dst(21, 1);
        let reported: BTreeSet<BundleTag> = (0..50u64)
            .filter(|&n| n != 17)
            .map(|n| BundleTag::new(scope, n, src))
            .collect();
        assert_eq!(
            detect_gaps(&reported, &scope, 0, 49),
            [17].into_iter().collect()
        );
        let full: BTreeSet<BundleTag> = (0..50u64).map(|n| BundleTag::new(scope, n, src)).collect();
        assert!(detect_gaps(&full, &scope, 0, 49).is_empty());
        assert_eq!(
            detect_gaps(&BTreeSet::new(), &scope, 0, 2),
            [0, 1, 2].into_iter().collect()
        );
        // other scopes do not fill the gap
        let other: BTreeSet<BundleTag> = [BundleTag::new(dst(8, 9), 1, src)].into_iter().collect();
        assert_eq!(detect_gaps(&other, &scope, 0, 2).len(), 3);
    }

    #[test]
    fn text_round_trip() {
        let text = "dst(ipn:21.1):0+17,dst(ipn:21.1):18+32,id(8):0+2@ipn:10.0";
        let c: BundleSequenceCollection = text.parse().unwrap();
        assert_eq!(c.to_string(), text);
    }
}
