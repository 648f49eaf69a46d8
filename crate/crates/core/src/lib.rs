//! Compressed reporting and custody signalling for Bundle Protocol version 7.
//!
//! The crate provides the wire formats (CREB, CTEB, Bundle Sequence
//! Collections, CRS and CCS administrative records), the sequence counters
//! that give bundles their compact identity, and a deterministic node agent
//! that drives reporting and custody transfer. It needs only `alloc`.

#![no_std]

extern crate alloc;
#[cfg(test)]
extern crate std;

pub mod bundle;
pub mod cbor;
pub mod collection;
pub mod custody;
pub mod eid;
mod error;
pub mod node;
pub mod reporting;
pub mod sequence;
pub mod signal;
pub mod store;
pub mod time;

pub use bundle::{Bundle, BundleId, CanonicalBlock, CrcType, PrimaryBlock};
pub use collection::{coalesce, BundleSequence, BundleSequenceCollection};
pub use custody::{CtebData, CustodyDecision, CustodyPolicy, DispositionCode, RetentionConstraint};
pub use eid::EndpointId;
pub use error::Error;
pub use node::{Mib, Node, NodeConfig, NodeEvent, Output, SendOptions};
pub use reporting::{CrebData, ReportReason, ReportTypes};
pub use sequence::{BundleTag, SequenceCounterTable, SequenceScope};
pub use time::{SimDuration, SimTime};
