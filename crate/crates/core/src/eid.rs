//! ipn-scheme endpoint identifiers.

use alloc::vec::Vec;
use core::fmt;
use core::str::FromStr;

use crate::cbor::{Decoder, Encoder, MAJOR_ARRAY};
use crate::Error;

const SCHEME_IPN: u64 = 2;

/// An `ipn:<node>.<service>` endpoint. Service number 0 is the node's
/// administrative endpoint.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct EndpointId {
    pub node: u64,
    pub service: u64,
}

impl EndpointId {
    pub const fn ipn(node: u64, service: u64) -> Self {
        EndpointId { node, service }
    }

    /// The administrative endpoint of the node owning this endpoint.
    pub const fn admin(self) -> Self {
        EndpointId {
            node: self.node,
            service: 0,
        }
    }

    pub const fn is_admin(self) -> bool {
        self.service == 0
    }

    pub fn encode(&self, enc: &mut Encoder) {
        enc.array(2)
            .uint(SCHEME_IPN)
            .array(2)
            .uint(self.node)
            .uint(self.service);
    }

    pub fn decode(dec: &mut Decoder<'_>) -> Result<Self, Error> {
        if dec.array().map_err(Error::eid)? != 2 {
            return Err(Error::MalformedEid("eid must be a two-element array"));
        }
        if dec.uint().map_err(Error::eid)? != SCHEME_IPN {
            return Err(Error::MalformedEid("only the ipn scheme is supported"));
        }
        if dec.peek_major().map_err(Error::eid)? != MAJOR_ARRAY
            || dec.array().map_err(Error::eid)? != 2
        {
            return Err(Error::MalformedEid("ipn ssp must be [node, service]"));
        }
        let node = dec.uint().map_err(Error::eid)?;
        let service = dec.uint().map_err(Error::eid)?;
        Ok(EndpointId { node, service })
    }
}

pub fn encode_eid(eid: EndpointId) -> Vec<u8> {
    let mut enc = Encoder::new();
    eid.encode(&mut enc);
    enc.into_bytes()
}

pub fn decode_eid(bytes: &[u8]) -> Result<EndpointId, Error> {
    let mut dec = Decoder::new(bytes);
    let eid = EndpointId::decode(&mut dec)?;
    dec.finish().map_err(Error::eid)?;
    Ok(eid)
}

impl fmt::Display for EndpointId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "ipn:{}.{}", self.node, self.service)
    }
}

impl FromStr for EndpointId {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self, Error> {
        let ssp = s
            .strip_prefix("ipn:")
            .ok_or(Error::MalformedEid("expected ipn: prefix"))?;
        let (node, service) = ssp
            .split_once('.')
            .ok_or(Error::MalformedEid("expected <node>.<service>"))?;
        let parse = |t: &str| {
            if t.is_empty() || !t.bytes().all(|b| b.is_ascii_digit()) {
                return Err(Error::MalformedEid("non-numeric ipn component"));
            }
            t.parse::<u64>()
                .map_err(|_| Error::MalformedEid("ipn component out of range"))
        };
        Ok(EndpointId {
            node: parse(node)?,
            service: parse(service)?,
        })
    }
}
