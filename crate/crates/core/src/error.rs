use crate::cbor::CborError;

/// Everything that can go wrong while encoding, decoding or processing
/// bundles and the reporting/custody extensions.
#[derive(Debug, Clone, Copy, PartialEq, Eq, thiserror::Error)]
pub enum Error {
    #[error("malformed endpoint id: {0}")]
    MalformedEid(&'static str),
    #[error("malformed bundle: {0}")]
    MalformedBundle(&'static str),
    #[error("crc mismatch in block {block_number}")]
    CrcMismatch { block_number: u64 },
    #[error("malformed extension block: {0}")]
    MalformedBlock(&'static str),
    #[error("optional field present without all preceding fields")]
    PrefixViolation,
    #[error("malformed signal: {0}")]
    MalformedSignal(&'static str),
    #[error("sequence exceeds maximum sequence number")]
    Overflow,
    #[error("bundle already carries a custody transfer block")]
    DuplicateCteb,
    #[error("bundle store is full")]
    StoreFull,
    #[error("bundle is held by a retention constraint")]
    Retained,
    #[error("no route to node {0}")]
    NoRoute(u64),
    #[error("configuration error: {0}")]
    Config(&'static str),
}

impl Error {
    pub(crate) fn eid(e: CborError) -> Self {
        Error::MalformedEid(e.as_str())
    }

    pub(crate) fn bundle(e: CborError) -> Self {
        Error::MalformedBundle(e.as_str())
    }

    pub(crate) fn block(e: CborError) -> Self {
        Error::MalformedBlock(e.as_str())
    }

    pub(crate) fn signal(e: CborError) -> Self {
        Error::MalformedSignal(e.as_str())
    }
}
