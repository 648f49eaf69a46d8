//! Minimal BPv7 bundle layout: an indefinite-length CBOR array holding the
//! primary block followed by canonical blocks, payload block last.
//! Fragmentation is not supported.

use alloc::vec::Vec;
use core::fmt;

use crc::{Crc, CRC_16_IBM_SDLC, CRC_32_ISCSI};

use crate::cbor::{Decoder, Encoder};
use crate::eid::EndpointId;
use crate::Error;

pub const BP_VERSION: u64 = 7;

pub const PAYLOAD_BLOCK_TYPE: u64 = 1;
pub const PAYLOAD_BLOCK_NUMBER: u64 = 1;
/// Compressed Reporting Extension Block.
pub const CREB_BLOCK_TYPE: u64 = 192;
/// Custody Transfer Extension Block.
pub const CTEB_BLOCK_TYPE: u64 = 193;

pub const FLAG_IS_FRAGMENT: u64 = 0x01;
pub const FLAG_ADMIN_RECORD: u64 = 0x02;
pub const FLAG_MUST_NOT_FRAGMENT: u64 = 0x04;

static CRC16: Crc<u16> = Crc::<u16>::new(&CRC_16_IBM_SDLC);
static CRC32C: Crc<u32> = Crc::<u32>::new(&CRC_32_ISCSI);

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default)]
pub enum CrcType {
    None,
    Crc16,
    #[default]
    Crc32c,
}

impl CrcType {
    pub fn code(self) -> u64 {
        match self {
            CrcType::None => 0,
            CrcType::Crc16 => 1,
            CrcType::Crc32c => 2,
        }
    }

    pub fn from_code(code: u64) -> Option<Self> {
        match code {
            0 => Some(CrcType::None),
            1 => Some(CrcType::Crc16),
            2 => Some(CrcType::Crc32c),
            _ => None,
        }
    }

    fn width(self) -> usize {
        match self {
            CrcType::None => 0,
            CrcType::Crc16 => 2,
            CrcType::Crc32c => 4,
        }
    }

    /// CRC over `block` whose trailing CRC value bytes are already zeroed.
    fn compute(self, block: &[u8]) -> Vec<u8> {
        match self {
            CrcType::None => Vec::new(),
            CrcType::Crc16 => CRC16.checksum(block).to_be_bytes().to_vec(),
            CrcType::Crc32c => CRC32C.checksum(block).to_be_bytes().to_vec(),
        }
    }
}

/// Identity of a bundle as assigned by its source: (source, creation time, sequence).
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct BundleId {
    pub source: EndpointId,
    pub creation_time: u64,
    pub creation_sequence: u64,
}

impl fmt::Display for BundleId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{}@{}.{}",
            self.source, self.creation_time, self.creation_sequence
        )
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct PrimaryBlock {
    pub flags: u64,
    pub crc_type: CrcType,
    pub destination: EndpointId,
    pub source: EndpointId,
    pub report_to: EndpointId,
    /// Milliseconds since the simulation epoch.
    pub creation_time: u64,
    pub creation_sequence: u64,
    /// Milliseconds.
    pub lifetime: u64,
}

impl PrimaryBlock {
    pub fn id(&self) -> BundleId {
        BundleId {
            source: self.source,
            creation_time: self.creation_time,
            creation_sequence: self.creation_sequence,
        }
    }

    pub fn is_admin_record(&self) -> bool {
        self.flags & FLAG_ADMIN_RECORD != 0
    }

    fn encode(&self, enc: &mut Encoder) {
        let start = enc.len();
        enc.array(if self.crc_type == CrcType::None { 8 } else { 9 })
            .uint(BP_VERSION)
            .uint(self.flags)
            .uint(self.crc_type.code());
        self.destination.encode(enc);
        self.source.encode(enc);
        self.report_to.encode(enc);
        enc.array(2)
            .uint(self.creation_time)
            .uint(self.creation_sequence);
        enc.uint(self.lifetime);
        append_crc(enc, start, self.crc_type);
    }

    fn decode(dec: &mut Decoder<'_>) -> Result<Self, Error> {
        let start = dec.position();
        let len = dec.array().map_err(Error::bundle)?;
        if dec.uint().map_err(Error::bundle)? != BP_VERSION {
            return Err(Error::MalformedBundle(
                "unsupported bundle protocol version",
            ));
        }
        let flags = dec.uint().map_err(Error::bundle)?;
        if flags & FLAG_IS_FRAGMENT != 0 {
            return Err(Error::MalformedBundle("fragments are not supported"));
        }
        let crc_type = CrcType::from_code(dec.uint().map_err(Error::bundle)?)
            .ok_or(Error::MalformedBundle("unknown crc type"))?;
        let expected_len = if crc_type == CrcType::None { 8 } else { 9 };
        if len != expected_len {
            return Err(Error::MalformedBundle("wrong primary block length"));
        }
        let destination = EndpointId::decode(dec).map_err(bundle_eid)?;
        let source = EndpointId::decode(dec).map_err(bundle_eid)?;
        let report_to = EndpointId::decode(dec).map_err(bundle_eid)?;
        if dec.array().map_err(Error::bundle)? != 2 {
            return Err(Error::MalformedBundle(
                "creation timestamp must be [time, seq]",
            ));
        }
        let creation_time = dec.uint().map_err(Error::bundle)?;
        let creation_sequence = dec.uint().map_err(Error::bundle)?;
        let lifetime = dec.uint().map_err(Error::bundle)?;
        if lifetime == 0 {
            return Err(Error::MalformedBundle("lifetime must be positive"));
        }
        check_crc(dec, start, crc_type, 0)?;
        Ok(PrimaryBlock {
            flags,
            crc_type,
            destination,
            source,
            report_to,
            creation_time,
            creation_sequence,
            lifetime,
        })
    }
}

fn bundle_eid(e: Error) -> Error {
    match e {
        Error::MalformedEid(m) => Error::MalformedBundle(m),
        other => other,
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct CanonicalBlock {
    pub block_type: u64,
    pub block_number: u64,
    pub flags: u64,
    pub crc_type: CrcType,
    pub data: Vec<u8>,
}

impl CanonicalBlock {
    pub fn new(block_type: u64, block_number: u64, data: Vec<u8>) -> Self {
        CanonicalBlock {
            block_type,
            block_number,
            flags: 0,
            crc_type: CrcType::default(),
            data,
        }
    }

    pub fn payload(data: Vec<u8>) -> Self {
        Self::new(PAYLOAD_BLOCK_TYPE, PAYLOAD_BLOCK_NUMBER, data)
    }

    fn encode(&self, enc: &mut Encoder) {
        let start = enc.len();
        enc.array(if self.crc_type == CrcType::None { 5 } else { 6 })
            .uint(self.block_type)
            .uint(self.block_number)
            .uint(self.flags)
            .uint(self.crc_type.code())
            .bytes(&self.data);
        append_crc(enc, start, self.crc_type);
    }

    fn decode(dec: &mut Decoder<'_>) -> Result<Self, Error> {
        let start = dec.position();
        let len = dec.array().map_err(Error::bundle)?;
        let block_type = dec.uint().map_err(Error::bundle)?;
        let block_number = dec.uint().map_err(Error::bundle)?;
        let flags = dec.uint().map_err(Error::bundle)?;
        let crc_type = CrcType::from_code(dec.uint().map_err(Error::bundle)?)
            .ok_or(Error::MalformedBundle("unknown crc type"))?;
        let expected_len = if crc_type == CrcType::None { 5 } else { 6 };
        if len != expected_len {
            return Err(Error::MalformedBundle("wrong canonical block length"));
        }
        let data = dec.bytes().map_err(Error::bundle)?.to_vec();
        check_crc(dec, start, crc_type, block_number)?;
        Ok(CanonicalBlock {
            block_type,
            block_number,
            flags,
            crc_type,
            data,
        })
    }
}

fn append_crc(enc: &mut Encoder, start: usize, crc_type: CrcType) {
    if crc_type == CrcType::None {
        return;
    }
    let width = crc_type.width();
    enc.bytes(&[0u8; 4][..width]);
    let buf = enc.bytes_mut();
    let crc = crc_type.compute(&buf[start..]);
    let end = buf.len();
    buf[end - width..].copy_from_slice(&crc);
}

fn check_crc(
    dec: &mut Decoder<'_>,
    start: usize,
    crc_type: CrcType,
    block_number: u64,
) -> Result<(), Error> {
    if crc_type == CrcType::None {
        return Ok(());
    }
    let value = dec.bytes().map_err(Error::bundle)?;
    if value.len() != crc_type.width() {
        return Err(Error::MalformedBundle("crc value has wrong width"));
    }
    let mut block = dec.data()[start..dec.position()].to_vec();
    let n = block.len();
    block[n - value.len()..].fill(0);
    if crc_type.compute(&block) != value {
        return Err(Error::CrcMismatch { block_number });
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct Bundle {
    pub primary: PrimaryBlock,
    /// Canonical blocks in wire order; the payload block is last.
    pub blocks: Vec<CanonicalBlock>,
}

impl Bundle {
    pub fn new(primary: PrimaryBlock, payload: Vec<u8>) -> Self {
        Bundle {
            primary,
            blocks: alloc::vec![CanonicalBlock::payload(payload)],
        }
    }

    pub fn id(&self) -> BundleId {
        self.primary.id()
    }

    pub fn payload(&self) -> &[u8] {
        self.blocks
            .iter()
            .find(|b| b.block_type == PAYLOAD_BLOCK_TYPE)
            .map(|b| b.data.as_slice())
            .unwrap_or(&[])
    }

    pub fn blocks_of_type(&self, block_type: u64) -> impl Iterator<Item = &CanonicalBlock> {
        self.blocks
            .iter()
            .filter(move |b| b.block_type == block_type)
    }

    pub fn block_mut(&mut self, block_number: u64) -> Option<&mut CanonicalBlock> {
        self.blocks
            .iter_mut()
            .find(|b| b.block_number == block_number)
    }

    /// Adds an extension block ahead of the payload block and returns its number.
    pub fn insert_extension(&mut self, block_type: u64, data: Vec<u8>) -> u64 {
        let number = self
            .blocks
            .iter()
            .map(|b| b.block_number)
            .max()
            .unwrap_or(1)
            .max(1)
            + 1;
        let at = self
            .blocks
            .iter()
            .position(|b| b.block_type == PAYLOAD_BLOCK_TYPE)
            .unwrap_or(self.blocks.len());
        self.blocks
            .insert(at, CanonicalBlock::new(block_type, number, data));
        number
    }

    pub fn validate(&self) -> Result<(), Error> {
        let payloads = self
            .blocks
            .iter()
            .filter(|b| b.block_type == PAYLOAD_BLOCK_TYPE)
            .count();
        if payloads != 1 {
            return Err(Error::MalformedBundle(
                "bundle must have exactly one payload block",
            ));
        }
        let last = self.blocks.last().expect("payload present");
        if last.block_type != PAYLOAD_BLOCK_TYPE || last.block_number != PAYLOAD_BLOCK_NUMBER {
            return Err(Error::MalformedBundle(
                "payload block must be last and numbered 1",
            ));
        }
        for (i, b) in self.blocks.iter().enumerate() {
            if b.block_number == 0
                || self.blocks[..i]
                    .iter()
                    .any(|o| o.block_number == b.block_number)
            {
                return Err(Error::MalformedBundle("duplicate or zero block number"));
            }
        }
        if self.blocks_of_type(CTEB_BLOCK_TYPE).count() > 1 {
            return Err(Error::MalformedBundle(
                "more than one custody transfer block",
            ));
        }
        Ok(())
    }

    pub fn encode(&self) -> Vec<u8> {
        let mut enc = Encoder::new();
        enc.indefinite_array();
        self.primary.encode(&mut enc);
        for b in &self.blocks {
            b.encode(&mut enc);
        }
        enc.end();
        enc.into_bytes()
    }

    pub fn decode(bytes: &[u8]) -> Result<Self, Error> {
        let mut dec = Decoder::new(bytes);
        if dec.any_array().map_err(Error::bundle)?.is_some() {
            return Err(Error::MalformedBundle(
                "bundle must be an indefinite-length array",
            ));
        }
        let primary = PrimaryBlock::decode(&mut dec)?;
        let mut blocks = Vec::new();
        while !dec.peek_is_break() {
            if dec.is_at_end() {
                return Err(Error::MalformedBundle("missing break"));
            }
            blocks.push(CanonicalBlock::decode(&mut dec)?);
        }
        dec.end().map_err(Error::bundle)?;
        dec.finish().map_err(Error::bundle)?;
        let bundle = Bundle { primary, blocks };
        bundle.validate()?;
        Ok(bundle)
    }
}

pub fn encode_bundle(b: &Bundle) -> Vec<u8> {
    b.encode()
}

pub fn decode_bundle(bytes: &[u8]) -> Result<Bundle, Error> {
    Bundle::decode(bytes)
}
