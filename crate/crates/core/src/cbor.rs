//! The small subset of CBOR (RFC 8949) the bundle layer needs: unsigned and
//! negative integers, byte strings, definite and indefinite arrays, and maps.
//!
//! The encoder always produces the shortest head encoding. The decoder rejects
//! any integer or length that is not minimally encoded, so that re-encoding a
//! decoded item reproduces the original bytes.

use alloc::vec::Vec;

pub const MAJOR_UINT: u8 = 0;
pub const MAJOR_NINT: u8 = 1;
pub const MAJOR_BYTES: u8 = 2;
pub const MAJOR_TEXT: u8 = 3;
pub const MAJOR_ARRAY: u8 = 4;
pub const MAJOR_MAP: u8 = 5;
pub const MAJOR_TAG: u8 = 6;
pub const MAJOR_SIMPLE: u8 = 7;

const INDEFINITE: u8 = 31;
const BREAK: u8 = 0xff;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CborError {
    UnexpectedEnd,
    UnexpectedType,
    NonCanonical,
    Reserved,
    TrailingBytes,
    IntegerRange,
    TooDeep,
}

impl CborError {
    pub fn as_str(self) -> &'static str {
        match self {
            CborError::UnexpectedEnd => "unexpected end of input",
            CborError::UnexpectedType => "unexpected cbor type",
            CborError::NonCanonical => "non-minimal cbor encoding",
            CborError::Reserved => "reserved cbor additional information",
            CborError::TrailingBytes => "trailing bytes after item",
            CborError::IntegerRange => "integer out of range",
            CborError::TooDeep => "cbor nesting too deep",
        }
    }
}

#[derive(Debug, Default, Clone)]
pub struct Encoder {
    buf: Vec<u8>,
}

impl Encoder {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn into_bytes(self) -> Vec<u8> {
        self.buf
    }

    pub fn len(&self) -> usize {
        self.buf.len()
    }

    pub fn is_empty(&self) -> bool {
        self.buf.is_empty()
    }

    pub(crate) fn bytes_mut(&mut self) -> &mut Vec<u8> {
        &mut self.buf
    }

    fn head(&mut self, major: u8, value: u64) {
        let m = major << 5;
        if value < 24 {
            self.buf.push(m | value as u8);
        } else if value <= u8::MAX as u64 {
            self.buf.push(m | 24);
            self.buf.push(value as u8);
        } else if value <= u16::MAX as u64 {
            self.buf.push(m | 25);
            self.buf.extend_from_slice(&(value as u16).to_be_bytes());
        } else if value <= u32::MAX as u64 {
            self.buf.push(m | 26);
            self.buf.extend_from_slice(&(value as u32).to_be_bytes());
        } else {
            self.buf.push(m | 27);
            self.buf.extend_from_slice(&value.to_be_bytes());
        }
    }

    pub fn uint(&mut self, v: u64) -> &mut Self {
        self.head(MAJOR_UINT, v);
        self
    }

    pub fn int(&mut self, v: i64) -> &mut Self {
        if v >= 0 {
            self.head(MAJOR_UINT, v as u64);
        } else {
            // -1 - n == v  =>  n = -1 - v, which never overflows for i64.
            self.head(MAJOR_NINT, (-1 - v) as u64);
        }
        self
    }

    pub fn bytes(&mut self, b: &[u8]) -> &mut Self {
        self.head(MAJOR_BYTES, b.len() as u64);
        self.buf.extend_from_slice(b);
        self
    }

    pub fn array(&mut self, len: usize) -> &mut Self {
        self.head(MAJOR_ARRAY, len as u64);
        self
    }

    pub fn indefinite_array(&mut self) -> &mut Self {
        self.buf.push((MAJOR_ARRAY << 5) | INDEFINITE);
        self
    }

    pub fn end(&mut self) -> &mut Self {
        self.buf.push(BREAK);
        self
    }

    pub fn map(&mut self, len: usize) -> &mut Self {
        self.head(MAJOR_MAP, len as u64);
        self
    }

    /// Appends an already-encoded item verbatim.
    pub fn raw(&mut self, item: &[u8]) -> &mut Self {
        self.buf.extend_from_slice(item);
        self
    }
}

/// Encodes a single integer on its own; used to order map keys bytewise.
pub fn encode_int(v: i64) -> Vec<u8> {
    let mut e = Encoder::new();
    e.int(v);
    e.into_bytes()
}

#[derive(Debug, Clone)]
pub struct Decoder<'a> {
    data: &'a [u8],
    pos: usize,
}

impl<'a> Decoder<'a> {
    pub fn new(data: &'a [u8]) -> Self {
        Decoder { data, pos: 0 }
    }

    pub fn position(&self) -> usize {
        self.pos
    }

    pub fn data(&self) -> &'a [u8] {
        self.data
    }

    pub fn is_at_end(&self) -> bool {
        self.pos >= self.data.len()
    }

    pub fn finish(&self) -> Result<(), CborError> {
        if self.is_at_end() {
            Ok(())
        } else {
            Err(CborError::TrailingBytes)
        }
    }

    pub fn peek_major(&self) -> Result<u8, CborError> {
        self.data
            .get(self.pos)
            .map(|b| b >> 5)
            .ok_or(CborError::UnexpectedEnd)
    }

    pub fn peek_is_break(&self) -> bool {
        self.data.get(self.pos) == Some(&BREAK)
    }

    fn take(&mut self, n: usize) -> Result<&'a [u8], CborError> {
        let end = self.pos.checked_add(n).ok_or(CborError::UnexpectedEnd)?;
        let s = self
            .data
            .get(self.pos..end)
            .ok_or(CborError::UnexpectedEnd)?;
        self.pos = end;
        Ok(s)
    }

    /// Reads an item head; `None` argument means indefinite length.
    fn head(&mut self) -> Result<(u8, Option<u64>), CborError> {
        let b = self.take(1)?[0];
        let major = b >> 5;
        let info = b & 0x1f;
        let arg = match info {
            0..=23 => Some(info as u64),
            24 => {
                let v = self.take(1)?[0] as u64;
                if v < 24 {
                    return Err(CborError::NonCanonical);
                }
                Some(v)
            }
            25 => {
                let s = self.take(2)?;
                let v = u16::from_be_bytes([s[0], s[1]]) as u64;
                if v <= u8::MAX as u64 {
                    return Err(CborError::NonCanonical);
                }
                Some(v)
            }
            26 => {
                let s = self.take(4)?;
                let v = u32::from_be_bytes([s[0], s[1], s[2], s[3]]) as u64;
                if v <= u16::MAX as u64 {
                    return Err(CborError::NonCanonical);
                }
                Some(v)
            }
            27 => {
                let s = self.take(8)?;
                let mut a = [0u8; 8];
                a.copy_from_slice(s);
                let v = u64::from_be_bytes(a);
                if v <= u32::MAX as u64 {
                    return Err(CborError::NonCanonical);
                }
                Some(v)
            }
            31 => None,
            _ => return Err(CborError::Reserved),
        };
        Ok((major, arg))
    }

    fn definite(&mut self, want: u8) -> Result<u64, CborError> {
        match self.head()? {
            (m, Some(v)) if m == want => Ok(v),
            _ => Err(CborError::UnexpectedType),
        }
    }

    pub fn uint(&mut self) -> Result<u64, CborError> {
        self.definite(MAJOR_UINT)
    }

    pub fn int(&mut self) -> Result<i64, CborError> {
        match self.head()? {
            (MAJOR_UINT, Some(v)) => i64::try_from(v).map_err(|_| CborError::IntegerRange),
            (MAJOR_NINT, Some(n)) => {
                let n = i64::try_from(n).map_err(|_| CborError::IntegerRange)?;
                Ok(-1 - n)
            }
            _ => Err(CborError::UnexpectedType),
        }
    }

    pub fn bytes(&mut self) -> Result<&'a [u8], CborError> {
        let len = self.definite(MAJOR_BYTES)?;
        let len = usize::try_from(len).map_err(|_| CborError::UnexpectedEnd)?;
        self.take(len)
    }

    /// Definite-length array only.
    pub fn array(&mut self) -> Result<u64, CborError> {
        self.definite(MAJOR_ARRAY)
    }

    /// Returns `None` for an indefinite-length array.
    pub fn any_array(&mut self) -> Result<Option<u64>, CborError> {
        match self.head()? {
            (MAJOR_ARRAY, len) => Ok(len),
            _ => Err(CborError::UnexpectedType),
        }
    }

    pub fn map(&mut self) -> Result<u64, CborError> {
        self.definite(MAJOR_MAP)
    }

    pub fn end(&mut self) -> Result<(), CborError> {
        if self.take(1)?[0] == BREAK {
            Ok(())
        } else {
            Err(CborError::UnexpectedType)
        }
    }

    /// Skips one complete item and returns its encoded bytes.
    pub fn item(&mut self) -> Result<&'a [u8], CborError> {
        let start = self.pos;
        self.skip(0)?;
        Ok(&self.data[start..self.pos])
    }

    fn skip(&mut self, depth: usize) -> Result<(), CborError> {
        if depth > 64 {
            return Err(CborError::TooDeep);
        }
        let (major, arg) = self.head()?;
        match (major, arg) {
            (MAJOR_UINT | MAJOR_NINT, Some(_)) => Ok(()),
            (MAJOR_BYTES | MAJOR_TEXT, Some(len)) => {
                let len = usize::try_from(len).map_err(|_| CborError::UnexpectedEnd)?;
                self.take(len).map(|_| ())
            }
            (MAJOR_BYTES | MAJOR_TEXT, None) => {
                while !self.peek_is_break() {
                    if self.peek_major()? != major {
                        return Err(CborError::UnexpectedType);
                    }
                    self.skip(depth + 1)?;
                }
                self.end()
            }
            (MAJOR_ARRAY | MAJOR_MAP, Some(len)) => {
                let items = if major == MAJOR_MAP {
                    len.saturating_mul(2)
                } else {
                    len
                };
                for _ in 0..items {
                    self.skip(depth + 1)?;
                }
                Ok(())
            }
            (MAJOR_ARRAY | MAJOR_MAP, None) => {
                while !self.peek_is_break() {
                    self.skip(depth + 1)?;
                    if major == MAJOR_MAP {
                        self.skip(depth + 1)?;
                    }
                }
                self.end()
            }
            (MAJOR_TAG, Some(_)) => self.skip(depth + 1),
            (MAJOR_SIMPLE, Some(_)) => Ok(()),
            _ => Err(CborError::Reserved),
        }
    }
}
