//! Canonical binary encoding shared by everything that gets hashed or signed.
//!
//! Fixed field order, little-endian integers, `u32` length prefixes on
//! variable-size fields. Signatures are always computed over these exact
//! bytes, so the encoding must stay bit-stable.

use thiserror::Error;

/// Version byte prepended to every top-level block/transaction encoding.
pub const CODEC_VERSION: u8 = 0x01;

#[derive(Debug, Error)]
pub enum CodecError {
    #[error("unexpected end of input at offset {0}")]
    Truncated(usize),
    #[error("unsupported codec version {0:#x}")]
    BadVersion(u8),
    #[error("length prefix {len} exceeds remaining input {remaining}")]
    BadLength { len: usize, remaining: usize },
    #[error("invalid enum tag {tag} for {context}")]
    BadTag { tag: u8, context: &'static str },
}

/// Append-only canonical writer.
#[derive(Default)]
pub struct Writer {
    buf: Vec<u8>,
}

impl Writer {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn with_version() -> Self {
        let mut w = Self::new();
        w.put_u8(CODEC_VERSION);
        w
    }

    pub fn put_u8(&mut self, v: u8) {
        self.buf.push(v);
    }

    pub fn put_u32(&mut self, v: u32) {
        self.buf.extend_from_slice(&v.to_le_bytes());
    }

    pub fn put_u64(&mut self, v: u64) {
        self.buf.extend_from_slice(&v.to_le_bytes());
    }

    pub fn put_f64(&mut self, v: f64) {
        self.buf.extend_from_slice(&v.to_le_bytes());
    }

    /// Fixed-width field, no length prefix.
    pub fn put_raw(&mut self, bytes: &[u8]) {
        self.buf.extend_from_slice(bytes);
    }

    /// Variable-width field with a u32 length prefix.
    pub fn put_bytes(&mut self, bytes: &[u8]) {
        self.put_u32(bytes.len() as u32);
        self.buf.extend_from_slice(bytes);
    }

    pub fn put_str(&mut self, s: &str) {
        self.put_bytes(s.as_bytes());
    }

    pub fn finish(self) -> Vec<u8> {
        self.buf
    }

    pub fn len(&self) -> usize {
        self.buf.len()
    }

    pub fn is_empty(&self) -> bool {
        self.buf.is_empty()
    }
}

/// Cursor over canonical bytes.
pub struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    pub fn new(buf: &'a [u8]) -> Self {
        Self { buf, pos: 0 }
    }

    /// Consumes and checks the leading version byte.
    pub fn with_version(buf: &'a [u8]) -> Result<Self, CodecError> {
        let mut r = Self::new(buf);
        let v = r.get_u8()?;
        if v != CODEC_VERSION {
            return Err(CodecError::BadVersion(v));
        }
        Ok(r)
    }

    fn take(&mut self, n: usize) -> Result<&'a [u8], CodecError> {
        if self.pos + n > self.buf.len() {
            return Err(CodecError::Truncated(self.pos));
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    pub fn get_u8(&mut self) -> Result<u8, CodecError> {
        Ok(self.take(1)?[0])
    }

    pub fn get_u32(&mut self) -> Result<u32, CodecError> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    pub fn get_u64(&mut self) -> Result<u64, CodecError> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    pub fn get_f64(&mut self) -> Result<f64, CodecError> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    pub fn get_raw(&mut self, n: usize) -> Result<&'a [u8], CodecError> {
        self.take(n)
    }

    pub fn get_bytes(&mut self) -> Result<&'a [u8], CodecError> {
        let len = self.get_u32()? as usize;
        if self.pos + len > self.buf.len() {
            return Err(CodecError::BadLength {
                len,
                remaining: self.buf.len() - self.pos,
            });
        }
        self.take(len)
    }

    pub fn get_str(&mut self) -> Result<String, CodecError> {
        let b = self.get_bytes()?;
        Ok(String::from_utf8_lossy(b).into_owned())
    }

    pub fn remaining(&self) -> usize {
        self.buf.len() - self.pos
    }

    pub fn is_exhausted(&self) -> bool {
        self.pos == self.buf.len()
    }
}
