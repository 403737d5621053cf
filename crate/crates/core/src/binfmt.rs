//! Minimal little-endian binary framing shared by persisted artifacts
//! (n-gram prior files, policy checkpoints).
//!
//! Layout convention: fixed 8-byte magic, `u32` version, format-specific
//! header and payload, then a trailing FNV-1a checksum over everything that
//! precedes it. All integers and floats are little-endian; readers verify
//! magic, version, and checksum and fail cleanly on truncation.

use thiserror::Error;

use crate::rng::fnv1a64;

#[derive(Debug, Error)]
pub enum BinError {
    #[error("unexpected end of file at byte {0}")]
    Eof(usize),
    #[error("bad magic: expected {expected:?}")]
    Magic { expected: &'static str },
    #[error("unsupported format version {0}")]
    Version(u32),
    #[error("checksum mismatch: file is corrupt")]
    Checksum,
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub struct ByteWriter {
    buf: Vec<u8>,
}

impl ByteWriter {
    pub fn new(magic: &'static [u8; 8], version: u32) -> Self {
        let mut w = ByteWriter { buf: Vec::new() };
        w.buf.extend_from_slice(magic);
        w.u32(version);
        w
    }

    pub fn u32(&mut self, x: u32) {
        self.buf.extend_from_slice(&x.to_le_bytes());
    }

    pub fn u64(&mut self, x: u64) {
        self.buf.extend_from_slice(&x.to_le_bytes());
    }

    pub fn f64(&mut self, x: f64) {
        self.buf.extend_from_slice(&x.to_le_bytes());
    }

    pub fn str(&mut self, s: &str) {
        self.u32(s.len() as u32);
        self.buf.extend_from_slice(s.as_bytes());
    }

    /// Append the checksum and return the finished byte buffer.
    pub fn finish(mut self) -> Vec<u8> {
        let sum = fnv1a64(&self.buf);
        self.buf.extend_from_slice(&sum.to_le_bytes());
        self.buf
    }
}

pub struct ByteReader<'a> {
    data: &'a [u8],
    pos: usize,
}

impl<'a> ByteReader<'a> {
    /// Verify magic, version, and trailing checksum, then position the
    /// cursor after the version field.
    pub fn open(
        data: &'a [u8],
        magic: &'static [u8; 8],
        magic_name: &'static str,
        version: u32,
    ) -> Result<Self, BinError> {
        if data.len() < 8 + 4 + 8 {
            return Err(BinError::Eof(data.len()));
        }
        if &data[..8] != magic {
            return Err(BinError::Magic { expected: magic_name });
        }
        let body = &data[..data.len() - 8];
        let stored = u64::from_le_bytes(data[data.len() - 8..].try_into().unwrap());
        if fnv1a64(body) != stored {
            return Err(BinError::Checksum);
        }
        let mut r = ByteReader { data: body, pos: 8 };
        let v = r.u32()?;
        if v != version {
            return Err(BinError::Version(v));
        }
        Ok(r)
    }

    fn take(&mut self, n: usize) -> Result<&'a [u8], BinError> {
        if self.pos + n > self.data.len() {
            return Err(BinError::Eof(self.pos));
        }
        let s = &self.data[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    pub fn u32(&mut self) -> Result<u32, BinError> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    pub fn u64(&mut self) -> Result<u64, BinError> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    pub fn f64(&mut self) -> Result<f64, BinError> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    pub fn str(&mut self) -> Result<String, BinError> {
        let n = self.u32()? as usize;
        let bytes = self.take(n)?;
        String::from_utf8(bytes.to_vec()).map_err(|_| BinError::Eof(self.pos))
    }

    /// True when the whole body (minus checksum) has been consumed.
    pub fn exhausted(&self) -> bool {
        self.pos == self.data.len()
    }
}
