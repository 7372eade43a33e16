//! Little-endian binary helpers shared by the dataset, capture and
//! checkpoint containers. Every container ends with a CRC-32 of all
//! preceding bytes.

use std::path::Path;

use crate::error::{Error, Result};

#[derive(Default)]
pub(crate) struct ByteWriter {
    buf: Vec<u8>,
}

impl ByteWriter {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn bytes(&mut self, b: &[u8]) {
        self.buf.extend_from_slice(b);
    }

    pub fn u32(&mut self, v: u32) {
        self.bytes(&v.to_le_bytes());
    }

    pub fn u64(&mut self, v: u64) {
        self.bytes(&v.to_le_bytes());
    }

    pub fn f64(&mut self, v: f64) {
        self.bytes(&v.to_le_bytes());
    }

    pub fn blob(&mut self, b: &[u8]) {
        self.u32(b.len() as u32);
        self.bytes(b);
    }

    /// Appends the CRC-32 trailer and returns the finished container.
    pub fn finish(mut self) -> Vec<u8> {
        let crc = crc32fast::hash(&self.buf);
        self.u32(crc);
        self.buf
    }

    /// The buffer without a checksum trailer.
    pub fn into_bytes(self) -> Vec<u8> {
        self.buf
    }
}

pub(crate) struct ByteReader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> ByteReader<'a> {
    /// Checks magic and trailing checksum; the reader then covers the body.
    pub fn open(data: &'a [u8], magic: &[u8; 4]) -> Result<Self> {
        if data.len() < 4 || &data[..4] != magic {
            let found = String::from_utf8_lossy(&data[..data.len().min(4)]).into_owned();
            return Err(Error::BadMagic {
                expected: String::from_utf8_lossy(magic).into_owned(),
                found,
            });
        }
        if data.len() < 8 {
            return Err(Error::Truncated("container shorter than header".into()));
        }
        let (body, tail) = data.split_at(data.len() - 4);
        let stored = u32::from_le_bytes(tail.try_into().unwrap());
        let computed = crc32fast::hash(body);
        if stored != computed {
            return Err(Error::ChecksumMismatch { stored, computed });
        }
        Ok(ByteReader { buf: body, pos: 4 })
    }

    /// Reader without checksum trailer handling (magic still checked).
    pub fn open_unchecked(data: &'a [u8], magic: &[u8; 4]) -> Result<Self> {
        if data.len() < 4 || &data[..4] != magic {
            let found = String::from_utf8_lossy(&data[..data.len().min(4)]).into_owned();
            return Err(Error::BadMagic {
                expected: String::from_utf8_lossy(magic).into_owned(),
                found,
            });
        }
        Ok(ByteReader { buf: data, pos: 4 })
    }

    pub fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.buf.len() - self.pos < n {
            return Err(Error::Truncated(format!(
                "needed {n} bytes at offset {}, {} left",
                self.pos,
                self.buf.len() - self.pos
            )));
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    pub fn remaining(&self) -> usize {
        self.buf.len() - self.pos
    }

    pub fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    pub fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    pub fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    pub fn blob(&mut self) -> Result<&'a [u8]> {
        let n = self.u32()? as usize;
        self.take(n)
    }

    pub fn string(&mut self) -> Result<String> {
        let b = self.blob()?;
        String::from_utf8(b.to_vec()).map_err(|e| Error::Parse(e.to_string()))
    }
}

pub(crate) fn read_file(path: &Path) -> Result<Vec<u8>> {
    std::fs::read(path).map_err(|e| Error::io(path, e))
}
