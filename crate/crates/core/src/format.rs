//! Binary container shared by dataset and model files.
//!
//! Layout: 8-byte magic, little-endian `u64` header length, UTF-8 JSON header,
//! then a raw little-endian payload whose layout the header describes.

use std::io::{Read, Write};

use serde::{de::DeserializeOwned, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

pub const FORMAT_MAJOR: u32 = 1;
pub const FORMAT_MINOR: u32 = 0;

/// `"major.minor"` string written into every header.
pub fn format_version() -> String {
    format!("{FORMAT_MAJOR}.{FORMAT_MINOR}")
}

/// Rejects headers written by an unknown major version.
pub fn check_version(version: &str) -> Result<()> {
    let major = version
        .split('.')
        .next()
        .and_then(|m| m.parse::<u32>().ok())
        .ok_or_else(|| Error::Format(format!("unparseable version {version:?}")))?;
    if major != FORMAT_MAJOR {
        return Err(Error::Format(format!(
            "unsupported major version {major} (this build reads {FORMAT_MAJOR}.x)"
        )));
    }
    Ok(())
}

pub fn write_container<W: Write, H: Serialize>(
    mut w: W,
    magic: &[u8; 8],
    header: &H,
    payload: &[u8],
) -> Result<()> {
    let json = serde_json::to_vec(header)?;
    w.write_all(magic)?;
    w.write_all(&(json.len() as u64).to_le_bytes())?;
    w.write_all(&json)?;
    w.write_all(payload)?;
    w.flush()?;
    Ok(())
}

pub fn read_container<R: Read, H: DeserializeOwned>(
    mut r: R,
    magic: &[u8; 8],
) -> Result<(H, Vec<u8>)> {
    let mut got = [0u8; 8];
    r.read_exact(&mut got)?;
    if &got != magic {
        return Err(Error::Format(format!(
            "bad magic {:?}, expected {:?}",
            String::from_utf8_lossy(&got),
            String::from_utf8_lossy(magic)
        )));
    }
    let mut len = [0u8; 8];
    r.read_exact(&mut len)?;
    let len = u64::from_le_bytes(len) as usize;
    let mut json = vec![0u8; len];
    r.read_exact(&mut json)?;
    let header = serde_json::from_slice(&json)?;
    let mut payload = Vec::new();
    r.read_to_end(&mut payload)?;
    Ok((header, payload))
}

/// Little-endian f64 encoder.
#[derive(Default)]
pub struct PayloadWriter(pub Vec<u8>);

impl PayloadWriter {
    pub fn f64s(&mut self, values: impl IntoIterator<Item = f64>) {
        for v in values {
            self.0.extend_from_slice(&v.to_le_bytes());
        }
    }

    pub fn bytes(&mut self, values: &[u8]) {
        self.0.extend_from_slice(values);
    }
}

/// Cursor over a payload; every read is bounds-checked.
pub struct PayloadReader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> PayloadReader<'a> {
    pub fn new(buf: &'a [u8]) -> Self {
        PayloadReader { buf, pos: 0 }
    }

    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.pos + n > self.buf.len() {
            return Err(Error::Format(format!(
                "payload truncated: need {n} bytes at offset {}, have {}",
                self.pos,
                self.buf.len() - self.pos
            )));
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    pub fn f64s(&mut self, n: usize) -> Result<Vec<f64>> {
        Ok(self
            .take(n * 8)?
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect())
    }

    pub fn bytes(&mut self, n: usize) -> Result<Vec<u8>> {
        Ok(self.take(n)?.to_vec())
    }

    pub fn finish(self) -> Result<()> {
        if self.pos != self.buf.len() {
            return Err(Error::Format(format!(
                "{} trailing payload bytes",
                self.buf.len() - self.pos
            )));
        }
        Ok(())
    }
}

/// Hex SHA-256 of a value's canonical JSON encoding.
pub fn json_hash<T: Serialize>(value: &T) -> String {
    let json = serde_json::to_vec(value).expect("serializable value");
    hex::encode(Sha256::digest(&json))
}
