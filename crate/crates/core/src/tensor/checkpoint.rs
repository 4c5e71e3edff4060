//! Binary checkpoint format.
//!
//! ```text
//! "MMC1"
//! u32 LE   tensor count
//! repeated:
//!   u32 LE   name length in bytes
//!   [u8]     UTF-8 name
//!   u32 LE   ndim
//!   u32 LE   dims[ndim]
//!   f64 LE   payload[product(dims)]
//! ```
//!
//! The file must end exactly after the last payload.

use std::io::{Read, Write};

use super::Tensor;
use crate::error::{Error, Result};

pub const MAGIC: &[u8; 4] = b"MMC1";

pub fn write_to(mut w: impl Write, entries: &[(String, Tensor)]) -> Result<()> {
    w.write_all(&encode(entries)?)?;
    Ok(())
}

pub fn read_from(mut r: impl Read) -> Result<Vec<(String, Tensor)>> {
    let mut bytes = Vec::new();
    r.read_to_end(&mut bytes)?;
    decode(&bytes)
}

fn u32_len(n: usize, what: &str) -> Result<[u8; 4]> {
    u32::try_from(n)
        .map(u32::to_le_bytes)
        .map_err(|_| Error::Checkpoint(format!("{what} {n} does not fit in u32")))
}

pub fn encode(entries: &[(String, Tensor)]) -> Result<Vec<u8>> {
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&u32_len(entries.len(), "tensor count")?);
    for (name, tensor) in entries {
        out.extend_from_slice(&u32_len(name.len(), "name length")?);
        out.extend_from_slice(name.as_bytes());
        out.extend_from_slice(&u32_len(tensor.ndim(), "ndim")?);
        for &d in tensor.shape() {
            out.extend_from_slice(&u32_len(d, "dimension")?);
        }
        for v in tensor.data() {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    Ok(out)
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.bytes.len())
            .ok_or_else(|| Error::Checkpoint(format!("truncated at byte {} (wanted {n} more)", self.pos)))?;
        let slice = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(slice)
    }

    fn u32(&mut self) -> Result<usize> {
        let b = self.take(4)?;
        Ok(u32::from_le_bytes([b[0], b[1], b[2], b[3]]) as usize)
    }
}

pub fn decode(bytes: &[u8]) -> Result<Vec<(String, Tensor)>> {
    let mut cur = Cursor { bytes, pos: 0 };
    if cur.take(4).ok() != Some(MAGIC.as_slice()) {
        return Err(Error::Checkpoint("bad magic bytes".into()));
    }
    let count = cur.u32()?;
    let mut entries = Vec::new();
    for _ in 0..count {
        let name_len = cur.u32()?;
        let name = std::str::from_utf8(cur.take(name_len)?)
            .map_err(|e| Error::Checkpoint(format!("tensor name is not UTF-8: {e}")))?
            .to_string();
        let ndim = cur.u32()?;
        let mut shape = Vec::with_capacity(ndim.min(16));
        for _ in 0..ndim {
            shape.push(cur.u32()?);
        }
        let numel = shape
            .iter()
            .try_fold(1usize, |acc, &d| acc.checked_mul(d))
            .ok_or_else(|| Error::Checkpoint(format!("{name}: shape {shape:?} overflows")))?;
        let payload = cur.take(numel.checked_mul(8).ok_or_else(|| Error::Checkpoint("payload overflow".into()))?)?;
        let data = payload
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("chunk of 8")))
            .collect();
        entries.push((name, Tensor::new(shape, data)?));
    }
    if cur.pos != bytes.len() {
        return Err(Error::Checkpoint(format!(
            "{} trailing bytes after last tensor",
            bytes.len() - cur.pos
        )));
    }
    Ok(entries)
}
