//! Versioned binary weight files.
//!
//! Layout (all integers little-endian):
//!
//! ```text
//! "AECNN1"
//! repeated until EOF:
//!   u32 name_len, name bytes (UTF-8)
//!   u32 rank, rank × u64 dims
//!   prod(dims) × f64 values
//! ```

use std::io::{Read, Write};

use super::tensor::Tensor;
use crate::error::{Error, Result};

pub const MAGIC: &[u8; 6] = b"AECNN1";

pub fn write_checkpoint<'a, W: Write>(
    mut w: W,
    entries: impl IntoIterator<Item = (&'a str, &'a Tensor)>,
) -> Result<()> {
    w.write_all(MAGIC)?;
    for (name, t) in entries {
        w.write_all(&(name.len() as u32).to_le_bytes())?;
        w.write_all(name.as_bytes())?;
        w.write_all(&(t.rank() as u32).to_le_bytes())?;
        for &d in t.shape() {
            w.write_all(&(d as u64).to_le_bytes())?;
        }
        for v in t.data() {
            w.write_all(&v.to_le_bytes())?;
        }
    }
    w.flush()?;
    Ok(())
}

/// Byte cursor that reports the offset of any truncation.
pub(crate) struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    pub fn new(buf: &'a [u8]) -> Self {
        Self { buf, pos: 0 }
    }

    pub fn pos(&self) -> usize {
        self.pos
    }

    pub fn at_end(&self) -> bool {
        self.pos == self.buf.len()
    }

    pub fn err(&self, msg: impl Into<String>) -> Error {
        Error::Format {
            offset: self.pos as u64,
            msg: msg.into(),
        }
    }

    pub fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        if self.buf.len() - self.pos < n {
            return Err(self.err(format!(
                "truncated {what}: need {n} bytes, {} left",
                self.buf.len() - self.pos
            )));
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    pub fn u8(&mut self, what: &str) -> Result<u8> {
        Ok(self.take(1, what)?[0])
    }

    pub fn u32(&mut self, what: &str) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().expect("4 bytes")))
    }

    pub fn u64(&mut self, what: &str) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8, what)?.try_into().expect("8 bytes")))
    }

    pub fn f64s(&mut self, n: usize, what: &str) -> Result<Vec<f64>> {
        let bytes = n
            .checked_mul(8)
            .ok_or_else(|| self.err(format!("{what}: length overflow")))?;
        let raw = self.take(bytes, what)?;
        Ok(raw
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
            .collect())
    }
}

pub fn read_checkpoint<R: Read>(mut r: R) -> Result<Vec<(String, Tensor)>> {
    let mut buf = Vec::new();
    r.read_to_end(&mut buf)?;
    let mut rd = Reader::new(&buf);
    if rd.take(MAGIC.len(), "magic")? != MAGIC {
        return Err(Error::Format {
            offset: 0,
            msg: "bad magic, expected AECNN1".into(),
        });
    }
    let mut out = Vec::new();
    while !rd.at_end() {
        let len = rd.u32("name length")? as usize;
        let name = std::str::from_utf8(rd.take(len, "name")?)
            .map_err(|_| rd.err("name is not UTF-8"))?
            .to_string();
        let rank = rd.u32("rank")? as usize;
        let mut shape = Vec::with_capacity(rank.min(16));
        for _ in 0..rank {
            shape.push(rd.u64("dimension")? as usize);
        }
        let n = shape
            .iter()
            .try_fold(1usize, |acc, &d| acc.checked_mul(d))
            .ok_or_else(|| rd.err("shape overflow"))?;
        let data = rd.f64s(n, "values")?;
        out.push((name, Tensor::new(shape, data)?));
    }
    Ok(out)
}
