//! Self-describing binary container: named `f64` arrays plus string
//! metadata.
//!
//! ```text
//! magic    8 bytes  "SLTCKPT\0"
//! version  u32
//! n_meta   u32, then per entry: key (u32 len + utf8), value (u32 len + utf8)
//! n_arrays u32, then per entry: name (u32 len + utf8), ndim u32,
//!          dims u64 x ndim, data f64 x prod(dims)
//! ```
//!
//! All integers and floats are little-endian. Values round-trip bit-exactly.

use std::collections::BTreeMap;
use std::path::Path;

use super::Array;
use crate::error::{Error, Result};

pub const MAGIC: &[u8; 8] = b"SLTCKPT\0";
pub const FORMAT_VERSION: u32 = 1;

const MAX_NAME: usize = 4096;
const MAX_NDIM: usize = 8;

#[derive(Debug, Clone, Default, PartialEq)]
pub struct Checkpoint {
    pub meta: BTreeMap<String, String>,
    pub arrays: BTreeMap<String, Array>,
}

impl Checkpoint {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, name: impl Into<String>, value: Array) {
        self.arrays.insert(name.into(), value);
    }

    pub fn get(&self, name: &str) -> Option<&Array> {
        self.arrays.get(name)
    }

    pub fn set_meta(&mut self, key: impl Into<String>, value: impl Into<String>) {
        self.meta.insert(key.into(), value.into());
    }

    pub fn meta(&self, key: &str) -> Option<&str> {
        self.meta.get(key).map(String::as_str)
    }

    pub fn encode(&self) -> Vec<u8> {
        let payload: usize = self.arrays.values().map(|a| a.len() * 8 + 64).sum();
        let mut out = Vec::with_capacity(payload + 64);
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
        out.extend_from_slice(&(self.meta.len() as u32).to_le_bytes());
        for (k, v) in &self.meta {
            put_str(&mut out, k);
            put_str(&mut out, v);
        }
        out.extend_from_slice(&(self.arrays.len() as u32).to_le_bytes());
        for (name, a) in &self.arrays {
            put_str(&mut out, name);
            out.extend_from_slice(&(a.ndim() as u32).to_le_bytes());
            for &d in a.shape() {
                out.extend_from_slice(&(d as u64).to_le_bytes());
            }
            for v in a.data() {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        out
    }

    /// Parses an untrusted byte buffer. Never panics; every inconsistency is
    /// reported as [`Error::Format`].
    pub fn decode(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader { buf: bytes, pos: 0 };
        if r.take(8)? != MAGIC {
            return Err(Error::Format("bad magic".into()));
        }
        let version = r.u32()?;
        if version != FORMAT_VERSION {
            return Err(Error::Format(format!("unsupported format version {version}")));
        }
        let mut ck = Checkpoint::new();
        let n_meta = r.u32()?;
        for _ in 0..n_meta {
            let k = r.string()?;
            let v = r.string_unbounded()?;
            if ck.meta.insert(k.clone(), v).is_some() {
                return Err(Error::Format(format!("duplicate metadata key {k:?}")));
            }
        }
        let n_arrays = r.u32()?;
        for _ in 0..n_arrays {
            let name = r.string()?;
            let ndim = r.u32()? as usize;
            if ndim > MAX_NDIM {
                return Err(Error::Format(format!("{name:?}: {ndim} dimensions")));
            }
            let mut shape = Vec::with_capacity(ndim);
            let mut count: usize = 1;
            for _ in 0..ndim {
                let d = usize::try_from(r.u64()?)
                    .map_err(|_| Error::Format(format!("{name:?}: dimension overflows")))?;
                count = count
                    .checked_mul(d)
                    .ok_or_else(|| Error::Format(format!("{name:?}: element count overflows")))?;
                shape.push(d);
            }
            let nbytes = count
                .checked_mul(8)
                .filter(|&n| n <= r.remaining())
                .ok_or_else(|| Error::Format(format!("{name:?}: truncated data")))?;
            let data = r
                .take(nbytes)?
                .chunks_exact(8)
                .map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk")))
                .collect();
            let a = Array::new(shape, data).map_err(|e| Error::Format(e.to_string()))?;
            if ck.arrays.insert(name.clone(), a).is_some() {
                return Err(Error::Format(format!("duplicate array {name:?}")));
            }
        }
        if r.remaining() != 0 {
            return Err(Error::Format(format!("{} trailing bytes", r.remaining())));
        }
        Ok(ck)
    }

    /// Writes via a temporary file and rename so readers never see a torn
    /// checkpoint.
    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let tmp = path.with_extension("tmp");
        std::fs::write(&tmp, self.encode()).map_err(|e| Error::io(&tmp, e))?;
        std::fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::decode(&bytes)
    }
}

fn put_str(out: &mut Vec<u8>, s: &str) {
    out.extend_from_slice(&(s.len() as u32).to_le_bytes());
    out.extend_from_slice(s.as_bytes());
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn remaining(&self) -> usize {
        self.buf.len() - self.pos
    }

    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if n > self.remaining() {
            return Err(Error::Format(format!(
                "unexpected end of data at byte {} (wanted {n})",
                self.pos
            )));
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }

    fn string(&mut self) -> Result<String> {
        let n = self.u32()? as usize;
        if n > MAX_NAME {
            return Err(Error::Format(format!("name of {n} bytes")));
        }
        self.utf8(n)
    }

    fn string_unbounded(&mut self) -> Result<String> {
        let n = self.u32()? as usize;
        self.utf8(n)
    }

    fn utf8(&mut self, n: usize) -> Result<String> {
        let bytes = self.take(n)?;
        std::str::from_utf8(bytes)
            .map(str::to_string)
            .map_err(|e| Error::Format(format!("invalid utf-8: {e}")))
    }
}
