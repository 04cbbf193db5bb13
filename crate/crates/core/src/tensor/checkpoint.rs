//! Flat binary archive: parameter path → shape + little-endian values.
//!
//! Layout (all integers little-endian):
//!
//! ```text
//! magic    b"SRCK"
//! version  u32
//! dtype    u8 length, then ASCII ("f32" | "f64")
//! count    u32
//! entries  count × { path_len u32, path utf-8, rank u32, dims u64×rank, values }
//! ```
//!
//! Entries are written in path order, so equal maps serialize to equal bytes.

use std::collections::BTreeMap;

use crate::error::{Error, Result};
use crate::scalar::Scalar;

use super::Tensor;

pub const CHECKPOINT_VERSION: u32 = 1;
const MAGIC: &[u8; 4] = b"SRCK";

pub fn write_checkpoint<T: Scalar>(entries: &BTreeMap<String, Tensor<T>>) -> Vec<u8> {
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
    out.push(T::DTYPE.len() as u8);
    out.extend_from_slice(T::DTYPE.as_bytes());
    out.extend_from_slice(&(entries.len() as u32).to_le_bytes());
    for (path, tensor) in entries {
        out.extend_from_slice(&(path.len() as u32).to_le_bytes());
        out.extend_from_slice(path.as_bytes());
        out.extend_from_slice(&(tensor.rank() as u32).to_le_bytes());
        for &d in tensor.shape() {
            out.extend_from_slice(&(d as u64).to_le_bytes());
        }
        for &v in tensor.data() {
            v.write_le(&mut out);
        }
    }
    out
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.pos + n > self.bytes.len() {
            return Err(Error::Checkpoint(format!("truncated at byte {}", self.pos)));
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
}

/// The dtype tag of a checkpoint, read from its header.
pub fn checkpoint_dtype(bytes: &[u8]) -> Result<String> {
    let mut r = Reader { bytes, pos: 0 };
    if r.take(4)? != MAGIC {
        return Err(Error::Checkpoint("bad magic".into()));
    }
    r.u32()?;
    let dlen = r.take(1)?[0] as usize;
    Ok(std::str::from_utf8(r.take(dlen)?).map_err(|e| Error::Checkpoint(e.to_string()))?.to_string())
}

pub fn read_checkpoint<T: Scalar>(bytes: &[u8]) -> Result<BTreeMap<String, Tensor<T>>> {
    let mut r = Reader { bytes, pos: 0 };
    if r.take(4)? != MAGIC {
        return Err(Error::Checkpoint("bad magic".into()));
    }
    let version = r.u32()?;
    if version != CHECKPOINT_VERSION {
        return Err(Error::Checkpoint(format!("unsupported version {version}")));
    }
    let dlen = r.take(1)?[0] as usize;
    let dtype = std::str::from_utf8(r.take(dlen)?).map_err(|e| Error::Checkpoint(e.to_string()))?;
    if dtype != T::DTYPE {
        return Err(Error::Checkpoint(format!("stored dtype {dtype}, requested {}", T::DTYPE)));
    }
    let count = r.u32()?;
    let mut entries = BTreeMap::new();
    for _ in 0..count {
        let plen = r.u32()? as usize;
        let path = std::str::from_utf8(r.take(plen)?).map_err(|e| Error::Checkpoint(e.to_string()))?.to_string();
        let rank = r.u32()? as usize;
        let shape = (0..rank).map(|_| r.u64().map(|d| d as usize)).collect::<Result<Vec<_>>>()?;
        let numel: usize = shape.iter().product();
        let raw = r.take(numel * T::BYTES)?;
        let data = raw.chunks(T::BYTES).map(T::read_le).collect();
        if entries.insert(path.clone(), Tensor::new(&shape, data)?).is_some() {
            return Err(Error::Checkpoint(format!("duplicate entry {path}")));
        }
    }
    if r.pos != bytes.len() {
        return Err(Error::Checkpoint(format!("{} trailing bytes", bytes.len() - r.pos)));
    }
    Ok(entries)
}
