//! Binary checkpoint container shared by every model.
//!
//! Layout (little-endian):
//!
//! ```text
//! "UVCK" | version: u16 | header_len: u32 | header: JSON bytes
//! | block_count: u32
//! | per block: name_len: u16 | name | ndim: u8 | dims: u32 * ndim | data: f32 * prod(dims)
//! ```

use std::io::{Read, Write};
use std::path::Path;

use serde::de::DeserializeOwned;
use serde::Serialize;

use super::params::ParamStore;
use super::tensor::Tensor;
use super::NnError;

pub const MAGIC: &[u8; 4] = b"UVCK";
pub const FORMAT_VERSION: u16 = 1;

/// Decoded checkpoint: JSON header plus parameter blocks.
#[derive(Clone, Debug)]
pub struct Checkpoint {
    pub header: serde_json::Value,
    pub params: ParamStore<f32>,
}

impl Checkpoint {
    pub fn model_kind(&self) -> Option<&str> {
        self.header.get("model_kind").and_then(|v| v.as_str())
    }

    pub fn header_as<H: DeserializeOwned>(&self) -> Result<H, NnError> {
        serde_json::from_value(self.header.clone()).map_err(|e| NnError::Checkpoint(format!("header: {e}")))
    }
}

pub fn encode_checkpoint<H: Serialize>(header: &H, params: &ParamStore<f32>) -> Result<Vec<u8>, NnError> {
    let header = serde_json::to_vec(header).map_err(|e| NnError::Checkpoint(e.to_string()))?;
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
    out.extend_from_slice(&(header.len() as u32).to_le_bytes());
    out.extend_from_slice(&header);
    out.extend_from_slice(&(params.len() as u32).to_le_bytes());
    for (_, name, t) in params.iter() {
        let name = name.as_bytes();
        out.extend_from_slice(&(name.len() as u16).to_le_bytes());
        out.extend_from_slice(name);
        out.push(t.shape().len() as u8);
        for &d in t.shape() {
            out.extend_from_slice(&(d as u32).to_le_bytes());
        }
        for &v in t.data() {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    Ok(out)
}

struct Cursor<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], NnError> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.buf.len());
        let end = end.ok_or_else(|| NnError::Checkpoint("truncated checkpoint".into()))?;
        let s = &self.buf[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u8(&mut self) -> Result<u8, NnError> {
        Ok(self.take(1)?[0])
    }

    fn u16(&mut self) -> Result<u16, NnError> {
        Ok(u16::from_le_bytes(self.take(2)?.try_into().unwrap()))
    }

    fn u32(&mut self) -> Result<u32, NnError> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }
}

pub fn decode_checkpoint(bytes: &[u8]) -> Result<Checkpoint, NnError> {
    let mut c = Cursor { buf: bytes, pos: 0 };
    if c.take(4)? != MAGIC {
        return Err(NnError::Checkpoint("bad magic".into()));
    }
    let version = c.u16()?;
    if version != FORMAT_VERSION {
        return Err(NnError::VersionMismatch { found: version, expected: FORMAT_VERSION });
    }
    let hlen = c.u32()? as usize;
    let header: serde_json::Value =
        serde_json::from_slice(c.take(hlen)?).map_err(|e| NnError::Checkpoint(format!("header: {e}")))?;
    let blocks = c.u32()?;
    let mut params = ParamStore::new();
    for _ in 0..blocks {
        let nlen = c.u16()? as usize;
        let name = std::str::from_utf8(c.take(nlen)?)
            .map_err(|_| NnError::Checkpoint("parameter name is not UTF-8".into()))?
            .to_string();
        let ndim = c.u8()? as usize;
        let shape = (0..ndim).map(|_| c.u32().map(|d| d as usize)).collect::<Result<Vec<_>, _>>()?;
        let n: usize = shape.iter().product();
        let raw = c.take(n.checked_mul(4).ok_or_else(|| NnError::Checkpoint("block too large".into()))?)?;
        let data = raw.chunks_exact(4).map(|b| f32::from_le_bytes(b.try_into().unwrap())).collect();
        params.add(name, Tensor::new(shape, data)?);
    }
    if c.pos != bytes.len() {
        return Err(NnError::Checkpoint("trailing bytes after parameter blocks".into()));
    }
    Ok(Checkpoint { header, params })
}

pub fn write_checkpoint<H: Serialize>(path: impl AsRef<Path>, header: &H, params: &ParamStore<f32>) -> Result<(), NnError> {
    let bytes = encode_checkpoint(header, params)?;
    let mut f = std::fs::File::create(path)?;
    f.write_all(&bytes)?;
    Ok(())
}

pub fn read_checkpoint(path: impl AsRef<Path>) -> Result<Checkpoint, NnError> {
    let mut bytes = Vec::new();
    std::fs::File::open(path)?.read_to_end(&mut bytes)?;
    decode_checkpoint(&bytes)
}
