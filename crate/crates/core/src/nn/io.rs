//! Versioned binary model files.
//!
//! Layout: 8-byte magic, `u32` format version, `u32` length plus UTF-8
//! config block, `u32` tensor count, then per tensor `u32` rows, `u32` cols
//! and `rows * cols` little-endian `f64` values in row-major order.

use std::path::Path;

use super::params::Mat;
use crate::error::{Error, Result};

pub const MAGIC: &[u8; 8] = b"TUNACCEL";
pub const FORMAT_VERSION: u32 = 1;

/// Decoded contents of a model file.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelBlob {
    pub config: String,
    pub tensors: Vec<Mat>,
}

fn put_u32(out: &mut Vec<u8>, v: usize) -> Result<()> {
    let v = u32::try_from(v).map_err(|_| Error::Format(format!("value {v} exceeds u32")))?;
    out.extend_from_slice(&v.to_le_bytes());
    Ok(())
}

pub fn encode(config: &str, tensors: &[Mat]) -> Result<Vec<u8>> {
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
    put_u32(&mut out, config.len())?;
    out.extend_from_slice(config.as_bytes());
    put_u32(&mut out, tensors.len())?;
    for t in tensors {
        put_u32(&mut out, t.nrows())?;
        put_u32(&mut out, t.ncols())?;
        for v in t.iter() {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    Ok(out)
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len());
        let end = end.ok_or_else(|| Error::Format(format!("truncated at byte {}", self.pos)))?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self) -> Result<usize> {
        let b = self.take(4)?;
        Ok(u32::from_le_bytes(b.try_into().unwrap()) as usize)
    }

    fn f64(&mut self) -> Result<f64> {
        let b = self.take(8)?;
        Ok(f64::from_le_bytes(b.try_into().unwrap()))
    }
}

pub fn decode(bytes: &[u8]) -> Result<ModelBlob> {
    let mut r = Reader { bytes, pos: 0 };
    if r.take(MAGIC.len())? != MAGIC {
        return Err(Error::Format("bad magic".into()));
    }
    let version = r.u32()?;
    if version != FORMAT_VERSION as usize {
        return Err(Error::Format(format!("unsupported version {version}")));
    }
    let len = r.u32()?;
    let config = std::str::from_utf8(r.take(len)?)
        .map_err(|e| Error::Format(format!("config block: {e}")))?
        .to_string();
    let count = r.u32()?;
    let mut tensors = Vec::with_capacity(count);
    for _ in 0..count {
        let rows = r.u32()?;
        let cols = r.u32()?;
        let n = rows.checked_mul(cols).ok_or_else(|| Error::Format("tensor too large".into()))?;
        if n.saturating_mul(8) > bytes.len() {
            return Err(Error::Format(format!("tensor {rows}x{cols} exceeds file size")));
        }
        let mut data = Vec::with_capacity(n);
        for _ in 0..n {
            data.push(r.f64()?);
        }
        tensors.push(Mat::from_shape_vec((rows, cols), data).expect("length matches shape"));
    }
    if r.pos != bytes.len() {
        return Err(Error::Format(format!("{} trailing bytes", bytes.len() - r.pos)));
    }
    Ok(ModelBlob { config, tensors })
}

pub fn write_model_file(path: &Path, config: &str, tensors: &[Mat]) -> Result<()> {
    let bytes = encode(config, tensors)?;
    std::fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

pub fn read_model_file(path: &Path) -> Result<ModelBlob> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    decode(&bytes)
}
