//! `SVWT` weight files: a little-endian named tensor table with a trailing
//! CRC32 over every preceding byte.
//!
//! ```text
//! "SVWT" | version u32 | count u32 |
//!   count x { name_len u16 | name utf-8 | rank u8 | dims u32 x rank | f32 x prod(dims) }
//! | crc32 u32
//! ```

use std::collections::BTreeMap;
use std::path::Path;

use super::{ModelConfig, SparseVoxelDet};
use crate::error::{Error, FormatError, Result};

pub const CHECKPOINT_MAGIC: [u8; 4] = *b"SVWT";
pub const CHECKPOINT_VERSION: u32 = 1;
/// Tensor holding the numeric configuration echo.
pub const CONFIG_TENSOR: &str = "__config__";

pub fn encode_checkpoint(model: &SparseVoxelDet) -> Vec<u8> {
    let echo = model.config.to_echo();
    let mut tensors = vec![(CONFIG_TENSOR.to_string(), vec![echo.len()], echo)];
    tensors.extend(model.named_tensors());
    let mut buf = Vec::new();
    buf.extend_from_slice(&CHECKPOINT_MAGIC);
    buf.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
    buf.extend_from_slice(&(tensors.len() as u32).to_le_bytes());
    for (name, dims, data) in &tensors {
        buf.extend_from_slice(&(name.len() as u16).to_le_bytes());
        buf.extend_from_slice(name.as_bytes());
        buf.push(dims.len() as u8);
        for &d in dims {
            buf.extend_from_slice(&(d as u32).to_le_bytes());
        }
        for v in data {
            buf.extend_from_slice(&v.to_le_bytes());
        }
    }
    let crc = crc32fast::hash(&buf);
    buf.extend_from_slice(&crc.to_le_bytes());
    buf
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.buf.len()).ok_or(FormatError::Truncated {
            needed: self.pos.saturating_add(n),
            have: self.buf.len(),
        })?;
        let s = &self.buf[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }

    fn u16(&mut self) -> Result<u16> {
        Ok(u16::from_le_bytes(self.take(2)?.try_into().unwrap()))
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }
}

/// Raw tensor table, in file order.
pub type TensorTable = Vec<(String, Vec<usize>, Vec<f32>)>;

fn decode_table(bytes: &[u8]) -> Result<TensorTable> {
    if bytes.len() < 16 {
        return Err(FormatError::Truncated {
            needed: 16,
            have: bytes.len(),
        }
        .into());
    }
    if bytes[..4] != CHECKPOINT_MAGIC {
        return Err(FormatError::BadMagic {
            expected: CHECKPOINT_MAGIC,
            found: bytes[..4].try_into().unwrap(),
        }
        .into());
    }
    let mut r = Reader { buf: bytes, pos: 4 };
    let version = r.u32()?;
    if version != CHECKPOINT_VERSION {
        return Err(FormatError::Version {
            expected: CHECKPOINT_VERSION,
            found: version,
        }
        .into());
    }
    let count = r.u32()?;
    let body_end = bytes.len() - 4;
    r.buf = &bytes[..body_end];
    let mut table = Vec::new();
    for _ in 0..count {
        let n = r.u16()? as usize;
        let name = std::str::from_utf8(r.take(n)?)
            .map_err(|_| FormatError::Header("tensor name is not UTF-8".into()))?
            .to_string();
        let rank = r.u8()? as usize;
        let mut dims = Vec::with_capacity(rank);
        for _ in 0..rank {
            dims.push(r.u32()? as usize);
        }
        let len = dims.iter().try_fold(1usize, |a, &d| a.checked_mul(d)).ok_or_else(|| {
            Error::Checkpoint(format!("tensor '{name}': dims {dims:?} overflow"))
        })?;
        let raw = r.take(len.checked_mul(4).ok_or(FormatError::Truncated {
            needed: usize::MAX,
            have: bytes.len(),
        })?)?;
        let data = raw.chunks_exact(4).map(|c| f32::from_le_bytes(c.try_into().unwrap())).collect();
        table.push((name, dims, data));
    }
    let stored = u32::from_le_bytes(bytes[body_end..].try_into().unwrap());
    let computed = crc32fast::hash(&bytes[..body_end]);
    if stored != computed {
        return Err(FormatError::Checksum { stored, computed }.into());
    }
    if r.pos != body_end {
        return Err(FormatError::Header(format!("{} unexpected bytes after tensor table", body_end - r.pos)).into());
    }
    Ok(table)
}

pub fn decode_checkpoint(bytes: &[u8]) -> Result<SparseVoxelDet> {
    let table = decode_table(bytes)?;
    let mut by_name: BTreeMap<String, (Vec<usize>, Vec<f32>)> = BTreeMap::new();
    for (name, dims, data) in table {
        if by_name.insert(name.clone(), (dims, data)).is_some() {
            return Err(Error::Checkpoint(format!("tensor '{name}' appears twice")));
        }
    }
    let (_, echo) = by_name
        .remove(CONFIG_TENSOR)
        .ok_or_else(|| Error::Checkpoint(format!("missing tensor '{CONFIG_TENSOR}'")))?;
    let config = ModelConfig::from_echo(&echo)?;
    let mut model = SparseVoxelDet::zeros(&config)?;
    for p in model.params_mut() {
        let (dims, data) = by_name
            .remove(&p.name)
            .ok_or_else(|| Error::Checkpoint(format!("missing tensor '{}'", p.name)))?;
        if dims != p.dims {
            return Err(Error::Checkpoint(format!(
                "tensor '{}': shape {:?} in file, model expects {:?}",
                p.name, dims, p.dims
            )));
        }
        *p.data = data;
    }
    if let Some(extra) = by_name.keys().next() {
        return Err(Error::Checkpoint(format!("unexpected tensor '{extra}'")));
    }
    Ok(model)
}

pub fn save_checkpoint(model: &SparseVoxelDet, path: &Path) -> Result<()> {
    std::fs::write(path, encode_checkpoint(model)).map_err(|e| Error::io(path, e))
}

pub fn load_checkpoint(path: &Path) -> Result<SparseVoxelDet> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_checkpoint(&bytes)
}
