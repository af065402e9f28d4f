//! `SVX1` sparse container.
//!
//! Little-endian layout:
//!
//! ```text
//! "SVX1" | version u32 | B T H W u32x4 | C u32 | M u64
//!        | coords M x 4 i32 (batch, t, y, x) | features M x C f32 | crc32 u32
//! ```
//!
//! The CRC32 covers every byte before it.

use std::path::Path;

use crate::error::{Error, FormatError, Result};
use crate::tensor::{Shape, SparseTensor3D, VoxelCoord};

pub const CONTAINER_MAGIC: [u8; 4] = *b"SVX1";
pub const CONTAINER_VERSION: u32 = 1;
const HEADER_LEN: usize = 4 + 4 + 16 + 4 + 8;

pub fn encode_container(t: &SparseTensor3D) -> Vec<u8> {
    let m = t.len();
    let c = t.channels();
    let mut buf = Vec::with_capacity(HEADER_LEN + m * 16 + m * c * 4 + 4);
    buf.extend_from_slice(&CONTAINER_MAGIC);
    buf.extend_from_slice(&CONTAINER_VERSION.to_le_bytes());
    let s = t.shape();
    for d in [s.batch, s.t, s.h, s.w, c] {
        buf.extend_from_slice(&(d as u32).to_le_bytes());
    }
    buf.extend_from_slice(&(m as u64).to_le_bytes());
    for co in t.coords() {
        for v in [co.batch, co.t, co.y, co.x] {
            buf.extend_from_slice(&v.to_le_bytes());
        }
    }
    for f in t.features() {
        buf.extend_from_slice(&f.to_le_bytes());
    }
    let crc = crc32fast::hash(&buf);
    buf.extend_from_slice(&crc.to_le_bytes());
    buf
}

fn u32_at(b: &[u8], off: usize) -> u32 {
    u32::from_le_bytes(b[off..off + 4].try_into().unwrap())
}

pub fn decode_container(bytes: &[u8]) -> Result<SparseTensor3D> {
    if bytes.len() < 4 {
        return Err(FormatError::Truncated { needed: HEADER_LEN, have: bytes.len() }.into());
    }
    let magic: [u8; 4] = bytes[..4].try_into().unwrap();
    if magic != CONTAINER_MAGIC {
        return Err(FormatError::BadMagic { expected: CONTAINER_MAGIC, found: magic }.into());
    }
    if bytes.len() < HEADER_LEN {
        return Err(FormatError::Truncated { needed: HEADER_LEN, have: bytes.len() }.into());
    }
    let version = u32_at(bytes, 4);
    if version != CONTAINER_VERSION {
        return Err(FormatError::Version { expected: CONTAINER_VERSION, found: version }.into());
    }
    let dims: Vec<usize> = (0..5).map(|i| u32_at(bytes, 8 + 4 * i) as usize).collect();
    let m = u64::from_le_bytes(bytes[28..36].try_into().unwrap());
    let c = dims[4];
    let needed = (m as u128) * 16 + (m as u128) * (c as u128) * 4 + HEADER_LEN as u128 + 4;
    if needed > bytes.len() as u128 {
        return Err(FormatError::Truncated {
            needed: needed.min(usize::MAX as u128) as usize,
            have: bytes.len(),
        }
        .into());
    }
    let needed = needed as usize;
    if bytes.len() != needed {
        return Err(FormatError::Header(format!("{} trailing bytes", bytes.len() - needed)).into());
    }
    let stored = u32_at(bytes, needed - 4);
    let computed = crc32fast::hash(&bytes[..needed - 4]);
    if stored != computed {
        return Err(FormatError::Checksum { stored, computed }.into());
    }
    let m = m as usize;
    let mut off = HEADER_LEN;
    let mut coords = Vec::with_capacity(m);
    for _ in 0..m {
        let v: Vec<i32> = (0..4).map(|k| u32_at(bytes, off + 4 * k) as i32).collect();
        coords.push(VoxelCoord::new(v[0], v[1], v[2], v[3]));
        off += 16;
    }
    let features = bytes[off..off + m * c * 4]
        .chunks_exact(4)
        .map(|b| f32::from_le_bytes(b.try_into().unwrap()))
        .collect();
    let shape = Shape::new(dims[0], dims[1], dims[2], dims[3]);
    SparseTensor3D::from_parts(shape, c, coords, features)
        .map_err(|e| FormatError::Header(e.to_string()).into())
}

pub fn write_container(t: &SparseTensor3D, path: &Path) -> Result<()> {
    std::fs::write(path, encode_container(t)).map_err(|e| Error::io(path, e))
}

pub fn read_container(path: &Path) -> Result<SparseTensor3D> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_container(&bytes)
}
