// SPDX-License-Identifier: MIT OR Apache-2.0

//! TVT1 tensor container: a little-endian binary format holding named f64
//! tensors with a trailing count and CRC-32. The byte layout is frozen:
//!
//! ```text
//! magic "TVT1"
//! per tensor:
//!   u32 name_len, UTF-8 name
//!   u32 ndim, u64 dims[ndim]
//!   u8 dtype (0 = f64)
//!   f64 payload, row-major, product(dims) entries
//! u64 tensor count
//! u32 CRC-32 of all preceding bytes
//! ```
//!
//! Writes iterate tensors in name order, so equal contents produce equal
//! bytes. Round trips preserve every payload bit.

use std::collections::BTreeMap;
use std::path::Path;

use taskvec_core::{TaskVector, Tensor};
use thiserror::Error;

const MAGIC: &[u8; 4] = b"TVT1";
const DTYPE_F64: u8 = 0;
/// Trailer length: u64 count plus u32 checksum.
const TRAILER: usize = 12;

#[derive(Debug, Error)]
pub enum TvtError {
    #[error("not a TVT1 file (bad magic)")]
    BadMagic,
    #[error("checksum mismatch: stored {stored:#010x}, computed {computed:#010x}")]
    ChecksumMismatch { stored: u32, computed: u32 },
    #[error("file truncated")]
    Truncated,
    #[error("duplicate tensor name {0:?}")]
    DuplicateName(String),
    #[error("malformed tensor file: {0}")]
    Malformed(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// CRC-32 (IEEE 802.3, reflected). crc32(b"123456789") = 0xCBF43926.
pub fn crc32(bytes: &[u8]) -> u32 {
    let mut crc: u32 = 0xFFFF_FFFF;
    for &b in bytes {
        crc ^= b as u32;
        for _ in 0..8 {
            let mask = (crc & 1).wrapping_neg();
            crc = (crc >> 1) ^ (0xEDB8_8320 & mask);
        }
    }
    !crc
}

/// Serializes the tensors in name order.
pub fn to_bytes(tensors: &BTreeMap<String, Tensor>) -> Vec<u8> {
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    for (name, tensor) in tensors {
        out.extend_from_slice(&(name.len() as u32).to_le_bytes());
        out.extend_from_slice(name.as_bytes());
        out.extend_from_slice(&(tensor.ndim() as u32).to_le_bytes());
        for &d in tensor.dims() {
            out.extend_from_slice(&(d as u64).to_le_bytes());
        }
        out.push(DTYPE_F64);
        for &v in tensor.data() {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    out.extend_from_slice(&(tensors.len() as u64).to_le_bytes());
    let crc = crc32(&out);
    out.extend_from_slice(&crc.to_le_bytes());
    out
}

/// Parses a TVT1 byte image. The tensor table is walked before the checksum
/// is verified so that a short file reports truncation rather than a
/// checksum failure; a bit flip inside a payload leaves the walk intact and
/// is caught by the checksum.
pub fn from_bytes(bytes: &[u8]) -> Result<BTreeMap<String, Tensor>, TvtError> {
    if bytes.len() < MAGIC.len() {
        return Err(TvtError::Truncated);
    }
    if &bytes[..MAGIC.len()] != MAGIC {
        return Err(TvtError::BadMagic);
    }
    if bytes.len() < MAGIC.len() + TRAILER {
        return Err(TvtError::Truncated);
    }
    let crc_off = bytes.len() - 4;
    let count_off = crc_off - 8;
    let count = u64::from_le_bytes(bytes[count_off..crc_off].try_into().unwrap());

    let mut entries: Vec<(std::ops::Range<usize>, Vec<usize>, std::ops::Range<usize>)> =
        Vec::new();
    let mut pos = MAGIC.len();
    for _ in 0..count {
        let name_len = read_u32(bytes, &mut pos, count_off)? as usize;
        let name_range = take(&mut pos, name_len, count_off)?;
        let ndim = read_u32(bytes, &mut pos, count_off)? as usize;
        // Each axis extent occupies eight bytes; a count the remaining bytes
        // cannot hold must fail before it sizes the buffer.
        if ndim > (count_off - pos) / 8 {
            return Err(TvtError::Truncated);
        }
        let mut dims = Vec::with_capacity(ndim);
        let mut len: usize = 1;
        for _ in 0..ndim {
            let d = read_u64(bytes, &mut pos, count_off)?;
            let d = usize::try_from(d)
                .map_err(|_| TvtError::Malformed(format!("dimension {d} out of range")))?;
            len = len
                .checked_mul(d)
                .ok_or_else(|| TvtError::Malformed("tensor size overflows".into()))?;
            dims.push(d);
        }
        let dtype_range = take(&mut pos, 1, count_off)?;
        let dtype = bytes[dtype_range.start];
        if dtype != DTYPE_F64 {
            return Err(TvtError::Malformed(format!("unsupported dtype tag {dtype}")));
        }
        let payload_len = len
            .checked_mul(8)
            .ok_or_else(|| TvtError::Malformed("tensor size overflows".into()))?;
        let payload_range = take(&mut pos, payload_len, count_off)?;
        entries.push((name_range, dims, payload_range));
    }
    if pos != count_off {
        return Err(TvtError::Malformed(format!(
            "{} unaccounted bytes between tensors and trailer",
            count_off - pos
        )));
    }

    let stored = u32::from_le_bytes(bytes[crc_off..].try_into().unwrap());
    let computed = crc32(&bytes[..crc_off]);
    if stored != computed {
        return Err(TvtError::ChecksumMismatch { stored, computed });
    }

    let mut tensors = BTreeMap::new();
    for (name_range, dims, payload_range) in entries {
        let name = std::str::from_utf8(&bytes[name_range])
            .map_err(|_| TvtError::Malformed("tensor name is not UTF-8".into()))?
            .to_string();
        let data: Vec<f64> = bytes[payload_range]
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect();
        let tensor = Tensor::new(dims, data)
            .map_err(|e| TvtError::Malformed(format!("tensor {name:?}: {e}")))?;
        if tensors.insert(name.clone(), tensor).is_some() {
            return Err(TvtError::DuplicateName(name));
        }
    }
    Ok(tensors)
}

pub fn write_tensor_file(path: &Path, tensors: &BTreeMap<String, Tensor>) -> Result<(), TvtError> {
    Ok(std::fs::write(path, to_bytes(tensors))?)
}

pub fn read_tensor_file(path: &Path) -> Result<BTreeMap<String, Tensor>, TvtError> {
    from_bytes(&std::fs::read(path)?)
}

/// Writes a task vector's layers as one TVT1 file.
pub fn write_task_vector(path: &Path, vector: &TaskVector) -> Result<(), TvtError> {
    let map: BTreeMap<String, Tensor> =
        vector.iter().map(|(n, t)| (n.clone(), t.clone())).collect();
    write_tensor_file(path, &map)
}

/// Reads a TVT1 file as a task vector.
pub fn read_task_vector(path: &Path) -> Result<TaskVector, TvtError> {
    let mut vector = TaskVector::new();
    for (name, tensor) in read_tensor_file(path)? {
        vector
            .insert(name.clone(), tensor)
            .map_err(|e| TvtError::Malformed(format!("tensor {name:?}: {e}")))?;
    }
    Ok(vector)
}

fn read_u32(bytes: &[u8], pos: &mut usize, limit: usize) -> Result<u32, TvtError> {
    let range = take(pos, 4, limit)?;
    Ok(u32::from_le_bytes(bytes[range].try_into().unwrap()))
}

fn read_u64(bytes: &[u8], pos: &mut usize, limit: usize) -> Result<u64, TvtError> {
    let range = take(pos, 8, limit)?;
    Ok(u64::from_le_bytes(bytes[range].try_into().unwrap()))
}

/// Advances the cursor by `len` bytes, refusing to cross the trailer.
fn take(pos: &mut usize, len: usize, limit: usize) -> Result<std::ops::Range<usize>, TvtError> {
    let end = pos.checked_add(len).ok_or(TvtError::Truncated)?;
    if end > limit {
        return Err(TvtError::Truncated);
    }
    let range = *pos..end;
    *pos = end;
    Ok(range)
}
