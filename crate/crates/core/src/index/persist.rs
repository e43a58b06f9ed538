//! Binary index file.
//!
//! ```text
//! magic    4 bytes   "CRIX"
//! version  u32 LE
//! dim      u32 LE
//! count    u64 LE
//! vectors  count * dim f64 LE (unit-normalized rows)
//! ids      count * (u32 LE length, UTF-8 bytes)
//! checksum 32 bytes  SHA-256 of everything above
//! ```

use std::fs;
use std::path::Path;

use sha2::{Digest, Sha256};

use super::{IndexError, VectorIndex};

pub const INDEX_MAGIC: &[u8; 4] = b"CRIX";
pub const INDEX_VERSION: u32 = 1;

const HEADER_LEN: usize = 4 + 4 + 4 + 8;
const CHECKSUM_LEN: usize = 32;

impl VectorIndex {
    pub fn to_bytes(&self) -> Vec<u8> {
        let id_bytes: usize = self.ids.iter().map(|id| 4 + id.len()).sum();
        let mut out = Vec::with_capacity(HEADER_LEN + self.vectors.len() * 8 + id_bytes + CHECKSUM_LEN);
        out.extend_from_slice(INDEX_MAGIC);
        out.extend_from_slice(&INDEX_VERSION.to_le_bytes());
        out.extend_from_slice(&(self.dim as u32).to_le_bytes());
        out.extend_from_slice(&(self.ids.len() as u64).to_le_bytes());
        for v in &self.vectors {
            out.extend_from_slice(&v.to_le_bytes());
        }
        for id in &self.ids {
            out.extend_from_slice(&(id.len() as u32).to_le_bytes());
            out.extend_from_slice(id.as_bytes());
        }
        let checksum = Sha256::digest(&out);
        out.extend_from_slice(&checksum);
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, IndexError> {
        let corrupt = |msg: &str| IndexError::Corrupt(msg.to_owned());
        if bytes.len() < HEADER_LEN + CHECKSUM_LEN {
            return Err(corrupt("file too short"));
        }
        if &bytes[..4] != INDEX_MAGIC {
            return Err(corrupt("bad magic"));
        }
        let version = u32::from_le_bytes(bytes[4..8].try_into().unwrap());
        if version != INDEX_VERSION {
            return Err(IndexError::VersionMismatch {
                expected: INDEX_VERSION,
                found: version,
            });
        }
        let (body, checksum) = bytes.split_at(bytes.len() - CHECKSUM_LEN);
        if Sha256::digest(body).as_slice() != checksum {
            return Err(corrupt("checksum mismatch (truncated or modified)"));
        }
        let dim = u32::from_le_bytes(body[8..12].try_into().unwrap()) as usize;
        let count = u64::from_le_bytes(body[12..20].try_into().unwrap()) as usize;
        if dim == 0 {
            return Err(IndexError::ZeroDimension);
        }
        let vector_len = count
            .checked_mul(dim)
            .and_then(|n| n.checked_mul(8))
            .ok_or_else(|| corrupt("size overflow"))?;
        let mut cursor = HEADER_LEN;
        let vector_bytes = body
            .get(cursor..cursor + vector_len)
            .ok_or_else(|| corrupt("vector block truncated"))?;
        let vectors: Vec<f64> = vector_bytes
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect();
        if vectors.iter().any(|v| !v.is_finite()) {
            return Err(IndexError::NonFinite);
        }
        cursor += vector_len;
        let mut ids = Vec::with_capacity(count);
        for _ in 0..count {
            let len_bytes = body
                .get(cursor..cursor + 4)
                .ok_or_else(|| corrupt("id table truncated"))?;
            let len = u32::from_le_bytes(len_bytes.try_into().unwrap()) as usize;
            cursor += 4;
            let raw = body
                .get(cursor..cursor + len)
                .ok_or_else(|| corrupt("id table truncated"))?;
            ids.push(String::from_utf8(raw.to_vec()).map_err(|_| corrupt("id is not UTF-8"))?);
            cursor += len;
        }
        if cursor != body.len() {
            return Err(corrupt("trailing bytes after id table"));
        }
        Ok(VectorIndex { dim, ids, vectors })
    }

    pub fn save(&self, path: &Path) -> Result<(), IndexError> {
        fs::write(path, self.to_bytes())?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self, IndexError> {
        Self::from_bytes(&fs::read(path)?)
    }
}
