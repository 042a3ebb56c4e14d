//! EMB1: little-endian binary exchange format for embedding batches.
//!
//! ```text
//! 0..4    magic "EMB1"
//! 4..8    u32 dim
//! 8..12   u32 row count n
//! 12..16  reserved, zero
//! 16..    n * dim f32, row-major
//! ```

use std::path::Path;

use crate::embedding::EmbeddingBatch;
use crate::error::{Error, Result};
use crate::fsutil::write_atomic;

pub const MAGIC: &[u8; 4] = b"EMB1";
pub const HEADER_LEN: usize = 16;

pub fn encode(batch: &EmbeddingBatch) -> Result<Vec<u8>> {
    let dim = u32::try_from(batch.dim()).map_err(|_| Error::format("dim exceeds u32"))?;
    let rows = u32::try_from(batch.rows()).map_err(|_| Error::format("row count exceeds u32"))?;
    let mut out = Vec::with_capacity(HEADER_LEN + batch.as_slice().len() * 4);
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&dim.to_le_bytes());
    out.extend_from_slice(&rows.to_le_bytes());
    out.extend_from_slice(&0u32.to_le_bytes());
    for v in batch.as_slice() {
        out.extend_from_slice(&v.to_le_bytes());
    }
    Ok(out)
}

pub fn decode(bytes: &[u8]) -> Result<EmbeddingBatch> {
    if bytes.len() < HEADER_LEN {
        return Err(Error::format(format!("EMB1 truncated header: {} bytes", bytes.len())));
    }
    if &bytes[0..4] != MAGIC {
        return Err(Error::format("bad EMB1 magic"));
    }
    let word = |i: usize| u32::from_le_bytes(bytes[i..i + 4].try_into().unwrap()) as usize;
    let (dim, rows, reserved) = (word(4), word(8), word(12));
    if reserved != 0 {
        return Err(Error::format("EMB1 reserved header field is not zero"));
    }
    if dim == 0 {
        return Err(Error::format("EMB1 dim is zero"));
    }
    let expected = rows
        .checked_mul(dim)
        .and_then(|c| c.checked_mul(4))
        .and_then(|c| c.checked_add(HEADER_LEN))
        .ok_or_else(|| Error::format("EMB1 size overflow"))?;
    if bytes.len() != expected {
        return Err(Error::format(format!(
            "EMB1 payload is {} bytes, header implies {expected}",
            bytes.len()
        )));
    }
    let data = bytes[HEADER_LEN..]
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
        .collect();
    EmbeddingBatch::new(dim, data)
}

pub fn write_embedding_file(path: impl AsRef<Path>, batch: &EmbeddingBatch) -> Result<()> {
    write_atomic(path.as_ref(), &encode(batch)?)
}

pub fn read_embedding_file(path: impl AsRef<Path>) -> Result<EmbeddingBatch> {
    let path = path.as_ref();
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    decode(&bytes).map_err(|e| match e {
        Error::Format(m) => Error::Format(format!("{}: {m}", path.display())),
        other => other,
    })
}

/// Reads a file and checks it against the expected dimension.
pub fn read_embedding_file_with_dim(path: impl AsRef<Path>, dim: usize) -> Result<EmbeddingBatch> {
    let batch = read_embedding_file(path.as_ref())?;
    if batch.dim() != dim {
        return Err(Error::format(format!(
            "{}: dim {} does not match expected {dim}",
            path.as_ref().display(),
            batch.dim()
        )));
    }
    Ok(batch)
}
