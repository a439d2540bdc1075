//! Content addressing for binary artifacts, plus the packed real-vector
//! container used for parameter and occupancy artifacts.

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

/// Content address of an immutable blob: lowercase hex SHA-256, size and
/// media type. Equal bytes always produce equal digests.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct BlobRef {
    pub digest: String,
    pub media_type: String,
    pub size_bytes: u64,
}

impl BlobRef {
    pub fn validate(&self) -> Result<(), String> {
        if self.digest.len() != 64 || !self.digest.bytes().all(|b| b.is_ascii_hexdigit()) {
            return Err(format!("digest {:?} is not 64 hex chars", self.digest));
        }
        if self.digest.bytes().any(|b| b.is_ascii_uppercase()) {
            return Err("digest must be lowercase hex".into());
        }
        Ok(())
    }
}

/// Computes the content address of a blob.
pub fn digest(media_type: &str, blob: &[u8]) -> BlobRef {
    BlobRef {
        digest: hex::encode(Sha256::digest(blob)),
        media_type: media_type.to_owned(),
        size_bytes: blob.len() as u64,
    }
}

/// Hex digest alone, for callers that don't need a full reference.
pub fn digest_hex(blob: &[u8]) -> String {
    hex::encode(Sha256::digest(blob))
}

/// Media types used by this stack's artifact producers.
pub mod media {
    pub const BITSET: &str = "application/x-bitset";
    pub const VECTOR: &str = "application/x-vector-f64le";
    pub const TOML: &str = "application/toml";
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum VectorError {
    #[error("malformed vector container header")]
    MalformedHeader,
    #[error("vector body length mismatch: expected {expected} bytes, found {actual}")]
    BodyLength { expected: usize, actual: usize },
}

/// Packs a real vector: `vector1 len=<n>\n` followed by n little-endian
/// f64 values.
pub fn pack_vector(values: &[f64]) -> Vec<u8> {
    let header = format!("vector1 len={}\n", values.len());
    let mut out = Vec::with_capacity(header.len() + values.len() * 8);
    out.extend_from_slice(header.as_bytes());
    for v in values {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out
}

pub fn unpack_vector(bytes: &[u8]) -> Result<Vec<f64>, VectorError> {
    let scan = bytes.len().min(64);
    let nl = bytes[..scan]
        .iter()
        .position(|&b| b == b'\n')
        .ok_or(VectorError::MalformedHeader)?;
    let header = std::str::from_utf8(&bytes[..nl]).map_err(|_| VectorError::MalformedHeader)?;
    let len: usize = header
        .strip_prefix("vector1 len=")
        .and_then(|rest| rest.parse().ok())
        .ok_or(VectorError::MalformedHeader)?;
    let body = &bytes[nl + 1..];
    if body.len() != len * 8 {
        return Err(VectorError::BodyLength {
            expected: len * 8,
            actual: body.len(),
        });
    }
    Ok(body
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("chunk of 8")))
        .collect())
}
