//! `DPFV` binary feature files: magic, u32 count, u32 dim, then
//! `count * dim` little-endian f32.

use std::path::Path;

use crate::error::{Error, Result};
use crate::scene::FeatureVector;

pub const MAGIC: &[u8; 4] = b"DPFV";

pub fn encode(vectors: &[FeatureVector], dim: usize) -> Result<Vec<u8>> {
    let mut out = Vec::with_capacity(12 + vectors.len() * dim * 4);
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&(vectors.len() as u32).to_le_bytes());
    out.extend_from_slice(&(dim as u32).to_le_bytes());
    for v in vectors {
        if v.dim() != dim {
            return Err(Error::DimensionMismatch {
                expected: dim,
                found: v.dim(),
            });
        }
        for x in v.values() {
            out.extend_from_slice(&x.to_le_bytes());
        }
    }
    Ok(out)
}

pub fn decode(bytes: &[u8]) -> Result<(usize, Vec<FeatureVector>)> {
    if bytes.len() < 12 || &bytes[..4] != MAGIC {
        return Err(Error::MalformedHeader("feature file lacks DPFV header".into()));
    }
    let count = u32::from_le_bytes(bytes[4..8].try_into().unwrap()) as usize;
    let dim = u32::from_le_bytes(bytes[8..12].try_into().unwrap()) as usize;
    if dim == 0 {
        return Err(Error::MalformedHeader("feature dimension is zero".into()));
    }
    let body = &bytes[12..];
    let expected = count
        .checked_mul(dim)
        .and_then(|n| n.checked_mul(4))
        .ok_or_else(|| Error::MalformedHeader("count * dim overflows".into()))?;
    if body.len() != expected {
        return Err(Error::DimensionMismatch {
            expected,
            found: body.len(),
        });
    }
    let vectors = body
        .chunks_exact(dim * 4)
        .map(|rec| {
            FeatureVector::new(
                rec.chunks_exact(4)
                    .map(|b| f32::from_le_bytes(b.try_into().unwrap()))
                    .collect(),
            )
        })
        .collect::<Result<Vec<_>>>()?;
    Ok((dim, vectors))
}

pub fn write_features(path: &Path, vectors: &[FeatureVector], dim: usize) -> Result<()> {
    std::fs::write(path, encode(vectors, dim)?).map_err(|e| Error::io(path, e))
}

pub fn read_features(path: &Path) -> Result<(usize, Vec<FeatureVector>)> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    decode(&bytes)
}
