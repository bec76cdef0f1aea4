//! Distance kernels.
//!
//! All float kernels take f32 slices and accumulate in f64, strictly in
//! index order. Sequential accumulation keeps every code path that scores
//! the same pair (flat scan, inverted lists, graph traversal, test oracles)
//! bitwise identical.

use crate::error::{Error, Result};
use crate::types::{BinaryCode, EmbeddingVector};

/// Euclidean distance between equal-length slices.
pub fn l2_distance_slice(a: &[f32], b: &[f32]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    let mut acc = 0.0f64;
    for i in 0..a.len() {
        let d = a[i] as f64 - b[i] as f64;
        acc += d * d;
    }
    acc.sqrt()
}

/// Dot product between equal-length slices.
pub fn dot_slice(a: &[f32], b: &[f32]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    let mut acc = 0.0f64;
    for i in 0..a.len() {
        acc += a[i] as f64 * b[i] as f64;
    }
    acc
}

/// Euclidean norm of a slice.
pub fn l2_norm_slice(a: &[f32]) -> f64 {
    let mut acc = 0.0f64;
    for &v in a {
        acc += v as f64 * v as f64;
    }
    acc.sqrt()
}

/// Unit-norm f32 copy: divide in f64, round once back to f32. Callers that
/// normalize the same input always get the same bytes.
pub fn normalize_slice(a: &[f32]) -> Result<Vec<f32>> {
    let norm = l2_norm_slice(a);
    if norm == 0.0 {
        return Err(Error::ZeroVector);
    }
    Ok(a.iter().map(|&v| ((v as f64) / norm) as f32).collect())
}

/// Bit difference count between equal-length packed codes.
pub fn hamming_slice(a: &[u8], b: &[u8]) -> u64 {
    debug_assert_eq!(a.len(), b.len());
    let mut acc = 0u64;
    let mut chunks_a = a.chunks_exact(8);
    let mut chunks_b = b.chunks_exact(8);
    for (ca, cb) in (&mut chunks_a).zip(&mut chunks_b) {
        let wa = u64::from_le_bytes(ca.try_into().unwrap());
        let wb = u64::from_le_bytes(cb.try_into().unwrap());
        acc += (wa ^ wb).count_ones() as u64;
    }
    for (&ra, &rb) in chunks_a.remainder().iter().zip(chunks_b.remainder()) {
        acc += (ra ^ rb).count_ones() as u64;
    }
    acc
}

fn check_dims(a: usize, b: usize) -> Result<()> {
    if a != b {
        return Err(Error::DimMismatch {
            expected: a,
            got: b,
        });
    }
    Ok(())
}

/// Euclidean distance between two embeddings.
pub fn l2_distance(a: &EmbeddingVector, b: &EmbeddingVector) -> Result<f64> {
    check_dims(a.dim(), b.dim())?;
    Ok(l2_distance_slice(a.values(), b.values()))
}

/// Dot product between two embeddings.
pub fn inner_product(a: &EmbeddingVector, b: &EmbeddingVector) -> Result<f64> {
    check_dims(a.dim(), b.dim())?;
    Ok(dot_slice(a.values(), b.values()))
}

/// Cosine similarity in [-1, 1]. Norms are taken in f64 on the raw input;
/// the quotient is clamped to absorb rounding at the boundaries. Zero-norm
/// input is an error.
pub fn cosine_similarity(a: &EmbeddingVector, b: &EmbeddingVector) -> Result<f64> {
    check_dims(a.dim(), b.dim())?;
    let na = a.l2_norm();
    let nb = b.l2_norm();
    if na == 0.0 || nb == 0.0 {
        return Err(Error::ZeroVector);
    }
    let cos = dot_slice(a.values(), b.values()) / (na * nb);
    Ok(cos.clamp(-1.0, 1.0))
}

/// Bit difference count between two codes.
pub fn hamming_distance(a: &BinaryCode, b: &BinaryCode) -> Result<u64> {
    check_dims(a.nbits(), b.nbits())?;
    Ok(hamming_slice(a.bytes(), b.bytes()))
}

/// Sign-threshold binarization: bit i is 1 iff component i > 0 (ties at
/// exactly 0 go to 0), packed MSB-first. The dimension must be a positive
/// multiple of 8 so codes occupy whole bytes.
pub fn binarize(v: &EmbeddingVector) -> Result<BinaryCode> {
    let dim = v.dim();
    if dim % 8 != 0 {
        return Err(Error::BadBitLength(dim));
    }
    let mut bytes = vec![0u8; dim / 8];
    for (i, &x) in v.values().iter().enumerate() {
        if x > 0.0 {
            bytes[i / 8] |= 1 << (7 - i % 8);
        }
    }
    BinaryCode::from_bytes(bytes)
}
