use std::fmt;

use crate::error::{Error, Result};

/// Distance metric an index is built for.
///
/// Conventions (smaller distance = better match):
/// - `L2`: Euclidean distance.
/// - `InnerProduct`: negated dot product. Not a true metric; self-query
///   distance is `-|q|^2`, not zero.
/// - `Cosine`: `1 - cos(theta)`, computed as a dot product over
///   L2-normalized copies. Records and queries are normalized on entry.
/// - `Hamming`: bit difference count over binary codes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum MetricKind {
    L2,
    InnerProduct,
    Cosine,
    Hamming,
}

impl MetricKind {
    /// Payload representation this metric operates on.
    pub fn payload_kind(self) -> PayloadKind {
        match self {
            MetricKind::Hamming => PayloadKind::Binary,
            _ => PayloadKind::Float,
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "l2" => Ok(MetricKind::L2),
            "ip" => Ok(MetricKind::InnerProduct),
            "cosine" => Ok(MetricKind::Cosine),
            "hamming" => Ok(MetricKind::Hamming),
            other => Err(Error::InvalidParam(format!(
                "unknown metric {other:?} (expected l2, ip, cosine or hamming)"
            ))),
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            MetricKind::L2 => "l2",
            MetricKind::InnerProduct => "ip",
            MetricKind::Cosine => "cosine",
            MetricKind::Hamming => "hamming",
        }
    }
}

impl fmt::Display for MetricKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// Storage representation of a gallery record.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum PayloadKind {
    Float,
    Binary,
}

impl PayloadKind {
    pub fn name(self) -> &'static str {
        match self {
            PayloadKind::Float => "float",
            PayloadKind::Binary => "binary",
        }
    }
}

impl fmt::Display for PayloadKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// Dense float feature vector. Construction rejects empty and non-finite
/// input, so downstream kernels never see NaN or infinity.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingVector {
    values: Vec<f32>,
}

impl EmbeddingVector {
    pub fn new(values: Vec<f32>) -> Result<Self> {
        if values.is_empty() {
            return Err(Error::EmptyVector);
        }
        if let Some(i) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite(i));
        }
        Ok(Self { values })
    }

    pub fn dim(&self) -> usize {
        self.values.len()
    }

    pub fn values(&self) -> &[f32] {
        &self.values
    }

    /// Serialized size: four bytes per component.
    pub fn byte_len(&self) -> usize {
        self.values.len() * 4
    }

    /// Euclidean norm, accumulated in f64.
    pub fn l2_norm(&self) -> f64 {
        self.values
            .iter()
            .map(|&v| (v as f64) * (v as f64))
            .sum::<f64>()
            .sqrt()
    }

    /// Unit-norm copy. Components are divided in f64 and rounded once back
    /// to f32, so every caller normalizing the same input gets identical bits.
    pub fn normalized(&self) -> Result<Self> {
        let norm = self.l2_norm();
        if norm == 0.0 {
            return Err(Error::ZeroVector);
        }
        Ok(Self {
            values: self
                .values
                .iter()
                .map(|&v| ((v as f64) / norm) as f32)
                .collect(),
        })
    }
}

/// Packed binary code. Bit `i` of the code lives in byte `i / 8` at
/// position `7 - i % 8` (most significant bit first). The bit count is
/// always a positive multiple of 8.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BinaryCode {
    bytes: Vec<u8>,
}

impl BinaryCode {
    pub fn from_bytes(bytes: Vec<u8>) -> Result<Self> {
        if bytes.is_empty() {
            return Err(Error::BadBitLength(0));
        }
        Ok(Self { bytes })
    }

    pub fn nbits(&self) -> usize {
        self.bytes.len() * 8
    }

    pub fn bytes(&self) -> &[u8] {
        &self.bytes
    }

    pub fn byte_len(&self) -> usize {
        self.bytes.len()
    }

    /// Value of bit `i`, MSB-first within each byte.
    pub fn bit(&self, i: usize) -> bool {
        let byte = self.bytes[i / 8];
        (byte >> (7 - i % 8)) & 1 == 1
    }
}

/// A record's stored feature: dense floats or a packed binary code.
#[derive(Debug, Clone, PartialEq)]
pub enum Payload {
    Float(EmbeddingVector),
    Binary(BinaryCode),
}

impl Payload {
    pub fn kind(&self) -> PayloadKind {
        match self {
            Payload::Float(_) => PayloadKind::Float,
            Payload::Binary(_) => PayloadKind::Binary,
        }
    }

    /// Logical dimensionality: component count for floats, bit count for
    /// binary codes.
    pub fn dim(&self) -> usize {
        match self {
            Payload::Float(v) => v.dim(),
            Payload::Binary(c) => c.nbits(),
        }
    }

    pub fn byte_len(&self) -> usize {
        match self {
            Payload::Float(v) => v.byte_len(),
            Payload::Binary(c) => c.byte_len(),
        }
    }
}

/// One gallery entry: stable id, class label, feature payload.
#[derive(Debug, Clone, PartialEq)]
pub struct GalleryRecord {
    pub id: u64,
    pub label: String,
    pub payload: Payload,
}

impl GalleryRecord {
    pub fn new(id: u64, label: impl Into<String>, payload: Payload) -> Result<Self> {
        let label = label.into();
        if label.is_empty() {
            return Err(Error::EmptyLabel(id));
        }
        Ok(Self { id, label, payload })
    }
}

/// One search hit. Results are ordered by `(distance, id)` ascending, with
/// the f32 distance compared via total ordering; distances are never NaN.
#[derive(Debug, Clone, PartialEq)]
pub struct SearchResult {
    pub id: u64,
    pub label: String,
    pub distance: f32,
}
