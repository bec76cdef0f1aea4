//! Labeled feature galleries: ingestion from CSV or the binary container,
//! binarization, and persistence. Record ids are row positions.

use std::fs;
use std::path::Path;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::index::RowStore;
use crate::metrics::binarize;
use crate::persist::{
    body_reader, open_body, payload_byte, payload_from_byte, verify_crc, Writer, GALLERY_MAGIC,
};
use crate::types::{EmbeddingVector, GalleryRecord, Payload, PayloadKind};

#[derive(Debug, Clone, PartialEq)]
pub struct GalleryStore {
    rows: RowStore,
    labels: Vec<String>,
}

impl GalleryStore {
    /// Empty gallery. `dim` counts float components, or bits (a positive
    /// multiple of 8) for binary payloads.
    pub fn new(kind: PayloadKind, dim: usize) -> Result<Self> {
        Ok(Self {
            rows: RowStore::new(kind, dim)?,
            labels: Vec::new(),
        })
    }

    /// Build from parallel float rows and labels.
    pub fn from_float_rows(rows: Vec<Vec<f32>>, labels: Vec<String>) -> Result<Self> {
        if rows.len() != labels.len() {
            return Err(Error::RowCountMismatch {
                rows: rows.len(),
                labels: labels.len(),
            });
        }
        if rows.is_empty() {
            return Err(Error::EmptyVector);
        }
        let mut store = Self::new(PayloadKind::Float, rows[0].len())?;
        for (row, label) in rows.into_iter().zip(labels) {
            store.push(Payload::Float(EmbeddingVector::new(row)?), label)?;
        }
        Ok(store)
    }

    /// Append one record; returns its id (the row position).
    pub fn push(&mut self, payload: Payload, label: impl Into<String>) -> Result<u64> {
        let label = label.into();
        let id = self.labels.len() as u64;
        if label.is_empty() {
            return Err(Error::EmptyLabel(id));
        }
        if payload.kind() != self.rows.kind() {
            return Err(Error::PayloadMismatch {
                expected: self.rows.kind().name(),
                got: payload.kind().name(),
            });
        }
        if payload.dim() != self.rows.dim() {
            return Err(Error::DimMismatch {
                expected: self.rows.dim(),
                got: payload.dim(),
            });
        }
        self.rows.push(&payload);
        self.labels.push(label);
        Ok(id)
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.rows.dim()
    }

    pub fn payload_kind(&self) -> PayloadKind {
        self.rows.kind()
    }

    /// Bytes of stored feature data (labels excluded).
    pub fn payload_bytes(&self) -> usize {
        self.rows.payload_bytes()
    }

    pub fn label(&self, id: u64) -> Option<&str> {
        self.labels.get(id as usize).map(String::as_str)
    }

    pub fn payload(&self, id: u64) -> Option<Payload> {
        if (id as usize) < self.len() {
            Some(self.rows.payload(id as usize))
        } else {
            None
        }
    }

    pub fn record(&self, id: u64) -> Option<GalleryRecord> {
        Some(GalleryRecord {
            id,
            label: self.labels.get(id as usize)?.clone(),
            payload: self.payload(id)?,
        })
    }

    pub fn iter(&self) -> impl Iterator<Item = GalleryRecord> + '_ {
        (0..self.len() as u64).map(|id| self.record(id).expect("id in range"))
    }

    /// Replace all labels (e.g. a labels file overriding container labels).
    pub fn with_labels(mut self, labels: Vec<String>) -> Result<Self> {
        if labels.len() != self.len() {
            return Err(Error::RowCountMismatch {
                rows: self.len(),
                labels: labels.len(),
            });
        }
        if let Some(i) = labels.iter().position(String::is_empty) {
            return Err(Error::EmptyLabel(i as u64));
        }
        self.labels = labels;
        Ok(self)
    }

    /// Sign-binarized copy: every float row becomes a packed code, labels
    /// and ids carry over. The float dimension must be a multiple of 8.
    pub fn binarized(&self) -> Result<GalleryStore> {
        if self.payload_kind() != PayloadKind::Float {
            return Err(Error::PayloadMismatch {
                expected: "float",
                got: "binary",
            });
        }
        let mut out = Self::new(PayloadKind::Binary, self.dim())?;
        for id in 0..self.len() {
            let v = EmbeddingVector::new(self.rows.float_row(id).to_vec())?;
            let code = binarize(&v)?;
            out.rows.push(&Payload::Binary(code));
            out.labels.push(self.labels[id].clone());
        }
        Ok(out)
    }

    /// Deterministic uniform gallery for benchmarks and harnesses:
    /// components are U(-1, 1), labels are `item-<id>`.
    pub fn synthetic(n: usize, dim: usize, seed: u64) -> Result<Self> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut store = Self::new(PayloadKind::Float, dim)?;
        for i in 0..n {
            let v: Vec<f32> = (0..dim).map(|_| rng.random::<f32>() * 2.0 - 1.0).collect();
            store.push(
                Payload::Float(EmbeddingVector::new(v)?),
                format!("item-{i}"),
            )?;
        }
        Ok(store)
    }

    /// Container layout: `PPSG | version | payload_kind u8 | dim u32 |
    /// count u64 | rows | labels | crc32`.
    pub fn save(&self, path: &Path) -> Result<()> {
        let mut w = Writer::new(GALLERY_MAGIC);
        w.u8(payload_byte(self.payload_kind()));
        w.u32(self.dim() as u32);
        w.u64(self.len() as u64);
        match self.payload_kind() {
            PayloadKind::Float => w.f32s(self.rows.raw_floats()),
            PayloadKind::Binary => w.bytes(self.rows.raw_bytes()),
        }
        for label in &self.labels {
            w.line(label)?;
        }
        w.finish(path)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let data = open_body(path, GALLERY_MAGIC)?;
        let mut r = body_reader(&data);
        let kind = payload_from_byte(r.u8()?)?;
        let dim = r.u32()? as usize;
        let count = r.u64()? as usize;
        let rows = match kind {
            PayloadKind::Float => RowStore::from_raw_floats(dim, r.f32s(count * dim)?)?,
            PayloadKind::Binary => RowStore::from_raw_bytes(dim, r.raw(count * dim / 8)?)?,
        };
        let mut labels = Vec::with_capacity(count);
        for _ in 0..count {
            labels.push(r.line()?);
        }
        if !r.finished() {
            return Err(Error::BadHeader(format!(
                "trailing data after offset {}",
                r.offset()
            )));
        }
        verify_crc(&data)?;
        if let Some(i) = labels.iter().position(String::is_empty) {
            return Err(Error::EmptyLabel(i as u64));
        }
        Ok(Self { rows, labels })
    }
}

/// Parse a numeric CSV: one feature row per line, comma-separated,
/// whitespace around tokens ignored, blank lines skipped. All rows must
/// share one width. Returns `(dim, rows)`.
pub fn read_csv_features(path: &Path) -> Result<(usize, Vec<Vec<f32>>)> {
    let text = fs::read_to_string(path)?;
    let mut rows: Vec<Vec<f32>> = Vec::new();
    let mut dim = 0usize;
    for (lineno, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        let mut row = Vec::with_capacity(dim);
        for tok in line.split(',') {
            let tok = tok.trim();
            let v: f32 = tok.parse().map_err(|_| Error::MalformedRow {
                line: lineno + 1,
                reason: format!("cannot parse {tok:?} as a float"),
            })?;
            if !v.is_finite() {
                return Err(Error::MalformedRow {
                    line: lineno + 1,
                    reason: format!("non-finite value {tok:?}"),
                });
            }
            row.push(v);
        }
        if rows.is_empty() {
            dim = row.len();
        } else if row.len() != dim {
            return Err(Error::MalformedRow {
                line: lineno + 1,
                reason: format!("expected {dim} columns, got {}", row.len()),
            });
        }
        rows.push(row);
    }
    if rows.is_empty() {
        return Err(Error::EmptyVector);
    }
    Ok((dim, rows))
}

/// Read a labels file: one label per line, no blanks.
pub fn read_labels(path: &Path) -> Result<Vec<String>> {
    let text = fs::read_to_string(path)?;
    let labels: Vec<String> = text.lines().map(str::to_string).collect();
    if let Some(i) = labels.iter().position(String::is_empty) {
        return Err(Error::EmptyLabel(i as u64));
    }
    if labels.is_empty() {
        return Err(Error::LabelsRequired);
    }
    Ok(labels)
}

/// Ingest a gallery from a features file plus an optional labels file.
/// CSV features have no labels of their own, so the labels file is
/// mandatory there; container files carry labels that an explicit labels
/// file may override.
pub fn ingest(features: &Path, labels: Option<&Path>, csv: bool) -> Result<GalleryStore> {
    if csv {
        let labels_path = labels.ok_or(Error::LabelsRequired)?;
        let (_, rows) = read_csv_features(features)?;
        let labels = read_labels(labels_path)?;
        GalleryStore::from_float_rows(rows, labels)
    } else {
        let store = GalleryStore::load(features)?;
        match labels {
            Some(path) => store.with_labels(read_labels(path)?),
            None => Ok(store),
        }
    }
}
