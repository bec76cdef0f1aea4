//! Index contract and machinery shared by every index implementation.
//!
//! Result ordering is pinned across the crate: candidates are keyed by
//! `(distance as f32, id)` and compared with `f32::total_cmp`, so exact,
//! inverted-list and graph indices that score the same records return them
//! in the same order.

use std::borrow::Cow;
use std::collections::BinaryHeap;

use crate::error::{Error, Result};
use crate::metrics::{dot_slice, hamming_slice, l2_distance_slice, normalize_slice};
use crate::types::{GalleryRecord, MetricKind, Payload, PayloadKind, SearchResult};

/// Common surface of the flat, inverted-list and graph indices.
pub trait VectorIndex {
    fn metric(&self) -> MetricKind;

    /// Number of records currently stored.
    fn len(&self) -> usize;

    fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Insert a batch. The whole batch is validated before anything is
    /// stored, so a rejected batch leaves the index unchanged. Returns the
    /// number of records inserted.
    fn add(&mut self, records: &[GalleryRecord]) -> Result<usize>;

    /// Top-k nearest records, ordered by `(distance, id)` ascending.
    /// `k` larger than the store returns everything.
    fn search(&self, query: &Payload, k: usize) -> Result<Vec<SearchResult>>;

    /// Remove records by id; unknown ids are skipped. Returns the number
    /// actually removed. Indices that cannot delete return
    /// `Error::UnsupportedOperation` and stay unchanged.
    fn delete(&mut self, ids: &[u64]) -> Result<usize>;
}

/// Dense row storage for one payload kind. `dim` counts components for
/// float rows and bits for binary rows.
#[derive(Debug, Clone, PartialEq)]
pub(crate) struct RowStore {
    kind: PayloadKind,
    dim: usize,
    floats: Vec<f32>,
    bytes: Vec<u8>,
}

impl RowStore {
    pub(crate) fn new(kind: PayloadKind, dim: usize) -> Result<Self> {
        if dim == 0 {
            return Err(Error::EmptyVector);
        }
        if kind == PayloadKind::Binary && dim % 8 != 0 {
            return Err(Error::BadBitLength(dim));
        }
        Ok(Self {
            kind,
            dim,
            floats: Vec::new(),
            bytes: Vec::new(),
        })
    }

    pub(crate) fn kind(&self) -> PayloadKind {
        self.kind
    }

    pub(crate) fn dim(&self) -> usize {
        self.dim
    }

    fn row_width(&self) -> usize {
        match self.kind {
            PayloadKind::Float => self.dim,
            PayloadKind::Binary => self.dim / 8,
        }
    }

    pub(crate) fn len(&self) -> usize {
        match self.kind {
            PayloadKind::Float => self.floats.len() / self.row_width(),
            PayloadKind::Binary => self.bytes.len() / self.row_width(),
        }
    }

    /// Bytes of payload data held (used for storage-ratio accounting).
    pub(crate) fn payload_bytes(&self) -> usize {
        self.floats.len() * 4 + self.bytes.len()
    }

    /// Append a payload already validated against this store's kind/dim.
    pub(crate) fn push(&mut self, payload: &Payload) {
        debug_assert_eq!(payload.kind(), self.kind);
        debug_assert_eq!(payload.dim(), self.dim);
        match payload {
            Payload::Float(v) => self.floats.extend_from_slice(v.values()),
            Payload::Binary(c) => self.bytes.extend_from_slice(c.bytes()),
        }
    }

    /// Remove row `slot` by moving the last row into its place.
    pub(crate) fn swap_remove(&mut self, slot: usize) {
        let w = self.row_width();
        let last = self.len() - 1;
        match self.kind {
            PayloadKind::Float => {
                for i in 0..w {
                    self.floats.swap(slot * w + i, last * w + i);
                }
                self.floats.truncate(last * w);
            }
            PayloadKind::Binary => {
                for i in 0..w {
                    self.bytes.swap(slot * w + i, last * w + i);
                }
                self.bytes.truncate(last * w);
            }
        }
    }

    pub(crate) fn float_row(&self, slot: usize) -> &[f32] {
        let w = self.row_width();
        &self.floats[slot * w..(slot + 1) * w]
    }

    pub(crate) fn byte_row(&self, slot: usize) -> &[u8] {
        let w = self.row_width();
        &self.bytes[slot * w..(slot + 1) * w]
    }

    /// Reconstruct the stored payload (normalized copy for cosine indices).
    pub(crate) fn payload(&self, slot: usize) -> Payload {
        match self.kind {
            PayloadKind::Float => Payload::Float(
                crate::types::EmbeddingVector::new(self.float_row(slot).to_vec())
                    .expect("stored rows are validated"),
            ),
            PayloadKind::Binary => Payload::Binary(
                crate::types::BinaryCode::from_bytes(self.byte_row(slot).to_vec())
                    .expect("stored rows are validated"),
            ),
        }
    }

    pub(crate) fn raw_floats(&self) -> &[f32] {
        &self.floats
    }

    pub(crate) fn raw_bytes(&self) -> &[u8] {
        &self.bytes
    }

    pub(crate) fn from_raw_floats(dim: usize, floats: Vec<f32>) -> Result<Self> {
        let mut s = Self::new(PayloadKind::Float, dim)?;
        if floats.len() % dim != 0 {
            return Err(Error::ShapeMismatch(format!(
                "float row data length {} is not a multiple of dim {}",
                floats.len(),
                dim
            )));
        }
        s.floats = floats;
        Ok(s)
    }

    pub(crate) fn from_raw_bytes(nbits: usize, bytes: Vec<u8>) -> Result<Self> {
        let mut s = Self::new(PayloadKind::Binary, nbits)?;
        if bytes.len() % (nbits / 8) != 0 {
            return Err(Error::ShapeMismatch(format!(
                "binary row data length {} is not a multiple of {} bytes",
                bytes.len(),
                nbits / 8
            )));
        }
        s.bytes = bytes;
        Ok(s)
    }
}

/// Query prepared for a given metric: kind and dimension checked, cosine
/// queries normalized once up front.
#[derive(Debug, Clone)]
pub(crate) enum Query {
    Float(Vec<f32>),
    Binary(Vec<u8>),
}

pub(crate) fn prepare_query(metric: MetricKind, dim: usize, query: &Payload) -> Result<Query> {
    let want = metric.payload_kind();
    if query.kind() != want {
        return Err(Error::PayloadMismatch {
            expected: want.name(),
            got: query.kind().name(),
        });
    }
    if query.dim() != dim {
        return Err(Error::DimMismatch {
            expected: dim,
            got: query.dim(),
        });
    }
    match query {
        Payload::Float(v) => {
            if metric == MetricKind::Cosine {
                Ok(Query::Float(normalize_slice(v.values())?))
            } else {
                Ok(Query::Float(v.values().to_vec()))
            }
        }
        Payload::Binary(c) => Ok(Query::Binary(c.bytes().to_vec())),
    }
}

/// Validate a record payload for insertion and return the bytes to store.
/// Cosine indices store a normalized copy so search reduces to dot products.
pub(crate) fn prepare_stored<'a>(
    metric: MetricKind,
    dim: usize,
    payload: &'a Payload,
) -> Result<Cow<'a, Payload>> {
    let want = metric.payload_kind();
    if payload.kind() != want {
        return Err(Error::PayloadMismatch {
            expected: want.name(),
            got: payload.kind().name(),
        });
    }
    if payload.dim() != dim {
        return Err(Error::DimMismatch {
            expected: dim,
            got: payload.dim(),
        });
    }
    match payload {
        Payload::Float(v) if metric == MetricKind::Cosine => {
            let normalized = crate::types::EmbeddingVector::new(normalize_slice(v.values())?)
                .expect("normalized copy of finite input is finite");
            Ok(Cow::Owned(Payload::Float(normalized)))
        }
        _ => Ok(Cow::Borrowed(payload)),
    }
}

/// Distance between a stored row and a prepared query, in f64. The
/// inner-product convention negates the dot product; cosine distance is
/// `1 - cos` clamped at zero (f32 normalization can push a self-match dot
/// a few ulps past 1).
pub(crate) fn row_distance(metric: MetricKind, store: &RowStore, slot: usize, q: &Query) -> f64 {
    match (metric, q) {
        (MetricKind::L2, Query::Float(qf)) => l2_distance_slice(store.float_row(slot), qf),
        (MetricKind::InnerProduct, Query::Float(qf)) => {
            let d = -dot_slice(store.float_row(slot), qf);
            if d == 0.0 {
                0.0
            } else {
                d
            }
        }
        (MetricKind::Cosine, Query::Float(qf)) => {
            (1.0 - dot_slice(store.float_row(slot), qf)).max(0.0)
        }
        (MetricKind::Hamming, Query::Binary(qb)) => {
            hamming_slice(store.byte_row(slot), qb) as f64
        }
        _ => unreachable!("query kind is validated against the metric"),
    }
}

/// Search candidate. Ordering is total: distance first via `total_cmp`,
/// then id. Distances are stored as the f32 the caller will report, so the
/// ordering users see is exactly the ordering used internally.
#[derive(Debug, Clone, Copy, PartialEq)]
pub(crate) struct Candidate {
    pub dist: f32,
    pub id: u64,
    pub slot: u32,
}

impl Eq for Candidate {}

impl Ord for Candidate {
    fn cmp(&self, other: &Self) -> std::cmp::Ordering {
        self.dist
            .total_cmp(&other.dist)
            .then_with(|| self.id.cmp(&other.id))
    }
}

impl PartialOrd for Candidate {
    fn partial_cmp(&self, other: &Self) -> Option<std::cmp::Ordering> {
        Some(self.cmp(other))
    }
}

/// Bounded max-heap keeping the k smallest candidates seen.
pub(crate) struct TopK {
    k: usize,
    heap: BinaryHeap<Candidate>,
}

impl TopK {
    pub(crate) fn new(k: usize) -> Self {
        Self {
            k,
            heap: BinaryHeap::with_capacity(k + 1),
        }
    }

    pub(crate) fn offer(&mut self, dist: f32, id: u64, slot: u32) {
        let cand = Candidate { dist, id, slot };
        if self.heap.len() < self.k {
            self.heap.push(cand);
        } else if let Some(worst) = self.heap.peek() {
            if cand < *worst {
                self.heap.pop();
                self.heap.push(cand);
            }
        }
    }

    /// Candidates in ascending `(distance, id)` order.
    pub(crate) fn into_sorted(self) -> Vec<Candidate> {
        self.heap.into_sorted_vec()
    }
}

/// Merge per-chunk top-k lists (each already sorted ascending) into one
/// global top-k. Equivalent to running a single heap over the whole scan.
pub(crate) fn merge_topk(mut lists: Vec<Vec<Candidate>>, k: usize) -> Vec<Candidate> {
    let mut all: Vec<Candidate> = Vec::with_capacity(lists.iter().map(Vec::len).sum());
    for list in lists.drain(..) {
        all.extend(list);
    }
    all.sort_unstable();
    all.truncate(k);
    all
}

/// Kind tag for persisted indices and CLI dispatch.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum IndexKind {
    Flat,
    Ivf,
    Hnsw,
}

impl IndexKind {
    pub fn name(self) -> &'static str {
        match self {
            IndexKind::Flat => "flat",
            IndexKind::Ivf => "ivf",
            IndexKind::Hnsw => "hnsw",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "flat" => Ok(IndexKind::Flat),
            "ivf" => Ok(IndexKind::Ivf),
            "hnsw" => Ok(IndexKind::Hnsw),
            other => Err(Error::InvalidParam(format!(
                "unknown index kind {other:?} (expected flat, ivf or hnsw)"
            ))),
        }
    }
}

/// Type-erased index, the unit the CLI and the persistence layer work with.
pub enum AnyIndex {
    Flat(crate::flat::FlatIndex),
    Ivf(crate::ivf::IvfIndex),
    Hnsw(crate::hnsw::HnswIndex),
}

impl AnyIndex {
    pub fn kind(&self) -> IndexKind {
        match self {
            AnyIndex::Flat(_) => IndexKind::Flat,
            AnyIndex::Ivf(_) => IndexKind::Ivf,
            AnyIndex::Hnsw(_) => IndexKind::Hnsw,
        }
    }

    /// Search with optional per-call tuning: `nprobe` applies to the
    /// inverted-list index, `ef` to the graph index; others ignore them.
    pub fn search_tuned(
        &self,
        query: &Payload,
        k: usize,
        nprobe: Option<usize>,
        ef: Option<usize>,
    ) -> Result<Vec<SearchResult>> {
        match self {
            AnyIndex::Flat(i) => i.search(query, k),
            AnyIndex::Ivf(i) => match nprobe {
                Some(p) => i.search_with_nprobe(query, k, p),
                None => i.search(query, k),
            },
            AnyIndex::Hnsw(i) => match ef {
                Some(ef) => i.search_with_ef(query, k, ef),
                None => i.search(query, k),
            },
        }
    }
}

impl VectorIndex for AnyIndex {
    fn metric(&self) -> MetricKind {
        match self {
            AnyIndex::Flat(i) => i.metric(),
            AnyIndex::Ivf(i) => i.metric(),
            AnyIndex::Hnsw(i) => i.metric(),
        }
    }

    fn len(&self) -> usize {
        match self {
            AnyIndex::Flat(i) => i.len(),
            AnyIndex::Ivf(i) => i.len(),
            AnyIndex::Hnsw(i) => i.len(),
        }
    }

    fn add(&mut self, records: &[GalleryRecord]) -> Result<usize> {
        match self {
            AnyIndex::Flat(i) => i.add(records),
            AnyIndex::Ivf(i) => i.add(records),
            AnyIndex::Hnsw(i) => i.add(records),
        }
    }

    fn search(&self, query: &Payload, k: usize) -> Result<Vec<SearchResult>> {
        match self {
            AnyIndex::Flat(i) => i.search(query, k),
            AnyIndex::Ivf(i) => i.search(query, k),
            AnyIndex::Hnsw(i) => i.search(query, k),
        }
    }

    fn delete(&mut self, ids: &[u64]) -> Result<usize> {
        match self {
            AnyIndex::Flat(i) => i.delete(ids),
            AnyIndex::Ivf(i) => i.delete(ids),
            AnyIndex::Hnsw(i) => i.delete(ids),
        }
    }
}
