//! Exact nearest-neighbor index: a dense row store scanned in full for
//! every query. This is the accuracy reference the approximate indices are
//! measured against.

use std::collections::HashMap;

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::index::{
    merge_topk, prepare_query, prepare_stored, row_distance, Candidate, Query, RowStore, TopK,
    VectorIndex,
};
use crate::types::{GalleryRecord, MetricKind, Payload, SearchResult};

/// Scans shorter than this stay on one thread; the split is not worth the
/// fork/join overhead. Chunked scans merge by `(distance, id)`, so results
/// are identical on any thread count.
const PARALLEL_MIN_ROWS: usize = 8192;

#[derive(Debug)]
pub struct FlatIndex {
    metric: MetricKind,
    rows: RowStore,
    ids: Vec<u64>,
    labels: Vec<String>,
    slot_of: HashMap<u64, u32>,
}

impl FlatIndex {
    /// `dim` counts components for float metrics and bits (a positive
    /// multiple of 8) for Hamming.
    pub fn new(metric: MetricKind, dim: usize) -> Result<Self> {
        Ok(Self {
            metric,
            rows: RowStore::new(metric.payload_kind(), dim)?,
            ids: Vec::new(),
            labels: Vec::new(),
            slot_of: HashMap::new(),
        })
    }

    pub fn dim(&self) -> usize {
        self.rows.dim()
    }

    /// Bytes of stored payload data.
    pub fn payload_bytes(&self) -> usize {
        self.rows.payload_bytes()
    }

    pub fn contains(&self, id: u64) -> bool {
        self.slot_of.contains_key(&id)
    }

    fn scan(&self, q: &Query, k: usize) -> Vec<Candidate> {
        let n = self.ids.len();
        if n >= PARALLEL_MIN_ROWS && rayon::current_num_threads() > 1 {
            let chunk = n.div_ceil(rayon::current_num_threads() * 4).max(1024);
            let starts: Vec<usize> = (0..n).step_by(chunk).collect();
            let lists: Vec<Vec<Candidate>> = starts
                .into_par_iter()
                .map(|start| {
                    let end = (start + chunk).min(n);
                    let mut topk = TopK::new(k);
                    for slot in start..end {
                        let d = row_distance(self.metric, &self.rows, slot, q) as f32;
                        topk.offer(d, self.ids[slot], slot as u32);
                    }
                    topk.into_sorted()
                })
                .collect();
            merge_topk(lists, k)
        } else {
            let mut topk = TopK::new(k);
            for slot in 0..n {
                let d = row_distance(self.metric, &self.rows, slot, q) as f32;
                topk.offer(d, self.ids[slot], slot as u32);
            }
            topk.into_sorted()
        }
    }

    pub(crate) fn rows(&self) -> &RowStore {
        &self.rows
    }

    pub(crate) fn ids(&self) -> &[u64] {
        &self.ids
    }

    pub(crate) fn labels(&self) -> &[String] {
        &self.labels
    }

    pub(crate) fn from_parts(
        metric: MetricKind,
        rows: RowStore,
        ids: Vec<u64>,
        labels: Vec<String>,
    ) -> Result<Self> {
        if rows.len() != ids.len() || ids.len() != labels.len() {
            return Err(Error::ShapeMismatch(format!(
                "rows {} ids {} labels {}",
                rows.len(),
                ids.len(),
                labels.len()
            )));
        }
        let mut slot_of = HashMap::with_capacity(ids.len());
        for (slot, &id) in ids.iter().enumerate() {
            if slot_of.insert(id, slot as u32).is_some() {
                return Err(Error::DuplicateId(id));
            }
        }
        Ok(Self {
            metric,
            rows,
            ids,
            labels,
            slot_of,
        })
    }
}

impl VectorIndex for FlatIndex {
    fn metric(&self) -> MetricKind {
        self.metric
    }

    fn len(&self) -> usize {
        self.ids.len()
    }

    fn add(&mut self, records: &[GalleryRecord]) -> Result<usize> {
        // Validate the whole batch before touching the store.
        let mut prepared = Vec::with_capacity(records.len());
        let mut batch_ids = std::collections::HashSet::with_capacity(records.len());
        for r in records {
            if self.slot_of.contains_key(&r.id) || !batch_ids.insert(r.id) {
                return Err(Error::DuplicateId(r.id));
            }
            if r.label.is_empty() {
                return Err(Error::EmptyLabel(r.id));
            }
            prepared.push(prepare_stored(self.metric, self.rows.dim(), &r.payload)?);
        }
        for (r, p) in records.iter().zip(prepared) {
            let slot = self.ids.len() as u32;
            self.rows.push(p.as_ref());
            self.ids.push(r.id);
            self.labels.push(r.label.clone());
            self.slot_of.insert(r.id, slot);
        }
        Ok(records.len())
    }

    fn search(&self, query: &Payload, k: usize) -> Result<Vec<SearchResult>> {
        if k == 0 {
            return Err(Error::BadK);
        }
        let q = prepare_query(self.metric, self.rows.dim(), query)?;
        let cands = self.scan(&q, k);
        Ok(cands
            .into_iter()
            .map(|c| SearchResult {
                id: c.id,
                label: self.labels[c.slot as usize].clone(),
                distance: c.dist,
            })
            .collect())
    }

    fn delete(&mut self, ids: &[u64]) -> Result<usize> {
        let mut removed = 0;
        for &id in ids {
            let Some(slot) = self.slot_of.remove(&id) else {
                continue;
            };
            let slot = slot as usize;
            self.rows.swap_remove(slot);
            self.ids.swap_remove(slot);
            self.labels.swap_remove(slot);
            if slot < self.ids.len() {
                self.slot_of.insert(self.ids[slot], slot as u32);
            }
            removed += 1;
        }
        Ok(removed)
    }
}
