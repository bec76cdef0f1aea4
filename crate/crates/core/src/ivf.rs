//! Inverted-file index: a k-means coarse quantizer splits the gallery into
//! cells, and queries scan only the `nprobe` cells whose centroids are
//! closest. With `nprobe = nlist` every cell is scanned and results match
//! the flat index exactly, bit for bit.

use std::collections::{HashMap, HashSet};

use crate::error::{Error, Result};
use crate::index::{
    prepare_query, prepare_stored, row_distance, Query, RowStore, TopK, VectorIndex,
};
use crate::kmeans::{run_kmeans, KmeansConfig};
use crate::metrics::normalize_slice;
use crate::types::{EmbeddingVector, GalleryRecord, MetricKind, Payload, PayloadKind, SearchResult};

pub const DEFAULT_MAX_ITERS: usize = 25;

/// Square-root heuristic for the cell count given an expected gallery size.
pub fn nlist_heuristic(n: usize) -> usize {
    ((n as f64).sqrt().round() as usize).max(1)
}

#[derive(Debug, Clone)]
struct Cell {
    ids: Vec<u64>,
    labels: Vec<String>,
    rows: RowStore,
}

#[derive(Debug)]
pub struct IvfIndex {
    metric: MetricKind,
    dim: usize,
    nlist: usize,
    seed: u64,
    nprobe_default: usize,
    /// `nlist * dim`, unit-norm rows for dot-product metrics. Empty until
    /// trained.
    centroids: Vec<f32>,
    cells: Vec<Cell>,
    /// id -> (cell, slot within cell).
    locs: HashMap<u64, (u32, u32)>,
    train_inertia: Vec<f64>,
}

impl IvfIndex {
    /// Untrained shell. Training fits the coarse quantizer; `add`, `search`
    /// and `delete` all fail with `NotTrained` until then. The metric must
    /// be a float metric: cell centroids are means, which binary codes do
    /// not have.
    pub fn new(metric: MetricKind, dim: usize, nlist: usize, seed: u64) -> Result<Self> {
        if metric == MetricKind::Hamming {
            return Err(Error::InvalidParam(
                "inverted-file index requires a float metric".into(),
            ));
        }
        if nlist == 0 {
            return Err(Error::InvalidParam("nlist must be >= 1".into()));
        }
        if dim == 0 {
            return Err(Error::EmptyVector);
        }
        Ok(Self {
            metric,
            dim,
            nlist,
            seed,
            nprobe_default: nlist_heuristic(nlist).min(nlist),
            centroids: Vec::new(),
            cells: Vec::new(),
            locs: HashMap::new(),
            train_inertia: Vec::new(),
        })
    }

    /// Fit the coarse quantizer on training vectors (at least `nlist` of
    /// them). Dot-product metrics cluster L2-normalized copies on the unit
    /// sphere. Retraining an index that already holds records is rejected.
    pub fn train(&mut self, samples: &[EmbeddingVector], max_iters: usize) -> Result<()> {
        if self.trained() {
            return Err(Error::InvalidParam(
                "index is already trained; build a new one to refit".into(),
            ));
        }
        if samples.len() < self.nlist {
            return Err(Error::TooFewSamples {
                need: self.nlist,
                got: samples.len(),
            });
        }
        let mut data = Vec::with_capacity(samples.len() * self.dim);
        for s in samples {
            if s.dim() != self.dim {
                return Err(Error::DimMismatch {
                    expected: self.dim,
                    got: s.dim(),
                });
            }
            if self.metric == MetricKind::L2 {
                data.extend_from_slice(s.values());
            } else {
                data.extend_from_slice(&normalize_slice(s.values())?);
            }
        }
        let run = run_kmeans(
            &data,
            self.dim,
            &KmeansConfig {
                k: self.nlist,
                max_iters,
                seed: self.seed,
                spherical: self.metric != MetricKind::L2,
            },
        )?;
        self.centroids = run.centroids;
        self.train_inertia = run.inertia_history;
        self.cells = (0..self.nlist)
            .map(|_| {
                Ok(Cell {
                    ids: Vec::new(),
                    labels: Vec::new(),
                    rows: RowStore::new(PayloadKind::Float, self.dim)?,
                })
            })
            .collect::<Result<_>>()?;
        Ok(())
    }

    pub fn trained(&self) -> bool {
        !self.centroids.is_empty()
    }

    pub fn nlist(&self) -> usize {
        self.nlist
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn nprobe_default(&self) -> usize {
        self.nprobe_default
    }

    pub fn set_nprobe_default(&mut self, nprobe: usize) -> Result<()> {
        if nprobe == 0 || nprobe > self.nlist {
            return Err(Error::BadNprobe {
                nprobe,
                nlist: self.nlist,
            });
        }
        self.nprobe_default = nprobe;
        Ok(())
    }

    /// Inertia per training iteration, for build diagnostics.
    pub fn train_inertia(&self) -> &[f64] {
        &self.train_inertia
    }

    pub fn cell_sizes(&self) -> Vec<usize> {
        self.cells.iter().map(|c| c.ids.len()).collect()
    }

    /// Cell a record currently lives in.
    pub fn cell_of(&self, id: u64) -> Option<usize> {
        self.locs.get(&id).map(|&(cell, _)| cell as usize)
    }

    fn centroid(&self, c: usize) -> &[f32] {
        &self.centroids[c * self.dim..(c + 1) * self.dim]
    }

    fn sq_dist_to_centroid(&self, c: usize, x: &[f32]) -> f64 {
        let cent = self.centroid(c);
        let mut acc = 0.0f64;
        for i in 0..self.dim {
            let d = x[i] as f64 - cent[i] as f64;
            acc += d * d;
        }
        acc
    }

    /// Insertion-time cell assignment: nearest centroid by squared
    /// Euclidean distance, lowest cell on ties. Centroids are unit-norm
    /// for dot-product metrics, so this equals the max-dot assignment.
    pub fn assign_cell(&self, payload: &Payload) -> Result<usize> {
        if !self.trained() {
            return Err(Error::NotTrained);
        }
        let stored = prepare_stored(self.metric, self.dim, payload)?;
        let Payload::Float(v) = stored.as_ref() else {
            unreachable!("float metrics store float rows");
        };
        Ok(self.nearest_cell(v.values()))
    }

    fn nearest_cell(&self, x: &[f32]) -> usize {
        let mut best = 0usize;
        let mut best_d = f64::INFINITY;
        for c in 0..self.nlist {
            let d = self.sq_dist_to_centroid(c, x);
            if d < best_d {
                best_d = d;
                best = c;
            }
        }
        best
    }

    /// Cells in probe order for a query: ascending squared distance to the
    /// centroid, lowest cell on ties.
    fn probe_order(&self, q: &Query) -> Vec<usize> {
        let Query::Float(qf) = q else {
            unreachable!("float metrics prepare float queries");
        };
        let mut order: Vec<(f64, usize)> = (0..self.nlist)
            .map(|c| (self.sq_dist_to_centroid(c, qf), c))
            .collect();
        order.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
        order.into_iter().map(|(_, c)| c).collect()
    }

    /// Search scanning the `nprobe` nearest cells.
    pub fn search_with_nprobe(
        &self,
        query: &Payload,
        k: usize,
        nprobe: usize,
    ) -> Result<Vec<SearchResult>> {
        if !self.trained() {
            return Err(Error::NotTrained);
        }
        if k == 0 {
            return Err(Error::BadK);
        }
        if nprobe == 0 || nprobe > self.nlist {
            return Err(Error::BadNprobe {
                nprobe,
                nlist: self.nlist,
            });
        }
        let q = prepare_query(self.metric, self.dim, query)?;
        let order = self.probe_order(&q);
        let mut topk = TopK::new(k);
        for &c in order.iter().take(nprobe) {
            let cell = &self.cells[c];
            for slot in 0..cell.ids.len() {
                let d = row_distance(self.metric, &cell.rows, slot, &q) as f32;
                topk.offer(d, cell.ids[slot], slot as u32);
            }
        }
        // Candidate slots are cell-local; resolve labels through locs.
        Ok(topk
            .into_sorted()
            .into_iter()
            .map(|c| {
                let &(cell, slot) = self.locs.get(&c.id).expect("hit ids are stored");
                SearchResult {
                    id: c.id,
                    label: self.cells[cell as usize].labels[slot as usize].clone(),
                    distance: c.dist,
                }
            })
            .collect())
    }

    pub(crate) fn from_parts(
        metric: MetricKind,
        dim: usize,
        nlist: usize,
        seed: u64,
        nprobe_default: usize,
        centroids: Vec<f32>,
        parts: Vec<(Vec<u64>, Vec<String>, RowStore)>,
    ) -> Result<Self> {
        if centroids.len() != nlist * dim || parts.len() != nlist {
            return Err(Error::ShapeMismatch(format!(
                "centroids {} cells {} for nlist {}",
                centroids.len(),
                parts.len(),
                nlist
            )));
        }
        let mut idx = Self::new(metric, dim, nlist, seed)?;
        idx.nprobe_default = nprobe_default;
        idx.centroids = centroids;
        for (c, (ids, labels, rows)) in parts.into_iter().enumerate() {
            if ids.len() != labels.len() || ids.len() != rows.len() {
                return Err(Error::ShapeMismatch(format!(
                    "cell {c}: ids {} labels {} rows {}",
                    ids.len(),
                    labels.len(),
                    rows.len()
                )));
            }
            for (slot, &id) in ids.iter().enumerate() {
                if idx.locs.insert(id, (c as u32, slot as u32)).is_some() {
                    return Err(Error::DuplicateId(id));
                }
            }
            idx.cells.push(Cell { ids, labels, rows });
        }
        Ok(idx)
    }

    pub(crate) fn export_parts(
        &self,
    ) -> (&[f32], impl Iterator<Item = (&[u64], &[String], &RowStore)>) {
        (
            &self.centroids,
            self.cells
                .iter()
                .map(|c| (c.ids.as_slice(), c.labels.as_slice(), &c.rows)),
        )
    }
}

impl VectorIndex for IvfIndex {
    fn metric(&self) -> MetricKind {
        self.metric
    }

    fn len(&self) -> usize {
        self.locs.len()
    }

    fn add(&mut self, records: &[GalleryRecord]) -> Result<usize> {
        if !self.trained() {
            return Err(Error::NotTrained);
        }
        let mut prepared = Vec::with_capacity(records.len());
        let mut batch_ids = HashSet::with_capacity(records.len());
        for r in records {
            if self.locs.contains_key(&r.id) || !batch_ids.insert(r.id) {
                return Err(Error::DuplicateId(r.id));
            }
            if r.label.is_empty() {
                return Err(Error::EmptyLabel(r.id));
            }
            let stored = prepare_stored(self.metric, self.dim, &r.payload)?.into_owned();
            let cell = match &stored {
                Payload::Float(v) => self.nearest_cell(v.values()),
                Payload::Binary(_) => unreachable!("float metrics store float rows"),
            };
            prepared.push((stored, cell));
        }
        for (r, (stored, cell)) in records.iter().zip(prepared) {
            let slot = self.cells[cell].ids.len() as u32;
            self.cells[cell].rows.push(&stored);
            self.cells[cell].ids.push(r.id);
            self.cells[cell].labels.push(r.label.clone());
            self.locs.insert(r.id, (cell as u32, slot));
        }
        Ok(records.len())
    }

    fn search(&self, query: &Payload, k: usize) -> Result<Vec<SearchResult>> {
        self.search_with_nprobe(query, k, self.nprobe_default)
    }

    fn delete(&mut self, ids: &[u64]) -> Result<usize> {
        if !self.trained() {
            return Err(Error::NotTrained);
        }
        let mut removed = 0;
        for &id in ids {
            let Some((cell, slot)) = self.locs.remove(&id) else {
                continue;
            };
            let cell = cell as usize;
            let slot = slot as usize;
            let c = &mut self.cells[cell];
            c.rows.swap_remove(slot);
            c.ids.swap_remove(slot);
            c.labels.swap_remove(slot);
            if slot < c.ids.len() {
                self.locs.insert(c.ids[slot], (cell as u32, slot as u32));
            }
            removed += 1;
        }
        Ok(removed)
    }
}
