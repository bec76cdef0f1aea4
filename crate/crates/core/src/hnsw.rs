//! Hierarchical navigable small-world graph index. Append-only: records
//! can be added and searched but not deleted; the layered graph has no
//! cheap repair for removed nodes.
//!
//! Layout follows the usual construction: node levels are geometric with
//! scale `1/ln(m)`, inserts greedily descend from the entry point, each
//! layer links the new node to the closest candidates found with
//! `ef_construction` up to the layer's degree cap (`m` above the ground
//! layer, `2m` on it), and overfull neighbor lists are pruned back to the
//! same caps. All tie-breaks are `(distance, slot)` ascending and the only
//! randomness is the seeded level draw, so builds are reproducible bit
//! for bit.

use std::cmp::Reverse;
use std::collections::{BinaryHeap, HashMap, HashSet};

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::index::{prepare_query, prepare_stored, row_distance, Query, RowStore, VectorIndex};
use crate::types::{GalleryRecord, MetricKind, Payload, SearchResult};

/// Hard cap on drawn levels; the geometric draw reaches this only with
/// vanishing probability and the graph stays sane if it does.
const MAX_LEVEL: usize = 31;

#[derive(Debug, Clone)]
pub struct HnswParams {
    /// Neighbor budget per node above the ground layer; the ground layer
    /// allows `2 * m`.
    pub m: usize,
    /// Candidate beam width while inserting.
    pub ef_construction: usize,
    /// Beam width used by `search` when no per-call value is given.
    pub ef_search_default: usize,
    /// Seed for the level-draw RNG.
    pub seed: u64,
}

impl Default for HnswParams {
    fn default() -> Self {
        Self {
            m: 32,
            ef_construction: 200,
            ef_search_default: 64,
            seed: 0,
        }
    }
}

/// Heap entry ordered by `(distance, slot)`; distances are finite.
#[derive(Debug, Clone, Copy, PartialEq)]
struct Scored {
    dist: f64,
    slot: u32,
}

impl Eq for Scored {}

impl Ord for Scored {
    fn cmp(&self, other: &Self) -> std::cmp::Ordering {
        self.dist
            .total_cmp(&other.dist)
            .then_with(|| self.slot.cmp(&other.slot))
    }
}

impl PartialOrd for Scored {
    fn partial_cmp(&self, other: &Self) -> Option<std::cmp::Ordering> {
        Some(self.cmp(other))
    }
}

#[derive(Debug)]
pub struct HnswIndex {
    metric: MetricKind,
    params: HnswParams,
    /// Level scale `1 / ln(m)`.
    ml: f64,
    rows: RowStore,
    ids: Vec<u64>,
    labels: Vec<String>,
    levels: Vec<u8>,
    /// `links[slot][layer]` lists neighbor slots. Edges are inserted
    /// reciprocally; pruning may later drop one direction.
    links: Vec<Vec<Vec<u32>>>,
    entry: Option<u32>,
    id_set: HashMap<u64, u32>,
    rng: ChaCha8Rng,
    /// Level draws made so far; persisted so a reloaded index continues
    /// the same RNG stream.
    draws: u64,
}

impl HnswIndex {
    pub fn new(metric: MetricKind, dim: usize, params: HnswParams) -> Result<Self> {
        if params.m < 2 {
            return Err(Error::InvalidParam("m must be >= 2".into()));
        }
        if params.ef_construction == 0 || params.ef_search_default == 0 {
            return Err(Error::InvalidParam(
                "ef_construction and ef_search_default must be >= 1".into(),
            ));
        }
        let ml = 1.0 / (params.m as f64).ln();
        Ok(Self {
            metric,
            rows: RowStore::new(metric.payload_kind(), dim)?,
            ml,
            rng: ChaCha8Rng::seed_from_u64(params.seed),
            params,
            ids: Vec::new(),
            labels: Vec::new(),
            levels: Vec::new(),
            links: Vec::new(),
            entry: None,
            id_set: HashMap::new(),
            draws: 0,
        })
    }

    pub fn params(&self) -> &HnswParams {
        &self.params
    }

    pub fn dim(&self) -> usize {
        self.rows.dim()
    }

    fn cap(&self, layer: usize) -> usize {
        if layer == 0 {
            self.params.m * 2
        } else {
            self.params.m
        }
    }

    fn draw_level(&mut self) -> usize {
        // u is confined to (0, 1] so the log is finite.
        let u = 1.0 - self.rng.random::<f64>();
        self.draws += 1;
        ((-u.ln() * self.ml).floor() as usize).min(MAX_LEVEL)
    }

    fn query_of_slot(&self, slot: u32) -> Query {
        match self.rows.kind() {
            crate::types::PayloadKind::Float => {
                Query::Float(self.rows.float_row(slot as usize).to_vec())
            }
            crate::types::PayloadKind::Binary => {
                Query::Binary(self.rows.byte_row(slot as usize).to_vec())
            }
        }
    }

    fn dist(&self, q: &Query, slot: u32) -> f64 {
        row_distance(self.metric, &self.rows, slot as usize, q)
    }

    /// Beam search on one layer. Entry points must carry their distances.
    /// Returns up to `ef` closest reached nodes, ascending `(dist, slot)`.
    fn search_layer(&self, q: &Query, entries: &[Scored], ef: usize, layer: usize) -> Vec<Scored> {
        let mut visited = vec![false; self.ids.len()];
        let mut candidates: BinaryHeap<Reverse<Scored>> = BinaryHeap::new();
        let mut results: BinaryHeap<Scored> = BinaryHeap::new();

        for &e in entries {
            if visited[e.slot as usize] {
                continue;
            }
            visited[e.slot as usize] = true;
            candidates.push(Reverse(e));
            results.push(e);
            if results.len() > ef {
                results.pop();
            }
        }

        while let Some(Reverse(c)) = candidates.pop() {
            let worst = results.peek().expect("results seeded with entries").dist;
            if results.len() >= ef && c.dist > worst {
                break;
            }
            for &nb in &self.links[c.slot as usize][layer] {
                if visited[nb as usize] {
                    continue;
                }
                visited[nb as usize] = true;
                let d = self.dist(q, nb);
                if results.len() < ef || d < results.peek().expect("non-empty").dist {
                    let s = Scored { dist: d, slot: nb };
                    candidates.push(Reverse(s));
                    results.push(s);
                    if results.len() > ef {
                        results.pop();
                    }
                }
            }
        }
        results.into_sorted_vec()
    }

    /// Greedy descent from `start` through layers above `target`, keeping
    /// only the single closest node per layer.
    fn descend(&self, q: &Query, start: Scored, from_layer: usize, to_layer: usize) -> Scored {
        let mut ep = start;
        let mut lc = from_layer;
        while lc > to_layer {
            ep = self.search_layer(q, &[ep], 1, lc)[0];
            lc -= 1;
        }
        ep
    }

    fn prune(&mut self, node: u32, layer: usize) {
        let cap = self.cap(layer);
        if self.links[node as usize][layer].len() <= cap {
            return;
        }
        let node_q = self.query_of_slot(node);
        let mut scored: Vec<Scored> = self.links[node as usize][layer]
            .iter()
            .map(|&nb| Scored {
                dist: self.dist(&node_q, nb),
                slot: nb,
            })
            .collect();
        scored.sort_unstable();
        scored.truncate(cap);
        self.links[node as usize][layer] = scored.into_iter().map(|s| s.slot).collect();
    }

    fn insert_slot(&mut self, slot: u32, level: usize) {
        self.links[slot as usize] = vec![Vec::new(); level + 1];

        let Some(entry) = self.entry else {
            self.entry = Some(slot);
            return;
        };

        let q = self.query_of_slot(slot);
        let top = self.levels[entry as usize] as usize;
        let mut ep = Scored {
            dist: self.dist(&q, entry),
            slot: entry,
        };

        if top > level {
            ep = self.descend(&q, ep, top, level + 1);
        }

        let mut frontier = vec![ep];
        let mut lc = level.min(top);
        loop {
            let w = self.search_layer(&q, &frontier, self.params.ef_construction, lc);
            for &cand in w.iter().take(self.cap(lc)) {
                self.links[slot as usize][lc].push(cand.slot);
                self.links[cand.slot as usize][lc].push(slot);
                self.prune(cand.slot, lc);
            }
            frontier = w;
            if lc == 0 {
                break;
            }
            lc -= 1;
        }

        if level > top {
            self.entry = Some(slot);
        }
    }

    /// Search with an explicit beam width. `ef` must be at least `k`.
    pub fn search_with_ef(&self, query: &Payload, k: usize, ef: usize) -> Result<Vec<SearchResult>> {
        if k == 0 {
            return Err(Error::BadK);
        }
        if ef < k {
            return Err(Error::EfTooSmall { ef, k });
        }
        let q = prepare_query(self.metric, self.rows.dim(), query)?;
        let Some(entry) = self.entry else {
            return Ok(Vec::new());
        };
        let top = self.levels[entry as usize] as usize;
        let ep = Scored {
            dist: self.dist(&q, entry),
            slot: entry,
        };
        let ep = self.descend(&q, ep, top, 0);
        let w = self.search_layer(&q, &[ep], ef, 0);

        // Contract ordering is by the reported f32 distance, then id.
        let mut cands: Vec<(f32, u64, u32)> = w
            .into_iter()
            .map(|s| (s.dist as f32, self.ids[s.slot as usize], s.slot))
            .collect();
        cands.sort_unstable_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
        cands.truncate(k);
        Ok(cands
            .into_iter()
            .map(|(dist, id, slot)| SearchResult {
                id,
                label: self.labels[slot as usize].clone(),
                distance: dist,
            })
            .collect())
    }

    pub fn entry_slot(&self) -> Option<u32> {
        self.entry
    }

    pub fn level_of(&self, slot: u32) -> usize {
        self.levels[slot as usize] as usize
    }

    pub fn neighbors(&self, slot: u32, layer: usize) -> &[u32] {
        &self.links[slot as usize][layer]
    }

    pub fn max_level(&self) -> usize {
        self.entry
            .map(|e| self.levels[e as usize] as usize)
            .unwrap_or(0)
    }

    pub fn draws(&self) -> u64 {
        self.draws
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

    pub(crate) fn levels(&self) -> &[u8] {
        &self.levels
    }

    pub(crate) fn links(&self) -> &[Vec<Vec<u32>>] {
        &self.links
    }

    #[allow(clippy::too_many_arguments)]
    pub(crate) fn from_parts(
        metric: MetricKind,
        params: HnswParams,
        rows: RowStore,
        ids: Vec<u64>,
        labels: Vec<String>,
        levels: Vec<u8>,
        links: Vec<Vec<Vec<u32>>>,
        entry: Option<u32>,
        draws: u64,
    ) -> Result<Self> {
        let n = ids.len();
        if rows.len() != n || labels.len() != n || levels.len() != n || links.len() != n {
            return Err(Error::ShapeMismatch(format!(
                "rows {} ids {} labels {} levels {} links {}",
                rows.len(),
                n,
                labels.len(),
                levels.len(),
                links.len()
            )));
        }
        if n > 0 && entry.is_none() {
            return Err(Error::BadHeader("non-empty graph without entry".into()));
        }
        let mut idx = Self::new(metric, rows.dim(), params)?;
        let mut id_set = HashMap::with_capacity(n);
        for (slot, &id) in ids.iter().enumerate() {
            if id_set.insert(id, slot as u32).is_some() {
                return Err(Error::DuplicateId(id));
            }
        }
        // Replay the level draws so future inserts continue the stream a
        // single-process build would have produced.
        for _ in 0..draws {
            let _ = idx.rng.random::<f64>();
        }
        idx.draws = draws;
        idx.rows = rows;
        idx.ids = ids;
        idx.labels = labels;
        idx.levels = levels;
        idx.links = links;
        idx.entry = entry;
        idx.id_set = id_set;
        Ok(idx)
    }
}

impl VectorIndex for HnswIndex {
    fn metric(&self) -> MetricKind {
        self.metric
    }

    fn len(&self) -> usize {
        self.ids.len()
    }

    fn add(&mut self, records: &[GalleryRecord]) -> Result<usize> {
        let mut prepared = Vec::with_capacity(records.len());
        let mut batch_ids = HashSet::with_capacity(records.len());
        for r in records {
            if self.id_set.contains_key(&r.id) || !batch_ids.insert(r.id) {
                return Err(Error::DuplicateId(r.id));
            }
            if r.label.is_empty() {
                return Err(Error::EmptyLabel(r.id));
            }
            prepared.push(prepare_stored(self.metric, self.rows.dim(), &r.payload)?.into_owned());
        }
        for (r, stored) in records.iter().zip(prepared) {
            let slot = self.ids.len() as u32;
            let level = self.draw_level();
            self.rows.push(&stored);
            self.ids.push(r.id);
            self.labels.push(r.label.clone());
            self.levels.push(level as u8);
            self.links.push(Vec::new());
            self.id_set.insert(r.id, slot);
            self.insert_slot(slot, level);
        }
        Ok(records.len())
    }

    fn search(&self, query: &Payload, k: usize) -> Result<Vec<SearchResult>> {
        self.search_with_ef(query, k, self.params.ef_search_default.max(k))
    }

    fn delete(&mut self, _ids: &[u64]) -> Result<usize> {
        Err(Error::UnsupportedOperation("delete"))
    }
}
