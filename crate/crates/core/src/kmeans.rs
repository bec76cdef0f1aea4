//! Lloyd k-means with D-squared weighted seeding, used to train the
//! inverted-list coarse quantizer.
//!
//! Everything is deterministic for a fixed seed: the RNG is ChaCha8, ties
//! in assignment go to the lowest centroid index, and empty cells are
//! refilled from the largest cell's farthest point (lowest index on ties).

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};

#[derive(Debug, Clone)]
pub struct KmeansConfig {
    pub k: usize,
    pub max_iters: usize,
    pub seed: u64,
    /// Renormalize centroids to unit length after every mean update
    /// (used when clustering L2-normalized data for dot-product metrics).
    pub spherical: bool,
}

#[derive(Debug, Clone)]
pub struct KmeansRun {
    /// `k * dim` row-major centroid matrix.
    pub centroids: Vec<f32>,
    /// Final cell assignment per input row.
    pub assignments: Vec<usize>,
    /// Sum of squared distances to the assigned centroid, one entry per
    /// iteration. Non-increasing when no reseeding occurred.
    pub inertia_history: Vec<f64>,
    pub iterations: usize,
    /// Number of empty-cell repairs performed across all iterations.
    pub reseeds: usize,
}

fn sq_dist(a: &[f32], b: &[f32]) -> f64 {
    let mut acc = 0.0f64;
    for i in 0..a.len() {
        let d = a[i] as f64 - b[i] as f64;
        acc += d * d;
    }
    acc
}

fn row(data: &[f32], dim: usize, i: usize) -> &[f32] {
    &data[i * dim..(i + 1) * dim]
}

/// Nearest centroid by squared distance, lowest index on exact ties.
fn nearest(centroids: &[f32], dim: usize, k: usize, x: &[f32]) -> (usize, f64) {
    let mut best = 0usize;
    let mut best_d = f64::INFINITY;
    for c in 0..k {
        let d = sq_dist(x, row(centroids, dim, c));
        if d < best_d {
            best_d = d;
            best = c;
        }
    }
    (best, best_d)
}

/// D-squared weighted initialization. Returns `k` row indices; the first
/// is uniform, later picks are weighted by squared distance to the closest
/// already-chosen row. When all remaining mass is zero (duplicate-heavy
/// data) the lowest unchosen index is taken.
fn dsq_init(data: &[f32], dim: usize, n: usize, k: usize, rng: &mut ChaCha8Rng) -> Vec<usize> {
    let mut chosen = Vec::with_capacity(k);
    let first = rng.random_range(0..n);
    chosen.push(first);

    let mut d2: Vec<f64> = (0..n)
        .map(|i| sq_dist(row(data, dim, i), row(data, dim, first)))
        .collect();

    while chosen.len() < k {
        let total: f64 = d2.iter().sum();
        let pick = if total > 0.0 {
            let r = rng.random::<f64>() * total;
            let mut cum = 0.0f64;
            let mut pick = None;
            for (i, &w) in d2.iter().enumerate() {
                cum += w;
                if cum > r {
                    pick = Some(i);
                    break;
                }
            }
            pick.unwrap_or_else(|| {
                // r landed on accumulated rounding; take the last row with
                // positive weight.
                d2.iter().rposition(|&w| w > 0.0).expect("total > 0")
            })
        } else {
            (0..n)
                .find(|i| !chosen.contains(i))
                .expect("k <= n leaves an unchosen row")
        };
        chosen.push(pick);
        for i in 0..n {
            let d = sq_dist(row(data, dim, i), row(data, dim, pick));
            if d < d2[i] {
                d2[i] = d;
            }
        }
    }
    chosen
}

/// Repair empty cells by moving the farthest point out of the largest cell.
/// Returns the number of repairs. `sizes` and `assignments` are updated.
fn fix_empty_cells(
    data: &[f32],
    dim: usize,
    centroids: &[f32],
    assignments: &mut [usize],
    sizes: &mut [usize],
) -> usize {
    let k = sizes.len();
    let mut reseeds = 0;
    for empty in 0..k {
        if sizes[empty] > 0 {
            continue;
        }
        // Largest cell, lowest index on ties.
        let donor = (0..k)
            .max_by(|&a, &b| sizes[a].cmp(&sizes[b]).then(b.cmp(&a)))
            .expect("k >= 1");
        // Farthest member of the donor from the donor centroid, lowest
        // index on ties.
        let mut far = None;
        let mut far_d = -1.0f64;
        for (i, &a) in assignments.iter().enumerate() {
            if a != donor {
                continue;
            }
            let d = sq_dist(row(data, dim, i), row(centroids, dim, donor));
            if d > far_d {
                far_d = d;
                far = Some(i);
            }
        }
        let far = far.expect("largest cell is non-empty");
        assignments[far] = empty;
        sizes[donor] -= 1;
        sizes[empty] = 1;
        reseeds += 1;
    }
    reseeds
}

/// Cluster `n = data.len() / dim` rows into `cfg.k` cells.
pub fn run_kmeans(data: &[f32], dim: usize, cfg: &KmeansConfig) -> Result<KmeansRun> {
    if dim == 0 {
        return Err(Error::EmptyVector);
    }
    if data.len() % dim != 0 {
        return Err(Error::ShapeMismatch(format!(
            "data length {} is not a multiple of dim {}",
            data.len(),
            dim
        )));
    }
    if cfg.k == 0 {
        return Err(Error::InvalidParam("k must be >= 1".into()));
    }
    let n = data.len() / dim;
    if n < cfg.k {
        return Err(Error::TooFewSamples {
            need: cfg.k,
            got: n,
        });
    }

    let k = cfg.k;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let init = dsq_init(data, dim, n, k, &mut rng);
    let mut centroids = vec![0.0f32; k * dim];
    for (c, &i) in init.iter().enumerate() {
        centroids[c * dim..(c + 1) * dim].copy_from_slice(row(data, dim, i));
    }

    let mut assignments = vec![0usize; n];
    let mut prev_assignments: Option<Vec<usize>> = None;
    let mut history = Vec::new();
    let mut iterations = 0;
    let mut reseeds = 0;

    for _ in 0..cfg.max_iters.max(1) {
        iterations += 1;

        let mut sizes = vec![0usize; k];
        for i in 0..n {
            let (c, _) = nearest(&centroids, dim, k, row(data, dim, i));
            assignments[i] = c;
            sizes[c] += 1;
        }
        let iter_reseeds =
            fix_empty_cells(data, dim, &centroids, &mut assignments, &mut sizes);
        reseeds += iter_reseeds;

        // Means in f64, accumulated in row order, rounded once to f32.
        let mut sums = vec![0.0f64; k * dim];
        for i in 0..n {
            let c = assignments[i];
            let x = row(data, dim, i);
            for j in 0..dim {
                sums[c * dim + j] += x[j] as f64;
            }
        }
        for c in 0..k {
            if sizes[c] == 0 {
                continue; // unreachable after repair; keep previous centroid
            }
            let inv = 1.0 / sizes[c] as f64;
            if cfg.spherical {
                let mut norm2 = 0.0f64;
                for j in 0..dim {
                    let m = sums[c * dim + j] * inv;
                    norm2 += m * m;
                }
                let norm = norm2.sqrt();
                if norm > 0.0 {
                    for j in 0..dim {
                        centroids[c * dim + j] = (sums[c * dim + j] * inv / norm) as f32;
                    }
                }
                // Zero-norm mean keeps the previous centroid.
            } else {
                for j in 0..dim {
                    centroids[c * dim + j] = (sums[c * dim + j] * inv) as f32;
                }
            }
        }

        let mut inertia = 0.0f64;
        for i in 0..n {
            inertia += sq_dist(row(data, dim, i), row(&centroids, dim, assignments[i]));
        }
        history.push(inertia);

        if iter_reseeds == 0 && prev_assignments.as_deref() == Some(assignments.as_slice()) {
            break;
        }
        prev_assignments = Some(assignments.clone());
    }

    Ok(KmeansRun {
        centroids,
        assignments,
        inertia_history: history,
        iterations,
        reseeds,
    })
}
