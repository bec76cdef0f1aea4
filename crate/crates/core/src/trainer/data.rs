//! Synthetic labeled datasets for training and retrieval evaluation.
//!
//! Each class gets a random unit direction scaled by `center_scale`;
//! samples are that center plus isotropic Gaussian noise. `center_scale`
//! of zero erases all class structure, which pins retrieval at chance
//! level and makes a useful null fixture.

use ndarray::Array2;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};

#[derive(Debug, Clone)]
pub struct SyntheticConfig {
    pub classes: usize,
    pub dim: usize,
    pub train_per_class: usize,
    pub gallery_per_class: usize,
    pub query_per_class: usize,
    pub center_scale: f64,
    pub noise: f64,
    pub seed: u64,
}

impl Default for SyntheticConfig {
    fn default() -> Self {
        Self {
            classes: 8,
            dim: 16,
            train_per_class: 32,
            gallery_per_class: 16,
            query_per_class: 8,
            center_scale: 3.0,
            noise: 1.0,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone)]
pub struct LabeledSet {
    /// `n x dim`.
    pub features: Array2<f64>,
    pub labels: Vec<usize>,
}

impl LabeledSet {
    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.features.ncols()
    }
}

#[derive(Debug, Clone)]
pub struct SyntheticDataset {
    pub train: LabeledSet,
    pub gallery: LabeledSet,
    pub query: LabeledSet,
    pub classes: usize,
    pub dim: usize,
}

pub fn generate(cfg: &SyntheticConfig) -> Result<SyntheticDataset> {
    if cfg.classes == 0 || cfg.dim == 0 {
        return Err(Error::InvalidParam(
            "classes and dim must be positive".into(),
        ));
    }
    if cfg.train_per_class == 0 || cfg.gallery_per_class == 0 || cfg.query_per_class == 0 {
        return Err(Error::InvalidParam(
            "every split needs at least one sample per class".into(),
        ));
    }
    if !(cfg.center_scale >= 0.0) || !(cfg.noise >= 0.0) {
        return Err(Error::InvalidParam(
            "center_scale and noise must be non-negative".into(),
        ));
    }

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut train = SplitBuf::new(cfg.dim);
    let mut gallery = SplitBuf::new(cfg.dim);
    let mut query = SplitBuf::new(cfg.dim);

    for class in 0..cfg.classes {
        let mut center: Vec<f64> = (0..cfg.dim)
            .map(|_| StandardNormal.sample(&mut rng))
            .collect();
        let norm = center.iter().map(|v| v * v).sum::<f64>().sqrt();
        if norm > 0.0 {
            for v in &mut center {
                *v = *v / norm * cfg.center_scale;
            }
        } else {
            center = vec![0.0; cfg.dim];
            center[0] = cfg.center_scale;
        }
        for (buf, count) in [
            (&mut train, cfg.train_per_class),
            (&mut gallery, cfg.gallery_per_class),
            (&mut query, cfg.query_per_class),
        ] {
            for _ in 0..count {
                for &c in &center {
                    let z: f64 = StandardNormal.sample(&mut rng);
                    buf.values.push(c + cfg.noise * z);
                }
                buf.labels.push(class);
            }
        }
    }

    Ok(SyntheticDataset {
        train: train.finish()?,
        gallery: gallery.finish()?,
        query: query.finish()?,
        classes: cfg.classes,
        dim: cfg.dim,
    })
}

struct SplitBuf {
    dim: usize,
    values: Vec<f64>,
    labels: Vec<usize>,
}

impl SplitBuf {
    fn new(dim: usize) -> Self {
        Self {
            dim,
            values: Vec::new(),
            labels: Vec::new(),
        }
    }

    fn finish(self) -> Result<LabeledSet> {
        let n = self.labels.len();
        let features = Array2::from_shape_vec((n, self.dim), self.values)
            .map_err(|e| Error::ShapeMismatch(e.to_string()))?;
        Ok(LabeledSet {
            features,
            labels: self.labels,
        })
    }
}
