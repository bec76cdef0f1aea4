//! Deep supervised hashing loss with a semantic classification term.
//!
//! Features pass through tanh to give relaxed binary codes `a` in
//! (-1, 1). Two terms are combined:
//!
//! * classification: softmax cross-entropy of a linear classifier applied
//!   to the codes, which ties code geometry to labels,
//! * contrastive: over all unordered pairs, similar pairs pay their
//!   squared distance and dissimilar pairs pay `max(0, margin - d^2)`,
//!   normalized by the pair count n(n-1)/2.
//!
//! total = classification + alpha * contrastive. Gradients flow to the
//! raw features through the tanh (factor `1 - a^2`) and to the classifier
//! weights from the classification term.

use ndarray::Array2;

use crate::error::{Error, Result};
use super::softmax::softmax_cross_entropy;

pub const DEFAULT_ALPHA: f64 = 0.05;

#[derive(Debug, Clone, Copy)]
pub struct DshsdConfig {
    pub alpha: f64,
    pub margin: f64,
}

impl DshsdConfig {
    pub fn new(alpha: f64, margin: f64) -> Result<Self> {
        if !(alpha >= 0.0) {
            return Err(Error::InvalidParam(format!(
                "alpha must be non-negative, got {alpha}"
            )));
        }
        if !(margin > 0.0) {
            return Err(Error::InvalidParam(format!(
                "margin must be positive, got {margin}"
            )));
        }
        Ok(Self { alpha, margin })
    }

    /// Defaults for a given code width: alpha 0.05, margin `2 * dim`
    /// (half the maximum squared distance between codes in [-1, 1]^dim).
    pub fn with_dim(dim: usize) -> Self {
        Self {
            alpha: DEFAULT_ALPHA,
            margin: 2.0 * dim as f64,
        }
    }
}

#[derive(Debug, Clone)]
pub struct DshsdOutput {
    /// classification + alpha * contrastive.
    pub loss: f64,
    pub classification: f64,
    pub contrastive: f64,
    pub grad_features: Array2<f64>,
    pub grad_classifier: Array2<f64>,
    /// The relaxed codes tanh(features), `n x dim`.
    pub codes: Array2<f64>,
}

/// Pairwise similarity from class labels: rows with equal labels are
/// similar.
pub fn pair_labels_from_classes(labels: &[usize]) -> Array2<bool> {
    let n = labels.len();
    Array2::from_shape_fn((n, n), |(i, j)| labels[i] == labels[j])
}

pub fn dshsd_loss(
    features: &Array2<f64>,
    similar: &Array2<bool>,
    labels: &[usize],
    classifier: &Array2<f64>,
    cfg: &DshsdConfig,
) -> Result<DshsdOutput> {
    let (n, d) = features.dim();
    if n == 0 || d == 0 {
        return Err(Error::ShapeMismatch("empty feature matrix".into()));
    }
    if similar.dim() != (n, n) {
        return Err(Error::ShapeMismatch(format!(
            "similarity matrix {:?} for batch of {n}",
            similar.dim()
        )));
    }
    for i in 0..n {
        for j in (i + 1)..n {
            if similar[(i, j)] != similar[(j, i)] {
                return Err(Error::ShapeMismatch(format!(
                    "similarity matrix is not symmetric at ({i},{j})"
                )));
            }
        }
    }
    if labels.len() != n {
        return Err(Error::ShapeMismatch(format!(
            "{n} feature rows but {} labels",
            labels.len()
        )));
    }
    if classifier.ncols() != d {
        return Err(Error::DimMismatch {
            expected: d,
            got: classifier.ncols(),
        });
    }

    let codes = features.mapv(f64::tanh);

    // Classification over the codes.
    let logits = codes.dot(&classifier.t());
    let (classification, g_logits) = softmax_cross_entropy(&logits, labels)?;
    let grad_classifier = g_logits.t().dot(&codes);
    let mut grad_codes = g_logits.dot(classifier);

    // Contrastive over unordered pairs.
    let pairs = n * (n - 1) / 2;
    let mut contrastive = 0.0;
    if pairs > 0 {
        let w = cfg.alpha * 2.0 / pairs as f64;
        for i in 0..n {
            for j in (i + 1)..n {
                let mut dsq = 0.0;
                for t in 0..d {
                    let r = codes[(i, t)] - codes[(j, t)];
                    dsq += r * r;
                }
                if similar[(i, j)] {
                    contrastive += dsq;
                    for t in 0..d {
                        let r = codes[(i, t)] - codes[(j, t)];
                        grad_codes[(i, t)] += w * r;
                        grad_codes[(j, t)] -= w * r;
                    }
                } else if dsq < cfg.margin {
                    contrastive += cfg.margin - dsq;
                    for t in 0..d {
                        let r = codes[(i, t)] - codes[(j, t)];
                        grad_codes[(i, t)] -= w * r;
                        grad_codes[(j, t)] += w * r;
                    }
                }
            }
        }
        contrastive /= pairs as f64;
    }

    // Through tanh: d(code)/d(feature) = 1 - code^2.
    let grad_features = &grad_codes * &codes.mapv(|a| 1.0 - a * a);

    Ok(DshsdOutput {
        loss: classification + cfg.alpha * contrastive,
        classification,
        contrastive,
        grad_features,
        grad_classifier,
        codes,
    })
}
