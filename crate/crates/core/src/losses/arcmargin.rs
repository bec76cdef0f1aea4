//! Additive angular margin classification head.
//!
//! Features and class weights are L2-normalized on every forward pass, so
//! logits are cosines of the angles between them. The target-class cosine
//! cos(theta) is replaced by cos(theta + m) while it stays in the range
//! where that is monotone (cos(theta) > cos(pi - m)); past it the penalty
//! falls back to the linear form cos(theta) - m*sin(m). Everything is then
//! scaled by `s` and fed to softmax cross-entropy.

use ndarray::{Array1, Array2};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};
use super::softmax::softmax_cross_entropy;
use super::{GradSet, LossBundle};

pub const DEFAULT_SCALE: f64 = 30.0;
pub const DEFAULT_MARGIN: f64 = 0.2;

/// Cosines are clamped to this magnitude before any trigonometry; the
/// gradient through an active clamp is exactly zero.
const COS_BOUND: f64 = 1.0 - 1e-7;

#[derive(Debug, Clone)]
pub struct ArcMarginHead {
    /// `classes x dim`, stored unnormalized; normalization happens per
    /// forward so gradient updates act on the raw rows.
    weight: Array2<f64>,
    scale: f64,
    margin: f64,
}

impl ArcMarginHead {
    pub fn new(weight: Array2<f64>, scale: f64, margin: f64) -> Result<Self> {
        if !(scale > 0.0) {
            return Err(Error::InvalidParam(format!(
                "scale must be positive, got {scale}"
            )));
        }
        if !(0.0..std::f64::consts::FRAC_PI_2).contains(&margin) {
            return Err(Error::InvalidParam(format!(
                "margin must lie in [0, pi/2), got {margin}"
            )));
        }
        let (classes, dim) = weight.dim();
        if classes == 0 || dim == 0 {
            return Err(Error::ShapeMismatch("empty weight matrix".into()));
        }
        Ok(Self {
            weight,
            scale,
            margin,
        })
    }

    /// Gaussian-initialized head (entries N(0, 1/dim)).
    pub fn random(
        classes: usize,
        dim: usize,
        scale: f64,
        margin: f64,
        rng: &mut ChaCha8Rng,
    ) -> Result<Self> {
        let sd = 1.0 / (dim as f64).sqrt();
        let weight = Array2::from_shape_fn((classes, dim), |_| {
            let z: f64 = StandardNormal.sample(rng);
            z * sd
        });
        Self::new(weight, scale, margin)
    }

    pub fn classes(&self) -> usize {
        self.weight.nrows()
    }

    pub fn dim(&self) -> usize {
        self.weight.ncols()
    }

    pub fn scale(&self) -> f64 {
        self.scale
    }

    pub fn margin(&self) -> f64 {
        self.margin
    }

    pub fn weight(&self) -> &Array2<f64> {
        &self.weight
    }

    pub fn weight_mut(&mut self) -> &mut Array2<f64> {
        &mut self.weight
    }
}

/// Values captured by the forward pass that the vector-Jacobian product
/// needs: normalized copies, norms, the clamp gate and the margin slope.
#[derive(Debug, Clone)]
struct Cache {
    x_hat: Array2<f64>,
    w_hat: Array2<f64>,
    feat_norms: Array1<f64>,
    weight_norms: Array1<f64>,
    /// 1.0 where the raw cosine was strictly inside the clamp bounds.
    gate: Array2<f64>,
    /// d(phi)/d(cos) at the target entry of each row.
    dphi: Array1<f64>,
    labels: Vec<usize>,
    scale: f64,
}

#[derive(Debug, Clone)]
pub struct ArcMarginOutput {
    pub loss: f64,
    /// Scaled post-margin logits, `n x classes`: what softmax consumed.
    pub logits: Array2<f64>,
    /// d(loss)/d(features), same shape as the input features.
    pub grad_features: Array2<f64>,
    /// d(loss)/d(weight), same shape as the head weight.
    pub grad_weights: Array2<f64>,
    cache: Cache,
}

fn normalize_rows(m: &Array2<f64>) -> Result<(Array2<f64>, Array1<f64>)> {
    let mut out = m.clone();
    let mut norms = Array1::zeros(m.nrows());
    for (i, mut row) in out.rows_mut().into_iter().enumerate() {
        let n = row.dot(&row).sqrt();
        if n == 0.0 {
            return Err(Error::ZeroVector);
        }
        row.mapv_inplace(|v| v / n);
        norms[i] = n;
    }
    Ok((out, norms))
}

/// Forward pass with gradients.
pub fn arcmargin_forward(
    features: &Array2<f64>,
    labels: &[usize],
    head: &ArcMarginHead,
) -> Result<ArcMarginOutput> {
    let (n, d) = features.dim();
    if n == 0 {
        return Err(Error::ShapeMismatch("empty batch".into()));
    }
    if d != head.dim() {
        return Err(Error::DimMismatch {
            expected: head.dim(),
            got: d,
        });
    }
    if labels.len() != n {
        return Err(Error::ShapeMismatch(format!(
            "{n} feature rows but {} labels",
            labels.len()
        )));
    }
    let classes = head.classes();
    for &y in labels {
        if y >= classes {
            return Err(Error::BadLabel { label: y, classes });
        }
    }

    let (x_hat, feat_norms) = normalize_rows(features)?;
    let (w_hat, weight_norms) = normalize_rows(&head.weight)?;

    let raw = x_hat.dot(&w_hat.t());
    let gate = raw.mapv(|v| if v > -COS_BOUND && v < COS_BOUND { 1.0 } else { 0.0 });
    let cos = raw.mapv(|v| v.clamp(-COS_BOUND, COS_BOUND));

    let m = head.margin;
    let (cos_m, sin_m) = (m.cos(), m.sin());
    let threshold = -cos_m; // cos(pi - m)
    let fallback_shift = sin_m * m;

    let mut logits = cos.mapv(|v| v * head.scale);
    let mut dphi = Array1::zeros(n);
    for (i, &y) in labels.iter().enumerate() {
        let c = cos[(i, y)];
        let (phi, slope) = if c > threshold {
            let sin_t = (1.0 - c * c).sqrt();
            (c * cos_m - sin_t * sin_m, cos_m + c * sin_m / sin_t)
        } else {
            (c - fallback_shift, 1.0)
        };
        logits[(i, y)] = phi * head.scale;
        dphi[i] = slope;
    }

    let (loss, upstream) = softmax_cross_entropy(&logits, labels)?;

    let cache = Cache {
        x_hat,
        w_hat,
        feat_norms,
        weight_norms,
        gate,
        dphi,
        labels: labels.to_vec(),
        scale: head.scale,
    };
    let (grad_features, grad_weights) = vjp(&cache, &upstream);

    Ok(ArcMarginOutput {
        loss,
        logits,
        grad_features,
        grad_weights,
        cache,
    })
}

/// Vector-Jacobian product through margin, scaling, normalization.
fn vjp(cache: &Cache, upstream: &Array2<f64>) -> (Array2<f64>, Array2<f64>) {
    // Per-logit slope: scale everywhere, times the margin slope at the
    // target column, times the clamp gate.
    let mut h = upstream * &cache.gate * cache.scale;
    for (i, &y) in cache.labels.iter().enumerate() {
        h[(i, y)] *= cache.dphi[i];
    }

    // Through the feature normalization: for unit x and raw u = n * x,
    // d(x)/d(u) = (I - x x^T) / n.
    let gx = h.dot(&cache.w_hat);
    let mut grad_features = gx.clone();
    for (i, mut row) in grad_features.rows_mut().into_iter().enumerate() {
        let x = cache.x_hat.row(i);
        let proj = row.dot(&x);
        for (r, &xv) in row.iter_mut().zip(x.iter()) {
            *r = (*r - proj * xv) / cache.feat_norms[i];
        }
    }

    let gw = h.t().dot(&cache.x_hat);
    let mut grad_weights = gw.clone();
    for (j, mut row) in grad_weights.rows_mut().into_iter().enumerate() {
        let w = cache.w_hat.row(j);
        let proj = row.dot(&w);
        for (r, &wv) in row.iter_mut().zip(w.iter()) {
            *r = (*r - proj * wv) / cache.weight_norms[j];
        }
    }
    (grad_features, grad_weights)
}

impl ArcMarginOutput {
    /// Gradients of an arbitrary scalar with upstream gradient `upstream`
    /// on this head's logits: returns `(d/d features, d/d weight)`.
    /// This lets other losses (e.g. distillation on the logits) reach the
    /// raw inputs through the same margin/normalization chain.
    pub fn backward_logits(
        &self,
        upstream: &Array2<f64>,
    ) -> Result<(Array2<f64>, Array2<f64>)> {
        if upstream.dim() != self.logits.dim() {
            return Err(Error::ShapeMismatch(format!(
                "upstream {:?} vs logits {:?}",
                upstream.dim(),
                self.logits.dim()
            )));
        }
        Ok(vjp(&self.cache, upstream))
    }

    /// Package as a bundle attributed to the student or teacher network.
    pub fn bundle(&self, teacher: bool) -> LossBundle {
        let mut grads = GradSet::default();
        if teacher {
            grads.teacher_features = Some(self.grad_features.clone());
            grads.teacher_weights = Some(self.grad_weights.clone());
        } else {
            grads.student_features = Some(self.grad_features.clone());
            grads.student_weights = Some(self.grad_weights.clone());
        }
        LossBundle {
            value: self.loss,
            grads,
        }
    }
}
