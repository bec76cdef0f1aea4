//! Mutual-distillation losses between two peer networks.
//!
//! `dml_loss` is the symmetric KL divergence between the softmax
//! distributions of two logit matrices, averaged over the batch:
//! (KL(p||q) + KL(q||p)) / 2. Both sides receive gradients. When the two
//! logit matrices are bitwise identical the loss and every gradient entry
//! are exactly 0.0, not merely small.
//!
//! `feature_loss` is the mean squared error between two embedding
//! matrices, normalized by the total element count.

use ndarray::{Array1, Array2};

use crate::error::{Error, Result};
use super::softmax::log_softmax_rows;
use super::{GradSet, LossBundle};

#[derive(Debug, Clone)]
pub struct DmlOutput {
    pub loss: f64,
    pub grad_student: Array2<f64>,
    pub grad_teacher: Array2<f64>,
}

pub fn dml_loss(student_logits: &Array2<f64>, teacher_logits: &Array2<f64>) -> Result<DmlOutput> {
    if student_logits.dim() != teacher_logits.dim() {
        return Err(Error::ShapeMismatch(format!(
            "student logits {:?} vs teacher logits {:?}",
            student_logits.dim(),
            teacher_logits.dim()
        )));
    }
    let (n, c) = student_logits.dim();
    if n == 0 || c == 0 {
        return Err(Error::ShapeMismatch("empty logit matrix".into()));
    }

    let lp = log_softmax_rows(student_logits);
    let lq = log_softmax_rows(teacher_logits);
    let p = lp.mapv(f64::exp);
    let q = lq.mapv(f64::exp);
    // ln(p/q) elementwise; exactly zero where the inputs agree bitwise.
    let diff = &lp - &lq;

    let mut kl_pq = Array1::zeros(n);
    let mut kl_qp = Array1::zeros(n);
    for i in 0..n {
        let mut f = 0.0;
        let mut r = 0.0;
        for j in 0..c {
            f += p[(i, j)] * diff[(i, j)];
            r += q[(i, j)] * -diff[(i, j)];
        }
        kl_pq[i] = f;
        kl_qp[i] = r;
    }
    let nf = n as f64;
    let loss = (kl_pq.iter().sum::<f64>() / nf + kl_qp.iter().sum::<f64>() / nf) / 2.0;

    let denom = 2.0 * nf;
    let mut grad_student = Array2::zeros((n, c));
    let mut grad_teacher = Array2::zeros((n, c));
    for i in 0..n {
        for j in 0..c {
            let (pv, qv, dv) = (p[(i, j)], q[(i, j)], diff[(i, j)]);
            grad_student[(i, j)] = (pv * (dv - kl_pq[i]) + (pv - qv)) / denom;
            grad_teacher[(i, j)] = (qv * (-dv - kl_qp[i]) + (qv - pv)) / denom;
        }
    }

    Ok(DmlOutput {
        loss,
        grad_student,
        grad_teacher,
    })
}

#[derive(Debug, Clone)]
pub struct FeatureLossOutput {
    pub loss: f64,
    pub grad_student: Array2<f64>,
    pub grad_teacher: Array2<f64>,
}

/// Mean squared error over all `n * d` entries of two embedding matrices.
pub fn feature_loss(student: &Array2<f64>, teacher: &Array2<f64>) -> Result<FeatureLossOutput> {
    if student.dim() != teacher.dim() {
        return Err(Error::ShapeMismatch(format!(
            "student features {:?} vs teacher features {:?}",
            student.dim(),
            teacher.dim()
        )));
    }
    let (n, d) = student.dim();
    if n == 0 || d == 0 {
        return Err(Error::ShapeMismatch("empty feature matrix".into()));
    }
    let count = (n * d) as f64;
    let resid = student - teacher;
    let mut loss = 0.0;
    for &r in resid.iter() {
        loss += r * r;
    }
    loss /= count;
    let grad_student = resid.mapv(|r| 2.0 * r / count);
    let grad_teacher = grad_student.mapv(|g| -g);
    Ok(FeatureLossOutput {
        loss,
        grad_student,
        grad_teacher,
    })
}

impl FeatureLossOutput {
    pub fn bundle(&self) -> LossBundle {
        LossBundle {
            value: self.loss,
            grads: GradSet {
                student_features: Some(self.grad_student.clone()),
                teacher_features: Some(self.grad_teacher.clone()),
                ..GradSet::default()
            },
        }
    }
}
