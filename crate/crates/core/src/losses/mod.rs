//! Differentiable loss kernels for metric learning and mutual learning.
//!
//! Every kernel returns its scalar value together with analytic gradients
//! for all inputs; the gradient conventions are checked against central
//! finite differences in the test suite. Composition happens through
//! [`LossBundle`]: per-network gradients are accumulated field by field,
//! never mixed across networks.

pub mod arcmargin;
pub mod distill;
pub mod dshsd;
mod softmax;

pub use softmax::{log_softmax_rows, softmax_cross_entropy, softmax_rows};

use ndarray::Array2;

/// Gradients of one loss term with respect to the inputs it touches.
/// Absent fields mean the term does not depend on that input.
#[derive(Debug, Clone, Default)]
pub struct GradSet {
    pub student_features: Option<Array2<f64>>,
    pub teacher_features: Option<Array2<f64>>,
    pub student_weights: Option<Array2<f64>>,
    pub teacher_weights: Option<Array2<f64>>,
}

fn acc(dst: &mut Option<Array2<f64>>, src: &Option<Array2<f64>>) {
    match (dst.as_mut(), src) {
        (Some(d), Some(s)) => *d += s,
        (None, Some(s)) => *dst = Some(s.clone()),
        _ => {}
    }
}

impl GradSet {
    pub fn accumulate(&mut self, other: &GradSet) {
        acc(&mut self.student_features, &other.student_features);
        acc(&mut self.teacher_features, &other.teacher_features);
        acc(&mut self.student_weights, &other.student_weights);
        acc(&mut self.teacher_weights, &other.teacher_weights);
    }
}

/// A loss value with the gradients that produced it.
#[derive(Debug, Clone)]
pub struct LossBundle {
    pub value: f64,
    pub grads: GradSet,
}

/// Mutual-learning total: both classification losses, the symmetric
/// distillation term and the feature-alignment term. The value is the
/// plain sum and every gradient field is the sum of the terms touching it.
pub fn udml_total(
    arc_student: &LossBundle,
    arc_teacher: &LossBundle,
    dml: &LossBundle,
    feature: &LossBundle,
) -> LossBundle {
    let mut grads = GradSet::default();
    grads.accumulate(&arc_student.grads);
    grads.accumulate(&arc_teacher.grads);
    grads.accumulate(&dml.grads);
    grads.accumulate(&feature.grads);
    LossBundle {
        value: arc_student.value + arc_teacher.value + dml.value + feature.value,
        grads,
    }
}
