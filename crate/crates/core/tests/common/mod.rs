//! Shared fixtures and oracles for the integration suites.
//!
//! The search oracle reimplements the documented distance contract with
//! straight-line code and a full sort, independently of the heaps,
//! chunked scans, and probing logic inside the indices. The gradient
//! helpers implement the acceptance rule for comparing analytic
//! derivatives against central finite differences.

#![allow(dead_code)]

use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use shitu_core::losses::arcmargin::{arcmargin_forward, ArcMarginHead};
use shitu_core::losses::distill::{dml_loss, feature_loss};
use shitu_core::losses::dshsd::{dshsd_loss, pair_labels_from_classes, DshsdConfig};
use shitu_core::losses::{udml_total, GradSet};
use shitu_core::metrics::binarize;
use shitu_core::{EmbeddingVector, GalleryRecord, MetricKind, Payload};

pub fn gauss_vec(dim: usize, rng: &mut ChaCha8Rng) -> Vec<f32> {
    (0..dim)
        .map(|_| {
            let z: f64 = StandardNormal.sample(rng);
            z as f32
        })
        .collect()
}

pub fn float_records(n: usize, dim: usize, seed: u64) -> Vec<GalleryRecord> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n)
        .map(|i| {
            GalleryRecord::new(
                i as u64,
                format!("item-{i}"),
                Payload::Float(EmbeddingVector::new(gauss_vec(dim, &mut rng)).unwrap()),
            )
            .unwrap()
        })
        .collect()
}

pub fn binary_records(n: usize, dim: usize, seed: u64) -> Vec<GalleryRecord> {
    float_records(n, dim, seed)
        .into_iter()
        .map(|r| {
            let Payload::Float(v) = &r.payload else {
                unreachable!()
            };
            GalleryRecord::new(r.id, r.label, Payload::Binary(binarize(v).unwrap())).unwrap()
        })
        .collect()
}

fn normalized_copy(values: &[f32]) -> Vec<f32> {
    let norm = values.iter().map(|&v| v as f64 * v as f64).sum::<f64>().sqrt();
    values.iter().map(|&v| (v as f64 / norm) as f32).collect()
}

fn oracle_distance(metric: MetricKind, a: &Payload, q: &Payload) -> f64 {
    match (metric, a, q) {
        (MetricKind::L2, Payload::Float(a), Payload::Float(q)) => {
            let mut acc = 0.0f64;
            for (x, y) in a.values().iter().zip(q.values()) {
                let d = *x as f64 - *y as f64;
                acc += d * d;
            }
            acc.sqrt()
        }
        (MetricKind::InnerProduct, Payload::Float(a), Payload::Float(q)) => {
            let mut acc = 0.0f64;
            for (x, y) in a.values().iter().zip(q.values()) {
                acc += *x as f64 * *y as f64;
            }
            if -acc == 0.0 {
                0.0
            } else {
                -acc
            }
        }
        (MetricKind::Cosine, Payload::Float(a), Payload::Float(q)) => {
            // The engine stores and queries normalized f32 copies; the
            // oracle performs the identical rounding so exact ties and
            // their id ordering match.
            let an = normalized_copy(a.values());
            let qn = normalized_copy(q.values());
            let mut acc = 0.0f64;
            for (x, y) in an.iter().zip(&qn) {
                acc += *x as f64 * *y as f64;
            }
            (1.0 - acc).max(0.0)
        }
        (MetricKind::Hamming, Payload::Binary(a), Payload::Binary(q)) => {
            let mut count = 0u64;
            for i in 0..a.nbits() {
                if a.bit(i) != q.bit(i) {
                    count += 1;
                }
            }
            count as f64
        }
        _ => panic!("payload does not fit metric"),
    }
}

/// Exhaustive search by full sort: every distance, ordered by the
/// reported f32 distance with ids breaking ties, truncated to k.
pub fn oracle_search(
    records: &[GalleryRecord],
    metric: MetricKind,
    query: &Payload,
    k: usize,
) -> Vec<(u64, f32)> {
    let mut all: Vec<(u64, f32)> = records
        .iter()
        .map(|r| (r.id, oracle_distance(metric, &r.payload, query) as f32))
        .collect();
    all.sort_by(|a, b| a.1.total_cmp(&b.1).then(a.0.cmp(&b.0)));
    all.truncate(k);
    all
}

/// Comparison rule for one gradient entry: agreement within 1e-8
/// absolute (the noise floor of central differences at this step on an
/// O(1) loss) or within 1e-4 relative.
pub fn grad_close(analytic: f64, fd: f64) -> bool {
    let abs = (analytic - fd).abs();
    if abs < 1e-8 {
        return true;
    }
    abs / analytic.abs().max(fd.abs()) < 1e-4
}

pub const FD_STEP: f64 = 1e-4;

/// Central-difference gradient of `eval` with respect to every entry of
/// `m`, at step `FD_STEP`.
pub fn fd_matrix(m: &mut Array2<f64>, mut eval: impl FnMut(&Array2<f64>) -> f64) -> Array2<f64> {
    let dim = m.dim();
    let mut out = Array2::zeros(dim);
    for i in 0..dim.0 {
        for j in 0..dim.1 {
            let orig = m[(i, j)];
            m[(i, j)] = orig + FD_STEP;
            let up = eval(m);
            m[(i, j)] = orig - FD_STEP;
            let down = eval(m);
            m[(i, j)] = orig;
            out[(i, j)] = (up - down) / (2.0 * FD_STEP);
        }
    }
    out
}

/// Assert every entry of `analytic` against `fd` under [`grad_close`];
/// returns the worst relative error over entries above the noise floor.
pub fn compare_grads(analytic: &Array2<f64>, fd: &Array2<f64>, what: &str) -> f64 {
    let mut worst = 0.0f64;
    for (idx, (&a, &f)) in analytic.iter().zip(fd.iter()).enumerate() {
        assert!(
            grad_close(a, f),
            "{what} entry {idx}: analytic {a} vs fd {f}"
        );
        if (a - f).abs() >= 1e-8 {
            worst = worst.max((a - f).abs() / a.abs().max(f.abs()));
        }
    }
    worst
}

pub fn gauss_matrix(rows: usize, cols: usize, rng: &mut ChaCha8Rng) -> Array2<f64> {
    Array2::from_shape_fn((rows, cols), |_| StandardNormal.sample(rng))
}

pub fn random_labels(n: usize, classes: usize, rng: &mut ChaCha8Rng) -> Vec<usize> {
    (0..n).map(|_| rng.random_range(0..classes)).collect()
}

/// The mutual-learning total as a plain function of its four inputs:
/// both margin losses, the logit-distillation term, and the embedding
/// alignment term.
pub fn udml_value(
    fs: &Array2<f64>,
    ft: &Array2<f64>,
    ws: &Array2<f64>,
    wt: &Array2<f64>,
    labels: &[usize],
    scale: f64,
    margin: f64,
) -> f64 {
    let hs = ArcMarginHead::new(ws.clone(), scale, margin).unwrap();
    let ht = ArcMarginHead::new(wt.clone(), scale, margin).unwrap();
    let arc_s = arcmargin_forward(fs, labels, &hs).unwrap();
    let arc_t = arcmargin_forward(ft, labels, &ht).unwrap();
    let dml = dml_loss(&arc_s.logits, &arc_t.logits).unwrap();
    let feat = feature_loss(fs, ft).unwrap();
    arc_s.loss + arc_t.loss + dml.loss + feat.loss
}

/// Twenty randomized finite-difference instances for the margin loss;
/// panics on any entry outside the rule, returns the worst relative
/// error seen.
pub fn arcmargin_fd_sweep(instances: u64) -> f64 {
    let mut worst = 0.0f64;
    for seed in 0..instances {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let n = rng.random_range(2..=6);
        let d = rng.random_range(2..=8);
        let c = rng.random_range(2..=6);
        let scale = [10.0, 30.0, 64.0][rng.random_range(0..3)];
        let margin = [0.1, 0.2, 0.35][rng.random_range(0..3)];

        let mut features = gauss_matrix(n, d, &mut rng);
        let mut weights = gauss_matrix(c, d, &mut rng);
        let labels = random_labels(n, c, &mut rng);

        let head = ArcMarginHead::new(weights.clone(), scale, margin).unwrap();
        let out = arcmargin_forward(&features, &labels, &head).unwrap();

        let w_fixed = weights.clone();
        let fd_f = fd_matrix(&mut features, |f| {
            let h = ArcMarginHead::new(w_fixed.clone(), scale, margin).unwrap();
            arcmargin_forward(f, &labels, &h).unwrap().loss
        });
        worst = worst.max(compare_grads(
            &out.grad_features,
            &fd_f,
            &format!("margin loss seed {seed} features"),
        ));

        let f_fixed = features.clone();
        let fd_w = fd_matrix(&mut weights, |w| {
            let h = ArcMarginHead::new(w.clone(), scale, margin).unwrap();
            arcmargin_forward(&f_fixed, &labels, &h).unwrap().loss
        });
        worst = worst.max(compare_grads(
            &out.grad_weights,
            &fd_w,
            &format!("margin loss seed {seed} weights"),
        ));
    }
    worst
}

pub fn dml_fd_sweep(instances: u64) -> f64 {
    let mut worst = 0.0f64;
    for seed in 0..instances {
        let mut rng = ChaCha8Rng::seed_from_u64(100 + seed);
        let n = rng.random_range(2..=6);
        let c = rng.random_range(2..=8);
        let mut a = gauss_matrix(n, c, &mut rng);
        let mut b = gauss_matrix(n, c, &mut rng);
        let out = dml_loss(&a, &b).unwrap();

        let b_fixed = b.clone();
        let fd_a = fd_matrix(&mut a, |m| dml_loss(m, &b_fixed).unwrap().loss);
        worst = worst.max(compare_grads(
            &out.grad_student,
            &fd_a,
            &format!("distillation seed {seed} student"),
        ));

        let a_fixed = a.clone();
        let fd_b = fd_matrix(&mut b, |m| dml_loss(&a_fixed, m).unwrap().loss);
        worst = worst.max(compare_grads(
            &out.grad_teacher,
            &fd_b,
            &format!("distillation seed {seed} teacher"),
        ));
    }
    worst
}

pub fn feature_fd_sweep(instances: u64) -> f64 {
    let mut worst = 0.0f64;
    for seed in 0..instances {
        let mut rng = ChaCha8Rng::seed_from_u64(200 + seed);
        let n = rng.random_range(2..=6);
        let d = rng.random_range(2..=8);
        let mut s = gauss_matrix(n, d, &mut rng);
        let mut t = gauss_matrix(n, d, &mut rng);
        let out = feature_loss(&s, &t).unwrap();

        let t_fixed = t.clone();
        let fd_s = fd_matrix(&mut s, |m| feature_loss(m, &t_fixed).unwrap().loss);
        worst = worst.max(compare_grads(
            &out.grad_student,
            &fd_s,
            &format!("alignment seed {seed} student"),
        ));

        let s_fixed = s.clone();
        let fd_t = fd_matrix(&mut t, |m| feature_loss(&s_fixed, m).unwrap().loss);
        worst = worst.max(compare_grads(
            &out.grad_teacher,
            &fd_t,
            &format!("alignment seed {seed} teacher"),
        ));
    }
    worst
}

pub fn dshsd_fd_sweep(instances: u64) -> f64 {
    let mut worst = 0.0f64;
    for seed in 0..instances {
        let mut rng = ChaCha8Rng::seed_from_u64(300 + seed);
        let n = rng.random_range(2..=6);
        let d = rng.random_range(2..=8);
        let c = rng.random_range(2..=4);
        let margin = if seed % 2 == 0 { 2.0 * d as f64 } else { 1.0 };
        let cfg = DshsdConfig::new(0.05, margin).unwrap();

        let mut features = gauss_matrix(n, d, &mut rng);
        let mut classifier = gauss_matrix(c, d, &mut rng);
        let labels = random_labels(n, c, &mut rng);
        let similar = pair_labels_from_classes(&labels);

        let out = dshsd_loss(&features, &similar, &labels, &classifier, &cfg).unwrap();

        let w_fixed = classifier.clone();
        let fd_f = fd_matrix(&mut features, |f| {
            dshsd_loss(f, &similar, &labels, &w_fixed, &cfg).unwrap().loss
        });
        worst = worst.max(compare_grads(
            &out.grad_features,
            &fd_f,
            &format!("hashing seed {seed} features"),
        ));

        let f_fixed = features.clone();
        let fd_w = fd_matrix(&mut classifier, |w| {
            dshsd_loss(&f_fixed, &similar, &labels, w, &cfg).unwrap().loss
        });
        worst = worst.max(compare_grads(
            &out.grad_classifier,
            &fd_w,
            &format!("hashing seed {seed} classifier"),
        ));
    }
    worst
}

pub fn udml_fd_sweep(instances: u64) -> f64 {
    let mut worst = 0.0f64;
    for seed in 0..instances {
        let mut rng = ChaCha8Rng::seed_from_u64(400 + seed);
        let n = rng.random_range(2..=5);
        let d = rng.random_range(2..=6);
        let c = rng.random_range(2..=5);
        let (scale, margin) = (30.0, 0.2);

        let mut fs = gauss_matrix(n, d, &mut rng);
        let mut ft = gauss_matrix(n, d, &mut rng);
        let mut ws = gauss_matrix(c, d, &mut rng);
        let mut wt = gauss_matrix(c, d, &mut rng);
        let labels = random_labels(n, c, &mut rng);

        let grads = udml_grads(&fs, &ft, &ws, &wt, &labels, scale, margin);

        let fs_orig = fs.clone();
        let (f2, w1, w2) = (ft.clone(), ws.clone(), wt.clone());
        let fd = fd_matrix(&mut fs, |m| {
            udml_value(m, &f2, &w1, &w2, &labels, scale, margin)
        });
        worst = worst.max(compare_grads(
            grads.student_features.as_ref().unwrap(),
            &fd,
            &format!("mutual total seed {seed} student features"),
        ));

        let (f1, w1, w2) = (fs_orig.clone(), ws.clone(), wt.clone());
        let fd = fd_matrix(&mut ft, |m| {
            udml_value(&f1, m, &w1, &w2, &labels, scale, margin)
        });
        worst = worst.max(compare_grads(
            grads.teacher_features.as_ref().unwrap(),
            &fd,
            &format!("mutual total seed {seed} teacher features"),
        ));

        let (f1, f2, w2) = (fs_orig.clone(), ft.clone(), wt.clone());
        let fd = fd_matrix(&mut ws, |m| {
            udml_value(&f1, &f2, m, &w2, &labels, scale, margin)
        });
        worst = worst.max(compare_grads(
            grads.student_weights.as_ref().unwrap(),
            &fd,
            &format!("mutual total seed {seed} student weights"),
        ));

        let (f1, f2, w1) = (fs_orig, ft.clone(), ws.clone());
        let fd = fd_matrix(&mut wt, |m| {
            udml_value(&f1, &f2, &w1, m, &labels, scale, margin)
        });
        worst = worst.max(compare_grads(
            grads.teacher_weights.as_ref().unwrap(),
            &fd,
            &format!("mutual total seed {seed} teacher weights"),
        ));
    }
    worst
}

/// Analytic gradients of [`udml_value`] through the bundle composition.
pub fn udml_grads(
    fs: &Array2<f64>,
    ft: &Array2<f64>,
    ws: &Array2<f64>,
    wt: &Array2<f64>,
    labels: &[usize],
    scale: f64,
    margin: f64,
) -> GradSet {
    let hs = ArcMarginHead::new(ws.clone(), scale, margin).unwrap();
    let ht = ArcMarginHead::new(wt.clone(), scale, margin).unwrap();
    let arc_s = arcmargin_forward(fs, labels, &hs).unwrap();
    let arc_t = arcmargin_forward(ft, labels, &ht).unwrap();
    let dml = dml_loss(&arc_s.logits, &arc_t.logits).unwrap();
    let (d_fs, d_ws) = arc_s.backward_logits(&dml.grad_student).unwrap();
    let (d_ft, d_wt) = arc_t.backward_logits(&dml.grad_teacher).unwrap();
    let dml_bundle = shitu_core::losses::LossBundle {
        value: dml.loss,
        grads: GradSet {
            student_features: Some(d_fs),
            student_weights: Some(d_ws),
            teacher_features: Some(d_ft),
            teacher_weights: Some(d_wt),
        },
    };
    let feat = feature_loss(fs, ft).unwrap();
    udml_total(
        &arc_s.bundle(false),
        &arc_t.bundle(true),
        &dml_bundle,
        &feat.bundle(),
    )
    .grads
}
