//! A miniature end-to-end training loop for the loss kernels.
//!
//! Two peer networks can be trained in isolation (baseline), coupled by
//! logit distillation (dml), or coupled by distillation plus an embedding
//! alignment term (udml). A fourth mode trains a single network under the
//! hashing loss (dshsd). The point is not model quality; it is to drive
//! every loss end to end through parameter updates with reproducible
//! arithmetic, then measure retrieval quality against an exact index.

mod data;
mod embedder;
mod sgd;

pub use data::{generate, LabeledSet, SyntheticConfig, SyntheticDataset};
pub use embedder::{DenseLayer, EmbedderGrads, ForwardCache, ToyEmbedder};
pub use sgd::SgdMomentum;

use ndarray::Array2;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use std::path::Path;

use crate::error::{Error, Result};
use crate::flat::FlatIndex;
use crate::index::VectorIndex;
use crate::losses::arcmargin::{arcmargin_forward, ArcMarginHead};
use crate::losses::distill::{dml_loss, feature_loss};
use crate::losses::dshsd::{dshsd_loss, pair_labels_from_classes, DshsdConfig};
use crate::losses::{udml_total, GradSet, LossBundle};
use crate::metrics::binarize;
use crate::persist::{
    body_reader, expect_consumed, open_body, verify_crc, Writer, CHECKPOINT_MAGIC,
};
use crate::types::{EmbeddingVector, GalleryRecord, MetricKind, Payload};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TrainMode {
    /// Two independent networks under the margin loss alone.
    Baseline,
    /// Margin loss plus symmetric logit distillation.
    Dml,
    /// Margin loss, logit distillation, and embedding alignment.
    Udml,
    /// One network under the hashing loss.
    Dshsd,
}

impl TrainMode {
    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "baseline" => Ok(Self::Baseline),
            "dml" => Ok(Self::Dml),
            "udml" => Ok(Self::Udml),
            "dshsd" => Ok(Self::Dshsd),
            _ => Err(Error::InvalidParam(format!(
                "unknown training mode {s:?} (baseline|dml|udml|dshsd)"
            ))),
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Self::Baseline => "baseline",
            Self::Dml => "dml",
            Self::Udml => "udml",
            Self::Dshsd => "dshsd",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LrSchedule {
    Constant,
    /// lr * 0.5 * (1 + cos(pi * epoch / epochs)).
    Cosine,
}

impl LrSchedule {
    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "constant" => Ok(Self::Constant),
            "cosine" => Ok(Self::Cosine),
            _ => Err(Error::InvalidParam(format!(
                "unknown lr schedule {s:?} (constant|cosine)"
            ))),
        }
    }

    fn at(self, base: f64, epoch: usize, epochs: usize) -> f64 {
        match self {
            Self::Constant => base,
            Self::Cosine => {
                base * 0.5 * (1.0 + (std::f64::consts::PI * epoch as f64 / epochs as f64).cos())
            }
        }
    }
}

#[derive(Debug, Clone)]
pub struct TrainConfig {
    pub mode: TrainMode,
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub momentum: f64,
    pub schedule: LrSchedule,
    pub hidden_dim: Option<usize>,
    pub embed_dim: usize,
    /// Margin-head scale and additive margin.
    pub scale: f64,
    pub margin: f64,
    /// Hashing loss: contrastive weight and pair margin (None picks
    /// 2 * embed_dim).
    pub alpha: f64,
    pub hash_margin: Option<f64>,
    /// Batch shuffling stream.
    pub seed: u64,
    /// Independent init streams for the two networks; swapping them
    /// swaps which network becomes the student bitwise.
    pub net_seeds: [u64; 2],
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            mode: TrainMode::Baseline,
            epochs: 10,
            // Production-scale recipes run batch 2048 at lr 0.1; both are
            // scaled down roughly in proportion so synthetic sets of a few
            // hundred rows still get several steps per epoch.
            batch_size: 128,
            lr: 0.01,
            momentum: 0.9,
            schedule: LrSchedule::Cosine,
            hidden_dim: None,
            embed_dim: 64,
            scale: crate::losses::arcmargin::DEFAULT_SCALE,
            margin: crate::losses::arcmargin::DEFAULT_MARGIN,
            alpha: crate::losses::dshsd::DEFAULT_ALPHA,
            hash_margin: None,
            seed: 0,
            net_seeds: [1, 2],
        }
    }
}

/// Per-epoch means of each loss component; unused components stay zero.
#[derive(Debug, Clone, Copy)]
pub struct EpochStats {
    pub epoch: usize,
    pub total: f64,
    pub arc: f64,
    pub dml: f64,
    pub feature: f64,
    pub classification: f64,
    pub contrastive: f64,
}

#[derive(Debug)]
pub struct TrainOutcome {
    pub stats: Vec<EpochStats>,
    pub student: ToyEmbedder,
    pub teacher: Option<ToyEmbedder>,
    pub head: Option<ArcMarginHead>,
    pub teacher_head: Option<ArcMarginHead>,
    /// Linear classifier of the hashing mode, `classes x embed_dim`.
    pub classifier: Option<Array2<f64>>,
}

struct Net {
    embedder: ToyEmbedder,
    head: ArcMarginHead,
    opt: SgdMomentum,
}

impl Net {
    fn build(in_dim: usize, classes: usize, cfg: &TrainConfig, seed: u64) -> Result<Self> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let embedder = ToyEmbedder::new(in_dim, cfg.hidden_dim, cfg.embed_dim, &mut rng)?;
        let head = ArcMarginHead::random(classes, cfg.embed_dim, cfg.scale, cfg.margin, &mut rng)?;
        let opt = SgdMomentum::new(cfg.lr, cfg.momentum)?;
        Ok(Self {
            embedder,
            head,
            opt,
        })
    }

    /// Weight slots 0..layers, bias slots 0..layers, head at slot
    /// `layers` in matrix space.
    fn apply(&mut self, grads: &EmbedderGrads, head_grad: &Array2<f64>) {
        let n = self.embedder.layers().len();
        for (i, layer) in self.embedder.layers_mut().iter_mut().enumerate() {
            self.opt.step2(i, &mut layer.weight, &grads.weights[i]);
            self.opt.step1(i, &mut layer.bias, &grads.biases[i]);
        }
        self.opt.step2(n, self.head.weight_mut(), head_grad);
    }
}

fn batch_of(set: &LabeledSet, idx: &[usize]) -> (Array2<f64>, Vec<usize>) {
    let features = Array2::from_shape_fn((idx.len(), set.dim()), |(r, c)| {
        set.features[(idx[r], c)]
    });
    let labels = idx.iter().map(|&i| set.labels[i]).collect();
    (features, labels)
}

fn check_finite(value: f64, epoch: usize) -> Result<()> {
    if !value.is_finite() {
        return Err(Error::Diverged(format!(
            "non-finite loss at epoch {epoch}; lower the learning rate"
        )));
    }
    Ok(())
}

pub fn train(set: &LabeledSet, classes: usize, cfg: &TrainConfig) -> Result<TrainOutcome> {
    if set.is_empty() {
        return Err(Error::ShapeMismatch("empty training set".into()));
    }
    if classes == 0 {
        return Err(Error::InvalidParam("classes must be positive".into()));
    }
    for &l in &set.labels {
        if l >= classes {
            return Err(Error::BadLabel { label: l, classes });
        }
    }
    if cfg.epochs == 0 || cfg.batch_size == 0 {
        return Err(Error::InvalidParam(
            "epochs and batch_size must be positive".into(),
        ));
    }

    match cfg.mode {
        TrainMode::Dshsd => train_dshsd(set, classes, cfg),
        _ => train_margin(set, classes, cfg),
    }
}

fn train_margin(set: &LabeledSet, classes: usize, cfg: &TrainConfig) -> Result<TrainOutcome> {
    let paired = cfg.mode != TrainMode::Baseline;
    let mut student = Net::build(set.dim(), classes, cfg, cfg.net_seeds[0])?;
    let mut teacher = if paired || cfg.mode == TrainMode::Baseline {
        // The baseline keeps a second independent network too, so
        // baseline-vs-coupled comparisons hold everything else fixed.
        Some(Net::build(set.dim(), classes, cfg, cfg.net_seeds[1])?)
    } else {
        None
    };

    let mut shuffle_rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut order: Vec<usize> = (0..set.len()).collect();
    let mut stats = Vec::with_capacity(cfg.epochs);

    for epoch in 0..cfg.epochs {
        let lr = cfg.schedule.at(cfg.lr, epoch, cfg.epochs);
        student.opt.set_lr(lr);
        if let Some(t) = teacher.as_mut() {
            t.opt.set_lr(lr);
        }
        order.shuffle(&mut shuffle_rng);

        let (mut sum_total, mut sum_arc, mut sum_dml, mut sum_feat) = (0.0, 0.0, 0.0, 0.0);
        for chunk in order.chunks(cfg.batch_size) {
            let (x, labels) = batch_of(set, chunk);
            let bs = chunk.len() as f64;

            let (emb_s, cache_s) = student.embedder.forward(&x)?;
            let arc_s = arcmargin_forward(&emb_s, &labels, &student.head)?;

            match cfg.mode {
                TrainMode::Baseline => {
                    let t = teacher.as_mut().unwrap();
                    let (emb_t, cache_t) = t.embedder.forward(&x)?;
                    let arc_t = arcmargin_forward(&emb_t, &labels, &t.head)?;
                    let total = arc_s.loss + arc_t.loss;
                    check_finite(total, epoch)?;
                    sum_total += total * bs;
                    sum_arc += total * bs;
                    let gs = student.embedder.backward(&cache_s, &arc_s.grad_features);
                    student.apply(&gs, &arc_s.grad_weights);
                    let gt = t.embedder.backward(&cache_t, &arc_t.grad_features);
                    t.apply(&gt, &arc_t.grad_weights);
                }
                TrainMode::Dml | TrainMode::Udml => {
                    let t = teacher.as_mut().unwrap();
                    let (emb_t, cache_t) = t.embedder.forward(&x)?;
                    let arc_t = arcmargin_forward(&emb_t, &labels, &t.head)?;
                    let dml = dml_loss(&arc_s.logits, &arc_t.logits)?;
                    let (d_fs, d_ws) = arc_s.backward_logits(&dml.grad_student)?;
                    let (d_ft, d_wt) = arc_t.backward_logits(&dml.grad_teacher)?;
                    let dml_bundle = LossBundle {
                        value: dml.loss,
                        grads: GradSet {
                            student_features: Some(d_fs),
                            student_weights: Some(d_ws),
                            teacher_features: Some(d_ft),
                            teacher_weights: Some(d_wt),
                        },
                    };
                    let feat_bundle = if cfg.mode == TrainMode::Udml {
                        let f = feature_loss(&emb_s, &emb_t)?;
                        sum_feat += f.loss * bs;
                        f.bundle()
                    } else {
                        LossBundle {
                            value: 0.0,
                            grads: GradSet::default(),
                        }
                    };
                    let bundle = udml_total(
                        &arc_s.bundle(false),
                        &arc_t.bundle(true),
                        &dml_bundle,
                        &feat_bundle,
                    );
                    check_finite(bundle.value, epoch)?;
                    sum_total += bundle.value * bs;
                    sum_arc += (arc_s.loss + arc_t.loss) * bs;
                    sum_dml += dml.loss * bs;

                    let g = bundle.grads;
                    let gs = student
                        .embedder
                        .backward(&cache_s, g.student_features.as_ref().unwrap());
                    student.apply(&gs, g.student_weights.as_ref().unwrap());
                    let gt = t
                        .embedder
                        .backward(&cache_t, g.teacher_features.as_ref().unwrap());
                    t.apply(&gt, g.teacher_weights.as_ref().unwrap());
                }
                TrainMode::Dshsd => unreachable!(),
            }
        }

        let n = set.len() as f64;
        stats.push(EpochStats {
            epoch,
            total: sum_total / n,
            arc: sum_arc / n,
            dml: sum_dml / n,
            feature: sum_feat / n,
            classification: 0.0,
            contrastive: 0.0,
        });
    }

    let (teacher_emb, teacher_head) = match teacher {
        Some(t) => (Some(t.embedder), Some(t.head)),
        None => (None, None),
    };
    Ok(TrainOutcome {
        stats,
        student: student.embedder,
        teacher: teacher_emb,
        head: Some(student.head),
        teacher_head,
        classifier: None,
    })
}

fn train_dshsd(set: &LabeledSet, classes: usize, cfg: &TrainConfig) -> Result<TrainOutcome> {
    let loss_cfg = match cfg.hash_margin {
        Some(m) => DshsdConfig::new(cfg.alpha, m)?,
        None => DshsdConfig::new(cfg.alpha, 2.0 * cfg.embed_dim as f64)?,
    };
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.net_seeds[0]);
    let mut embedder = ToyEmbedder::new(set.dim(), cfg.hidden_dim, cfg.embed_dim, &mut rng)?;
    let sd = 1.0 / (cfg.embed_dim as f64).sqrt();
    let mut classifier = Array2::from_shape_fn((classes, cfg.embed_dim), |_| {
        let z: f64 = StandardNormal.sample(&mut rng);
        z * sd
    });
    let mut opt = SgdMomentum::new(cfg.lr, cfg.momentum)?;
    let classifier_slot = embedder.layers().len();

    let mut shuffle_rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut order: Vec<usize> = (0..set.len()).collect();
    let mut stats = Vec::with_capacity(cfg.epochs);

    for epoch in 0..cfg.epochs {
        opt.set_lr(cfg.schedule.at(cfg.lr, epoch, cfg.epochs));
        order.shuffle(&mut shuffle_rng);

        let (mut sum_total, mut sum_cls, mut sum_con) = (0.0, 0.0, 0.0);
        for chunk in order.chunks(cfg.batch_size) {
            let (x, labels) = batch_of(set, chunk);
            let bs = chunk.len() as f64;
            let (emb, cache) = embedder.forward(&x)?;
            let similar = pair_labels_from_classes(&labels);
            let out = dshsd_loss(&emb, &similar, &labels, &classifier, &loss_cfg)?;
            check_finite(out.loss, epoch)?;
            sum_total += out.loss * bs;
            sum_cls += out.classification * bs;
            sum_con += out.contrastive * bs;

            let grads = embedder.backward(&cache, &out.grad_features);
            for (i, layer) in embedder.layers_mut().iter_mut().enumerate() {
                opt.step2(i, &mut layer.weight, &grads.weights[i]);
                opt.step1(i, &mut layer.bias, &grads.biases[i]);
            }
            opt.step2(classifier_slot, &mut classifier, &out.grad_classifier);
        }

        let n = set.len() as f64;
        stats.push(EpochStats {
            epoch,
            total: sum_total / n,
            arc: 0.0,
            dml: 0.0,
            feature: 0.0,
            classification: sum_cls / n,
            contrastive: sum_con / n,
        });
    }

    Ok(TrainOutcome {
        stats,
        student: embedder,
        teacher: None,
        head: None,
        teacher_head: None,
        classifier: Some(classifier),
    })
}

/// Relaxed hashing codes for evaluation: tanh applied elementwise.
pub fn tanh_codes(emb: &Array2<f64>) -> Array2<f64> {
    emb.mapv(f64::tanh)
}

/// Labeled retrieval quality through an exact index. Embeddings are cast
/// to f32 rows; with a Hamming metric each row is sign-binarized first
/// (requiring the embedding width to be a multiple of 8). Returns one
/// recall value per requested k: the fraction of queries whose top-k
/// neighbors contain the query's class.
pub fn recall_at(
    gallery: &Array2<f64>,
    gallery_labels: &[usize],
    queries: &Array2<f64>,
    query_labels: &[usize],
    metric: MetricKind,
    ks: &[usize],
) -> Result<Vec<f64>> {
    if gallery.nrows() != gallery_labels.len() || queries.nrows() != query_labels.len() {
        return Err(Error::ShapeMismatch(
            "label count does not match row count".into(),
        ));
    }
    if gallery.ncols() != queries.ncols() {
        return Err(Error::DimMismatch {
            expected: gallery.ncols(),
            got: queries.ncols(),
        });
    }
    if gallery.nrows() == 0 || queries.nrows() == 0 || ks.is_empty() {
        return Err(Error::ShapeMismatch("empty evaluation input".into()));
    }
    let kmax = *ks.iter().max().unwrap();
    if ks.contains(&0) {
        return Err(Error::BadK);
    }

    let to_payload = |row: ndarray::ArrayView1<f64>| -> Result<Payload> {
        let v = EmbeddingVector::new(row.iter().map(|&x| x as f32).collect())?;
        Ok(match metric.payload_kind() {
            crate::types::PayloadKind::Binary => Payload::Binary(binarize(&v)?),
            crate::types::PayloadKind::Float => Payload::Float(v),
        })
    };

    let dim = gallery.ncols();
    let mut index = FlatIndex::new(metric, dim)?;
    let records = gallery
        .rows()
        .into_iter()
        .zip(gallery_labels)
        .enumerate()
        .map(|(i, (row, &label))| {
            GalleryRecord::new(i as u64, format!("class-{label}"), to_payload(row)?)
        })
        .collect::<Result<Vec<_>>>()?;
    index.add(&records)?;

    let mut hits = vec![0usize; ks.len()];
    for (row, &label) in queries.rows().into_iter().zip(query_labels) {
        let want = format!("class-{label}");
        let found = index.search(&to_payload(row)?, kmax.min(index.len()))?;
        for (ki, &k) in ks.iter().enumerate() {
            if found.iter().take(k).any(|r| r.label == want) {
                hits[ki] += 1;
            }
        }
    }
    Ok(hits
        .iter()
        .map(|&h| h as f64 / queries.nrows() as f64)
        .collect())
}

/// One CSV line per epoch; the column set depends on the mode.
pub fn stats_csv(mode: TrainMode, stats: &[EpochStats]) -> String {
    let mut out = String::new();
    match mode {
        TrainMode::Baseline => {
            out.push_str("epoch,arc,total\n");
            for s in stats {
                out.push_str(&format!("{},{:.6},{:.6}\n", s.epoch, s.arc, s.total));
            }
        }
        TrainMode::Dml => {
            out.push_str("epoch,arc,dml,total\n");
            for s in stats {
                out.push_str(&format!(
                    "{},{:.6},{:.6},{:.6}\n",
                    s.epoch, s.arc, s.dml, s.total
                ));
            }
        }
        TrainMode::Udml => {
            out.push_str("epoch,arc,dml,feature,total\n");
            for s in stats {
                out.push_str(&format!(
                    "{},{:.6},{:.6},{:.6},{:.6}\n",
                    s.epoch, s.arc, s.dml, s.feature, s.total
                ));
            }
        }
        TrainMode::Dshsd => {
            out.push_str("epoch,classification,contrastive,total\n");
            for s in stats {
                out.push_str(&format!(
                    "{},{:.6},{:.6},{:.6}\n",
                    s.epoch, s.classification, s.contrastive, s.total
                ));
            }
        }
    }
    out
}

/// Save embedder parameters: layer shapes, weights, biases, checksummed.
pub fn save_checkpoint(path: &Path, embedders: &[&ToyEmbedder]) -> Result<()> {
    if embedders.len() > u8::MAX as usize {
        return Err(Error::InvalidParam("too many embedders".into()));
    }
    let mut w = Writer::new(CHECKPOINT_MAGIC);
    w.u8(embedders.len() as u8);
    for e in embedders {
        w.u8(e.layers().len() as u8);
        for layer in e.layers() {
            let (out, inp) = layer.weight.dim();
            w.u32(out as u32);
            w.u32(inp as u32);
            w.f64s(&layer.weight.iter().copied().collect::<Vec<_>>());
            w.f64s(&layer.bias.iter().copied().collect::<Vec<_>>());
        }
    }
    w.finish(path)
}

pub fn load_checkpoint(path: &Path) -> Result<Vec<ToyEmbedder>> {
    let data = open_body(path, CHECKPOINT_MAGIC)?;
    let mut r = body_reader(&data);
    let count = r.u8()? as usize;
    let mut embedders = Vec::with_capacity(count);
    for _ in 0..count {
        let layers = r.u8()? as usize;
        let mut built = Vec::with_capacity(layers);
        for _ in 0..layers {
            let out = r.u32()? as usize;
            let inp = r.u32()? as usize;
            let weight = Array2::from_shape_vec((out, inp), r.f64s(out * inp)?)
                .map_err(|e| Error::BadHeader(e.to_string()))?;
            let bias = ndarray::Array1::from_vec(r.f64s(out)?);
            built.push(DenseLayer::from_parts(weight, bias)?);
        }
        embedders.push(ToyEmbedder::from_layers(built)?);
    }
    expect_consumed(&r)?;
    verify_crc(&data)?;
    Ok(embedders)
}
