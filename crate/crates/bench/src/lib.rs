//! Shared fixtures for the benchmark targets: deterministic random
//! vectors, labeled records, and ready-made indices.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use shitu_core::{
    metrics::binarize, EmbeddingVector, GalleryRecord, MetricKind, Payload,
};

pub fn random_rows(n: usize, dim: usize, seed: u64) -> Vec<Vec<f32>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n)
        .map(|_| (0..dim).map(|_| rng.random::<f32>() * 2.0 - 1.0).collect())
        .collect()
}

pub fn float_records(rows: &[Vec<f32>]) -> Vec<GalleryRecord> {
    rows.iter()
        .enumerate()
        .map(|(i, r)| {
            GalleryRecord::new(
                i as u64,
                format!("item-{i}"),
                Payload::Float(EmbeddingVector::new(r.clone()).unwrap()),
            )
            .unwrap()
        })
        .collect()
}

pub fn binary_records(rows: &[Vec<f32>]) -> Vec<GalleryRecord> {
    rows.iter()
        .enumerate()
        .map(|(i, r)| {
            let v = EmbeddingVector::new(r.clone()).unwrap();
            GalleryRecord::new(
                i as u64,
                format!("item-{i}"),
                Payload::Binary(binarize(&v).unwrap()),
            )
            .unwrap()
        })
        .collect()
}

pub fn query_payload(row: &[f32], metric: MetricKind) -> Payload {
    let v = EmbeddingVector::new(row.to_vec()).unwrap();
    match metric {
        MetricKind::Hamming => Payload::Binary(binarize(&v).unwrap()),
        _ => Payload::Float(v),
    }
}
