//! Embedding retrieval engine: distance kernels, exact and approximate
//! nearest-neighbor indices over labeled galleries, differentiable loss
//! kernels for metric learning and hashing, a toy trainer that drives
//! them end to end, and checksummed binary persistence for all of it.
//!
//! Design invariants the whole crate leans on:
//!
//! * Stored vectors are `f32`; all distance and loss arithmetic
//!   accumulates in `f64`, sequentially, so results are reproducible
//!   bit for bit on one machine regardless of thread count.
//! * Search results are ordered by `(distance, id)` with total float
//!   ordering; every index breaks ties identically.
//! * Every persisted artifact is `magic | version | body | crc32` and
//!   loads verify in that order.

pub mod error;
pub mod types;
pub mod metrics;
pub mod index;
pub mod flat;
pub mod kmeans;
pub mod ivf;
pub mod hnsw;
pub mod gallery;
pub mod persist;
pub mod losses;
pub mod trainer;

pub use error::{Error, Result};
pub use types::{
    BinaryCode, EmbeddingVector, GalleryRecord, MetricKind, Payload, PayloadKind, SearchResult,
};
pub use index::{AnyIndex, IndexKind, VectorIndex};
pub use flat::FlatIndex;
pub use ivf::IvfIndex;
pub use hnsw::{HnswIndex, HnswParams};
pub use gallery::GalleryStore;
pub use persist::{load_index, save_index, FORMAT_VERSION};
