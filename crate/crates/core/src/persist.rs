//! Binary on-disk containers.
//!
//! Every file is `magic(4) | version(u32) | body | crc32(u32)` with
//! little-endian integers. The trailer covers everything before it,
//! magic and version included. Loaders check in a fixed order: magic,
//! version, structural parse (underruns report `Truncated`), then the
//! checksum, so a bumped version reports `VersionMismatch` and a flipped
//! payload byte reports `ChecksumMismatch`.

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::flat::FlatIndex;
use crate::hnsw::{HnswIndex, HnswParams};
use crate::index::{AnyIndex, IndexKind, RowStore, VectorIndex};
use crate::ivf::IvfIndex;
use crate::types::{MetricKind, PayloadKind};

pub const FORMAT_VERSION: u32 = 1;

pub(crate) const GALLERY_MAGIC: [u8; 4] = *b"PPSG";
pub(crate) const INDEX_MAGIC: [u8; 4] = *b"PPSI";
pub(crate) const CHECKPOINT_MAGIC: [u8; 4] = *b"PPCK";

const NO_ENTRY: u32 = u32::MAX;

pub(crate) fn metric_byte(m: MetricKind) -> u8 {
    match m {
        MetricKind::L2 => 0,
        MetricKind::InnerProduct => 1,
        MetricKind::Cosine => 2,
        MetricKind::Hamming => 3,
    }
}

pub(crate) fn metric_from_byte(b: u8) -> Result<MetricKind> {
    match b {
        0 => Ok(MetricKind::L2),
        1 => Ok(MetricKind::InnerProduct),
        2 => Ok(MetricKind::Cosine),
        3 => Ok(MetricKind::Hamming),
        other => Err(Error::BadHeader(format!("unknown metric byte {other}"))),
    }
}

pub(crate) fn payload_byte(p: PayloadKind) -> u8 {
    match p {
        PayloadKind::Float => 0,
        PayloadKind::Binary => 1,
    }
}

pub(crate) fn payload_from_byte(b: u8) -> Result<PayloadKind> {
    match b {
        0 => Ok(PayloadKind::Float),
        1 => Ok(PayloadKind::Binary),
        other => Err(Error::BadHeader(format!("unknown payload byte {other}"))),
    }
}

fn index_kind_byte(k: IndexKind) -> u8 {
    match k {
        IndexKind::Flat => 0,
        IndexKind::Ivf => 1,
        IndexKind::Hnsw => 2,
    }
}

fn index_kind_from_byte(b: u8) -> Result<IndexKind> {
    match b {
        0 => Ok(IndexKind::Flat),
        1 => Ok(IndexKind::Ivf),
        2 => Ok(IndexKind::Hnsw),
        other => Err(Error::BadHeader(format!("unknown index kind byte {other}"))),
    }
}

/// Append-only little-endian buffer writer.
pub(crate) struct Writer {
    buf: Vec<u8>,
}

impl Writer {
    pub(crate) fn new(magic: [u8; 4]) -> Self {
        let mut buf = Vec::with_capacity(64);
        buf.extend_from_slice(&magic);
        buf.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
        Self { buf }
    }

    pub(crate) fn u8(&mut self, v: u8) {
        self.buf.push(v);
    }

    pub(crate) fn u32(&mut self, v: u32) {
        self.buf.extend_from_slice(&v.to_le_bytes());
    }

    pub(crate) fn u64(&mut self, v: u64) {
        self.buf.extend_from_slice(&v.to_le_bytes());
    }

    pub(crate) fn f32s(&mut self, vs: &[f32]) {
        self.buf.reserve(vs.len() * 4);
        for &v in vs {
            self.buf.extend_from_slice(&v.to_le_bytes());
        }
    }

    pub(crate) fn f64s(&mut self, vs: &[f64]) {
        self.buf.reserve(vs.len() * 8);
        for &v in vs {
            self.buf.extend_from_slice(&v.to_le_bytes());
        }
    }

    pub(crate) fn bytes(&mut self, vs: &[u8]) {
        self.buf.extend_from_slice(vs);
    }

    /// One newline-terminated UTF-8 label. Labels must not contain
    /// newlines; the line break is the delimiter.
    pub(crate) fn line(&mut self, label: &str) -> Result<()> {
        if label.contains('\n') {
            return Err(Error::InvalidParam(format!(
                "label {label:?} contains a newline"
            )));
        }
        self.buf.extend_from_slice(label.as_bytes());
        self.buf.push(b'\n');
        Ok(())
    }

    /// Append the CRC trailer and write the file.
    pub(crate) fn finish(self, path: &Path) -> Result<()> {
        let mut buf = self.buf;
        let crc = crc32fast::hash(&buf);
        buf.extend_from_slice(&crc.to_le_bytes());
        fs::write(path, buf)?;
        Ok(())
    }
}

/// Bounded little-endian reader over a loaded file body.
pub(crate) struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.pos + n > self.buf.len() {
            return Err(Error::Truncated {
                offset: self.pos,
                needed: self.pos + n - self.buf.len(),
            });
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    pub(crate) fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }

    pub(crate) fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    pub(crate) fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    pub(crate) fn f32s(&mut self, n: usize) -> Result<Vec<f32>> {
        let raw = self.take(n * 4)?;
        Ok(raw
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
            .collect())
    }

    pub(crate) fn f64s(&mut self, n: usize) -> Result<Vec<f64>> {
        let raw = self.take(n * 8)?;
        Ok(raw
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect())
    }

    pub(crate) fn raw(&mut self, n: usize) -> Result<Vec<u8>> {
        Ok(self.take(n)?.to_vec())
    }

    /// One newline-terminated label.
    pub(crate) fn line(&mut self) -> Result<String> {
        let rest = &self.buf[self.pos..];
        let Some(end) = rest.iter().position(|&b| b == b'\n') else {
            return Err(Error::Truncated {
                offset: self.pos,
                needed: 1,
            });
        };
        let s = std::str::from_utf8(&rest[..end])
            .map_err(|e| Error::BadHeader(format!("label is not UTF-8: {e}")))?
            .to_string();
        self.pos += end + 1;
        Ok(s)
    }

    pub(crate) fn finished(&self) -> bool {
        self.pos == self.buf.len()
    }

    pub(crate) fn offset(&self) -> usize {
        self.pos
    }
}

/// Load a file and run the header checks. Returns the raw file bytes and
/// a reader positioned after magic and version, bounded before the CRC
/// trailer. The caller parses the body, then calls `verify_crc`.
pub(crate) fn open_body(path: &Path, magic: [u8; 4]) -> Result<Vec<u8>> {
    let data = fs::read(path)?;
    if data.len() < 12 {
        return Err(Error::Truncated {
            offset: data.len(),
            needed: 12 - data.len(),
        });
    }
    if data[0..4] != magic {
        return Err(Error::BadHeader(format!(
            "bad magic {:?} (want {:?})",
            &data[0..4],
            magic
        )));
    }
    let version = u32::from_le_bytes(data[4..8].try_into().unwrap());
    if version != FORMAT_VERSION {
        return Err(Error::VersionMismatch {
            expected: FORMAT_VERSION,
            got: version,
        });
    }
    Ok(data)
}

pub(crate) fn body_reader(data: &[u8]) -> Reader<'_> {
    Reader {
        buf: &data[..data.len() - 4],
        pos: 8,
    }
}

pub(crate) fn verify_crc(data: &[u8]) -> Result<()> {
    let stored = u32::from_le_bytes(data[data.len() - 4..].try_into().unwrap());
    let computed = crc32fast::hash(&data[..data.len() - 4]);
    if stored != computed {
        return Err(Error::ChecksumMismatch { stored, computed });
    }
    Ok(())
}

pub(crate) fn expect_consumed(r: &Reader<'_>) -> Result<()> {
    if !r.finished() {
        return Err(Error::BadHeader(format!(
            "trailing data after offset {}",
            r.offset()
        )));
    }
    Ok(())
}

fn write_rows(w: &mut Writer, rows: &RowStore) {
    match rows.kind() {
        PayloadKind::Float => w.f32s(rows.raw_floats()),
        PayloadKind::Binary => w.bytes(rows.raw_bytes()),
    }
}

fn read_rows(r: &mut Reader<'_>, kind: PayloadKind, dim: usize, count: usize) -> Result<RowStore> {
    match kind {
        PayloadKind::Float => RowStore::from_raw_floats(dim, r.f32s(count * dim)?),
        PayloadKind::Binary => RowStore::from_raw_bytes(dim, r.raw(count * dim / 8)?),
    }
}

/// Persist any index. The file records kind, metric, payload layout and
/// all structure needed to reload byte-identical search behavior.
pub fn save_index(index: &AnyIndex, path: &Path) -> Result<()> {
    let mut w = Writer::new(INDEX_MAGIC);
    w.u8(index_kind_byte(index.kind()));
    w.u8(metric_byte(index.metric()));
    match index {
        AnyIndex::Flat(idx) => {
            w.u8(payload_byte(idx.rows().kind()));
            w.u32(idx.dim() as u32);
            w.u64(idx.len() as u64);
            for &id in idx.ids() {
                w.u64(id);
            }
            for label in idx.labels() {
                w.line(label)?;
            }
            write_rows(&mut w, idx.rows());
        }
        AnyIndex::Ivf(idx) => {
            if !idx.trained() {
                return Err(Error::NotTrained);
            }
            w.u8(payload_byte(PayloadKind::Float));
            w.u32(idx.dim() as u32);
            w.u64(idx.len() as u64);
            w.u64(idx.seed());
            w.u32(idx.nlist() as u32);
            w.u32(idx.nprobe_default() as u32);
            let (centroids, cells) = idx.export_parts();
            w.f32s(centroids);
            for (ids, labels, rows) in cells {
                w.u64(ids.len() as u64);
                for &id in ids {
                    w.u64(id);
                }
                for label in labels {
                    w.line(label)?;
                }
                write_rows(&mut w, rows);
            }
        }
        AnyIndex::Hnsw(idx) => {
            w.u8(payload_byte(idx.rows().kind()));
            w.u32(idx.dim() as u32);
            w.u64(idx.len() as u64);
            let p = idx.params();
            w.u32(p.m as u32);
            w.u32(p.ef_construction as u32);
            w.u32(p.ef_search_default as u32);
            w.u64(p.seed);
            w.u64(idx.draws());
            w.u32(idx.entry_slot().unwrap_or(NO_ENTRY));
            for &id in idx.ids() {
                w.u64(id);
            }
            for label in idx.labels() {
                w.line(label)?;
            }
            for &level in idx.levels() {
                w.u8(level);
            }
            write_rows(&mut w, idx.rows());
            for node in idx.links() {
                for layer in node {
                    w.u32(layer.len() as u32);
                    for &nb in layer {
                        w.u32(nb);
                    }
                }
            }
        }
    }
    w.finish(path)
}

pub fn load_index(path: &Path) -> Result<AnyIndex> {
    let data = open_body(path, INDEX_MAGIC)?;
    let mut r = body_reader(&data);

    let kind = index_kind_from_byte(r.u8()?)?;
    let metric = metric_from_byte(r.u8()?)?;
    let payload = payload_from_byte(r.u8()?)?;
    if payload != metric.payload_kind() {
        return Err(Error::BadHeader(format!(
            "payload kind {payload} does not match metric {metric}"
        )));
    }
    let dim = r.u32()? as usize;
    let count = r.u64()? as usize;

    match kind {
        IndexKind::Flat => {
            let mut ids = Vec::with_capacity(count);
            for _ in 0..count {
                ids.push(r.u64()?);
            }
            let mut labels = Vec::with_capacity(count);
            for _ in 0..count {
                labels.push(r.line()?);
            }
            let rows = read_rows(&mut r, payload, dim, count)?;
            expect_consumed(&r)?;
            verify_crc(&data)?;
            Ok(AnyIndex::Flat(FlatIndex::from_parts(
                metric, rows, ids, labels,
            )?))
        }
        IndexKind::Ivf => {
            let seed = r.u64()?;
            let nlist = r.u32()? as usize;
            let nprobe_default = r.u32()? as usize;
            if nlist == 0 {
                return Err(Error::BadHeader("nlist is zero".into()));
            }
            let centroids = r.f32s(nlist * dim)?;
            let mut parts = Vec::with_capacity(nlist);
            let mut total = 0usize;
            for _ in 0..nlist {
                let size = r.u64()? as usize;
                total += size;
                let mut ids = Vec::with_capacity(size);
                for _ in 0..size {
                    ids.push(r.u64()?);
                }
                let mut labels = Vec::with_capacity(size);
                for _ in 0..size {
                    labels.push(r.line()?);
                }
                let rows = read_rows(&mut r, payload, dim, size)?;
                parts.push((ids, labels, rows));
            }
            expect_consumed(&r)?;
            verify_crc(&data)?;
            if total != count {
                return Err(Error::BadHeader(format!(
                    "cell sizes sum to {total}, header says {count}"
                )));
            }
            Ok(AnyIndex::Ivf(IvfIndex::from_parts(
                metric,
                dim,
                nlist,
                seed,
                nprobe_default,
                centroids,
                parts,
            )?))
        }
        IndexKind::Hnsw => {
            let m = r.u32()? as usize;
            let ef_construction = r.u32()? as usize;
            let ef_search_default = r.u32()? as usize;
            let seed = r.u64()?;
            let draws = r.u64()?;
            let entry = r.u32()?;
            let mut ids = Vec::with_capacity(count);
            for _ in 0..count {
                ids.push(r.u64()?);
            }
            let mut labels = Vec::with_capacity(count);
            for _ in 0..count {
                labels.push(r.line()?);
            }
            let mut levels = Vec::with_capacity(count);
            for _ in 0..count {
                levels.push(r.u8()?);
            }
            let rows = read_rows(&mut r, payload, dim, count)?;
            let mut links = Vec::with_capacity(count);
            for &level in &levels {
                let mut node = Vec::with_capacity(level as usize + 1);
                for _ in 0..=level {
                    let len = r.u32()? as usize;
                    let mut layer = Vec::with_capacity(len);
                    for _ in 0..len {
                        layer.push(r.u32()?);
                    }
                    node.push(layer);
                }
                links.push(node);
            }
            expect_consumed(&r)?;
            verify_crc(&data)?;
            let entry = if entry == NO_ENTRY { None } else { Some(entry) };
            Ok(AnyIndex::Hnsw(HnswIndex::from_parts(
                metric,
                HnswParams {
                    m,
                    ef_construction,
                    ef_search_default,
                    seed,
                },
                rows,
                ids,
                labels,
                levels,
                links,
                entry,
                draws,
            )?))
        }
    }
}
