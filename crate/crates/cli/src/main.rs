//! `shitu`: command-line front end for the retrieval engine.
//!
//! Conventions shared by every subcommand:
//!
//! * Results go to stdout as tab-separated values; everything else
//!   (the resolved configuration, errors) goes to stderr.
//! * Options resolve as flag, then `--config` file entry, then built-in
//!   default. The config file holds one `key = value` per line with `#`
//!   comments; keys mirror the flag names. A key a subcommand does not
//!   know is an error, not a warning.
//! * Worker threads are capped by `--threads`, the `threads` config key
//!   or the `SHITU_THREADS` environment variable, in that order.
//! * Exit code 0 means the run succeeded; any failure exits 1 with an
//!   error naming the operation that failed.

use std::collections::BTreeMap;
use std::fmt::Display;
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::time::Instant;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};

use shitu_core::gallery::{ingest, read_csv_features, read_labels};
use shitu_core::ivf::nlist_heuristic;
use shitu_core::losses::arcmargin::{DEFAULT_MARGIN, DEFAULT_SCALE};
use shitu_core::metrics::binarize;
use shitu_core::trainer::{
    generate, recall_at, save_checkpoint, stats_csv, train, LrSchedule, SyntheticConfig,
    TrainConfig, TrainMode,
};
use shitu_core::{
    load_index, save_index, AnyIndex, EmbeddingVector, FlatIndex, GalleryRecord, GalleryStore,
    HnswIndex, HnswParams, IndexKind, IvfIndex, MetricKind, Payload, PayloadKind, VectorIndex,
};

/// k-means refinement passes used when building an inverted-file index.
const KMEANS_ITERS: usize = 25;
/// Full passes over the query set discarded before latency is measured.
const BENCH_WARMUP: usize = 3;

#[derive(Parser)]
#[command(name = "shitu", version, about = "Embedding retrieval engine")]
struct Cli {
    /// Cap on worker threads (default: SHITU_THREADS, then one per core).
    #[arg(long, global = true)]
    threads: Option<usize>,

    /// Config file with one key=value per line; flags override it.
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Ingest feature rows and write an index file.
    Build(BuildArgs),
    /// Query an index file; one TSV row per hit.
    Search(SearchArgs),
    /// Recall of an index against labeled queries.
    Eval(EvalArgs),
    /// Query latency on a synthetic gallery.
    Bench(BenchArgs),
    /// Train a toy embedder; writes a checkpoint and a loss CSV.
    Train(TrainArgs),
    /// Remove records from an index file in place.
    Delete(DeleteArgs),
}

#[derive(Args)]
struct BuildArgs {
    /// Feature file: CSV rows with --csv, otherwise a gallery container.
    #[arg(long)]
    features: Option<PathBuf>,
    /// One label per line, aligned with the feature rows.
    #[arg(long)]
    labels: Option<PathBuf>,
    /// Treat --features as CSV text.
    #[arg(long)]
    csv: bool,
    /// Index kind: flat, ivf or hnsw.
    #[arg(long)]
    index: Option<String>,
    /// Distance: l2, ip, cosine or hamming.
    #[arg(long)]
    metric: Option<String>,
    /// Output index file.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Coarse cells for ivf (default: sqrt of the record count).
    #[arg(long)]
    nlist: Option<usize>,
    /// Cells probed by later searches when none is given per call.
    #[arg(long)]
    nprobe_default: Option<usize>,
    /// Neighbor budget per node for hnsw.
    #[arg(long, visible_alias = "M")]
    m: Option<usize>,
    /// Insertion beam width for hnsw.
    #[arg(long)]
    ef_construction: Option<usize>,
    /// Seed for k-means and level draws.
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Args)]
struct SearchArgs {
    /// Index file written by `build`.
    #[arg(long)]
    index_file: Option<PathBuf>,
    /// Query feature file: CSV rows with --csv, otherwise a container.
    #[arg(long)]
    query_features: Option<PathBuf>,
    /// Treat --query-features as CSV text.
    #[arg(long)]
    csv: bool,
    /// Results per query.
    #[arg(long)]
    k: Option<usize>,
    /// Cells to probe (ivf indices only).
    #[arg(long)]
    nprobe: Option<usize>,
    /// Beam width (hnsw indices only).
    #[arg(long)]
    ef_search: Option<usize>,
}

#[derive(Args)]
struct EvalArgs {
    /// Index file written by `build`.
    #[arg(long)]
    index_file: Option<PathBuf>,
    /// Query feature file: CSV rows with --csv, otherwise a container.
    #[arg(long)]
    query_features: Option<PathBuf>,
    /// Treat --query-features as CSV text.
    #[arg(long)]
    csv: bool,
    /// One true label per query row.
    #[arg(long)]
    query_labels: Option<PathBuf>,
    /// Deepest recall cutoff to report.
    #[arg(long)]
    k: Option<usize>,
}

#[derive(Args)]
struct BenchArgs {
    /// Synthetic gallery size.
    #[arg(long)]
    gallery_size: Option<usize>,
    /// Feature dimension.
    #[arg(long)]
    dim: Option<usize>,
    /// Payload kind: float or binary.
    #[arg(long)]
    payload: Option<String>,
    /// Index kind: flat, ivf or hnsw.
    #[arg(long)]
    index: Option<String>,
    /// Number of distinct queries.
    #[arg(long)]
    queries: Option<usize>,
    /// Timed passes over the query set.
    #[arg(long)]
    repeats: Option<usize>,
    /// Results per query.
    #[arg(long)]
    k: Option<usize>,
    /// Seed for the synthetic data.
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Args)]
struct TrainArgs {
    /// baseline, dml, udml or dshsd.
    #[arg(long)]
    mode: Option<String>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long)]
    lr: Option<f64>,
    #[arg(long)]
    momentum: Option<f64>,
    /// constant or cosine.
    #[arg(long)]
    schedule: Option<String>,
    /// Hidden layer width; omit for a single-layer embedder.
    #[arg(long)]
    hidden_dim: Option<usize>,
    #[arg(long)]
    embed_dim: Option<usize>,
    /// Logit scale of the margin head.
    #[arg(long)]
    scale: Option<f64>,
    /// Additive angular margin.
    #[arg(long)]
    margin: Option<f64>,
    /// Weight of the quantization pull in hashing mode.
    #[arg(long)]
    alpha: Option<f64>,
    /// Contrastive margin in hashing mode (default: 2 * embed-dim).
    #[arg(long)]
    hash_margin: Option<f64>,
    /// Shuffle seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Init seed of the student network.
    #[arg(long)]
    net_seed_a: Option<u64>,
    /// Init seed of the teacher network.
    #[arg(long)]
    net_seed_b: Option<u64>,
    /// Synthetic dataset shape.
    #[arg(long)]
    classes: Option<usize>,
    #[arg(long)]
    input_dim: Option<usize>,
    #[arg(long)]
    train_per_class: Option<usize>,
    #[arg(long)]
    gallery_per_class: Option<usize>,
    #[arg(long)]
    query_per_class: Option<usize>,
    #[arg(long)]
    center_scale: Option<f64>,
    #[arg(long)]
    noise: Option<f64>,
    #[arg(long)]
    data_seed: Option<u64>,
    /// Where the trained weights go.
    #[arg(long)]
    checkpoint_out: Option<PathBuf>,
    /// Where the per-epoch loss table goes.
    #[arg(long)]
    csv_out: Option<PathBuf>,
}

#[derive(Args)]
struct DeleteArgs {
    /// Index file to edit in place.
    #[arg(long)]
    index_file: Option<PathBuf>,
    /// Comma-separated record ids, e.g. "7,9".
    #[arg(long)]
    ids: Option<String>,
}

fn main() {
    let cli = Cli::parse();
    if let Err(e) = run(cli) {
        eprintln!("error: {e:#}");
        std::process::exit(1);
    }
}

fn run(cli: Cli) -> Result<()> {
    let file = FileCfg::load(cli.config.as_deref())?;
    let threads = resolve_threads(cli.threads, &file)?;
    if let Some(n) = threads {
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .context("install global thread pool")?;
    }
    match cli.cmd {
        Cmd::Build(a) => cmd_build(a, &file, threads),
        Cmd::Search(a) => cmd_search(a, &file, threads),
        Cmd::Eval(a) => cmd_eval(a, &file, threads),
        Cmd::Bench(a) => cmd_bench(a, &file, threads),
        Cmd::Train(a) => cmd_train(a, &file, threads),
        Cmd::Delete(a) => cmd_delete(a, &file, threads),
    }
}

/// Key=value pairs from `--config`, if any. Values are kept as strings
/// and parsed at the point of use so every key gets the same error shape.
struct FileCfg {
    map: BTreeMap<String, String>,
}

impl FileCfg {
    fn load(path: Option<&Path>) -> Result<Self> {
        let mut map = BTreeMap::new();
        let Some(path) = path else {
            return Ok(Self { map });
        };
        let text = std::fs::read_to_string(path)
            .with_context(|| format!("read config file {}", path.display()))?;
        for (ln, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let Some((key, value)) = line.split_once('=') else {
                bail!("config line {}: expected key=value, got {line:?}", ln + 1);
            };
            let (key, value) = (key.trim().to_string(), value.trim().to_string());
            if value.is_empty() {
                bail!("config line {}: empty value for key {key:?}", ln + 1);
            }
            if map.insert(key.clone(), value).is_some() {
                bail!("config line {}: duplicate key {key:?}", ln + 1);
            }
        }
        Ok(Self { map })
    }

    fn get<T: FromStr>(&self, key: &str) -> Result<Option<T>>
    where
        T::Err: Display,
    {
        match self.map.get(key) {
            None => Ok(None),
            Some(raw) => match raw.parse() {
                Ok(v) => Ok(Some(v)),
                Err(e) => bail!("config key {key:?}: {e} (value {raw:?})"),
            },
        }
    }

    fn reject_unknown(&self, allowed: &[&str]) -> Result<()> {
        for key in self.map.keys() {
            if !allowed.contains(&key.as_str()) {
                bail!("unknown config key {key:?} for this subcommand");
            }
        }
        Ok(())
    }
}

fn resolve_threads(flag: Option<usize>, file: &FileCfg) -> Result<Option<usize>> {
    let mut n = flag.or(file.get("threads")?);
    if n.is_none() {
        if let Ok(raw) = std::env::var("SHITU_THREADS") {
            n = Some(
                raw.trim()
                    .parse()
                    .with_context(|| format!("SHITU_THREADS must be a thread count, got {raw:?}"))?,
            );
        }
    }
    if n == Some(0) {
        bail!("threads must be >= 1");
    }
    Ok(n)
}

fn require<T>(v: Option<T>, key: &str) -> Result<T> {
    v.with_context(|| format!("missing required option --{key} (no flag, no config entry)"))
}

fn print_resolved(cmd: &str, threads: Option<usize>, pairs: &[(&str, String)]) {
    eprintln!("resolved config [{cmd}]");
    match threads {
        Some(n) => eprintln!("  threads = {n}"),
        None => eprintln!("  threads = default"),
    }
    for (key, value) in pairs {
        eprintln!("  {key} = {value}");
    }
}

fn opt_path(p: &Option<PathBuf>) -> String {
    p.as_ref().map_or_else(|| "-".into(), |p| p.display().to_string())
}

/// Knobs shared by `build` and `bench` when constructing an index.
struct IndexKnobs {
    nlist: Option<usize>,
    nprobe_default: Option<usize>,
    m: usize,
    ef_construction: usize,
    seed: u64,
}

fn construct_index(
    kind: IndexKind,
    metric: MetricKind,
    store: &GalleryStore,
    knobs: &IndexKnobs,
) -> Result<AnyIndex> {
    let records: Vec<GalleryRecord> = store.iter().collect();
    let dim = store.dim();
    Ok(match kind {
        IndexKind::Flat => {
            let mut index = FlatIndex::new(metric, dim)?;
            index.add(&records)?;
            AnyIndex::Flat(index)
        }
        IndexKind::Ivf => {
            let nlist = knobs.nlist.unwrap_or_else(|| nlist_heuristic(records.len()));
            let mut index = IvfIndex::new(metric, dim, nlist, knobs.seed)?;
            let samples: Vec<EmbeddingVector> = records
                .iter()
                .filter_map(|r| match &r.payload {
                    Payload::Float(v) => Some(v.clone()),
                    Payload::Binary(_) => None,
                })
                .collect();
            index.train(&samples, KMEANS_ITERS)?;
            if let Some(np) = knobs.nprobe_default {
                index.set_nprobe_default(np)?;
            }
            index.add(&records)?;
            AnyIndex::Ivf(index)
        }
        IndexKind::Hnsw => {
            let mut index = HnswIndex::new(
                metric,
                dim,
                HnswParams {
                    m: knobs.m,
                    ef_construction: knobs.ef_construction,
                    seed: knobs.seed,
                    ..HnswParams::default()
                },
            )?;
            index.add(&records)?;
            AnyIndex::Hnsw(index)
        }
    })
}

/// Align a gallery's payload kind with the index metric: float rows are
/// sign-binarized for hamming, while binary rows cannot back a float
/// metric and are rejected.
fn adapt_store(store: GalleryStore, metric: MetricKind) -> Result<GalleryStore> {
    match (store.payload_kind(), metric) {
        (PayloadKind::Float, MetricKind::Hamming) => {
            store.binarized().context("binarize gallery for hamming")
        }
        (PayloadKind::Binary, m) if m != MetricKind::Hamming => {
            bail!("binary payloads require the hamming metric, not {m}")
        }
        _ => Ok(store),
    }
}

/// Query rows from CSV text or a gallery container, adapted to the index
/// metric the same way the gallery was at build time.
fn load_queries(path: &Path, csv: bool, metric: MetricKind) -> Result<Vec<Payload>> {
    let payloads: Vec<Payload> = if csv {
        let (_dim, rows) = read_csv_features(path).context("read query csv")?;
        rows.into_iter()
            .map(|row| Ok(Payload::Float(EmbeddingVector::new(row)?)))
            .collect::<Result<_>>()?
    } else {
        let store = GalleryStore::load(path).context("load query container")?;
        store.iter().map(|r| r.payload).collect()
    };
    payloads
        .into_iter()
        .enumerate()
        .map(|(row, p)| match (p, metric) {
            (Payload::Float(v), MetricKind::Hamming) => {
                Ok(Payload::Binary(binarize(&v).with_context(|| {
                    format!("binarize query row {row} for hamming")
                })?))
            }
            (Payload::Binary(_), m) if m != MetricKind::Hamming => {
                bail!("query row {row} is binary but the index metric is {m}")
            }
            (p, _) => Ok(p),
        })
        .collect()
}

const BUILD_KEYS: &[&str] = &[
    "threads",
    "features",
    "labels",
    "csv",
    "index",
    "metric",
    "out",
    "nlist",
    "nprobe-default",
    "m",
    "ef-construction",
    "seed",
];

fn cmd_build(a: BuildArgs, file: &FileCfg, threads: Option<usize>) -> Result<()> {
    file.reject_unknown(BUILD_KEYS)?;
    let features = require(a.features.or(file.get("features")?), "features")?;
    let labels: Option<PathBuf> = match a.labels {
        Some(p) => Some(p),
        None => file.get("labels")?,
    };
    let csv = a.csv || file.get("csv")?.unwrap_or(false);
    let kind = IndexKind::parse(&require(a.index.or(file.get("index")?), "index")?)?;
    let metric = MetricKind::parse(&require(a.metric.or(file.get("metric")?), "metric")?)?;
    let out: PathBuf = require(a.out.or(file.get("out")?), "out")?;
    let nlist = a.nlist.or(file.get("nlist")?);
    if nlist == Some(0) {
        bail!("nlist must be >= 1");
    }
    let nprobe_default = a.nprobe_default.or(file.get("nprobe-default")?);
    let m = a.m.or(file.get("m")?).unwrap_or(HnswParams::default().m);
    let ef_construction = a
        .ef_construction
        .or(file.get("ef-construction")?)
        .unwrap_or(HnswParams::default().ef_construction);
    let seed = a.seed.or(file.get("seed")?).unwrap_or(0);

    print_resolved(
        "build",
        threads,
        &[
            ("features", features.display().to_string()),
            ("labels", opt_path(&labels)),
            ("csv", csv.to_string()),
            ("index", kind.name().to_string()),
            ("metric", metric.name().to_string()),
            ("out", out.display().to_string()),
            ("nlist", nlist.map_or_else(|| "auto".into(), |n| n.to_string())),
            (
                "nprobe-default",
                nprobe_default.map_or_else(|| "auto".into(), |n| n.to_string()),
            ),
            ("m", m.to_string()),
            ("ef-construction", ef_construction.to_string()),
            ("seed", seed.to_string()),
        ],
    );

    let store = ingest(&features, labels.as_deref(), csv).context("ingest features")?;
    let store = adapt_store(store, metric)?;
    let knobs = IndexKnobs {
        nlist,
        nprobe_default,
        m,
        ef_construction,
        seed,
    };
    let t = Instant::now();
    let index = construct_index(kind, metric, &store, &knobs).context("build index")?;
    let build_ms = t.elapsed().as_secs_f64() * 1e3;
    save_index(&index, &out).context("save index")?;
    let file_bytes = std::fs::metadata(&out).context("stat index file")?.len();

    println!("records\t{}", index.len());
    println!("build_ms\t{build_ms:.1}");
    println!("file_bytes\t{file_bytes}");
    Ok(())
}

const SEARCH_KEYS: &[&str] = &[
    "threads",
    "index-file",
    "query-features",
    "csv",
    "k",
    "nprobe",
    "ef-search",
];

fn cmd_search(a: SearchArgs, file: &FileCfg, threads: Option<usize>) -> Result<()> {
    file.reject_unknown(SEARCH_KEYS)?;
    let index_file: PathBuf = require(a.index_file.or(file.get("index-file")?), "index-file")?;
    let query_features: PathBuf = require(
        a.query_features.or(file.get("query-features")?),
        "query-features",
    )?;
    let csv = a.csv || file.get("csv")?.unwrap_or(false);
    let k = require(a.k.or(file.get("k")?), "k")?;
    if k == 0 {
        bail!("k must be >= 1");
    }
    let nprobe = a.nprobe.or(file.get("nprobe")?);
    let ef_search = a.ef_search.or(file.get("ef-search")?);

    print_resolved(
        "search",
        threads,
        &[
            ("index-file", index_file.display().to_string()),
            ("query-features", query_features.display().to_string()),
            ("csv", csv.to_string()),
            ("k", k.to_string()),
            (
                "nprobe",
                nprobe.map_or_else(|| "default".into(), |n| n.to_string()),
            ),
            (
                "ef-search",
                ef_search.map_or_else(|| "default".into(), |n| n.to_string()),
            ),
        ],
    );

    let index = load_index(&index_file).context("load index")?;
    let queries = load_queries(&query_features, csv, index.metric())?;
    for (row, query) in queries.iter().enumerate() {
        let hits = index
            .search_tuned(query, k, nprobe, ef_search)
            .with_context(|| format!("search query row {row}"))?;
        for (rank, hit) in hits.iter().enumerate() {
            println!(
                "{row}\t{}\t{}\t{}\t{:.6}",
                rank + 1,
                hit.id,
                hit.label,
                hit.distance
            );
        }
    }
    Ok(())
}

const EVAL_KEYS: &[&str] = &[
    "threads",
    "index-file",
    "query-features",
    "csv",
    "query-labels",
    "k",
];

fn cmd_eval(a: EvalArgs, file: &FileCfg, threads: Option<usize>) -> Result<()> {
    file.reject_unknown(EVAL_KEYS)?;
    let index_file: PathBuf = require(a.index_file.or(file.get("index-file")?), "index-file")?;
    let query_features: PathBuf = require(
        a.query_features.or(file.get("query-features")?),
        "query-features",
    )?;
    let csv = a.csv || file.get("csv")?.unwrap_or(false);
    let query_labels: PathBuf = require(
        a.query_labels.or(file.get("query-labels")?),
        "query-labels",
    )?;
    let k = require(a.k.or(file.get("k")?), "k")?;
    if k == 0 {
        bail!("k must be >= 1");
    }

    print_resolved(
        "eval",
        threads,
        &[
            ("index-file", index_file.display().to_string()),
            ("query-features", query_features.display().to_string()),
            ("csv", csv.to_string()),
            ("query-labels", query_labels.display().to_string()),
            ("k", k.to_string()),
        ],
    );

    let index = load_index(&index_file).context("load index")?;
    let queries = load_queries(&query_features, csv, index.metric())?;
    let labels = read_labels(&query_labels).context("read query labels")?;
    if labels.len() != queries.len() {
        bail!(
            "{} query labels for {} query rows",
            labels.len(),
            queries.len()
        );
    }

    let mut hits_at = vec![0usize; k];
    for (row, (query, label)) in queries.iter().zip(&labels).enumerate() {
        let hits = index
            .search(query, k)
            .with_context(|| format!("search query row {row}"))?;
        // First rank whose label matches scores every deeper cutoff.
        if let Some(first) = hits.iter().position(|h| &h.label == label) {
            for slot in &mut hits_at[first..] {
                *slot += 1;
            }
        }
    }

    println!("queries\t{}", queries.len());
    for (j, &hits) in hits_at.iter().enumerate() {
        println!("recall@{}\t{:.6}", j + 1, hits as f64 / queries.len() as f64);
    }
    Ok(())
}

const BENCH_KEYS: &[&str] = &[
    "threads",
    "gallery-size",
    "dim",
    "payload",
    "index",
    "queries",
    "repeats",
    "k",
    "seed",
];

fn cmd_bench(a: BenchArgs, file: &FileCfg, threads: Option<usize>) -> Result<()> {
    file.reject_unknown(BENCH_KEYS)?;
    let gallery_size = a.gallery_size.or(file.get("gallery-size")?).unwrap_or(10_000);
    let dim = a.dim.or(file.get("dim")?).unwrap_or(128);
    let payload = a.payload.or(file.get("payload")?).unwrap_or_else(|| "float".into());
    let metric = match payload.as_str() {
        "float" => MetricKind::L2,
        "binary" => MetricKind::Hamming,
        other => bail!("unknown payload kind {other:?} (expected float or binary)"),
    };
    let kind = IndexKind::parse(
        &a.index.or(file.get("index")?).unwrap_or_else(|| "flat".into()),
    )?;
    let queries_n = a.queries.or(file.get("queries")?).unwrap_or(100);
    let repeats = a.repeats.or(file.get("repeats")?).unwrap_or(3);
    let k = a.k.or(file.get("k")?).unwrap_or(10);
    let seed = a.seed.or(file.get("seed")?).unwrap_or(0);
    if queries_n == 0 || repeats == 0 || k == 0 {
        bail!("queries, repeats and k must all be >= 1");
    }

    print_resolved(
        "bench",
        threads,
        &[
            ("gallery-size", gallery_size.to_string()),
            ("dim", dim.to_string()),
            ("payload", payload.clone()),
            ("metric", metric.name().to_string()),
            ("index", kind.name().to_string()),
            ("queries", queries_n.to_string()),
            ("repeats", repeats.to_string()),
            ("k", k.to_string()),
            ("seed", seed.to_string()),
        ],
    );

    let store = GalleryStore::synthetic(gallery_size, dim, seed).context("synthesize gallery")?;
    let store = adapt_store(store, metric)?;
    let query_store =
        GalleryStore::synthetic(queries_n, dim, seed.wrapping_add(1)).context("synthesize queries")?;
    let query_store = adapt_store(query_store, metric)?;
    let queries: Vec<Payload> = query_store.iter().map(|r| r.payload).collect();

    let knobs = IndexKnobs {
        nlist: None,
        nprobe_default: None,
        m: HnswParams::default().m,
        ef_construction: HnswParams::default().ef_construction,
        seed,
    };
    let t = Instant::now();
    let index = construct_index(kind, metric, &store, &knobs).context("build index")?;
    let index_build_ms = t.elapsed().as_secs_f64() * 1e3;

    for _ in 0..BENCH_WARMUP {
        for query in &queries {
            std::hint::black_box(index.search(query, k).context("warmup search")?);
        }
    }
    let mut samples_ms = Vec::with_capacity(queries_n * repeats);
    for _ in 0..repeats {
        for query in &queries {
            let t = Instant::now();
            let hits = index.search(query, k).context("timed search")?;
            samples_ms.push(t.elapsed().as_secs_f64() * 1e3);
            std::hint::black_box(hits);
        }
    }
    samples_ms.sort_by(f64::total_cmp);
    let mean = samples_ms.iter().sum::<f64>() / samples_ms.len() as f64;
    let pct = |p: f64| {
        let rank = ((p / 100.0) * samples_ms.len() as f64).ceil() as usize;
        samples_ms[rank.clamp(1, samples_ms.len()) - 1]
    };
    let payload_bytes = match store.payload_kind() {
        PayloadKind::Float => dim * 4,
        PayloadKind::Binary => dim / 8,
    };

    println!("index_build_ms\t{index_build_ms:.1}");
    println!("samples\t{}", samples_ms.len());
    println!("mean_ms\t{mean:.4}");
    println!("p50_ms\t{:.4}", pct(50.0));
    println!("p99_ms\t{:.4}", pct(99.0));
    println!("payload_bytes\t{payload_bytes}");
    Ok(())
}

const TRAIN_KEYS: &[&str] = &[
    "threads",
    "mode",
    "epochs",
    "batch-size",
    "lr",
    "momentum",
    "schedule",
    "hidden-dim",
    "embed-dim",
    "scale",
    "margin",
    "alpha",
    "hash-margin",
    "seed",
    "net-seed-a",
    "net-seed-b",
    "classes",
    "input-dim",
    "train-per-class",
    "gallery-per-class",
    "query-per-class",
    "center-scale",
    "noise",
    "data-seed",
    "checkpoint-out",
    "csv-out",
];

fn cmd_train(a: TrainArgs, file: &FileCfg, threads: Option<usize>) -> Result<()> {
    file.reject_unknown(TRAIN_KEYS)?;
    let mode = TrainMode::parse(&require(a.mode.or(file.get("mode")?), "mode")?)?;
    let base = TrainConfig::default();
    let data_base = SyntheticConfig::default();

    let epochs = a.epochs.or(file.get("epochs")?).unwrap_or(base.epochs);
    let batch_size = a
        .batch_size
        .or(file.get("batch-size")?)
        .unwrap_or(base.batch_size);
    let lr = a.lr.or(file.get("lr")?).unwrap_or(base.lr);
    let momentum = a.momentum.or(file.get("momentum")?).unwrap_or(base.momentum);
    let schedule_name = a
        .schedule
        .or(file.get("schedule")?)
        .unwrap_or_else(|| "cosine".into());
    let schedule = LrSchedule::parse(&schedule_name)?;
    let hidden_dim = a.hidden_dim.or(file.get("hidden-dim")?);
    let embed_dim = a.embed_dim.or(file.get("embed-dim")?).unwrap_or(base.embed_dim);
    let scale = a.scale.or(file.get("scale")?).unwrap_or(DEFAULT_SCALE);
    let margin = a.margin.or(file.get("margin")?).unwrap_or(DEFAULT_MARGIN);
    let alpha = a.alpha.or(file.get("alpha")?).unwrap_or(base.alpha);
    let hash_margin = a.hash_margin.or(file.get("hash-margin")?);
    let seed = a.seed.or(file.get("seed")?).unwrap_or(base.seed);
    let net_seed_a = a
        .net_seed_a
        .or(file.get("net-seed-a")?)
        .unwrap_or(base.net_seeds[0]);
    let net_seed_b = a
        .net_seed_b
        .or(file.get("net-seed-b")?)
        .unwrap_or(base.net_seeds[1]);

    let classes = a.classes.or(file.get("classes")?).unwrap_or(data_base.classes);
    let input_dim = a.input_dim.or(file.get("input-dim")?).unwrap_or(data_base.dim);
    let train_per_class = a
        .train_per_class
        .or(file.get("train-per-class")?)
        .unwrap_or(data_base.train_per_class);
    let gallery_per_class = a
        .gallery_per_class
        .or(file.get("gallery-per-class")?)
        .unwrap_or(data_base.gallery_per_class);
    let query_per_class = a
        .query_per_class
        .or(file.get("query-per-class")?)
        .unwrap_or(data_base.query_per_class);
    let center_scale = a
        .center_scale
        .or(file.get("center-scale")?)
        .unwrap_or(data_base.center_scale);
    let noise = a.noise.or(file.get("noise")?).unwrap_or(data_base.noise);
    let data_seed = a.data_seed.or(file.get("data-seed")?).unwrap_or(data_base.seed);

    let checkpoint_out: PathBuf = a
        .checkpoint_out
        .or(file.get("checkpoint-out")?)
        .unwrap_or_else(|| PathBuf::from("model.ppck"));
    let csv_out: PathBuf = a
        .csv_out
        .or(file.get("csv-out")?)
        .unwrap_or_else(|| PathBuf::from("loss.csv"));

    print_resolved(
        "train",
        threads,
        &[
            ("mode", mode.name().to_string()),
            ("epochs", epochs.to_string()),
            ("batch-size", batch_size.to_string()),
            ("lr", lr.to_string()),
            ("momentum", momentum.to_string()),
            ("schedule", schedule_name.clone()),
            (
                "hidden-dim",
                hidden_dim.map_or_else(|| "none".into(), |n| n.to_string()),
            ),
            ("embed-dim", embed_dim.to_string()),
            ("scale", scale.to_string()),
            ("margin", margin.to_string()),
            ("alpha", alpha.to_string()),
            (
                "hash-margin",
                hash_margin.map_or_else(|| "auto".into(), |v| v.to_string()),
            ),
            ("seed", seed.to_string()),
            ("net-seed-a", net_seed_a.to_string()),
            ("net-seed-b", net_seed_b.to_string()),
            ("classes", classes.to_string()),
            ("input-dim", input_dim.to_string()),
            ("train-per-class", train_per_class.to_string()),
            ("gallery-per-class", gallery_per_class.to_string()),
            ("query-per-class", query_per_class.to_string()),
            ("center-scale", center_scale.to_string()),
            ("noise", noise.to_string()),
            ("data-seed", data_seed.to_string()),
            ("checkpoint-out", checkpoint_out.display().to_string()),
            ("csv-out", csv_out.display().to_string()),
        ],
    );

    let dataset = generate(&SyntheticConfig {
        classes,
        dim: input_dim,
        train_per_class,
        gallery_per_class,
        query_per_class,
        center_scale,
        noise,
        seed: data_seed,
    })
    .context("generate dataset")?;

    let cfg = TrainConfig {
        mode,
        epochs,
        batch_size,
        lr,
        momentum,
        schedule,
        hidden_dim,
        embed_dim,
        scale,
        margin,
        alpha,
        hash_margin,
        seed,
        net_seeds: [net_seed_a, net_seed_b],
    };
    let outcome = train(&dataset.train, dataset.classes, &cfg).context("train")?;

    std::fs::write(&csv_out, stats_csv(mode, &outcome.stats)).context("write loss csv")?;
    let mut nets = vec![&outcome.student];
    if let Some(teacher) = &outcome.teacher {
        nets.push(teacher);
    }
    save_checkpoint(&checkpoint_out, &nets).context("save checkpoint")?;

    let recall_of = |net: &shitu_core::trainer::ToyEmbedder| -> Result<f64> {
        let gallery = net.embed(&dataset.gallery.features)?;
        let queries = net.embed(&dataset.query.features)?;
        Ok(recall_at(
            &gallery,
            &dataset.gallery.labels,
            &queries,
            &dataset.query.labels,
            MetricKind::Cosine,
            &[1],
        )?[0])
    };

    let last = outcome
        .stats
        .last()
        .context("training produced no epochs")?;
    println!("epochs\t{}", outcome.stats.len());
    println!("final_total_loss\t{:.6}", last.total);
    println!("student_recall@1\t{:.4}", recall_of(&outcome.student)?);
    if let Some(teacher) = &outcome.teacher {
        println!("teacher_recall@1\t{:.4}", recall_of(teacher)?);
    }
    println!("checkpoint\t{}", checkpoint_out.display());
    println!("loss_csv\t{}", csv_out.display());
    Ok(())
}

const DELETE_KEYS: &[&str] = &["threads", "index-file", "ids"];

fn cmd_delete(a: DeleteArgs, file: &FileCfg, threads: Option<usize>) -> Result<()> {
    file.reject_unknown(DELETE_KEYS)?;
    let index_file: PathBuf = require(a.index_file.or(file.get("index-file")?), "index-file")?;
    let raw_ids = require(a.ids.or(file.get("ids")?), "ids")?;
    let ids: Vec<u64> = raw_ids
        .split(',')
        .map(|s| {
            s.trim()
                .parse()
                .with_context(|| format!("bad record id {:?} in --ids", s.trim()))
        })
        .collect::<Result<_>>()?;
    if ids.is_empty() {
        bail!("--ids lists no record ids");
    }

    print_resolved(
        "delete",
        threads,
        &[
            ("index-file", index_file.display().to_string()),
            ("ids", format!("{ids:?}")),
        ],
    );

    let mut index = load_index(&index_file).context("load index")?;
    let removed = index.delete(&ids).context("delete records")?;
    save_index(&index, &index_file).context("save index")?;

    println!("deleted\t{removed}");
    println!("remaining\t{}", index.len());
    Ok(())
}
