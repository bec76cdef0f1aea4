//! End-to-end runs of the `shitu` binary. Every test drives the compiled
//! executable through a tempdir, so these cover flag parsing, config
//! merging, file round-trips and output formats, not the math (the core
//! crate's tests own that).

use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn bin() -> Command {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_shitu"));
    // The suite must see the same defaults regardless of the caller's shell.
    cmd.env_remove("SHITU_THREADS");
    cmd
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().expect("spawn shitu")
}

fn stdout(out: &Output) -> String {
    assert!(
        out.status.success(),
        "exit {:?}\nstderr: {}",
        out.status.code(),
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout.clone()).expect("utf8 stdout")
}

fn stderr(out: &Output) -> String {
    String::from_utf8_lossy(&out.stderr).into_owned()
}

/// xorshift rows in [-1, 1); deterministic without pulling in an RNG crate.
fn write_csv(path: &Path, n: usize, dim: usize, seed: u64) {
    let mut state = seed | 1;
    let mut text = String::new();
    for _ in 0..n {
        let row: Vec<String> = (0..dim)
            .map(|_| {
                state ^= state << 13;
                state ^= state >> 7;
                state ^= state << 17;
                let v = (state >> 11) as f64 / (1u64 << 53) as f64 * 2.0 - 1.0;
                format!("{v:.6}")
            })
            .collect();
        text.push_str(&row.join(","));
        text.push('\n');
    }
    std::fs::write(path, text).unwrap();
}

fn write_labels(path: &Path, n: usize, classes: usize) {
    let text: String = (0..n).map(|i| format!("item-{}\n", i % classes)).collect();
    std::fs::write(path, text).unwrap();
}

struct Fixture {
    dir: tempfile::TempDir,
    features: PathBuf,
    labels: PathBuf,
}

fn fixture(n: usize, dim: usize, classes: usize, seed: u64) -> Fixture {
    let dir = tempfile::tempdir().unwrap();
    let features = dir.path().join("features.csv");
    let labels = dir.path().join("labels.txt");
    write_csv(&features, n, dim, seed);
    write_labels(&labels, n, classes);
    Fixture {
        dir,
        features,
        labels,
    }
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn build_index(fx: &Fixture, kind: &str, metric: &str, extra: &[&str]) -> PathBuf {
    let out = fx.dir.path().join(format!("{kind}-{metric}.ppsi"));
    let mut args = vec![
        "build",
        "--features",
        s(&fx.features),
        "--labels",
        s(&fx.labels),
        "--csv",
        "--index",
        kind,
        "--metric",
        metric,
        "--out",
        s(&out),
    ];
    args.extend_from_slice(extra);
    let run = run(&args);
    stdout(&run);
    out
}

#[test]
fn build_reports_record_count_and_writes_file() {
    let fx = fixture(1000, 8, 10, 11);
    let out = fx.dir.path().join("flat.ppsi");
    let text = stdout(&run(&[
        "build",
        "--features",
        s(&fx.features),
        "--labels",
        s(&fx.labels),
        "--csv",
        "--index",
        "flat",
        "--metric",
        "l2",
        "--out",
        s(&out),
    ]));
    assert!(text.contains("records\t1000"), "stdout: {text}");
    let bytes = std::fs::metadata(&out).unwrap().len();
    let reported: u64 = text
        .lines()
        .find_map(|l| l.strip_prefix("file_bytes\t"))
        .unwrap()
        .parse()
        .unwrap();
    assert_eq!(bytes, reported);
}

#[test]
fn self_query_ranks_itself_first_at_distance_zero() {
    let fx = fixture(50, 6, 5, 21);
    let index = build_index(&fx, "flat", "l2", &[]);
    let text = stdout(&run(&[
        "search",
        "--index-file",
        s(&index),
        "--query-features",
        s(&fx.features),
        "--csv",
        "--k",
        "3",
    ]));
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines.len(), 50 * 3, "three rows per query");
    for (row, chunk) in lines.chunks(3).enumerate() {
        let fields: Vec<&str> = chunk[0].split('\t').collect();
        assert_eq!(fields[0], row.to_string());
        assert_eq!(fields[1], "1");
        assert_eq!(fields[2], row.to_string(), "rank 1 is the query itself");
        assert_eq!(fields[4], "0.000000");
    }
}

#[test]
fn ivf_probing_every_cell_matches_flat_exactly() {
    let fx = fixture(400, 8, 4, 31);
    let flat = build_index(&fx, "flat", "l2", &[]);
    let ivf = build_index(&fx, "ivf", "l2", &["--nlist", "8"]);
    let queries = fx.dir.path().join("queries.csv");
    write_csv(&queries, 25, 8, 32);

    let a = stdout(&run(&[
        "search",
        "--index-file",
        s(&flat),
        "--query-features",
        s(&queries),
        "--csv",
        "--k",
        "5",
    ]));
    let b = stdout(&run(&[
        "search",
        "--index-file",
        s(&ivf),
        "--query-features",
        s(&queries),
        "--csv",
        "--k",
        "5",
        "--nprobe",
        "8",
    ]));
    assert_eq!(a, b, "full-probe ivf must equal exact search");
}

#[test]
fn eval_on_the_gallery_itself_reports_perfect_recall() {
    let fx = fixture(60, 8, 6, 41);
    let index = build_index(&fx, "flat", "cosine", &[]);
    let text = stdout(&run(&[
        "eval",
        "--index-file",
        s(&index),
        "--query-features",
        s(&fx.features),
        "--csv",
        "--query-labels",
        s(&fx.labels),
        "--k",
        "4",
    ]));
    assert!(text.contains("queries\t60"), "stdout: {text}");
    assert!(text.contains("recall@1\t1.000000"), "stdout: {text}");

    let recalls: Vec<f64> = text
        .lines()
        .filter(|l| l.starts_with("recall@"))
        .map(|l| l.split('\t').nth(1).unwrap().parse().unwrap())
        .collect();
    assert_eq!(recalls.len(), 4);
    for pair in recalls.windows(2) {
        assert!(pair[0] <= pair[1], "recall must not drop as k grows");
    }
}

#[test]
fn hnsw_delete_is_rejected_and_leaves_the_file_usable() {
    let fx = fixture(80, 8, 4, 51);
    let index = build_index(&fx, "hnsw", "l2", &["--m", "8", "--ef-construction", "40"]);
    let before = std::fs::read(&index).unwrap();

    let out = run(&["delete", "--index-file", s(&index), "--ids", "3"]);
    assert!(!out.status.success());
    assert!(
        stderr(&out).contains("delete is not supported"),
        "stderr: {}",
        stderr(&out)
    );
    assert_eq!(before, std::fs::read(&index).unwrap(), "file untouched");
}

#[test]
fn delete_rewrites_the_index_in_place() {
    let fx = fixture(30, 6, 3, 61);
    let index = build_index(&fx, "flat", "l2", &[]);
    let text = stdout(&run(&[
        "delete",
        "--index-file",
        s(&index),
        "--ids",
        "0,5,999",
    ]));
    assert!(text.contains("deleted\t2"), "id 999 does not exist: {text}");
    assert!(text.contains("remaining\t28"), "stdout: {text}");

    // The rewritten file must load and no longer return the deleted ids.
    let hits = stdout(&run(&[
        "search",
        "--index-file",
        s(&index),
        "--query-features",
        s(&fx.features),
        "--csv",
        "--k",
        "28",
    ]));
    for line in hits.lines() {
        let id: u64 = line.split('\t').nth(2).unwrap().parse().unwrap();
        assert!(id != 0 && id != 5, "deleted id {id} still returned");
    }
}

#[test]
fn zero_nlist_is_rejected_before_any_work() {
    let fx = fixture(100, 8, 4, 71);
    let out_path = fx.dir.path().join("never.ppsi");
    let out = run(&[
        "build",
        "--features",
        s(&fx.features),
        "--labels",
        s(&fx.labels),
        "--csv",
        "--index",
        "ivf",
        "--metric",
        "l2",
        "--nlist",
        "0",
        "--out",
        s(&out_path),
    ]);
    assert!(!out.status.success());
    assert!(stderr(&out).contains("nlist"), "stderr: {}", stderr(&out));
    assert!(!out_path.exists(), "no output file may be written");
}

#[test]
fn bench_reports_ordered_percentiles_and_payload_bytes() {
    let dir = tempfile::tempdir().unwrap();
    let parse = |text: &str, key: &str| -> f64 {
        text.lines()
            .find_map(|l| l.strip_prefix(&format!("{key}\t")))
            .unwrap_or_else(|| panic!("missing {key} in {text}"))
            .parse()
            .unwrap()
    };
    let float = stdout(&run(&[
        "bench",
        "--gallery-size",
        "400",
        "--dim",
        "64",
        "--payload",
        "float",
        "--index",
        "flat",
        "--queries",
        "20",
        "--repeats",
        "2",
    ]));
    assert!(parse(&float, "p50_ms") <= parse(&float, "p99_ms"));
    assert_eq!(parse(&float, "samples") as usize, 40);
    assert_eq!(parse(&float, "payload_bytes") as usize, 64 * 4);

    let binary = stdout(&run(&[
        "bench",
        "--gallery-size",
        "400",
        "--dim",
        "64",
        "--payload",
        "binary",
        "--index",
        "flat",
        "--queries",
        "20",
        "--repeats",
        "2",
    ]));
    assert_eq!(parse(&binary, "payload_bytes") as usize, 64 / 8);
    drop(dir);
}

#[test]
fn train_writes_loss_columns_and_repeats_bit_for_bit() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("train.cfg");
    std::fs::write(
        &cfg,
        "mode = udml\n\
         # tiny recipe so the test stays fast\n\
         epochs = 4\n\
         batch-size = 16\n\
         lr = 0.05\n\
         embed-dim = 8\n\
         classes = 4\n\
         input-dim = 8\n\
         train-per-class = 12\n\
         gallery-per-class = 6\n\
         query-per-class = 4\n",
    )
    .unwrap();

    let mut outputs = Vec::new();
    for name in ["a", "b"] {
        let ckpt = dir.path().join(format!("{name}.ppck"));
        let csv = dir.path().join(format!("{name}.csv"));
        let text = stdout(&run(&[
            "train",
            "--config",
            s(&cfg),
            "--checkpoint-out",
            s(&ckpt),
            "--csv-out",
            s(&csv),
        ]));
        assert!(text.contains("epochs\t4"), "stdout: {text}");
        assert!(text.contains("student_recall@1\t"), "stdout: {text}");
        assert!(text.contains("teacher_recall@1\t"), "stdout: {text}");
        outputs.push((std::fs::read(&ckpt).unwrap(), std::fs::read(&csv).unwrap()));
    }
    assert_eq!(outputs[0], outputs[1], "same seeds, same bytes");

    let header = String::from_utf8(outputs[0].1.clone()).unwrap();
    assert!(
        header.starts_with("epoch,arc,dml,feature,total"),
        "csv: {}",
        header.lines().next().unwrap()
    );
}

#[test]
fn flags_override_config_and_unknown_keys_fail() {
    let fx = fixture(40, 6, 4, 81);
    let index = build_index(&fx, "flat", "l2", &[]);
    let cfg = fx.dir.path().join("search.cfg");
    std::fs::write(
        &cfg,
        format!(
            "index-file = {}\nquery-features = {}\ncsv = true\nk = 2\n",
            index.display(),
            fx.features.display()
        ),
    )
    .unwrap();

    // Config alone supplies everything.
    let base = run(&["search", "--config", s(&cfg)]);
    let base_text = stdout(&base);
    assert_eq!(base_text.lines().count(), 40 * 2);
    assert!(stderr(&base).contains("k = 2"), "resolved config echoes k");

    // The flag wins over the file value.
    let override_run = run(&["search", "--config", s(&cfg), "--k", "1"]);
    assert_eq!(stdout(&override_run).lines().count(), 40);
    assert!(stderr(&override_run).contains("k = 1"));

    // A key the subcommand does not know is an error.
    std::fs::write(&cfg, "k = 2\nbogus = 1\n").unwrap();
    let bad = run(&["search", "--config", s(&cfg)]);
    assert!(!bad.status.success());
    assert!(stderr(&bad).contains("bogus"), "stderr: {}", stderr(&bad));
}

#[test]
fn missing_required_option_names_the_flag() {
    let out = run(&["search", "--k", "3"]);
    assert!(!out.status.success());
    assert!(
        stderr(&out).contains("--index-file"),
        "stderr: {}",
        stderr(&out)
    );
}

#[test]
fn threads_come_from_flag_then_env() {
    let fx = fixture(20, 6, 2, 91);
    let index = build_index(&fx, "flat", "l2", &[]);
    let args = [
        "eval",
        "--index-file",
        s(&index),
        "--query-features",
        s(&fx.features),
        "--csv",
        "--query-labels",
        s(&fx.labels),
        "--k",
        "1",
    ];

    let env_only = bin().args(args).env("SHITU_THREADS", "2").output().unwrap();
    assert!(stderr(&env_only).contains("threads = 2"));

    let flagged = bin()
        .args(args)
        .arg("--threads")
        .arg("1")
        .env("SHITU_THREADS", "2")
        .output()
        .unwrap();
    assert!(stderr(&flagged).contains("threads = 1"), "flag beats env");

    let bad = bin().args(args).env("SHITU_THREADS", "soon").output().unwrap();
    assert!(!bad.status.success());
    assert!(stderr(&bad).contains("SHITU_THREADS"));
}

#[test]
fn binary_index_accepts_float_queries_by_binarizing() {
    let fx = fixture(64, 16, 4, 101);
    let index = build_index(&fx, "flat", "hamming", &[]);
    let text = stdout(&run(&[
        "search",
        "--index-file",
        s(&index),
        "--query-features",
        s(&fx.features),
        "--csv",
        "--k",
        "1",
    ]));
    // Sign-binarizing the query reproduces the stored code: distance 0.
    for line in text.lines() {
        assert!(line.ends_with("\t0.000000"), "line: {line}");
    }
}
