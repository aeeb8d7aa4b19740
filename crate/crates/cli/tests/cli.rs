use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_msq-bench"))
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().expect("binary runs")
}

fn ok(args: &[&str]) -> String {
    let out = run(args);
    assert!(
        out.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

fn gen(dir: &Path, name: &str, extra: &[&str]) -> PathBuf {
    let path = dir.join(name);
    let mut args = vec!["gen", "--out", p(&path)];
    args.extend_from_slice(extra);
    ok(&args);
    path
}

/// Parses a report into rows of column name -> value.
fn rows(csv: &str) -> Vec<Vec<(String, String)>> {
    let mut lines = csv.lines();
    let header: Vec<String> = lines.next().unwrap().split(',').map(String::from).collect();
    lines
        .map(|l| {
            header
                .iter()
                .cloned()
                .zip(l.split(',').map(String::from))
                .collect()
        })
        .collect()
}

fn field<'a>(row: &'a [(String, String)], name: &str) -> &'a str {
    &row.iter().find(|(k, _)| k == name).unwrap().1
}

#[test]
fn build_query_verify_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let data = gen(
        dir.path(),
        "poly.txt",
        &["--kind", "polygons", "--n", "600", "--seed", "3"],
    );
    let index = dir.path().join("poly.pmt");
    let summary = ok(&[
        "build",
        "--data",
        p(&data),
        "--capacity",
        "10",
        "--pivots",
        "16",
        "--out",
        p(&index),
    ]);
    assert!(summary.contains("pivots=16 inner_pivots=8"), "{summary}");

    let skyline = ok(&[
        "query",
        "--data",
        p(&data),
        "--index",
        p(&index),
        "--examples",
        "3",
    ]);
    let lines: Vec<&str> = skyline.lines().collect();
    assert!(lines[0].starts_with("record,id,d1,d2,d3,distance_computations"));
    assert!(lines.last().unwrap().starts_with("total,"));
    assert!(lines.len() >= 3);

    let limited = ok(&[
        "query",
        "--data",
        p(&data),
        "--index",
        p(&index),
        "--examples",
        "3",
        "--limit",
        "1",
    ]);
    assert_eq!(
        limited.lines().nth(1).unwrap().split(',').nth(1),
        lines[1].split(',').nth(1)
    );

    let knn = ok(&[
        "query",
        "--data",
        p(&data),
        "--index",
        p(&index),
        "--knn",
        "5",
    ]);
    assert_eq!(knn.lines().count(), 6);
    let range = ok(&[
        "query",
        "--data",
        p(&data),
        "--index",
        p(&index),
        "--range",
        "0",
    ]);
    assert_eq!(range.lines().next(), Some("id"));

    let verdict = ok(&[
        "verify",
        "--data",
        p(&data),
        "--index",
        p(&index),
        "--queries",
        "5",
        "--examples",
        "2",
    ]);
    assert!(verdict.starts_with("ok:"), "{verdict}");
}

#[test]
fn verify_fails_on_a_foreign_index() {
    let dir = tempfile::tempdir().unwrap();
    let a = gen(
        dir.path(),
        "a.txt",
        &["--n", "500", "--dim", "3", "--seed", "1"],
    );
    let b = gen(
        dir.path(),
        "b.txt",
        &["--n", "500", "--dim", "3", "--seed", "2"],
    );
    let index = dir.path().join("b.mt");
    ok(&[
        "build",
        "--data",
        p(&b),
        "--kind",
        "mtree",
        "--capacity",
        "8",
        "--out",
        p(&index),
    ]);
    let out = run(&[
        "verify",
        "--data",
        p(&a),
        "--index",
        p(&index),
        "--queries",
        "3",
    ]);
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("mismatch"));
}

#[test]
fn errors_exit_non_zero() {
    let dir = tempfile::tempdir().unwrap();
    let missing = dir.path().join("missing.txt");
    let out = run(&["bench", "--data", p(&missing)]);
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("cannot load dataset"));

    let vectors = gen(dir.path(), "v.txt", &["--n", "200", "--dim", "2"]);
    let polys = gen(dir.path(), "p.txt", &["--kind", "polygons", "--n", "200"]);
    let index = dir.path().join("p.pmt");
    ok(&[
        "build",
        "--data",
        p(&polys),
        "--pivots",
        "4",
        "--out",
        p(&index),
    ]);
    let out = run(&["query", "--data", p(&vectors), "--index", p(&index)]);
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("polygon"));

    let out = run(&["bench", "--data", p(&vectors), "--sweep", "height=1"]);
    assert!(!out.status.success());
    let out = run(&["bench", "--data", p(&vectors), "--variant", "B-tree"]);
    assert!(!out.status.success());
    let out = run(&[
        "bench",
        "--data",
        p(&vectors),
        "--kind",
        "mtree",
        "--variant",
        "PM-tree",
    ]);
    assert!(!out.status.success());
}

#[test]
fn bench_rows_agree_across_variants() {
    let dir = tempfile::tempdir().unwrap();
    let data = gen(dir.path(), "v.txt", &["--n", "2000", "--seed", "4"]);
    let out = dir.path().join("bench.csv");
    ok(&[
        "bench",
        "--data",
        p(&data),
        "--pivots",
        "32",
        "--queries",
        "50",
        "--out",
        p(&out),
    ]);
    let table = rows(&std::fs::read_to_string(&out).unwrap());
    assert_eq!(table.len(), 4);
    let size = field(&table[0], "avg_skyline_size").to_string();
    for r in &table {
        assert_eq!(field(r, "avg_skyline_size"), size);
        assert_eq!(field(r, "seq_scan_baseline"), "4000");
        let dc: f64 = field(r, "avg_distance_computations").parse().unwrap();
        assert!(dc <= 4000.0 + 32.0 * 2.0, "{dc}");
    }
}

#[test]
fn more_examples_give_larger_skylines() {
    let dir = tempfile::tempdir().unwrap();
    let data = gen(
        dir.path(),
        "v.txt",
        &["--n", "3000", "--dim", "8", "--seed", "6"],
    );
    let csv = ok(&[
        "bench",
        "--data",
        p(&data),
        "--pivots",
        "32",
        "--queries",
        "20",
        "--variant",
        "PM-tree+PSF+DEF",
        "--sweep",
        "mExamples=2,5",
    ]);
    let table = rows(&csv);
    let size = |i: usize| field(&table[i], "avg_skyline_size").parse::<f64>().unwrap();
    assert!(size(1) > size(0), "{} vs {}", size(1), size(0));
    assert_eq!(field(&table[0], "seq_scan_baseline"), "6000");
    assert_eq!(field(&table[1], "seq_scan_baseline"), "15000");
}

#[test]
fn sweep_axes_run() {
    let dir = tempfile::tempdir().unwrap();
    let data = gen(dir.path(), "p.txt", &["--kind", "polygons", "--n", "400"]);
    for sweep in [
        "pivots=0,8",
        "nodeSize=8,16",
        "dbSize=100,400",
        "partialK=1,5",
    ] {
        let csv = ok(&[
            "bench",
            "--data",
            p(&data),
            "--queries",
            "4",
            "--variant",
            "M-tree,PM-tree+PSF",
            "--sweep",
            sweep,
        ]);
        let table = rows(&csv);
        assert_eq!(table.len(), 4, "{sweep}");
        assert_eq!(
            field(&table[0], "sweep_axis"),
            sweep.split('=').next().unwrap()
        );
    }
}
