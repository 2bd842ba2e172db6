use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use tempfile::TempDir;

const BIN: &str = env!("CARGO_BIN_EXE_unifrac");

fn run(args: &[&str]) -> Output {
    Command::new(BIN).args(args).output().expect("binary runs")
}

fn stderr(out: &Output) -> String {
    String::from_utf8_lossy(&out.stderr).into_owned()
}

fn stdout(out: &Output) -> String {
    String::from_utf8_lossy(&out.stdout).into_owned()
}

/// 32 samples so the full range is 16 stripes.
struct Fixture {
    dir: TempDir,
}

impl Fixture {
    fn new() -> Self {
        let dir = TempDir::new().unwrap();
        let leaves = 12;
        let mut tree = String::from("F0:0.3");
        for i in 1..leaves {
            tree = format!("({tree},F{i}:{}):{}", 0.1 * i as f64, 0.05 * i as f64);
        }
        fs::write(dir.path().join("t.nwk"), format!("{tree};")).unwrap();

        let samples = 32;
        let mut table = String::from("#OTU ID");
        for s in 0..samples {
            table.push_str(&format!("\tS{s}"));
        }
        table.push('\n');
        for f in 0..leaves {
            table.push_str(&format!("F{f}"));
            for s in 0..samples {
                let count = (f * 7 + s * 3) % 5;
                let count = if (f + s) % 4 == 0 { count + 1 } else { count };
                table.push_str(&format!("\t{count}"));
            }
            table.push('\n');
        }
        fs::write(dir.path().join("x.tsv"), table).unwrap();
        Self { dir }
    }

    fn path(&self, name: &str) -> PathBuf {
        self.dir.path().join(name)
    }

    fn arg(&self, name: &str) -> String {
        self.path(name).display().to_string()
    }

    fn compute(&self, extra: &[&str], out: &str) -> Output {
        let (tree, table, out) = (self.arg("t.nwk"), self.arg("x.tsv"), self.arg(out));
        let mut args = vec!["compute", "--tree", &tree, "--table", &table, "--out", &out];
        args.extend_from_slice(extra);
        run(&args)
    }
}

fn field(text: &str, key: &str) -> f64 {
    let prefix = format!("{key}\t");
    text.lines()
        .find_map(|l| l.strip_prefix(prefix.as_str()))
        .unwrap_or_else(|| panic!("no {key} in {text}"))
        .parse()
        .unwrap()
}

fn read(path: &Path) -> Vec<u8> {
    fs::read(path).unwrap()
}

#[test]
fn compute_writes_matrix_and_manifest() {
    let fx = Fixture::new();
    let out = fx.compute(&["--metric", "unweighted"], "d.tsv");
    assert!(out.status.success(), "{}", stderr(&out));
    let tsv = String::from_utf8(read(&fx.path("d.tsv"))).unwrap();
    let lines: Vec<&str> = tsv.lines().collect();
    assert_eq!(lines.len(), 33);
    assert!(lines[0].starts_with("\tS0\tS1\t"));
    assert!(lines[1].starts_with("S0\t0\t"));

    let manifest: serde_json::Value =
        serde_json::from_slice(&read(&fx.path("d.tsv.manifest.json"))).unwrap();
    assert_eq!(manifest["metric"], "unweighted");
    assert_eq!(manifest["precision"], "fp64");
    assert_eq!(manifest["variant"], "tiled");
    assert_eq!(manifest["batch_size"], 64);
    assert_eq!(manifest["step_size"], 16);
    assert_eq!(manifest["stripes"], serde_json::json!([0, 16]));
    assert_eq!(manifest["inputs"][0]["sha256"].as_str().unwrap().len(), 64);
    assert!(manifest["counters"]["accumulator_writes"].as_u64().unwrap() > 0);
}

#[test]
fn manifest_digests_are_stable() {
    let fx = Fixture::new();
    assert!(fx
        .compute(&["--metric", "weighted-normalized"], "a.tsv")
        .status
        .success());
    assert!(fx
        .compute(
            &["--metric", "weighted-normalized", "--variant", "naive"],
            "b.tsv"
        )
        .status
        .success());
    let a: serde_json::Value =
        serde_json::from_slice(&read(&fx.path("a.tsv.manifest.json"))).unwrap();
    let b: serde_json::Value =
        serde_json::from_slice(&read(&fx.path("b.tsv.manifest.json"))).unwrap();
    assert_eq!(a["inputs"][0]["sha256"], b["inputs"][0]["sha256"]);
    assert_eq!(a["inputs"][1]["sha256"], b["inputs"][1]["sha256"]);
    assert_eq!(read(&fx.path("a.tsv")), read(&fx.path("b.tsv")));
}

#[test]
fn split_runs_merge_byte_identical() {
    let fx = Fixture::new();
    for metric in ["unweighted", "weighted-unnormalized", "weighted-normalized"] {
        assert!(fx
            .compute(&["--metric", metric], "full.tsv")
            .status
            .success());
        assert!(fx
            .compute(&["--metric", metric, "--stripes", "0:8"], "p0.strf")
            .status
            .success());
        let out = fx.compute(
            &[
                "--metric",
                metric,
                "--stripes",
                "8:16",
                "--variant",
                "batched",
            ],
            "p1.strf",
        );
        assert!(out.status.success(), "{}", stderr(&out));
        let out = run(&[
            "merge",
            "--table",
            &fx.arg("x.tsv"),
            "--out",
            &fx.arg("merged.tsv"),
            &fx.arg("p1.strf"),
            &fx.arg("p0.strf"),
        ]);
        assert!(out.status.success(), "{}", stderr(&out));
        assert_eq!(
            read(&fx.path("merged.tsv")),
            read(&fx.path("full.tsv")),
            "{metric}"
        );
        assert!(fx.path("merged.tsv.manifest.json").exists());
    }
}

#[test]
fn merge_single_full_part_matches_compute() {
    let fx = Fixture::new();
    assert!(fx
        .compute(
            &["--metric", "unweighted", "--precision", "fp32"],
            "full.tsv"
        )
        .status
        .success());
    assert!(fx
        .compute(
            &[
                "--metric",
                "unweighted",
                "--precision",
                "fp32",
                "--stripes",
                "0:16"
            ],
            "all.strf"
        )
        .status
        .success());
    let out = run(&[
        "merge",
        "--table",
        &fx.arg("x.tsv"),
        "--out",
        &fx.arg("m.tsv"),
        &fx.arg("all.strf"),
    ]);
    assert!(out.status.success(), "{}", stderr(&out));
    assert_eq!(read(&fx.path("m.tsv")), read(&fx.path("full.tsv")));
}

#[test]
fn merge_reports_gap() {
    let fx = Fixture::new();
    assert!(fx
        .compute(&["--metric", "unweighted", "--stripes", "0:8"], "p0.strf")
        .status
        .success());
    let out = run(&[
        "merge",
        "--table",
        &fx.arg("x.tsv"),
        "--out",
        &fx.arg("m.tsv"),
        &fx.arg("p0.strf"),
    ]);
    assert_eq!(out.status.code(), Some(1));
    assert!(stderr(&out).contains("gap at 8:16"), "{}", stderr(&out));
}

#[test]
fn merge_reports_overlap_and_mismatch() {
    let fx = Fixture::new();
    assert!(fx
        .compute(&["--metric", "unweighted", "--stripes", "0:9"], "a.strf")
        .status
        .success());
    assert!(fx
        .compute(&["--metric", "unweighted", "--stripes", "8:16"], "b.strf")
        .status
        .success());
    let out = run(&[
        "merge",
        "--table",
        &fx.arg("x.tsv"),
        "--out",
        &fx.arg("m.tsv"),
        &fx.arg("a.strf"),
        &fx.arg("b.strf"),
    ]);
    assert_eq!(out.status.code(), Some(1));
    assert!(stderr(&out).contains("overlap"), "{}", stderr(&out));

    assert!(fx
        .compute(
            &["--metric", "weighted-normalized", "--stripes", "9:16"],
            "c.strf"
        )
        .status
        .success());
    let out = run(&[
        "merge",
        "--table",
        &fx.arg("x.tsv"),
        "--out",
        &fx.arg("m.tsv"),
        &fx.arg("a.strf"),
        &fx.arg("c.strf"),
    ]);
    assert_eq!(out.status.code(), Some(1));

    assert!(fx
        .compute(
            &[
                "--metric",
                "unweighted",
                "--precision",
                "fp32",
                "--stripes",
                "9:16"
            ],
            "d.strf"
        )
        .status
        .success());
    let out = run(&[
        "merge",
        "--table",
        &fx.arg("x.tsv"),
        "--out",
        &fx.arg("m.tsv"),
        &fx.arg("a.strf"),
        &fx.arg("d.strf"),
    ]);
    assert_eq!(out.status.code(), Some(1));
    assert!(stderr(&out).contains("precision"), "{}", stderr(&out));
}

#[test]
fn usage_errors_exit_2() {
    let fx = Fixture::new();
    assert_eq!(
        fx.compute(&["--metric", "bogus"], "d.tsv").status.code(),
        Some(2)
    );
    assert_eq!(
        fx.compute(&["--metric", "unweighted", "--stripes", "8"], "d.tsv")
            .status
            .code(),
        Some(2)
    );
    assert_eq!(
        fx.compute(&["--metric", "unweighted", "--precision", "fp16"], "d.tsv")
            .status
            .code(),
        Some(2)
    );
    assert_eq!(
        run(&["bench", "--variants", "naive,warp"]).status.code(),
        Some(2)
    );
    assert_eq!(run(&["frobnicate"]).status.code(), Some(2));
}

#[test]
fn runtime_errors_exit_1() {
    let fx = Fixture::new();
    fs::write(fx.path("bad.nwk"), "((A:1,B:2);").unwrap();
    let out = run(&[
        "compute",
        "--tree",
        &fx.arg("bad.nwk"),
        "--table",
        &fx.arg("x.tsv"),
        "--metric",
        "unweighted",
        "--out",
        &fx.arg("d.tsv"),
    ]);
    assert_eq!(out.status.code(), Some(1));
    assert!(stderr(&out).contains("bad.nwk"));
    assert_eq!(
        fx.compute(&["--metric", "unweighted", "--stripes", "10:40"], "p.strf")
            .status
            .code(),
        Some(1)
    );
    assert_eq!(
        fx.compute(&["--metric", "unweighted", "--step-size", "0"], "d.tsv")
            .status
            .code(),
        Some(1)
    );
}

#[test]
fn compare_self_is_perfect() {
    let fx = Fixture::new();
    assert!(fx
        .compute(&["--metric", "weighted-unnormalized"], "d.tsv")
        .status
        .success());
    let out = run(&[
        "compare",
        &fx.arg("d.tsv"),
        &fx.arg("d.tsv"),
        "--permutations",
        "99",
        "--seed",
        "7",
    ]);
    assert!(out.status.success(), "{}", stderr(&out));
    let text = stdout(&out);
    assert!(text.contains("r\t1\n"), "{text}");
    assert!(text.contains("r_squared\t1\n"));
    assert!(text.contains("p_value\t0.01\n"));
    assert!(text.contains("permutations\t99\n"));
    assert!(text.contains("seed\t7\n"));
    assert!(text.contains("correlation\tpearson\n"));
}

#[test]
fn compare_fp32_against_fp64() {
    let fx = Fixture::new();
    assert!(fx
        .compute(
            &["--metric", "weighted-normalized", "--precision", "fp32"],
            "a.tsv"
        )
        .status
        .success());
    assert!(fx
        .compute(&["--metric", "weighted-normalized"], "b.tsv")
        .status
        .success());
    let out = run(&["compare", &fx.arg("a.tsv"), &fx.arg("b.tsv")]);
    assert!(out.status.success(), "{}", stderr(&out));
    let text = stdout(&out);
    assert!(field(&text, "r_squared") >= 0.9999, "{text}");
}

#[test]
fn compare_mismatched_ids_fails() {
    let fx = Fixture::new();
    fs::write(fx.path("a.tsv"), "\ta\tb\na\t0\t1\nb\t1\t0\n").unwrap();
    fs::write(fx.path("b.tsv"), "\ta\tc\na\t0\t1\nc\t1\t0\n").unwrap();
    let out = run(&["compare", &fx.arg("a.tsv"), &fx.arg("b.tsv")]);
    assert_eq!(out.status.code(), Some(1));
    assert!(stderr(&out).contains("sample ids"));
}

#[test]
fn compare_is_order_normalized() {
    let fx = Fixture::new();
    fs::write(
        fx.path("a.tsv"),
        "\ta\tb\tc\na\t0\t1\t2\nb\t1\t0\t3\nc\t2\t3\t0\n",
    )
    .unwrap();
    fs::write(
        fx.path("b.tsv"),
        "\tc\tb\ta\nc\t0\t3\t2\nb\t3\t0\t1\na\t2\t1\t0\n",
    )
    .unwrap();
    let out = run(&[
        "compare",
        &fx.arg("a.tsv"),
        &fx.arg("b.tsv"),
        "--permutations",
        "9",
    ]);
    assert!(out.status.success(), "{}", stderr(&out));
    assert!((field(&stdout(&out), "r") - 1.0).abs() < 1e-12);
}

fn bench_rows(text: &str) -> Vec<Vec<String>> {
    text.lines()
        .skip(1)
        .map(|l| l.split('\t').map(str::to_string).collect())
        .collect()
}

#[test]
fn bench_write_ratio() {
    // Six leaves give E = 10 embedding rows.
    let out = run(&[
        "bench",
        "--n",
        "8",
        "--features",
        "6",
        "--batch-size",
        "4",
        "--variants",
        "naive,batched",
    ]);
    assert!(out.status.success(), "{}", stderr(&out));
    let text = stdout(&out);
    assert!(text.starts_with("variant\tmin_s\tmedian_s\t"));
    let rows = bench_rows(&text);
    assert_eq!(rows.len(), 2);
    assert_eq!(rows[0][0], "naive");
    assert_eq!(rows[0][4], "10");
    assert_eq!(rows[0][7], "10");
    assert_eq!(rows[1][0], "batched");
    assert_eq!(rows[1][7], "3");
}

#[test]
fn bench_repeat_reports_min_and_median() {
    let out = run(&[
        "bench",
        "--n",
        "16",
        "--features",
        "20",
        "--repeat",
        "3",
        "--variants",
        "tiled",
    ]);
    assert!(out.status.success(), "{}", stderr(&out));
    let rows = bench_rows(&stdout(&out));
    assert_eq!(rows[0][3], "3");
    let min: f64 = rows[0][1].parse().unwrap();
    let median: f64 = rows[0][2].parse().unwrap();
    assert!(min <= median);
}

#[test]
fn sparse_table_input() {
    let fx = Fixture::new();
    fs::write(fx.path("t4.nwk"), "((A:1,B:2):0.5,(C:1,D:1):1);").unwrap();
    fs::write(
        fx.path("dense.tsv"),
        "#OTU\tS1\tS2\tS3\nA\t1\t0\t3\nB\t0\t2\t1\nC\t4\t0\t0\nD\t0\t1\t0\n",
    )
    .unwrap();
    fs::write(
        fx.path("sparse.tsv"),
        "#samples\tS1\tS2\tS3\nC\tS1\t4\nA\tS3\t3\nB\tS2\t2\nA\tS1\t1\nD\tS2\t1\nB\tS3\t1\n",
    )
    .unwrap();
    for (table, fmt, out) in [
        ("dense.tsv", "tsv-dense", "a.tsv"),
        ("sparse.tsv", "tsv-sparse", "b.tsv"),
    ] {
        let o = run(&[
            "compute",
            "--tree",
            &fx.arg("t4.nwk"),
            "--table",
            &fx.arg(table),
            "--table-format",
            fmt,
            "--metric",
            "weighted-normalized",
            "--out",
            &fx.arg(out),
        ]);
        assert!(o.status.success(), "{}", stderr(&o));
    }
    assert_eq!(read(&fx.path("a.tsv")), read(&fx.path("b.tsv")));
}
