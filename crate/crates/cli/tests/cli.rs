//! End-to-end runs of the `gprloc` binary on small simulated sequences.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use gprloc_cli::{read_sequence, write_sequence};

const SMALL: &str = r#"
seed = 5

[model]
token_dim = 16
layers = 1
heads = 2
head_dim = 8
window_k = 4

[train]
epochs = 2
batch_size = 16

[simulation]
duration = 20.0
train_sequences = 2
val_sequences = 1
test_sequences = 1
"#;

fn gprloc(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_gprloc")).args(args).output().expect("binary runs")
}

fn ok(args: &[&str]) -> String {
    let o = gprloc(args);
    assert!(o.status.success(), "{args:?} failed: {}", String::from_utf8_lossy(&o.stderr));
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

struct Fixture {
    _dir: tempfile::TempDir,
    root: PathBuf,
    config: PathBuf,
}

impl Fixture {
    fn new() -> Self {
        let dir = tempfile::tempdir().unwrap();
        let root = dir.path().to_path_buf();
        let config = root.join("exp.toml");
        fs::write(&config, SMALL).unwrap();
        Self { _dir: dir, root, config }
    }

    fn path(&self, name: &str) -> PathBuf {
        self.root.join(name)
    }

    fn run(&self, args: &[&str]) -> String {
        let mut all = vec!["--config", s(&self.config)];
        all.extend_from_slice(args);
        ok(&all)
    }

    /// Simulates `seqs/seq_000..` and trains a checkpoint on them.
    fn trained(&self) -> PathBuf {
        let seqs = self.path("seqs");
        self.run(&["simulate", "--count", "3", "--out", s(&seqs)]);
        let model = self.path("model");
        self.run(&[
            "train",
            "--train",
            s(&seqs.join("seq_000")),
            s(&seqs.join("seq_001")),
            "--val",
            s(&seqs.join("seq_002")),
            "--out",
            s(&model),
        ]);
        model.join("model.gprf")
    }
}

fn data_rows(path: &Path) -> usize {
    fs::read_to_string(path).unwrap().lines().skip(1).filter(|l| !l.is_empty()).count()
}

#[test]
fn simulated_sequences_round_trip() {
    let f = Fixture::new();
    let dir = f.path("seq");
    f.run(&["simulate", "--out", s(&dir)]);
    let seq = read_sequence(&dir).unwrap();
    assert!(!seq.gpr.is_empty() && !seq.truth.is_empty());
    let copy = f.path("copy");
    write_sequence(&copy, &seq).unwrap();
    for file in ["manifest.toml", "gpr.csv", "encoders.csv", "imu.csv", "truth.csv"] {
        assert_eq!(fs::read(dir.join(file)).unwrap(), fs::read(copy.join(file)).unwrap(), "{file}");
    }
}

#[test]
fn filter_writes_one_row_per_epoch() {
    let f = Fixture::new();
    let dir = f.path("seq");
    f.run(&["simulate", "--out", s(&dir)]);
    let out = f.path("bscan.csv");
    f.run(&["filter", "--seq", s(&dir), "--out", s(&out)]);
    let seq = read_sequence(&dir).unwrap();
    assert_eq!(data_rows(&out), seq.gpr.len() / seq.manifest.rates.stack_repeats);
}

#[test]
fn infer_row_counts_follow_the_stride() {
    let f = Fixture::new();
    let ckpt = f.trained();
    let k = 4;
    let seq_dir = f.path("seqs").join("seq_000");
    let seq = read_sequence(&seq_dir).unwrap();
    let stack = seq.manifest.rates.stack_repeats;
    let n = seq.gpr.len() / stack;

    let preds = f.path("p.csv");
    f.run(&["infer", "--seq", s(&seq_dir), "--checkpoint", s(&ckpt), "--stride", "1", "--out", s(&preds)]);
    assert_eq!(data_rows(&preds), n - k + 1);
    f.run(&["infer", "--seq", s(&seq_dir), "--checkpoint", s(&ckpt), "--stride", &k.to_string(), "--out", s(&preds)]);
    assert_eq!(data_rows(&preds), n / k);

    let mut short = seq.clone();
    short.gpr.truncate(k * stack);
    let short_dir = f.path("short");
    write_sequence(&short_dir, &short).unwrap();
    f.run(&["infer", "--seq", s(&short_dir), "--checkpoint", s(&ckpt), "--out", s(&preds)]);
    assert_eq!(data_rows(&preds), 1);

    short.gpr.truncate((k - 1) * stack);
    write_sequence(&short_dir, &short).unwrap();
    let o = gprloc(&[
        "--config",
        s(&f.config),
        "infer",
        "--seq",
        s(&short_dir),
        "--checkpoint",
        s(&ckpt),
        "--out",
        s(&preds),
    ]);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("k = 4"));
}

#[test]
fn self_comparison_scores_zero() {
    let f = Fixture::new();
    let dir = f.path("seq");
    f.run(&["simulate", "--out", s(&dir)]);
    let report = f.path("report");
    let truth = dir.join("truth.csv");
    f.run(&["eval", "--seq", s(&dir), "--trajectory", &format!("truth={}", s(&truth)), "--out", s(&report)]);
    let ate = fs::read_to_string(report.join("ate.csv")).unwrap();
    let header: Vec<&str> = ate.lines().next().unwrap().split(',').collect();
    let col = header.iter().position(|h| h.contains("ate")).expect("ATE column");
    let row = ate.lines().find(|l| l.contains("truth")).expect("truth row");
    let v: f64 = row.split(',').nth(col).unwrap().parse().unwrap();
    assert!(v.abs() < 1e-9, "{ate}");
    assert!(report.join("displacement_rmse.csv").is_file());
}

#[test]
fn fuse_with_and_without_gpr() {
    let f = Fixture::new();
    let ckpt = f.trained();
    let seq_dir = f.path("seqs").join("seq_002");
    let preds = f.path("p.csv");
    f.run(&["infer", "--seq", s(&seq_dir), "--checkpoint", s(&ckpt), "--out", s(&preds)]);
    let (a, b) = (f.path("gpr.csv"), f.path("enc.csv"));
    f.run(&["fuse", "--seq", s(&seq_dir), "--predictions", s(&preds), "--out", s(&a)]);
    f.run(&["fuse", "--seq", s(&seq_dir), "--no-gpr", "--out", s(&b)]);
    assert!(data_rows(&a) > 10 && data_rows(&b) > 10);

    let o = gprloc(&["--config", s(&f.config), "fuse", "--seq", s(&seq_dir), "--out", s(&a)]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn ablate_writes_one_row_per_value() {
    let f = Fixture::new();
    let out = f.path("ablate");
    f.run(&["ablate", "--axis", "alpha", "--values", "0.2,0.8", "--out", s(&out)]);
    assert_eq!(data_rows(&out.join("ablation_alpha.csv")), 2);
    let svg = fs::read_to_string(out.join("ablation_alpha.svg")).unwrap();
    assert!(svg.starts_with("<svg") && svg.trim_end().ends_with("</svg>"));
}

#[test]
fn input_and_config_errors_exit_with_two() {
    let f = Fixture::new();
    let missing = f.path("nope");
    let o = gprloc(&["filter", "--seq", s(&missing), "--out", s(&f.path("x.csv"))]);
    assert_eq!(o.status.code(), Some(2));

    let bad = f.path("bad.toml");
    fs::write(&bad, "[model]\ndepth = 3\n").unwrap();
    let o = gprloc(&["--config", s(&bad), "simulate", "--out", s(&f.path("y"))]);
    assert_eq!(o.status.code(), Some(2));

    let o = gprloc(&["simulate"]);
    assert_eq!(o.status.code(), Some(2), "missing --out");
    let o = gprloc(&["no-such-command"]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn json_errors_carry_kind_and_code() {
    let f = Fixture::new();
    let o = gprloc(&["--error-format", "json", "filter", "--seq", s(&f.path("nope")), "--out", s(&f.path("x"))]);
    assert_eq!(o.status.code(), Some(2));
    let v: serde_json::Value = serde_json::from_slice(&o.stderr).expect("stderr is JSON");
    assert_eq!(v["exit_code"], 2);
    assert_eq!(v["error"], "input");
    assert!(v["message"].as_str().unwrap().contains("nope"));
}

#[test]
fn malformed_csv_reports_the_line() {
    let f = Fixture::new();
    let dir = f.path("seq");
    f.run(&["simulate", "--out", s(&dir)]);
    let imu = dir.join("imu.csv");
    let mut text = fs::read_to_string(&imu).unwrap();
    text.push_str("1e9,not-a-number,0,0,0\n");
    fs::write(&imu, text).unwrap();
    let o = gprloc(&["filter", "--seq", s(&dir), "--out", s(&f.path("x.csv"))]);
    assert_eq!(o.status.code(), Some(2));
    let err = String::from_utf8_lossy(&o.stderr);
    assert!(err.contains("imu.csv") && err.contains("line"), "{err}");
}
