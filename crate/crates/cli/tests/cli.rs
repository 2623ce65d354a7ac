use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn echoseg(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_echoseg")).args(args).output().expect("binary runs")
}

fn code(o: &Output) -> i32 {
    o.status.code().expect("exit code")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn small_dataset(dir: &Path, count: &str) {
    let o = echoseg(&["phantom", "--out", dir.to_str().unwrap(), "--count", count, "--seed", "7", "--size", "32x32"]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
}

fn loss_columns(csv: &str) -> Vec<String> {
    csv.lines().map(|l| l.rsplit_once(',').unwrap().0.to_string()).collect()
}

#[test]
fn phantom_is_deterministic() {
    let dir = tempfile::tempdir().unwrap();
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    small_dataset(&a, "2");
    small_dataset(&b, "2");
    let manifest = fs::read_to_string(a.join("manifest.json")).unwrap();
    assert_eq!(manifest, fs::read_to_string(b.join("manifest.json")).unwrap());
    assert_eq!(manifest.matches("\"id\"").count(), 2);
    for f in ["videos/phantom_0001.mvst", "masks/phantom_0000.mvst"] {
        assert_eq!(fs::read(a.join(f)).unwrap(), fs::read(b.join(f)).unwrap());
    }
    assert!(a.join("run_config.json").exists());
}

#[test]
fn phantom_rejects_odd_size() {
    let dir = tempfile::tempdir().unwrap();
    let o = echoseg(&["phantom", "--out", dir.path().to_str().unwrap(), "--count", "2", "--size", "63x64"]);
    assert_eq!(code(&o), 1);
    assert!(!dir.path().join("manifest.json").exists());
}

#[test]
fn phantom_default_split_of_hundred() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path().join("d");
    let o = echoseg(&["phantom", "--out", d.to_str().unwrap(), "--count", "100", "--size", "16x16", "--frames", "4"]);
    assert_eq!(code(&o), 0);
    let m = fs::read_to_string(d.join("manifest.json")).unwrap();
    let count = |tag: &str| m.matches(&format!("\"split\": \"{tag}\"")).count();
    assert_eq!((count("train"), count("val"), count("test")), (64, 16, 20));
}

#[test]
fn train_smoke_is_reproducible_and_evaluates() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("data");
    small_dataset(&data, "6");
    let train = |out: &str| {
        let out = dir.path().join(out);
        let o = echoseg(&[
            "train", "--data", data.to_str().unwrap(), "--out", out.to_str().unwrap(),
            "--embed-dim", "8", "--epochs", "1", "--pretrain-epochs", "1", "--batch-size", "2",
        ]);
        assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
        fs::read_to_string(out.join("metrics.csv")).unwrap()
    };
    let a = train("a");
    assert_eq!(a.lines().count(), 3);
    assert_eq!(loss_columns(&a), loss_columns(&train("b")));

    // The echoed config alone reproduces the run.
    let echoed = dir.path().join("a/run_config.json");
    let text = fs::read_to_string(&echoed).unwrap().replace(dir.path().join("a").to_str().unwrap(), dir.path().join("c").to_str().unwrap());
    let cfg = dir.path().join("c.json");
    fs::write(&cfg, text).unwrap();
    let o = echoseg(&["train", "--config", cfg.to_str().unwrap()]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    assert_eq!(loss_columns(&a), loss_columns(&fs::read_to_string(dir.path().join("c/metrics.csv")).unwrap()));

    let report = dir.path().join("eval/report.csv");
    let o = echoseg(&[
        "eval", "--data", data.to_str().unwrap(), "--ckpt", dir.path().join("a/checkpoint").to_str().unwrap(),
        "--report", report.to_str().unwrap(), "--split", "all",
    ]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let csv = fs::read_to_string(&report).unwrap();
    let rows = csv.lines().skip(1).take_while(|l| !l.is_empty()).count();
    assert_eq!(rows, 6 * 2);
}

#[test]
fn ground_truth_scores_perfectly() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("data");
    small_dataset(&data, "4");
    let report = dir.path().join("gt.csv");
    let o = echoseg(&["eval", "--data", data.to_str().unwrap(), "--report", report.to_str().unwrap(), "--split", "all", "--ground-truth"]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let csv = fs::read_to_string(&report).unwrap();
    for line in csv.lines().skip(1).take_while(|l| !l.is_empty()) {
        let f: Vec<&str> = line.split(',').collect();
        assert_eq!(f[2], "1.000000", "{line}");
        assert_eq!(f[3], "0.000000", "{line}");
        assert_eq!(f[5], f[6], "{line}");
    }
    assert!(csv.contains("# ejection fraction"));
    assert!(csv.lines().any(|l| l.starts_with("pearson,")));
}

#[test]
fn gradcheck_single_op_and_negative_control() {
    let o = echoseg(&["gradcheck", "--op", "temporal_fusion_attention"]);
    assert_eq!(code(&o), 0);
    assert!(stdout(&o).contains("PASS"));
    let o = echoseg(&["gradcheck", "--op", "corrupted_backward"]);
    assert_eq!(code(&o), 2);
    assert!(stdout(&o).contains("FAIL"));
    assert_eq!(code(&echoseg(&["gradcheck", "--op", "nope"])), 1);
}

#[test]
fn usage_errors_exit_one() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(code(&echoseg(&[])), 1);
    assert_eq!(code(&echoseg(&["frobnicate"])), 1);
    let o = echoseg(&["ablate", "--axis", "depth", "--data", "x", "--out", "y"]);
    assert_eq!(code(&o), 1);
    let cfg = dir.path().join("bad.json");
    fs::write(&cfg, r#"{"train": {"epochs": 1, "learning_rat": 0.1}}"#).unwrap();
    let o = echoseg(&["train", "--config", cfg.to_str().unwrap(), "--data", "x", "--out", "y"]);
    assert_eq!(code(&o), 1);
    assert_eq!(code(&echoseg(&["--help"])), 0);
}

#[test]
fn missing_dataset_is_a_runtime_failure() {
    let dir = tempfile::tempdir().unwrap();
    let o = echoseg(&["train", "--data", dir.path().join("none").to_str().unwrap(), "--out", dir.path().join("o").to_str().unwrap()]);
    assert_eq!(code(&o), 2);
}
