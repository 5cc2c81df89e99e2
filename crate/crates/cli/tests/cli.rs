use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn mvdet(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_mvdet")).args(args).output().expect("spawn mvdet")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn report_value(dir: &Path, key: &str) -> f64 {
    let text = fs::read_to_string(dir.join("report.csv")).unwrap();
    text.lines()
        .find_map(|l| l.strip_prefix(&format!("{key},")))
        .unwrap_or_else(|| panic!("{key} missing from report"))
        .parse()
        .unwrap()
}

#[test]
fn gradcheck_passes_and_corrupt_fails() {
    let ok = mvdet(&["gradcheck", "--only", "softmax,bilinear_sample"]);
    assert!(ok.status.success(), "{}", stdout(&ok));
    assert!(stdout(&ok).contains("softmax"));
    let bad = mvdet(&["gradcheck", "--only", "softmax", "--corrupt"]);
    assert_eq!(bad.status.code(), Some(1));
    assert!(stdout(&bad).contains("FAIL"));
}

#[test]
fn unknown_gradcheck_name_is_an_error() {
    let o = mvdet(&["gradcheck", "--only", "nope"]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn eval_oracle_and_empty_bound_ap() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("oracle");
    let o = mvdet(&["eval", "--oracle", "--out-dir", out.to_str().unwrap()]);
    assert!(o.status.success());
    assert_eq!(report_value(&out, "ap@2"), 1.0);
    assert_eq!(report_value(&out, "center_error"), 0.0);
    let out = dir.path().join("empty");
    let o = mvdet(&["eval", "--empty", "--out-dir", out.to_str().unwrap()]);
    assert!(o.status.success());
    assert_eq!(report_value(&out, "ap@2"), 0.0);
}

#[test]
fn train_then_eval_and_dump() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().to_str().unwrap();
    let o = mvdet(&["train", "--steps", "3", "--out-dir", out, "--log-every", "0"]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let csv = fs::read_to_string(dir.path().join("loss.csv")).unwrap();
    assert_eq!(csv.lines().count(), 4);
    assert!(dir.path().join("checkpoint/manifest.toml").exists());
    assert!(dir.path().join("config.toml").exists());

    let o = mvdet(&["eval", "--out-dir", out]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    assert!(stdout(&o).contains("ap@2m"));
    for f in ["report.csv", "bev_boxes.svg", "heatmap.svg"] {
        assert!(dir.path().join(f).exists(), "{f}");
    }
    let r = report_value(dir.path(), "query_recall");
    assert!((0.0..=1.0).contains(&r));

    let o = mvdet(&["dump-heatmap", "--out-dir", out, "--frame", "2"]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let hm = fs::read_to_string(dir.path().join("heatmap.csv")).unwrap();
    assert_eq!(hm.lines().count(), 1 + 32 * 32);
    assert!(dir.path().join("features_view3.tensor").exists());
}

#[test]
fn scene_files_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let o = mvdet(&["gen-scene", "--scene-index", "3"]);
    assert!(o.status.success());
    let path = dir.path().join("scene.toml");
    fs::write(&path, &o.stdout).unwrap();
    let out = dir.path().join("dump");
    let o = mvdet(&["dump-heatmap", "--scene", path.to_str().unwrap(), "--out-dir", out.to_str().unwrap()]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let o = mvdet(&["dump-heatmap", "--frame", "99", "--out-dir", out.to_str().unwrap()]);
    assert!(!o.status.success());
}

#[test]
fn flags_override_the_preset() {
    let o = mvdet(&["show-config", "--temporal", "on", "--attn", "sca2d", "--seed", "7"]);
    assert!(o.status.success());
    let cfg = stdout(&o);
    assert!(cfg.contains("seed = 7"));
    assert!(cfg.contains("attention = \"sca2d\""));
    assert!(cfg.contains("feature_aggregation = false"));
    let paper = mvdet(&["show-config", "--preset", "paper-scale"]);
    assert!(stdout(&paper).contains("n_query = 900"));
    let bad = mvdet(&["show-config", "--preset", "nope"]);
    assert_eq!(bad.status.code(), Some(2));
}

#[test]
fn bench_writes_csv() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().to_str().unwrap();
    let o = mvdet(&["bench", "--out-dir", out, "--repeats", "1", "--queries", "0,10", "--grids", "8"]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let csv = fs::read_to_string(dir.path().join("bench.csv")).unwrap();
    assert_eq!(csv.lines().count(), 4);
    assert!(csv.contains("pca_forward,10,"));
}
