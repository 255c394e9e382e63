use std::fs;
use std::path::Path;
use std::process::{Command, Output};

const SMALL: &str = r#"
seed = 5
schemes = ["gaussian-shading", "tree-ring"]
population = 3
calibration = 100

[model]
d = 64
k = 4

[keys]
gs_k_bits = 16
gs_users = 1
gs_fpr = 0.01
tr_radius = 2

[removal]
kind = "removal"
steps = 2

[forgery]
kind = "forgery"
steps = 2
"#;

fn run(dir: &Path, args: &[&str]) -> Output {
    let cfg = dir.join("small.toml");
    fs::write(&cfg, SMALL).unwrap();
    Command::new(env!("CARGO_BIN_EXE_wmlab"))
        .arg("--config")
        .arg(&cfg)
        .arg("--out")
        .arg(dir.join("out"))
        .args(args)
        .output()
        .unwrap()
}

fn ok(dir: &Path, args: &[&str]) -> String {
    let out = run(dir, args);
    assert!(out.status.success(), "{args:?}: {}", String::from_utf8_lossy(&out.stderr));
    String::from_utf8(out.stdout).unwrap()
}

fn header(path: &Path) -> String {
    fs::read_to_string(path).unwrap().lines().next().unwrap().to_string()
}

#[test]
fn show_config_applies_overrides() {
    let dir = tempfile::tempdir().unwrap();
    let text = ok(dir.path(), &["--seed", "99", "show-config"]);
    assert!(text.contains("seed = 99"));
    assert!(text.contains("population = 3"));
}

#[test]
fn evaluate_writes_all_outputs() {
    let dir = tempfile::tempdir().unwrap();
    let stdout = ok(dir.path(), &["evaluate"]);
    assert!(stdout.contains("gaussian-shading,pgid-r,removal"));
    let out = dir.path().join("out");
    assert_eq!(header(&out.join("results.csv")), "scheme,defense,attack,steps,det_rate,bit_acc,auc");
    assert_eq!(header(&out.join("pca_tree-ring.csv")), "group,pc1,pc2");
    let summary: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(out.join("summary.json")).unwrap()).unwrap();
    assert_eq!(summary["config"]["population"], 3);
}

#[test]
fn generate_attack_then_defend() {
    let dir = tempfile::tempdir().unwrap();
    ok(dir.path(), &["attack"]);
    let images = dir.path().join("out/images.csv");
    let groups: std::collections::BTreeSet<String> = fs::read_to_string(&images)
        .unwrap()
        .lines()
        .skip(1)
        .map(|l| l.split(',').next().unwrap().to_string())
        .collect();
    assert_eq!(groups.len(), 8, "{groups:?}");

    ok(dir.path(), &["--profile", "baseline", "defend", "--input", images.to_str().unwrap()]);
    let det = dir.path().join("out/detections_baseline.csv");
    assert_eq!(header(&det), "scheme,statistic,threshold,detected,bit_accuracy,p_value,group,index");
    let body = fs::read_to_string(&det).unwrap();
    assert_eq!(body.lines().count(), 1 + 8 * 3);
    // Freshly generated watermarked images are detected.
    for line in body.lines().filter(|l| l.contains("/watermarked,")) {
        assert_eq!(line.split(',').nth(3), Some("true"), "{line}");
    }

    let gen = tempfile::tempdir().unwrap();
    ok(gen.path(), &["generate"]);
    let rows = fs::read_to_string(gen.path().join("out/images.csv")).unwrap().lines().count();
    assert_eq!(rows, 1 + 2 * 2 * 3);
}

#[test]
fn sweep_bench_and_calibrate() {
    let dir = tempfile::tempdir().unwrap();
    ok(dir.path(), &["--profile", "pgid-r", "sweep", "--axis", "gamma", "--values", "0,0.045"]);
    let sweep = fs::read_to_string(dir.path().join("out/sweep_gamma.csv")).unwrap();
    assert!(sweep.starts_with("axis,value,scheme,defense,attack,steps,det_rate,bit_acc,auc"));
    assert_eq!(sweep.lines().count(), 1 + 2 * 2 * 3 * 4);

    let bench = ok(dir.path(), &["bench", "--images", "1"]);
    assert!(bench.contains("ddim,") && bench.contains("pgid-f,"));

    let thr = ok(dir.path(), &["calibrate"]);
    assert!(thr.starts_with("scheme,target_fpr,threshold"));
    assert!(dir.path().join("out/thresholds.csv").exists());
}

#[test]
fn bad_arguments_fail_cleanly() {
    let dir = tempfile::tempdir().unwrap();
    let out = run(dir.path(), &["sweep", "--axis", "zeta", "--values", "1"]);
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("zeta"));
    let out = run(dir.path(), &["--profile", "pgid-x", "evaluate"]);
    assert!(!out.status.success());
    let out = run(dir.path(), &["defend", "--input", "/nonexistent/images.csv"]);
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("nonexistent"));
}
