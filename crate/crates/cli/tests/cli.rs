use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn trickle_lab(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_trickle-lab"))
        .args(args)
        .env("TRICKLE_LAB_THREADS", "2")
        .output()
        .expect("binary runs")
}

fn write_config(dir: &Path, name: &str, body: &str) -> String {
    let path = dir.join(name);
    fs::write(&path, body).unwrap();
    path.to_str().unwrap().to_string()
}

#[test]
fn star_table_and_manifest() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(
        dir.path(),
        "star.json",
        r#"{"kind": "star-analysis", "alphas": [0.5, 0.6666666666666666, 0.75, 1]}"#,
    );
    let out = dir.path().join("out");
    let o = trickle_lab(&["star", "--config", &cfg, "--out", out.to_str().unwrap(), "--quiet"]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    assert!(o.stdout.is_empty());
    let csv = fs::read_to_string(out.join("figp_analysis.csv")).unwrap();
    assert_eq!(csv.lines().count(), 5);
    let manifest: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(out.join("manifest.json")).unwrap()).unwrap();
    assert_eq!(manifest["files"][0]["name"], "figp_analysis.csv");
    assert_eq!(manifest["files"][0]["sha256"].as_str().unwrap().len(), 64);
    // no temporary files are left behind
    let names: Vec<_> = fs::read_dir(&out).unwrap().map(|e| e.unwrap().file_name()).collect();
    assert_eq!(names.len(), 2);
}

#[test]
fn reruns_are_byte_identical() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(
        dir.path(),
        "rpl.json",
        r#"{
  "kind": "rpl",
  "replications": 2,
  "topology": {"family": "random-geometric", "n": 30, "side": 100, "avg_degree": 6},
  "policies": [{"fixed": {"k": 1}}, {"adaptive": {"alpha": 0.6666666666666666, "k_min": 1, "k_max": 10}}],
  "run": {"duration": 100000}
}"#,
    );
    let mut outputs = Vec::new();
    for run in ["a", "b"] {
        let out = dir.path().join(run);
        let o = trickle_lab(&["rpl", "--config", &cfg, "--out", out.to_str().unwrap(), "--seed", "7"]);
        assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
        outputs.push((
            fs::read(out.join("rpl_metrics.csv")).unwrap(),
            fs::read(out.join("manifest.json")).unwrap(),
        ));
    }
    assert_eq!(outputs[0], outputs[1]);
    let csv = String::from_utf8(outputs[0].0.clone()).unwrap();
    assert!(csv.starts_with("config,replication,formation_time,mean_dio,stretch,fairness\n"));
    assert_eq!(csv.lines().count(), 5);
}

#[test]
fn validate_reports_and_rejects() {
    let dir = tempfile::tempdir().unwrap();
    let good = write_config(dir.path(), "good.json", r#"{"kind": "steady-state", "replications": 3}"#);
    let o = trickle_lab(&["validate", "--config", &good]);
    assert!(o.status.success());
    let report = String::from_utf8(o.stdout).unwrap();
    assert!(report.contains("replication 2: seed"), "{report}");
    assert!(report.contains("estimated events"));
    assert!(!dir.path().join("out").exists());

    let bad_alpha = write_config(
        dir.path(),
        "alpha.json",
        "{\n  \"kind\": \"star-analysis\",\n  \"alphas\": [1.5]\n}",
    );
    let o = trickle_lab(&["validate", "--config", &bad_alpha]);
    assert!(!o.status.success());
    let err = String::from_utf8(o.stderr).unwrap();
    assert!(err.contains("alpha must lie in [0, 1]") && err.contains("line 3"), "{err}");

    let bad_k = write_config(
        dir.path(),
        "k.json",
        r#"{"kind": "rpl", "policies": [{"adaptive": {"alpha": 0.5, "k_min": 4, "k_max": 2}}]}"#,
    );
    let o = trickle_lab(&["validate", "--config", &bad_k]);
    assert!(!o.status.success());
    assert!(String::from_utf8(o.stderr).unwrap().contains("k_max (2) must be at least k_min (4)"));
}

#[test]
fn kind_mismatch_and_bad_threads() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "star.json", r#"{"kind": "star-analysis"}"#);
    let o = trickle_lab(&["sim", "--config", &cfg, "--out", dir.path().to_str().unwrap()]);
    assert!(!o.status.success());
    assert!(String::from_utf8(o.stderr).unwrap().contains("not steady-state"));

    let o = Command::new(env!("CARGO_BIN_EXE_trickle-lab"))
        .args(["star", "--config", &cfg, "--out", dir.path().join("x").to_str().unwrap()])
        .env("TRICKLE_LAB_THREADS", "zero")
        .output()
        .unwrap();
    assert!(!o.status.success());
}

#[test]
fn small_steady_state_sweep() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(
        dir.path(),
        "ss.json",
        r#"{
  "kind": "steady-state",
  "replications": 2,
  "topology": {"family": "random-geometric", "n": 40, "side": 100, "avg_degree": 5},
  "densities": [5, 8],
  "policies": [{"fixed": {"k": 1}}, {"adaptive": {"alpha": 0.75, "k_min": 1, "k_max": 30}}],
  "run": {"duration": 40, "warmup": 10}
}"#,
    );
    let out = dir.path().join("out");
    let o = trickle_lab(&["sim", "--config", &cfg, "--out", out.to_str().unwrap(), "--quiet"]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let fig1 = fs::read_to_string(out.join("fig1_fixed_k.csv")).unwrap();
    assert!(fig1.starts_with("topology,policy,degree,nodes,replications,p_broadcast,stderr,estimate\n"));
    assert!(fig1.contains("rgg-n40-d5,fixed-k1,"));
    assert!(fig1.contains("rgg-n40-d8,fixed-k1,"));
    let fig3 = fs::read_to_string(out.join("fig3_mean_k.csv")).unwrap();
    assert!(fig3.lines().skip(1).all(|l| l.contains("adaptive")));
    assert!(fs::read_to_string(out.join("fig2_adaptive.csv")).unwrap().lines().count() > 1);
}
