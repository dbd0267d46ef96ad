use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_activegame"))
}

fn preset(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../core/presets").join(name)
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().unwrap()
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

#[test]
fn simulate_writes_csv_and_is_reproducible() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = preset("paper_table1_alg2.cfg");
    let out = dir.path().to_str().unwrap();
    let args = [
        "simulate",
        "--config",
        cfg.to_str().unwrap(),
        "--out",
        out,
        "--paths",
        "2",
        "--horizon",
        "3",
        "--seed",
        "7",
    ];
    let o = run(&args);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let first = std::fs::read(dir.path().join("trajectories.csv")).unwrap();
    let text = String::from_utf8(first.clone()).unwrap();
    assert_eq!(text.lines().count(), 1 + 2 * 3);
    assert!(text.starts_with("path_id,t,uL_1,uL_2,uF_1,uF_2,theta1,theta2,theta3,rho,criterion,expected_cost\n"));

    assert!(run(&args).status.success());
    assert_eq!(std::fs::read(dir.path().join("trajectories.csv")).unwrap(), first);
}

#[test]
fn simulate_then_summarize_json() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = preset("paper_table1_alg1.cfg");
    let out = dir.path().to_str().unwrap();
    let common = ["--config", cfg.to_str().unwrap(), "--out", out, "--format", "json"];
    let o = run(&[&["simulate"], &common[..], &["--paths", "3", "--horizon", "2", "--criterion", "A"]].concat());
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let input = dir.path().join("trajectories.json");
    let bundle: serde_json::Value = serde_json::from_slice(&std::fs::read(&input).unwrap()).unwrap();
    assert_eq!(bundle["metadata"]["artifact_version"], "1");
    assert_eq!(bundle["metadata"]["config"]["criterion"], "A");
    assert_eq!(bundle["runs"].as_array().unwrap().len(), 3);

    let o = run(&[&["summarize"], &common[..], &["--input", input.to_str().unwrap()]].concat());
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let summary: serde_json::Value =
        serde_json::from_slice(&std::fs::read(dir.path().join("summary.json")).unwrap()).unwrap();
    assert_eq!(summary["errors"]["rows"].as_array().unwrap().len(), 2);
    assert_eq!(summary["bias"]["components"].as_array().unwrap().len(), 3);
}

#[test]
fn summarize_csv_outputs() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = preset("paper_table1_alg1.cfg");
    let out = dir.path().to_str().unwrap();
    let common = ["--config", cfg.to_str().unwrap(), "--out", out];
    assert!(run(&[&["simulate"], &common[..], &["--paths", "2", "--horizon", "2"]].concat()).status.success());
    let input = dir.path().join("trajectories.csv");
    let o = run(&[&["summarize"], &common[..], &["--input", input.to_str().unwrap()]].concat());
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let summary = std::fs::read_to_string(dir.path().join("summary.csv")).unwrap();
    assert!(summary.starts_with("t,min,p25,median,p75\n"));
    let bias = std::fs::read_to_string(dir.path().join("bias.csv")).unwrap();
    assert!(bias.starts_with("component,sample\n"));
    assert_eq!(bias.lines().count(), 1 + 3 * 2);
}

#[test]
fn equilibrium_prints_solution_and_spectra() {
    let cfg = preset("paper_table1_alg1.cfg");
    let o = run(&["equilibrium", "--config", cfg.to_str().unwrap(), "--format", "json"]);
    assert!(o.status.success());
    let v: serde_json::Value = serde_json::from_str(&stdout(&o)).unwrap();
    assert_eq!(v["uL_star"][0], 10.0);
    let eig_c = v["eig_C"].as_array().unwrap();
    assert!((eig_c[0].as_f64().unwrap() - 522.93456652).abs() < 1e-6);
    assert!((eig_c[1].as_f64().unwrap() - 11.32943348).abs() < 1e-6);
    let text = run(&["equilibrium", "--config", cfg.to_str().unwrap()]);
    assert!(stdout(&text).contains("uL_star = [10.0000000000"));
}

#[test]
fn fisher_map_dumps_grid() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = preset("paper_table1_alg1.cfg");
    let o = run(&[
        "fisher-map",
        "--config",
        cfg.to_str().unwrap(),
        "--out",
        dir.path().to_str().unwrap(),
        "--criterion",
        "E",
        "--resolution",
        "11",
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let text = std::fs::read_to_string(dir.path().join("fisher_map.csv")).unwrap();
    assert!(text.starts_with("uL_1,uL_2,H\n"));
    assert_eq!(text.lines().count(), 1 + 121);
}

#[test]
fn exit_codes() {
    let cfg = preset("paper_table1_alg1.cfg");
    let cfg = cfg.to_str().unwrap();
    assert_eq!(run(&["--help"]).status.code(), Some(0));
    assert_eq!(run(&["frobnicate"]).status.code(), Some(1));
    assert_eq!(run(&["simulate", "--config", "/definitely/missing.cfg"]).status.code(), Some(1));
    assert_eq!(run(&["simulate", "--config", cfg, "--horizon", "0"]).status.code(), Some(1));
    assert_eq!(run(&["simulate", "--config", cfg, "--criterion", "Q"]).status.code(), Some(1));
    assert_eq!(run(&["simulate", "--config", cfg, "--format", "xml"]).status.code(), Some(1));

    let dir = tempfile::tempdir().unwrap();
    let bad = dir.path().join("bad.cfg");
    let text = std::fs::read_to_string(cfg).unwrap().replace("ql = [[41.0, 2.0], [2.0, 8.0]]", "ql = [[1.0, 2.0], [2.0, 1.0]]");
    std::fs::write(&bad, text).unwrap();
    let o = run(&["equilibrium", "--config", bad.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&o.stderr).contains("QL not positive definite"));

    // A valid config whose game violates the strong-convexity check is a runtime error.
    let weak = dir.path().join("weak.cfg");
    let text = std::fs::read_to_string(cfg).unwrap().replace("r1l = [[12.0, 42.0], [13.0, 1.0]]", "r1l = [[500.0, 0.0], [0.0, 500.0]]");
    std::fs::write(&weak, text).unwrap();
    let o = run(&["equilibrium", "--config", weak.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2), "{}", String::from_utf8_lossy(&o.stderr));

    // Output directory blocked by a regular file.
    let blocker = dir.path().join("blocker");
    std::fs::write(&blocker, "x").unwrap();
    let o = run(&["simulate", "--config", cfg, "--paths", "1", "--horizon", "1", "--out", blocker.join("o").to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
}
