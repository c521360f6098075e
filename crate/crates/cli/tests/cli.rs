use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use sha2::{Digest, Sha256};

use bwsurge_cli::scenario::{builtin, parse, BUILTINS};

fn surge(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_surge"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn scenario_file(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("scenarios").join(name)
}

fn small_dps(dir: &Path) -> PathBuf {
    let text = r#"{
  "name": "small",
  "model": {
    "classes": [
      { "arrival_rate": 0.5, "service_rate": 1.0, "weight": 1.0, "is_surge": true },
      { "arrival_rate": 3.0, "service_rate": 10.0, "weight": 1.0 },
      { "arrival_rate": 1.0, "service_rate": 10.0, "weight": 1.0 }
    ],
    "allocation": { "kind": "dps", "capacity": 1.0 },
    "surge_count": 1
  },
  "sim": {
    "k": [50, 100],
    "horizon": 2.0,
    "step": 0.1,
    "replications": 3,
    "initial_surge": [1.0],
    "initial_stable": [0, 0],
    "window": 0.2
  },
  "fluid": { "u0": [1.0], "horizon": 2.0, "step": 0.1, "method": "fast_path" },
  "outputs": { "window_averages": true }
}
"#;
    let path = dir.join("small.json");
    fs::write(&path, text).unwrap();
    path
}

fn read_outputs(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut files: Vec<_> = fs::read_dir(dir)
        .unwrap()
        .map(|e| e.unwrap().path())
        .map(|p| (p.file_name().unwrap().to_string_lossy().into_owned(), fs::read(&p).unwrap()))
        .collect();
    files.sort();
    files
}

#[test]
fn shipped_scenarios_validate() {
    for name in ["dps3.json", "tree.json", "linear-surge.json", "stream-qos.json"] {
        let out = surge(&["validate", scenario_file(name).to_str().unwrap()]);
        assert!(out.status.success(), "{name}: {}", String::from_utf8_lossy(&out.stderr));
        assert!(String::from_utf8_lossy(&out.stdout).ends_with(": ok\n"));
    }
}

#[test]
fn shipped_files_match_builtins() {
    for name in BUILTINS {
        let text = fs::read_to_string(scenario_file(&format!("{name}.json"))).unwrap();
        assert_eq!(parse(&text).unwrap(), builtin(name).unwrap(), "{name}");
    }
}

#[test]
fn scenario_round_trip_is_identity() {
    let text = fs::read_to_string(scenario_file("stream-qos.json")).unwrap();
    let s = parse(&text).unwrap();
    assert_eq!(parse(&serde_json::to_string(&s).unwrap()).unwrap(), s);
}

#[test]
fn unknown_field_is_a_validation_error_with_position() {
    let dir = tempfile::tempdir().unwrap();
    let bad = dir.path().join("bad.json");
    fs::write(&bad, "{\n  \"model\": {},\n  \"speed\": 3\n}\n").unwrap();
    let out_dir = dir.path().join("out");
    let out = surge(&["simulate", bad.to_str().unwrap(), "--out", out_dir.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("line"));
    assert!(!out_dir.exists());
}

#[test]
fn invalid_model_is_rejected_before_running() {
    let dir = tempfile::tempdir().unwrap();
    let text = fs::read_to_string(small_dps(dir.path()))
        .unwrap()
        .replace("\"service_rate\": 10.0", "\"service_rate\": 0.0");
    let path = dir.path().join("zero.json");
    fs::write(&path, text).unwrap();
    let out = surge(&["validate", path.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn unknown_figure_is_a_validation_error() {
    let dir = tempfile::tempdir().unwrap();
    let out_dir = dir.path().join("out");
    let out = surge(&["reproduce", "fig99", "--out", out_dir.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("fig3"));
    assert!(!out_dir.exists());
}

#[test]
fn saturated_qos_target_is_a_numerical_failure() {
    let dir = tempfile::tempdir().unwrap();
    let text = fs::read_to_string(scenario_file("stream-qos.json"))
        .unwrap()
        .replace("\"arrival_rate\": 0.3", "\"arrival_rate\": 1.5");
    let path = dir.path().join("saturated.json");
    fs::write(&path, text).unwrap();
    let out_dir = dir.path().join("out");
    let out = surge(&["qos", path.to_str().unwrap(), "--out", out_dir.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(3), "{}", String::from_utf8_lossy(&out.stderr));
}

#[test]
fn same_seed_gives_identical_files() {
    let dir = tempfile::tempdir().unwrap();
    let scenario = small_dps(dir.path());
    let run = |sub: &str, extra: &[&str]| {
        let out_dir = dir.path().join(sub);
        let mut args = vec!["run", scenario.to_str().unwrap(), "--out", out_dir.to_str().unwrap()];
        args.extend_from_slice(extra);
        let out = surge(&args);
        assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
        read_outputs(&out_dir)
    };
    let a = run("a", &[]);
    let b = run("b", &["--jobs", "1"]);
    assert_eq!(a, b);
    let c = run("c", &["--seed", "99"]);
    let sim = |files: &[(String, Vec<u8>)]| files.iter().find(|(n, _)| n == "small_sim_K100.csv").unwrap().1.clone();
    assert_ne!(sim(&a), sim(&c));
}

#[test]
fn csv_dialect_and_summary_hashes() {
    let dir = tempfile::tempdir().unwrap();
    let scenario = small_dps(dir.path());
    let out_dir = dir.path().join("out");
    let out = surge(&["run", scenario.to_str().unwrap(), "--out", out_dir.to_str().unwrap()]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let files = read_outputs(&out_dir);
    let names: Vec<&str> = files.iter().map(|(n, _)| n.as_str()).collect();
    for expected in [
        "small_fluid.csv",
        "small_sim_K50.csv",
        "small_sim_K100.csv",
        "small_window_K100.csv",
        "small_deviation.csv",
        "summary.txt",
    ] {
        assert!(names.contains(&expected), "{expected} missing from {names:?}");
    }
    let text = |name: &str| String::from_utf8(files.iter().find(|(n, _)| n == name).unwrap().1.clone()).unwrap();
    let sim = text("small_sim_K100.csv");
    assert!(!sim.contains('\r'));
    assert!(sim.ends_with('\n'));
    let mut lines = sim.lines();
    assert_eq!(lines.next(), Some("t,y1,x2,x3,blocked_count"));
    assert_eq!(lines.next().unwrap().split(',').next(), Some("0.000000000000e0"));
    assert_eq!(sim.lines().count(), 22);
    assert_eq!(text("small_fluid.csv").lines().next(), Some("t,u1,phibar_1,boundary_flags"));
    assert_eq!(
        text("small_deviation.csv").lines().next(),
        Some("k,replications,mean_sup_deviation,standard_error")
    );

    let summary = text("summary.txt");
    let listed: Vec<(&str, &str)> = summary
        .lines()
        .map(|l| l.split_once("  ").expect("hash and name"))
        .collect();
    assert_eq!(listed.len(), files.len() - 1);
    for (hash, name) in listed {
        let bytes = &files.iter().find(|(n, _)| n == name).unwrap().1;
        let digest: String = Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect();
        assert_eq!(hash, digest, "{name}");
    }
}

#[test]
fn classify_reports_the_tree_regime() {
    let dir = tempfile::tempdir().unwrap();
    let out_dir = dir.path().join("out");
    let out = surge(&["classify", "tree", "--out", out_dir.to_str().unwrap()]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let report = fs::read_to_string(out_dir.join("tree_equilibria.txt")).unwrap();
    assert!(report.contains("robust_stable=true"), "{report}");
    assert!(report.contains("(4)"), "{report}");
}

#[test]
fn reproduce_fig7_writes_every_curve() {
    let dir = tempfile::tempdir().unwrap();
    let out_dir = dir.path().join("out");
    let out = surge(&["reproduce", "fig7", "--out", out_dir.to_str().unwrap()]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    for (name, header) in [
        ("fig7_fluid_exact.csv", "t,u1,phibar_1"),
        ("fig7_fluid_poisson.csv", "t,u1,phibar_1"),
        ("fig7_sim.csv", "t,y1,u1"),
    ] {
        let text = fs::read_to_string(out_dir.join(name)).unwrap();
        assert_eq!(text.lines().next(), Some(header));
        assert_eq!(text.lines().count(), 1002);
    }
}
