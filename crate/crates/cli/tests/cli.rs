use std::path::Path;
use std::process::{Command, Output};

use serde_json::Value;

fn domlab(args: &[&str], dir: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_domlab"))
        .args(args)
        .current_dir(dir)
        .output()
        .expect("binary runs")
}

fn stderr_json(out: &Output) -> Value {
    let text = String::from_utf8_lossy(&out.stderr);
    let line = text.lines().last().expect("error line on stderr");
    serde_json::from_str(line).expect("structured error")
}

fn read_json(path: &Path) -> Value {
    serde_json::from_str(&std::fs::read_to_string(path).unwrap()).unwrap()
}

#[test]
fn same_seed_gives_byte_identical_reports() {
    let dir = tempfile::tempdir().unwrap();
    let runs = [
        vec!["entropy", "--builtin", "catmap", "--resolution", "60", "--n-max", "6", "--seed", "7"],
        vec!["simulate", "--builtin", "product", "--n", "50", "--seed", "3"],
        vec!["recurrence", "--builtin", "catmap", "--cells", "37", "--n-max", "40", "--seed", "11"],
    ];
    for (i, args) in runs.iter().enumerate() {
        let a = dir.path().join(format!("a{i}.json"));
        let b = dir.path().join(format!("b{i}.json"));
        for p in [&a, &b] {
            let mut full = args.clone();
            full.extend(["--out", p.to_str().unwrap()]);
            assert!(domlab(&full, dir.path()).status.success(), "{args:?}");
        }
        assert_eq!(std::fs::read(&a).unwrap(), std::fs::read(&b).unwrap(), "{args:?}");
    }
}

#[test]
fn report_embeds_version_and_resolved_config() {
    let dir = tempfile::tempdir().unwrap();
    let out = domlab(&["simulate", "--builtin", "catmap", "--n", "3", "--seed", "5"], dir.path());
    assert!(out.status.success());
    let v: Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(v["tool"], "domlab");
    assert_eq!(v["version"], env!("CARGO_PKG_VERSION"));
    assert_eq!(v["config"]["output"]["seed"], 5);
    assert_eq!(v["config"]["point"].as_array().unwrap().len(), 2);
    assert_eq!(v["result"]["points"].as_array().unwrap().len(), 4);
    assert_eq!(v["system"]["dim"], 2);
}

#[test]
fn malformed_system_file_is_a_config_error_with_position() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(dir.path().join("bad.txt"), "kind=map dim=1\n  x1 + (2*x1\n").unwrap();
    let out = domlab(&["simulate", "--system", "bad.txt"], dir.path());
    assert_eq!(out.status.code(), Some(2));
    let err = stderr_json(&out);
    assert_eq!(err["error"]["kind"], "syntax");
    assert!(err["error"]["message"].as_str().unwrap().contains("bad.txt:2:8"));
}

#[test]
fn system_file_runs_like_a_builtin() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(
        dir.path().join("cat.txt"),
        "# cat map\nkind=map dim=2 periods=1\n2*x1 + x2\nx1 + x2\ninverse:\nx1 - x2\n-x1 + 2*x2\n",
    )
    .unwrap();
    let out = domlab(&["lyapunov", "--system", "cat.txt", "--point", "0.1,0.3", "--n", "2000"], dir.path());
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let v: Value = serde_json::from_slice(&out.stdout).unwrap();
    let top = v["result"]["exponents"][0].as_f64().unwrap();
    assert!((top - ((3.0 + 5f64.sqrt()) / 2.0).ln()).abs() < 1e-3);
}

#[test]
fn usage_errors_exit_with_config_code() {
    let dir = tempfile::tempdir().unwrap();
    let out = domlab(&["simulate", "--builtin", "nope"], dir.path());
    assert_eq!(out.status.code(), Some(2));
    assert_eq!(stderr_json(&out)["error"]["kind"], "usage");
    let out = domlab(&["splitting", "--builtin", "gp", "--grid", "10,10,10"], dir.path());
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn unknown_scenario_lists_valid_names() {
    let dir = tempfile::tempdir().unwrap();
    let out = domlab(&["verify", "thm9-nothing"], dir.path());
    assert_eq!(out.status.code(), Some(2));
    let msg = stderr_json(&out)["error"]["message"].as_str().unwrap().to_string();
    for name in [
        "thm2-catmap",
        "thm4-product",
        "sec71-nonrecurrence",
        "sec72-gp-zero-entropy",
        "sec72-gp-domination",
        "thm218-robustness",
    ] {
        assert!(msg.contains(name), "{msg}");
    }
}

#[test]
fn oversized_seed_grid_is_a_budget_error() {
    let dir = tempfile::tempdir().unwrap();
    let out = domlab(&["entropy", "--builtin", "catmap", "--resolution", "1000"], dir.path());
    assert_eq!(out.status.code(), Some(3));
    let err = stderr_json(&out);
    assert_eq!(err["error"]["kind"], "budget");
    assert!(err["error"]["message"].as_str().unwrap().contains("try"));
}

#[test]
fn rotation_is_not_certified() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(dir.path().join("rot.txt"), "kind=map dim=2; x1 + 0.3; x2 + 0.2").unwrap();
    let out = domlab(&["splitting", "--system", "rot.txt", "--grid", "6"], dir.path());
    assert_eq!(out.status.code(), Some(4), "{}", String::from_utf8_lossy(&out.stderr));
}

#[test]
fn gp_splitting_is_certified_and_writes_csv() {
    let dir = tempfile::tempdir().unwrap();
    let out = domlab(
        &["splitting", "--builtin", "gp", "--a", "0.5", "--b", "0.25", "--grid", "16", "--csv", "r.csv", "--out", "r.json"],
        dir.path(),
    );
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let v = read_json(&dir.path().join("r.json"));
    assert_eq!(v["result"]["domination"]["verdict"], "certified");
    let csv = std::fs::read_to_string(dir.path().join("r.csv")).unwrap();
    let mut lines = csv.lines();
    assert_eq!(lines.next(), Some("x1,x2,ratio"));
    assert_eq!(lines.count(), 256);
}

#[test]
fn catmap_entropy_near_log_eigenvalue() {
    let dir = tempfile::tempdir().unwrap();
    let out = domlab(&["entropy", "--builtin", "catmap", "--csv", "n.csv"], dir.path());
    assert!(out.status.success());
    let v: Value = serde_json::from_slice(&out.stdout).unwrap();
    let h = v["result"]["h_est"].as_f64().unwrap();
    let target = ((3.0 + 5f64.sqrt()) / 2.0).ln();
    assert!((h - target).abs() < 0.15 * target, "h_est {h}");
    assert_eq!(v["config"]["entropy"]["resolution"], serde_json::json!([500, 500]));
    let csv = std::fs::read_to_string(dir.path().join("n.csv")).unwrap();
    assert!(csv.starts_with("eps,n,count,log_count\n"));
}

#[test]
fn recurrence_reads_box_files() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(dir.path().join("b.csv"), "# resolution=10 10;periods=1 1\nbox,i1,i2\n37,3,7\n").unwrap();
    let out = domlab(&["recurrence", "--builtin", "catmap", "--boxes", "b.csv", "--per-axis", "24", "--csv", "h.csv"], dir.path());
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let v: Value = serde_json::from_slice(&out.stdout).unwrap();
    assert!(v["result"]["hit_fraction"].as_f64().unwrap() >= 0.9);
    let csv = std::fs::read_to_string(dir.path().join("h.csv")).unwrap();
    assert_eq!(csv.lines().count(), 201);

    std::fs::write(dir.path().join("bad.csv"), "# resolution=10 10;periods=1 1\nbox,i1,i2\nxx,3,7\n").unwrap();
    let out = domlab(&["recurrence", "--builtin", "catmap", "--boxes", "bad.csv"], dir.path());
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn srb_candidates_for_product() {
    let dir = tempfile::tempdir().unwrap();
    let out = domlab(
        &["srb", "--builtin", "product", "--grid", "4,6,6", "--n", "300", "--resolution", "4", "--point", "0.3,0.1,0.2", "--csv", "m.csv"],
        dir.path(),
    );
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let v: Value = serde_json::from_slice(&out.stdout).unwrap();
    assert!(!v["result"]["srb"]["candidates"].as_array().unwrap().is_empty());
    assert!(v["result"]["pomega"]["clusters"].is_array());
}

#[test]
fn verify_nonrecurrence_passes() {
    let dir = tempfile::tempdir().unwrap();
    let out = domlab(&["verify", "sec71-nonrecurrence", "--out", "v.json"], dir.path());
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stdout));
    let stdout = String::from_utf8_lossy(&out.stdout);
    assert!(stdout.lines().last().unwrap().starts_with("PASS"));
    let v = read_json(&dir.path().join("v.json"));
    assert_eq!(v["result"]["pass"], true);
    assert_eq!(v["result"]["details"]["endpoint_horizon"], 8);
}

#[test]
fn verify_gp_domination_on_a_coarse_grid() {
    let dir = tempfile::tempdir().unwrap();
    let out = domlab(&["verify", "sec72-gp-domination", "--grid", "24"], dir.path());
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stdout));
    assert_eq!(String::from_utf8_lossy(&out.stdout).lines().filter(|l| l.starts_with("PASS")).count(), 6);
}
