use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn feeder() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../data/european_lv")
}

fn run(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_phaseswap"))
        .arg("--feeder")
        .arg(feeder())
        .args(args)
        .output()
        .expect("binary runs")
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

#[test]
fn import_writes_network_and_profiles() {
    let dir = tempfile::tempdir().unwrap();
    let stdout = ok(&["import", "--out", dir.path().to_str().unwrap()]);
    let report: serde_json::Value = serde_json::from_str(&stdout).unwrap();
    assert_eq!(report["customers"], 55);
    let net: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(dir.path().join("network.json")).unwrap()).unwrap();
    assert_eq!(net["customers"].as_array().unwrap().len(), 55);
    let profiles = fs::read_to_string(dir.path().join("profiles.csv")).unwrap();
    assert!(profiles.starts_with("period,customer_id,p_kw,q_kvar"));
    assert_eq!(profiles.lines().count(), 1 + 1440 * 55);
}

#[test]
fn pf_writes_bus_and_dt_rows() {
    let dir = tempfile::tempdir().unwrap();
    ok(&["pf", "--period", "40", "--out", dir.path().to_str().unwrap()]);
    let text = fs::read_to_string(dir.path().join("pf_40.csv")).unwrap();
    let mut lines = text.lines();
    assert_eq!(lines.next().unwrap(), "bus_id,phase,vm_pu,va_rad,p_pu,q_pu");
    assert_eq!(text.lines().filter(|l| l.starts_with("DT,")).count(), 3);
    assert_eq!(text.lines().count(), 1 + 906 * 3 + 3);
}

#[test]
fn evaluate_writes_one_file_per_formulation() {
    let dir = tempfile::tempdir().unwrap();
    let stdout = ok(&["evaluate", "--period", "10", "--out", dir.path().to_str().unwrap()]);
    let summary: serde_json::Value = serde_json::from_str(&stdout).unwrap();
    assert_eq!(summary.as_array().unwrap().len(), 3);
    for f in ["fixv", "linv", "lbfm"] {
        let text = fs::read_to_string(dir.path().join(format!("evaluate_10_{f}.csv"))).unwrap();
        assert!(text.starts_with("bus,phase,vm_pu,vneg_pu,tau_minus,tau_plus,omega"));
    }
}

#[test]
fn optimize_writes_outcome() {
    let dir = tempfile::tempdir().unwrap();
    ok(&[
        "optimize",
        "--period",
        "76",
        "--method",
        "fixv-mc",
        "--search",
        "bnb",
        "--K",
        "2",
        "--out",
        dir.path().to_str().unwrap(),
    ]);
    let o: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(dir.path().join("outcome_76_fixv-mc.json")).unwrap()).unwrap();
    assert_eq!(o["method"], "fixv-mc");
    assert_eq!(o["strategy"], "branch-and-bound");
    assert!(o["objective"].as_f64().unwrap() <= o["initial_objective"].as_f64().unwrap());
    assert!(o["delta_v_trace"].as_array().unwrap().len() <= 2);
    assert!(o["verified"]["unbalance"].as_f64().unwrap() > 0.0);
}

#[test]
fn sweep_then_verify_is_byte_identical() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("sweep");
    ok(&[
        "sweep",
        "--periods",
        "60:62",
        "--methods",
        "lbfm,fixv-mw",
        "--threads",
        "2",
        "--out",
        out.to_str().unwrap(),
    ]);
    let again = dir.path().join("again");
    ok(&[
        "verify",
        "--outcomes",
        out.to_str().unwrap(),
        "--out",
        again.to_str().unwrap(),
    ]);
    for f in [
        "sweep.csv",
        "summary.json",
        "plot_pi.csv",
        "plot_vm.csv",
        "plot_vub.csv",
        "accuracy_cdf.csv",
        "outcomes.jsonl",
    ] {
        assert_eq!(fs::read(out.join(f)).unwrap(), fs::read(again.join(f)).unwrap(), "{f}");
    }
    let rows = fs::read_to_string(out.join("sweep.csv")).unwrap();
    assert_eq!(rows.lines().count(), 1 + 2 * 3);
}

#[test]
fn config_file_is_honoured() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("scenario.toml");
    fs::write(
        &cfg,
        format!(
            "feeder = {:?}\nmethods = [\"lbfm\"]\nperiods = [0, 2]\nthreads = 1\n",
            feeder().to_str().unwrap()
        ),
    )
    .unwrap();
    let out = Command::new(env!("CARGO_BIN_EXE_phaseswap"))
        .args(["--config", cfg.to_str().unwrap(), "sweep"])
        .output()
        .unwrap();
    assert!(out.status.success());
    let stdout = String::from_utf8(out.stdout).unwrap();
    assert!(stdout.contains("lbfm"));
    assert!(!stdout.contains("fixv-mw"));
}

#[test]
fn errors_give_nonzero_exit() {
    assert!(!run(&["pf", "--period", "500"]).status.success());
    assert!(!run(&["optimize", "--period", "1", "--method", "milp"]).status.success());
    let missing = Command::new(env!("CARGO_BIN_EXE_phaseswap"))
        .args(["--feeder", "/nonexistent", "pf", "--period", "0"])
        .output()
        .unwrap();
    assert!(!missing.status.success());
    assert!(String::from_utf8_lossy(&missing.stderr).contains("missing input file"));
}

#[test]
fn verify_without_voltages_fails() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("sweep");
    ok(&[
        "sweep",
        "--periods",
        "5:6",
        "--methods",
        "lbfm",
        "--out",
        out.to_str().unwrap(),
    ]);
    let text = fs::read_to_string(out.join("outcomes.jsonl")).unwrap();
    let mut stripped = String::new();
    for line in text.lines() {
        let mut v: serde_json::Value = serde_json::from_str(line).unwrap();
        v["result"]["verified"]["magnitudes"] = serde_json::json!([]);
        stripped.push_str(&v.to_string());
        stripped.push('\n');
    }
    let file = dir.path().join("stripped.jsonl");
    fs::write(&file, stripped).unwrap();
    let res = run(&["verify", "--outcomes", file.to_str().unwrap()]);
    assert!(!res.status.success());
    assert!(String::from_utf8_lossy(&res.stderr).contains("no verified power-flow voltages"));
}
