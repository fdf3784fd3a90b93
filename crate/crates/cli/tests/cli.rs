use std::path::PathBuf;
use std::process::{Command, Output};

fn root() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../..")
}

fn aeqsim(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_aeqsim"))
        .args(args)
        .current_dir(root())
        .env_remove("AEQSIM_OUT_DIR")
        .output()
        .unwrap()
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

#[test]
fn resources_reproduces_the_p8_cells() {
    let o = aeqsim(&[
        "resources",
        "--model",
        "models/mnist.json",
        "--parallel",
        "8",
        "--depth",
        "750",
        "--aeq-bits",
        "10",
    ]);
    assert!(o.status.success());
    let text = stdout(&o);
    let row: Vec<&str> = text.lines().nth(1).unwrap().split_whitespace().collect();
    assert_eq!(row, ["750", "100", "10", "16", "8", "36", "72"]);
}

#[test]
fn resources_without_a_model_needs_sizes() {
    let o = aeqsim(&[
        "resources",
        "--depth",
        "6100",
        "--aeq-bits",
        "10",
        "--membrane-depth",
        "256",
    ]);
    assert!(o.status.success());
    let row: Vec<String> = stdout(&o)
        .lines()
        .nth(1)
        .unwrap()
        .split_whitespace()
        .map(String::from)
        .collect();
    assert_eq!(row[5..], ["27", "9"]);

    let o = aeqsim(&["resources", "--depth", "100"]);
    assert_eq!(o.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&o.stderr).contains("--aeq-bits"));
}

#[test]
fn compare_oracle_reports_all_equivalent() {
    let o = aeqsim(&["compare-oracle", "--seeds", "30", "--max-size", "12"]);
    assert!(o.status.success());
    assert!(stdout(&o).trim_end().ends_with("30/30 equivalent"));
}

#[test]
fn encode_check_on_mnist_maps() {
    let o = aeqsim(&["encode-check", "--width", "28"]);
    assert!(o.status.success());
    let text = stdout(&o);
    assert!(text.contains("bits per coordinate   4"));
    assert!(text.contains("spare patterns        6"));
    assert!(text.contains("0 of 1568 coordinates failed"));

    let o = aeqsim(&["encode-check", "--width", "24"]);
    assert!(stdout(&o).contains("fell back to plain"));
}

#[test]
fn power_preset_and_energy() {
    let o = aeqsim(&["power", "--preset", "SNN-COMPR-4", "--cycles", "42800"]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let text = stdout(&o);
    assert!(text.contains("published 0.200 W"));
    assert!(text.contains("latency   428.000 us"));

    let o = aeqsim(&["power", "--preset", "SNN-BRAM-99"]);
    assert_eq!(o.status.code(), Some(1));
}

#[test]
fn simulate_writes_results_to_the_env_directory() {
    let dir = tempfile::tempdir().unwrap();
    let o = Command::new(env!("CARGO_BIN_EXE_aeqsim"))
        .args([
            "simulate",
            "--model",
            "models/mnist.json",
            "--dataset",
            "data/mnist-sample",
            "--samples",
            "12",
            "-p",
            "4",
        ])
        .current_dir(root())
        .env("AEQSIM_OUT_DIR", dir.path())
        .output()
        .unwrap();
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    assert!(stdout(&o).contains("samples       12"));
    for f in [
        "latency.csv",
        "energy.csv",
        "resources.csv",
        "per_class.csv",
        "histogram.csv",
        "manifest.json",
    ] {
        assert!(dir.path().join(f).is_file(), "{f} missing");
    }
    let latency = std::fs::read_to_string(dir.path().join("latency.csv")).unwrap();
    assert_eq!(latency.lines().count(), 13);
}

#[test]
fn bad_inputs_exit_with_one() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().to_str().unwrap();
    let o = aeqsim(&[
        "simulate",
        "--model",
        "missing.json",
        "--dataset",
        "data/mnist-sample",
        "--out",
        out,
    ]);
    assert_eq!(o.status.code(), Some(1));

    let o = aeqsim(&[
        "simulate",
        "--model",
        "models/mnist.json",
        "--dataset",
        "data/mnist-sample",
        "-p",
        "17",
        "--out",
        out,
    ]);
    assert_eq!(o.status.code(), Some(1));

    let o = aeqsim(&["no-such-command"]);
    assert_eq!(o.status.code(), Some(1));

    let o = aeqsim(&["--help"]);
    assert_eq!(o.status.code(), Some(0));
}

#[test]
fn calibrate_matches_the_shipped_profiles() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("p.json");
    let o = aeqsim(&["calibrate", "--write", path.to_str().unwrap()]);
    assert!(o.status.success());
    assert!(stdout(&o).contains("SNN-COMPR-4"));
    let written: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(&path).unwrap()).unwrap();
    let shipped: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(root().join("profiles/power.json")).unwrap()).unwrap();
    assert_eq!(written, shipped);
}
