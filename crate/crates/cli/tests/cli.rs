use std::path::Path;
use std::process::Command;

fn hetfl() -> Command {
    Command::new(env!("CARGO_BIN_EXE_hetfl"))
}

const CONFIG: &str = "rounds = 3
method = rafl

[dataset]
source = synthetic
n_samples = 800
dims = 6
classes = 3

[partition]
n_clients = 6
dirichlet_alpha = 1.0

[space]
depths = 1, 2
widths = 3, 7

[supernet]
steps = 60

[budgets]
kind = list
values = 200, 300, 200, 300, 200, 300
kn_budget = 60

[round]
participation_rate = 0.5

[local]
max_steps = 2
";

fn write_config(dir: &Path, text: &str) -> std::path::PathBuf {
    let path = dir.join("exp.ini");
    std::fs::write(&path, text).unwrap();
    path
}

#[test]
fn train_run_report_pipeline() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), CONFIG);
    let out = dir.path().to_str().unwrap();
    let cfg = cfg.to_str().unwrap();

    let st = hetfl().args(["train-supernet", "--config", cfg, "--out", out, "--seed", "3"]).output().unwrap();
    assert!(st.status.success(), "{}", String::from_utf8_lossy(&st.stderr));
    assert!(dir.path().join("supernet.bin").exists());
    assert!(dir.path().join("supernet.json").exists());

    let st = hetfl().args(["run", "--config", cfg, "--out", out, "--seed", "3"]).output().unwrap();
    assert!(st.status.success(), "{}", String::from_utf8_lossy(&st.stderr));
    let metrics = std::fs::read_to_string(dir.path().join("metrics.csv")).unwrap();
    assert_eq!(metrics.lines().count(), 4);
    let util: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(dir.path().join("utilization.json")).unwrap()).unwrap();
    assert_eq!(util["clients"].as_array().unwrap().len(), 6);
    assert!(dir.path().join("target.json").exists());

    let m = dir.path().join("metrics.csv");
    let st = hetfl()
        .args(["report", m.to_str().unwrap(), m.to_str().unwrap(), "--out", out])
        .output()
        .unwrap();
    assert!(st.status.success(), "{}", String::from_utf8_lossy(&st.stderr));
    assert!(String::from_utf8_lossy(&st.stdout).contains("1.00x"));
    assert!(dir.path().join("report.csv").exists());
}

#[test]
fn seed_flag_overrides_config() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), CONFIG);
    let preview = |seed: &str| {
        let st = hetfl()
            .args(["partition-preview", "--config", cfg.to_str().unwrap(), "--seed", seed])
            .output()
            .unwrap();
        assert!(st.status.success());
        String::from_utf8(st.stdout).unwrap()
    };
    let a = preview("1");
    assert_eq!(a, preview("1"));
    assert_ne!(a, preview("2"));
    assert!(a.contains("histogram"));
    assert_eq!(a.lines().count(), 2 + 6);
}

#[test]
fn errors_exit_nonzero_with_message() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), &CONFIG.replace("participation_rate = 0.5", "participation_rate = 1.5"));
    let st = hetfl().args(["run", "--config", cfg.to_str().unwrap()]).output().unwrap();
    assert!(!st.status.success());
    let err = String::from_utf8_lossy(&st.stderr);
    assert!(err.contains("round.participation_rate"), "{err}");

    let cfg = write_config(dir.path(), CONFIG);
    let missing = dir.path().join("absent");
    let st = hetfl()
        .args(["train-supernet", "--config", cfg.to_str().unwrap(), "--out", missing.to_str().unwrap()])
        .output()
        .unwrap();
    assert!(!st.status.success());
    assert!(String::from_utf8_lossy(&st.stderr).contains("does not exist"));

    let st = hetfl().args(["run", "--config", cfg.to_str().unwrap(), "--out", dir.path().to_str().unwrap()]).output().unwrap();
    assert!(!st.status.success(), "rafl without a checkpoint must fail");
    assert!(String::from_utf8_lossy(&st.stderr).contains("train-supernet"));
}
