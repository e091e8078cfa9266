use std::path::Path;
use std::process::{Command, Output};

fn tonelli(args: &[&str], dir: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_tonelli")).args(args).current_dir(dir).output().expect("binary runs")
}

fn write(dir: &Path, name: &str, text: &str) -> String {
    let p = dir.join(name);
    std::fs::write(&p, text).unwrap();
    p.to_str().unwrap().to_string()
}

#[test]
fn defaults_round_trip_through_config() {
    let dir = tempfile::tempdir().unwrap();
    let out = tonelli(&["defaults"], dir.path());
    assert!(out.status.success());
    let text = String::from_utf8(out.stdout).unwrap();
    assert!(text.contains("prime = 2"));
    let cfg = write(dir.path(), "d.toml", &text);
    let back = tonelli(&["search", "--config", &cfg, "--periods", "1", "--out", "o"], dir.path());
    assert_eq!(back.status.code(), Some(0), "{}", String::from_utf8_lossy(&back.stderr));
}

#[test]
fn config_errors_exit_two() {
    let dir = tempfile::tempdir().unwrap();
    for text in ["prime = 6", "periods = [1, 3]", "no_such_key = true", "bound = \"often\""] {
        let cfg = write(dir.path(), "bad.toml", text);
        let out = tonelli(&["search", "--config", &cfg], dir.path());
        assert_eq!(out.status.code(), Some(2), "{text}");
    }
    let out = tonelli(&["search", "--periods", "1,6"], dir.path());
    assert_eq!(out.status.code(), Some(2));
    let out = tonelli(&["search", "--k", "many"], dir.path());
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn search_then_index_and_iterate() {
    let dir = tempfile::tempdir().unwrap();
    let out = tonelli(&["search", "--periods", "1,2", "--out", "run", "--jobs", "2"], dir.path());
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let report: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    assert!(report["rail_passed"].as_bool().unwrap());
    for f in ["registry.jsonl", "summary.csv", "index_table.csv", "report.json", "metadata.json"] {
        assert!(dir.path().join("run").join(f).exists(), "{f}");
    }
    let registry = std::fs::read_to_string(dir.path().join("run/registry.jsonl")).unwrap();
    let first: serde_json::Value = serde_json::from_str(registry.lines().next().unwrap()).unwrap();
    let id = first["id"].as_str().unwrap();

    let out = tonelli(&["index", "run/registry.jsonl", "--id", id, "--max-n", "8"], dir.path());
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let index: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(index["iota"], first["iota"]);
    assert_eq!(index["nu"], first["nu"]);
    assert_eq!(index["per_n"].as_object().unwrap().len(), 8);

    let out = tonelli(&["iterate", "run/registry.jsonl", "--id", id, "--times", "3"], dir.path());
    assert!(out.status.success());
    let it: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(it["period"].as_u64().unwrap(), 3 * first["period"].as_u64().unwrap());
    let action = (it["mean_action"].as_f64().unwrap() - first["action"].as_f64().unwrap()).abs();
    assert!(action < 1e-12);

    // A bare loop record is accepted too.
    write(dir.path(), "loop.json", &String::from_utf8(out.stdout).unwrap());
    let out = tonelli(&["index", "loop.json", "--max-n", "2"], dir.path());
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
}

#[test]
fn verify_passes_and_rejects_nonperiodic() {
    let dir = tempfile::tempdir().unwrap();
    let out = tonelli(&["verify", "--out", "v"], dir.path());
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stdout));
    let report: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    assert!(report["passed"].as_bool().unwrap());
    assert!(dir.path().join("v/verify.json").exists());
    assert!(dir.path().join("v/inequalities.csv").exists());

    let cfg = write(
        dir.path(),
        "np.toml",
        "[lagrangian]\nfamily = \"mechanical\"\ndim = 1\n[[lagrangian.potential.terms]]\ncoef = 0.25\nq_freq = [0.5]\n",
    );
    let out = tonelli(&["verify", "--config", &cfg], dir.path());
    assert_eq!(out.status.code(), Some(1));
    let report: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    let class = report["suites"].as_array().unwrap().iter().find(|s| s["name"] == "class").unwrap();
    assert_eq!(class["passed"], false);
}

#[test]
fn bangert_demo_writes_tables() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(dir.path(), "b.toml", "[bangert]\npath = \"moving-point\"\norders = [1, 2, 4]\ncells = 8\ncsv_max_n = 2\n");
    let out = tonelli(&["bangert-demo", "--config", &cfg, "--out", "b"], dir.path());
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let table = std::fs::read_to_string(dir.path().join("b/bangert_slack.csv")).unwrap();
    assert_eq!(table.lines().count(), 4);
    assert!(dir.path().join("b/bangert_slices_n1.csv").exists());
    assert!(dir.path().join("b/bangert_slices_n2.csv").exists());
}
