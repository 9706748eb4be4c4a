//! Drives the `dewsp` binary stage by stage on a small synthetic market.

use std::path::Path;
use std::process::{Command, Output};

const CONFIG: &str = r#"
data_dir = "data"
evals = 2
seed = 5
signals = ["MOM(1M)", "MOM(3M)", "MA(1M-6M)", "VOL(1M-3M)"]
families = ["DEWSP", "HEWSP-TV", "REWSP", "EWWP", "MVP"]
max_n = 4
out_dir = "out"
"#;

fn dewsp(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_dewsp"))
        .current_dir(dir)
        .args(args)
        .output()
        .expect("binary runs")
}

fn ok(out: &Output) {
    assert!(
        out.status.success(),
        "status {:?}\nstdout: {}\nstderr: {}",
        out.status,
        String::from_utf8_lossy(&out.stdout),
        String::from_utf8_lossy(&out.stderr)
    );
}

fn lines(path: &Path) -> Vec<String> {
    std::fs::read_to_string(path).unwrap().lines().map(String::from).collect()
}

#[test]
fn stages_chain_through_the_output_directory() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    ok(&dewsp(d, &["--seed", "9", "--out", "data", "synth", "--assets", "6", "--months", "100"]));
    assert_eq!(std::fs::read_dir(d.join("data")).unwrap().count(), 6);

    ok(&dewsp(d, &["--out", "universe.bin", "ingest", "--input", "data", "--start", "1986-01"]));
    assert!(d.join("universe.bin").metadata().unwrap().len() > 0);

    std::fs::write(d.join("run.toml"), CONFIG).unwrap();
    ok(&dewsp(d, &["--config", "run.toml", "features"]));
    let features = lines(&d.join("out/features.csv"));
    assert_eq!(features[0], "ticker,date,MOM(1M),MOM(3M),MA(1M-6M),VOL(1M-3M),target");

    ok(&dewsp(d, &["--config", "run.toml", "tune", "--evals", "3"]));
    assert_eq!(lines(&d.join("out/trials.csv")).len(), 1 + 3);

    ok(&dewsp(d, &["--config", "run.toml", "backtest"]));
    let summary = lines(&d.join("out/summary_oos.csv"));
    assert_eq!(summary[0], "family,N,r,sigma,SR");
    // Subset families at N = 1..=4, whole-universe families once.
    assert_eq!(summary.len(), 1 + 3 * 4 + 2);
    let weights = lines(&d.join("out/weights_oos.csv"));
    assert!(weights[0].starts_with("date,kind,N,S01"));

    ok(&dewsp(d, &["--out", "out", "report"]));
    let metrics: serde_json::Value =
        serde_json::from_slice(&std::fs::read(d.join("out/metrics.json")).unwrap()).unwrap();
    assert!(metrics["out_of_sample"]["apc"].is_array());
    assert!(std::fs::read_to_string(d.join("out/risk_return_oos.svg")).unwrap().starts_with("<svg"));
}

#[test]
fn full_run_and_replay_agree() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let config = CONFIG.replace("data_dir = \"data\"\n", "") + "[synthetic]\nseed = 2\nn_assets = 5\nn_months = 90\n";
    std::fs::write(d.join("run.toml"), config).unwrap();

    ok(&dewsp(d, &["--config", "run.toml", "run"]));
    ok(&dewsp(d, &["run", "--manifest", "out/manifest.json", "--out", "again"]));
    for file in ["summary_is.csv", "summary_oos.csv", "weights_oos.csv", "metrics.json"] {
        assert_eq!(
            std::fs::read(d.join("out").join(file)).unwrap(),
            std::fs::read(d.join("again").join(file)).unwrap(),
            "{file}"
        );
    }
    let manifest: serde_json::Value =
        serde_json::from_slice(&std::fs::read(d.join("out/manifest.json")).unwrap()).unwrap();
    assert_eq!(manifest["seeds"]["hpo"], 5);
}

#[test]
fn exit_codes_follow_error_category() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();

    std::fs::write(d.join("big.toml"), "max_n = 9\n[synthetic]\nn_assets = 6\n").unwrap();
    let out = dewsp(d, &["--config", "big.toml", "run"]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("max_n"));

    std::fs::write(d.join("typo.toml"), "evalz = 3\n").unwrap();
    assert_eq!(dewsp(d, &["--config", "typo.toml", "features"]).status.code(), Some(1));

    std::fs::write(d.join("missing.toml"), "data_dir = \"nowhere\"\n").unwrap();
    assert_eq!(dewsp(d, &["--config", "missing.toml", "features"]).status.code(), Some(2));

    std::fs::create_dir(d.join("bad")).unwrap();
    std::fs::write(d.join("bad/A.csv"), "date,open,high,low,adj_close,volume\n2000-01-31,1,1,1,oops,5\n").unwrap();
    std::fs::write(d.join("bad/B.csv"), "date,open,high,low,adj_close,volume\n2000-01-31,1,1,1,1,5\n").unwrap();
    assert_eq!(dewsp(d, &["--out", "u.bin", "ingest", "--input", "bad"]).status.code(), Some(2));
}
