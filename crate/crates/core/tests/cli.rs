use std::process::Command;

fn swgsim() -> Command {
    Command::new(env!("CARGO_BIN_EXE_swgsim"))
}

fn write_config(dir: &std::path::Path, text: &str) -> std::path::PathBuf {
    let p = dir.join("run.toml");
    std::fs::write(&p, text).unwrap();
    p
}

#[test]
fn unknown_key_gives_path_and_exit_code_two() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "seed = 1\n[detectors]\nsett = \"swg\"\n");
    let out = swgsim().args(["ghz4", "--config"]).arg(&cfg).output().unwrap();
    assert_eq!(out.status.code(), Some(2));
    let report: serde_json::Value = serde_json::from_slice(&out.stderr).unwrap();
    assert_eq!(report["issues"][0]["path"], "detectors.sett");
}

#[test]
fn semantic_errors_are_all_reported() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "[source]\nmu = -1\n[ghz4]\ncoupling = [0.9, 1.5, 0.9, 0.9]\n");
    let out = swgsim().args(["ghz4", "--config"]).arg(&cfg).output().unwrap();
    assert_eq!(out.status.code(), Some(2));
    let report: serde_json::Value = serde_json::from_slice(&out.stderr).unwrap();
    let paths: Vec<&str> = report["issues"].as_array().unwrap().iter().map(|i| i["path"].as_str().unwrap()).collect();
    assert!(paths.contains(&"seed") && paths.contains(&"source") && paths.contains(&"ghz4.coupling[1]"), "{paths:?}");
}

#[test]
fn run_writes_tables_and_summary() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "[ghz4]\npulses = 500_000\n");
    let out_dir = dir.path().join("out");
    let out = swgsim()
        .args(["ghz4", "--seed", "4", "--compare", "spcm:swg", "--workers", "2", "--config"])
        .arg(&cfg)
        .arg("--out")
        .arg(&out_dir)
        .output()
        .unwrap();
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    for f in ["ghz4_counts.csv", "ghz4_detectors.csv", "ghz4_ratio.csv", "summary.txt", "summary.json"] {
        assert!(out_dir.join(f).is_file(), "{f}");
    }
    let counts = std::fs::read_to_string(out_dir.join("ghz4_counts.csv")).unwrap();
    assert_eq!(counts.lines().next().unwrap(), "set,pattern,detectors,count,per_minute,analytic_conditional");
    assert_eq!(counts.lines().count(), 9);
}

#[test]
fn same_seed_same_json_across_worker_counts() {
    let run = |workers: &str| {
        let out = swgsim()
            .args(["scaling", "--seed", "8", "--json", "--workers", workers])
            .env("SWGSIM_WORKERS", "3")
            .output()
            .unwrap();
        assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
        let mut v: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
        v.as_object_mut().unwrap().remove("elapsed_s");
        v.as_object_mut().unwrap().remove("workers");
        v
    };
    assert_eq!(run("1"), run("4"));
}

#[test]
fn unknown_scenario_is_a_usage_error() {
    let out = swgsim().arg("nonsense").output().unwrap();
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("unknown scenario"));
}
