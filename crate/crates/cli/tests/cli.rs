use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::Value;

fn ssm_lab(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_ssm-lab")).args(args).env("SSM_LAB_THREADS", "1").output().unwrap()
}

fn write_config(dir: &Path, name: &str, text: &str) -> PathBuf {
    let p = dir.join(name);
    std::fs::write(&p, text).unwrap();
    p
}

fn run(cmd: &str, cfg: &Path, out: &Path) -> Output {
    ssm_lab(&[cmd, "--config", cfg.to_str().unwrap(), "--out", out.to_str().unwrap()])
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn small_mv(extra: &str) -> String {
    format!(
        r#"{{"schema": 1,
        "data": {{"regime": "majority", "d": 8, "seq_len": 10, "alpha_r": 0.4, "alpha_c": 0.1, "tau": 0.01}},
        "N_train": 20, "N_test": 20, "train": {{"width": 6, "max_iters": 40}}{extra}}}"#
    )
}

fn file_names(dir: &Path) -> Vec<String> {
    let mut v: Vec<String> =
        std::fs::read_dir(dir).unwrap().map(|e| e.unwrap().file_name().to_string_lossy().into_owned()).collect();
    v.sort();
    v
}

#[test]
fn single_trial_writes_three_files() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), "c.json", &small_mv(""));
    let out = tmp.path().join("out");
    let o = run("train", &cfg, &out);
    assert!(o.status.success(), "{}", stderr(&o));
    assert_eq!(file_names(&out), ["alignment_000.csv", "manifest_000.json", "trajectory_000.csv"]);
    let m: Value = serde_json::from_str(&std::fs::read_to_string(out.join("manifest_000.json")).unwrap()).unwrap();
    assert_eq!(m["command"], "train");
    assert!(m["version"].as_str().unwrap().starts_with(env!("CARGO_PKG_VERSION")));
    assert_eq!(m["details"]["train_config"]["width"], 6);
    assert_eq!(m["config"]["data"]["alpha_r"], 0.4);
}

#[test]
fn trials_get_distinct_seeds() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), "c.json", &small_mv(r#", "trials": 20, "master_seed": 100"#));
    let out = tmp.path().join("out");
    let o = run("train", &cfg, &out);
    assert!(o.status.success(), "{}", stderr(&o));
    let names = file_names(&out);
    assert_eq!(names.iter().filter(|n| n.starts_with("trajectory_")).count(), 20);
    let mut seeds: Vec<u64> = (0..20)
        .map(|k| {
            let text = std::fs::read_to_string(out.join(format!("manifest_{k:03}.json"))).unwrap();
            let m: Value = serde_json::from_str(&text).unwrap();
            m["details"]["seed"].as_u64().unwrap()
        })
        .collect();
    assert_eq!(seeds, (100..120).collect::<Vec<_>>());
    seeds.dedup();
    assert_eq!(seeds.len(), 20);
}

#[test]
fn gen_data_reports_balance_and_is_reproducible() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), "c.json", &small_mv(""));
    let (a, b) = (tmp.path().join("a"), tmp.path().join("b"));
    let o = run("gen-data", &cfg, &a);
    assert!(o.status.success(), "{}", stderr(&o));
    let stdout = String::from_utf8_lossy(&o.stdout);
    assert!(stdout.contains("20 samples (10 positive, 10 negative)"), "{stdout}");
    assert!(stdout.contains("own-class feature tokens per sample: 4;"), "{stdout}");
    assert!(run("gen-data", &cfg, &b).status.success());
    for f in ["train.json", "test.json"] {
        assert_eq!(std::fs::read(a.join(f)).unwrap(), std::fs::read(b.join(f)).unwrap());
    }
}

#[test]
fn invalid_configs_exit_with_code_one() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("out");
    let bad_alpha = small_mv("").replace("\"alpha_r\": 0.4", "\"alpha_r\": 0.05");
    let o = run("gen-data", &write_config(tmp.path(), "a.json", &bad_alpha), &out);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("relevant_count > confusion_count"), "{}", stderr(&o));

    let typo = small_mv(r#", "sweep": {"parameter": "alpha", "values": [0.3]}"#);
    let o = run("sweep", &write_config(tmp.path(), "b.json", &typo), &out);
    assert_eq!(o.status.code(), Some(1));

    let zero_trials = small_mv(r#", "trials": 0"#);
    let o = run("train", &write_config(tmp.path(), "c.json", &zero_trials), &out);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("trials >= 1"));

    let o = ssm_lab(&["train", "--config", tmp.path().join("missing.json").to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(1));
}

#[test]
fn ablation_owns_the_gating_flag() {
    let tmp = tempfile::tempdir().unwrap();
    let text = small_mv("").replace("\"max_iters\": 40", "\"max_iters\": 40, \"gating_enabled\": false");
    let o = run("ablate-gating", &write_config(tmp.path(), "c.json", &text), &tmp.path().join("out"));
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("gating_enabled"));
}

#[test]
fn ablation_writes_paired_rows() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), "c.json", &small_mv(r#", "trials": 3"#));
    let out = tmp.path().join("out");
    let o = run("ablate-gating", &cfg, &out);
    assert!(o.status.success(), "{}", stderr(&o));
    let text = std::fs::read_to_string(out.join("ablation.csv")).unwrap();
    let mut lines = text.lines();
    assert_eq!(
        lines.next().unwrap(),
        "seed,final_test_loss_gated,final_test_loss_ungated,epochs_gated,epochs_ungated"
    );
    let seeds: Vec<&str> = lines.map(|l| l.split(',').next().unwrap()).collect();
    assert_eq!(seeds, ["0", "1", "2"]);
}

#[test]
fn single_value_sweep_matches_train() {
    let tmp = tempfile::tempdir().unwrap();
    let text = small_mv(r#", "trials": 3, "sweep": {"parameter": "alpha_r", "values": [0.4]}"#);
    let cfg = write_config(tmp.path(), "c.json", &text);
    let (sw, tr) = (tmp.path().join("sweep"), tmp.path().join("train"));
    assert!(run("sweep", &cfg, &sw).status.success());
    assert!(run("train", &cfg, &tr).status.success());
    let mut r = csv::Reader::from_path(sw.join("sweep_trials.csv")).unwrap();
    let rows: Vec<csv::StringRecord> = r.records().map(Result::unwrap).collect();
    assert_eq!(rows.len(), 3);
    for (k, row) in rows.iter().enumerate() {
        let m: Value =
            serde_json::from_str(&std::fs::read_to_string(tr.join(format!("manifest_{k:03}.json"))).unwrap()).unwrap();
        let res = &m["details"]["result"];
        assert_eq!(&row[4], res["epochs"].as_u64().map(|e| e.to_string()).unwrap_or_default());
        assert_eq!(row[8].parse::<f64>().unwrap(), res["final_test_loss"].as_f64().unwrap());
    }
    let summary = std::fs::read_to_string(sw.join("sweep_summary.csv")).unwrap();
    assert!(summary.starts_with("parameter,value,mean_epochs,success_rate,successes,trials\n"));
    assert_eq!(summary.lines().count(), 2);
}

#[test]
fn grad_check_exit_codes() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("out");
    let ok = write_config(tmp.path(), "ok.json", r#"{"schema": 1}"#);
    let o = run("grad-check", &ok, &out);
    assert!(o.status.success(), "{}", stderr(&o));
    let text = std::fs::read_to_string(out.join("grad_check.csv")).unwrap();
    assert!(text.starts_with("instance,regime,d,L,m,gate,block,max_rel_error,status\n"));
    let accepted = text.lines().filter(|l| l.ends_with(",accepted")).count() / 2;
    assert!(accepted >= 20, "{accepted}");

    let o = ssm_lab(&["grad-check", "--config", ok.to_str().unwrap(), "--out", out.to_str().unwrap(), "--corrupt-beta"]);
    assert_eq!(o.status.code(), Some(2));

    let none = write_config(tmp.path(), "none.json", r#"{"schema": 1, "instances_per_size": 0}"#);
    assert_eq!(run("grad-check", &none, &out).status.code(), Some(1));
}

#[test]
fn divergence_exits_with_code_three() {
    let tmp = tempfile::tempdir().unwrap();
    let text = small_mv("").replace("\"max_iters\": 40", "\"max_iters\": 40, \"eta\": 1e12, \"c0\": 1.0");
    let o = run("train", &write_config(tmp.path(), "c.json", &text), &tmp.path().join("out"));
    assert_eq!(o.status.code(), Some(3), "{}", stderr(&o));
}

#[test]
fn bad_thread_count_is_a_config_error() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), "c.json", &small_mv(""));
    let o = Command::new(env!("CARGO_BIN_EXE_ssm-lab"))
        .args(["gen-data", "--config", cfg.to_str().unwrap(), "--out", tmp.path().join("o").to_str().unwrap()])
        .env("SSM_LAB_THREADS", "zero")
        .output()
        .unwrap();
    assert_eq!(o.status.code(), Some(1));
}
