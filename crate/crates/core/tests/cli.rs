use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn apex(args: &[&str], cwd: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_apex"))
        .args(args)
        .current_dir(cwd)
        .output()
        .expect("binary runs")
}

fn configs() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs")
}

fn files_with(dir: &Path, prefix: &str, suffix: &str) -> Vec<PathBuf> {
    let mut found: Vec<PathBuf> = fs::read_dir(dir)
        .map(|rd| {
            rd.flatten()
                .map(|e| e.path())
                .filter(|p| {
                    let name = p.file_name().unwrap().to_string_lossy().to_string();
                    name.starts_with(prefix) && name.ends_with(suffix)
                })
                .collect()
        })
        .unwrap_or_default();
    found.sort();
    found
}

fn write_config(dir: &Path, text: &str) -> PathBuf {
    let path = dir.join("run.toml");
    fs::write(&path, text).unwrap();
    path
}

const SMALL_TRAIN: &str =
    "[disk]\nrows = 8\ncols = 8\n[train]\noin_per_min = 20\nmin_budget = 10\n";

#[test]
fn train_writes_json_and_csv() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), SMALL_TRAIN);
    let out = apex(
        &["train", "--config", cfg.to_str().unwrap(), "--out", "o"],
        tmp.path(),
    );
    assert_eq!(
        out.status.code(),
        Some(0),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    let stdout = String::from_utf8(out.stdout).unwrap();
    assert_eq!(stdout.lines().count(), 1);
    assert!(stdout.starts_with("train: final ("));
    let dir = tmp.path().join("o");
    assert_eq!(files_with(&dir, "train-0-", ".json").len(), 1);
    let csv = files_with(&dir, "train-0-", ".csv");
    assert_eq!(csv.len(), 1);
    let text = fs::read_to_string(&csv[0]).unwrap();
    assert!(text.starts_with("min,p,epsilon,lambda,sigma,rho,mu\n"));
    assert_eq!(text.lines().count(), 12);
    let json: serde_json::Value = serde_json::from_str(
        &fs::read_to_string(&files_with(&dir, "train-0-", ".json")[0]).unwrap(),
    )
    .unwrap();
    assert_eq!(json["config_hash"].as_str().unwrap().len(), 64);
}

#[test]
fn missing_config_exits_2_naming_path() {
    let tmp = tempfile::tempdir().unwrap();
    let out = apex(&["train", "--config", "no/such/apex.toml"], tmp.path());
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("no/such/apex.toml"));
}

#[test]
fn out_of_range_coefficients_exit_2() {
    let tmp = tempfile::tempdir().unwrap();
    for text in [
        "[hyperparams]\nlambda = 0\n",
        "[train]\ninitial = [1, 11, 1, 1]\n",
    ] {
        let cfg = write_config(tmp.path(), text);
        let out = apex(&["train", "--config", cfg.to_str().unwrap()], tmp.path());
        assert_eq!(out.status.code(), Some(2), "{text}");
        assert!(String::from_utf8_lossy(&out.stderr).contains("outside [1, 10]"));
    }
}

#[test]
fn simulate_is_deterministic_and_replayable() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(
        tmp.path(),
        "[disk]\nrows = 8\ncols = 8\n[workload]\ntotal_ops = 400\n",
    );
    let cfg = cfg.to_str().unwrap();
    for _ in 0..2 {
        let out = apex(
            &["simulate", "--config", cfg, "--seed", "7", "--out", "o"],
            tmp.path(),
        );
        assert_eq!(
            out.status.code(),
            Some(0),
            "{}",
            String::from_utf8_lossy(&out.stderr)
        );
    }
    let dir = tmp.path().join("o");
    let reports: Vec<PathBuf> = files_with(&dir, "simulate-7-", ".json")
        .into_iter()
        .filter(|p| !p.to_string_lossy().ends_with(".snapshot.json"))
        .collect();
    assert_eq!(reports.len(), 2);
    assert_eq!(
        fs::read(&reports[0]).unwrap(),
        fs::read(&reports[1]).unwrap()
    );

    let traces = files_with(&dir, "simulate-7-", ".trace.jsonl");
    let out = apex(
        &[
            "replay",
            "--config",
            cfg,
            "--seed",
            "7",
            "--out",
            "o",
            "--trace",
            traces[0].to_str().unwrap(),
        ],
        tmp.path(),
    );
    assert_eq!(
        out.status.code(),
        Some(0),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    let sim_snap = &files_with(&dir, "simulate-7-", ".snapshot.json")[0];
    let replay_snap = &files_with(&dir, "replay-7-", ".snapshot.json")[0];
    assert_eq!(fs::read(sim_snap).unwrap(), fs::read(replay_snap).unwrap());
}

#[test]
fn simulate_trace_flag_sets_trace_path() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), "[workload]\ntotal_ops = 50\n");
    let out = apex(
        &[
            "simulate",
            "--config",
            cfg.to_str().unwrap(),
            "--out",
            "o",
            "--trace",
            "t.jsonl",
        ],
        tmp.path(),
    );
    assert_eq!(out.status.code(), Some(0));
    let text = fs::read_to_string(tmp.path().join("t.jsonl")).unwrap();
    assert_eq!(text.lines().count(), 50);
    assert!(text.starts_with("{\"tick\":1,\"op\":\"create\""));
}

#[test]
fn replay_input_errors_exit_2() {
    let tmp = tempfile::tempdir().unwrap();
    let out = apex(&["replay", "--out", "o"], tmp.path());
    assert_eq!(out.status.code(), Some(2));
    fs::write(
        tmp.path().join("bad.jsonl"),
        "{\"tick\":1,\"op\":\"explode\",\"path\":\"/a\"}\n",
    )
    .unwrap();
    let out = apex(
        &["replay", "--out", "o", "--trace", "bad.jsonl"],
        tmp.path(),
    );
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("line 1"));
    let out = apex(
        &["replay", "--out", "o", "--trace", "missing.jsonl"],
        tmp.path(),
    );
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn recover_without_deletions_is_empty() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), "[workload]\ntotal_ops = 0\n");
    let out = apex(
        &["recover", "--config", cfg.to_str().unwrap(), "--out", "o"],
        tmp.path(),
    );
    assert_eq!(out.status.code(), Some(0));
    let csv = &files_with(&tmp.path().join("o"), "recover-", ".csv")[0];
    assert_eq!(
        fs::read_to_string(csv).unwrap(),
        "file,file_id,type_class,status,uf,surviving_blocks,total_blocks,metadata_intact,rr\n"
    );
}

#[test]
fn recover_from_trace_lists_deleted_files() {
    let tmp = tempfile::tempdir().unwrap();
    fs::write(
        tmp.path().join("t.jsonl"),
        concat!(
            "{\"tick\":1,\"op\":\"create\",\"path\":\"/a.avi\",\"size_blocks\":3,\"type\":\"partial\"}\n",
            "{\"tick\":2,\"op\":\"read\",\"path\":\"/a.avi\"}\n",
            "{\"tick\":3,\"op\":\"delete\",\"path\":\"/a.avi\"}\n",
        ),
    )
    .unwrap();
    let out = apex(&["recover", "--out", "o", "--trace", "t.jsonl"], tmp.path());
    assert_eq!(
        out.status.code(),
        Some(0),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    let csv =
        fs::read_to_string(&files_with(&tmp.path().join("o"), "recover-", ".csv")[0]).unwrap();
    let rows: Vec<&str> = csv.lines().collect();
    assert_eq!(rows.len(), 2);
    assert_eq!(rows[1], "/a.avi,0,partial,deleted,2,4,4,true,1");
}

#[test]
fn bundled_surveillance_config_compares_policies() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = configs().join("surveillance.toml");
    let out = apex(
        &["compare", "--config", cfg.to_str().unwrap(), "--out", "o"],
        tmp.path(),
    );
    assert_eq!(
        out.status.code(),
        Some(0),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    let csv =
        fs::read_to_string(&files_with(&tmp.path().join("o"), "compare-0-", ".csv")[0]).unwrap();
    let mut lines = csv.lines();
    assert_eq!(
        lines.next(),
        Some("policy,secondary_fraction,secondary_blocks,seed,weighted_rr,mean_rr,per_file_rr")
    );
    let rows: Vec<Vec<&str>> = lines.map(|l| l.split(',').collect()).collect();
    assert_eq!(rows.len(), 3 * 3 * 50);
    for r in rows.iter().filter(|r| r[1] == "0") {
        assert_eq!(r[4], "100");
    }
}

#[test]
fn policy_flag_changes_allocation() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), "[workload]\ntotal_ops = 300\n");
    let cfg = cfg.to_str().unwrap();
    for p in ["apex", "first-fit", "random"] {
        let out = apex(
            &["simulate", "--config", cfg, "--policy", p, "--out", p],
            tmp.path(),
        );
        assert_eq!(out.status.code(), Some(0));
    }
    let snap = |p: &str| {
        fs::read(&files_with(&tmp.path().join(p), "simulate-", ".snapshot.json")[0]).unwrap()
    };
    assert_ne!(snap("apex"), snap("first-fit"));
    assert_ne!(snap("first-fit"), snap("random"));
    let out = apex(&["simulate", "--policy", "best-fit"], tmp.path());
    assert_eq!(out.status.code(), Some(2));
}
