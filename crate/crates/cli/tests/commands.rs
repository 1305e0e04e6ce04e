use std::path::Path;
use std::process::{Command, Output};

use lunacat::config::RunConfig;

fn lunacat(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_lunacat"))
        .args(args)
        .env("RUST_LOG", "warn")
        .output()
        .unwrap()
}

fn tiny_config(dir: &Path, iterations: u64) -> RunConfig {
    let mut c = RunConfig::default();
    c.learner.total_iterations = iterations;
    c.learner.num_envs = 2;
    c.learner.horizon_steps = 8;
    c.learner.hidden = vec![8];
    c.output.directory = dir.to_path_buf();
    c.output.checkpoint_every = 1;
    c
}

fn write(c: &RunConfig, path: &Path) -> String {
    std::fs::write(path, c.to_toml().unwrap()).unwrap();
    path.to_str().unwrap().to_string()
}

#[test]
fn train_one_iteration_writes_artifacts() {
    let tmp = tempfile::tempdir().unwrap();
    let run = tmp.path().join("run");
    let cfg = write(&tiny_config(&run, 1), &tmp.path().join("c.toml"));
    let out = lunacat(&["train", &cfg]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let metrics = std::fs::read_to_string(run.join("metrics.csv")).unwrap();
    assert_eq!(metrics.lines().count(), 2);
    assert!(run.join("checkpoint.bin").exists());
    assert!(run.join("checkpoints/iter_000001.bin").exists());
    let saved = RunConfig::load(&run.join("config.toml")).unwrap();
    assert_eq!(saved, tiny_config(&run, 1));
}

#[test]
fn zero_iterations_writes_only_the_initial_checkpoint() {
    let tmp = tempfile::tempdir().unwrap();
    let run = tmp.path().join("run");
    let cfg = write(&tiny_config(&run, 0), &tmp.path().join("c.toml"));
    assert!(lunacat(&["train", &cfg]).status.success());
    assert_eq!(std::fs::read_to_string(run.join("metrics.csv")).unwrap().lines().count(), 1);
    assert!(run.join("checkpoint.bin").exists());
    assert_eq!(std::fs::read_dir(run.join("checkpoints")).unwrap().count(), 0);
}

#[test]
fn missing_constraints_section_is_a_usage_error() {
    let tmp = tempfile::tempdir().unwrap();
    let text = tiny_config(tmp.path(), 1).to_toml().unwrap();
    let cut = text.find("[[constraints]]").unwrap();
    let path = tmp.path().join("c.toml");
    std::fs::write(&path, &text[..cut]).unwrap();
    let out = lunacat(&["train", path.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("constraints"));
}

#[test]
fn unreadable_config_and_bad_flags_are_usage_errors() {
    assert_eq!(lunacat(&["train", "/nonexistent/c.toml"]).status.code(), Some(2));
    assert_eq!(lunacat(&["eval"]).status.code(), Some(2));
    assert_eq!(lunacat(&["frobnicate"]).status.code(), Some(2));
    assert_eq!(lunacat(&["tinycmdp", "--gamma", "1.0"]).status.code(), Some(2));
}

#[test]
fn eval_reports_untrained_policy_and_rejects_zero_episodes() {
    let tmp = tempfile::tempdir().unwrap();
    let run = tmp.path().join("run");
    let cfg = write(&tiny_config(&run, 0), &tmp.path().join("c.toml"));
    assert!(lunacat(&["train", &cfg]).status.success());
    let ck = run.join("checkpoint.bin");
    let ck = ck.to_str().unwrap();
    let out = lunacat(&["eval", ck, "--episodes", "0"]);
    assert_eq!(out.status.code(), Some(2));

    let out = lunacat(&["eval", ck, "--episodes", "3", "--seed", "2"]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let text = String::from_utf8_lossy(&out.stdout);
    for name in lunacat_sim::signals::CONSTRAINT_NAMES {
        assert!(text.contains(name));
    }
    let violations = std::fs::read_to_string(run.join("eval/eval_violations.csv")).unwrap();
    let names: Vec<&str> = violations.lines().skip(1).map(|l| l.split(',').next().unwrap()).collect();
    assert_eq!(names, lunacat_sim::signals::CONSTRAINT_NAMES);
    let episodes = std::fs::read_to_string(run.join("eval/eval_episodes.csv")).unwrap();
    assert_eq!(episodes.lines().count(), 4);
    for line in episodes.lines().skip(1) {
        let f: Vec<f64> = line.split(',').map(|x| x.parse().unwrap()).collect();
        assert!(f[1].is_finite() && f[1] >= 0.0 && f[2].is_finite() && f[2] >= 0.0);
        assert_eq!(f[3], 1000.0);
    }
}

#[test]
fn eval_rejects_mismatched_network_shape() {
    let tmp = tempfile::tempdir().unwrap();
    let run = tmp.path().join("run");
    let cfg = write(&tiny_config(&run, 0), &tmp.path().join("c.toml"));
    assert!(lunacat(&["train", &cfg]).status.success());
    let mut other = tiny_config(&run, 0);
    other.learner.hidden = vec![9];
    let other = write(&other, &tmp.path().join("other.toml"));
    let ck = run.join("checkpoint.bin");
    let out = lunacat(&["eval", ck.to_str().unwrap(), "--episodes", "1", "--config", &other]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("does not match"));
}

#[test]
fn corrupted_checkpoint_is_rejected() {
    let tmp = tempfile::tempdir().unwrap();
    let run = tmp.path().join("run");
    let cfg = write(&tiny_config(&run, 0), &tmp.path().join("c.toml"));
    assert!(lunacat(&["train", &cfg]).status.success());
    let ck = run.join("checkpoint.bin");
    let mut bytes = std::fs::read(&ck).unwrap();
    let mid = bytes.len() / 2;
    bytes[mid] ^= 0x10;
    std::fs::write(&ck, bytes).unwrap();
    let out = lunacat(&["eval", ck.to_str().unwrap(), "--episodes", "1"]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn gradcheck_passes_and_catches_injected_fault() {
    let ok = lunacat(&["gradcheck", "--seed", "1", "--networks", "3"]);
    assert_eq!(ok.status.code(), Some(0));
    assert!(String::from_utf8_lossy(&ok.stdout).contains("PASS"));
    let bad = lunacat(&["gradcheck", "--seed", "1", "--networks", "3", "--inject-sign-flip"]);
    assert_eq!(bad.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&bad.stdout).contains("FAIL"));
}

#[test]
fn tinycmdp_with_zero_discount_is_well_formed() {
    for extra in [&[][..], &["--disable-cat"][..]] {
        let mut args = vec!["tinycmdp", "--seed", "3", "--gamma", "0"];
        args.extend_from_slice(extra);
        let out = lunacat(&args);
        assert!(out.status.success());
        let text = String::from_utf8_lossy(&out.stdout);
        assert!(text.contains("gamma=0 "));
        assert!(text.contains("shortcut_rate="));
        assert!(text.contains("exact_values=["));
    }
}

#[test]
fn export_summarizes_and_rejects_empty_metrics() {
    let tmp = tempfile::tempdir().unwrap();
    let run = tmp.path().join("run");
    let cfg = write(&tiny_config(&run, 2), &tmp.path().join("c.toml"));
    assert!(lunacat(&["train", &cfg]).status.success());
    let ck = run.join("checkpoint.bin");
    assert!(lunacat(&["eval", ck.to_str().unwrap(), "--episodes", "2"]).status.success());
    let dir = run.to_str().unwrap();
    assert!(lunacat(&["export", dir, "--format", "json"]).status.success());
    let first = std::fs::read(run.join("export/summary.json")).unwrap();
    let parsed: serde_json::Value = serde_json::from_slice(&first).unwrap();
    assert_eq!(parsed["iterations"], 2);
    assert_eq!(parsed["evaluation"]["episodes"], 2);
    assert!(lunacat(&["export", dir, "--format", "json"]).status.success());
    assert_eq!(std::fs::read(run.join("export/summary.json")).unwrap(), first);
    assert!(lunacat(&["export", dir]).status.success());
    let csv = std::fs::read_to_string(run.join("export/summary.csv")).unwrap();
    assert!(csv.starts_with("metric,last,tail_mean,min,max"));
    assert!(run.join("export/position_error_hist.csv").exists());

    let empty = tmp.path().join("empty");
    std::fs::create_dir_all(&empty).unwrap();
    std::fs::write(empty.join("metrics.csv"), "iteration,mean_reward\n").unwrap();
    let out = lunacat(&["export", empty.to_str().unwrap()]);
    assert_ne!(out.status.code(), Some(0));
    assert!(String::from_utf8_lossy(&out.stderr).contains("metrics.csv"));
    let out = lunacat(&["export", tmp.path().join("nothing").to_str().unwrap()]);
    assert_ne!(out.status.code(), Some(0));
}

#[test]
fn shipped_configs_parse_and_round_trip() {
    let root = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs");
    for entry in std::fs::read_dir(root).unwrap() {
        let path = entry.unwrap().path();
        let c = RunConfig::load(&path).unwrap();
        assert_eq!(RunConfig::parse(&c.to_toml().unwrap()).unwrap(), c, "{}", path.display());
    }
}
