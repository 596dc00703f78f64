use std::path::Path;

use thoughtcal::cli::{main_with_args, EXIT_CONFIG, EXIT_NUMERIC, EXIT_OK, EXIT_USAGE};
use thoughtcal::RunConfig;

fn run(args: &[&str]) -> (i32, String, String) {
    let mut out = Vec::new();
    let mut err = Vec::new();
    let mut full = vec!["thoughtcal"];
    full.extend_from_slice(args);
    let code = main_with_args(full, &mut out, &mut err);
    (code, String::from_utf8(out).unwrap(), String::from_utf8(err).unwrap())
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

fn tiny_config() -> RunConfig {
    let mut cfg = RunConfig::default();
    cfg.task.count = 24;
    cfg.task.holdout = 5;
    cfg.task.probe = 5;
    cfg.task.k_range = [2, 3];
    cfg.task.modulus = 5;
    cfg.model.d_base = 6;
    cfg.model.d_asst = 4;
    cfg.model.n_thoughts = 2;
    cfg.model.energy_hidden = vec![5];
    cfg.model.energy_position_dim = 2;
    cfg.model.base_ff_hidden = 8;
    cfg.train.epochs = 1;
    cfg.train.batch_size = 4;
    cfg.train.pretrain_epochs = 2;
    cfg.train.pretrain_target_accuracy = 0.0;
    cfg.eval.n_chains = 3;
    cfg
}

#[test]
fn init_config_round_trips() {
    let (code, out, _) = run(&["init-config"]);
    assert_eq!(code, EXIT_OK);
    assert_eq!(RunConfig::from_json(&out).unwrap(), RunConfig::default());
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("c.json");
    assert_eq!(run(&["init-config", "--out", p(&path)]).0, EXIT_OK);
    assert_eq!(RunConfig::load(&path).unwrap(), RunConfig::default());
}

#[test]
fn usage_errors_exit_one() {
    assert_eq!(run(&["no-such-command"]).0, EXIT_USAGE);
    assert_eq!(run(&["gen-data"]).0, EXIT_USAGE);
    assert_eq!(run(&["gen-data", "--config", "/nonexistent/c.json", "--out", "/tmp/x"]).0, EXIT_USAGE);
    let (code, out, _) = run(&["--help"]);
    assert_eq!(code, EXIT_OK);
    assert!(out.contains("gradcheck"));
}

#[test]
fn malformed_config_exits_two() {
    let dir = tempfile::tempdir().unwrap();
    let bad = dir.path().join("bad.json");
    std::fs::write(&bad, "{ not json").unwrap();
    let out = dir.path().join("d.jsonl");
    assert_eq!(run(&["gen-data", "--config", p(&bad), "--out", p(&out)]).0, EXIT_CONFIG);
    let mut v: serde_json::Value = serde_json::from_str(&RunConfig::default().to_json().unwrap()).unwrap();
    v["langevin"]["etta"] = serde_json::json!(0.1);
    std::fs::write(&bad, v.to_string()).unwrap();
    assert_eq!(run(&["gen-data", "--config", p(&bad), "--out", p(&out)]).0, EXIT_CONFIG);
    assert_eq!(run(&["gradcheck", "--config", p(&bad)]).0, EXIT_CONFIG);
}

#[test]
fn gradcheck_reports_max_errors() {
    let (code, out, _) = run(&["gradcheck"]);
    assert_eq!(code, EXIT_OK);
    let last: serde_json::Value = serde_json::from_str(out.lines().last().unwrap()).unwrap();
    assert_eq!(last["cases"], 32);
    assert_eq!(last["passed"], true);
    assert!(last["max_tape_vs_fd"].as_f64().unwrap() <= 1e-4);
}

#[test]
fn full_lifecycle() {
    let dir = tempfile::tempdir().unwrap();
    let d = |name: &str| dir.path().join(name);
    std::fs::write(d("c.json"), tiny_config().to_json().unwrap()).unwrap();
    let (c, data, base, head) = (d("c.json"), d("data.jsonl"), d("base.ckpt"), d("head.ckpt"));

    assert_eq!(run(&["gen-data", "--config", p(&c), "--out", p(&data)]).0, EXIT_OK);
    let (code, out, _) = run(&["pretrain-base", "--config", p(&c), "--data", p(&data), "--out", p(&base)]);
    assert_eq!(code, EXIT_OK);
    assert!(!out.is_empty());
    assert!(d("base.assistant.ckpt").exists());
    let base_bytes = std::fs::read(&base).unwrap();

    let (code, out, _) = run(&["train", "--config", p(&c), "--data", p(&data), "--base", p(&base), "--out", p(&head)]);
    assert_eq!(code, EXIT_OK);
    assert_eq!(out.lines().count(), 6);
    let first: serde_json::Value = serde_json::from_str(out.lines().next().unwrap()).unwrap();
    assert!(first["l_total"].is_f64());
    assert_eq!(std::fs::read(&base).unwrap(), base_bytes);

    let eval = |out_name: &str, extra: &[&str]| {
        let mut args = vec!["eval", "--config", p(&c), "--data", p(&data), "--base", p(&base), "--head", p(&head)];
        let path = d(out_name);
        let path_str = path.to_str().unwrap().to_string();
        args.push("--out");
        args.push(&path_str);
        args.extend_from_slice(extra);
        let code = run(&args).0;
        (code, std::fs::read_to_string(&path).unwrap_or_default())
    };
    let greedy = ["--n-chains", "1", "--decode-temperature", "0"];
    let (c1, r1) = eval("r1.jsonl", &greedy);
    let (c2, r2) = eval("r2.jsonl", &greedy);
    assert_eq!((c1, c2), (EXIT_OK, EXIT_OK));
    assert_eq!(r1, r2);
    let summary: serde_json::Value = serde_json::from_str(r1.lines().next().unwrap()).unwrap();
    assert_eq!(summary["n_chains"], 1);
    assert_eq!(summary["passN_accuracy"], summary["pass1_accuracy"]);
    assert_eq!(r1.lines().count(), 6);

    let (code, ablation) = eval("r3.jsonl", &["--no-ebm"]);
    assert_eq!(code, EXIT_OK);
    let summary: serde_json::Value = serde_json::from_str(ablation.lines().next().unwrap()).unwrap();
    assert_eq!(summary["calibration_steps"], 0);
    assert_eq!(eval("r4.jsonl", &["--n-chains", "0"]).0, EXIT_USAGE);

    let (code, out, _) = run(&["demo", "--question", "3 +4 x2", "--config", p(&c), "--base", p(&base), "--head", p(&head)]);
    assert_eq!(code, EXIT_OK, "{out}");
    assert_eq!(out.lines().filter(|l| l.starts_with("step ")).count(), 4);
    assert_eq!(run(&["demo", "--question", "3 ?4", "--config", p(&c), "--base", p(&base), "--head", p(&head)]).0, EXIT_USAGE);
    assert_eq!(run(&["train", "--config", p(&c), "--data", p(&data), "--base", p(&d("missing.ckpt")), "--out", p(&head)]).0, EXIT_USAGE);
}

#[test]
fn missed_pretraining_target_exits_three() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = tiny_config();
    cfg.train.pretrain_epochs = 1;
    cfg.train.pretrain_target_accuracy = 1.0;
    let c = dir.path().join("c.json");
    std::fs::write(&c, cfg.to_json().unwrap()).unwrap();
    let data = dir.path().join("d.jsonl");
    assert_eq!(run(&["gen-data", "--config", p(&c), "--out", p(&data)]).0, EXIT_OK);
    let base = dir.path().join("b.ckpt");
    let (code, _, err) = run(&["pretrain-base", "--config", p(&c), "--data", p(&data), "--out", p(&base)]);
    assert_eq!(code, EXIT_NUMERIC);
    assert!(err.contains("below target"));
}

#[test]
fn binary_propagates_exit_codes() {
    let bin = env!("CARGO_BIN_EXE_thoughtcal");
    let status = |args: &[&str]| std::process::Command::new(bin).args(args).output().unwrap().status.code();
    assert_eq!(status(&["init-config"]), Some(EXIT_OK));
    assert_eq!(status(&["bogus"]), Some(EXIT_USAGE));
    let dir = tempfile::tempdir().unwrap();
    let bad = dir.path().join("bad.json");
    std::fs::write(&bad, "[]").unwrap();
    assert_eq!(status(&["gradcheck", "--config", p(&bad)]), Some(EXIT_CONFIG));
}
