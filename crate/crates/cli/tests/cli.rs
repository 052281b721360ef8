//! End-to-end tests of the `nice` binary over a small synthetic bundle.
//! Everything runs offline against the mock backend.

use std::fs;
use std::path::PathBuf;
use std::process::{Command, Output};

use tempfile::TempDir;

fn bin() -> &'static str {
    env!("CARGO_BIN_EXE_nice")
}

struct Fixture {
    _dir: TempDir,
    root: PathBuf,
    task: PathBuf,
    pool: PathBuf,
    queries: PathBuf,
}

fn embedding(i: usize) -> Vec<f64> {
    let t = i as f64;
    vec![(t * 0.37).cos(), (t * 0.37).sin(), 0.25 + 0.01 * t, 1.0]
}

fn fixture() -> Fixture {
    let dir = TempDir::new().unwrap();
    let root = dir.path().to_path_buf();

    let task = root.join("task.json");
    fs::write(
        &task,
        r#"{
  "name": "clitest",
  "kind": "classification",
  "label_space": ["positive", "negative"],
  "measure": "accuracy",
  "k_shots": 2,
  "num_bins": 5
}"#,
    )
    .unwrap();

    let pool = root.join("pool.jsonl");
    let mut rows = String::new();
    for i in 0..40 {
        rows.push_str(&format!(
            "{}\n",
            serde_json::json!({
                "id": format!("e{i:02}"),
                "input": format!("pool sentence number {i}"),
                "output": if i % 2 == 0 { "positive" } else { "negative" },
                "embedding": embedding(i),
            })
        ));
    }
    fs::write(&pool, rows).unwrap();

    let queries = root.join("queries.jsonl");
    let mut rows = String::new();
    for i in 0..12 {
        rows.push_str(&format!(
            "{}\n",
            serde_json::json!({
                "id": format!("q{i:02}"),
                "input": format!("query sentence number {i}"),
                "gold": if i % 2 == 0 { "positive" } else { "negative" },
                "embedding": embedding(100 + i),
            })
        ));
    }
    fs::write(&queries, rows).unwrap();

    Fixture { _dir: dir, root, task, pool, queries }
}

fn run(args: &[&str]) -> Output {
    Command::new(bin())
        .args(args)
        .env("RUST_LOG", "info")
        .output()
        .expect("binary runs")
}

fn stdout(output: &Output) -> String {
    String::from_utf8_lossy(&output.stdout).into_owned()
}

fn stderr(output: &Output) -> String {
    String::from_utf8_lossy(&output.stderr).into_owned()
}

fn input_args(f: &Fixture) -> Vec<String> {
    vec![
        "--task".into(),
        f.task.display().to_string(),
        "--pool".into(),
        f.pool.display().to_string(),
        "--queries".into(),
        f.queries.display().to_string(),
    ]
}

fn run_with(f: &Fixture, subcommand: &str, extra: &[&str]) -> Output {
    let mut args = vec![subcommand.to_string()];
    args.extend(input_args(f));
    args.extend(extra.iter().map(|s| s.to_string()));
    let arg_refs: Vec<&str> = args.iter().map(String::as_str).collect();
    run(&arg_refs)
}

#[test]
fn validate_accepts_well_formed_bundle() {
    let f = fixture();
    let out = run_with(&f, "validate", &[]);
    assert!(out.status.success(), "stderr: {}", stderr(&out));
    let text = stdout(&out);
    assert!(text.contains("pool: 40 examples"), "{text}");
    assert!(text.contains("feasible"), "{text}");
}

#[test]
fn validate_rejects_malformed_pool_with_exit_1() {
    let f = fixture();
    fs::write(&f.pool, "{\"id\":\"a\",\"input\":\"x\"}\n").unwrap();
    let out = run_with(&f, "validate", &[]);
    assert_eq!(out.status.code(), Some(1));
    let err = stderr(&out);
    let last = err.lines().last().unwrap_or_default();
    let record: serde_json::Value = serde_json::from_str(last).expect("machine-readable error");
    assert_eq!(record["class"], "validation");
    assert!(record["error"].as_str().unwrap().contains("output"));
}

#[test]
fn bins_writes_balanced_partitions() {
    let f = fixture();
    let out_dir = f.root.join("bins-run");
    let out = run_with(
        &f,
        "bins",
        &["--queries-n", "6", "--seed", "5", "--out", out_dir.to_str().unwrap()],
    );
    assert!(out.status.success(), "stderr: {}", stderr(&out));
    let lines = fs::read_to_string(out_dir.join("bins.jsonl")).unwrap();
    let records: Vec<serde_json::Value> = lines
        .lines()
        .map(|l| serde_json::from_str(l).unwrap())
        .collect();
    assert_eq!(records.len(), 6);
    for record in &records {
        let bins = record["bins"].as_array().unwrap();
        assert_eq!(bins.len(), 5);
        assert!(bins.iter().all(|b| b.as_array().unwrap().len() == 8));
        assert!(record["config_hash"].as_str().unwrap().len() == 64);
    }
}

#[test]
fn nice_mock_run_is_deterministic_and_cached() {
    let f = fixture();
    let out_dir = f.root.join("nice-run");
    let cache_dir = f.root.join("cache");
    let args = [
        "--queries-n",
        "6",
        "--samples",
        "3",
        "--seed",
        "5",
        "--backend",
        "mock",
        "--mock-p",
        "1.0",
        "--instruction-kind",
        "ni",
        "--out",
        out_dir.to_str().unwrap(),
        "--cache",
        cache_dir.to_str().unwrap(),
    ];

    let first = run_with(&f, "nice", &args);
    assert!(first.status.success(), "stderr: {}", stderr(&first));
    let report_path = out_dir.join("nice_report_ni.json");
    let first_bytes = fs::read(&report_path).unwrap();
    let report: serde_json::Value = serde_json::from_slice(&first_bytes).unwrap();
    assert_eq!(report["verdict"], "optimize_instruction");
    assert_eq!(report["nice"], 1.0);
    assert!(out_dir.join("nice_report_ni.txt").exists());

    let second = run_with(&f, "nice", &args);
    assert!(second.status.success(), "stderr: {}", stderr(&second));
    let second_bytes = fs::read(&report_path).unwrap();
    assert_eq!(first_bytes, second_bytes, "rerun must be byte-identical");
    assert!(
        stderr(&second).contains("backend calls: 0"),
        "second run should be fully cached: {}",
        stderr(&second)
    );
}

#[test]
fn select_eval_perturb_report_pipeline() {
    let f = fixture();
    let out_dir = f.root.join("pipeline-run");
    let shared = ["--queries-n", "6", "--seed", "5", "--out", out_dir.to_str().unwrap()];

    // select: one deterministic top-k set per query.
    let mut args = shared.to_vec();
    args.extend(["--selector", "top-k", "--k", "2"]);
    let out = run_with(&f, "select", &args);
    assert!(out.status.success(), "stderr: {}", stderr(&out));
    let demos_path = out_dir.join("demos_top_k.jsonl");
    let demo_lines = fs::read_to_string(&demos_path).unwrap();
    assert_eq!(demo_lines.lines().count(), 6);
    for line in demo_lines.lines() {
        let record: serde_json::Value = serde_json::from_str(line).unwrap();
        assert_eq!(record["demo_ids"].as_array().unwrap().len(), 2);
        assert_eq!(record["source"], "top_k_dense");
    }

    // eval: mock backend always answers gold, so accuracy must be 1.
    let mut args = shared.to_vec();
    args.extend([
        "--k",
        "2",
        "--backend",
        "mock",
        "--mock-p",
        "1.0",
        "--instruction-kind",
        "ni",
        "--demos",
        demos_path.to_str().unwrap(),
        "--permutations",
        "3",
    ]);
    let out = run_with(&f, "eval", &args);
    assert!(out.status.success(), "stderr: {}", stderr(&out));
    let eval_path = out_dir.join("eval_top_k_ni_gold.json");
    let eval: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(&eval_path).unwrap()).unwrap();
    assert_eq!(eval["mean_score"], 1.0);
    assert_eq!(eval["queries_used"], 6);
    assert_eq!(eval["prompts_scored"], 18);

    // perturb: random labels stay inside the label space.
    let mut args = shared.to_vec();
    args.extend(["--k", "2", "--label-mode", "random", "--demos", demos_path.to_str().unwrap()]);
    let out = run_with(&f, "perturb", &args);
    assert!(out.status.success(), "stderr: {}", stderr(&out));
    let perturbed = fs::read_to_string(out_dir.join("demos_perturbed_random_label.jsonl")).unwrap();
    for line in perturbed.lines() {
        let record: serde_json::Value = serde_json::from_str(line).unwrap();
        for output in record["outputs"].as_array().unwrap() {
            let s = output.as_str().unwrap();
            assert!(s == "positive" || s == "negative", "{s}");
        }
    }

    // report renders the eval table.
    let out = run(&["report", "--out", out_dir.to_str().unwrap()]);
    assert!(out.status.success(), "stderr: {}", stderr(&out));
    assert!(stdout(&out).contains("top_kdense") || stdout(&out).contains("top_k"), "{}", stdout(&out));

    // Mixing artifacts from a different config must be refused.
    let mut tampered: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(&eval_path).unwrap()).unwrap();
    tampered["config_hash"] = serde_json::Value::String("deadbeef".repeat(8));
    fs::write(out_dir.join("eval_tampered_ni_gold.json"), tampered.to_string()).unwrap();
    let out = run(&["report", "--out", out_dir.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(1), "mixed configs must fail validation");
}

#[test]
fn lock_file_blocks_concurrent_writers() {
    let f = fixture();
    let out_dir = f.root.join("locked-run");
    fs::create_dir_all(&out_dir).unwrap();
    fs::write(out_dir.join(".lock"), "12345\n").unwrap();
    let out = run_with(
        &f,
        "bins",
        &["--queries-n", "6", "--seed", "5", "--out", out_dir.to_str().unwrap()],
    );
    assert_eq!(out.status.code(), Some(2));
    assert!(stderr(&out).contains("locked"), "{}", stderr(&out));
}

#[test]
fn eval_refuses_demos_from_other_config() {
    let f = fixture();
    let out_dir = f.root.join("cross-run");
    let shared = ["--queries-n", "6", "--seed", "5", "--out", out_dir.to_str().unwrap()];
    let mut args = shared.to_vec();
    args.extend(["--selector", "top-k", "--k", "2"]);
    let out = run_with(&f, "select", &args);
    assert!(out.status.success());

    // Same demos file, different seed: different run fingerprint.
    let mut args = vec![
        "--queries-n",
        "6",
        "--seed",
        "6",
        "--out",
        out_dir.to_str().unwrap(),
        "--k",
        "2",
        "--backend",
        "mock",
        "--instruction-kind",
        "ni",
        "--demos",
    ]
    .into_iter()
    .map(String::from)
    .collect::<Vec<_>>();
    args.push(out_dir.join("demos_top_k.jsonl").display().to_string());
    let mut full = vec!["eval".to_string()];
    full.extend(input_args(&f));
    full.extend(args);
    let refs: Vec<&str> = full.iter().map(String::as_str).collect();
    let out = run(&refs);
    assert_eq!(out.status.code(), Some(1));
    assert!(stderr(&out).contains("config"), "{}", stderr(&out));
}
