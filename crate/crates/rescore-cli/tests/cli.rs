//! End-to-end tests for the `rescore` binary against the checked-in demo
//! corpus and its scripted fixtures.

use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn demo(file: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR"))
        .join("../../demo")
        .join(file)
}

fn rescore(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_rescore"))
        .args(args)
        .output()
        .expect("spawn rescore")
}

fn stdout(output: &Output) -> String {
    String::from_utf8_lossy(&output.stdout).into_owned()
}

fn stderr(output: &Output) -> String {
    String::from_utf8_lossy(&output.stderr).into_owned()
}

fn exit_code(output: &Output) -> i32 {
    output.status.code().expect("exit code")
}

fn run_demo(out: &Path, extra: &[&str]) -> Output {
    let data = demo("essays.tsv");
    let mock = demo("mock");
    let mut args = vec![
        "run",
        "--data",
        data.to_str().unwrap(),
        "--mock",
        mock.to_str().unwrap(),
        "--out",
        out.to_str().unwrap(),
    ];
    args.extend_from_slice(extra);
    rescore(&args)
}

// ============================================================================
// Argument handling
// ============================================================================

#[test]
fn help_exits_zero_and_lists_subcommands() {
    let out = rescore(&["--help"]);
    assert_eq!(exit_code(&out), 0);
    let text = stdout(&out);
    for name in ["run", "ablate", "score", "report", "validate-corpus"] {
        assert!(text.contains(name), "--help must mention {name}");
    }
}

#[test]
fn missing_data_flag_is_a_usage_error() {
    let out = rescore(&["run", "--out", "/tmp/nowhere"]);
    assert_eq!(exit_code(&out), 1);
    assert!(stderr(&out).contains("--data"));
}

#[test]
fn unknown_flags_are_rejected() {
    let out = rescore(&["validate-corpus", "--data", "x.tsv", "--frobnicate"]);
    assert_eq!(exit_code(&out), 1);
}

#[test]
fn run_requires_a_backend_choice() {
    let dir = tempfile::tempdir().unwrap();
    let data = demo("essays.tsv");
    let out = rescore(&[
        "run",
        "--data",
        data.to_str().unwrap(),
        "--out",
        dir.path().to_str().unwrap(),
    ]);
    assert_eq!(exit_code(&out), 1);
    assert!(stderr(&out).contains("--mock"));
}

#[test]
fn mock_and_provider_config_conflict() {
    let out = rescore(&[
        "run",
        "--data",
        "x.tsv",
        "--mock",
        "m",
        "--provider-config",
        "p.json",
        "--out",
        "o",
    ]);
    assert_eq!(exit_code(&out), 1);
}

#[test]
fn inverted_trait_range_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let out = run_demo(dir.path(), &["--trait-range", "6:1"]);
    assert_eq!(exit_code(&out), 1);
    assert!(stderr(&out).contains("MIN"));
}

// ============================================================================
// run
// ============================================================================

#[test]
fn mock_run_scores_the_demo_corpus() {
    let dir = tempfile::tempdir().unwrap();
    let out = run_demo(dir.path(), &[]);
    assert_eq!(exit_code(&out), 0, "stderr: {}", stderr(&out));
    assert!(stdout(&out).contains("scored 3, failed 0"));

    let predictions = std::fs::read_to_string(dir.path().join("predictions.jsonl")).unwrap();
    assert_eq!(predictions.lines().count(), 3);
    assert!(dir.path().join("manifest.json").exists());
    assert!(dir.path().join("audit.jsonl").exists());
}

#[test]
fn rerun_skips_finished_essays_and_keeps_bytes() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(exit_code(&run_demo(dir.path(), &[])), 0);
    let first = std::fs::read(dir.path().join("predictions.jsonl")).unwrap();

    let again = run_demo(dir.path(), &[]);
    assert_eq!(exit_code(&again), 0);
    assert!(stdout(&again).contains("(3 already done), scored 0"));
    let second = std::fs::read(dir.path().join("predictions.jsonl")).unwrap();
    assert_eq!(first, second);
}

#[test]
fn max_essays_limits_and_resume_completes() {
    let dir = tempfile::tempdir().unwrap();
    let first = run_demo(dir.path(), &["--max-essays", "1"]);
    assert_eq!(exit_code(&first), 0);
    assert!(stdout(&first).contains("scored 1"));

    let rest = run_demo(dir.path(), &[]);
    assert_eq!(exit_code(&rest), 0);
    assert!(stdout(&rest).contains("(1 already done), scored 2"));
}

#[test]
fn no_dr_is_recorded_in_the_manifest() {
    let dir = tempfile::tempdir().unwrap();
    let out = run_demo(dir.path(), &["--no-dr"]);
    assert_eq!(exit_code(&out), 0, "stderr: {}", stderr(&out));

    let manifest: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(dir.path().join("manifest.json")).unwrap())
            .unwrap();
    assert_eq!(manifest["dr_enabled"], serde_json::json!(false));
    assert_eq!(manifest["method"], serde_json::json!("res_no_dr"));
}

#[test]
fn fraction_subsamples_the_prompt() {
    let dir = tempfile::tempdir().unwrap();
    let out = run_demo(dir.path(), &["--fraction", "0.34"]);
    assert_eq!(exit_code(&out), 0, "stderr: {}", stderr(&out));
    assert!(stdout(&out).contains("planned 1 essays"));
}

#[test]
fn missing_api_key_fails_at_runtime_not_parse_time() {
    let dir = tempfile::tempdir().unwrap();
    let config = dir.path().join("providers.json");
    std::fs::write(
        &config,
        r#"{"providers": [{
            "provider_id": "openai",
            "endpoint": "http://127.0.0.1:9/v1/chat/completions",
            "auth_env_var": "RESCORE_TEST_ABSENT_KEY",
            "price_per_1k_prompt_tokens_usd": 0.0,
            "price_per_1k_completion_tokens_usd": 0.0
        }]}"#,
    )
    .unwrap();

    let data = demo("essays.tsv");
    let out = rescore(&[
        "run",
        "--data",
        data.to_str().unwrap(),
        "--provider-config",
        config.to_str().unwrap(),
        "--out",
        dir.path().join("run").to_str().unwrap(),
        "--max-essays",
        "1",
    ]);
    assert_eq!(exit_code(&out), 2);
    assert!(stderr(&out).contains("RESCORE_TEST_ABSENT_KEY"));
}

// ============================================================================
// score / report / ablate / validate-corpus
// ============================================================================

#[test]
fn score_of_a_finished_run_matches_labels() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(exit_code(&run_demo(dir.path(), &[])), 0);

    let data = demo("essays.tsv");
    let out = rescore(&[
        "score",
        "--predictions",
        dir.path().to_str().unwrap(),
        "--data",
        data.to_str().unwrap(),
    ]);
    assert_eq!(exit_code(&out), 0, "stderr: {}", stderr(&out));
    assert!(stdout(&out).contains("macro average over 1 prompts (3 essays): 1.000"));
}

#[test]
fn score_names_unknown_essays() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("predictions.jsonl");
    std::fs::write(&path, "{\"essay_id\": 999, \"prediction\": 2}\n").unwrap();

    let data = demo("essays.tsv");
    let out = rescore(&[
        "score",
        "--predictions",
        path.to_str().unwrap(),
        "--data",
        data.to_str().unwrap(),
    ]);
    assert_eq!(exit_code(&out), 1);
    assert!(stderr(&out).contains("999"));
}

#[test]
fn report_combines_runs_and_writes_csv() {
    let res_dir = tempfile::tempdir().unwrap();
    let van_dir = tempfile::tempdir().unwrap();
    assert_eq!(exit_code(&run_demo(res_dir.path(), &[])), 0);
    assert_eq!(
        exit_code(&run_demo(van_dir.path(), &["--method", "vanilla"])),
        0
    );

    let report_dir = tempfile::tempdir().unwrap();
    let data = demo("essays.tsv");
    let runs = format!(
        "{},{}",
        res_dir.path().to_str().unwrap(),
        van_dir.path().to_str().unwrap()
    );
    let out = rescore(&[
        "report",
        "--runs",
        &runs,
        "--data",
        data.to_str().unwrap(),
        "--out",
        report_dir.path().to_str().unwrap(),
    ]);
    assert_eq!(exit_code(&out), 0, "stderr: {}", stderr(&out));
    let text = stdout(&out);
    assert!(text.contains("res gpt-4.1-mini"));
    assert!(text.contains("vanilla gpt-4.1-mini"));
    assert!(report_dir.path().join("report.csv").exists());
    assert!(report_dir.path().join("report.txt").exists());
}

#[test]
fn ablate_dr_axis_writes_both_tables() {
    let dir = tempfile::tempdir().unwrap();
    let data = demo("essays.tsv");
    let mock = demo("mock");
    let out = rescore(&[
        "ablate",
        "--data",
        data.to_str().unwrap(),
        "--mock",
        mock.to_str().unwrap(),
        "--axis",
        "dr",
        "--out",
        dir.path().to_str().unwrap(),
    ]);
    assert_eq!(exit_code(&out), 0, "stderr: {}", stderr(&out));
    let text = stdout(&out);
    assert!(text.contains("dr_on"));
    assert!(text.contains("dr_off"));
    assert!(dir.path().join("ablation.txt").exists());
    assert!(dir.path().join("ablation.csv").exists());
}

#[test]
fn ablate_agents_axis_requires_values() {
    let dir = tempfile::tempdir().unwrap();
    let data = demo("essays.tsv");
    let mock = demo("mock");
    let out = rescore(&[
        "ablate",
        "--data",
        data.to_str().unwrap(),
        "--mock",
        mock.to_str().unwrap(),
        "--axis",
        "agents",
        "--out",
        dir.path().to_str().unwrap(),
    ]);
    assert_eq!(exit_code(&out), 1);
    assert!(stderr(&out).contains("--values"));
}

#[test]
fn validate_corpus_prints_per_prompt_stats() {
    let data = demo("essays.tsv");
    let out = rescore(&["validate-corpus", "--data", data.to_str().unwrap()]);
    assert_eq!(exit_code(&out), 0);
    let text = stdout(&out);
    assert!(text.contains("total 3 essays"));
    assert!(text.contains("0-3"));
}

#[test]
fn validate_corpus_rejects_missing_column() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("bad.tsv");
    std::fs::write(&path, "essay_id\tessay\n1\thello\n").unwrap();
    let out = rescore(&["validate-corpus", "--data", path.to_str().unwrap()]);
    assert_eq!(exit_code(&out), 1);
    assert!(stderr(&out).contains("essay_set"));
}
