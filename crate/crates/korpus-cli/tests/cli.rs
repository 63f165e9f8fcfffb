//! Command-line behavior: exit codes, resume semantics, and the small
//! utility subcommands. Everything runs the real binary as a subprocess.

mod common;

use std::fs;
use std::io::Write as _;
use std::process::Stdio;

use korpus_core::bpe::{train_bpe, BpeMode, TrainerParams};
use korpus_core::testutil::random_byte_corpus;

fn exit_code(out: &std::process::Output) -> i32 {
    out.status.code().expect("process terminated by signal")
}

#[test]
fn missing_config_exits_two() {
    let out = common::run_korpus(&["ingest", "-c", "/no/such/config.toml", "--run-dir", "/tmp/x"]);
    assert_eq!(exit_code(&out), 2, "stderr: {}", common::stderr_of(&out));
    assert!(common::stderr_of(&out).starts_with("error: "));
}

#[test]
fn malformed_config_exits_two() {
    let tmp = tempfile::tempdir().unwrap();
    let config = tmp.path().join("broken.toml");
    fs::write(&config, "[run\nworkers = ").unwrap();
    let out = common::run_korpus(&[
        "clean",
        "-c",
        config.to_str().unwrap(),
        "--run-dir",
        tmp.path().join("run").to_str().unwrap(),
    ]);
    assert_eq!(exit_code(&out), 2, "stderr: {}", common::stderr_of(&out));
}

#[test]
fn empty_stage_list_exits_two() {
    let tmp = tempfile::tempdir().unwrap();
    let config = common::write_fixture_config(tmp.path(), "");
    let out = common::run_korpus(&[
        "pipeline",
        "-c",
        config.to_str().unwrap(),
        "--run-dir",
        tmp.path().join("run").to_str().unwrap(),
        "--stages",
        " , ,",
    ]);
    assert_eq!(exit_code(&out), 2);
    assert!(common::stderr_of(&out).contains("stage list is empty"));
}

#[test]
fn unknown_stage_exits_two() {
    let tmp = tempfile::tempdir().unwrap();
    let config = common::write_fixture_config(tmp.path(), "");
    let out = common::run_korpus(&[
        "pipeline",
        "-c",
        config.to_str().unwrap(),
        "--run-dir",
        tmp.path().join("run").to_str().unwrap(),
        "--stages",
        "ingest,frobnicate",
    ]);
    assert_eq!(exit_code(&out), 2);
    assert!(common::stderr_of(&out).contains("unknown stage"));
}

#[test]
fn gapped_stage_list_exits_two() {
    let tmp = tempfile::tempdir().unwrap();
    let config = common::write_fixture_config(tmp.path(), "");
    let out = common::run_korpus(&[
        "pipeline",
        "-c",
        config.to_str().unwrap(),
        "--run-dir",
        tmp.path().join("run").to_str().unwrap(),
        "--stages",
        "ingest,dedup",
    ]);
    assert_eq!(exit_code(&out), 2);
    assert!(common::stderr_of(&out).contains("contiguous"));
}

#[test]
fn missing_upstream_artifact_exits_one() {
    let tmp = tempfile::tempdir().unwrap();
    let config = common::write_fixture_config(tmp.path(), "");
    let run_dir = tmp.path().join("run");
    fs::create_dir_all(&run_dir).unwrap();
    let out = common::run_korpus(&[
        "clean",
        "-c",
        config.to_str().unwrap(),
        "--run-dir",
        run_dir.to_str().unwrap(),
    ]);
    assert_eq!(exit_code(&out), 1, "stderr: {}", common::stderr_of(&out));
    assert!(common::stderr_of(&out).contains("run the ingest stage first"));
}

#[test]
fn completed_stages_resume_as_up_to_date() {
    let tmp = tempfile::tempdir().unwrap();
    let config = common::write_fixture_config(tmp.path(), "");
    let run_dir = tmp.path().join("run");

    let args = [
        "pipeline",
        "-c",
        config.to_str().unwrap(),
        "--run-dir",
        run_dir.to_str().unwrap(),
        "--stages",
        "ingest,clean,dedup",
    ];
    let first = common::run_korpus(&args);
    assert!(first.status.success(), "{}", common::stderr_of(&first));
    let stats_after_first = fs::read(run_dir.join("stats.json")).unwrap();

    let second = common::run_korpus(&args);
    assert!(second.status.success(), "{}", common::stderr_of(&second));
    let stdout = common::stdout_of(&second);
    for stage in ["ingest", "clean", "dedup"] {
        assert!(
            stdout.contains(&format!("stage {stage}: up to date")),
            "missing resume line for {stage} in:\n{stdout}"
        );
    }
    assert_eq!(fs::read(run_dir.join("stats.json")).unwrap(), stats_after_first);
}

#[test]
fn force_reruns_a_completed_stage() {
    let tmp = tempfile::tempdir().unwrap();
    let config = common::write_fixture_config(tmp.path(), "");
    let run_dir = tmp.path().join("run");

    let first = common::run_korpus(&[
        "pipeline",
        "-c",
        config.to_str().unwrap(),
        "--run-dir",
        run_dir.to_str().unwrap(),
        "--stages",
        "ingest,clean",
    ]);
    assert!(first.status.success(), "{}", common::stderr_of(&first));

    let forced = common::run_korpus(&[
        "clean",
        "-c",
        config.to_str().unwrap(),
        "--run-dir",
        run_dir.to_str().unwrap(),
        "--force",
    ]);
    assert!(forced.status.success(), "{}", common::stderr_of(&forced));
    assert!(common::stdout_of(&forced).contains("stage clean: done"));
}

#[test]
fn changed_config_invalidates_downstream_stage() {
    let tmp = tempfile::tempdir().unwrap();
    let config = common::write_fixture_config(tmp.path(), "");
    let run_dir = tmp.path().join("run");

    let first = common::run_korpus(&[
        "pipeline",
        "-c",
        config.to_str().unwrap(),
        "--run-dir",
        run_dir.to_str().unwrap(),
        "--stages",
        "ingest,clean",
    ]);
    assert!(first.status.success(), "{}", common::stderr_of(&first));

    // Tightening a cleaning knob leaves ingest untouched but forces the
    // clean stage to run again.
    let mut text = fs::read_to_string(&config).unwrap();
    text = text.replace(
        "[tokenizer]",
        "[clean.rules]\nmin_words_per_line = 4\n\n[tokenizer]",
    );
    fs::write(&config, text).unwrap();

    let second = common::run_korpus(&[
        "pipeline",
        "-c",
        config.to_str().unwrap(),
        "--run-dir",
        run_dir.to_str().unwrap(),
        "--stages",
        "ingest,clean",
    ]);
    assert!(second.status.success(), "{}", common::stderr_of(&second));
    let stdout = common::stdout_of(&second);
    assert!(stdout.contains("stage ingest: up to date"), "{stdout}");
    assert!(stdout.contains("stage clean: done"), "{stdout}");
}

#[test]
fn encode_reads_stdin_line_by_line() {
    let tmp = tempfile::tempdir().unwrap();
    let corpus = random_byte_corpus(12, 120);
    let params =
        TrainerParams { vocab_size: 350, mode: BpeMode::Byte, character_coverage: 1.0 };
    let model = train_bpe(corpus.iter().map(String::as_str), &params).unwrap();
    let model_path = tmp.path().join("model.bpe");
    model.save(&model_path).unwrap();

    let run = |extra: &[&str]| {
        let mut child = common::korpus_cmd()
            .arg("encode")
            .arg("--model")
            .arg(&model_path)
            .args(extra)
            .stdin(Stdio::piped())
            .stdout(Stdio::piped())
            .stderr(Stdio::piped())
            .spawn()
            .unwrap();
        child
            .stdin
            .take()
            .unwrap()
            .write_all("porid spis ten druhy\nzase prsi\n".as_bytes())
            .unwrap();
        child.wait_with_output().unwrap()
    };

    let ids_out = run(&[]);
    assert!(ids_out.status.success(), "{}", common::stderr_of(&ids_out));
    let ids_text = common::stdout_of(&ids_out);
    let id_lines: Vec<&str> = ids_text.lines().collect();
    assert_eq!(id_lines.len(), 2);
    for line in &id_lines {
        assert!(!line.is_empty());
        for tok in line.split(' ') {
            tok.parse::<u32>().unwrap_or_else(|_| panic!("non-numeric id {tok:?}"));
        }
    }

    let pieces_out = run(&["--pieces"]);
    assert!(pieces_out.status.success(), "{}", common::stderr_of(&pieces_out));
    let pieces_text = common::stdout_of(&pieces_out);
    let piece_lines: Vec<&str> = pieces_text.lines().collect();
    assert_eq!(piece_lines.len(), 2);
    // Same segmentation, different rendering.
    for (ids, pieces) in id_lines.iter().zip(&piece_lines) {
        assert_eq!(ids.split(' ').count(), pieces.split(' ').count());
    }
    assert!(piece_lines[0].parse::<f64>().is_err());
}

#[test]
fn stats_requires_an_existing_run_dir() {
    let out = common::run_korpus(&["stats", "--run-dir", "/no/such/run"]);
    assert_eq!(exit_code(&out), 2);
    assert!(common::stderr_of(&out).contains("is not a run directory"));
}

#[test]
fn stats_renders_zeroes_before_any_stage() {
    let tmp = tempfile::tempdir().unwrap();
    let out = common::run_korpus(&["stats", "--run-dir", tmp.path().to_str().unwrap()]);
    assert!(out.status.success(), "{}", common::stderr_of(&out));
    let stdout = common::stdout_of(&out);
    assert!(stdout.contains("pages kept:        0"), "{stdout}");
    assert!(stdout.contains("removal: 0.0% (no input text)"), "{stdout}");
}

#[test]
fn evaluate_adhoc_renders_folds_and_json() {
    let tmp = tempfile::tempdir().unwrap();
    let predictions = common::data_dir().join("fixture_predictions.tsv");
    let config = common::write_fixture_config(
        tmp.path(),
        &format!("predictions = \"{}\"", predictions.display()),
    );

    let plain = common::run_korpus(&["evaluate", "-c", config.to_str().unwrap()]);
    assert!(plain.status.success(), "{}", common::stderr_of(&plain));
    let stdout = common::stdout_of(&plain);
    assert!(stdout.contains("fold  0:"), "{stdout}");
    assert!(stdout.contains("mean (±std):"), "{stdout}");

    let json = common::run_korpus(&["evaluate", "-c", config.to_str().unwrap(), "--json"]);
    assert!(json.status.success(), "{}", common::stderr_of(&json));
    let parsed: serde_json::Value = serde_json::from_str(&common::stdout_of(&json)).unwrap();
    let folds = parsed["per_fold"].as_array().unwrap();
    assert_eq!(folds.len(), 4);
    assert!(parsed["mean"].is_number() && parsed["std"].is_number());
}

#[test]
fn evaluate_with_run_dir_rejects_folds_flag() {
    let tmp = tempfile::tempdir().unwrap();
    let config = common::write_fixture_config(tmp.path(), "");
    let out = common::run_korpus(&[
        "evaluate",
        "-c",
        config.to_str().unwrap(),
        "--run-dir",
        tmp.path().to_str().unwrap(),
        "--folds",
        "plan.json",
    ]);
    assert_eq!(exit_code(&out), 2);
    assert!(common::stderr_of(&out).contains("--folds only applies without --run-dir"));
}

#[test]
fn evaluate_without_predictions_exits_two() {
    let tmp = tempfile::tempdir().unwrap();
    let config = common::write_fixture_config(tmp.path(), "");
    let out = common::run_korpus(&["evaluate", "-c", config.to_str().unwrap()]);
    assert_eq!(exit_code(&out), 2);
    assert!(common::stderr_of(&out).contains("no prediction file"));
}

#[test]
fn split_folds_writes_a_reusable_plan() {
    let tmp = tempfile::tempdir().unwrap();
    let predictions = common::data_dir().join("fixture_predictions.tsv");
    let config = common::write_fixture_config(tmp.path(), "");
    let plan_path = tmp.path().join("plan.json");

    let out = common::run_korpus(&[
        "split-folds",
        "-c",
        config.to_str().unwrap(),
        "--predictions",
        predictions.to_str().unwrap(),
        "--out",
        plan_path.to_str().unwrap(),
    ]);
    assert!(out.status.success(), "{}", common::stderr_of(&out));
    let plan: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(&plan_path).unwrap()).unwrap();
    assert_eq!(plan["k"], 4);
    assert_eq!(plan["assignments"].as_array().unwrap().len(), 35);

    // The saved plan feeds back into evaluation.
    let config = common::write_fixture_config(
        tmp.path(),
        &format!("predictions = \"{}\"", predictions.display()),
    );
    let eval = common::run_korpus(&[
        "evaluate",
        "-c",
        config.to_str().unwrap(),
        "--folds",
        plan_path.to_str().unwrap(),
    ]);
    assert!(eval.status.success(), "{}", common::stderr_of(&eval));
    assert!(common::stdout_of(&eval).contains("mean (±std):"));
}
