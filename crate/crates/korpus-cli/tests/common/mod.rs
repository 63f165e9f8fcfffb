//! Shared wiring for the integration tests: locations of checked-in data,
//! config file construction with absolute paths, and subprocess helpers.

#![allow(dead_code)]

use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

pub fn manifest_dir() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR"))
}

/// Checked-in goldens and fixture archives.
pub fn data_dir() -> PathBuf {
    manifest_dir().join("tests/data")
}

/// Language-identification training corpora shipped with the repository.
pub fn langid_dir() -> PathBuf {
    manifest_dir().join("../../data/langid")
}

pub fn wordlist_path() -> PathBuf {
    manifest_dir().join("../../data/offensive_cs.txt")
}

pub fn korpus_cmd() -> Command {
    Command::new(env!("CARGO_BIN_EXE_korpus"))
}

pub fn run_korpus(args: &[&str]) -> Output {
    korpus_cmd().args(args).output().expect("spawning the korpus binary")
}

pub fn stdout_of(out: &Output) -> String {
    String::from_utf8_lossy(&out.stdout).into_owned()
}

pub fn stderr_of(out: &Output) -> String {
    String::from_utf8_lossy(&out.stderr).into_owned()
}

/// Writes a pipeline config pointing at the checked-in fixture archive.
/// All paths are absolute so the test does not depend on a working
/// directory. `extra` is appended verbatim for per-test overrides.
pub fn write_fixture_config(dir: &Path, extra: &str) -> PathBuf {
    let index = data_dir().join("fixture_index.tsv");
    // The index names archives relative to a base; the fixture archive is
    // addressed relative to the data directory itself.
    let config = format!(
        r#"[run]
workers = 1

[ingest]
crawl_id = "CC-MAIN-2018-34"
index = "{index}"
archive_base = "{base}"
url_pattern = "*.cz"

[clean]
offensive_words = "{words}"
langid_training_dir = "{langid}"

[tokenizer]
vocab_size = 400
mode = "byte"

[pretrain]
seq_len = 64
rng_seed = 7

[eval]
k = 4
mode = "multilabel"
{extra}
"#,
        index = index.display(),
        base = data_dir().display(),
        words = wordlist_path().display(),
        langid = langid_dir().display(),
    );
    let path = dir.join("pipeline.toml");
    fs::write(&path, config).expect("writing test config");
    path
}
