//! Run statistics collected across pipeline stages.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::sync::Mutex;

use serde::{Deserialize, Serialize};

/// Counters accumulated over one pipeline run.
///
/// Byte counters measure text payloads (record bodies in, retained cleaned
/// lines out), not container or framing overhead.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct RunStats {
    pub bytes_downloaded: u64,
    pub records_parsed: u64,
    pub pages_kept: u64,
    pub pages_dropped_by_rule: BTreeMap<String, u64>,
    pub lines_kept: u64,
    pub lines_dropped_by_rule: BTreeMap<String, u64>,
    pub dedup_removed: u64,
    pub input_text_bytes: u64,
    pub retained_text_bytes: u64,
    /// `1 - retained_text_bytes / input_text_bytes`; kept in sync by
    /// [`RunStats::finalize`] so serialized snapshots carry it.
    pub removal_percentage: f64,
}

impl RunStats {
    pub fn finalize(&mut self) {
        self.removal_percentage = if self.input_text_bytes == 0 {
            0.0
        } else {
            1.0 - self.retained_text_bytes as f64 / self.input_text_bytes as f64
        };
    }

    /// Merges counters from another snapshot (used when stages run as
    /// separate processes and each persists its own increments).
    pub fn absorb(&mut self, other: &RunStats) {
        self.bytes_downloaded += other.bytes_downloaded;
        self.records_parsed += other.records_parsed;
        self.pages_kept += other.pages_kept;
        self.lines_kept += other.lines_kept;
        self.dedup_removed += other.dedup_removed;
        self.input_text_bytes += other.input_text_bytes;
        self.retained_text_bytes += other.retained_text_bytes;
        for (rule, n) in &other.pages_dropped_by_rule {
            *self.pages_dropped_by_rule.entry(rule.clone()).or_insert(0) += n;
        }
        for (rule, n) in &other.lines_dropped_by_rule {
            *self.lines_dropped_by_rule.entry(rule.clone()).or_insert(0) += n;
        }
        self.finalize();
    }

    /// Human-readable report. Removal is shown with one decimal digit; a
    /// zero-input run is labelled explicitly rather than shown as a
    /// meaningless ratio.
    pub fn render(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "bytes downloaded:  {}", self.bytes_downloaded);
        let _ = writeln!(out, "records parsed:    {}", self.records_parsed);
        let _ = writeln!(out, "pages kept:        {}", self.pages_kept);
        let _ = writeln!(out, "pages dropped:");
        for (rule, n) in &self.pages_dropped_by_rule {
            let _ = writeln!(out, "  {rule}: {n}");
        }
        let _ = writeln!(out, "lines kept:        {}", self.lines_kept);
        let _ = writeln!(out, "lines dropped:");
        for (rule, n) in &self.lines_dropped_by_rule {
            let _ = writeln!(out, "  {rule}: {n}");
        }
        let _ = writeln!(out, "duplicate lines removed: {}", self.dedup_removed);
        let _ = writeln!(out, "input text bytes:  {}", self.input_text_bytes);
        let _ = writeln!(out, "retained bytes:    {}", self.retained_text_bytes);
        let pct = if self.input_text_bytes == 0 {
            0.0
        } else {
            (1.0 - self.retained_text_bytes as f64 / self.input_text_bytes as f64) * 100.0
        };
        if self.input_text_bytes == 0 {
            let _ = writeln!(out, "removal: 0.0% (no input text)");
        } else {
            let _ = writeln!(out, "removal: {pct:.1}%");
        }
        out
    }
}

/// Rule identifiers used as audit keys. Line rules and page rules share the
/// namespace of one map each in [`RunStats`], so names must stay distinct.
pub mod rule {
    pub const TERMINAL_PUNCTUATION: &str = "terminal-punctuation";
    pub const BANNED_SUBSTRING: &str = "banned-substring";
    pub const MIN_WORDS: &str = "min-words";
    pub const OFFENSIVE_WORD: &str = "offensive-word";
    pub const PAGE_KILL_STRING: &str = "page-kill-string";
    pub const LANGUAGE_FILTER: &str = "language-filter";
    pub const MIN_SENTENCES: &str = "min-sentences";
    pub const DUPLICATE_LINE: &str = "duplicate-line";
}

/// Thread-safe sink for audit counters; cheap enough for per-record
/// increments and deterministic to snapshot (keys are sorted).
#[derive(Debug, Default)]
pub struct StatsSink {
    inner: Mutex<RunStats>,
}

impl StatsSink {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn page_dropped(&self, rule: &str) {
        let mut s = self.inner.lock().unwrap();
        *s.pages_dropped_by_rule.entry(rule.to_string()).or_insert(0) += 1;
    }

    pub fn lines_dropped(&self, rule: &str, n: u64) {
        if n == 0 {
            return;
        }
        let mut s = self.inner.lock().unwrap();
        *s.lines_dropped_by_rule.entry(rule.to_string()).or_insert(0) += n;
    }

    pub fn update(&self, f: impl FnOnce(&mut RunStats)) {
        let mut s = self.inner.lock().unwrap();
        f(&mut s);
    }

    pub fn snapshot(&self) -> RunStats {
        let mut s = self.inner.lock().unwrap().clone();
        s.finalize();
        s
    }
}
