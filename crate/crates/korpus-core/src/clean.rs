//! Line- and page-level cleaning rules for crawled text.
//!
//! Lines are judged first, pages second, and each rule reports under a
//! stable audit key. Rules are checked in a fixed order and a dropped item
//! is attributed to the first rule it violated.

use std::collections::{BTreeMap, HashSet};
use std::io::{self, BufRead, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::langid::{LangIdError, LangProfileModel};
use crate::stats::{rule, StatsSink};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CleaningConfig {
    /// A kept line's last non-whitespace character must be one of these.
    pub terminal_marks: Vec<char>,
    /// Case-insensitive substrings that drop a line (boilerplate markers).
    pub banned_substrings: Vec<String>,
    /// Case-insensitive substrings that drop the whole page.
    pub page_kill_strings: Vec<String>,
    pub language_code: String,
    /// Minimum detector probability for `language_code`.
    pub language_threshold: f64,
    pub min_words_per_line: usize,
    pub min_sentences_per_page: usize,
}

impl Default for CleaningConfig {
    fn default() -> Self {
        CleaningConfig {
            terminal_marks: vec!['.', '?', '!'],
            banned_substrings: vec!["javascript".into(), "cookies".into()],
            page_kill_strings: vec!["lorem ipsum".into(), "{".into()],
            language_code: "ces".into(),
            language_threshold: 0.99,
            min_words_per_line: 3,
            min_sentences_per_page: 5,
        }
    }
}

#[derive(Debug, thiserror::Error)]
pub enum CleanConfigError {
    #[error("invalid cleaning config: {0}")]
    Invalid(String),
}

impl CleaningConfig {
    pub fn validate(&self) -> Result<(), CleanConfigError> {
        if self.terminal_marks.is_empty() {
            return Err(CleanConfigError::Invalid("terminal_marks must not be empty".into()));
        }
        if !(self.language_threshold > 0.0 && self.language_threshold <= 1.0) {
            return Err(CleanConfigError::Invalid(format!(
                "language_threshold must be in (0, 1], got {}",
                self.language_threshold
            )));
        }
        if self.min_words_per_line == 0 {
            return Err(CleanConfigError::Invalid("min_words_per_line must be >= 1".into()));
        }
        if self.min_sentences_per_page == 0 {
            return Err(CleanConfigError::Invalid(
                "min_sentences_per_page must be >= 1".into(),
            ));
        }
        if self.language_code.is_empty() {
            return Err(CleanConfigError::Invalid("language_code must not be empty".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LineRule {
    TerminalPunctuation,
    BannedSubstring,
    MinWords,
}

impl LineRule {
    pub fn key(self) -> &'static str {
        match self {
            LineRule::TerminalPunctuation => rule::TERMINAL_PUNCTUATION,
            LineRule::BannedSubstring => rule::BANNED_SUBSTRING,
            LineRule::MinWords => rule::MIN_WORDS,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PageRule {
    OffensiveWord,
    PageKillString,
    LanguageFilter,
    MinSentences,
}

impl PageRule {
    pub fn key(self) -> &'static str {
        match self {
            PageRule::OffensiveWord => rule::OFFENSIVE_WORD,
            PageRule::PageKillString => rule::PAGE_KILL_STRING,
            PageRule::LanguageFilter => rule::LANGUAGE_FILTER,
            PageRule::MinSentences => rule::MIN_SENTENCES,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LineVerdict {
    Keep,
    Drop(LineRule),
}

/// Judges a single line. Pure: same line and config, same verdict.
pub fn filter_line(line: &str, config: &CleaningConfig) -> LineVerdict {
    let banned_lower: Vec<String> =
        config.banned_substrings.iter().map(|b| b.to_lowercase()).collect();
    filter_line_inner(line, config, &banned_lower)
}

fn filter_line_inner(
    line: &str,
    config: &CleaningConfig,
    banned_lower: &[String],
) -> LineVerdict {
    let trimmed = line.trim_end();
    match trimmed.chars().last() {
        Some(c) if config.terminal_marks.contains(&c) => {}
        _ => return LineVerdict::Drop(LineRule::TerminalPunctuation),
    }
    let lower = trimmed.to_lowercase();
    if banned_lower.iter().any(|b| lower.contains(b.as_str())) {
        return LineVerdict::Drop(LineRule::BannedSubstring);
    }
    if trimmed.split_whitespace().count() < config.min_words_per_line {
        return LineVerdict::Drop(LineRule::MinWords);
    }
    LineVerdict::Keep
}

/// Counts whitespace-delimited tokens ending in a terminal mark. An
/// approximation that deliberately ignores abbreviations and decimal
/// points inside tokens: `"3.14 je číslo."` has one sentence.
pub fn sentence_count(text: &str, terminal_marks: &[char]) -> usize {
    text.split_whitespace()
        .filter(|token| token.chars().last().is_some_and(|c| terminal_marks.contains(&c)))
        .count()
}

/// A page that survived cleaning.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CleanDocument {
    pub uri: String,
    pub lines: Vec<String>,
    #[serde(skip)]
    pub sentence_count: usize,
}

impl CleanDocument {
    pub fn recount_sentences(&mut self, terminal_marks: &[char]) {
        self.sentence_count =
            self.lines.iter().map(|l| sentence_count(l, terminal_marks)).sum();
    }

    /// Text bytes of the retained lines, one newline per line.
    pub fn text_bytes(&self) -> u64 {
        self.lines.iter().map(|l| l.len() as u64 + 1).sum()
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum PageOutcome {
    Kept(CleanDocument),
    Dropped { rule: PageRule },
}

/// Reads a wordlist: one lowercase word per line, `#` comments allowed.
pub fn load_wordlist(path: &Path) -> io::Result<HashSet<String>> {
    let mut words = HashSet::new();
    for line in std::fs::read_to_string(path)?.lines() {
        let word = line.trim();
        if word.is_empty() || word.starts_with('#') {
            continue;
        }
        words.insert(word.to_lowercase());
    }
    Ok(words)
}

/// Cleaning rules plus the loaded resources they need (offensive lexicon,
/// language model). Shareable across worker threads.
pub struct PageCleaner {
    config: CleaningConfig,
    offensive: HashSet<String>,
    lang_model: LangProfileModel,
    banned_lower: Vec<String>,
    kill_lower: Vec<String>,
}

impl PageCleaner {
    pub fn new(
        config: CleaningConfig,
        offensive: HashSet<String>,
        lang_model: LangProfileModel,
    ) -> Result<Self, CleanConfigError> {
        config.validate()?;
        let banned_lower =
            config.banned_substrings.iter().map(|s| s.to_lowercase()).collect();
        let kill_lower =
            config.page_kill_strings.iter().map(|s| s.to_lowercase()).collect();
        let offensive = offensive.into_iter().map(|w| w.to_lowercase()).collect();
        Ok(PageCleaner { config, offensive, lang_model, banned_lower, kill_lower })
    }

    pub fn config(&self) -> &CleaningConfig {
        &self.config
    }

    fn contains_offensive_word(&self, lower_text: &str) -> bool {
        if self.offensive.is_empty() {
            return false;
        }
        lower_text
            .split(|c: char| !c.is_alphanumeric())
            .any(|w| !w.is_empty() && self.offensive.contains(w))
    }

    /// Applies line rules then page rules; audits every drop to `sink`.
    pub fn clean_page(&self, uri: &str, text: &str, sink: &StatsSink) -> PageOutcome {
        let mut kept: Vec<String> = Vec::new();
        let mut line_drops: BTreeMap<&'static str, u64> = BTreeMap::new();
        for raw in text.lines() {
            let line = raw.trim();
            match filter_line_inner(line, &self.config, &self.banned_lower) {
                LineVerdict::Keep => kept.push(line.to_string()),
                LineVerdict::Drop(r) => *line_drops.entry(r.key()).or_insert(0) += 1,
            }
        }
        for (key, n) in &line_drops {
            sink.lines_dropped(key, *n);
        }

        let drop = |rule: PageRule| {
            sink.page_dropped(rule.key());
            // Lines retained so far do not make it out either, but they
            // were not dropped by a line rule; the page counter covers them.
            PageOutcome::Dropped { rule }
        };

        if kept.is_empty() {
            return drop(PageRule::MinSentences);
        }

        let joined = kept.join("\n");
        let lower = joined.to_lowercase();
        if self.contains_offensive_word(&lower) {
            return drop(PageRule::OffensiveWord);
        }
        if self.kill_lower.iter().any(|k| lower.contains(k)) {
            return drop(PageRule::PageKillString);
        }

        match self.lang_model.detect(&joined) {
            Ok(v)
                if v.language == self.config.language_code
                    && v.probability >= self.config.language_threshold => {}
            // Wrong language, low confidence, or nothing alphabetic to
            // identify: none of these can pass a language gate.
            Ok(_) | Err(LangIdError::InvalidInput(_)) => {
                return drop(PageRule::LanguageFilter)
            }
            Err(_) => return drop(PageRule::LanguageFilter),
        }

        let sentences: usize =
            kept.iter().map(|l| sentence_count(l, &self.config.terminal_marks)).sum();
        if sentences < self.config.min_sentences_per_page {
            return drop(PageRule::MinSentences);
        }

        sink.update(|s| {
            s.pages_kept += 1;
            s.lines_kept += kept.len() as u64;
        });
        PageOutcome::Kept(CleanDocument {
            uri: uri.to_string(),
            lines: kept,
            sentence_count: sentences,
        })
    }
}

pub fn write_clean_line<W: Write>(out: &mut W, doc: &CleanDocument) -> io::Result<()> {
    serde_json::to_writer(&mut *out, doc)?;
    out.write_all(b"\n")
}

pub fn read_clean_docs<R: BufRead>(
    input: R,
) -> impl Iterator<Item = io::Result<CleanDocument>> {
    input.lines().filter_map(|line| match line {
        Ok(l) if l.trim().is_empty() => None,
        Ok(l) => Some(serde_json::from_str(&l).map_err(io::Error::from)),
        Err(e) => Some(Err(e)),
    })
}
