//! Slow, obviously-correct reference implementations and fixture
//! generators backing the test suites. Compiled for in-crate tests and
//! behind the `testutil` feature for integration tests; never for
//! production consumers.

pub mod fixture;

use std::collections::{BTreeMap, BTreeSet, HashMap, HashSet};

use rand::prelude::*;
use rand_chacha::ChaCha8Rng;

use crate::bpe::{byte_pieces, byte_to_char_table, BpeError, BpeMode};

/// Brute-force label thresholding: explicit maximum search, then a
/// per-label comparison against half the maximum, with no division.
pub fn naive_threshold(scores: &[f64]) -> BTreeSet<usize> {
    let mut max = scores[0];
    for &s in scores {
        if s > max {
            max = s;
        }
    }
    (0..scores.len()).filter(|&i| scores[i] >= 0.5 * max).collect()
}

/// Output of [`naive_train_bpe`]: just the learned parts, for comparison
/// against the production trainer.
#[derive(Debug)]
pub struct NaiveBpe {
    pub alphabet: Vec<String>,
    pub merges: Vec<(String, String)>,
}

/// Symbol in a partially merged word. `None` marks an out-of-alphabet
/// character (char mode), which no merge may touch.
type Sym = Option<String>;

/// Reference BPE trainer: recounts every pair from scratch each
/// iteration and rewrites words by string scan. Mirrors the production
/// tie-break (higher count, then lexicographically smaller pair) and the
/// rule that a pair whose concatenation already names a token is banned
/// without consuming a vocabulary slot.
pub fn naive_train_bpe(
    corpus: &[&str],
    vocab_size: usize,
    mode: BpeMode,
    coverage: f64,
) -> Result<NaiveBpe, BpeError> {
    let mut unit_counts: BTreeMap<String, u64> = BTreeMap::new();
    for chunk in corpus {
        match mode {
            BpeMode::Char => {
                for w in chunk.split_whitespace() {
                    *unit_counts.entry(w.to_string()).or_insert(0) += 1;
                }
            }
            BpeMode::Byte => {
                for (piece, _) in byte_pieces(chunk) {
                    *unit_counts.entry(piece.to_string()).or_insert(0) += 1;
                }
            }
        }
    }

    let alphabet: Vec<String> = match mode {
        BpeMode::Char => {
            let mut counts: HashMap<char, u64> = HashMap::new();
            for (w, n) in &unit_counts {
                for c in w.chars() {
                    *counts.entry(c).or_insert(0) += n;
                }
            }
            if counts.is_empty() {
                return Err(BpeError::InvalidInput("empty corpus".into()));
            }
            let total: u64 = counts.values().sum();
            let mut ranked: Vec<(char, u64)> = counts.into_iter().collect();
            ranked.sort_by(|a, b| b.1.cmp(&a.1).then(a.0.cmp(&b.0)));
            let mut kept = Vec::new();
            let mut cum = 0u64;
            for (c, n) in ranked {
                kept.push(c.to_string());
                cum += n;
                if cum as f64 >= coverage * total as f64 {
                    break;
                }
            }
            kept
        }
        BpeMode::Byte => byte_to_char_table().iter().map(|c| c.to_string()).collect(),
    };

    let in_alphabet: HashSet<&String> = alphabet.iter().collect();
    let table = byte_to_char_table();
    let mut words: Vec<(Vec<Sym>, u64)> = unit_counts
        .iter()
        .map(|(w, n)| {
            let syms: Vec<Sym> = match mode {
                BpeMode::Char => w
                    .chars()
                    .map(|c| {
                        let s = c.to_string();
                        in_alphabet.contains(&s).then_some(s)
                    })
                    .collect(),
                BpeMode::Byte => {
                    w.bytes().map(|b| Some(table[b as usize].to_string())).collect()
                }
            };
            (syms, *n)
        })
        .collect();

    let mut tokens: HashSet<String> = mode
        .specials()
        .iter()
        .map(|s| s.to_string())
        .chain(alphabet.iter().cloned())
        .collect();
    let mut vocab_len = tokens.len();
    let mut banned: HashSet<(String, String)> = HashSet::new();
    let mut merges: Vec<(String, String)> = Vec::new();

    while vocab_len < vocab_size {
        let mut counts: HashMap<(String, String), u64> = HashMap::new();
        for (syms, n) in &words {
            for pair in syms.windows(2) {
                if let (Some(l), Some(r)) = (&pair[0], &pair[1]) {
                    *counts.entry((l.clone(), r.clone())).or_insert(0) += n;
                }
            }
        }
        let mut best: Option<(&(String, String), u64)> = None;
        for (pair, n) in &counts {
            if *n < 2 || banned.contains(pair) {
                continue;
            }
            best = match best {
                None => Some((pair, *n)),
                Some((bp, bn)) if *n > bn || (*n == bn && pair < bp) => {
                    Some((pair, *n))
                }
                keep => keep,
            };
        }
        let Some(((l, r), _)) = best.map(|(p, n)| (p.clone(), n)) else { break };

        let joined = format!("{l}{r}");
        if tokens.contains(&joined) {
            banned.insert((l, r));
            continue;
        }
        tokens.insert(joined.clone());
        vocab_len += 1;
        merges.push((l.clone(), r.clone()));
        for (syms, _) in &mut words {
            let mut out: Vec<Sym> = Vec::with_capacity(syms.len());
            let mut i = 0;
            while i < syms.len() {
                if i + 1 < syms.len()
                    && syms[i].as_deref() == Some(l.as_str())
                    && syms[i + 1].as_deref() == Some(r.as_str())
                {
                    out.push(Some(joined.clone()));
                    i += 2;
                } else {
                    out.push(syms[i].clone());
                    i += 1;
                }
            }
            *syms = out;
        }
    }

    Ok(NaiveBpe { alphabet, merges })
}

/// Lines of space-separated words over a five-letter alphabet. Small
/// vocabulary keeps pair counts high and tie-breaks frequent.
pub fn random_char_corpus(seed: u64, lines: usize) -> Vec<String> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let letters = ['a', 'b', 'c', 'd', 'e'];
    (0..lines)
        .map(|_| {
            let words = rng.gen_range(3..=12);
            (0..words)
                .map(|_| {
                    let len = rng.gen_range(1..=5);
                    (0..len).map(|_| letters[rng.gen_range(0..letters.len())]).collect::<String>()
                })
                .collect::<Vec<_>>()
                .join(" ")
        })
        .collect()
}

/// Lines mixing ASCII, Czech diacritics and irregular whitespace so byte
/// pre-tokenization sees multi-byte characters and space runs.
pub fn random_byte_corpus(seed: u64, lines: usize) -> Vec<String> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed + 0x42);
    let pool = ['a', 'b', 'c', 'ž', 'č', 'ř', 'í', ' ', ' ', '\t'];
    (0..lines)
        .map(|_| {
            let len = rng.gen_range(5..=60);
            (0..len).map(|_| pool[rng.gen_range(0..pool.len())]).collect()
        })
        .collect()
}
