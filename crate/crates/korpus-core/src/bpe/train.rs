//! BPE trainer: merge the most frequent adjacent symbol pair until the
//! vocabulary budget is reached or no pair occurs twice.
//!
//! Ties break toward the higher count, then the lexicographically smaller
//! `(left, right)` token-string pair, so training is fully deterministic.
//! Pair counts update incrementally as merges rewrite words; a lazily
//! invalidated max-heap tracks candidates (every count change pushes a
//! fresh entry, stale entries are dropped when popped).

use std::cmp::Reverse;
use std::collections::{BTreeMap, BinaryHeap, HashMap, HashSet};

use super::{
    byte_pieces, byte_to_char_table, BpeError, BpeMode, BpeModel,
};

#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainerParams {
    /// Total budget: specials + alphabet + merges.
    pub vocab_size: usize,
    pub mode: BpeMode,
    /// Char mode only; byte mode always covers everything.
    pub character_coverage: f64,
}

impl Default for TrainerParams {
    fn default() -> Self {
        TrainerParams {
            vocab_size: 32_000,
            mode: BpeMode::Byte,
            character_coverage: 1.0,
        }
    }
}

#[derive(Debug, PartialEq, Eq, PartialOrd, Ord)]
struct Cand {
    count: i64,
    /// Reversed so that among equal counts the smallest string pair wins.
    strs: Reverse<(String, String)>,
    pair: (u32, u32),
}

#[derive(Default)]
struct PairStat {
    count: i64,
    words: HashSet<usize>,
}

/// Replaces every adjacent `(l, r)` with `new`, scanning left to right so
/// overlapping occurrences resolve the same way everywhere (aaa -> aa, a).
fn rewrite(syms: &[u32], l: u32, r: u32, new: u32) -> Vec<u32> {
    let mut out = Vec::with_capacity(syms.len());
    let mut i = 0;
    while i < syms.len() {
        if i + 1 < syms.len() && syms[i] == l && syms[i + 1] == r {
            out.push(new);
            i += 2;
        } else {
            out.push(syms[i]);
            i += 1;
        }
    }
    out
}

fn weighted_char_counts(units: &BTreeMap<String, u64>) -> HashMap<char, u64> {
    let mut counts = HashMap::new();
    for (word, n) in units {
        for c in word.chars() {
            if !c.is_whitespace() {
                *counts.entry(c).or_insert(0) += n;
            }
        }
    }
    counts
}

fn alphabet_from_counts(
    counts: HashMap<char, u64>,
    coverage: f64,
) -> Result<Vec<char>, BpeError> {
    if counts.is_empty() {
        return Err(BpeError::InvalidInput(
            "corpus has no non-whitespace characters".into(),
        ));
    }
    let total: u64 = counts.values().sum();
    let mut ranked: Vec<(char, u64)> = counts.into_iter().collect();
    ranked.sort_by(|a, b| b.1.cmp(&a.1).then(a.0.cmp(&b.0)));
    let mut out = Vec::new();
    let mut cum = 0u64;
    for (c, n) in ranked {
        out.push(c);
        cum += n;
        if cum as f64 >= coverage * total as f64 {
            break;
        }
    }
    Ok(out)
}

/// Trains a model over a stream of text chunks (lines or documents; merge
/// units never span chunk boundaries).
pub fn train_bpe<I, S>(corpus: I, params: &TrainerParams) -> Result<BpeModel, BpeError>
where
    I: IntoIterator<Item = S>,
    S: AsRef<str>,
{
    if let BpeMode::Char = params.mode {
        if !(params.character_coverage > 0.0 && params.character_coverage <= 1.0) {
            return Err(BpeError::InvalidInput(format!(
                "character coverage must be in (0, 1], got {}",
                params.character_coverage
            )));
        }
    }

    // One pass: aggregate merge units with counts. BTreeMap gives the
    // words stable indices independent of input order.
    let mut units: BTreeMap<String, u64> = BTreeMap::new();
    for chunk in corpus {
        let chunk = chunk.as_ref();
        match params.mode {
            BpeMode::Char => {
                for w in chunk.split_whitespace() {
                    *units.entry(w.to_string()).or_insert(0) += 1;
                }
            }
            BpeMode::Byte => {
                for (piece, _) in byte_pieces(chunk) {
                    *units.entry(piece.to_string()).or_insert(0) += 1;
                }
            }
        }
    }

    let specials: Vec<String> =
        params.mode.specials().iter().map(|s| s.to_string()).collect();
    let (alphabet, coverage) = match params.mode {
        BpeMode::Char => {
            let chars = alphabet_from_counts(
                weighted_char_counts(&units),
                params.character_coverage,
            )?;
            (
                chars.into_iter().map(|c| c.to_string()).collect::<Vec<_>>(),
                params.character_coverage,
            )
        }
        BpeMode::Byte => (
            byte_to_char_table().iter().map(|c| c.to_string()).collect(),
            1.0,
        ),
    };
    let base_len = specials.len() + alphabet.len();
    if params.vocab_size < base_len {
        return Err(BpeError::InvalidInput(format!(
            "vocab_size {} is smaller than specials + alphabet = {base_len}",
            params.vocab_size
        )));
    }

    let mut token_strings: Vec<String> = Vec::with_capacity(params.vocab_size);
    let mut vocab: HashMap<String, u32> = HashMap::with_capacity(params.vocab_size);
    for s in specials.iter().chain(alphabet.iter()) {
        let id = token_strings.len() as u32;
        vocab.insert(s.clone(), id);
        token_strings.push(s.clone());
    }

    // Symbol sequences per unit. Char mode maps out-of-alphabet
    // characters to the unknown token, which never participates in
    // merges (a merged token containing it could not render).
    let unk: Option<u32> = match params.mode {
        BpeMode::Char => Some(
            *vocab.get("[UNK]").expect("char specials contain [UNK]"),
        ),
        BpeMode::Byte => None,
    };
    let byte_table = byte_to_char_table();
    let mut words: Vec<(Vec<u32>, u64)> = Vec::with_capacity(units.len());
    for (unit, count) in &units {
        let syms: Vec<u32> = match params.mode {
            BpeMode::Char => unit
                .chars()
                .map(|c| {
                    vocab
                        .get(&c.to_string())
                        .copied()
                        .unwrap_or_else(|| unk.unwrap())
                })
                .collect(),
            BpeMode::Byte => unit
                .bytes()
                .map(|b| vocab[&byte_table[b as usize].to_string()])
                .collect(),
        };
        words.push((syms, *count));
    }
    drop(units);

    let trackable =
        |l: u32, r: u32, banned: &HashSet<(u32, u32)>| -> bool {
            Some(l) != unk && Some(r) != unk && !banned.contains(&(l, r))
        };

    let mut banned: HashSet<(u32, u32)> = HashSet::new();
    let mut pair_data: HashMap<(u32, u32), PairStat> = HashMap::new();
    for (idx, (syms, count)) in words.iter().enumerate() {
        for w in syms.windows(2) {
            let pair = (w[0], w[1]);
            if trackable(pair.0, pair.1, &banned) {
                let st = pair_data.entry(pair).or_default();
                st.count += *count as i64;
                st.words.insert(idx);
            }
        }
    }

    let mut heap: BinaryHeap<Cand> = BinaryHeap::new();
    let push_cand = |heap: &mut BinaryHeap<Cand>,
                     token_strings: &[String],
                     pair: (u32, u32),
                     count: i64| {
        if count >= 2 {
            heap.push(Cand {
                count,
                strs: Reverse((
                    token_strings[pair.0 as usize].clone(),
                    token_strings[pair.1 as usize].clone(),
                )),
                pair,
            });
        }
    };
    for (pair, st) in &pair_data {
        push_cand(&mut heap, &token_strings, *pair, st.count);
    }

    let mut merges: Vec<(String, String)> = Vec::new();
    while token_strings.len() < params.vocab_size {
        // Pop the best still-valid candidate.
        let pair = loop {
            let Some(cand) = heap.pop() else { break None };
            match pair_data.get(&cand.pair) {
                Some(st) if st.count == cand.count && cand.count >= 2 => {
                    break Some(cand.pair)
                }
                _ => continue,
            }
        };
        let Some((l, r)) = pair else { break };

        let new_str =
            format!("{}{}", token_strings[l as usize], token_strings[r as usize]);
        if vocab.contains_key(&new_str) {
            // Another derivation already produced this surface form; the
            // pair is banned rather than given a second id, keeping the
            // string -> id mapping a bijection.
            banned.insert((l, r));
            pair_data.remove(&(l, r));
            continue;
        }
        let new_id = token_strings.len() as u32;
        vocab.insert(new_str.clone(), new_id);
        token_strings.push(new_str);
        merges.push((
            token_strings[l as usize].clone(),
            token_strings[r as usize].clone(),
        ));

        let affected: Vec<usize> =
            pair_data[&(l, r)].words.iter().copied().collect();
        let mut touched: HashSet<(u32, u32)> = HashSet::new();
        for widx in affected {
            let (old, wcount) = {
                let (syms, count) = &words[widx];
                (syms.clone(), *count as i64)
            };
            let new = rewrite(&old, l, r, new_id);
            if new.len() == old.len() {
                continue;
            }
            for w in old.windows(2) {
                let p = (w[0], w[1]);
                if !trackable(p.0, p.1, &banned) {
                    continue;
                }
                if let Some(st) = pair_data.get_mut(&p) {
                    st.count -= wcount;
                    st.words.remove(&widx);
                    touched.insert(p);
                }
            }
            for w in new.windows(2) {
                let p = (w[0], w[1]);
                if !trackable(p.0, p.1, &banned) {
                    continue;
                }
                let st = pair_data.entry(p).or_default();
                st.count += wcount;
                st.words.insert(widx);
                touched.insert(p);
            }
            words[widx].0 = new;
        }

        let consumed = pair_data.remove(&(l, r));
        debug_assert_eq!(consumed.map(|st| st.count), Some(0));
        touched.remove(&(l, r));
        for p in touched {
            if let Some(st) = pair_data.get(&p) {
                push_cand(&mut heap, &token_strings, p, st.count);
            }
        }
    }

    BpeModel::from_parts(params.mode, coverage, specials, alphabet, merges)
}
