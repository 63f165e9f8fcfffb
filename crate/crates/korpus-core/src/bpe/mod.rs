//! Byte-pair-encoding subword vocabularies.
//!
//! Two modes share one model shape and trainer:
//!
//! - **char**: base symbols are the characters of a frequency-ranked
//!   alphabet covering a configurable fraction of the corpus; characters
//!   outside it encode to the unknown token. Whitespace is a word
//!   separator, never a symbol, so decoding is exact up to whitespace
//!   canonicalization and relies on word-start flags.
//! - **byte**: base symbols are all 256 bytes remapped onto printable
//!   characters; a leading space attaches to the following word (the
//!   remapped 0x20 acts as the word-initial marker) and decoding is
//!   byte-exact with no unknowns.
//!
//! Token ids are dense: special tokens first, then the alphabet, then one
//! id per merge in learned order, so the whole vocabulary is derivable
//! from the model file.

mod train;

pub use train::{train_bpe, TrainerParams};

use std::collections::HashMap;
use std::fmt::Write as _;
use std::path::Path;

/// Specials for char mode, in id order.
pub const CHAR_SPECIALS: [&str; 5] = ["[PAD]", "[UNK]", "[CLS]", "[SEP]", "[MASK]"];
/// Specials for byte mode, in id order.
pub const BYTE_SPECIALS: [&str; 5] = ["<s>", "</s>", "<pad>", "<unk>", "<mask>"];

const FORMAT_HEADER: &str = "korpus-bpe v1";

#[derive(Debug, thiserror::Error)]
pub enum BpeError {
    #[error("invalid input: {0}")]
    InvalidInput(String),
    #[error("unsupported: {0}")]
    Unsupported(String),
    #[error("model format: {0}")]
    Format(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BpeMode {
    Char,
    Byte,
}

impl BpeMode {
    fn as_str(self) -> &'static str {
        match self {
            BpeMode::Char => "char",
            BpeMode::Byte => "byte",
        }
    }

    pub fn specials(self) -> &'static [&'static str] {
        match self {
            BpeMode::Char => &CHAR_SPECIALS,
            BpeMode::Byte => &BYTE_SPECIALS,
        }
    }
}

/// Encoded text: token ids plus a parallel flag marking each token that
/// begins a word. Char mode needs the flags to restore spacing; byte mode
/// carries spacing in the tokens themselves but keeps the flags because
/// whole-word masking is defined over them.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct TokenSequence {
    pub ids: Vec<u32>,
    pub word_start_flags: Vec<bool>,
}

impl TokenSequence {
    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }
}

/// Maps every byte onto a printable character: printable ASCII and Latin-1
/// keep themselves, the rest take code points from 256 upward in byte
/// order. The inverse is total on the image, so byte-mode decoding never
/// loses information.
pub fn byte_to_char_table() -> [char; 256] {
    let mut table = ['\0'; 256];
    let mut next = 256u32;
    for b in 0..=255u32 {
        table[b as usize] = match b {
            0x21..=0x7E | 0xA1..=0xAC | 0xAE..=0xFF => char::from_u32(b).unwrap(),
            _ => {
                let c = char::from_u32(next).unwrap();
                next += 1;
                c
            }
        };
    }
    table
}

/// Smallest frequency-ranked character set covering `coverage` of the
/// corpus's non-whitespace characters. Ties rank by code point so the
/// result is total-order deterministic.
pub fn compute_alphabet<I, S>(corpus: I, coverage: f64) -> Result<Vec<char>, BpeError>
where
    I: IntoIterator<Item = S>,
    S: AsRef<str>,
{
    if !(coverage > 0.0 && coverage <= 1.0) {
        return Err(BpeError::InvalidInput(format!(
            "character coverage must be in (0, 1], got {coverage}"
        )));
    }
    let mut counts: HashMap<char, u64> = HashMap::new();
    for chunk in corpus {
        for c in chunk.as_ref().chars() {
            if !c.is_whitespace() {
                *counts.entry(c).or_insert(0) += 1;
            }
        }
    }
    if counts.is_empty() {
        return Err(BpeError::InvalidInput("corpus has no non-whitespace characters".into()));
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

/// Splits text into byte-mode pieces: a word with its single leading space
/// attached, or a run of other whitespace. Pieces concatenate back to the
/// input exactly. The bool marks word pieces.
pub(crate) fn byte_pieces(text: &str) -> Vec<(&str, bool)> {
    let chars: Vec<(usize, char)> = text.char_indices().collect();
    let mut out = Vec::new();
    let mut i = 0;
    while i < chars.len() {
        let (start, c) = chars[i];
        let end_of = |j: usize| if j < chars.len() { chars[j].0 } else { text.len() };
        if c == ' ' && i + 1 < chars.len() && !chars[i + 1].1.is_whitespace() {
            let mut j = i + 1;
            while j < chars.len() && !chars[j].1.is_whitespace() {
                j += 1;
            }
            out.push((&text[start..end_of(j)], true));
            i = j;
        } else if c.is_whitespace() {
            let mut j = i;
            while j < chars.len() && chars[j].1.is_whitespace() {
                if chars[j].1 == ' '
                    && j + 1 < chars.len()
                    && !chars[j + 1].1.is_whitespace()
                    && j > i
                {
                    break;
                }
                j += 1;
            }
            out.push((&text[start..end_of(j)], false));
            i = j;
        } else {
            let mut j = i;
            while j < chars.len() && !chars[j].1.is_whitespace() {
                j += 1;
            }
            out.push((&text[start..end_of(j)], true));
            i = j;
        }
    }
    out
}

/// A trained subword vocabulary.
#[derive(Debug, Clone)]
pub struct BpeModel {
    mode: BpeMode,
    character_coverage: f64,
    specials: Vec<String>,
    alphabet: Vec<String>,
    merges: Vec<(String, String)>,
    // Derived lookup state, rebuilt on construction and load.
    token_strings: Vec<String>,
    vocab: HashMap<String, u32>,
    merge_ranks: HashMap<(u32, u32), (u32, u32)>,
    char_ids: HashMap<char, u32>,
    byte_syms: Vec<u32>,
    char_bytes: HashMap<char, u8>,
}

impl PartialEq for BpeModel {
    fn eq(&self, other: &Self) -> bool {
        self.mode == other.mode
            && self.character_coverage == other.character_coverage
            && self.specials == other.specials
            && self.alphabet == other.alphabet
            && self.merges == other.merges
    }
}

impl BpeModel {
    /// Builds and validates a model from its serializable parts. Both the
    /// trainer and the file loader come through here, so the invariants
    /// hold regardless of origin.
    pub fn from_parts(
        mode: BpeMode,
        character_coverage: f64,
        specials: Vec<String>,
        alphabet: Vec<String>,
        merges: Vec<(String, String)>,
    ) -> Result<Self, BpeError> {
        if specials.is_empty() {
            return Err(BpeError::Format("no special tokens".into()));
        }
        if let BpeMode::Byte = mode {
            if alphabet.len() != 256 {
                return Err(BpeError::Format(format!(
                    "byte mode needs a 256-symbol alphabet, got {}",
                    alphabet.len()
                )));
            }
        }
        fn push(
            token_strings: &mut Vec<String>,
            vocab: &mut HashMap<String, u32>,
            s: &str,
            what: &str,
        ) -> Result<u32, BpeError> {
            let id = token_strings.len() as u32;
            if vocab.insert(s.to_string(), id).is_some() {
                return Err(BpeError::Format(format!("duplicate {what} token {s:?}")));
            }
            token_strings.push(s.to_string());
            Ok(id)
        }
        let mut token_strings: Vec<String> = Vec::new();
        let mut vocab: HashMap<String, u32> = HashMap::new();
        for s in &specials {
            push(&mut token_strings, &mut vocab, s, "special")?;
        }
        for a in &alphabet {
            push(&mut token_strings, &mut vocab, a, "alphabet")?;
        }
        let mut merge_ranks = HashMap::with_capacity(merges.len());
        for (rank, (left, right)) in merges.iter().enumerate() {
            let l = *vocab.get(left).ok_or_else(|| {
                BpeError::Format(format!("merge {rank} references unknown token {left:?}"))
            })?;
            let r = *vocab.get(right).ok_or_else(|| {
                BpeError::Format(format!("merge {rank} references unknown token {right:?}"))
            })?;
            let joined = format!("{left}{right}");
            let id = push(&mut token_strings, &mut vocab, &joined, "merged")?;
            merge_ranks.insert((l, r), (rank as u32, id));
        }

        let byte_chars = byte_to_char_table();
        let mut char_ids = HashMap::new();
        let mut byte_syms = Vec::new();
        let mut char_bytes = HashMap::new();
        match mode {
            BpeMode::Char => {
                for (i, a) in alphabet.iter().enumerate() {
                    let mut chars = a.chars();
                    let c = chars.next().ok_or_else(|| {
                        BpeError::Format("empty alphabet entry".into())
                    })?;
                    if chars.next().is_some() {
                        return Err(BpeError::Format(format!(
                            "char-mode alphabet entry {a:?} is not a single character"
                        )));
                    }
                    char_ids.insert(c, specials.len() as u32 + i as u32);
                }
            }
            BpeMode::Byte => {
                for (b, &c) in byte_chars.iter().enumerate() {
                    if alphabet[b] != c.to_string() {
                        return Err(BpeError::Format(format!(
                            "byte-mode alphabet entry {b} is {:?}, expected {c:?}",
                            alphabet[b]
                        )));
                    }
                    byte_syms.push(specials.len() as u32 + b as u32);
                    char_bytes.insert(c, b as u8);
                }
            }
        }

        Ok(BpeModel {
            mode,
            character_coverage,
            specials,
            alphabet,
            merges,
            token_strings,
            vocab,
            merge_ranks,
            char_ids,
            byte_syms,
            char_bytes,
        })
    }

    pub fn mode(&self) -> BpeMode {
        self.mode
    }

    pub fn character_coverage(&self) -> f64 {
        self.character_coverage
    }

    pub fn vocab_len(&self) -> usize {
        self.token_strings.len()
    }

    pub fn special_count(&self) -> usize {
        self.specials.len()
    }

    pub fn merges(&self) -> &[(String, String)] {
        &self.merges
    }

    pub fn alphabet(&self) -> &[String] {
        &self.alphabet
    }

    pub fn is_special(&self, id: u32) -> bool {
        (id as usize) < self.specials.len()
    }

    pub fn token_string(&self, id: u32) -> Option<&str> {
        self.token_strings.get(id as usize).map(|s| s.as_str())
    }

    pub fn token_id(&self, token: &str) -> Option<u32> {
        self.vocab.get(token).copied()
    }

    fn special_id(&self, name: &str) -> u32 {
        *self.vocab.get(name).unwrap_or_else(|| panic!("special {name:?} missing"))
    }

    pub fn pad_id(&self) -> u32 {
        match self.mode {
            BpeMode::Char => self.special_id("[PAD]"),
            BpeMode::Byte => self.special_id("<pad>"),
        }
    }

    pub fn unk_id(&self) -> u32 {
        match self.mode {
            BpeMode::Char => self.special_id("[UNK]"),
            BpeMode::Byte => self.special_id("<unk>"),
        }
    }

    pub fn mask_id(&self) -> u32 {
        match self.mode {
            BpeMode::Char => self.special_id("[MASK]"),
            BpeMode::Byte => self.special_id("<mask>"),
        }
    }

    /// Sequence-opening classifier token: `[CLS]`, or `<s>` in byte mode.
    pub fn cls_id(&self) -> u32 {
        match self.mode {
            BpeMode::Char => self.special_id("[CLS]"),
            BpeMode::Byte => self.special_id("<s>"),
        }
    }

    /// Segment separator: `[SEP]`, or `</s>` in byte mode.
    pub fn sep_id(&self) -> u32 {
        match self.mode {
            BpeMode::Char => self.special_id("[SEP]"),
            BpeMode::Byte => self.special_id("</s>"),
        }
    }

    /// Greedy merge application: repeatedly merge the lowest-ranked
    /// adjacent pair, leftmost first. This is the canonical BPE encode
    /// order and reproduces the trainer's segmentation.
    fn apply_merges(&self, syms: &mut Vec<u32>) {
        loop {
            let mut best: Option<(u32, usize, u32)> = None;
            for i in 0..syms.len().saturating_sub(1) {
                if let Some(&(rank, new_id)) = self.merge_ranks.get(&(syms[i], syms[i + 1])) {
                    if best.is_none_or(|(r, _, _)| rank < r) {
                        best = Some((rank, i, new_id));
                    }
                }
            }
            match best {
                Some((_, i, new_id)) => {
                    syms[i] = new_id;
                    syms.remove(i + 1);
                }
                None => break,
            }
        }
    }

    /// Encodes text deterministically; empty input gives an empty sequence.
    pub fn encode(&self, text: &str) -> TokenSequence {
        let mut seq = TokenSequence::default();
        let mut buf: Vec<u32> = Vec::new();
        let emit = |buf: &mut Vec<u32>, seq: &mut TokenSequence, word: bool| {
            self.apply_merges(buf);
            for (k, id) in buf.drain(..).enumerate() {
                seq.ids.push(id);
                seq.word_start_flags.push(word && k == 0);
            }
        };
        match self.mode {
            BpeMode::Char => {
                let unk = self.unk_id();
                for word in text.split_whitespace() {
                    for c in word.chars() {
                        buf.push(self.char_ids.get(&c).copied().unwrap_or(unk));
                    }
                    emit(&mut buf, &mut seq, true);
                }
            }
            BpeMode::Byte => {
                for (piece, is_word) in byte_pieces(text) {
                    for b in piece.bytes() {
                        buf.push(self.byte_syms[b as usize]);
                    }
                    emit(&mut buf, &mut seq, is_word);
                }
            }
        }
        seq
    }

    /// Inverse of [`BpeModel::encode`]. Special tokens render as empty.
    /// Byte mode is byte-exact; char mode reconstructs spacing from the
    /// word-start flags (whitespace runs were canonicalized at encode
    /// time, so `decode(encode(x))` equals whitespace-canonicalized `x`).
    pub fn decode(&self, seq: &TokenSequence) -> Result<String, BpeError> {
        if seq.ids.len() != seq.word_start_flags.len() {
            return Err(BpeError::InvalidInput(format!(
                "{} ids with {} word-start flags",
                seq.ids.len(),
                seq.word_start_flags.len()
            )));
        }
        match self.mode {
            BpeMode::Byte => self.decode_ids(&seq.ids),
            BpeMode::Char => {
                let mut out = String::new();
                for (&id, &start) in seq.ids.iter().zip(&seq.word_start_flags) {
                    let token = self.token_string(id).ok_or_else(|| {
                        BpeError::InvalidInput(format!("token id {id} out of range"))
                    })?;
                    if self.is_special(id) {
                        continue;
                    }
                    if start && !out.is_empty() {
                        out.push(' ');
                    }
                    out.push_str(token);
                }
                Ok(out)
            }
        }
    }

    /// Decodes a bare id list. Byte mode only: char mode cannot place word
    /// boundaries without the flags a [`TokenSequence`] carries.
    pub fn decode_ids(&self, ids: &[u32]) -> Result<String, BpeError> {
        if let BpeMode::Char = self.mode {
            return Err(BpeError::Unsupported(
                "char-mode decoding needs word-start flags; use decode()".into(),
            ));
        }
        let mut bytes = Vec::new();
        for &id in ids {
            let token = self
                .token_string(id)
                .ok_or_else(|| BpeError::InvalidInput(format!("token id {id} out of range")))?;
            if self.is_special(id) {
                continue;
            }
            for c in token.chars() {
                match self.char_bytes.get(&c) {
                    Some(&b) => bytes.push(b),
                    None => {
                        return Err(BpeError::Format(format!(
                            "token {token:?} contains unmapped character {c:?}"
                        )))
                    }
                }
            }
        }
        // Truncated sequences can split a multi-byte character; replace
        // rather than fail, since the bytes themselves are already exact.
        Ok(String::from_utf8_lossy(&bytes).into_owned())
    }

    /// Serializes to the versioned text format. Stable byte-for-byte for a
    /// given model, on any platform.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "{FORMAT_HEADER}");
        let _ = writeln!(out, "mode = {}", self.mode.as_str());
        let _ = writeln!(out, "character-coverage = {}", self.character_coverage);
        let _ = writeln!(out, "specials = {}", self.specials.len());
        let _ = writeln!(out, "alphabet = {}", self.alphabet.len());
        let _ = writeln!(out, "merges = {}", self.merges.len());
        let _ = writeln!(out, "[specials]");
        for s in &self.specials {
            let _ = writeln!(out, "{s}");
        }
        let _ = writeln!(out, "[alphabet]");
        for a in &self.alphabet {
            let _ = writeln!(out, "{a}");
        }
        let _ = writeln!(out, "[merges]");
        for (l, r) in &self.merges {
            let _ = writeln!(out, "{l} {r}");
        }
        out
    }

    pub fn from_text(text: &str) -> Result<Self, BpeError> {
        let mut lines = text.lines();
        let mut next = |what: &str| {
            lines.next().ok_or_else(|| BpeError::Format(format!("missing {what}")))
        };
        let header = next("header")?;
        if header != FORMAT_HEADER {
            return Err(BpeError::Format(format!(
                "bad header {header:?}, expected {FORMAT_HEADER:?}"
            )));
        }
        let mut field = |name: &str| -> Result<String, BpeError> {
            let line = next(name)?;
            line.strip_prefix(&format!("{name} = "))
                .map(str::to_string)
                .ok_or_else(|| BpeError::Format(format!("expected `{name} = ...`, got {line:?}")))
        };
        let mode = match field("mode")?.as_str() {
            "char" => BpeMode::Char,
            "byte" => BpeMode::Byte,
            other => return Err(BpeError::Format(format!("unknown mode {other:?}"))),
        };
        let coverage: f64 = field("character-coverage")?
            .parse()
            .map_err(|e| BpeError::Format(format!("character-coverage: {e}")))?;
        let n_specials: usize = field("specials")?
            .parse()
            .map_err(|e| BpeError::Format(format!("specials: {e}")))?;
        let n_alphabet: usize = field("alphabet")?
            .parse()
            .map_err(|e| BpeError::Format(format!("alphabet: {e}")))?;
        let n_merges: usize = field("merges")?
            .parse()
            .map_err(|e| BpeError::Format(format!("merges: {e}")))?;

        let expect_section = |line: &str, name: &str| -> Result<(), BpeError> {
            if line != name {
                return Err(BpeError::Format(format!("expected {name}, got {line:?}")));
            }
            Ok(())
        };
        expect_section(next("[specials]")?, "[specials]")?;
        let mut specials = Vec::with_capacity(n_specials);
        for _ in 0..n_specials {
            specials.push(next("special token")?.to_string());
        }
        expect_section(next("[alphabet]")?, "[alphabet]")?;
        let mut alphabet = Vec::with_capacity(n_alphabet);
        for _ in 0..n_alphabet {
            alphabet.push(next("alphabet entry")?.to_string());
        }
        expect_section(next("[merges]")?, "[merges]")?;
        let mut merges = Vec::with_capacity(n_merges);
        for i in 0..n_merges {
            let line = next("merge")?;
            let (l, r) = line.split_once(' ').ok_or_else(|| {
                BpeError::Format(format!("merge {i} is not `left right`: {line:?}"))
            })?;
            merges.push((l.to_string(), r.to_string()));
        }
        if let Some(extra) = lines.next() {
            if !extra.trim().is_empty() {
                return Err(BpeError::Format(format!("trailing content {extra:?}")));
            }
        }
        Self::from_parts(mode, coverage, specials, alphabet, merges)
    }

    pub fn save(&self, path: &Path) -> Result<(), BpeError> {
        std::fs::write(path, self.to_text())?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self, BpeError> {
        Self::from_text(&std::fs::read_to_string(path)?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn byte_table_matches_known_mappings() {
        let t = byte_to_char_table();
        assert_eq!(t[b'a' as usize], 'a');
        assert_eq!(t[b'!' as usize], '!');
        assert_eq!(t[0x00], '\u{100}');
        assert_eq!(t[0x20], '\u{120}'); // space -> Ġ
        assert_eq!(t[0x0A], '\u{10A}'); // newline stays distinct
        // Total and injective.
        let mut seen = std::collections::HashSet::new();
        for c in t {
            assert!(seen.insert(c));
        }
    }

    #[test]
    fn alphabet_covers_requested_mass() {
        assert_eq!(compute_alphabet(["aaab"], 0.75).unwrap(), vec!['a']);
        assert_eq!(compute_alphabet(["aabc"], 0.75).unwrap(), vec!['a', 'b']);
        assert_eq!(compute_alphabet(["aabc"], 1.0).unwrap(), vec!['a', 'b', 'c']);
        // Whitespace is never an alphabet symbol.
        assert_eq!(compute_alphabet(["a a a b"], 1.0).unwrap(), vec!['a', 'b']);
        // Ties resolve by code point.
        assert_eq!(compute_alphabet(["ba"], 1.0).unwrap(), vec!['a', 'b']);
    }

    #[test]
    fn alphabet_rejects_bad_input() {
        assert!(matches!(compute_alphabet(["abc"], 0.0), Err(BpeError::InvalidInput(_))));
        assert!(matches!(compute_alphabet(["abc"], 1.5), Err(BpeError::InvalidInput(_))));
        assert!(matches!(compute_alphabet(["   "], 1.0), Err(BpeError::InvalidInput(_))));
        assert!(matches!(
            compute_alphabet(Vec::<&str>::new(), 1.0),
            Err(BpeError::InvalidInput(_))
        ));
    }

    #[test]
    fn byte_pieces_attach_single_leading_space() {
        let pieces: Vec<(&str, bool)> = byte_pieces("Žluťoučký kůň pěl");
        assert_eq!(
            pieces,
            vec![("Žluťoučký", true), (" kůň", true), (" pěl", true)]
        );
        assert_eq!(
            byte_pieces("a  b"),
            vec![("a", true), (" ", false), (" b", true)]
        );
        assert_eq!(byte_pieces("a\nb"), vec![("a", true), ("\n", false), ("b", true)]);
        assert_eq!(byte_pieces(" x"), vec![(" x", true)]);
        assert_eq!(byte_pieces("x "), vec![("x", true), (" ", false)]);
        assert_eq!(byte_pieces("\t x"), vec![("\t", false), (" x", true)]);
    }

    proptest! {
        #[test]
        fn byte_pieces_concatenate_to_input(s in "\\PC{0,60}") {
            let joined: String =
                byte_pieces(&s).into_iter().map(|(p, _)| p).collect();
            prop_assert_eq!(joined, s);
        }
    }

    fn char_model(alphabet: &[char], merges: &[(&str, &str)]) -> BpeModel {
        BpeModel::from_parts(
            BpeMode::Char,
            1.0,
            CHAR_SPECIALS.iter().map(|s| s.to_string()).collect(),
            alphabet.iter().map(|c| c.to_string()).collect(),
            merges.iter().map(|(l, r)| (l.to_string(), r.to_string())).collect(),
        )
        .unwrap()
    }

    fn byte_model(merges: &[(&str, &str)]) -> BpeModel {
        BpeModel::from_parts(
            BpeMode::Byte,
            1.0,
            BYTE_SPECIALS.iter().map(|s| s.to_string()).collect(),
            byte_to_char_table().iter().map(|c| c.to_string()).collect(),
            merges.iter().map(|(l, r)| (l.to_string(), r.to_string())).collect(),
        )
        .unwrap()
    }

    #[test]
    fn id_layout_is_specials_alphabet_merges() {
        let m = char_model(&['l', 'o', 'w'], &[("l", "o"), ("lo", "w")]);
        assert_eq!(m.token_id("[PAD]"), Some(0));
        assert_eq!(m.token_id("[UNK]"), Some(1));
        assert_eq!(m.token_id("[MASK]"), Some(4));
        assert_eq!(m.token_id("l"), Some(5));
        assert_eq!(m.token_id("o"), Some(6));
        assert_eq!(m.token_id("w"), Some(7));
        assert_eq!(m.token_id("lo"), Some(8));
        assert_eq!(m.token_id("low"), Some(9));
        assert_eq!(m.vocab_len(), 10);
        assert!(m.is_special(4));
        assert!(!m.is_special(5));
    }

    #[test]
    fn char_encode_applies_merges_and_flags() {
        let m = char_model(&['l', 'o', 'w', 'e', 'r'], &[("l", "o"), ("lo", "w")]);
        let seq = m.encode("low lower");
        let low = m.token_id("low").unwrap();
        let e = m.token_id("e").unwrap();
        let r = m.token_id("r").unwrap();
        assert_eq!(seq.ids, vec![low, low, e, r]);
        assert_eq!(seq.word_start_flags, vec![true, true, false, false]);
    }

    #[test]
    fn char_unknown_characters_become_unk() {
        let m = char_model(&['a', 'b'], &[]);
        let seq = m.encode("ab cd");
        assert_eq!(
            seq.ids,
            vec![
                m.token_id("a").unwrap(),
                m.token_id("b").unwrap(),
                m.unk_id(),
                m.unk_id()
            ]
        );
        // Unknown symbols never merge even if a merge mentions them; the
        // trainer cannot produce such merges in the first place.
    }

    #[test]
    fn char_decode_restores_canonical_spacing() {
        let m = char_model(&['l', 'o', 'w', 'e', 'r'], &[("l", "o"), ("lo", "w")]);
        for text in ["low lower", "low  lower", " low\tlower "] {
            let decoded = m.decode(&m.encode(text)).unwrap();
            assert_eq!(decoded, "low lower");
        }
    }

    #[test]
    fn empty_text_encodes_empty() {
        let m = char_model(&['a'], &[]);
        assert!(m.encode("").is_empty());
        assert!(m.encode("   \n\t ").is_empty());
        assert_eq!(m.decode(&TokenSequence::default()).unwrap(), "");
    }

    #[test]
    fn byte_round_trip_is_exact() {
        let m = byte_model(&[]);
        for text in [
            "Příliš žluťoučký kůň úpěl ďábelské ódy.",
            "tabs\tand\nnewlines  double",
            " leading and trailing ",
            "emoji 🦀 and ASCII",
            "",
        ] {
            let seq = m.encode(text);
            assert_eq!(m.decode(&seq).unwrap(), text);
            assert_eq!(m.decode_ids(&seq.ids).unwrap(), text);
        }
    }

    #[test]
    fn byte_space_marker_starts_words() {
        let m = byte_model(&[]);
        let space_sym = m.token_id("\u{120}").unwrap();
        let seq = m.encode("ab cd");
        assert_eq!(seq.ids[2], space_sym);
        assert_eq!(seq.word_start_flags, vec![true, false, true, false, false]);
    }

    #[test]
    fn byte_merges_apply_across_space_marker() {
        // A merge of (Ġ, a) glues the word-initial marker to the word.
        let m = byte_model(&[("\u{120}", "a")]);
        let seq = m.encode("x ab");
        let merged = m.token_id("\u{120}a").unwrap();
        assert_eq!(seq.ids[1], merged);
        assert_eq!(m.decode(&seq).unwrap(), "x ab");
    }

    #[test]
    fn decode_rejects_out_of_range_ids() {
        let m = char_model(&['a'], &[]);
        let seq = TokenSequence { ids: vec![999], word_start_flags: vec![true] };
        assert!(matches!(m.decode(&seq), Err(BpeError::InvalidInput(_))));
        let m = byte_model(&[]);
        assert!(matches!(m.decode_ids(&[9999]), Err(BpeError::InvalidInput(_))));
    }

    #[test]
    fn char_mode_id_only_decoding_is_unsupported() {
        let m = char_model(&['a'], &[]);
        assert!(matches!(m.decode_ids(&[5]), Err(BpeError::Unsupported(_))));
    }

    #[test]
    fn specials_render_empty_on_decode() {
        let m = char_model(&['a'], &[]);
        let seq = TokenSequence {
            ids: vec![m.token_id("[CLS]").unwrap(), m.token_id("a").unwrap()],
            word_start_flags: vec![false, true],
        };
        assert_eq!(m.decode(&seq).unwrap(), "a");
    }

    #[test]
    fn model_text_round_trip() {
        let m = char_model(&['l', 'o', 'w'], &[("l", "o"), ("lo", "w")]);
        let text = m.to_text();
        let back = BpeModel::from_text(&text).unwrap();
        assert_eq!(back, m);
        assert_eq!(back.to_text(), text);

        let b = byte_model(&[("\u{120}", "a")]);
        let back = BpeModel::from_text(&b.to_text()).unwrap();
        assert_eq!(back, b);
    }

    #[test]
    fn model_file_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.bpe");
        let m = char_model(&['a', 'b'], &[("a", "b")]);
        m.save(&path).unwrap();
        assert_eq!(BpeModel::load(&path).unwrap(), m);
    }

    #[test]
    fn malformed_model_files_are_rejected() {
        let m = char_model(&['a', 'b'], &[("a", "b")]);
        let good = m.to_text();
        assert!(BpeModel::from_text(&good.replace(FORMAT_HEADER, "other v9")).is_err());
        assert!(BpeModel::from_text(&good.replace("mode = char", "mode = word")).is_err());
        // Truncation drops a section.
        let truncated: String =
            good.lines().take(8).map(|l| format!("{l}\n")).collect();
        assert!(BpeModel::from_text(&truncated).is_err());
        // A merge referencing a token that does not exist yet.
        assert!(BpeModel::from_text(&good.replace("a b", "a z")).is_err());
    }

    #[test]
    fn duplicate_tokens_are_rejected() {
        let err = BpeModel::from_parts(
            BpeMode::Char,
            1.0,
            CHAR_SPECIALS.iter().map(|s| s.to_string()).collect(),
            vec!["a".into(), "a".into()],
            vec![],
        )
        .unwrap_err();
        assert!(matches!(err, BpeError::Format(_)));
    }

    proptest! {
        #[test]
        fn byte_round_trip_fuzz(text in "\\PC{0,120}") {
            let m = byte_model(&[]);
            prop_assert_eq!(m.decode(&m.encode(&text)).unwrap(), text);
        }

        #[test]
        fn char_decode_is_canonical_fuzz(text in "[ab ]{0,40}") {
            let m = char_model(&['a', 'b'], &[("a", "b")]);
            let canonical = text.split_whitespace().collect::<Vec<_>>().join(" ");
            prop_assert_eq!(m.decode(&m.encode(&text)).unwrap(), canonical);
        }
    }
}
