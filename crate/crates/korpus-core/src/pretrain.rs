//! Pre-training instance generation: packed token sequences with
//! whole-word MLM targets, optionally paired for next-sentence
//! prediction.
//!
//! Generation is template-then-mask: each document yields a fixed set of
//! sequence templates, and every template is masked `dup_factor` times
//! with independent streams. All randomness derives from
//! `(rng_seed, scope, document ordinal, ...)`, so document-parallel
//! generation is scheduling-independent and byte-reproducible.

use std::fs::File;
use std::io::{self, BufReader, BufWriter, Read, Write};
use std::path::Path;

use rand::seq::SliceRandom;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::bpe::{BpeModel, TokenSequence};
use crate::clean::{sentence_count, CleanDocument};
use crate::rng::{derive_rng, scope};

const DATASET_MAGIC: &[u8; 8] = b"korpuspt";
const DATASET_VERSION: u32 = 1;

/// Terminal marks used for sentence segmentation; kept identical to the
/// cleaning stage's sentence-count rule.
const TERMINAL_MARKS: [char; 3] = ['.', '?', '!'];

#[derive(Debug, thiserror::Error)]
pub enum PretrainError {
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error("unsupported: {0}")]
    Unsupported(String),
    #[error("i/o: {0}")]
    Io(#[from] io::Error),
    #[error("dataset format: {0}")]
    Format(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PretrainConfig {
    /// Total instance length including special tokens and padding.
    pub seq_len: usize,
    /// Independently masked variants per template.
    pub dup_factor: u32,
    pub mask_prob: f64,
    /// Cap on masked tokens per instance; absent means
    /// ceil(mask_prob * seq_len).
    pub max_predictions: Option<usize>,
    /// Probability of a document drawing a short target length, which
    /// teaches the model unpadded short inputs (sentence-pair mode only).
    pub short_seq_prob: f64,
    /// Paired segments with a next-sentence label when true; contiguous
    /// single-segment packing when false.
    pub nsp_enabled: bool,
    /// Single-segment mode only: let packed sequences continue across
    /// document boundaries.
    pub pack_across_documents: bool,
    pub rng_seed: u64,
}

impl Default for PretrainConfig {
    fn default() -> Self {
        PretrainConfig {
            seq_len: 128,
            dup_factor: 5,
            mask_prob: 0.15,
            max_predictions: None,
            short_seq_prob: 0.10,
            nsp_enabled: true,
            pack_across_documents: false,
            rng_seed: 1,
        }
    }
}

impl PretrainConfig {
    pub fn effective_max_predictions(&self) -> usize {
        self.max_predictions
            .unwrap_or_else(|| (self.mask_prob * self.seq_len as f64).ceil() as usize)
    }

    pub fn validate(&self) -> Result<(), PretrainError> {
        if !(8..=8192).contains(&self.seq_len) {
            return Err(PretrainError::InvalidConfig(format!(
                "seq_len {} outside 8..=8192",
                self.seq_len
            )));
        }
        if !(self.mask_prob > 0.0 && self.mask_prob < 1.0) {
            return Err(PretrainError::InvalidConfig(format!(
                "mask_prob {} outside (0, 1)",
                self.mask_prob
            )));
        }
        if self.dup_factor == 0 {
            return Err(PretrainError::InvalidConfig("dup_factor must be >= 1".into()));
        }
        if !(0.0..1.0).contains(&self.short_seq_prob) {
            return Err(PretrainError::InvalidConfig(format!(
                "short_seq_prob {} outside [0, 1)",
                self.short_seq_prob
            )));
        }
        if self.effective_max_predictions() > self.seq_len {
            return Err(PretrainError::InvalidConfig(format!(
                "max_predictions {} exceeds seq_len {}",
                self.effective_max_predictions(),
                self.seq_len
            )));
        }
        Ok(())
    }
}

/// One training example. `token_ids` is always `seq_len` long, padded at
/// the tail; masked positions already carry their replacement and
/// `masked_labels` holds the pre-masking ids.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PretrainInstance {
    pub token_ids: Vec<u32>,
    pub segment_ids: Vec<u8>,
    pub masked_positions: Vec<u32>,
    pub masked_labels: Vec<u32>,
    pub is_next: Option<bool>,
}

impl PretrainInstance {
    /// Checks the structural contract; used by tests and the dataset
    /// reader.
    pub fn check(&self, seq_len: usize, max_predictions: usize) -> Result<(), PretrainError> {
        let bad = |m: String| Err(PretrainError::Format(m));
        if self.token_ids.len() != seq_len || self.segment_ids.len() != seq_len {
            return bad(format!(
                "instance length {}/{} != seq_len {seq_len}",
                self.token_ids.len(),
                self.segment_ids.len()
            ));
        }
        if self.masked_positions.len() != self.masked_labels.len() {
            return bad("masked positions and labels differ in length".into());
        }
        if self.masked_positions.len() > max_predictions {
            return bad(format!(
                "{} masked positions exceed the {max_predictions} cap",
                self.masked_positions.len()
            ));
        }
        if !self.masked_positions.windows(2).all(|w| w[0] < w[1]) {
            return bad("masked positions are not strictly increasing".into());
        }
        if let Some(&last) = self.masked_positions.last() {
            if last as usize >= seq_len {
                return bad(format!("masked position {last} outside the sequence"));
            }
        }
        Ok(())
    }
}

/// Splits each retained line at token-final terminal marks, preserving
/// order. A trailing run without a final mark still forms a sentence so
/// no text is lost.
pub fn segment_sentences(doc: &CleanDocument) -> Vec<String> {
    let mut out = Vec::new();
    for line in &doc.lines {
        let mut current: Vec<&str> = Vec::new();
        for token in line.split_whitespace() {
            current.push(token);
            if token.ends_with(TERMINAL_MARKS) {
                out.push(current.join(" "));
                current.clear();
            }
        }
        if !current.is_empty() {
            out.push(current.join(" "));
        }
    }
    out
}

/// Tokenizes each document's sentences, dropping sentences that encode
/// to nothing.
pub fn tokenize_documents(docs: &[CleanDocument], model: &BpeModel) -> Vec<Vec<TokenSequence>> {
    docs.par_iter()
        .map(|doc| {
            segment_sentences(doc)
                .iter()
                .map(|s| model.encode(s))
                .filter(|seq| !seq.ids.is_empty())
                .collect()
        })
        .collect()
}

fn extend_seq(dst: &mut TokenSequence, src: &TokenSequence) {
    dst.ids.extend_from_slice(&src.ids);
    dst.word_start_flags.extend_from_slice(&src.word_start_flags);
}

/// Two segments destined for one instance, plus the true-continuation
/// label.
#[derive(Debug, Clone)]
pub struct SegmentPair {
    pub a: TokenSequence,
    pub b: TokenSequence,
    pub is_next: bool,
}

/// Trims the longer side one token at a time, from the front or back by
/// coin flip, until the pair fits the budget.
fn truncate_pair(a: &mut TokenSequence, b: &mut TokenSequence, max_tokens: usize, rng: &mut ChaCha8Rng) {
    while a.ids.len() + b.ids.len() > max_tokens {
        let longer = if a.ids.len() > b.ids.len() { &mut *a } else { &mut *b };
        if rng.gen::<f64>() < 0.5 {
            longer.ids.remove(0);
            longer.word_start_flags.remove(0);
        } else {
            longer.ids.pop();
            longer.word_start_flags.pop();
        }
    }
}

fn nsp_pairs_for_doc(
    d: usize,
    docs: &[Vec<TokenSequence>],
    others: &[usize],
    config: &PretrainConfig,
) -> Vec<SegmentPair> {
    let doc = &docs[d];
    if doc.is_empty() {
        return Vec::new();
    }
    let mut rng = derive_rng(config.rng_seed, &[scope::NSP_SAMPLING, d as u64]);
    let max_tokens = config.seq_len - 3;
    let mut target_len = max_tokens;
    if rng.gen::<f64>() < config.short_seq_prob {
        target_len = rng.gen_range(2..=max_tokens);
    }

    let mut pairs = Vec::new();
    let mut chunk: Vec<usize> = Vec::new();
    let mut chunk_len = 0usize;
    let mut i = 0usize;
    while i < doc.len() {
        chunk.push(i);
        chunk_len += doc[i].ids.len();
        if i == doc.len() - 1 || chunk_len >= target_len {
            let a_end = if chunk.len() >= 2 { rng.gen_range(1..chunk.len()) } else { 1 };
            let mut a = TokenSequence::default();
            for &s in &chunk[..a_end] {
                extend_seq(&mut a, &doc[s]);
            }
            let mut b = TokenSequence::default();
            // The label comes from an unconditional fair coin; forcing
            // lone chunks negative would skew the balance on corpora of
            // short documents. A lone sentence too short to split still
            // falls back to a negative.
            let splittable = chunk.len() >= 2 || doc[chunk[0]].ids.len() >= 2;
            let is_next = if rng.gen::<f64>() < 0.5 || !splittable {
                let target_b = target_len.saturating_sub(a.ids.len());
                let rd = others[rng.gen_range(0..others.len())];
                let rdoc = &docs[rd];
                let start = rng.gen_range(0..rdoc.len());
                for s in &rdoc[start..] {
                    extend_seq(&mut b, s);
                    if b.ids.len() >= target_b {
                        break;
                    }
                }
                // Unconsumed sentences go back to the stream.
                i -= chunk.len() - a_end;
                false
            } else if chunk.len() == 1 {
                // Positive on a lone sentence: cut at a token boundary so
                // segment_b still continues segment_a verbatim.
                let sent = &doc[chunk[0]];
                let cut = rng.gen_range(1..sent.ids.len());
                a.ids.truncate(cut);
                a.word_start_flags.truncate(cut);
                b.ids.extend_from_slice(&sent.ids[cut..]);
                b.word_start_flags.extend_from_slice(&sent.word_start_flags[cut..]);
                true
            } else {
                for &s in &chunk[a_end..] {
                    extend_seq(&mut b, &doc[s]);
                }
                true
            };
            truncate_pair(&mut a, &mut b, max_tokens, &mut rng);
            if !a.ids.is_empty() && !b.ids.is_empty() {
                pairs.push(SegmentPair { a, b, is_next });
            }
            chunk.clear();
            chunk_len = 0;
        }
        i += 1;
    }
    pairs
}

/// Builds segment pairs for every document: roughly half true
/// continuations, half spans stolen from another document. Grouped by
/// source document ordinal.
pub fn build_nsp_pairs(
    docs: &[Vec<TokenSequence>],
    config: &PretrainConfig,
) -> Result<Vec<Vec<SegmentPair>>, PretrainError> {
    config.validate()?;
    let nonempty: Vec<usize> =
        (0..docs.len()).filter(|&d| !docs[d].is_empty()).collect();
    if nonempty.len() < 2 {
        return Err(PretrainError::Unsupported(
            "negative sampling needs at least two non-empty documents".into(),
        ));
    }
    Ok((0..docs.len())
        .into_par_iter()
        .map(|d| {
            let others: Vec<usize> =
                nonempty.iter().copied().filter(|&x| x != d).collect();
            nsp_pairs_for_doc(d, docs, &others, config)
        })
        .collect())
}

/// Packs whole sentences contiguously up to the budget; a sentence is
/// split only if it alone exceeds the budget. Grouped by document (one
/// group in cross-document mode).
pub fn pack_mlm_sequences(
    docs: &[Vec<TokenSequence>],
    config: &PretrainConfig,
) -> Vec<Vec<TokenSequence>> {
    let max_tokens = config.seq_len - 2;
    let pack = |sentences: &mut dyn Iterator<Item = &TokenSequence>| {
        let mut out = Vec::new();
        let mut cur = TokenSequence::default();
        for s in sentences {
            let mut rest_ids = &s.ids[..];
            let mut rest_flags = &s.word_start_flags[..];
            while !rest_ids.is_empty() {
                if cur.ids.len() == max_tokens {
                    out.push(std::mem::take(&mut cur));
                }
                let room = max_tokens - cur.ids.len();
                if rest_ids.len() > room && !cur.ids.is_empty() {
                    // Sentence does not fit the remainder: start fresh
                    // rather than splitting it.
                    out.push(std::mem::take(&mut cur));
                    continue;
                }
                let take = rest_ids.len().min(max_tokens);
                cur.ids.extend_from_slice(&rest_ids[..take]);
                cur.word_start_flags.extend_from_slice(&rest_flags[..take]);
                rest_ids = &rest_ids[take..];
                rest_flags = &rest_flags[take..];
            }
        }
        if !cur.ids.is_empty() {
            out.push(cur);
        }
        out
    };
    if config.pack_across_documents {
        vec![pack(&mut docs.iter().flatten())]
    } else {
        docs.iter().map(|doc| pack(&mut doc.iter())).collect()
    }
}

/// Unpadded instance template: assembled ids with word boundaries kept
/// for masking.
#[derive(Debug, Clone)]
struct Template {
    ids: Vec<u32>,
    flags: Vec<bool>,
    segments: Vec<u8>,
    is_next: Option<bool>,
}

fn assemble_nsp(pair: &SegmentPair, model: &BpeModel) -> Template {
    let len = pair.a.ids.len() + pair.b.ids.len() + 3;
    let mut ids = Vec::with_capacity(len);
    let mut flags = Vec::with_capacity(len);
    let mut segments = Vec::with_capacity(len);
    ids.push(model.cls_id());
    flags.push(false);
    segments.push(0);
    ids.extend_from_slice(&pair.a.ids);
    flags.extend_from_slice(&pair.a.word_start_flags);
    segments.resize(ids.len(), 0);
    ids.push(model.sep_id());
    flags.push(false);
    segments.push(0);
    ids.extend_from_slice(&pair.b.ids);
    flags.extend_from_slice(&pair.b.word_start_flags);
    segments.resize(ids.len(), 1);
    ids.push(model.sep_id());
    flags.push(false);
    segments.push(1);
    Template { ids, flags, segments, is_next: Some(pair.is_next) }
}

fn assemble_mlm(chunk: &TokenSequence, model: &BpeModel) -> Template {
    let len = chunk.ids.len() + 2;
    let mut ids = Vec::with_capacity(len);
    let mut flags = Vec::with_capacity(len);
    ids.push(model.cls_id());
    flags.push(false);
    ids.extend_from_slice(&chunk.ids);
    flags.extend_from_slice(&chunk.word_start_flags);
    ids.push(model.sep_id());
    flags.push(false);
    Template { segments: vec![0; len], ids, flags, is_next: None }
}

/// Result of one masking pass.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Masking {
    pub masked_ids: Vec<u32>,
    pub positions: Vec<u32>,
    pub labels: Vec<u32>,
}

/// Maximal word runs: a unit opens at a word-start flag and absorbs
/// following continuation tokens. Special tokens close the current unit
/// and belong to none; a continuation with no open unit (its word start
/// was truncated away) is unmaskable.
fn word_units(ids: &[u32], flags: &[bool], model: &BpeModel) -> Vec<(usize, usize)> {
    let mut units: Vec<(usize, usize)> = Vec::new();
    let mut open = false;
    for (i, (&id, &flag)) in ids.iter().zip(flags).enumerate() {
        if model.is_special(id) {
            open = false;
        } else if flag {
            units.push((i, 1));
            open = true;
        } else if open {
            units.last_mut().expect("open implies a unit").1 += 1;
        }
    }
    units
}

fn mask_slice(
    ids: &[u32],
    flags: &[bool],
    model: &BpeModel,
    config: &PretrainConfig,
    rng: &mut ChaCha8Rng,
) -> Masking {
    let mut units = word_units(ids, flags, model);
    let maskable: usize = units.iter().map(|u| u.1).sum();
    let budget = config.effective_max_predictions();
    let num_to_predict = if maskable == 0 {
        0
    } else {
        budget.min(((config.mask_prob * maskable as f64).round() as usize).max(1))
    };

    let mut masked_ids = ids.to_vec();
    let mut picked: Vec<(u32, u32)> = Vec::new();
    units.shuffle(rng);
    let mut count = 0usize;
    for (start, len) in units {
        if count + len > num_to_predict {
            continue;
        }
        count += len;
        // One replacement decision per word keeps selected words
        // internally consistent; random replacements still draw a fresh
        // token per position.
        let coin: f64 = rng.gen();
        for pos in start..start + len {
            let original = ids[pos];
            masked_ids[pos] = if coin < 0.8 {
                model.mask_id()
            } else if coin < 0.9 {
                rng.gen_range(model.special_count() as u32..model.vocab_len() as u32)
            } else {
                original
            };
            picked.push((pos as u32, original));
        }
    }
    picked.sort_unstable_by_key(|p| p.0);
    let (positions, labels) = picked.into_iter().unzip();
    Masking { masked_ids, positions, labels }
}

/// Whole-word masking over a free-standing token sequence.
pub fn apply_whole_word_masking(
    tokens: &TokenSequence,
    model: &BpeModel,
    config: &PretrainConfig,
    rng: &mut ChaCha8Rng,
) -> Masking {
    mask_slice(&tokens.ids, &tokens.word_start_flags, model, config, rng)
}

fn instance_from_template(
    tmpl: &Template,
    model: &BpeModel,
    config: &PretrainConfig,
    rng: &mut ChaCha8Rng,
) -> PretrainInstance {
    let m = mask_slice(&tmpl.ids, &tmpl.flags, model, config, rng);
    let mut token_ids = m.masked_ids;
    let mut segment_ids = tmpl.segments.clone();
    token_ids.resize(config.seq_len, model.pad_id());
    segment_ids.resize(config.seq_len, 0);
    PretrainInstance {
        token_ids,
        segment_ids,
        masked_positions: m.positions,
        masked_labels: m.labels,
        is_next: tmpl.is_next,
    }
}

/// Generates the full instance set for tokenized documents: templates in
/// document order, each masked `dup_factor` times back to back.
pub fn generate_instances(
    docs: &[Vec<TokenSequence>],
    model: &BpeModel,
    config: &PretrainConfig,
) -> Result<Vec<PretrainInstance>, PretrainError> {
    config.validate()?;
    let templates: Vec<Vec<Template>> = if config.nsp_enabled {
        build_nsp_pairs(docs, config)?
            .par_iter()
            .map(|pairs| pairs.iter().map(|p| assemble_nsp(p, model)).collect())
            .collect()
    } else {
        pack_mlm_sequences(docs, config)
            .par_iter()
            .map(|chunks| chunks.iter().map(|c| assemble_mlm(c, model)).collect())
            .collect()
    };
    let out: Vec<Vec<PretrainInstance>> = templates
        .par_iter()
        .enumerate()
        .map(|(d, tmpls)| {
            let mut instances =
                Vec::with_capacity(tmpls.len() * config.dup_factor as usize);
            for (t, tmpl) in tmpls.iter().enumerate() {
                for dup in 0..config.dup_factor {
                    let mut rng = derive_rng(
                        config.rng_seed,
                        &[scope::MASKING, d as u64, t as u64, dup as u64],
                    );
                    instances.push(instance_from_template(tmpl, model, config, &mut rng));
                }
            }
            instances
        })
        .collect();
    Ok(out.into_iter().flatten().collect())
}

/// Convenience path from cleaned documents.
pub fn instances_from_documents(
    docs: &[CleanDocument],
    model: &BpeModel,
    config: &PretrainConfig,
) -> Result<Vec<PretrainInstance>, PretrainError> {
    generate_instances(&tokenize_documents(docs, model), model, config)
}

/// Sidecar metadata written next to the binary record file.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DatasetSidecar {
    pub version: u32,
    pub seq_len: usize,
    pub nsp_enabled: bool,
    pub instance_count: u64,
    pub masked_total: u64,
    pub config: PretrainConfig,
    pub sha256: String,
}

struct HashingWriter<W: Write> {
    inner: W,
    hasher: Sha256,
}

impl<W: Write> Write for HashingWriter<W> {
    fn write(&mut self, buf: &[u8]) -> io::Result<usize> {
        let n = self.inner.write(buf)?;
        self.hasher.update(&buf[..n]);
        Ok(n)
    }
    fn flush(&mut self) -> io::Result<()> {
        self.inner.flush()
    }
}

fn write_u32<W: Write>(w: &mut W, v: u32) -> io::Result<()> {
    w.write_all(&v.to_le_bytes())
}

fn read_u32<R: Read>(r: &mut R) -> io::Result<u32> {
    let mut buf = [0u8; 4];
    r.read_exact(&mut buf)?;
    Ok(u32::from_le_bytes(buf))
}

/// Writes the length-prefixed binary record file and its JSON sidecar;
/// returns the sidecar ( checksum included).
pub fn write_dataset(
    bin_path: &Path,
    sidecar_path: &Path,
    instances: &[PretrainInstance],
    config: &PretrainConfig,
) -> Result<DatasetSidecar, PretrainError> {
    let mut w = HashingWriter {
        inner: BufWriter::new(File::create(bin_path)?),
        hasher: Sha256::new(),
    };
    w.write_all(DATASET_MAGIC)?;
    write_u32(&mut w, DATASET_VERSION)?;
    write_u32(&mut w, config.seq_len as u32)?;
    write_u32(&mut w, config.nsp_enabled as u32)?;
    let mut masked_total = 0u64;
    for inst in instances {
        inst.check(config.seq_len, config.effective_max_predictions())?;
        masked_total += inst.masked_positions.len() as u64;
        let n_masked = inst.masked_positions.len();
        let payload_len = 3 + 5 * config.seq_len + 8 * n_masked;
        write_u32(&mut w, payload_len as u32)?;
        w.write_all(&[match inst.is_next {
            Some(false) => 0,
            Some(true) => 1,
            None => 2,
        }])?;
        w.write_all(&(n_masked as u16).to_le_bytes())?;
        for &id in &inst.token_ids {
            write_u32(&mut w, id)?;
        }
        w.write_all(&inst.segment_ids)?;
        for &p in &inst.masked_positions {
            write_u32(&mut w, p)?;
        }
        for &l in &inst.masked_labels {
            write_u32(&mut w, l)?;
        }
    }
    w.flush()?;
    let sidecar = DatasetSidecar {
        version: DATASET_VERSION,
        seq_len: config.seq_len,
        nsp_enabled: config.nsp_enabled,
        instance_count: instances.len() as u64,
        masked_total,
        config: config.clone(),
        sha256: hex(&w.hasher.finalize()),
    };
    let json = serde_json::to_string_pretty(&sidecar)
        .expect("sidecar serialization cannot fail");
    std::fs::write(sidecar_path, json + "\n")?;
    Ok(sidecar)
}

fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

/// Reads a dataset back; validates framing and instance structure.
pub fn read_dataset(bin_path: &Path) -> Result<(Vec<PretrainInstance>, usize), PretrainError> {
    let mut r = BufReader::new(File::open(bin_path)?);
    let mut magic = [0u8; 8];
    r.read_exact(&mut magic)?;
    if &magic != DATASET_MAGIC {
        return Err(PretrainError::Format("bad magic".into()));
    }
    let version = read_u32(&mut r)?;
    if version != DATASET_VERSION {
        return Err(PretrainError::Format(format!("unsupported version {version}")));
    }
    let seq_len = read_u32(&mut r)? as usize;
    let _nsp = read_u32(&mut r)?;
    let mut instances = Vec::new();
    loop {
        let payload_len = match read_u32(&mut r) {
            Ok(v) => v as usize,
            Err(e) if e.kind() == io::ErrorKind::UnexpectedEof => break,
            Err(e) => return Err(e.into()),
        };
        let mut payload = vec![0u8; payload_len];
        r.read_exact(&mut payload).map_err(|e| {
            if e.kind() == io::ErrorKind::UnexpectedEof {
                PretrainError::Format("truncated record".into())
            } else {
                PretrainError::Io(e)
            }
        })?;
        if payload_len < 3 + 5 * seq_len || !(payload_len - 3 - 5 * seq_len).is_multiple_of(8) {
            return Err(PretrainError::Format(format!(
                "implausible record length {payload_len}"
            )));
        }
        let n_masked = (payload_len - 3 - 5 * seq_len) / 8;
        let is_next = match payload[0] {
            0 => Some(false),
            1 => Some(true),
            2 => None,
            v => return Err(PretrainError::Format(format!("bad is_next byte {v}"))),
        };
        if u16::from_le_bytes([payload[1], payload[2]]) as usize != n_masked {
            return Err(PretrainError::Format(
                "masked count disagrees with record length".into(),
            ));
        }
        let mut at = 3;
        let take_u32s = |n: usize, at: &mut usize| -> Vec<u32> {
            let v = payload[*at..*at + 4 * n]
                .chunks_exact(4)
                .map(|c| u32::from_le_bytes([c[0], c[1], c[2], c[3]]))
                .collect();
            *at += 4 * n;
            v
        };
        let token_ids = take_u32s(seq_len, &mut at);
        let segment_ids = payload[at..at + seq_len].to_vec();
        at += seq_len;
        let masked_positions = take_u32s(n_masked, &mut at);
        let masked_labels = take_u32s(n_masked, &mut at);
        let inst = PretrainInstance {
            token_ids,
            segment_ids,
            masked_positions,
            masked_labels,
            is_next,
        };
        inst.check(seq_len, seq_len)?;
        instances.push(inst);
    }
    Ok((instances, seq_len))
}

/// One instance per line with token strings restored, for eyeballing.
pub fn debug_dump<W: Write>(
    mut w: W,
    instances: &[PretrainInstance],
    model: &BpeModel,
) -> io::Result<()> {
    for (i, inst) in instances.iter().enumerate() {
        let live = inst
            .token_ids
            .iter()
            .rposition(|&id| id != model.pad_id())
            .map_or(0, |p| p + 1);
        let text: Vec<&str> = inst.token_ids[..live]
            .iter()
            .map(|&id| model.token_string(id).unwrap_or("?"))
            .collect();
        let masked: Vec<String> = inst
            .masked_positions
            .iter()
            .zip(&inst.masked_labels)
            .map(|(p, l)| format!("{p}:{}", model.token_string(*l).unwrap_or("?")))
            .collect();
        let next = match inst.is_next {
            Some(true) => "next=1\t",
            Some(false) => "next=0\t",
            None => "",
        };
        writeln!(w, "{i}\t{next}{}\tmasked={}", text.join(" "), masked.join(","))?;
    }
    Ok(())
}

/// Sentence count of a document under the shared terminal-mark rule.
pub fn document_sentences(doc: &CleanDocument) -> usize {
    doc.lines.iter().map(|l| sentence_count(l, &TERMINAL_MARKS)).sum()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::bpe::{train_bpe, BpeMode, TrainerParams};

    fn doc(lines: &[&str]) -> CleanDocument {
        let mut d = CleanDocument {
            uri: "http://example.cz/".into(),
            lines: lines.iter().map(|s| s.to_string()).collect(),
            sentence_count: 0,
        };
        d.recount_sentences(&TERMINAL_MARKS);
        d
    }

    fn tiny_model() -> BpeModel {
        let corpus = [
            "v lese roste mnoho hub. drak spal v jeskyni pod horou.",
            "pes videl kocku a stekal. kocka utekla na strom u reky.",
            "rano prselo a foukal vitr. potom vyslo slunce nad mesto.",
        ];
        train_bpe(
            corpus,
            &TrainerParams {
                vocab_size: 261 + 60,
                mode: BpeMode::Byte,
                character_coverage: 1.0,
            },
        )
        .unwrap()
    }

    /// Synthetic multi-sentence documents over the model's training
    /// vocabulary.
    fn synthetic_docs(n_docs: usize, sentences: usize, wps: usize) -> Vec<Vec<String>> {
        let words = [
            "pes", "kocka", "drak", "strom", "reka", "slunce", "vitr", "mesto",
            "hora", "les",
        ];
        (0..n_docs)
            .map(|d| {
                (0..sentences)
                    .map(|s| {
                        let mut parts: Vec<&str> = Vec::new();
                        for k in 0..wps {
                            parts.push(words[(d * 7 + s * 3 + k) % words.len()]);
                        }
                        format!("{}.", parts.join(" "))
                    })
                    .collect()
            })
            .collect()
    }

    fn tokenized(model: &BpeModel, docs: &[Vec<String>]) -> Vec<Vec<TokenSequence>> {
        docs.iter()
            .map(|sents| sents.iter().map(|s| model.encode(s)).collect())
            .collect()
    }

    #[test]
    fn sentences_split_at_token_final_marks() {
        assert_eq!(
            segment_sentences(&doc(&["Prší. Svítí slunce."])),
            vec!["Prší.", "Svítí slunce."]
        );
        assert!(segment_sentences(&doc(&[])).is_empty());
        assert_eq!(
            segment_sentences(&doc(&["Stálo to 3.50 Kč."])),
            vec!["Stálo to 3.50 Kč."]
        );
        // A trailing run without a mark still comes through.
        assert_eq!(
            segment_sentences(&doc(&["Konec? Možná ano"])),
            vec!["Konec?", "Možná ano"]
        );
    }

    #[test]
    fn masking_is_whole_word_atomic() {
        let model = tiny_model();
        let seq = model.encode("slunce slunce slunce");
        assert!(seq.ids.len() >= 3, "want a multi-token sequence");
        let config = PretrainConfig {
            mask_prob: 0.5,
            nsp_enabled: false,
            ..PretrainConfig::default()
        };
        let units = word_units(&seq.ids, &seq.word_start_flags, &model);
        assert_eq!(units.len(), 3);
        for trial in 0..50u64 {
            let mut rng = derive_rng(trial, &[scope::MASKING]);
            let m = apply_whole_word_masking(&seq, &model, &config, &mut rng);
            for (start, len) in &units {
                let inside = m
                    .positions
                    .iter()
                    .filter(|&&p| (p as usize) >= *start && (p as usize) < start + len)
                    .count();
                assert!(
                    inside == 0 || inside == *len,
                    "word at {start} masked partially ({inside}/{len})"
                );
            }
        }
    }

    #[test]
    fn masked_labels_restore_the_original_sequence() {
        let model = tiny_model();
        let seq = model.encode("pes videl kocku a stekal u reky");
        let config =
            PretrainConfig { nsp_enabled: false, ..PretrainConfig::default() };
        let mut rng = derive_rng(7, &[scope::MASKING]);
        let m = apply_whole_word_masking(&seq, &model, &config, &mut rng);
        assert!(!m.positions.is_empty());
        let mut restored = m.masked_ids.clone();
        for (p, l) in m.positions.iter().zip(&m.labels) {
            restored[*p as usize] = *l;
        }
        assert_eq!(restored, seq.ids);
        for l in &m.labels {
            assert!(!model.is_special(*l));
        }
    }

    #[test]
    fn zero_max_predictions_masks_nothing() {
        let model = tiny_model();
        let seq = model.encode("pes videl kocku");
        let config = PretrainConfig {
            max_predictions: Some(0),
            nsp_enabled: false,
            ..PretrainConfig::default()
        };
        let mut rng = derive_rng(1, &[scope::MASKING]);
        let m = apply_whole_word_masking(&seq, &model, &config, &mut rng);
        assert!(m.positions.is_empty());
        assert_eq!(m.masked_ids, seq.ids);
    }

    #[test]
    fn masked_fraction_tracks_mask_prob() {
        let model = tiny_model();
        let docs = tokenized(&model, &synthetic_docs(60, 12, 6));
        let config = PretrainConfig {
            seq_len: 64,
            dup_factor: 2,
            nsp_enabled: false,
            rng_seed: 9,
            ..PretrainConfig::default()
        };
        let instances = generate_instances(&docs, &model, &config).unwrap();
        assert!(instances.len() > 300, "got {}", instances.len());
        let mut masked = 0usize;
        let mut maskable = 0usize;
        for inst in &instances {
            masked += inst.masked_positions.len();
            // Denominator over the pre-masking sequence: real tokens only,
            // no specials, no padding.
            let mut restored = inst.token_ids.clone();
            for (p, l) in inst.masked_positions.iter().zip(&inst.masked_labels) {
                restored[*p as usize] = *l;
            }
            maskable += restored.iter().filter(|&&id| !model.is_special(id)).count();
        }
        let frac = masked as f64 / maskable as f64;
        assert!((0.12..=0.18).contains(&frac), "masked fraction {frac}");
    }

    #[test]
    fn nsp_pairs_balance_and_fit_budget() {
        let model = tiny_model();
        let docs = tokenized(&model, &synthetic_docs(160, 120, 3));
        let config = PretrainConfig {
            seq_len: 128,
            rng_seed: 3,
            short_seq_prob: 0.0,
            ..PretrainConfig::default()
        };
        let grouped = build_nsp_pairs(&docs, &config).unwrap();
        let pairs: Vec<&SegmentPair> = grouped.iter().flatten().collect();
        assert!(pairs.len() >= 2000, "got {}", pairs.len());
        for p in &pairs {
            assert!(p.a.ids.len() + p.b.ids.len() <= config.seq_len - 3);
            assert!(!p.a.ids.is_empty() && !p.b.ids.is_empty());
        }
        let negatives = pairs.iter().filter(|p| !p.is_next).count();
        let frac = negatives as f64 / pairs.len() as f64;
        assert!((0.45..=0.55).contains(&frac), "negative fraction {frac}");
    }

    #[test]
    fn nsp_balance_survives_short_documents() {
        // Documents of a few short sentences end in lone trailing chunks;
        // those must flip the same fair coin as everything else or the
        // corpus drifts negative.
        let model = tiny_model();
        let docs = tokenized(&model, &synthetic_docs(2500, 3, 3));
        let config = PretrainConfig {
            seq_len: 128,
            rng_seed: 9,
            short_seq_prob: 0.0,
            ..PretrainConfig::default()
        };
        let grouped = build_nsp_pairs(&docs, &config).unwrap();
        let pairs: Vec<&SegmentPair> = grouped.iter().flatten().collect();
        assert!(pairs.len() >= 2000, "got {}", pairs.len());
        let negatives = pairs.iter().filter(|p| !p.is_next).count();
        let frac = negatives as f64 / pairs.len() as f64;
        assert!((0.45..=0.55).contains(&frac), "negative fraction {frac}");
        // A positive from a lone chunk is a genuine split: b continues a.
        for p in pairs.iter().filter(|p| p.is_next) {
            assert!(!p.a.ids.is_empty() && !p.b.ids.is_empty());
        }
    }

    #[test]
    fn single_document_corpus_is_unsupported_for_nsp() {
        let model = tiny_model();
        let docs = tokenized(&model, &synthetic_docs(1, 8, 6));
        let err = build_nsp_pairs(&docs, &PretrainConfig::default()).unwrap_err();
        assert!(matches!(err, PretrainError::Unsupported(_)));
    }

    #[test]
    fn instances_are_padded_and_structurally_sound() {
        let model = tiny_model();
        let docs = tokenized(&model, &synthetic_docs(8, 10, 6));
        let config = PretrainConfig {
            seq_len: 40,
            dup_factor: 2,
            rng_seed: 5,
            ..PretrainConfig::default()
        };
        let instances = generate_instances(&docs, &model, &config).unwrap();
        assert!(!instances.is_empty());
        for inst in &instances {
            inst.check(config.seq_len, config.effective_max_predictions())
                .unwrap();
            assert!(inst.is_next.is_some());
            // Exactly one separator ends each segment.
            let seps: Vec<usize> = inst
                .token_ids
                .iter()
                .enumerate()
                .filter(|(_, &id)| id == model.sep_id())
                .map(|(i, _)| i)
                .collect();
            assert_eq!(seps.len(), 2);
            let boundary = seps[0];
            for (i, &seg) in inst.segment_ids.iter().enumerate() {
                if i <= boundary {
                    assert_eq!(seg, 0);
                } else if i <= seps[1] {
                    assert_eq!(seg, 1);
                }
            }
            assert_eq!(inst.token_ids[0], model.cls_id());
            // Labels are never special tokens.
            for l in &inst.masked_labels {
                assert!(!model.is_special(*l));
            }
        }
    }

    #[test]
    fn dup_factor_multiplies_instances_and_varies_masks() {
        let model = tiny_model();
        let docs = tokenized(&model, &synthetic_docs(20, 12, 6));
        let base = PretrainConfig {
            seq_len: 48,
            rng_seed: 11,
            ..PretrainConfig::default()
        };
        let one = generate_instances(
            &docs,
            &model,
            &PretrainConfig { dup_factor: 1, ..base.clone() },
        )
        .unwrap();
        let five = generate_instances(
            &docs,
            &model,
            &PretrainConfig { dup_factor: 5, ..base.clone() },
        )
        .unwrap();
        assert_eq!(five.len(), one.len() * 5);

        let mut varied = 0usize;
        let mut groups = 0usize;
        for group in five.chunks(5) {
            groups += 1;
            // Restoring originals shows all variants share one template.
            let restore = |inst: &PretrainInstance| {
                let mut ids = inst.token_ids.clone();
                for (p, l) in inst.masked_positions.iter().zip(&inst.masked_labels) {
                    ids[*p as usize] = *l;
                }
                ids
            };
            let first = restore(&group[0]);
            assert!(group.iter().all(|g| restore(g) == first));
            let distinct: std::collections::HashSet<&[u32]> =
                group.iter().map(|g| g.masked_positions.as_slice()).collect();
            if distinct.len() >= 2 {
                varied += 1;
            }
        }
        assert!(
            varied as f64 / groups as f64 >= 0.99,
            "{varied}/{groups} groups varied"
        );
    }

    #[test]
    fn generation_is_reproducible_and_seed_sensitive() {
        let model = tiny_model();
        let docs = tokenized(&model, &synthetic_docs(10, 10, 6));
        let config = PretrainConfig { seq_len: 48, ..PretrainConfig::default() };
        let a = generate_instances(&docs, &model, &config).unwrap();
        let b = generate_instances(&docs, &model, &config).unwrap();
        assert_eq!(a, b);
        let c = generate_instances(
            &docs,
            &model,
            &PretrainConfig { rng_seed: 2, ..config },
        )
        .unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn mlm_packing_fills_sequences() {
        // Long documents: the per-document remainder chunk must stay a
        // small share of the output for the fill bound to hold.
        let model = tiny_model();
        let docs = tokenized(&model, &synthetic_docs(8, 200, 3));
        let config = PretrainConfig {
            seq_len: 128,
            nsp_enabled: false,
            dup_factor: 1,
            ..PretrainConfig::default()
        };
        let instances = generate_instances(&docs, &model, &config).unwrap();
        let nonpad: usize = instances
            .iter()
            .map(|i| {
                i.token_ids.iter().filter(|&&id| id != model.pad_id()).count()
            })
            .sum();
        let frac = nonpad as f64 / (instances.len() * config.seq_len) as f64;
        assert!(frac >= 0.9, "mean non-pad fraction {frac}");
        for inst in &instances {
            assert!(inst.is_next.is_none());
            assert!(inst.segment_ids.iter().all(|&s| s == 0));
        }
    }

    #[test]
    fn cross_document_packing_reduces_tail_waste() {
        let model = tiny_model();
        // Many tiny documents leave a short remainder each unless packing
        // may continue across the boundary.
        let docs = tokenized(&model, &synthetic_docs(40, 2, 6));
        let config = PretrainConfig {
            seq_len: 96,
            nsp_enabled: false,
            dup_factor: 1,
            ..PretrainConfig::default()
        };
        let per_doc = generate_instances(&docs, &model, &config).unwrap();
        let crossing = generate_instances(
            &docs,
            &model,
            &PretrainConfig { pack_across_documents: true, ..config },
        )
        .unwrap();
        assert!(crossing.len() < per_doc.len());
    }

    #[test]
    fn dataset_round_trips_with_checksum() {
        let model = tiny_model();
        let docs = tokenized(&model, &synthetic_docs(6, 8, 6));
        let config = PretrainConfig {
            seq_len: 40,
            dup_factor: 2,
            rng_seed: 21,
            ..PretrainConfig::default()
        };
        let instances = generate_instances(&docs, &model, &config).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let bin = dir.path().join("train.bin");
        let side = dir.path().join("train.json");
        let sidecar = write_dataset(&bin, &side, &instances, &config).unwrap();
        assert_eq!(sidecar.instance_count, instances.len() as u64);

        let (back, seq_len) = read_dataset(&bin).unwrap();
        assert_eq!(seq_len, config.seq_len);
        assert_eq!(back, instances);

        let parsed: DatasetSidecar =
            serde_json::from_str(&std::fs::read_to_string(&side).unwrap()).unwrap();
        assert_eq!(parsed.sha256, sidecar.sha256);
        let mut hasher = Sha256::new();
        hasher.update(std::fs::read(&bin).unwrap());
        assert_eq!(hex(&hasher.finalize()), sidecar.sha256);

        let mut dump = Vec::new();
        debug_dump(&mut dump, &instances[..3], &model).unwrap();
        let text = String::from_utf8(dump).unwrap();
        assert_eq!(text.lines().count(), 3);
        assert!(text.contains("next="));
    }

    #[test]
    fn truncated_dataset_is_rejected() {
        let model = tiny_model();
        let docs = tokenized(&model, &synthetic_docs(4, 6, 6));
        let config = PretrainConfig {
            seq_len: 32,
            dup_factor: 1,
            rng_seed: 2,
            ..PretrainConfig::default()
        };
        let instances = generate_instances(&docs, &model, &config).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let bin = dir.path().join("train.bin");
        let side = dir.path().join("train.json");
        write_dataset(&bin, &side, &instances, &config).unwrap();
        let bytes = std::fs::read(&bin).unwrap();
        std::fs::write(&bin, &bytes[..bytes.len() - 5]).unwrap();
        assert!(matches!(
            read_dataset(&bin).unwrap_err(),
            PretrainError::Format(_)
        ));
    }

    #[test]
    fn config_validation_rejects_bad_fields() {
        let bad = |f: fn(&mut PretrainConfig)| {
            let mut c = PretrainConfig::default();
            f(&mut c);
            assert!(c.validate().is_err(), "accepted {c:?}");
        };
        bad(|c| c.seq_len = 4);
        bad(|c| c.mask_prob = 0.0);
        bad(|c| c.mask_prob = 1.0);
        bad(|c| c.dup_factor = 0);
        bad(|c| c.short_seq_prob = 1.0);
        bad(|c| c.max_predictions = Some(1000));
        assert_eq!(PretrainConfig::default().effective_max_predictions(), 20);
    }
}
