//! Character n-gram language identification.
//!
//! A multinomial naive Bayes model over character 1- to 3-grams, scored on
//! ~100-character chunks whose posteriors are averaged. Averaging instead
//! of summing log-likelihoods over the whole page keeps the probability
//! meaningful on long inputs: a page that alternates Czech and English
//! paragraphs scores near the mixture ratio rather than saturating at 1.0
//! for whichever language wins overall, which is what a high-precision
//! threshold (for instance 0.99) needs to be useful.

use std::collections::HashMap;
use std::fs;
use std::io;
use std::path::Path;

use serde::{Deserialize, Serialize};

/// Minimum training text per language, in bytes.
pub const MIN_TRAIN_BYTES: usize = 100 * 1024;

const SMOOTHING: f64 = 0.5;
const CHUNK_CHARS: usize = 100;
const MODEL_VERSION: u32 = 1;

#[derive(Debug, thiserror::Error)]
pub enum LangIdError {
    #[error("invalid input: {0}")]
    InvalidInput(String),
    #[error("unsupported: {0}")]
    Unsupported(String),
    #[error("model io: {0}")]
    Io(#[from] io::Error),
    #[error("model format: {0}")]
    Format(String),
}

#[derive(Debug, Clone, PartialEq)]
pub struct LangVerdict {
    pub language: String,
    /// Mean per-chunk posterior of `language`; in `[0, 1]`.
    pub probability: f64,
}

/// Trained detector. Gram keys pack up to three scalar values of `code
/// point + 1` into 21-bit slots of a `u64`, so the n-gram order is implied
/// by the key's magnitude and lookups stay allocation-free.
#[derive(Debug, Clone)]
pub struct LangProfileModel {
    languages: Vec<String>,
    /// gram key -> per-language log probability, language-indexed.
    gram_log_probs: HashMap<u64, Vec<f64>>,
    /// Per order (index 0 = unigram), per language: log probability of a
    /// gram never seen in training.
    unseen_log_probs: [Vec<f64>; 3],
}

const SLOT_BITS: u32 = 21;

fn pack1(a: char) -> u64 {
    a as u64 + 1
}

fn pack2(a: char, b: char) -> u64 {
    (pack1(a) << SLOT_BITS) | pack1(b)
}

fn pack3(a: char, b: char, c: char) -> u64 {
    (pack1(a) << (2 * SLOT_BITS)) | (pack1(b) << SLOT_BITS) | pack1(c)
}

fn order_of(key: u64) -> usize {
    if key < 1 << SLOT_BITS {
        0
    } else if key < 1 << (2 * SLOT_BITS) {
        1
    } else {
        2
    }
}

/// Lowercases letters and collapses everything else into single spaces.
fn normalize(text: &str) -> Vec<char> {
    let mut out = Vec::with_capacity(text.len() / 2);
    for c in text.chars() {
        if c.is_alphabetic() {
            if c.is_uppercase() {
                out.extend(c.to_lowercase());
            } else {
                out.push(c);
            }
        } else if !matches!(out.last(), None | Some(' ')) {
            out.push(' ');
        }
    }
    while out.last() == Some(&' ') {
        out.pop();
    }
    out
}

fn each_gram(chars: &[char], mut f: impl FnMut(u64)) {
    for i in 0..chars.len() {
        f(pack1(chars[i]));
        if i + 1 < chars.len() {
            f(pack2(chars[i], chars[i + 1]));
        }
        if i + 2 < chars.len() {
            f(pack3(chars[i], chars[i + 1], chars[i + 2]));
        }
    }
}

impl LangProfileModel {
    /// Trains from `(language code, corpus text)` pairs.
    pub fn train(corpora: &[(String, String)]) -> Result<Self, LangIdError> {
        if corpora.len() < 2 {
            return Err(LangIdError::Unsupported(format!(
                "need at least 2 language corpora, got {}",
                corpora.len()
            )));
        }
        let mut pairs: Vec<&(String, String)> = corpora.iter().collect();
        pairs.sort_by(|a, b| a.0.cmp(&b.0));
        for (code, text) in &pairs {
            if text.len() < MIN_TRAIN_BYTES {
                return Err(LangIdError::InvalidInput(format!(
                    "corpus for {code:?} has {} bytes, need at least {MIN_TRAIN_BYTES}",
                    text.len()
                )));
            }
        }
        let languages: Vec<String> = pairs.iter().map(|(c, _)| c.clone()).collect();
        if languages.windows(2).any(|w| w[0] == w[1]) {
            return Err(LangIdError::InvalidInput("duplicate language code".into()));
        }

        let n_langs = languages.len();
        let mut counts: HashMap<u64, Vec<u64>> = HashMap::new();
        let mut totals = [vec![0u64; n_langs], vec![0u64; n_langs], vec![0u64; n_langs]];
        for (li, (_, text)) in pairs.iter().enumerate() {
            let chars = normalize(text);
            each_gram(&chars, |key| {
                let order = order_of(key);
                totals[order][li] += 1;
                counts.entry(key).or_insert_with(|| vec![0; n_langs])[li] += 1;
            });
        }

        // Smoothed vocabulary sizes: distinct grams of each order across
        // all languages, plus one slot for anything unseen.
        let mut vocab = [0u64; 3];
        for key in counts.keys() {
            vocab[order_of(*key)] += 1;
        }

        let denom = |order: usize, li: usize| {
            totals[order][li] as f64 + SMOOTHING * (vocab[order] as f64 + 1.0)
        };
        let gram_log_probs = counts
            .into_iter()
            .map(|(key, per_lang)| {
                let order = order_of(key);
                let logs = per_lang
                    .iter()
                    .enumerate()
                    .map(|(li, &c)| ((c as f64 + SMOOTHING) / denom(order, li)).ln())
                    .collect();
                (key, logs)
            })
            .collect();
        let unseen_log_probs = [0, 1, 2].map(|order| {
            (0..n_langs).map(|li| (SMOOTHING / denom(order, li)).ln()).collect()
        });

        Ok(LangProfileModel { languages, gram_log_probs, unseen_log_probs })
    }

    pub fn languages(&self) -> &[String] {
        &self.languages
    }

    fn chunk_posterior(&self, chunk: &[char], scores: &mut [f64]) {
        for s in scores.iter_mut() {
            *s = 0.0;
        }
        each_gram(chunk, |key| match self.gram_log_probs.get(&key) {
            Some(logs) => {
                for (s, l) in scores.iter_mut().zip(logs) {
                    *s += l;
                }
            }
            None => {
                let unseen = &self.unseen_log_probs[order_of(key)];
                for (s, l) in scores.iter_mut().zip(unseen) {
                    *s += l;
                }
            }
        });
        let max = scores.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let mut sum = 0.0;
        for s in scores.iter_mut() {
            *s = (*s - max).exp();
            sum += *s;
        }
        for s in scores.iter_mut() {
            *s /= sum;
        }
    }

    /// Identifies the dominant language with a mean per-chunk posterior.
    pub fn detect(&self, text: &str) -> Result<LangVerdict, LangIdError> {
        let chars = normalize(text);
        if chars.is_empty() {
            return Err(LangIdError::InvalidInput(
                "no alphabetic content to identify".into(),
            ));
        }
        let n_langs = self.languages.len();
        let mut acc = vec![0.0f64; n_langs];
        let mut chunk_scores = vec![0.0f64; n_langs];
        let mut chunks = 0u64;
        for chunk in chars.chunks(CHUNK_CHARS) {
            self.chunk_posterior(chunk, &mut chunk_scores);
            for (a, s) in acc.iter_mut().zip(&chunk_scores) {
                *a += s;
            }
            chunks += 1;
        }
        for a in acc.iter_mut() {
            *a /= chunks as f64;
        }
        // Ties broken toward the lexicographically first code (languages
        // are stored sorted), keeping the verdict deterministic.
        let (best, prob) = acc
            .iter()
            .enumerate()
            .max_by(|a, b| a.1.partial_cmp(b.1).unwrap().then(b.0.cmp(&a.0)))
            .expect("at least two languages");
        Ok(LangVerdict { language: self.languages[best].clone(), probability: *prob })
    }

    pub fn to_json(&self) -> String {
        let mut grams: Vec<(String, &Vec<f64>)> = self
            .gram_log_probs
            .iter()
            .map(|(k, v)| (format!("{k:x}"), v))
            .collect();
        grams.sort_by(|a, b| a.0.cmp(&b.0));
        let doc = ModelDoc {
            version: MODEL_VERSION,
            languages: self.languages.clone(),
            unseen_log_probs: self.unseen_log_probs.to_vec(),
            grams: grams.into_iter().map(|(k, v)| (k, v.clone())).collect(),
        };
        serde_json::to_string(&doc).expect("model serializes")
    }

    pub fn from_json(json: &str) -> Result<Self, LangIdError> {
        let doc: ModelDoc =
            serde_json::from_str(json).map_err(|e| LangIdError::Format(e.to_string()))?;
        if doc.version != MODEL_VERSION {
            return Err(LangIdError::Format(format!(
                "unsupported model version {}",
                doc.version
            )));
        }
        if doc.unseen_log_probs.len() != 3 {
            return Err(LangIdError::Format("expected 3 unseen-probability rows".into()));
        }
        let n = doc.languages.len();
        let mut gram_log_probs = HashMap::with_capacity(doc.grams.len());
        for (key, logs) in doc.grams {
            let key = u64::from_str_radix(&key, 16)
                .map_err(|e| LangIdError::Format(format!("bad gram key {key:?}: {e}")))?;
            if logs.len() != n {
                return Err(LangIdError::Format("gram row arity mismatch".into()));
            }
            gram_log_probs.insert(key, logs);
        }
        let mut unseen = doc.unseen_log_probs.into_iter();
        let unseen_log_probs = [
            unseen.next().unwrap(),
            unseen.next().unwrap(),
            unseen.next().unwrap(),
        ];
        Ok(LangProfileModel { languages: doc.languages, gram_log_probs, unseen_log_probs })
    }

    pub fn save(&self, path: &Path) -> Result<(), LangIdError> {
        fs::write(path, self.to_json())?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self, LangIdError> {
        Self::from_json(&fs::read_to_string(path)?)
    }

    /// Trains from a directory of `<code>.txt` corpora.
    pub fn train_from_dir(dir: &Path) -> Result<Self, LangIdError> {
        let mut corpora = Vec::new();
        let mut entries: Vec<_> =
            fs::read_dir(dir)?.collect::<Result<Vec<_>, _>>()?;
        entries.sort_by_key(|e| e.path());
        for entry in entries {
            let path = entry.path();
            if path.extension().is_some_and(|e| e == "txt") {
                let code = path
                    .file_stem()
                    .and_then(|s| s.to_str())
                    .ok_or_else(|| LangIdError::Format("non-utf8 corpus name".into()))?
                    .to_string();
                corpora.push((code, fs::read_to_string(&path)?));
            }
        }
        Self::train(&corpora)
    }
}

#[derive(Serialize, Deserialize)]
struct ModelDoc {
    version: u32,
    languages: Vec<String>,
    unseen_log_probs: Vec<Vec<f64>>,
    grams: Vec<(String, Vec<f64>)>,
}

#[cfg(test)]
mod tests {
    use super::*;

    const CS: &[&str] = &[
        "Ahoj, jak se máš? Dnes je krásný den a slunce svítí.",
        "Včera jsme byli v kině na novém českém filmu.",
        "Praha je hlavní město České republiky a leží na Vltavě.",
        "Koupil jsem si nové kolo a pojedu na výlet do hor.",
        "Děti si hrají na zahradě a pes štěká na souseda.",
        "V létě jezdíme k babičce na chalupu u lesa.",
        "Přečetl jsem zajímavou knihu o dějinách střední Evropy.",
        "Na oběd máme knedlíky se zelím a vepřovou pečeni.",
        "Zítra ráno musím vstávat v šest hodin na vlak.",
        "Učím se hrát na klavír a zpívám ve sboru.",
    ];

    const EN: &[&str] = &[
        "Hello, how are you today? The sun is shining brightly.",
        "Yesterday we went to the cinema to see a new film.",
        "London is the capital of England and lies on the Thames.",
        "I bought a new bicycle and will ride it into the hills.",
        "The children are playing in the garden with the dog.",
        "In the summer we visit our grandmother in the countryside.",
        "I read an interesting book about the history of Europe.",
        "For lunch we are having soup and roasted vegetables.",
        "Tomorrow morning I must get up at six for the train.",
        "I am learning to play the piano and sing in a choir.",
    ];

    fn tile(sentences: &[&str], min_bytes: usize) -> String {
        let mut out = String::new();
        let mut i = 0;
        while out.len() < min_bytes {
            out.push_str(sentences[i % sentences.len()]);
            out.push(' ');
            i += 1;
        }
        out
    }

    fn model() -> LangProfileModel {
        LangProfileModel::train(&[
            ("ces".to_string(), tile(CS, MIN_TRAIN_BYTES)),
            ("eng".to_string(), tile(EN, MIN_TRAIN_BYTES)),
        ])
        .unwrap()
    }

    #[test]
    fn rejects_single_language() {
        let err =
            LangProfileModel::train(&[("ces".into(), tile(CS, MIN_TRAIN_BYTES))]).unwrap_err();
        assert!(matches!(err, LangIdError::Unsupported(_)));
    }

    #[test]
    fn rejects_undersized_corpus() {
        let err = LangProfileModel::train(&[
            ("ces".into(), tile(CS, MIN_TRAIN_BYTES)),
            ("eng".into(), "too small".into()),
        ])
        .unwrap_err();
        assert!(matches!(err, LangIdError::InvalidInput(_)));
    }

    #[test]
    fn identifies_held_out_czech_with_high_confidence() {
        let m = model();
        let text = "Moje sestra pracuje jako lékařka v nemocnici v Brně. \
                    Každé ráno snídá rohlík s máslem a pije černou kávu. \
                    O víkendu pojedeme vlakem na hory a budeme lyžovat.";
        let v = m.detect(text).unwrap();
        assert_eq!(v.language, "ces");
        assert!(v.probability >= 0.99, "probability {}", v.probability);
    }

    #[test]
    fn identifies_english_side() {
        let m = model();
        let v = m
            .detect("My sister works as a doctor in a large hospital. Every morning she eats bread with butter and drinks black coffee before work.")
            .unwrap();
        assert_eq!(v.language, "eng");
        assert!(v.probability >= 0.99, "probability {}", v.probability);
    }

    #[test]
    fn mixed_text_scores_below_high_threshold() {
        let m = model();
        let mut mixed = String::new();
        for (c, e) in CS.iter().zip(EN) {
            mixed.push_str(c);
            mixed.push(' ');
            mixed.push_str(e);
            mixed.push(' ');
        }
        let v = m.detect(&mixed).unwrap();
        assert!(
            v.probability < 0.99,
            "mixed text should not be confidently single-language, got {} for {}",
            v.probability,
            v.language
        );
    }

    #[test]
    fn empty_or_symbolic_text_is_invalid() {
        let m = model();
        assert!(matches!(m.detect(""), Err(LangIdError::InvalidInput(_))));
        assert!(matches!(m.detect("123 456 !!!"), Err(LangIdError::InvalidInput(_))));
    }

    #[test]
    fn detection_is_deterministic() {
        let m = model();
        let a = m.detect("Dnes večer budeme vařit večeři pro celou rodinu.").unwrap();
        let b = m.detect("Dnes večer budeme vařit večeři pro celou rodinu.").unwrap();
        assert_eq!(a.language, b.language);
        assert_eq!(a.probability.to_bits(), b.probability.to_bits());
    }

    #[test]
    fn json_round_trip_preserves_verdicts() {
        let m = model();
        let restored = LangProfileModel::from_json(&m.to_json()).unwrap();
        let text = "Vlak přijede na nádraží přesně v poledne a my nastoupíme.";
        let a = m.detect(text).unwrap();
        let b = restored.detect(text).unwrap();
        assert_eq!(a.language, b.language);
        assert_eq!(a.probability.to_bits(), b.probability.to_bits());
        // Serialization itself is canonical.
        assert_eq!(m.to_json(), restored.to_json());
    }

    #[test]
    fn normalization_strips_non_letters() {
        assert_eq!(normalize("Ahoj,  světe! 123"), "ahoj světe".chars().collect::<Vec<_>>());
        assert_eq!(normalize("  !!  "), Vec::<char>::new());
    }
}
