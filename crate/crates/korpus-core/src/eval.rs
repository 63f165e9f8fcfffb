//! Classification evaluation: ratio thresholding of per-label scores,
//! sample-averaged and per-class F1, fold planning for cross-validation,
//! and mean/std report aggregation.
//!
//! All operations are pure and deterministic; fold shuffles derive from
//! an explicit seed.

use std::collections::{BTreeMap, BTreeSet};
use std::io::BufRead;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::rng::{derive_rng, scope};

#[derive(Debug, thiserror::Error)]
pub enum EvalError {
    #[error("invalid input: {0}")]
    InvalidInput(String),
    #[error("i/o: {0}")]
    Io(#[from] std::io::Error),
    #[error("format: {0}")]
    Format(String),
}

/// Gold or predicted label indices for one sample.
pub type LabelSet = BTreeSet<usize>;

/// Per-label scores for one sample; every value lies in the open
/// interval (0, 1), so a maximum always exists and is positive.
#[derive(Debug, Clone, PartialEq)]
pub struct LabelScores(Vec<f64>);

impl LabelScores {
    pub fn new(values: Vec<f64>) -> Result<Self, EvalError> {
        if values.is_empty() {
            return Err(EvalError::InvalidInput("empty score vector".into()));
        }
        for (i, &v) in values.iter().enumerate() {
            if !(v > 0.0 && v < 1.0) {
                return Err(EvalError::InvalidInput(format!(
                    "score {v} at index {i} outside (0, 1)"
                )));
            }
        }
        Ok(LabelScores(values))
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }
}

/// Labels whose score reaches half of the sample's maximum score. Never
/// empty: the argmax ratio is 1.
pub fn threshold_predictions(scores: &LabelScores) -> LabelSet {
    let max = scores.as_slice().iter().cloned().fold(f64::MIN, f64::max);
    scores
        .as_slice()
        .iter()
        .enumerate()
        .filter(|(_, &s)| s / max >= 0.5)
        .map(|(i, _)| i)
        .collect()
}

/// Index of the highest score, ties to the lowest index.
pub fn argmax_class(scores: &LabelScores) -> usize {
    let mut best = 0;
    for (i, &s) in scores.as_slice().iter().enumerate() {
        if s > scores.as_slice()[best] {
            best = i;
        }
    }
    best
}

/// F1 between two label sets: 2|G∩P| / (|G|+|P|). Both sets empty is a
/// perfect (vacuous) match; exactly one empty is a total miss.
pub fn sample_f1(gold: &LabelSet, pred: &LabelSet) -> f64 {
    if gold.is_empty() && pred.is_empty() {
        return 1.0;
    }
    if gold.is_empty() || pred.is_empty() {
        return 0.0;
    }
    let hit = gold.intersection(pred).count();
    2.0 * hit as f64 / (gold.len() + pred.len()) as f64
}

pub fn sample_averaged_f1(golds: &[LabelSet], preds: &[LabelSet]) -> Result<f64, EvalError> {
    if golds.len() != preds.len() {
        return Err(EvalError::InvalidInput(format!(
            "{} gold sets vs {} predictions",
            golds.len(),
            preds.len()
        )));
    }
    if golds.is_empty() {
        return Err(EvalError::InvalidInput("no samples".into()));
    }
    let total: f64 = golds.iter().zip(preds).map(|(g, p)| sample_f1(g, p)).sum();
    Ok(total / golds.len() as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Averaging {
    Macro,
    Micro,
    Weighted,
}

impl std::str::FromStr for Averaging {
    type Err = EvalError;
    fn from_str(s: &str) -> Result<Self, EvalError> {
        match s {
            "macro" => Ok(Averaging::Macro),
            "micro" => Ok(Averaging::Micro),
            "weighted" => Ok(Averaging::Weighted),
            other => Err(EvalError::InvalidInput(format!(
                "unknown averaging {other:?} (macro, micro, weighted)"
            ))),
        }
    }
}

/// Single-label multiclass F1 under the chosen averaging. The class
/// universe is the union of classes seen in gold or predictions; a class
/// predicted but never gold scores zero and carries zero weight.
pub fn classification_f1(
    golds: &[usize],
    preds: &[usize],
    averaging: Averaging,
) -> Result<f64, EvalError> {
    if golds.len() != preds.len() {
        return Err(EvalError::InvalidInput(format!(
            "{} gold classes vs {} predictions",
            golds.len(),
            preds.len()
        )));
    }
    if golds.is_empty() {
        return Err(EvalError::InvalidInput("no samples".into()));
    }
    #[derive(Default)]
    struct Tally {
        tp: u64,
        fp: u64,
        fn_: u64,
    }
    let mut per_class: BTreeMap<usize, Tally> = BTreeMap::new();
    for (&g, &p) in golds.iter().zip(preds) {
        if g == p {
            per_class.entry(g).or_default().tp += 1;
        } else {
            per_class.entry(p).or_default().fp += 1;
            per_class.entry(g).or_default().fn_ += 1;
        }
    }
    let f1 = |t: &Tally| -> f64 {
        let denom = 2 * t.tp + t.fp + t.fn_;
        if denom == 0 { 0.0 } else { 2.0 * t.tp as f64 / denom as f64 }
    };
    Ok(match averaging {
        Averaging::Macro => {
            per_class.values().map(f1).sum::<f64>() / per_class.len() as f64
        }
        Averaging::Micro => {
            let (tp, fp, fn_) = per_class.values().fold((0, 0, 0), |acc, t| {
                (acc.0 + t.tp, acc.1 + t.fp, acc.2 + t.fn_)
            });
            f1(&Tally { tp, fp, fn_ })
        }
        Averaging::Weighted => {
            let n = golds.len() as f64;
            per_class
                .values()
                .map(|t| (t.tp + t.fn_) as f64 / n * f1(t))
                .sum()
        }
    })
}

/// Assignment of every sample to one of `k` folds.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FoldPlan {
    pub k: usize,
    pub seed: u64,
    pub stratified: bool,
    /// Sample index → fold id.
    pub assignments: Vec<usize>,
}

impl FoldPlan {
    pub fn fold_indices(&self, fold: usize) -> Vec<usize> {
        (0..self.assignments.len())
            .filter(|&i| self.assignments[i] == fold)
            .collect()
    }

    /// Partition sanity: every fold id valid, fold sizes differing by at
    /// most one.
    pub fn check(&self) -> Result<(), EvalError> {
        if self.k < 2 || self.assignments.len() < self.k {
            return Err(EvalError::InvalidInput(format!(
                "{} samples in {} folds",
                self.assignments.len(),
                self.k
            )));
        }
        let mut sizes = vec![0usize; self.k];
        for &f in &self.assignments {
            if f >= self.k {
                return Err(EvalError::InvalidInput(format!("fold id {f} >= k {}", self.k)));
            }
            sizes[f] += 1;
        }
        let (min, max) = (sizes.iter().min().unwrap(), sizes.iter().max().unwrap());
        if max - min > 1 {
            return Err(EvalError::InvalidInput(format!(
                "fold sizes range from {min} to {max}"
            )));
        }
        Ok(())
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("plain struct serializes")
    }

    pub fn from_json(text: &str) -> Result<Self, EvalError> {
        let plan: FoldPlan =
            serde_json::from_str(text).map_err(|e| EvalError::Format(e.to_string()))?;
        plan.check()?;
        Ok(plan)
    }
}

fn check_k(n: usize, k: usize) -> Result<(), EvalError> {
    if k < 2 {
        return Err(EvalError::InvalidInput(format!("k must be at least 2, got {k}")));
    }
    if k > n {
        return Err(EvalError::InvalidInput(format!("k {k} exceeds sample count {n}")));
    }
    Ok(())
}

/// Within each class (ascending class id), samples are shuffled and then
/// dealt round-robin; the dealing position carries over between classes
/// so total fold sizes also stay within one of each other.
pub fn stratified_kfold(class_of: &[usize], k: usize, seed: u64) -> Result<FoldPlan, EvalError> {
    check_k(class_of.len(), k)?;
    let mut by_class: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
    for (i, &c) in class_of.iter().enumerate() {
        by_class.entry(c).or_default().push(i);
    }
    let mut assignments = vec![0usize; class_of.len()];
    let mut offset = 0usize;
    for (&c, members) in &by_class {
        let mut members = members.clone();
        let mut rng = derive_rng(seed, &[scope::FOLD_SPLIT, c as u64]);
        members.shuffle(&mut rng);
        for (j, idx) in members.iter().enumerate() {
            assignments[*idx] = (offset + j) % k;
        }
        offset = (offset + members.len()) % k;
    }
    Ok(FoldPlan { k, seed, stratified: true, assignments })
}

/// Uniform shuffle, then contiguous blocks; the first `n mod k` folds
/// take the extra sample.
pub fn random_kfold(n: usize, k: usize, seed: u64) -> Result<FoldPlan, EvalError> {
    check_k(n, k)?;
    let mut order: Vec<usize> = (0..n).collect();
    let mut rng = derive_rng(seed, &[scope::FOLD_SPLIT]);
    order.shuffle(&mut rng);
    let base = n / k;
    let extra = n % k;
    let mut assignments = vec![0usize; n];
    let mut at = 0usize;
    for fold in 0..k {
        let size = base + usize::from(fold < extra);
        for &idx in &order[at..at + size] {
            assignments[idx] = fold;
        }
        at += size;
    }
    Ok(FoldPlan { k, seed, stratified: false, assignments })
}

/// Per-fold metric values with their mean and sample standard deviation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub per_fold: Vec<f64>,
    pub mean: f64,
    pub std: f64,
}

/// Mean and sample (n−1) standard deviation over fold metrics.
pub fn aggregate_cv(per_fold: &[f64]) -> Result<MetricReport, EvalError> {
    if per_fold.len() < 2 {
        return Err(EvalError::InvalidInput(format!(
            "need at least 2 fold values, got {}",
            per_fold.len()
        )));
    }
    let n = per_fold.len() as f64;
    let mean = per_fold.iter().sum::<f64>() / n;
    let var = per_fold.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
    Ok(MetricReport { per_fold: per_fold.to_vec(), mean, std: var.sqrt() })
}

impl MetricReport {
    /// Headline value in percent: "85.36 (±0.30)".
    pub fn summary(&self) -> String {
        format!("{:.2} (±{:.2})", self.mean * 100.0, self.std * 100.0)
    }

    pub fn render(&self) -> String {
        let mut out = String::new();
        for (i, v) in self.per_fold.iter().enumerate() {
            out.push_str(&format!("fold {i:>2}: {:.4}\n", v));
        }
        out.push_str(&format!("mean (±std): {}\n", self.summary()));
        out
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("plain struct serializes")
    }
}

/// Mean gold-label count per sample.
pub fn label_cardinality(golds: &[LabelSet]) -> Result<f64, EvalError> {
    if golds.is_empty() {
        return Err(EvalError::InvalidInput("no samples".into()));
    }
    Ok(golds.iter().map(|g| g.len() as f64).sum::<f64>() / golds.len() as f64)
}

/// One row of a prediction file.
#[derive(Debug, Clone, PartialEq)]
pub struct PredictionRecord {
    pub id: String,
    pub gold: LabelSet,
    pub scores: LabelScores,
}

/// Parses the prediction interchange format: one sample per line,
/// `id TAB comma-separated gold indices TAB comma-separated scores`.
/// Every line must carry the same number of scores; gold may be empty.
pub fn parse_predictions<R: BufRead>(reader: R) -> Result<Vec<PredictionRecord>, EvalError> {
    let mut records = Vec::new();
    let mut width: Option<usize> = None;
    for (lineno, line) in reader.lines().enumerate() {
        let line = line?;
        if line.is_empty() {
            continue;
        }
        let at = |m: String| EvalError::Format(format!("line {}: {m}", lineno + 1));
        let mut parts = line.splitn(3, '\t');
        let id = parts.next().unwrap_or_default();
        let gold_field = parts
            .next()
            .ok_or_else(|| at("missing gold-label field".into()))?;
        let score_field = parts
            .next()
            .ok_or_else(|| at("missing score field".into()))?;
        if id.is_empty() {
            return Err(at("empty sample id".into()));
        }
        let mut scores = Vec::new();
        for s in score_field.split(',') {
            scores.push(
                s.trim()
                    .parse::<f64>()
                    .map_err(|e| at(format!("bad score {s:?}: {e}")))?,
            );
        }
        let scores = LabelScores::new(scores)
            .map_err(|e| at(e.to_string()))?;
        if let Some(w) = width {
            if w != scores.len() {
                return Err(at(format!(
                    "{} scores where earlier lines had {w}",
                    scores.len()
                )));
            }
        } else {
            width = Some(scores.len());
        }
        let mut gold = LabelSet::new();
        if !gold_field.is_empty() {
            for g in gold_field.split(',') {
                let idx = g
                    .trim()
                    .parse::<usize>()
                    .map_err(|e| at(format!("bad gold label {g:?}: {e}")))?;
                if idx >= scores.len() {
                    return Err(at(format!(
                        "gold label {idx} outside the {}-label space",
                        scores.len()
                    )));
                }
                gold.insert(idx);
            }
        }
        records.push(PredictionRecord { id: id.to_string(), gold, scores });
    }
    Ok(records)
}

fn fold_slices<'a>(
    records: &'a [PredictionRecord],
    plan: &FoldPlan,
) -> Result<Vec<Vec<&'a PredictionRecord>>, EvalError> {
    if plan.assignments.len() != records.len() {
        return Err(EvalError::InvalidInput(format!(
            "fold plan covers {} samples, predictions have {}",
            plan.assignments.len(),
            records.len()
        )));
    }
    plan.check()?;
    let mut folds: Vec<Vec<&PredictionRecord>> = vec![Vec::new(); plan.k];
    for (r, &f) in records.iter().zip(&plan.assignments) {
        folds[f].push(r);
    }
    Ok(folds)
}

/// Per-fold sample-averaged F1 of thresholded predictions, aggregated.
pub fn evaluate_multilabel(
    records: &[PredictionRecord],
    plan: &FoldPlan,
) -> Result<MetricReport, EvalError> {
    let mut per_fold = Vec::with_capacity(plan.k);
    for fold in fold_slices(records, plan)? {
        let golds: Vec<LabelSet> = fold.iter().map(|r| r.gold.clone()).collect();
        let preds: Vec<LabelSet> =
            fold.iter().map(|r| threshold_predictions(&r.scores)).collect();
        per_fold.push(sample_averaged_f1(&golds, &preds)?);
    }
    aggregate_cv(&per_fold)
}

/// Per-fold argmax F1 for single-label data (every gold set must be a
/// singleton), aggregated.
pub fn evaluate_singlelabel(
    records: &[PredictionRecord],
    plan: &FoldPlan,
    averaging: Averaging,
) -> Result<MetricReport, EvalError> {
    let mut per_fold = Vec::with_capacity(plan.k);
    for fold in fold_slices(records, plan)? {
        let mut golds = Vec::with_capacity(fold.len());
        let mut preds = Vec::with_capacity(fold.len());
        for r in fold {
            if r.gold.len() != 1 {
                return Err(EvalError::InvalidInput(format!(
                    "sample {} has {} gold labels; single-label evaluation needs exactly 1",
                    r.id,
                    r.gold.len()
                )));
            }
            golds.push(*r.gold.iter().next().unwrap());
            preds.push(argmax_class(&r.scores));
        }
        per_fold.push(classification_f1(&golds, &preds, averaging)?);
    }
    aggregate_cv(&per_fold)
}
