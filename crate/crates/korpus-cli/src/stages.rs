//! Stage execution against a run directory.
//!
//! Every stage reads the previous stage's artifacts from the run
//! directory, writes its own, and finishes by recording a manifest with
//! the config hash it ran under. A stage whose manifest already carries
//! the current hash is skipped, which is what makes reruns no-ops.
//!
//! Counters are persisted per stage (`<stage>/stats.json`) and merged on
//! demand, so a forced rerun replaces its own figures instead of double
//! counting.

use std::collections::BTreeSet;
use std::fs::{self, File};
use std::io::{self, BufReader, BufWriter, Read, Write};
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Arc;

use anyhow::{anyhow, Context};
use korpus_core::bpe::{train_bpe, BpeModel, TrainerParams};
use korpus_core::clean::{load_wordlist, read_clean_docs, write_clean_line, PageCleaner};
use korpus_core::config::{
    stage_is_complete, EvalMode, PipelineConfig, Stage, StageManifest,
};
use korpus_core::dedup::{dedup_corpus, DedupStore};
use korpus_core::eval::{
    parse_predictions, random_kfold, stratified_kfold, EvalError, FoldPlan, MetricReport,
    PredictionRecord,
};
use korpus_core::ingest::{
    fetch_archive, ArchiveSource, IndexBackend, IndexError, RetryPolicy, SpoolRecord,
    WetPointer, WetReader,
};
use korpus_core::langid::LangProfileModel;
use korpus_core::pretrain::{instances_from_documents, write_dataset};
use korpus_core::stats::{RunStats, StatsSink};
use rayon::prelude::*;
use sha2::{Digest, Sha256};

/// Failures split by exit code: usage and configuration problems exit 2,
/// everything that went wrong while working exits 1.
#[derive(Debug)]
pub enum CliError {
    Usage(String),
    Runtime(anyhow::Error),
}

impl From<anyhow::Error> for CliError {
    fn from(e: anyhow::Error) -> Self {
        CliError::Runtime(e)
    }
}

impl From<io::Error> for CliError {
    fn from(e: io::Error) -> Self {
        CliError::Runtime(e.into())
    }
}

pub fn usage(msg: impl Into<String>) -> CliError {
    CliError::Usage(msg.into())
}

/// Config file problems are the caller's to fix, whatever their flavour.
pub fn load_config(path: &Path) -> Result<PipelineConfig, CliError> {
    PipelineConfig::load(path).map_err(|e| usage(format!("{}: {e}", path.display())))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StageOutcome {
    Ran,
    UpToDate,
}

pub fn run_stage(
    config: &PipelineConfig,
    run_dir: &Path,
    stage: Stage,
    force: bool,
) -> Result<StageOutcome, CliError> {
    if !force {
        let complete = stage_is_complete(run_dir, config, stage)
            .map_err(|e| CliError::Runtime(anyhow!(e)))?;
        if complete {
            return Ok(StageOutcome::UpToDate);
        }
    }
    let artifacts = match stage {
        Stage::Ingest => ingest_stage(config, run_dir)?,
        Stage::Clean => clean_stage(config, run_dir)?,
        Stage::Dedup => dedup_stage(config, run_dir)?,
        Stage::Tokenize => tokenize_stage(config, run_dir)?,
        Stage::Prep => prep_stage(config, run_dir)?,
        Stage::Eval => eval_stage(config, run_dir)?,
    };
    StageManifest::new(config, stage, artifacts)
        .write(run_dir)
        .context("writing stage manifest")?;
    let merged = merged_stats(run_dir)?;
    write_json(&run_dir.join("stats.json"), &merged)?;
    Ok(StageOutcome::Ran)
}

fn stage_dir(run_dir: &Path, stage: Stage) -> Result<PathBuf, CliError> {
    let dir = run_dir.join(stage.name());
    fs::create_dir_all(&dir).with_context(|| format!("creating {}", dir.display()))?;
    Ok(dir)
}

fn write_json<T: serde::Serialize>(path: &Path, value: &T) -> Result<(), CliError> {
    let mut text = serde_json::to_string_pretty(value)
        .map_err(|e| CliError::Runtime(e.into()))?;
    text.push('\n');
    fs::write(path, text).with_context(|| format!("writing {}", path.display()))?;
    Ok(())
}

fn require_artifact(run_dir: &Path, rel: &str, produced_by: Stage) -> Result<PathBuf, CliError> {
    let path = run_dir.join(rel);
    if !path.exists() {
        return Err(CliError::Runtime(anyhow!(
            "{} is missing; run the {} stage first",
            path.display(),
            produced_by.name()
        )));
    }
    Ok(path)
}

// ---------------------------------------------------------------- stats --

fn fragment_path(run_dir: &Path, stage: Stage) -> PathBuf {
    run_dir.join(stage.name()).join("stats.json")
}

fn read_fragment(run_dir: &Path, stage: Stage) -> Result<Option<RunStats>, CliError> {
    let path = fragment_path(run_dir, stage);
    let text = match fs::read_to_string(&path) {
        Ok(t) => t,
        Err(e) if e.kind() == io::ErrorKind::NotFound => return Ok(None),
        Err(e) => return Err(e.into()),
    };
    let stats = serde_json::from_str(&text)
        .with_context(|| format!("parsing {}", path.display()))?;
    Ok(Some(stats))
}

/// Merge of the per-stage counter fragments. Dedup re-measures the corpus
/// that survives it, so its kept-page, kept-line and retained-byte figures
/// replace the clean stage's instead of adding to them; its drop audits
/// still accumulate.
pub fn merged_stats(run_dir: &Path) -> Result<RunStats, CliError> {
    let mut total = RunStats::default();
    for stage in [Stage::Ingest, Stage::Clean, Stage::Dedup] {
        let Some(mut fragment) = read_fragment(run_dir, stage)? else { continue };
        if stage == Stage::Dedup {
            let survivors =
                (fragment.pages_kept, fragment.lines_kept, fragment.retained_text_bytes);
            fragment.pages_kept = 0;
            fragment.lines_kept = 0;
            fragment.retained_text_bytes = 0;
            total.absorb(&fragment);
            (total.pages_kept, total.lines_kept, total.retained_text_bytes) = survivors;
        } else {
            total.absorb(&fragment);
        }
    }
    total.finalize();
    Ok(total)
}

// --------------------------------------------------------------- ingest --

struct CountingReader<R> {
    inner: R,
    count: Arc<AtomicU64>,
}

impl<R: Read> Read for CountingReader<R> {
    fn read(&mut self, buf: &mut [u8]) -> io::Result<usize> {
        let n = self.inner.read(buf)?;
        self.count.fetch_add(n as u64, Ordering::Relaxed);
        Ok(n)
    }
}

/// Remote archives land in the cache directory once and are replayed from
/// there; the cache key is the URL itself.
fn open_cached(url: &str, cache_dir: &Path, policy: &RetryPolicy) -> Result<File, CliError> {
    let key = Sha256::digest(url.as_bytes());
    let mut name = String::with_capacity(64);
    for b in key {
        name.push_str(&format!("{b:02x}"));
    }
    let path = cache_dir.join(name);
    if !path.exists() {
        fs::create_dir_all(cache_dir)?;
        let tmp = path.with_extension("part");
        let mut reader = fetch_archive(&ArchiveSource::Remote(url.to_string()), policy)
            .with_context(|| format!("fetching {url}"))?;
        let mut out = BufWriter::new(File::create(&tmp)?);
        io::copy(&mut reader, &mut out).with_context(|| format!("caching {url}"))?;
        out.flush()?;
        fs::rename(&tmp, &path)?;
    }
    Ok(File::open(&path)?)
}

fn ingest_stage(config: &PipelineConfig, run_dir: &Path) -> Result<Vec<String>, CliError> {
    let section = &config.ingest;
    if section.index.trim().is_empty() {
        return Err(usage("ingest.index is not set"));
    }
    if section.archive_base.trim().is_empty() {
        return Err(usage("ingest.archive_base is not set"));
    }
    let remote_index = section.index.starts_with("http://") || section.index.starts_with("https://");
    let backend: Box<dyn IndexBackend> = if remote_index {
        Box::new(korpus_core::ingest::CdxApiIndex::new(
            section.index.clone(),
            section.url_pattern.clone(),
        ))
    } else {
        Box::new(korpus_core::ingest::LocalIndexFile::new(
            section.crawl_id.clone(),
            &section.index,
        ))
    };

    // One fetch per archive, in the order the index first names them.
    let mut seen = BTreeSet::new();
    let mut archives: Vec<WetPointer> = Vec::new();
    let pointers = backend
        .query(&section.crawl_id, &section.language)
        .map_err(map_index_error)?;
    for pointer in pointers {
        let pointer = pointer.map_err(map_index_error)?;
        if seen.insert(pointer.archive_path.clone()) {
            archives.push(pointer);
        }
    }

    let dir = stage_dir(run_dir, Stage::Ingest)?;
    let spool_path = dir.join("records.jsonl");
    let mut spool = BufWriter::new(File::create(&spool_path)?);
    let policy = RetryPolicy::default();
    let cache_dir = std::env::var_os("KORPUS_CACHE_DIR").map(PathBuf::from);

    let downloaded = Arc::new(AtomicU64::new(0));
    let mut parsed = 0u64;
    'archives: for pointer in &archives {
        let source = ArchiveSource::resolve(pointer, &section.archive_base);
        let raw: Box<dyn Read> = match (&source, &cache_dir) {
            (ArchiveSource::Remote(url), Some(dir)) => {
                Box::new(open_cached(url, dir, &policy)?)
            }
            _ => fetch_archive(&source, &policy)
                .with_context(|| format!("fetching {}", source.describe()))?,
        };
        let counted = CountingReader { inner: raw, count: downloaded.clone() };
        let decoded: Box<dyn Read> = if pointer.archive_path.ends_with(".gz") {
            Box::new(flate2::read::GzDecoder::new(counted))
        } else {
            Box::new(counted)
        };
        let reader = WetReader::new(BufReader::new(decoded));
        for record in reader {
            let record = record
                .with_context(|| format!("parsing {}", pointer.archive_path))?;
            korpus_core::ingest::write_spool_line(&mut spool, &SpoolRecord::from_wet(&record))?;
            parsed += 1;
            if section.record_limit > 0 && parsed >= section.record_limit {
                break 'archives;
            }
        }
    }
    spool.flush()?;

    let mut stats = RunStats::default();
    stats.bytes_downloaded = downloaded.load(Ordering::Relaxed);
    stats.records_parsed = parsed;
    stats.finalize();
    write_json(&fragment_path(run_dir, Stage::Ingest), &stats)?;
    Ok(vec!["ingest/records.jsonl".into(), "ingest/stats.json".into()])
}

fn map_index_error(e: IndexError) -> CliError {
    match e {
        IndexError::Unsupported { .. } | IndexError::BadCrawlId(_) => usage(e.to_string()),
        other => CliError::Runtime(other.into()),
    }
}

// ---------------------------------------------------------------- clean --

fn build_cleaner(config: &PipelineConfig, run_dir: &Path) -> Result<(PageCleaner, Vec<String>), CliError> {
    let section = &config.clean;
    let offensive = match &section.offensive_words {
        Some(path) => load_wordlist(path)
            .with_context(|| format!("loading wordlist {}", path.display()))?,
        None => Default::default(),
    };
    let mut extra = Vec::new();
    let model = if let Some(path) = &section.langid_model {
        LangProfileModel::load(path)
            .map_err(|e| usage(format!("langid model {}: {e}", path.display())))?
    } else if let Some(dir) = &section.langid_training_dir {
        let model = LangProfileModel::train_from_dir(dir)
            .map_err(|e| usage(format!("training langid from {}: {e}", dir.display())))?;
        let saved = stage_dir(run_dir, Stage::Clean)?.join("langid.json");
        model.save(&saved).map_err(|e| CliError::Runtime(anyhow!(e)))?;
        extra.push("clean/langid.json".into());
        model
    } else {
        return Err(usage(
            "clean needs clean.langid_model or clean.langid_training_dir",
        ));
    };
    let cleaner = PageCleaner::new(section.rules.clone(), offensive, model)
        .map_err(|e| usage(e.to_string()))?;
    Ok((cleaner, extra))
}

fn clean_stage(config: &PipelineConfig, run_dir: &Path) -> Result<Vec<String>, CliError> {
    let spool_path = require_artifact(run_dir, "ingest/records.jsonl", Stage::Ingest)?;
    let (cleaner, mut artifacts) = build_cleaner(config, run_dir)?;

    let dir = stage_dir(run_dir, Stage::Clean)?;
    let out_path = dir.join("docs.jsonl");
    let mut out = BufWriter::new(File::create(&out_path)?);
    let sink = StatsSink::new();
    let mut input_bytes = 0u64;
    let mut retained_bytes = 0u64;

    // Bounded batches keep memory flat on large spools; order inside a
    // batch is preserved by the indexed collect.
    const BATCH: usize = 512;
    let mut records = korpus_core::ingest::read_spool(BufReader::new(File::open(&spool_path)?));
    loop {
        let mut batch = Vec::with_capacity(BATCH);
        for record in records.by_ref().take(BATCH) {
            batch.push(record.context("reading spooled records")?);
        }
        if batch.is_empty() {
            break;
        }
        for record in &batch {
            input_bytes += record.text.len() as u64;
        }
        let cleaned: Vec<_> = batch
            .par_iter()
            .map(|r| cleaner.clean_page(&r.uri, &r.text, &sink))
            .collect();
        for outcome in cleaned {
            if let korpus_core::clean::PageOutcome::Kept(doc) = outcome {
                retained_bytes += doc.text_bytes();
                write_clean_line(&mut out, &doc)?;
            }
        }
    }
    out.flush()?;

    let mut stats = sink.snapshot();
    stats.input_text_bytes = input_bytes;
    stats.retained_text_bytes = retained_bytes;
    stats.finalize();
    write_json(&fragment_path(run_dir, Stage::Clean), &stats)?;
    artifacts.extend(["clean/docs.jsonl".into(), "clean/stats.json".into()]);
    Ok(artifacts)
}

// ---------------------------------------------------------------- dedup --

fn dedup_stage(config: &PipelineConfig, run_dir: &Path) -> Result<Vec<String>, CliError> {
    let in_path = require_artifact(run_dir, "clean/docs.jsonl", Stage::Clean)?;
    let dir = stage_dir(run_dir, Stage::Dedup)?;
    let spill_dir = dir.join("spill");
    let store = DedupStore::new(&config.dedup.to_config(&spill_dir))
        .map_err(|e| CliError::Runtime(anyhow!(e)))?;

    let out_path = dir.join("docs.jsonl");
    let mut out = BufWriter::new(File::create(&out_path)?);
    let sink = StatsSink::new();
    let mut retained_bytes = 0u64;
    let mut docs_kept = 0u64;
    let mut lines_kept = 0u64;

    let mut read_error: Option<io::Error> = None;
    let docs = read_clean_docs(BufReader::new(File::open(&in_path)?)).map_while(|r| match r {
        Ok(doc) => Some(doc),
        Err(e) => {
            read_error = Some(e);
            None
        }
    });
    let rules = &config.clean.rules;
    for doc in dedup_corpus(docs, &store, rules.min_sentences_per_page, &rules.terminal_marks, &sink)
    {
        let doc = doc.map_err(|e| CliError::Runtime(anyhow!(e)))?;
        retained_bytes += doc.text_bytes();
        docs_kept += 1;
        lines_kept += doc.lines.len() as u64;
        write_clean_line(&mut out, &doc)?;
    }
    if let Some(e) = read_error {
        return Err(CliError::Runtime(anyhow!(e).context("reading cleaned documents")));
    }
    out.flush()?;

    let store_dir = dir.join("store");
    store.persist(&store_dir).map_err(|e| CliError::Runtime(anyhow!(e)))?;

    // The fragment records the surviving corpus as this stage measured it;
    // removed lines also land in the line audit under their own rule name.
    let mut stats = sink.snapshot();
    stats.pages_kept = docs_kept;
    stats.lines_kept = lines_kept;
    stats.retained_text_bytes = retained_bytes;
    if stats.dedup_removed > 0 {
        stats
            .lines_dropped_by_rule
            .insert(korpus_core::stats::rule::DUPLICATE_LINE.to_string(), stats.dedup_removed);
    }
    stats.finalize();
    write_json(&fragment_path(run_dir, Stage::Dedup), &stats)?;

    let mut artifacts = vec!["dedup/docs.jsonl".to_string(), "dedup/stats.json".to_string()];
    let mut entries: Vec<_> = fs::read_dir(&store_dir)?.collect::<Result<Vec<_>, _>>()?;
    entries.sort_by_key(|e| e.path());
    for entry in entries {
        artifacts.push(format!("dedup/store/{}", entry.file_name().to_string_lossy()));
    }
    Ok(artifacts)
}

// ------------------------------------------------------------- tokenize --

fn tokenize_stage(config: &PipelineConfig, run_dir: &Path) -> Result<Vec<String>, CliError> {
    let in_path = require_artifact(run_dir, "dedup/docs.jsonl", Stage::Dedup)?;
    let mut lines: Vec<String> = Vec::new();
    for doc in read_clean_docs(BufReader::new(File::open(&in_path)?)) {
        lines.extend(doc.context("reading deduplicated documents")?.lines);
    }
    let params: TrainerParams = config.tokenizer.clone();
    let model = train_bpe(lines.iter().map(String::as_str), &params)
        .map_err(|e| usage(format!("tokenizer training: {e}")))?;
    let dir = stage_dir(run_dir, Stage::Tokenize)?;
    fs::write(dir.join("bpe.model"), model.to_text())?;
    Ok(vec!["tokenize/bpe.model".into()])
}

// ----------------------------------------------------------------- prep --

fn prep_stage(config: &PipelineConfig, run_dir: &Path) -> Result<Vec<String>, CliError> {
    let model_path = require_artifact(run_dir, "tokenize/bpe.model", Stage::Tokenize)?;
    let docs_path = require_artifact(run_dir, "dedup/docs.jsonl", Stage::Dedup)?;
    let model = BpeModel::from_text(&fs::read_to_string(&model_path)?)
        .map_err(|e| CliError::Runtime(anyhow!(e)))?;
    let docs: Vec<_> = read_clean_docs(BufReader::new(File::open(&docs_path)?))
        .collect::<Result<_, _>>()
        .context("reading deduplicated documents")?;
    let instances = instances_from_documents(&docs, &model, &config.pretrain)
        .map_err(|e| CliError::Runtime(anyhow!(e)))?;
    let dir = stage_dir(run_dir, Stage::Prep)?;
    write_dataset(
        &dir.join("instances.bin"),
        &dir.join("instances.json"),
        &instances,
        &config.pretrain,
    )
    .map_err(|e| CliError::Runtime(anyhow!(e)))?;
    Ok(vec!["prep/instances.bin".into(), "prep/instances.json".into()])
}

// ----------------------------------------------------------------- eval --

/// Single-label plans stratify on the one gold class per sample;
/// multi-label samples have no such class, so their plans are random.
pub fn build_fold_plan(
    config: &PipelineConfig,
    records: &[PredictionRecord],
) -> Result<FoldPlan, CliError> {
    let eval = &config.eval;
    let plan = if eval.mode == EvalMode::Singlelabel && eval.stratified {
        let mut classes = Vec::with_capacity(records.len());
        for r in records {
            if r.gold.len() != 1 {
                return Err(CliError::Runtime(anyhow!(
                    "sample {} has {} gold labels; stratification needs exactly one",
                    r.id,
                    r.gold.len()
                )));
            }
            classes.push(*r.gold.iter().next().unwrap());
        }
        stratified_kfold(&classes, eval.k, config.run.seed)
    } else {
        random_kfold(records.len(), eval.k, config.run.seed)
    };
    plan.map_err(map_eval_error)
}

pub fn score_records(
    config: &PipelineConfig,
    records: &[PredictionRecord],
    plan: &FoldPlan,
) -> Result<MetricReport, CliError> {
    let report = match config.eval.mode {
        EvalMode::Multilabel => korpus_core::eval::evaluate_multilabel(records, plan),
        EvalMode::Singlelabel => {
            korpus_core::eval::evaluate_singlelabel(records, plan, config.eval.averaging)
        }
    };
    report.map_err(map_eval_error)
}

pub fn map_eval_error(e: EvalError) -> CliError {
    CliError::Runtime(anyhow!(e))
}

/// `split-folds`: plan only, no run directory involved.
pub fn split_folds(
    config: &PipelineConfig,
    predictions: &Path,
    out: Option<&Path>,
) -> Result<(), CliError> {
    let records = read_prediction_file(predictions)?;
    let plan = build_fold_plan(config, &records)?;
    let text = plan.to_json() + "\n";
    match out {
        Some(path) => fs::write(path, text)
            .with_context(|| format!("writing {}", path.display()))?,
        None => print!("{text}"),
    }
    Ok(())
}

/// `evaluate` without a run directory: score and print, nothing persisted.
pub fn evaluate_adhoc(
    config: &PipelineConfig,
    folds: Option<&Path>,
    json: bool,
) -> Result<(), CliError> {
    let Some(predictions) = &config.eval.predictions else {
        return Err(usage("no prediction file (set eval.predictions or pass --predictions)"));
    };
    let records = read_prediction_file(predictions)?;
    let plan = match folds {
        Some(path) => FoldPlan::from_json(
            &fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?,
        )
        .map_err(map_eval_error)?,
        None => build_fold_plan(config, &records)?,
    };
    let report = score_records(config, &records, &plan)?;
    if json {
        println!("{}", report.to_json());
    } else {
        print!("{}", report.render());
    }
    Ok(())
}

fn read_prediction_file(path: &Path) -> Result<Vec<PredictionRecord>, CliError> {
    let file = File::open(path).with_context(|| format!("opening {}", path.display()))?;
    parse_predictions(BufReader::new(file)).map_err(map_eval_error)
}

fn eval_stage(config: &PipelineConfig, run_dir: &Path) -> Result<Vec<String>, CliError> {
    let Some(predictions) = &config.eval.predictions else {
        return Err(usage("eval.predictions is not set"));
    };
    let records = read_prediction_file(predictions)?;
    let plan = build_fold_plan(config, &records)?;
    let report = score_records(config, &records, &plan)?;

    let dir = stage_dir(run_dir, Stage::Eval)?;
    fs::write(dir.join("folds.json"), plan.to_json() + "\n")?;
    fs::write(dir.join("report.json"), report.to_json() + "\n")?;
    fs::write(dir.join("report.txt"), report.render())?;
    println!("{}", report.render().trim_end());
    Ok(vec!["eval/folds.json".into(), "eval/report.json".into(), "eval/report.txt".into()])
}
