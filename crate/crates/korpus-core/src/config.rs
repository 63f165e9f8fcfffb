//! One declarative TOML file governs every pipeline stage.
//!
//! Each stage's effective settings feed a SHA-256 chain, so stage outputs
//! are content-addressed: a run directory records the hash a stage was
//! produced under, rerunning with an unchanged config is a no-op, and any
//! upstream change invalidates everything downstream. Worker count is
//! deliberately excluded from the hashes; stage semantics are defined to
//! be worker-count-independent.

use std::collections::BTreeMap;
use std::fmt;
use std::fs;
use std::io;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::bpe::TrainerParams;
use crate::clean::CleaningConfig;
use crate::dedup::{DedupConfig, SpillConfig};
use crate::eval::Averaging;
use crate::pretrain::PretrainConfig;

#[derive(Debug, thiserror::Error)]
pub enum ConfigError {
    #[error("config parse: {0}")]
    Parse(String),
    #[error("invalid config: {0}")]
    Invalid(String),
    #[error(transparent)]
    Io(#[from] io::Error),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunSection {
    /// Seeds fold plans; instance generation has its own seed under
    /// `[pretrain]`.
    pub seed: u64,
    /// 0 lets the thread pool size itself to the machine.
    pub workers: usize,
}

impl Default for RunSection {
    fn default() -> Self {
        RunSection { seed: 1, workers: 0 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct IngestSection {
    pub crawl_id: String,
    /// Primary declared language the index query filters on.
    pub language: String,
    /// Local TSV index path (optionally .gz) or a CDX API endpoint URL.
    pub index: String,
    /// Directory or URL prefix that relative archive paths resolve against.
    pub archive_base: String,
    /// URL match pattern, used only by the CDX API backend.
    pub url_pattern: String,
    /// Stop after this many conversion records; 0 means no limit.
    pub record_limit: u64,
}

impl Default for IngestSection {
    fn default() -> Self {
        IngestSection {
            crawl_id: "CC-MAIN-2018-34".into(),
            language: "ces".into(),
            index: String::new(),
            archive_base: String::new(),
            url_pattern: "*.cz".into(),
            record_limit: 0,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CleanSection {
    pub rules: CleaningConfig,
    /// Whole-word page-kill list, one word per line.
    pub offensive_words: Option<PathBuf>,
    /// Pre-trained detector model; wins over `langid_training_dir`.
    pub langid_model: Option<PathBuf>,
    /// Directory of `<code>.txt` training corpora to fit a detector from.
    pub langid_training_dir: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
#[derive(Default)]
pub struct DedupSection {
    /// Rounded up to a power of two; 0 picks the library default.
    pub shard_count: usize,
    /// Hot keys per shard before spilling to disk; 0 keeps everything
    /// resident.
    pub max_hot_keys_per_shard: usize,
}


impl DedupSection {
    /// `spill_dir` is where shard runs land when spilling is enabled; the
    /// caller owns its placement (normally inside the run directory).
    pub fn to_config(&self, spill_dir: &Path) -> DedupConfig {
        let spill = (self.max_hot_keys_per_shard > 0).then(|| SpillConfig {
            dir: spill_dir.to_path_buf(),
            max_hot_keys_per_shard: self.max_hot_keys_per_shard,
        });
        DedupConfig { shard_count: self.shard_count, spill }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EvalMode {
    Multilabel,
    Singlelabel,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalSection {
    pub k: usize,
    /// Honoured by single-label plans; multi-label plans are always
    /// random because samples have no single class to stratify on.
    pub stratified: bool,
    /// Used by single-label evaluation only.
    pub averaging: Averaging,
    pub mode: EvalMode,
    /// Prediction file scored by the eval stage.
    pub predictions: Option<PathBuf>,
}

impl Default for EvalSection {
    fn default() -> Self {
        EvalSection {
            k: 10,
            stratified: true,
            averaging: Averaging::Macro,
            mode: EvalMode::Multilabel,
            predictions: None,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    pub run: RunSection,
    pub ingest: IngestSection,
    pub clean: CleanSection,
    pub dedup: DedupSection,
    pub tokenizer: TrainerParams,
    pub pretrain: PretrainConfig,
    pub eval: EvalSection,
}

impl PipelineConfig {
    pub fn from_toml_str(text: &str) -> Result<Self, ConfigError> {
        let config: PipelineConfig =
            toml::from_str(text).map_err(|e| ConfigError::Parse(e.to_string()))?;
        config.validate()?;
        Ok(config)
    }

    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = fs::read_to_string(path)?;
        Self::from_toml_str(&text)
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        self.clean
            .rules
            .validate()
            .map_err(|e| ConfigError::Invalid(e.to_string()))?;
        self.pretrain
            .validate()
            .map_err(|e| ConfigError::Invalid(e.to_string()))?;
        if self.tokenizer.vocab_size == 0 {
            return Err(ConfigError::Invalid("tokenizer.vocab_size must be positive".into()));
        }
        let cov = self.tokenizer.character_coverage;
        if !(cov > 0.0 && cov <= 1.0) {
            return Err(ConfigError::Invalid(format!(
                "tokenizer.character_coverage must be in (0, 1], got {cov}"
            )));
        }
        if self.eval.k < 2 {
            return Err(ConfigError::Invalid(format!(
                "eval.k must be at least 2, got {}",
                self.eval.k
            )));
        }
        if self.ingest.crawl_id.trim().is_empty() {
            return Err(ConfigError::Invalid("ingest.crawl_id must not be empty".into()));
        }
        if self.ingest.language.trim().is_empty() {
            return Err(ConfigError::Invalid("ingest.language must not be empty".into()));
        }
        Ok(())
    }

    /// JSON of the settings a stage's output depends on. Field order is
    /// declaration order, so the encoding is stable.
    fn stage_section_json(&self, stage: Stage) -> String {
        let value = match stage {
            Stage::Ingest => serde_json::to_value(&self.ingest),
            Stage::Clean => serde_json::to_value(&self.clean),
            Stage::Dedup => serde_json::to_value(&self.dedup),
            Stage::Tokenize => serde_json::to_value(&self.tokenizer),
            Stage::Prep => serde_json::to_value(&self.pretrain),
            Stage::Eval => serde_json::to_value((&self.eval, self.run.seed)),
        };
        value.expect("config sections serialize").to_string()
    }

    /// Content hash of a stage's output: its own settings chained with
    /// every upstream stage's, so upstream edits invalidate downstream
    /// artifacts.
    pub fn stage_hash(&self, stage: Stage) -> String {
        let mut hasher = Sha256::new();
        for s in Stage::ORDER {
            hasher.update(s.name().as_bytes());
            hasher.update([0]);
            hasher.update(self.stage_section_json(s).as_bytes());
            hasher.update([0]);
            if s == stage {
                break;
            }
        }
        hex_digest(&hasher.finalize())
    }
}

fn hex_digest(bytes: &[u8]) -> String {
    let mut out = String::with_capacity(bytes.len() * 2);
    for b in bytes {
        out.push_str(&format!("{b:02x}"));
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Stage {
    Ingest,
    Clean,
    Dedup,
    Tokenize,
    Prep,
    Eval,
}

impl Stage {
    pub const ORDER: [Stage; 6] = [
        Stage::Ingest,
        Stage::Clean,
        Stage::Dedup,
        Stage::Tokenize,
        Stage::Prep,
        Stage::Eval,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Stage::Ingest => "ingest",
            Stage::Clean => "clean",
            Stage::Dedup => "dedup",
            Stage::Tokenize => "tokenize",
            Stage::Prep => "prep",
            Stage::Eval => "eval",
        }
    }

    pub fn from_name(name: &str) -> Option<Stage> {
        Stage::ORDER.into_iter().find(|s| s.name() == name)
    }
}

impl fmt::Display for Stage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// Parses a requested stage list. The list must be non-empty and form a
/// contiguous run of the pipeline order (resuming mid-pipeline is fine,
/// skipping over a stage is not).
pub fn parse_stage_list<S: AsRef<str>>(names: &[S]) -> Result<Vec<Stage>, ConfigError> {
    if names.is_empty() {
        return Err(ConfigError::Invalid("stage list is empty".into()));
    }
    let mut stages = Vec::with_capacity(names.len());
    for name in names {
        let name = name.as_ref();
        let stage = Stage::from_name(name)
            .ok_or_else(|| ConfigError::Invalid(format!("unknown stage {name:?}")))?;
        stages.push(stage);
    }
    let first = Stage::ORDER.iter().position(|s| *s == stages[0]).unwrap();
    for (i, stage) in stages.iter().enumerate() {
        let expected = Stage::ORDER.get(first + i).copied();
        if expected != Some(*stage) {
            return Err(ConfigError::Invalid(format!(
                "stage list must be a contiguous run of {}; got {:?} where {} was expected",
                Stage::ORDER.map(Stage::name).join(", "),
                stage.name(),
                expected.map(Stage::name).unwrap_or("nothing"),
            )));
        }
    }
    Ok(stages)
}

/// Written next to a stage's artifacts once it completes. Reruns compare
/// `config_hash` before doing any work.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageManifest {
    pub stage: String,
    pub config_hash: String,
    pub tool_version: String,
    pub seeds: BTreeMap<String, u64>,
    /// Run-directory-relative paths, sorted.
    pub artifacts: Vec<String>,
}

impl StageManifest {
    pub fn new(config: &PipelineConfig, stage: Stage, artifacts: Vec<String>) -> StageManifest {
        let mut seeds = BTreeMap::new();
        seeds.insert("run".to_string(), config.run.seed);
        seeds.insert("pretrain".to_string(), config.pretrain.rng_seed);
        let mut artifacts = artifacts;
        artifacts.sort();
        StageManifest {
            stage: stage.name().to_string(),
            config_hash: config.stage_hash(stage),
            tool_version: env!("CARGO_PKG_VERSION").to_string(),
            seeds,
            artifacts,
        }
    }

    pub fn path(run_dir: &Path, stage: Stage) -> PathBuf {
        run_dir.join("manifests").join(format!("{}.json", stage.name()))
    }

    pub fn write(&self, run_dir: &Path) -> io::Result<()> {
        let path = Self::path(run_dir, Stage::from_name(&self.stage).expect("known stage"));
        fs::create_dir_all(path.parent().expect("manifest dir"))?;
        let mut text = serde_json::to_string_pretty(self)?;
        text.push('\n');
        fs::write(path, text)
    }

    pub fn read(run_dir: &Path, stage: Stage) -> Result<Option<StageManifest>, ConfigError> {
        let path = Self::path(run_dir, stage);
        let text = match fs::read_to_string(&path) {
            Ok(t) => t,
            Err(e) if e.kind() == io::ErrorKind::NotFound => return Ok(None),
            Err(e) => return Err(e.into()),
        };
        serde_json::from_str(&text).map_err(|e| {
            ConfigError::Parse(format!("manifest {}: {e}", path.display()))
        })
    }
}

/// A stage is complete iff its manifest exists and was produced under the
/// same config hash.
pub fn stage_is_complete(
    run_dir: &Path,
    config: &PipelineConfig,
    stage: Stage,
) -> Result<bool, ConfigError> {
    match StageManifest::read(run_dir, stage)? {
        Some(m) => Ok(m.config_hash == config.stage_hash(stage)),
        None => Ok(false),
    }
}
