//! Core building blocks for constructing a cleaned monolingual corpus from
//! Common Crawl WET archives and preparing it for masked-language-model
//! pre-training and classifier evaluation.
//!
//! The pipeline stages map onto the modules below:
//!
//! - [`ingest`] — index lookup, archive fetching and WET record parsing
//! - [`clean`] — per-line and per-page filtering rules
//! - [`langid`] — character n-gram language identification
//! - [`dedup`] — corpus-global exact line deduplication
//! - [`bpe`] — subword vocabulary training and encoding
//! - [`pretrain`] — MLM/NSP instance generation
//! - [`eval`] — classification metrics, fold plans and reports

pub mod bpe;
pub mod clean;
pub mod config;
pub mod dedup;
pub mod eval;
pub mod ingest;
pub mod langid;
pub mod pretrain;
pub mod rng;
pub mod stats;

#[cfg(any(test, feature = "testutil"))]
pub mod testutil;

pub use bpe::{BpeMode, BpeModel, TokenSequence};
pub use clean::{CleanDocument, CleaningConfig, LineVerdict, PageCleaner};
pub use config::{PipelineConfig, Stage, StageManifest};
pub use dedup::{DedupConfig, DedupStore};
pub use ingest::{WetPointer, WetRecord};
pub use langid::{LangProfileModel, LangVerdict};
pub use stats::{RunStats, StatsSink};
