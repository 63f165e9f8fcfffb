//! Acquisition of WET text records: index lookup, archive download and
//! record parsing.

mod fetch;
mod index;
mod wet;

pub use fetch::{fetch_archive, ArchiveSource, FetchError, RetryPolicy};
pub use index::{
    CdxApiIndex, IndexBackend, IndexError, LocalIndexFile, MIN_LANGUAGE_CRAWL,
};
pub use wet::{WetReader, WetRecord, WetWriteError, WetWriter};

use std::io::{self, BufRead, Write};

use serde::{Deserialize, Serialize};

/// One row of a crawl index: where a captured page lives inside the crawl's
/// archive files, plus the language the crawl's own classifier assigned.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct WetPointer {
    pub crawl_id: String,
    /// Path of the archive holding the record, relative to the data host
    /// root (or an absolute URL / local path).
    pub archive_path: String,
    pub target_uri: String,
    /// Primary content language declared by the index, if any.
    pub declared_language: Option<String>,
    /// Record length in bytes as declared by the index; 0 when unknown.
    pub content_length: u64,
}

/// Parse failure with the byte offset where the stream stopped making sense.
#[derive(Debug, thiserror::Error)]
pub enum ParseError {
    #[error("malformed record at byte {offset}: {reason}")]
    Malformed { offset: u64, reason: String },
    #[error("truncated record at byte {offset}: {reason}")]
    Truncated { offset: u64, reason: String },
    #[error("io error at byte {offset}: {source}")]
    Io {
        offset: u64,
        #[source]
        source: io::Error,
    },
}

impl ParseError {
    pub fn offset(&self) -> u64 {
        match self {
            ParseError::Malformed { offset, .. }
            | ParseError::Truncated { offset, .. }
            | ParseError::Io { offset, .. } => *offset,
        }
    }
}

/// One spooled page: the subset of a WET record the cleaning stage needs,
/// serialized as a single JSON line.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SpoolRecord {
    pub uri: String,
    pub date: String,
    pub text: String,
}

impl SpoolRecord {
    pub fn from_wet(record: &WetRecord) -> Self {
        SpoolRecord {
            uri: record.target_uri.clone(),
            date: record.warc_date.clone(),
            text: record.body.clone(),
        }
    }
}

pub fn write_spool_line<W: Write>(out: &mut W, record: &SpoolRecord) -> io::Result<()> {
    serde_json::to_writer(&mut *out, record)?;
    out.write_all(b"\n")
}

pub fn read_spool<R: BufRead>(
    input: R,
) -> impl Iterator<Item = Result<SpoolRecord, io::Error>> {
    input.lines().filter_map(|line| match line {
        Ok(l) if l.trim().is_empty() => None,
        Ok(l) => Some(serde_json::from_str(&l).map_err(io::Error::from)),
        Err(e) => Some(Err(e)),
    })
}
