//! Crawl index lookup: which archive files hold pages in a given language.
//!
//! Two interchangeable backends: a local index file in tab-separated form
//! (url, language, filename, offset, length), and a CDX-style HTTP API that
//! streams JSON objects one per line. Both filter on the primary declared
//! content language, which crawl indexes only publish from the 2018-34
//! crawl onward; older crawls are rejected as unsupported rather than
//! silently returning everything.

use std::fs::File;
use std::io::{BufRead, BufReader, Read};
use std::path::PathBuf;
use std::time::Duration;

use super::WetPointer;

/// First crawl whose index carries a content-language column.
pub const MIN_LANGUAGE_CRAWL: &str = "CC-MAIN-2018-34";

#[derive(Debug, thiserror::Error)]
pub enum IndexError {
    #[error("crawl {0} not found")]
    NotFound(String),
    #[error("transient index failure: {0}")]
    Transient(String),
    #[error("crawl {crawl_id} predates language annotations (first supported: {MIN_LANGUAGE_CRAWL})")]
    Unsupported { crawl_id: String },
    #[error("malformed index entry at line {line}: {reason}")]
    Parse { line: u64, reason: String },
    #[error("invalid crawl id {0:?} (expected CC-MAIN-<year>-<week>)")]
    BadCrawlId(String),
}

/// Splits `CC-MAIN-2018-34` into `(2018, 34)`.
fn parse_crawl_id(crawl_id: &str) -> Result<(u32, u32), IndexError> {
    let rest = crawl_id
        .strip_prefix("CC-MAIN-")
        .ok_or_else(|| IndexError::BadCrawlId(crawl_id.to_string()))?;
    let (year, week) = rest
        .split_once('-')
        .ok_or_else(|| IndexError::BadCrawlId(crawl_id.to_string()))?;
    let year: u32 = year.parse().map_err(|_| IndexError::BadCrawlId(crawl_id.to_string()))?;
    let week: u32 = week.parse().map_err(|_| IndexError::BadCrawlId(crawl_id.to_string()))?;
    Ok((year, week))
}

fn ensure_language_column(crawl_id: &str) -> Result<(), IndexError> {
    let asked = parse_crawl_id(crawl_id)?;
    let min = parse_crawl_id(MIN_LANGUAGE_CRAWL).expect("constant parses");
    if asked < min {
        return Err(IndexError::Unsupported { crawl_id: crawl_id.to_string() });
    }
    Ok(())
}

/// The crawl index lists capture locations in WARC files; the text
/// conversion of the same segment lives at a parallel WET path.
pub fn warc_to_wet_path(warc_path: &str) -> String {
    warc_path.replace("/warc/", "/wet/").replace(".warc.gz", ".warc.wet.gz")
}

/// First language of a comma-separated declared-language list.
fn primary_language(list: &str) -> Option<&str> {
    list.split(',').next().map(str::trim).filter(|s| !s.is_empty())
}

pub type PointerIter<'a> = Box<dyn Iterator<Item = Result<WetPointer, IndexError>> + Send + 'a>;

pub trait IndexBackend {
    /// Streams pointers for pages whose primary declared language matches.
    fn query(&self, crawl_id: &str, language: &str) -> Result<PointerIter<'_>, IndexError>;
}

/// Index stored as a local tab-separated file (optionally gzip-compressed):
/// `url \t language \t filename \t offset \t length`.
pub struct LocalIndexFile {
    crawl_id: String,
    path: PathBuf,
}

impl LocalIndexFile {
    pub fn new(crawl_id: impl Into<String>, path: impl Into<PathBuf>) -> Self {
        LocalIndexFile { crawl_id: crawl_id.into(), path: path.into() }
    }
}

fn parse_tsv_line(crawl_id: &str, line_no: u64, line: &str) -> Result<WetPointer, IndexError> {
    let fields: Vec<&str> = line.split('\t').collect();
    if fields.len() != 5 {
        return Err(IndexError::Parse {
            line: line_no,
            reason: format!("expected 5 tab-separated fields, got {}", fields.len()),
        });
    }
    let length: u64 = fields[4].parse().map_err(|_| IndexError::Parse {
        line: line_no,
        reason: format!("unparseable length {:?}", fields[4]),
    })?;
    fields[3].parse::<u64>().map_err(|_| IndexError::Parse {
        line: line_no,
        reason: format!("unparseable offset {:?}", fields[3]),
    })?;
    Ok(WetPointer {
        crawl_id: crawl_id.to_string(),
        archive_path: warc_to_wet_path(fields[2]),
        target_uri: fields[0].to_string(),
        declared_language: primary_language(fields[1]).map(str::to_string),
        content_length: length,
    })
}

impl IndexBackend for LocalIndexFile {
    fn query(&self, crawl_id: &str, language: &str) -> Result<PointerIter<'_>, IndexError> {
        ensure_language_column(crawl_id)?;
        if crawl_id != self.crawl_id {
            return Err(IndexError::NotFound(crawl_id.to_string()));
        }
        let file = File::open(&self.path)
            .map_err(|_| IndexError::NotFound(format!("{}", self.path.display())))?;
        let reader: Box<dyn Read + Send> =
            if self.path.extension().is_some_and(|e| e == "gz") {
                Box::new(flate2::read::MultiGzDecoder::new(file))
            } else {
                Box::new(file)
            };
        let crawl = crawl_id.to_string();
        let lang = language.to_string();
        let iter = BufReader::new(reader)
            .lines()
            .enumerate()
            .filter_map(move |(i, line)| {
                let line_no = i as u64 + 1;
                let line = match line {
                    Ok(l) => l,
                    Err(e) => return Some(Err(IndexError::Transient(e.to_string()))),
                };
                if line.trim().is_empty() {
                    return None;
                }
                match parse_tsv_line(&crawl, line_no, &line) {
                    Ok(p) if p.declared_language.as_deref() == Some(lang.as_str()) => {
                        Some(Ok(p))
                    }
                    Ok(_) => None,
                    Err(e) => Some(Err(e)),
                }
            });
        Ok(Box::new(iter))
    }
}

/// CDX-style HTTP index server. One streaming request per query:
/// `GET {endpoint}/{crawl_id}-index?url={pattern}&output=json`.
pub struct CdxApiIndex {
    endpoint: String,
    url_pattern: String,
    client: reqwest::blocking::Client,
}

impl CdxApiIndex {
    pub fn new(endpoint: impl Into<String>, url_pattern: impl Into<String>) -> Self {
        let client = reqwest::blocking::Client::builder()
            .connect_timeout(Duration::from_secs(30))
            .timeout(Duration::from_secs(600))
            .build()
            .expect("client construction cannot fail with static options");
        CdxApiIndex {
            endpoint: endpoint.into().trim_end_matches('/').to_string(),
            url_pattern: url_pattern.into(),
            client,
        }
    }
}

#[derive(serde::Deserialize)]
struct CdxRow {
    url: String,
    filename: String,
    #[serde(default)]
    length: Option<String>,
    #[serde(default)]
    languages: Option<String>,
}

impl IndexBackend for CdxApiIndex {
    fn query(&self, crawl_id: &str, language: &str) -> Result<PointerIter<'_>, IndexError> {
        ensure_language_column(crawl_id)?;
        let url = format!(
            "{}/{}-index?url={}&output=json",
            self.endpoint, crawl_id, self.url_pattern
        );
        let response = self
            .client
            .get(&url)
            .send()
            .map_err(|e| IndexError::Transient(e.to_string()))?;
        match response.status().as_u16() {
            200 => {}
            404 => return Err(IndexError::NotFound(crawl_id.to_string())),
            s if s >= 500 || s == 429 => {
                return Err(IndexError::Transient(format!("index returned HTTP {s}")))
            }
            s => {
                return Err(IndexError::Parse {
                    line: 0,
                    reason: format!("index returned HTTP {s}"),
                })
            }
        }
        let crawl = crawl_id.to_string();
        let lang = language.to_string();
        let iter = BufReader::new(response)
            .lines()
            .enumerate()
            .filter_map(move |(i, line)| {
                let line_no = i as u64 + 1;
                let line = match line {
                    Ok(l) => l,
                    Err(e) => return Some(Err(IndexError::Transient(e.to_string()))),
                };
                if line.trim().is_empty() {
                    return None;
                }
                let row: CdxRow = match serde_json::from_str(&line) {
                    Ok(r) => r,
                    Err(e) => {
                        return Some(Err(IndexError::Parse {
                            line: line_no,
                            reason: e.to_string(),
                        }))
                    }
                };
                let declared = row.languages.as_deref().and_then(primary_language);
                if declared != Some(lang.as_str()) {
                    return None;
                }
                Some(Ok(WetPointer {
                    crawl_id: crawl.clone(),
                    archive_path: warc_to_wet_path(&row.filename),
                    target_uri: row.url,
                    declared_language: declared.map(str::to_string),
                    content_length: row
                        .length
                        .as_deref()
                        .and_then(|l| l.parse().ok())
                        .unwrap_or(0),
                }))
            });
        Ok(Box::new(iter))
    }
}
