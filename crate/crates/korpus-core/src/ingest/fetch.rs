//! Archive fetching with retry and mid-stream resume.
//!
//! Crawl archives are large and downloads run unattended, so a dropped
//! connection must not restart a file from zero: the remote reader keeps a
//! byte cursor and reconnects with a `Range` request. Servers that ignore
//! `Range` are handled by discarding the already-received prefix.

use std::fs::File;
use std::io::{self, Read};
use std::path::{Path, PathBuf};
use std::time::Duration;

use super::WetPointer;

#[derive(Debug, thiserror::Error)]
pub enum FetchError {
    #[error("archive not found: {0}")]
    NotFound(String),
    #[error("transient fetch failure for {url}: {reason}")]
    Transient { url: String, reason: String },
    #[error("corrupt download of {url}: {reason}")]
    Corrupt { url: String, reason: String },
}

/// Retry schedule: `attempts` tries overall, delay doubling from
/// `base_delay`. A zero base delay disables sleeping (used in tests).
#[derive(Debug, Clone)]
pub struct RetryPolicy {
    pub attempts: u32,
    pub base_delay: Duration,
}

impl Default for RetryPolicy {
    fn default() -> Self {
        RetryPolicy { attempts: 3, base_delay: Duration::from_secs(1) }
    }
}

impl RetryPolicy {
    pub fn no_delay(attempts: u32) -> Self {
        RetryPolicy { attempts, base_delay: Duration::ZERO }
    }

    fn backoff(&self, failures_so_far: u32) -> Duration {
        self.base_delay * 2u32.saturating_pow(failures_so_far.saturating_sub(1))
    }
}

/// Where an archive lives. [`ArchiveSource::resolve`] joins a pointer's
/// archive path against a configured base, which may be a URL or a local
/// directory (local mirrors are how tests and offline runs work).
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum ArchiveSource {
    Local(PathBuf),
    Remote(String),
}

impl ArchiveSource {
    pub fn resolve(pointer: &WetPointer, base: &str) -> ArchiveSource {
        let path = &pointer.archive_path;
        if path.starts_with("http://") || path.starts_with("https://") {
            ArchiveSource::Remote(path.clone())
        } else if base.starts_with("http://") || base.starts_with("https://") {
            ArchiveSource::Remote(format!("{}/{}", base.trim_end_matches('/'), path))
        } else {
            ArchiveSource::Local(Path::new(base).join(path))
        }
    }

    pub fn describe(&self) -> String {
        match self {
            ArchiveSource::Local(p) => p.display().to_string(),
            ArchiveSource::Remote(u) => u.clone(),
        }
    }
}

/// Opens a raw byte stream for the archive. Decompression is the caller's
/// business; this layer only promises the bytes arrive complete.
pub fn fetch_archive(
    source: &ArchiveSource,
    policy: &RetryPolicy,
) -> Result<Box<dyn Read + Send>, FetchError> {
    match source {
        ArchiveSource::Local(path) => {
            let file = File::open(path)
                .map_err(|_| FetchError::NotFound(path.display().to_string()))?;
            Ok(Box::new(file))
        }
        ArchiveSource::Remote(url) => {
            let reader = RemoteReader::open(url.clone(), policy.clone())?;
            Ok(Box::new(reader))
        }
    }
}

struct RemoteReader {
    client: reqwest::blocking::Client,
    url: String,
    policy: RetryPolicy,
    response: Option<reqwest::blocking::Response>,
    received: u64,
    /// Total size from the first response's Content-Length, when declared.
    expected: Option<u64>,
    /// Bytes to discard after a reconnect the server answered with 200.
    discard: u64,
    failures: u32,
}

impl RemoteReader {
    fn open(url: String, policy: RetryPolicy) -> Result<Self, FetchError> {
        let client = reqwest::blocking::Client::builder()
            .connect_timeout(Duration::from_secs(30))
            .timeout(Duration::from_secs(3600))
            .no_proxy()
            .build()
            .expect("client construction cannot fail with static options");
        let mut reader = RemoteReader {
            client,
            url,
            policy,
            response: None,
            received: 0,
            expected: None,
            discard: 0,
            failures: 0,
        };
        reader.connect()?;
        Ok(reader)
    }

    /// Issues the (re)connect, retrying transient failures per policy.
    fn connect(&mut self) -> Result<(), FetchError> {
        loop {
            match self.try_connect() {
                Ok(()) => return Ok(()),
                Err(e @ (FetchError::NotFound(_) | FetchError::Corrupt { .. })) => {
                    return Err(e)
                }
                Err(e) => {
                    self.failures += 1;
                    if self.failures >= self.policy.attempts {
                        return Err(e);
                    }
                    let delay = self.policy.backoff(self.failures);
                    if !delay.is_zero() {
                        std::thread::sleep(delay);
                    }
                }
            }
        }
    }

    fn try_connect(&mut self) -> Result<(), FetchError> {
        let mut req = self.client.get(&self.url);
        if self.received > 0 {
            req = req.header("Range", format!("bytes={}-", self.received));
        }
        let response = req.send().map_err(|e| FetchError::Transient {
            url: self.url.clone(),
            reason: e.to_string(),
        })?;
        match response.status().as_u16() {
            200 => {
                // Full restart: either the first request, or the server
                // ignored Range; skip what we already have.
                self.discard = self.received;
                if self.expected.is_none() {
                    self.expected = response.content_length();
                }
            }
            206 => {
                self.discard = 0;
            }
            404 => return Err(FetchError::NotFound(self.url.clone())),
            416 => {
                return Err(FetchError::Corrupt {
                    url: self.url.clone(),
                    reason: format!("server rejected resume at byte {}", self.received),
                })
            }
            s => {
                return Err(FetchError::Transient {
                    url: self.url.clone(),
                    reason: format!("HTTP {s}"),
                })
            }
        }
        self.response = Some(response);
        Ok(())
    }

    fn reconnect_or_fail(&mut self, reason: String) -> io::Result<()> {
        self.response = None;
        self.failures += 1;
        if self.failures >= self.policy.attempts {
            return Err(io::Error::other(FetchError::Transient {
                url: self.url.clone(),
                reason,
            }));
        }
        let delay = self.policy.backoff(self.failures);
        if !delay.is_zero() {
            std::thread::sleep(delay);
        }
        self.connect().map_err(io::Error::other)
    }
}

impl Read for RemoteReader {
    fn read(&mut self, buf: &mut [u8]) -> io::Result<usize> {
        loop {
            let response = match self.response.as_mut() {
                Some(r) => r,
                None => return Ok(0),
            };
            match response.read(buf) {
                Ok(0) => match self.expected {
                    Some(total) if self.received < total => {
                        // Server closed early but cleanly; resume.
                        self.reconnect_or_fail(format!(
                            "connection closed at byte {} of {}",
                            self.received, total
                        ))?;
                        continue;
                    }
                    _ => {
                        self.response = None;
                        return Ok(0);
                    }
                },
                Ok(n) => {
                    if self.discard > 0 {
                        let skip = (self.discard as usize).min(n);
                        self.discard -= skip as u64;
                        if skip < n {
                            let keep = n - skip;
                            buf.copy_within(skip..n, 0);
                            self.received += keep as u64;
                            return Ok(keep);
                        }
                        continue;
                    }
                    self.received += n as u64;
                    return Ok(n);
                }
                Err(e) => {
                    self.reconnect_or_fail(e.to_string())?;
                    continue;
                }
            }
        }
    }
}
