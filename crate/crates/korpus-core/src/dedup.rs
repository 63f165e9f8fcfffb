//! Corpus-global exact line deduplication.
//!
//! Every distinct line is admitted exactly once, first occurrence wins.
//! Keys are 128-bit xxh3 hashes of the raw line bytes; at 128 bits the
//! collision probability across even a trillion lines is far below any
//! practical concern, so key equality is treated as line equality.
//!
//! The store shards keys by their top bits. Each shard keeps a hot
//! in-memory set and, when configured with a spill directory, flushes to a
//! sorted run file once the hot set exceeds its budget. A spill merges the
//! hot set with the existing run into one new run: lookups then touch at
//! most one 4 KiB block per shard, at the cost of rewriting the run on
//! each spill. Leveled runs would amortize that better, but corpus sizes
//! this store is used at do not need them.

use std::collections::HashSet;
use std::fs::{self, File};
use std::io::{self, BufReader, BufWriter, Read, Seek, SeekFrom, Write};
use std::path::{Path, PathBuf};
use std::sync::Mutex;

use serde::{Deserialize, Serialize};
use xxhash_rust::xxh3::xxh3_128;

use crate::clean::CleanDocument;
use crate::stats::{rule, StatsSink};

const KEY_BYTES: usize = 16;
/// Keys per fence block; one block is a single 4 KiB read.
const BLOCK_KEYS: usize = 256;
const MANIFEST_VERSION: u32 = 1;

#[derive(Debug, thiserror::Error)]
pub enum DedupError {
    #[error("dedup storage: {0}")]
    Storage(#[from] io::Error),
    #[error("dedup store format: {0}")]
    Format(String),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SpillConfig {
    pub dir: PathBuf,
    /// Hot keys per shard before a flush to disk.
    pub max_hot_keys_per_shard: usize,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct DedupConfig {
    /// Rounded up to a power of two; 0 means the default of 16.
    pub shard_count: usize,
    pub spill: Option<SpillConfig>,
}

pub fn line_key(line: &str) -> u128 {
    xxh3_128(line.as_bytes())
}

/// One sorted key file plus in-memory fences (every 256th key) for block
/// lookup.
struct Run {
    path: PathBuf,
    file: File,
    key_count: u64,
    fences: Vec<u128>,
}

impl Run {
    fn write(path: &Path, keys: impl Iterator<Item = u128>) -> io::Result<Run> {
        let mut out = BufWriter::new(File::create(path)?);
        let mut fences = Vec::new();
        let mut count = 0u64;
        for key in keys {
            if count.is_multiple_of(BLOCK_KEYS as u64) {
                fences.push(key);
            }
            out.write_all(&key.to_le_bytes())?;
            count += 1;
        }
        out.flush()?;
        drop(out);
        let file = File::open(path)?;
        Ok(Run { path: path.to_path_buf(), file, key_count: count, fences })
    }

    fn open(path: &Path) -> Result<Run, DedupError> {
        let file = File::open(path)?;
        let bytes = file.metadata()?.len();
        if bytes % KEY_BYTES as u64 != 0 {
            return Err(DedupError::Format(format!(
                "{}: size {bytes} is not a multiple of {KEY_BYTES}",
                path.display()
            )));
        }
        let mut fences = Vec::new();
        let mut reader = BufReader::new(File::open(path)?);
        let mut buf = [0u8; KEY_BYTES];
        let mut prev: Option<u128> = None;
        let mut count = 0u64;
        while reader.read_exact(&mut buf).is_ok() {
            let key = u128::from_le_bytes(buf);
            if let Some(p) = prev {
                if key <= p {
                    return Err(DedupError::Format(format!(
                        "{}: keys not strictly ascending",
                        path.display()
                    )));
                }
            }
            if count.is_multiple_of(BLOCK_KEYS as u64) {
                fences.push(key);
            }
            prev = Some(key);
            count += 1;
        }
        Ok(Run { path: path.to_path_buf(), file, key_count: count, fences })
    }

    fn contains(&mut self, key: u128) -> io::Result<bool> {
        if self.key_count == 0 {
            return Ok(false);
        }
        // Last fence block whose first key is <= key.
        let block = match self.fences.partition_point(|f| *f <= key) {
            0 => return Ok(false),
            p => p - 1,
        };
        let start = block as u64 * BLOCK_KEYS as u64;
        let n = (self.key_count - start).min(BLOCK_KEYS as u64) as usize;
        let mut buf = vec![0u8; n * KEY_BYTES];
        self.file.seek(SeekFrom::Start(start * KEY_BYTES as u64))?;
        self.file.read_exact(&mut buf)?;
        let found = buf
            .chunks_exact(KEY_BYTES)
            .map(|c| u128::from_le_bytes(c.try_into().unwrap()))
            .any(|k| k == key);
        Ok(found)
    }

    /// Fresh sequential reader over the sorted keys.
    fn iter(&self) -> io::Result<impl Iterator<Item = io::Result<u128>>> {
        let mut reader = BufReader::new(File::open(&self.path)?);
        let mut remaining = self.key_count;
        Ok(std::iter::from_fn(move || {
            if remaining == 0 {
                return None;
            }
            remaining -= 1;
            let mut buf = [0u8; KEY_BYTES];
            Some(reader.read_exact(&mut buf).map(|_| u128::from_le_bytes(buf)))
        }))
    }
}

struct Shard {
    hot: HashSet<u128>,
    run: Option<Run>,
    generation: u64,
}

impl Shard {
    /// Precondition: key is in neither `hot` nor `run` (checked by caller).
    fn admit(&mut self, key: u128) {
        self.hot.insert(key);
    }

    fn contains(&mut self, key: u128) -> io::Result<bool> {
        if self.hot.contains(&key) {
            return Ok(true);
        }
        match self.run.as_mut() {
            Some(run) => run.contains(key),
            None => Ok(false),
        }
    }

    /// Merges hot + run into one new run file at `path`.
    fn merge_to(&self, path: &Path) -> Result<Run, DedupError> {
        let mut hot: Vec<u128> = self.hot.iter().copied().collect();
        hot.sort_unstable();
        let run = match self.run.as_ref() {
            Some(r) => Some(r.iter()?),
            None => None,
        };
        // Hot and run key sets are disjoint by construction, so a plain
        // two-way merge needs no equality case.
        let mut hot_iter = hot.into_iter().peekable();
        let mut run_iter = run.map(|i| i.peekable());
        let mut failed: Option<io::Error> = None;
        let merged = std::iter::from_fn(|| {
            if failed.is_some() {
                return None;
            }
            let next_run = match run_iter.as_mut().and_then(|i| i.peek()) {
                Some(Ok(k)) => Some(*k),
                Some(Err(_)) => {
                    failed = Some(run_iter.as_mut().unwrap().next().unwrap().unwrap_err());
                    return None;
                }
                None => None,
            };
            // Peeked run entries are known Ok, so the unwraps cannot fire.
            match (hot_iter.peek().copied(), next_run) {
                (Some(h), Some(r)) if h < r => hot_iter.next(),
                (_, Some(_)) => run_iter.as_mut().unwrap().next().map(|r| r.unwrap()),
                (Some(_), None) => hot_iter.next(),
                (None, None) => None,
            }
        });
        let new_run = Run::write(path, merged)?;
        if let Some(e) = failed {
            let _ = fs::remove_file(path);
            return Err(DedupError::Storage(e));
        }
        Ok(new_run)
    }

    fn spill(&mut self, dir: &Path, shard_idx: usize) -> Result<(), DedupError> {
        self.generation += 1;
        let path = dir.join(format!("shard-{shard_idx:04}-gen{:06}.keys", self.generation));
        let new_run = self.merge_to(&path)?;
        let old = self.run.replace(new_run);
        self.hot = HashSet::new();
        if let Some(old) = old {
            let _ = fs::remove_file(&old.path);
        }
        Ok(())
    }
}

#[derive(Serialize, Deserialize)]
struct Manifest {
    version: u32,
    shard_count: usize,
    key_count: u64,
}

/// Thread-safe insert-if-absent key store.
///
/// Individual inserts are atomic, but when the same line reaches the store
/// from two threads, which occurrence wins depends on scheduling. Feed
/// documents sequentially (as [`dedup_corpus`] does) when the exact kept
/// occurrence matters.
pub struct DedupStore {
    shards: Vec<Mutex<Shard>>,
    shard_bits: u32,
    spill: Option<SpillConfig>,
}

impl DedupStore {
    pub fn new(config: &DedupConfig) -> Result<Self, DedupError> {
        let requested = if config.shard_count == 0 { 16 } else { config.shard_count };
        let shard_count = requested.next_power_of_two();
        if let Some(spill) = &config.spill {
            if spill.max_hot_keys_per_shard == 0 {
                return Err(DedupError::Format(
                    "max_hot_keys_per_shard must be >= 1 when spilling".into(),
                ));
            }
            fs::create_dir_all(&spill.dir)?;
        }
        let shards = (0..shard_count)
            .map(|_| Mutex::new(Shard { hot: HashSet::new(), run: None, generation: 0 }))
            .collect();
        Ok(DedupStore {
            shards,
            shard_bits: shard_count.trailing_zeros(),
            spill: config.spill.clone(),
        })
    }

    fn shard_of(&self, key: u128) -> usize {
        if self.shard_bits == 0 {
            0
        } else {
            (key >> (128 - self.shard_bits)) as usize
        }
    }

    /// Returns true when the key was absent (and is now stored).
    pub fn insert_key(&self, key: u128) -> Result<bool, DedupError> {
        let idx = self.shard_of(key);
        let mut shard = self.shards[idx].lock().unwrap();
        if shard.contains(key)? {
            return Ok(false);
        }
        shard.admit(key);
        if let Some(spill) = &self.spill {
            if shard.hot.len() >= spill.max_hot_keys_per_shard {
                shard.spill(&spill.dir, idx)?;
            }
        }
        Ok(true)
    }

    /// Returns true when this exact line has not been seen before.
    pub fn insert_line(&self, line: &str) -> Result<bool, DedupError> {
        self.insert_key(line_key(line))
    }

    pub fn key_count(&self) -> u64 {
        self.shards
            .iter()
            .map(|s| {
                let shard = s.lock().unwrap();
                shard.hot.len() as u64
                    + shard.run.as_ref().map_or(0, |r| r.key_count)
            })
            .sum()
    }

    /// Writes the full key set as one sorted run per shard plus a
    /// manifest. The store remains usable afterwards.
    pub fn persist(&self, dir: &Path) -> Result<(), DedupError> {
        fs::create_dir_all(dir)?;
        let mut total = 0u64;
        for (idx, shard) in self.shards.iter().enumerate() {
            let shard = shard.lock().unwrap();
            let path = dir.join(format!("shard-{idx:04}.keys"));
            let run = shard.merge_to(&path)?;
            total += run.key_count;
        }
        let manifest = Manifest {
            version: MANIFEST_VERSION,
            shard_count: self.shards.len(),
            key_count: total,
        };
        fs::write(
            dir.join("manifest.json"),
            serde_json::to_string_pretty(&manifest).expect("manifest serializes"),
        )?;
        Ok(())
    }

    /// Opens a persisted store. New spills go to `spill` (or stay in
    /// memory when `None`); the persisted files are only read.
    pub fn load(dir: &Path, spill: Option<SpillConfig>) -> Result<Self, DedupError> {
        let manifest: Manifest =
            serde_json::from_str(&fs::read_to_string(dir.join("manifest.json"))?)
                .map_err(|e| DedupError::Format(format!("manifest: {e}")))?;
        if manifest.version != MANIFEST_VERSION {
            return Err(DedupError::Format(format!(
                "unsupported store version {}",
                manifest.version
            )));
        }
        if !manifest.shard_count.is_power_of_two() {
            return Err(DedupError::Format(format!(
                "shard_count {} is not a power of two",
                manifest.shard_count
            )));
        }
        if let Some(s) = &spill {
            fs::create_dir_all(&s.dir)?;
        }
        let mut shards = Vec::with_capacity(manifest.shard_count);
        let mut total = 0u64;
        for idx in 0..manifest.shard_count {
            let run = Run::open(&dir.join(format!("shard-{idx:04}.keys")))?;
            total += run.key_count;
            shards.push(Mutex::new(Shard {
                hot: HashSet::new(),
                run: Some(run),
                generation: 0,
            }));
        }
        if total != manifest.key_count {
            return Err(DedupError::Format(format!(
                "manifest claims {} keys, shards hold {total}",
                manifest.key_count
            )));
        }
        Ok(DedupStore {
            shard_bits: manifest.shard_count.trailing_zeros(),
            shards,
            spill,
        })
    }
}

/// Streams documents through the store in order: duplicate lines are
/// removed (first occurrence anywhere in the corpus wins) and documents
/// that fall under `min_sentences` afterwards are dropped. Sequential by
/// design; see [`DedupStore`] on concurrent ordering.
pub fn dedup_corpus<'a, I>(
    docs: I,
    store: &'a DedupStore,
    min_sentences: usize,
    terminal_marks: &'a [char],
    sink: &'a StatsSink,
) -> impl Iterator<Item = Result<CleanDocument, DedupError>> + 'a
where
    I: Iterator<Item = CleanDocument> + 'a,
{
    docs.filter_map(move |mut doc| {
        let mut kept = Vec::with_capacity(doc.lines.len());
        let mut removed = 0u64;
        for line in doc.lines.drain(..) {
            match store.insert_line(&line) {
                Ok(true) => kept.push(line),
                Ok(false) => removed += 1,
                Err(e) => return Some(Err(e)),
            }
        }
        if removed > 0 {
            sink.update(|s| s.dedup_removed += removed);
        }
        doc.lines = kept;
        doc.recount_sentences(terminal_marks);
        if doc.sentence_count < min_sentences {
            sink.page_dropped(rule::MIN_SENTENCES);
            return None;
        }
        Some(Ok(doc))
    })
}
