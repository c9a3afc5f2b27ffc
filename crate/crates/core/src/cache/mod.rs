//! Persistent tuning-result store.
//!
//! Layout of a store directory:
//!
//! ```text
//! <root>/index.json                       key -> entry file
//! <root>/<fp8>-<shape8>.result.json       one entry per (fingerprint, shape)
//! <root>/.lock                            present while a writer is active
//! ```
//!
//! Writers serialize on the lock file; readers never take it. Every file is
//! written to a temporary sibling and renamed into place, so a reader sees
//! either the previous or the new version of a file. An entry is only
//! replaced by one with an equal or better best median unless forced.

mod lock;

use std::collections::BTreeMap;
use std::fmt;
use std::fs;
use std::io::{self, Write};
use std::path::{Path, PathBuf};
use std::str::FromStr;

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};

use crate::configspace::ShapeKey;
use crate::digest::canonical_json;
use crate::executor::EnvFingerprint;
use crate::search::TuningResult;

pub use lock::{StoreLock, STALE_AFTER};

pub const FORMAT_VERSION: u32 = 1;
pub const FRAMEWORK_VERSION: &str = env!("CARGO_PKG_VERSION");
pub const CACHE_DIR_ENV: &str = "KTUNE_CACHE_DIR";

const INDEX_FILE: &str = "index.json";
const ENTRY_SUFFIX: &str = ".result.json";

#[derive(Debug, thiserror::Error)]
pub enum CacheError {
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: io::Error },
    #[error("cache root {0} is not a directory")]
    NotADirectory(PathBuf),
    #[error("entry rejected: {0}")]
    InvalidEntry(String),
    #[error("unsupported format version {found} (this build reads version {supported})")]
    VersionMismatch { found: u64, supported: u32 },
    #[error("malformed document: {0}")]
    Malformed(String),
    #[error("ambiguous key `{0}` matches several entries")]
    AmbiguousKey(String),
}

fn io_err(path: &Path) -> impl FnOnce(io::Error) -> CacheError + '_ {
    move |source| CacheError::Io {
        path: path.to_path_buf(),
        source,
    }
}

/// Identity of a cache entry.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct CacheKey {
    pub fingerprint_digest: String,
    pub shape_digest: String,
}

impl CacheKey {
    pub fn new(fingerprint: &EnvFingerprint, shape: &ShapeKey) -> Self {
        CacheKey {
            fingerprint_digest: fingerprint.digest(),
            shape_digest: shape.digest().to_string(),
        }
    }

    /// `<fp8>-<shape8>`, the stem of the entry file name.
    pub fn short(&self) -> String {
        format!(
            "{}-{}",
            &self.fingerprint_digest[..8.min(self.fingerprint_digest.len())],
            &self.shape_digest[..8.min(self.shape_digest.len())]
        )
    }
}

/// Rendered as `<fingerprint_digest>:<shape_digest>`.
impl fmt::Display for CacheKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}:{}", self.fingerprint_digest, self.shape_digest)
    }
}

impl FromStr for CacheKey {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let (fp, shape) = s
            .split_once(':')
            .ok_or_else(|| format!("cache key `{s}` is not <fingerprint>:<shape>"))?;
        if fp.is_empty() || shape.is_empty() {
            return Err(format!("cache key `{s}` has an empty component"));
        }
        Ok(CacheKey {
            fingerprint_digest: fp.to_string(),
            shape_digest: shape.to_string(),
        })
    }
}

/// A persisted tuning result.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CacheEntry {
    pub format_version: u32,
    pub created_at: DateTime<Utc>,
    pub framework_version: String,
    pub fingerprint: EnvFingerprint,
    pub shape: ShapeKey,
    pub result: TuningResult,
}

impl CacheEntry {
    pub fn new(result: TuningResult) -> Self {
        CacheEntry {
            format_version: FORMAT_VERSION,
            created_at: Utc::now(),
            framework_version: FRAMEWORK_VERSION.to_string(),
            fingerprint: result.fingerprint.clone(),
            shape: result.shape.clone(),
            result,
        }
    }

    pub fn key(&self) -> CacheKey {
        CacheKey::new(&self.fingerprint, &self.shape)
    }

    pub fn canonical(&self) -> String {
        canonical_json(self)
    }

    pub fn check(&self) -> Result<(), CacheError> {
        if self.format_version != FORMAT_VERSION {
            return Err(CacheError::VersionMismatch {
                found: u64::from(self.format_version),
                supported: FORMAT_VERSION,
            });
        }
        if self.result.fingerprint != self.fingerprint {
            return Err(CacheError::InvalidEntry(
                "result fingerprint differs from entry fingerprint".into(),
            ));
        }
        if self.result.shape != self.shape {
            return Err(CacheError::InvalidEntry(
                "result shape differs from entry shape".into(),
            ));
        }
        self.fingerprint
            .check()
            .map_err(|e| CacheError::InvalidEntry(e.to_string()))?;
        self.result.check().map_err(CacheError::InvalidEntry)
    }

    fn rank(&self) -> f64 {
        self.result.best_median_ms().unwrap_or(f64::INFINITY)
    }

    fn from_json(text: &str) -> Result<Self, CacheError> {
        let value: serde_json::Value =
            serde_json::from_str(text).map_err(|e| CacheError::Malformed(e.to_string()))?;
        check_version(&value)?;
        let entry: CacheEntry =
            serde_json::from_value(value).map_err(|e| CacheError::Malformed(e.to_string()))?;
        entry.check()?;
        Ok(entry)
    }

    fn to_pretty_json(&self) -> String {
        let value = serde_json::to_value(self).expect("entries serialize");
        let mut text = serde_json::to_string_pretty(&value).expect("JSON value renders");
        text.push('\n');
        text
    }
}

fn check_version(value: &serde_json::Value) -> Result<(), CacheError> {
    let found = value
        .get("format_version")
        .and_then(serde_json::Value::as_u64)
        .ok_or_else(|| CacheError::Malformed("missing format_version".into()))?;
    if found != u64::from(FORMAT_VERSION) {
        return Err(CacheError::VersionMismatch {
            found,
            supported: FORMAT_VERSION,
        });
    }
    Ok(())
}

/// Portable collection of entries.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Bundle {
    pub format_version: u32,
    pub entries: Vec<CacheEntry>,
}

impl Bundle {
    pub fn from_json(text: &str) -> Result<Self, CacheError> {
        let value: serde_json::Value =
            serde_json::from_str(text).map_err(|e| CacheError::Malformed(e.to_string()))?;
        check_version(&value)?;
        let bundle: Bundle =
            serde_json::from_value(value).map_err(|e| CacheError::Malformed(e.to_string()))?;
        for entry in &bundle.entries {
            entry.check()?;
        }
        Ok(bundle)
    }

    pub fn to_json(&self) -> String {
        let value = serde_json::to_value(self).expect("bundles serialize");
        serde_json::to_string_pretty(&value).expect("JSON value renders")
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct IndexEntry {
    #[serde(flatten)]
    pub key: CacheKey,
    pub file: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
struct Index {
    format_version: u32,
    entries: Vec<IndexEntry>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum StoreOutcome {
    /// No entry existed for the key.
    Stored(PathBuf),
    /// An existing entry was replaced (better or equal median, or forced).
    Replaced(PathBuf),
    /// The existing entry is better; nothing was written.
    KeptExisting(PathBuf),
    /// The identical entry is already stored.
    Unchanged(PathBuf),
}

impl StoreOutcome {
    pub fn path(&self) -> &Path {
        match self {
            StoreOutcome::Stored(p)
            | StoreOutcome::Replaced(p)
            | StoreOutcome::KeptExisting(p)
            | StoreOutcome::Unchanged(p) => p,
        }
    }

    pub fn wrote(&self) -> bool {
        matches!(self, StoreOutcome::Stored(_) | StoreOutcome::Replaced(_))
    }
}

/// Directory-backed cache of tuning results.
#[derive(Debug, Clone)]
pub struct CacheStore {
    root: PathBuf,
}

/// `KTUNE_CACHE_DIR`, else `$XDG_CACHE_HOME/ktune`, else `~/.cache/ktune`.
pub fn default_root() -> PathBuf {
    if let Some(dir) = std::env::var_os(CACHE_DIR_ENV).filter(|d| !d.is_empty()) {
        return PathBuf::from(dir);
    }
    if let Some(dir) = std::env::var_os("XDG_CACHE_HOME").filter(|d| !d.is_empty()) {
        return PathBuf::from(dir).join("ktune");
    }
    match std::env::var_os("HOME").filter(|d| !d.is_empty()) {
        Some(home) => PathBuf::from(home).join(".cache").join("ktune"),
        None => PathBuf::from(".ktune-cache"),
    }
}

impl CacheStore {
    /// Opens (creating if needed) the store at `root`.
    pub fn open(root: impl Into<PathBuf>) -> Result<Self, CacheError> {
        let root = root.into();
        if root.exists() && !root.is_dir() {
            return Err(CacheError::NotADirectory(root));
        }
        fs::create_dir_all(&root).map_err(io_err(&root))?;
        fs::read_dir(&root).map_err(io_err(&root))?;
        Ok(CacheStore { root })
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    fn index_path(&self) -> PathBuf {
        self.root.join(INDEX_FILE)
    }

    fn read_index(&self) -> Result<Vec<IndexEntry>, CacheError> {
        let path = self.index_path();
        let text = match fs::read_to_string(&path) {
            Ok(t) => t,
            Err(e) if e.kind() == io::ErrorKind::NotFound => return Ok(Vec::new()),
            Err(e) => return Err(io_err(&path)(e)),
        };
        match serde_json::from_str::<Index>(&text) {
            Ok(index) if index.format_version == FORMAT_VERSION => Ok(index.entries),
            _ => {
                log::warn!(
                    "cache index {} is unreadable; rescanning entries",
                    path.display()
                );
                self.scan()
            }
        }
    }

    /// Rebuilds the index from the entry files on disk.
    fn scan(&self) -> Result<Vec<IndexEntry>, CacheError> {
        let mut out = Vec::new();
        for item in fs::read_dir(&self.root).map_err(io_err(&self.root))? {
            let item = item.map_err(io_err(&self.root))?;
            let name = item.file_name().to_string_lossy().into_owned();
            if !name.ends_with(ENTRY_SUFFIX) {
                continue;
            }
            match self.read_entry_file(&name) {
                Ok(entry) => out.push(IndexEntry {
                    key: entry.key(),
                    file: name,
                }),
                Err(e) => log::warn!("skipping {}: {e}", self.root.join(&name).display()),
            }
        }
        out.sort_by(|a, b| a.key.cmp(&b.key));
        Ok(out)
    }

    fn read_entry_file(&self, file: &str) -> Result<CacheEntry, CacheError> {
        let path = self.root.join(file);
        let text = fs::read_to_string(&path).map_err(io_err(&path))?;
        CacheEntry::from_json(&text)
    }

    fn write_atomic(&self, file: &str, contents: &str) -> Result<PathBuf, CacheError> {
        let path = self.root.join(file);
        let mut tmp = tempfile::Builder::new()
            .prefix(".tmp-")
            .tempfile_in(&self.root)
            .map_err(io_err(&self.root))?;
        tmp.write_all(contents.as_bytes()).map_err(io_err(&path))?;
        tmp.as_file().sync_all().map_err(io_err(&path))?;
        tmp.persist(&path).map_err(|e| io_err(&path)(e.error))?;
        Ok(path)
    }

    fn write_index(&self, mut entries: Vec<IndexEntry>) -> Result<(), CacheError> {
        entries.sort_by(|a, b| a.key.cmp(&b.key));
        let index = Index {
            format_version: FORMAT_VERSION,
            entries,
        };
        let value = serde_json::to_value(&index).expect("index serializes");
        let text = serde_json::to_string_pretty(&value).expect("JSON value renders") + "\n";
        self.write_atomic(INDEX_FILE, &text)?;
        Ok(())
    }

    pub fn list(&self) -> Result<Vec<IndexEntry>, CacheError> {
        self.read_index()
    }

    /// Entry for `key`; unreadable or mismatching entry files count as a miss.
    pub fn get(&self, key: &CacheKey) -> Result<Option<CacheEntry>, CacheError> {
        let index = self.read_index()?;
        let Some(item) = index.iter().find(|e| &e.key == key) else {
            return Ok(None);
        };
        match self.read_entry_file(&item.file) {
            Ok(entry) if &entry.key() == key => Ok(Some(entry)),
            Ok(_) => {
                log::warn!(
                    "cache entry {} does not match its index key; treating as miss",
                    self.root.join(&item.file).display()
                );
                Ok(None)
            }
            Err(e) => {
                log::warn!(
                    "corrupt cache entry {}: {e}; treating as miss",
                    self.root.join(&item.file).display()
                );
                Ok(None)
            }
        }
    }

    pub fn lookup(
        &self,
        fingerprint: &EnvFingerprint,
        shape: &ShapeKey,
    ) -> Result<Option<CacheEntry>, CacheError> {
        self.get(&CacheKey::new(fingerprint, shape))
    }

    /// Persists `entry` under the monotone overwrite rule.
    pub fn store(&self, entry: &CacheEntry, force: bool) -> Result<StoreOutcome, CacheError> {
        entry.check()?;
        let _lock = StoreLock::acquire(&self.root, STALE_AFTER).map_err(io_err(&self.root))?;
        let mut index = self.read_index()?;
        let key = entry.key();
        let existing = index.iter().position(|e| e.key == key);
        let file = match existing {
            Some(i) => {
                let file = index[i].file.clone();
                if let Ok(old) = self.read_entry_file(&file) {
                    if old.canonical() == entry.canonical() {
                        return Ok(StoreOutcome::Unchanged(self.root.join(file)));
                    }
                    if !force && entry.rank() > old.rank() {
                        return Ok(StoreOutcome::KeptExisting(self.root.join(file)));
                    }
                }
                file
            }
            None => self.fresh_file_name(&key, &index),
        };
        let path = self.write_atomic(&file, &entry.to_pretty_json())?;
        if existing.is_none() {
            index.push(IndexEntry { key, file });
        }
        self.write_index(index)?;
        Ok(match existing {
            Some(_) => StoreOutcome::Replaced(path),
            None => StoreOutcome::Stored(path),
        })
    }

    fn fresh_file_name(&self, key: &CacheKey, index: &[IndexEntry]) -> String {
        let stem = key.short();
        let taken =
            |name: &str| index.iter().any(|e| e.file == name) || self.root.join(name).exists();
        let first = format!("{stem}{ENTRY_SUFFIX}");
        if !taken(&first) {
            return first;
        }
        (1..)
            .map(|n| format!("{stem}-{n}{ENTRY_SUFFIX}"))
            .find(|name| !taken(name))
            .expect("unbounded search finds a free name")
    }

    /// Removes the entry for `key`; `false` if there was none.
    pub fn invalidate(&self, key: &CacheKey) -> Result<bool, CacheError> {
        let _lock = StoreLock::acquire(&self.root, STALE_AFTER).map_err(io_err(&self.root))?;
        let mut index = self.read_index()?;
        let Some(pos) = index.iter().position(|e| &e.key == key) else {
            return Ok(false);
        };
        let removed = index.remove(pos);
        self.write_index(index)?;
        let path = self.root.join(&removed.file);
        match fs::remove_file(&path) {
            Ok(()) => {}
            Err(e) if e.kind() == io::ErrorKind::NotFound => {}
            Err(e) => return Err(io_err(&path)(e)),
        }
        Ok(true)
    }

    /// Resolves a full `<fp>:<shape>` key, an entry file stem, or a unique
    /// prefix of either.
    pub fn resolve(&self, text: &str) -> Result<Option<CacheKey>, CacheError> {
        let index = self.read_index()?;
        let text = text.trim().trim_end_matches(ENTRY_SUFFIX);
        let matches: Vec<&IndexEntry> = index
            .iter()
            .filter(|e| {
                let full = e.key.to_string();
                let stem = e.file.trim_end_matches(ENTRY_SUFFIX);
                full == text || stem == text || full.starts_with(text) || stem.starts_with(text)
            })
            .collect();
        if let Some(exact) = matches
            .iter()
            .find(|e| e.key.to_string() == text || e.file.trim_end_matches(ENTRY_SUFFIX) == text)
        {
            return Ok(Some(exact.key.clone()));
        }
        match matches.as_slice() {
            [] => Ok(None),
            [one] => Ok(Some(one.key.clone())),
            _ => Err(CacheError::AmbiguousKey(text.to_string())),
        }
    }

    /// Bundles the entries for `keys`, or every readable entry when empty.
    pub fn export_bundle(&self, keys: &[CacheKey]) -> Result<Bundle, CacheError> {
        let wanted: Vec<CacheKey> = if keys.is_empty() {
            self.read_index()?.into_iter().map(|e| e.key).collect()
        } else {
            keys.to_vec()
        };
        let mut entries = BTreeMap::new();
        for key in wanted {
            match self.get(&key)? {
                Some(entry) => {
                    entries.insert(key, entry);
                }
                None => {
                    return Err(CacheError::InvalidEntry(format!(
                        "no readable entry for key {key}"
                    )))
                }
            }
        }
        Ok(Bundle {
            format_version: FORMAT_VERSION,
            entries: entries.into_values().collect(),
        })
    }

    /// Stores every bundle entry; returns how many were written.
    pub fn import_bundle(&self, bundle: &Bundle) -> Result<usize, CacheError> {
        if bundle.format_version != FORMAT_VERSION {
            return Err(CacheError::VersionMismatch {
                found: u64::from(bundle.format_version),
                supported: FORMAT_VERSION,
            });
        }
        let mut written = 0;
        for entry in &bundle.entries {
            if self.store(entry, false)?.wrote() {
                written += 1;
            }
        }
        Ok(written)
    }
}
