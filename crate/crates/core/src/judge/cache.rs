use std::collections::HashMap;
use std::fs::{File, OpenOptions};
use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::{Mutex, RwLock};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::{GenerationParams, JudgeError};

/// Line record of a response cache file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CacheRecord {
    pub key: String,
    pub prompt_sha: String,
    pub response: String,
}

pub fn prompt_sha(prompt: &str) -> String {
    hex::encode(Sha256::digest(prompt.as_bytes()))
}

/// Content hash of everything that determines a response. Fields are
/// length-prefixed so no two distinct tuples share an encoding.
pub fn cache_key(prompt: &str, params: &GenerationParams) -> String {
    let mut h = Sha256::new();
    for field in [prompt.as_bytes(), params.model_name.as_bytes()] {
        h.update((field.len() as u64).to_le_bytes());
        h.update(field);
    }
    h.update(params.temperature.to_bits().to_le_bytes());
    h.update((params.max_output_tokens as u64).to_le_bytes());
    hex::encode(h.finalize())
}

#[derive(Debug, Clone)]
struct Entry {
    prompt_sha: String,
    response: String,
}

/// Append-only map from cache key to response, optionally backed by a file.
#[derive(Debug, Default)]
pub struct ReplayCache {
    entries: RwLock<HashMap<String, Entry>>,
    sink: Option<(PathBuf, Mutex<File>)>,
}

fn corrupt(path: &Path, line: usize, msg: impl std::fmt::Display) -> JudgeError {
    JudgeError::CacheCorruption(format!("{}:{line}: {msg}", path.display()))
}

impl ReplayCache {
    pub fn in_memory() -> Self {
        Self::default()
    }

    fn read_entries(path: &Path) -> Result<HashMap<String, Entry>, JudgeError> {
        let mut entries = HashMap::new();
        if !path.exists() {
            return Ok(entries);
        }
        let text = std::fs::read_to_string(path)
            .map_err(|e| JudgeError::Io(format!("{}: {e}", path.display())))?;
        for (i, line) in text.lines().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let r: CacheRecord =
                serde_json::from_str(line).map_err(|e| corrupt(path, i + 1, e))?;
            let entry = Entry {
                prompt_sha: r.prompt_sha,
                response: r.response,
            };
            if let Some(old) = entries.get(&r.key) {
                let Entry { prompt_sha, response } = old;
                if *prompt_sha != entry.prompt_sha || *response != entry.response {
                    return Err(corrupt(path, i + 1, "conflicting entries for one key"));
                }
            }
            entries.insert(r.key, entry);
        }
        Ok(entries)
    }

    /// Loads `path` for lookups only; nothing is ever written.
    pub fn open_read_only(path: &Path) -> Result<Self, JudgeError> {
        Ok(Self {
            entries: RwLock::new(Self::read_entries(path)?),
            sink: None,
        })
    }

    /// Loads `path` (if present) and appends new entries to it.
    pub fn open(path: &Path) -> Result<Self, JudgeError> {
        let entries = Self::read_entries(path)?;
        let file = OpenOptions::new()
            .create(true)
            .append(true)
            .open(path)
            .map_err(|e| JudgeError::Io(format!("{}: {e}", path.display())))?;
        Ok(Self {
            entries: RwLock::new(entries),
            sink: Some((path.to_owned(), Mutex::new(file))),
        })
    }

    pub fn len(&self) -> usize {
        self.entries.read().expect("cache lock").len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn contains(&self, key: &str) -> bool {
        self.entries.read().expect("cache lock").contains_key(key)
    }

    /// Cached response for `(prompt, params)`. A key hit whose stored prompt
    /// hash differs is corruption, not a miss.
    pub fn get(&self, prompt: &str, params: &GenerationParams) -> Result<Option<String>, JudgeError> {
        let key = cache_key(prompt, params);
        let entries = self.entries.read().expect("cache lock");
        match entries.get(&key) {
            None => Ok(None),
            Some(e) if e.prompt_sha != prompt_sha(prompt) => Err(JudgeError::CacheCorruption(
                format!("key {key} maps to a different prompt"),
            )),
            Some(e) => Ok(Some(e.response.clone())),
        }
    }

    pub fn insert(&self, prompt: &str, params: &GenerationParams, response: &str) -> Result<(), JudgeError> {
        let record = CacheRecord {
            key: cache_key(prompt, params),
            prompt_sha: prompt_sha(prompt),
            response: response.to_owned(),
        };
        let mut entries = self.entries.write().expect("cache lock");
        if let Some(old) = entries.get(&record.key) {
            if old.prompt_sha != record.prompt_sha {
                return Err(JudgeError::CacheCorruption(format!(
                    "key {} maps to a different prompt",
                    record.key
                )));
            }
            return Ok(());
        }
        if let Some((path, file)) = &self.sink {
            let mut f = file.lock().expect("cache file lock");
            writeln!(f, "{}", serde_json::to_string(&record).expect("record serializes"))
                .and_then(|_| f.flush())
                .map_err(|e| JudgeError::Io(format!("{}: {e}", path.display())))?;
        }
        entries.insert(
            record.key,
            Entry {
                prompt_sha: record.prompt_sha,
                response: record.response,
            },
        );
        Ok(())
    }

    /// All entries sorted by key, for writing a canonical cache file.
    pub fn records(&self) -> Vec<CacheRecord> {
        let entries = self.entries.read().expect("cache lock");
        let mut out: Vec<_> = entries
            .iter()
            .map(|(k, e)| CacheRecord {
                key: k.clone(),
                prompt_sha: e.prompt_sha.clone(),
                response: e.response.clone(),
            })
            .collect();
        out.sort_by(|a, b| a.key.cmp(&b.key));
        out
    }
}
