//! Persistent enhancement cache: append-only UTF-8 JSON Lines, one record
//! per (meme_id, step). Rereads are last-wins, so re-generation simply
//! appends.

use std::collections::HashMap;
use std::fs;
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::{EnhanceError, EnhancementStep};

/// One cached generation.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CacheLine {
    pub meme_id: String,
    pub step: EnhancementStep,
    pub model_id: String,
    pub prompt_hash: String,
    pub temperature: f64,
    pub text: String,
    pub ts: String,
}

/// In-memory index over a cache file.
#[derive(Debug, Default)]
pub struct EnhancementCache {
    entries: HashMap<(String, EnhancementStep), CacheLine>,
}

impl EnhancementCache {
    /// Load a cache file; a missing file yields an empty cache.
    pub fn load<P: AsRef<Path>>(path: P) -> Result<Self, EnhanceError> {
        let path = path.as_ref();
        let mut cache = Self::default();
        if !path.exists() {
            return Ok(cache);
        }
        let file = fs::File::open(path).map_err(|e| EnhanceError::Cache {
            path: path.display().to_string(),
            message: e.to_string(),
        })?;
        for (idx, line) in BufReader::new(file).lines().enumerate() {
            let line = line.map_err(|e| EnhanceError::Cache {
                path: path.display().to_string(),
                message: e.to_string(),
            })?;
            if line.trim().is_empty() {
                continue;
            }
            let record: CacheLine = serde_json::from_str(&line).map_err(|e| EnhanceError::Cache {
                path: path.display().to_string(),
                message: format!("line {}: {}", idx + 1, e),
            })?;
            cache.insert(record);
        }
        Ok(cache)
    }

    pub fn insert(&mut self, record: CacheLine) {
        self.entries
            .insert((record.meme_id.clone(), record.step), record);
    }

    /// Any cached text for (meme, step), regardless of provenance.
    pub fn get(&self, meme_id: &str, step: EnhancementStep) -> Option<&CacheLine> {
        self.entries.get(&(meme_id.to_string(), step))
    }

    /// A cached text valid for the given provenance; this is what makes
    /// reruns idempotent.
    pub fn get_matching(
        &self,
        meme_id: &str,
        step: EnhancementStep,
        model_id: &str,
        prompt_hash: &str,
    ) -> Option<&CacheLine> {
        self.get(meme_id, step)
            .filter(|line| line.model_id == model_id && line.prompt_hash == prompt_hash)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }
}

/// Single appender through which all workers funnel results.
pub struct CacheWriter {
    path: PathBuf,
    file: fs::File,
}

impl CacheWriter {
    pub fn append_to<P: AsRef<Path>>(path: P) -> Result<Self, EnhanceError> {
        let path = path.as_ref().to_path_buf();
        if let Some(parent) = path.parent() {
            if !parent.as_os_str().is_empty() {
                fs::create_dir_all(parent).map_err(|e| EnhanceError::Cache {
                    path: path.display().to_string(),
                    message: e.to_string(),
                })?;
            }
        }
        let file = fs::OpenOptions::new()
            .create(true)
            .append(true)
            .open(&path)
            .map_err(|e| EnhanceError::Cache {
                path: path.display().to_string(),
                message: e.to_string(),
            })?;
        Ok(Self { path, file })
    }

    pub fn append(&mut self, record: &CacheLine) -> Result<(), EnhanceError> {
        let json = serde_json::to_string(record).expect("cache line serializes");
        writeln!(self.file, "{json}").map_err(|e| EnhanceError::Cache {
            path: self.path.display().to_string(),
            message: e.to_string(),
        })?;
        self.file.flush().map_err(|e| EnhanceError::Cache {
            path: self.path.display().to_string(),
            message: e.to_string(),
        })
    }
}
