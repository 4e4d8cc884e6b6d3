//! On-disk response cache: one JSON record per (prompt hash, model).

use std::fs;
use std::io::ErrorKind;
use std::path::{Path, PathBuf};
use std::sync::Mutex;
use std::time::{SystemTime, UNIX_EPOCH};

use serde::{Deserialize, Serialize};

use super::prompt::sha256_hex;
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CacheRecord {
    pub prompt_hash: String,
    pub model: String,
    pub response: String,
    #[serde(default)]
    pub response_id: String,
    /// Seconds since the Unix epoch.
    pub timestamp: u64,
}

impl CacheRecord {
    pub fn new(prompt_hash: &str, model: &str, response: &str, response_id: &str) -> Self {
        let timestamp = SystemTime::now()
            .duration_since(UNIX_EPOCH)
            .map_or(0, |d| d.as_secs());
        CacheRecord {
            prompt_hash: prompt_hash.into(),
            model: model.into(),
            response: response.into(),
            response_id: response_id.into(),
            timestamp,
        }
    }
}

#[derive(Debug)]
pub struct ResponseCache {
    dir: PathBuf,
    writes: Mutex<()>,
}

impl ResponseCache {
    pub fn open(dir: impl Into<PathBuf>) -> Result<Self> {
        let dir = dir.into();
        fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
        Ok(ResponseCache {
            dir,
            writes: Mutex::new(()),
        })
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    fn path_for(&self, prompt_hash: &str, model: &str) -> PathBuf {
        let key = sha256_hex(&format!("{prompt_hash}\n{model}"));
        self.dir.join(format!("{key}.json"))
    }

    pub fn get(&self, prompt_hash: &str, model: &str) -> Result<Option<CacheRecord>> {
        let path = self.path_for(prompt_hash, model);
        let text = match fs::read_to_string(&path) {
            Ok(text) => text,
            Err(e) if e.kind() == ErrorKind::NotFound => return Ok(None),
            Err(e) => return Err(Error::io(path, e)),
        };
        let record: CacheRecord = serde_json::from_str(&text).map_err(|e| Error::CacheCorrupt {
            path: path.clone(),
            message: e.to_string(),
        })?;
        if record.prompt_hash != prompt_hash || record.model != model {
            return Err(Error::CacheCorrupt {
                path,
                message: "record key does not match its file".into(),
            });
        }
        Ok(Some(record))
    }

    /// Writes through a temporary file and a rename; writers are serialized.
    pub fn put(&self, record: &CacheRecord) -> Result<()> {
        let path = self.path_for(&record.prompt_hash, &record.model);
        let tmp = path.with_extension("json.tmp");
        let body = serde_json::to_string_pretty(record)?;
        let _guard = self.writes.lock().unwrap_or_else(|p| p.into_inner());
        fs::write(&tmp, body).map_err(|e| Error::io(&tmp, e))?;
        fs::rename(&tmp, &path).map_err(|e| Error::io(&path, e))
    }
}
