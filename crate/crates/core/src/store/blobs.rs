use std::collections::{HashMap, HashSet};
use std::path::{Path, PathBuf};

use chrono::{DateTime, Utc};
use parking_lot::Mutex;
use serde::{Deserialize, Serialize};

use super::{ResultBlob, ResultStore, StoreError};

#[derive(Debug, Default)]
struct Blobs {
    live: HashMap<String, ResultBlob>,
    tombstones: HashSet<String>,
}

#[derive(Debug, Default)]
pub struct MemoryResultStore {
    blobs: Mutex<Blobs>,
}

impl MemoryResultStore {
    pub fn new() -> Self {
        Self::default()
    }
}

impl ResultStore for MemoryResultStore {
    fn put(&self, blob: ResultBlob) -> Result<(), StoreError> {
        blob.check()?;
        let mut blobs = self.blobs.lock();
        if blobs.tombstones.contains(&blob.key) {
            return Err(StoreError::Conflict(blob.key));
        }
        match blobs.live.get(&blob.key) {
            Some(existing) if existing.bytes == blob.bytes => Ok(()),
            Some(_) => Err(StoreError::Conflict(blob.key)),
            None => {
                blobs.live.insert(blob.key.clone(), blob);
                Ok(())
            }
        }
    }

    fn get(&self, key: &str, now: DateTime<Utc>) -> Result<ResultBlob, StoreError> {
        let blobs = self.blobs.lock();
        match blobs.live.get(key) {
            Some(b) if b.expires_at < now => Err(StoreError::Gone(key.into())),
            Some(b) => Ok(b.clone()),
            None if blobs.tombstones.contains(key) => Err(StoreError::Gone(key.into())),
            None => Err(StoreError::NotFound(key.into())),
        }
    }

    fn delete(&self, key: &str) -> Result<bool, StoreError> {
        let mut blobs = self.blobs.lock();
        let existed = blobs.live.remove(key).is_some();
        if existed {
            blobs.tombstones.insert(key.to_string());
        }
        Ok(existed)
    }

    fn sweep(&self, now: DateTime<Utc>) -> Result<usize, StoreError> {
        let mut blobs = self.blobs.lock();
        let expired: Vec<String> = blobs
            .live
            .values()
            .filter(|b| b.expires_at < now)
            .map(|b| b.key.clone())
            .collect();
        for key in &expired {
            blobs.live.remove(key);
            blobs.tombstones.insert(key.clone());
        }
        Ok(expired.len())
    }
}

#[derive(Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
struct Meta {
    content_type: String,
    created_at: DateTime<Utc>,
    expires_at: DateTime<Utc>,
}

/// Blob directory keyed by result reference. Writes go through a temporary
/// file and a rename; the `.meta` file is written last and marks the blob
/// as complete.
#[derive(Debug)]
pub struct FileResultStore {
    dir: PathBuf,
    lock: Mutex<()>,
}

impl FileResultStore {
    pub fn open(dir: &Path) -> Result<Self, StoreError> {
        let dir = dir.join("results");
        std::fs::create_dir_all(&dir)?;
        Ok(Self {
            dir,
            lock: Mutex::new(()),
        })
    }

    fn path(&self, key: &str, ext: &str) -> Result<PathBuf, StoreError> {
        if !crate::protocol::is_valid_token(key) {
            return Err(StoreError::Invalid(format!("bad key {key:?}")));
        }
        Ok(self.dir.join(format!("{key}.{ext}")))
    }

    fn write_atomic(path: &Path, bytes: &[u8]) -> Result<(), StoreError> {
        let tmp = path.with_extension("tmp");
        std::fs::write(&tmp, bytes)?;
        std::fs::rename(&tmp, path)?;
        Ok(())
    }

    fn read(&self, key: &str) -> Result<Option<ResultBlob>, StoreError> {
        let meta_path = self.path(key, "meta")?;
        let meta: Meta = match std::fs::read(&meta_path) {
            Ok(bytes) => serde_json::from_slice(&bytes).map_err(|e| StoreError::Invalid(e.to_string()))?,
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => return Ok(None),
            Err(e) => return Err(e.into()),
        };
        let bytes = std::fs::read(self.path(key, "json")?)?;
        Ok(Some(ResultBlob {
            key: key.to_string(),
            bytes,
            content_type: meta.content_type,
            created_at: meta.created_at,
            expires_at: meta.expires_at,
        }))
    }

    fn remove(&self, key: &str) -> Result<bool, StoreError> {
        let meta = self.path(key, "meta")?;
        if !meta.exists() {
            return Ok(false);
        }
        std::fs::write(self.path(key, "gone")?, b"")?;
        std::fs::remove_file(&meta)?;
        let _ = std::fs::remove_file(self.path(key, "json")?);
        Ok(true)
    }
}

impl ResultStore for FileResultStore {
    fn put(&self, blob: ResultBlob) -> Result<(), StoreError> {
        blob.check()?;
        let _guard = self.lock.lock();
        if self.path(&blob.key, "gone")?.exists() {
            return Err(StoreError::Conflict(blob.key));
        }
        if let Some(existing) = self.read(&blob.key)? {
            return if existing.bytes == blob.bytes {
                Ok(())
            } else {
                Err(StoreError::Conflict(blob.key))
            };
        }
        Self::write_atomic(&self.path(&blob.key, "json")?, &blob.bytes)?;
        let meta = Meta {
            content_type: blob.content_type,
            created_at: blob.created_at,
            expires_at: blob.expires_at,
        };
        let meta = serde_json::to_vec(&meta).map_err(|e| StoreError::Invalid(e.to_string()))?;
        Self::write_atomic(&self.path(&blob.key, "meta")?, &meta)
    }

    fn get(&self, key: &str, now: DateTime<Utc>) -> Result<ResultBlob, StoreError> {
        let _guard = self.lock.lock();
        match self.read(key)? {
            Some(b) if b.expires_at < now => Err(StoreError::Gone(key.into())),
            Some(b) => Ok(b),
            None if self.path(key, "gone")?.exists() => Err(StoreError::Gone(key.into())),
            None => Err(StoreError::NotFound(key.into())),
        }
    }

    fn delete(&self, key: &str) -> Result<bool, StoreError> {
        let _guard = self.lock.lock();
        self.remove(key)
    }

    fn sweep(&self, now: DateTime<Utc>) -> Result<usize, StoreError> {
        let _guard = self.lock.lock();
        let mut purged = 0;
        for entry in std::fs::read_dir(&self.dir)? {
            let path = entry?.path();
            if path.extension().and_then(|e| e.to_str()) != Some("meta") {
                continue;
            }
            let Some(key) = path.file_stem().and_then(|s| s.to_str()).map(String::from) else {
                continue;
            };
            if let Some(blob) = self.read(&key)? {
                if blob.expires_at < now && self.remove(&key)? {
                    purged += 1;
                }
            }
        }
        Ok(purged)
    }
}
