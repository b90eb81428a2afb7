use std::fs::{File, OpenOptions};
use std::io::{BufRead, BufReader, Seek, SeekFrom, Write};
use std::path::{Path, PathBuf};

use parking_lot::Mutex;
use serde::{Deserialize, Serialize};

use super::{JobLog, JobRecord, StoreError};

#[derive(Debug, Default)]
pub struct MemoryJobLog {
    records: Mutex<Vec<(u64, JobRecord)>>,
}

impl MemoryJobLog {
    pub fn new() -> Self {
        Self::default()
    }
}

impl JobLog for MemoryJobLog {
    fn append(&self, record: &JobRecord) -> Result<u64, StoreError> {
        let mut records = self.records.lock();
        let seq = records.len() as u64 + 1;
        records.push((seq, record.clone()));
        Ok(seq)
    }

    fn records(&self) -> Result<Vec<(u64, JobRecord)>, StoreError> {
        Ok(self.records.lock().clone())
    }
}

#[derive(Serialize, Deserialize)]
struct Line {
    seq: u64,
    record: JobRecord,
}

struct Inner {
    file: File,
    records: Vec<(u64, JobRecord)>,
}

/// Newline-delimited JSON log with a single writer.
///
/// Opening the log keeps the longest prefix of complete, parseable lines
/// and truncates anything after it, so a crash mid-append never leaves a
/// torn record behind.
pub struct FileJobLog {
    path: PathBuf,
    inner: Mutex<Inner>,
}

impl std::fmt::Debug for FileJobLog {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("FileJobLog").field("path", &self.path).finish()
    }
}

impl FileJobLog {
    pub const FILE_NAME: &'static str = "jobs.log";

    /// Opens (or creates) `<dir>/jobs.log`.
    pub fn open(dir: &Path) -> Result<Self, StoreError> {
        std::fs::create_dir_all(dir)?;
        let path = dir.join(Self::FILE_NAME);
        let mut file = OpenOptions::new().create(true).read(true).append(true).open(&path)?;
        let mut records = Vec::new();
        let mut valid_len = 0u64;
        {
            let mut reader = BufReader::new(&file);
            let mut buf = String::new();
            loop {
                buf.clear();
                let n = reader.read_line(&mut buf)?;
                if n == 0 || !buf.ends_with('\n') {
                    break;
                }
                let Ok(line) = serde_json::from_str::<Line>(buf.trim_end()) else {
                    break;
                };
                let expected = records.last().map_or(1, |(s, _)| s + 1);
                if line.seq != expected {
                    break;
                }
                records.push((line.seq, line.record));
                valid_len += n as u64;
            }
        }
        if file.metadata()?.len() != valid_len {
            tracing::warn!(path = %path.display(), valid_len, "truncating torn job log tail");
            file.set_len(valid_len)?;
        }
        file.seek(SeekFrom::End(0))?;
        Ok(Self {
            path,
            inner: Mutex::new(Inner { file, records }),
        })
    }

    pub fn path(&self) -> &Path {
        &self.path
    }
}

impl JobLog for FileJobLog {
    fn append(&self, record: &JobRecord) -> Result<u64, StoreError> {
        let mut inner = self.inner.lock();
        let seq = inner.records.last().map_or(1, |(s, _)| s + 1);
        let mut bytes = serde_json::to_vec(&Line {
            seq,
            record: record.clone(),
        })
        .map_err(|e| StoreError::Invalid(e.to_string()))?;
        bytes.push(b'\n');
        // One write per record; a short write is repaired on the next open.
        inner.file.write_all(&bytes)?;
        inner.file.sync_data()?;
        inner.records.push((seq, record.clone()));
        Ok(seq)
    }

    fn records(&self) -> Result<Vec<(u64, JobRecord)>, StoreError> {
        Ok(self.inner.lock().records.clone())
    }
}
