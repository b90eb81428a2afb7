//! Durable job log and result blob storage.
//!
//! On-disk layout under a data directory:
//!
//! ```text
//! <dir>/jobs.log              one JSON object per line: {"seq": n, "record": JobRecord}
//! <dir>/results/<key>.json    raw result bytes (an outputs map)
//! <dir>/results/<key>.meta    {"contentType", "createdAt", "expiresAt"}
//! <dir>/results/<key>.gone    tombstone left by delete/sweep
//! ```

mod blobs;
mod log;

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::jobs::{Job, JobState};
use crate::protocol::{to_bytes, Inputs, ProblemDetail};

pub use blobs::{FileResultStore, MemoryResultStore};
pub use log::{FileJobLog, MemoryJobLog};

#[derive(Debug, thiserror::Error)]
pub enum StoreError {
    #[error("{0} not found")]
    NotFound(String),
    #[error("{0} has expired")]
    Gone(String),
    #[error("{0} already holds different content")]
    Conflict(String),
    #[error("invalid content: {0}")]
    Invalid(String),
    #[error("storage i/o: {0}")]
    Io(#[from] std::io::Error),
}

impl From<StoreError> for ProblemDetail {
    fn from(e: StoreError) -> Self {
        match e {
            StoreError::NotFound(_) => ProblemDetail::not_found(e.to_string()),
            StoreError::Gone(_) => ProblemDetail::gone(e.to_string()),
            StoreError::Conflict(_) => ProblemDetail::conflict(e.to_string()),
            StoreError::Invalid(_) => ProblemDetail::bad_request(e.to_string()),
            StoreError::Io(_) => ProblemDetail::internal(e.to_string()),
        }
    }
}

/// One job state transition as logged.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct JobRecord {
    pub job: Job,
    pub inputs_digest: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub provider: Option<String>,
}

/// SHA-256 over the canonical serialization of `inputs`, hex encoded.
pub fn inputs_digest(inputs: &Inputs) -> String {
    hex::encode(Sha256::digest(to_bytes(inputs)))
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct JobFilter {
    pub subject: Option<String>,
    pub process_id: Option<String>,
    pub state: Option<JobState>,
    pub since: Option<DateTime<Utc>>,
}

impl JobFilter {
    pub fn matches(&self, job: &Job) -> bool {
        self.subject.as_ref().is_none_or(|s| *s == job.owner)
            && self.process_id.as_ref().is_none_or(|p| *p == job.process_id)
            && self.state.is_none_or(|s| s == job.state)
            && self.since.is_none_or(|t| job.created_at >= t)
    }

    /// Builds a filter from query parameters; unknown keys or malformed
    /// values are a 400.
    pub fn from_query<'a>(params: impl IntoIterator<Item = (&'a str, &'a str)>) -> Result<(Self, Paging), ProblemDetail> {
        let mut filter = JobFilter::default();
        let mut paging = Paging::default();
        for (key, value) in params {
            match key {
                "subject" => filter.subject = Some(value.to_string()),
                "processId" => filter.process_id = Some(value.to_string()),
                "state" => {
                    filter.state = Some(
                        value
                            .parse()
                            .map_err(|_| ProblemDetail::bad_request(format!("unknown state {value:?}")))?,
                    )
                }
                "since" => {
                    filter.since = Some(
                        DateTime::parse_from_rfc3339(value)
                            .map_err(|e| ProblemDetail::bad_request(format!("since: {e}")))?
                            .with_timezone(&Utc),
                    )
                }
                "limit" | "offset" => paging.set(key, value)?,
                other => return Err(ProblemDetail::bad_request(format!("unknown filter {other:?}"))),
            }
        }
        Ok((filter, paging))
    }
}

pub const MAX_PAGE_LIMIT: usize = 1000;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Paging {
    pub limit: usize,
    pub offset: usize,
}

impl Default for Paging {
    fn default() -> Self {
        Self { limit: 100, offset: 0 }
    }
}

impl Paging {
    pub fn new(limit: usize, offset: usize) -> Result<Self, ProblemDetail> {
        if !(1..=MAX_PAGE_LIMIT).contains(&limit) {
            return Err(ProblemDetail::bad_request(format!("limit must be within 1..={MAX_PAGE_LIMIT}")));
        }
        Ok(Self { limit, offset })
    }

    /// Sets `limit` or `offset` from a query-string value.
    pub fn set(&mut self, key: &str, value: &str) -> Result<(), ProblemDetail> {
        let n: usize = value
            .parse()
            .map_err(|_| ProblemDetail::bad_request(format!("{key} must be a non-negative integer")))?;
        *self = match key {
            "limit" => Paging::new(n, self.offset)?,
            _ => Paging::new(self.limit, n)?,
        };
        Ok(())
    }

    pub fn apply<T>(&self, items: Vec<T>) -> Vec<T> {
        items.into_iter().skip(self.offset).take(self.limit).collect()
    }
}

/// Latest snapshot per job matching `filter`, newest first (ties by jobId).
pub(crate) fn latest_matching(records: &[(u64, JobRecord)], filter: &JobFilter) -> Vec<Job> {
    let mut latest = std::collections::HashMap::new();
    for (_, rec) in records {
        latest.insert(rec.job.job_id, &rec.job);
    }
    let mut jobs: Vec<Job> = latest.into_values().filter(|j| filter.matches(j)).cloned().collect();
    jobs.sort_by(|a, b| b.created_at.cmp(&a.created_at).then(a.job_id.cmp(&b.job_id)));
    jobs
}

/// Append-only log of job state transitions.
pub trait JobLog: Send + Sync {
    /// Appends a record and returns its sequence number (first is 1).
    fn append(&self, record: &JobRecord) -> Result<u64, StoreError>;

    /// Every record in append order.
    fn records(&self) -> Result<Vec<(u64, JobRecord)>, StoreError>;

    fn query_jobs(&self, filter: &JobFilter, paging: Paging) -> Result<Vec<Job>, StoreError> {
        Ok(paging.apply(latest_matching(&self.records()?, filter)))
    }

    /// Records of one job, in append order.
    fn history(&self, job_id: uuid::Uuid) -> Result<Vec<JobRecord>, StoreError> {
        Ok(self
            .records()?
            .into_iter()
            .map(|(_, r)| r)
            .filter(|r| r.job.job_id == job_id)
            .collect())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ResultBlob {
    pub key: String,
    pub bytes: Vec<u8>,
    pub content_type: String,
    pub created_at: DateTime<Utc>,
    pub expires_at: DateTime<Utc>,
}

impl ResultBlob {
    /// Checks that `bytes` is a JSON outputs map.
    pub fn check(&self) -> Result<(), StoreError> {
        if !crate::protocol::is_valid_token(&self.key) {
            return Err(StoreError::Invalid(format!("bad key {:?}", self.key)));
        }
        serde_json::from_slice::<crate::protocol::Outputs>(&self.bytes)
            .map(|_| ())
            .map_err(|e| StoreError::Invalid(format!("result is not an outputs map: {e}")))
    }
}

/// Keyed storage for result documents with expiry.
pub trait ResultStore: Send + Sync {
    /// Idempotent for identical bytes; different bytes under a live or
    /// tombstoned key are a conflict.
    fn put(&self, blob: ResultBlob) -> Result<(), StoreError>;

    /// The stored blob. Deleted or expired (as of `now`) keys are gone.
    fn get(&self, key: &str, now: DateTime<Utc>) -> Result<ResultBlob, StoreError>;

    /// Removes a blob, leaving a tombstone. Returns whether it existed.
    fn delete(&self, key: &str) -> Result<bool, StoreError>;

    /// Deletes every blob with `expiresAt < now`; returns how many.
    fn sweep(&self, now: DateTime<Utc>) -> Result<usize, StoreError>;
}
