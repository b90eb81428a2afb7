use std::sync::Arc;

use async_trait::async_trait;
use chrono::{DateTime, Utc};
use serde_json::Value;
use uuid::Uuid;

use ump_core::access::{AccessPolicy, Caller};
use ump_core::jobs::{Job, JobManager, JobResults, Submission};
use ump_core::protocol::{ExecuteRequest, LandingPage, ProcessDescription, ProcessSummary};
use ump_core::ProblemDetail;

/// Hop-count header carried by forwarded executions.
pub const HOPS_HEADER: &str = "x-federation-hops";

/// Largest hop count a server accepts.
pub const MAX_HOPS: u32 = 4;

/// A description plus whether it came from a cache of an unreachable source.
#[derive(Debug, Clone, PartialEq)]
pub struct Described {
    pub description: ProcessDescription,
    pub stale: bool,
}

/// What the HTTP layer needs from a process server. Implemented by the
/// model server and by the federation platform.
#[async_trait]
pub trait Backend: Send + Sync + 'static {
    fn landing(&self) -> LandingPage;

    fn authenticate(&self, bearer: Option<&str>) -> Result<Caller, ProblemDetail>;

    /// Current policy snapshot.
    fn policy(&self) -> Arc<AccessPolicy>;

    fn jobs(&self) -> &JobManager;

    /// Summaries visible to `caller`, sorted by ID.
    async fn list_processes(&self, caller: &Caller) -> Vec<ProcessSummary>;

    async fn describe(&self, id: &str, caller: &Caller) -> Result<Described, ProblemDetail>;

    async fn execute(
        &self,
        id: &str,
        req: ExecuteRequest,
        caller: &Caller,
        hops: u32,
    ) -> Result<Submission, ProblemDetail>;

    /// Serialized outputs of a successful job.
    async fn results(&self, id: Uuid, caller: &Caller) -> Result<Vec<u8>, ProblemDetail> {
        match self.jobs().get_results(id, caller, &self.policy())? {
            JobResults::Stored(bytes) => Ok(bytes),
            JobResults::External(key) => Err(ProblemDetail::internal(format!("results held externally under {key}"))),
        }
    }

    async fn dismiss(&self, id: Uuid, caller: &Caller) -> Result<Job, ProblemDetail> {
        self.jobs().dismiss(id, caller, &self.policy())
    }

    /// Purges expired results; returns how many jobs were purged.
    fn sweep(&self, now: DateTime<Utc>) -> usize {
        self.jobs().sweep_expired(now)
    }

    fn health(&self) -> Value;
}
