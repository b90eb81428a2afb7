//! Job lifecycle, execution and result retention.
//!
//! Synchronous runs execute inline and leave no job behind. Asynchronous
//! runs become [`Job`]s in a bounded FIFO queue drained by a fixed worker
//! pool. Jobs whose execution happens elsewhere (platform jobs linked to an
//! upstream server) are created with [`JobManager::create_linked`] and
//! driven through [`JobManager::transition`].

use std::collections::HashMap;
use std::fmt;
use std::str::FromStr;
use std::sync::atomic::{AtomicBool, AtomicU8, Ordering};
use std::sync::{Arc, Weak};
use std::time::Instant;

use async_trait::async_trait;
use chrono::{DateTime, Duration, Utc};
use parking_lot::Mutex;
use serde::{Deserialize, Serialize};
use tokio::sync::mpsc;
use uuid::Uuid;

use crate::access::{AccessPolicy, Caller, UsageLedger, UsageRecord};
use crate::clock::{Clock, SystemClock};
use crate::protocol::{to_bytes, ExecuteRequest, Inputs, Outputs, ProblemDetail, JSON_MEDIA_TYPE};
use crate::store::{inputs_digest, JobLog, JobRecord, MemoryJobLog, MemoryResultStore, ResultBlob, ResultStore, StoreError};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum JobState {
    Accepted,
    Running,
    Successful,
    Failed,
    Dismissed,
}

impl JobState {
    pub const ALL: [JobState; 5] = [
        JobState::Accepted,
        JobState::Running,
        JobState::Successful,
        JobState::Failed,
        JobState::Dismissed,
    ];

    pub fn is_terminal(self) -> bool {
        matches!(self, JobState::Successful | JobState::Failed | JobState::Dismissed)
    }

    pub fn can_transition(self, to: JobState) -> bool {
        use JobState::*;
        matches!(
            (self, to),
            (Accepted, Running) | (Accepted, Dismissed) | (Running, Successful) | (Running, Failed) | (Running, Dismissed)
        )
    }

    pub fn as_str(self) -> &'static str {
        match self {
            JobState::Accepted => "accepted",
            JobState::Running => "running",
            JobState::Successful => "successful",
            JobState::Failed => "failed",
            JobState::Dismissed => "dismissed",
        }
    }
}

impl fmt::Display for JobState {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for JobState {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        JobState::ALL
            .into_iter()
            .find(|st| st.as_str() == s)
            .ok_or_else(|| format!("unknown job state {s:?}"))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct Job {
    pub job_id: Uuid,
    pub process_id: String,
    pub owner: String,
    pub state: JobState,
    pub progress: u8,
    pub message: String,
    pub created_at: DateTime<Utc>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub started_at: Option<DateTime<Utc>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub finished_at: Option<DateTime<Utc>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub result_ref: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub expires_at: Option<DateTime<Utc>>,
}

impl Job {
    pub fn accepted(job_id: Uuid, process_id: &str, owner: &str, now: DateTime<Utc>) -> Self {
        Self {
            job_id,
            process_id: process_id.to_string(),
            owner: owner.to_string(),
            state: JobState::Accepted,
            progress: 0,
            message: "queued".into(),
            created_at: now,
            started_at: None,
            finished_at: None,
            result_ref: None,
            expires_at: None,
        }
    }

    /// Checks the timestamp, result and progress invariants for the current state.
    pub fn check_invariants(&self) -> Result<(), String> {
        let s = self.state;
        if self.started_at.is_some() != (s != JobState::Accepted) {
            return Err(format!("startedAt presence wrong for {s}"));
        }
        if self.finished_at.is_some() != s.is_terminal() {
            return Err(format!("finishedAt presence wrong for {s}"));
        }
        if self.result_ref.is_some() != (s == JobState::Successful) {
            return Err(format!("resultRef presence wrong for {s}"));
        }
        if (self.progress == 100) != (s == JobState::Successful) {
            return Err(format!("progress {} inconsistent with {s}", self.progress));
        }
        if self.progress > 100 {
            return Err("progress above 100".into());
        }
        Ok(())
    }
}

/// Body of `GET /jobs`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct JobList {
    pub jobs: Vec<Job>,
    /// Matching jobs before paging.
    pub total: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct ExecutionOutcome {
    pub outputs: Outputs,
    pub compute_seconds: f64,
}

#[derive(Debug, Clone, thiserror::Error)]
pub enum ExecutionError {
    #[error("{0}")]
    Failed(String),
    #[error("invalid input: {0}")]
    InvalidInput(String),
    #[error("dismissed")]
    Cancelled,
    #[error("upstream error: {0}")]
    Upstream(ProblemDetail),
}

impl ExecutionError {
    /// Problem returned to a synchronous caller.
    pub fn to_problem(&self) -> ProblemDetail {
        match self {
            ExecutionError::Failed(msg) => ProblemDetail::internal(format!("process failed: {msg}")),
            ExecutionError::InvalidInput(msg) => {
                ProblemDetail::new(422, "invalid-inputs", "Invalid inputs", msg.clone())
            }
            ExecutionError::Cancelled => ProblemDetail::internal("execution cancelled"),
            ExecutionError::Upstream(p) => p.clone(),
        }
    }
}

/// Hooks handed to a running process: progress reporting and cooperative
/// cancellation.
#[derive(Debug, Clone, Default)]
pub struct ExecutionContext {
    progress: Arc<AtomicU8>,
    cancelled: Arc<AtomicBool>,
    /// Federation hop count of the request that triggered this run.
    pub hops: u32,
}

impl ExecutionContext {
    pub fn new(hops: u32) -> Self {
        Self {
            hops,
            ..Self::default()
        }
    }

    /// Records progress in percent. Values are capped at 99; 100 is
    /// reserved for successful completion.
    pub fn report_progress(&self, percent: u8) {
        self.progress.store(percent.min(99), Ordering::Relaxed);
    }

    pub fn progress(&self) -> u8 {
        self.progress.load(Ordering::Relaxed)
    }

    pub fn is_cancelled(&self) -> bool {
        self.cancelled.load(Ordering::Relaxed)
    }

    pub fn cancel(&self) {
        self.cancelled.store(true, Ordering::Relaxed);
    }
}

/// A runnable process implementation.
#[async_trait]
pub trait ProcessExecutor: Send + Sync {
    async fn execute(&self, inputs: Inputs, ctx: ExecutionContext) -> Result<Outputs, ExecutionError>;
}

#[derive(Debug, Clone)]
pub struct JobConfig {
    pub workers: usize,
    pub queue_capacity: usize,
    pub retention: Duration,
}

impl Default for JobConfig {
    fn default() -> Self {
        Self {
            workers: 4,
            queue_capacity: 256,
            retention: Duration::days(7),
        }
    }
}

/// How a job's results are held.
#[derive(Debug, Clone, PartialEq)]
pub enum JobResults {
    /// The serialized outputs map.
    Stored(Vec<u8>),
    /// Results live elsewhere; the string is the reference recorded at success.
    External(String),
}

/// A requested state change.
#[derive(Debug, Clone)]
pub enum Transition {
    Start,
    /// Store `outcome` locally and finish.
    Succeed(ExecutionOutcome),
    /// Finish with results held elsewhere under `result_ref`.
    SucceedExternal { result_ref: String, compute_seconds: f64 },
    Fail(String),
    Dismiss(String),
}

impl Transition {
    pub fn target(&self) -> JobState {
        match self {
            Transition::Start => JobState::Running,
            Transition::Succeed(_) | Transition::SucceedExternal { .. } => JobState::Successful,
            Transition::Fail(_) => JobState::Failed,
            Transition::Dismiss(_) => JobState::Dismissed,
        }
    }

    /// A representative transition into `target`. No transition leads back
    /// to `accepted`.
    pub fn into_state(target: JobState) -> Option<Transition> {
        match target {
            JobState::Accepted => None,
            JobState::Running => Some(Transition::Start),
            JobState::Successful => Some(Transition::Succeed(ExecutionOutcome {
                outputs: Outputs::new(),
                compute_seconds: 0.0,
            })),
            JobState::Failed => Some(Transition::Fail("failed".into())),
            JobState::Dismissed => Some(Transition::Dismiss("dismissed".into())),
        }
    }
}

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum JobError {
    #[error("no job {0}")]
    NotFound(Uuid),
    #[error("illegal transition {from} -> {to}")]
    IllegalTransition { from: JobState, to: JobState },
    #[error("cannot store results: {0}")]
    Storage(String),
}

impl From<JobError> for ProblemDetail {
    fn from(e: JobError) -> Self {
        match e {
            JobError::NotFound(_) => ProblemDetail::not_found(e.to_string()),
            JobError::IllegalTransition { .. } => ProblemDetail::conflict(e.to_string()),
            JobError::Storage(_) => ProblemDetail::internal(e.to_string()),
        }
    }
}

/// Result of [`JobManager::submit`].
#[derive(Debug)]
pub enum Submission {
    Sync(ExecutionOutcome),
    Accepted(Job),
}

struct Pending {
    executor: Arc<dyn ProcessExecutor>,
    inputs: Inputs,
    requested_outputs: Option<Vec<String>>,
}

struct Entry {
    job: Job,
    ctx: ExecutionContext,
    pending: Option<Pending>,
    inputs_digest: String,
    provider: Option<String>,
    compute_seconds: Option<f64>,
    external_results: bool,
    purged: bool,
    retention: Option<Duration>,
}

impl Entry {
    fn snapshot(&self) -> Job {
        let mut job = self.job.clone();
        if job.state == JobState::Running {
            job.progress = self.ctx.progress();
        }
        job
    }
}

struct Inner {
    config: JobConfig,
    clock: Arc<dyn Clock>,
    results: Arc<dyn ResultStore>,
    log: Arc<dyn JobLog>,
    usage: Arc<UsageLedger>,
    jobs: Mutex<HashMap<Uuid, Entry>>,
    queue: mpsc::Sender<Uuid>,
}

/// Storage, clock and accounting collaborators of a [`JobManager`].
#[derive(Clone)]
pub struct JobDeps {
    pub clock: Arc<dyn Clock>,
    pub results: Arc<dyn ResultStore>,
    pub log: Arc<dyn JobLog>,
    pub usage: Arc<UsageLedger>,
}

impl Default for JobDeps {
    fn default() -> Self {
        Self {
            clock: Arc::new(SystemClock),
            results: Arc::new(MemoryResultStore::new()),
            log: Arc::new(MemoryJobLog::new()),
            usage: Arc::new(UsageLedger::new()),
        }
    }
}

/// Shared, internally synchronized job registry plus its worker pool.
#[derive(Clone)]
pub struct JobManager {
    inner: Arc<Inner>,
}

impl fmt::Debug for JobManager {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("JobManager")
            .field("config", &self.inner.config)
            .field("jobs", &self.inner.jobs.lock().len())
            .finish()
    }
}

impl JobManager {
    /// Creates the registry and spawns its workers on the current tokio runtime.
    pub fn start(config: JobConfig, deps: JobDeps) -> Self {
        assert!(config.workers >= 1, "worker pool needs at least one worker");
        let (tx, rx) = mpsc::channel(config.queue_capacity.max(1));
        let inner = Arc::new(Inner {
            config,
            clock: deps.clock,
            results: deps.results,
            log: deps.log,
            usage: deps.usage,
            jobs: Mutex::new(HashMap::new()),
            queue: tx,
        });
        let rx = Arc::new(tokio::sync::Mutex::new(rx));
        for _ in 0..inner.config.workers {
            tokio::spawn(worker(Arc::downgrade(&inner), rx.clone()));
        }
        Self { inner }
    }

    pub fn usage(&self) -> &Arc<UsageLedger> {
        &self.inner.usage
    }

    pub fn clock(&self) -> &Arc<dyn Clock> {
        &self.inner.clock
    }

    pub fn log(&self) -> &Arc<dyn JobLog> {
        &self.inner.log
    }

    pub fn retention(&self) -> Duration {
        self.inner.config.retention
    }

    fn active_jobs_of(jobs: &HashMap<Uuid, Entry>, subject: &str) -> usize {
        jobs.values()
            .filter(|e| e.job.owner == subject && !e.job.state.is_terminal())
            .count()
    }

    /// Runs `req` inline (`preferAsync = false`) or queues it as a job.
    pub async fn submit(
        &self,
        process_id: &str,
        req: ExecuteRequest,
        caller: &Caller,
        executor: Arc<dyn ProcessExecutor>,
        hops: u32,
    ) -> Result<Submission, ProblemDetail> {
        let now = self.inner.clock.now();
        if !req.prefer_async {
            self.inner.usage.check(caller, None, now)?;
            let started = Instant::now();
            let result = run_isolated(executor, req.inputs, ExecutionContext::new(hops)).await;
            let compute_seconds = started.elapsed().as_secs_f64();
            self.inner.usage.record(UsageRecord {
                subject: caller.subject().to_string(),
                process_id: process_id.to_string(),
                job_id: "sync".into(),
                compute_seconds,
                timestamp: self.inner.clock.now(),
            });
            let outputs = select_outputs(result.map_err(|e| e.to_problem())?, req.requested_outputs.as_deref());
            return Ok(Submission::Sync(ExecutionOutcome {
                outputs,
                compute_seconds,
            }));
        }

        let digest = inputs_digest(&req.inputs);
        let pending = Pending {
            executor,
            inputs: req.inputs,
            requested_outputs: req.requested_outputs,
        };
        let job = self.insert(process_id, caller, digest, None, Some(pending), now)?;
        Ok(Submission::Accepted(job))
    }

    /// Creates an accepted job whose execution is driven externally.
    pub fn create_linked(
        &self,
        process_id: &str,
        caller: &Caller,
        inputs: &Inputs,
        provider: &str,
    ) -> Result<Job, ProblemDetail> {
        let now = self.inner.clock.now();
        self.insert(process_id, caller, inputs_digest(inputs), Some(provider.to_string()), None, now)
    }

    /// Checks quota, registers the job and, for local jobs, enqueues it.
    fn insert(
        &self,
        process_id: &str,
        caller: &Caller,
        digest: String,
        provider: Option<String>,
        pending: Option<Pending>,
        now: DateTime<Utc>,
    ) -> Result<Job, ProblemDetail> {
        let mut jobs = self.inner.jobs.lock();
        let active = Self::active_jobs_of(&jobs, caller.subject());
        self.inner.usage.check(caller, Some(active), now)?;
        let permit = match pending {
            Some(_) => Some(self.inner.queue.try_reserve().map_err(|_| {
                ProblemDetail::too_many_requests(format!("job queue is full ({} waiting)", self.inner.config.queue_capacity))
            })?),
            None => None,
        };
        let id = Uuid::new_v4();
        let job = Job::accepted(id, process_id, caller.subject(), now);
        let entry = Entry {
            job: job.clone(),
            ctx: ExecutionContext::default(),
            pending,
            inputs_digest: digest,
            provider,
            compute_seconds: None,
            external_results: false,
            purged: false,
            retention: None,
        };
        self.append_record(&entry);
        jobs.insert(id, entry);
        if let Some(permit) = permit {
            permit.send(id);
        }
        Ok(job)
    }

    fn append_record(&self, entry: &Entry) {
        let record = JobRecord {
            job: entry.job.clone(),
            inputs_digest: entry.inputs_digest.clone(),
            provider: entry.provider.clone(),
        };
        if let Err(e) = self.inner.log.append(&record) {
            tracing::warn!(job = %entry.job.job_id, error = %e, "job log append failed");
        }
    }

    /// Applies a state change if it is legal from the job's current state.
    pub fn transition(&self, id: Uuid, change: Transition) -> Result<Job, JobError> {
        let now = self.inner.clock.now();
        let mut jobs = self.inner.jobs.lock();
        let entry = jobs.get_mut(&id).ok_or(JobError::NotFound(id))?;
        let from = entry.job.state;
        let to = change.target();
        if !from.can_transition(to) {
            return Err(JobError::IllegalTransition { from, to });
        }
        let job = &mut entry.job;
        match change {
            Transition::Start => {
                job.started_at = Some(now);
                job.message = "running".into();
            }
            Transition::Succeed(outcome) => {
                let key = id.simple().to_string();
                let expires_at = now + entry.retention.unwrap_or(self.inner.config.retention);
                self.inner
                    .results
                    .put(ResultBlob {
                        key: key.clone(),
                        bytes: to_bytes(&outcome.outputs),
                        content_type: JSON_MEDIA_TYPE.into(),
                        created_at: now,
                        expires_at,
                    })
                    .map_err(|e| JobError::Storage(e.to_string()))?;
                job.result_ref = Some(key);
                job.expires_at = Some(expires_at);
                job.progress = 100;
                job.message = "completed".into();
                entry.compute_seconds = Some(outcome.compute_seconds);
            }
            Transition::SucceedExternal {
                result_ref,
                compute_seconds,
            } => {
                job.result_ref = Some(result_ref);
                job.expires_at = Some(now + entry.retention.unwrap_or(self.inner.config.retention));
                job.progress = 100;
                job.message = "completed".into();
                entry.compute_seconds = Some(compute_seconds);
                entry.external_results = true;
            }
            Transition::Fail(message) => {
                job.progress = entry.ctx.progress();
                job.message = if message.is_empty() { "failed".into() } else { message };
            }
            Transition::Dismiss(message) => {
                job.progress = entry.ctx.progress();
                job.message = message;
                entry.ctx.cancel();
                entry.pending = None;
            }
        }
        if to.is_terminal() {
            job.finished_at = Some(now);
            // accepted -> dismissed: startedAt is required outside `accepted`.
            job.started_at.get_or_insert(now);
        }
        job.state = to;
        debug_assert_eq!(job.check_invariants(), Ok(()));
        let snapshot = entry.snapshot();
        self.append_record(entry);
        Ok(snapshot)
    }

    /// Overrides the result retention of one job.
    pub fn set_retention(&self, id: Uuid, retention: Duration) {
        if let Some(entry) = self.inner.jobs.lock().get_mut(&id) {
            entry.retention = Some(retention);
        }
    }

    /// Sets the progress of a running job (ignored otherwise).
    pub fn report_progress(&self, id: Uuid, percent: u8) {
        if let Some(entry) = self.inner.jobs.lock().get(&id) {
            if entry.job.state == JobState::Running {
                entry.ctx.report_progress(percent);
            }
        }
    }

    fn authorized(&self, id: Uuid, caller: &Caller, policy: &AccessPolicy) -> Result<Job, ProblemDetail> {
        let jobs = self.inner.jobs.lock();
        let entry = jobs
            .get(&id)
            .ok_or_else(|| ProblemDetail::not_found(format!("no job {id}")))?;
        if !policy.authorize_job(caller, &entry.job.owner).is_allow() {
            return Err(ProblemDetail::forbidden(format!("{} does not own job {id}", caller.subject())));
        }
        Ok(entry.snapshot())
    }

    pub fn get_status(&self, id: Uuid, caller: &Caller, policy: &AccessPolicy) -> Result<Job, ProblemDetail> {
        self.authorized(id, caller, policy)
    }

    /// Unchecked snapshot, for internal bookkeeping.
    pub fn peek(&self, id: Uuid) -> Option<Job> {
        self.inner.jobs.lock().get(&id).map(Entry::snapshot)
    }

    /// Compute seconds recorded for a finished job.
    pub fn compute_seconds(&self, id: Uuid) -> Option<f64> {
        self.inner.jobs.lock().get(&id).and_then(|e| e.compute_seconds)
    }

    pub fn get_results(&self, id: Uuid, caller: &Caller, policy: &AccessPolicy) -> Result<JobResults, ProblemDetail> {
        let job = self.authorized(id, caller, policy)?;
        if job.state != JobState::Successful {
            return Err(ProblemDetail::not_found(format!("results not available: job {id} is {}", job.state)));
        }
        let now = self.inner.clock.now();
        let purged = self.inner.jobs.lock().get(&id).is_some_and(|e| e.purged);
        if purged || job.expires_at.is_some_and(|t| t < now) {
            return Err(ProblemDetail::gone(format!("results of job {id} have expired")));
        }
        let key = job.result_ref.expect("successful jobs carry a resultRef");
        if self.inner.jobs.lock().get(&id).is_some_and(|e| e.external_results) {
            return Ok(JobResults::External(key));
        }
        match self.inner.results.get(&key, now) {
            Ok(blob) => Ok(JobResults::Stored(blob.bytes)),
            Err(StoreError::Gone(_)) | Err(StoreError::NotFound(_)) => {
                Err(ProblemDetail::gone(format!("results of job {id} have expired")))
            }
            Err(e) => Err(e.into()),
        }
    }

    /// Moves an accepted or running job to `dismissed` and signals its worker.
    pub fn dismiss(&self, id: Uuid, caller: &Caller, policy: &AccessPolicy) -> Result<Job, ProblemDetail> {
        self.authorized(id, caller, policy)?;
        self.transition(id, Transition::Dismiss(format!("dismissed by {}", caller.subject())))
            .map_err(ProblemDetail::from)
    }

    /// Jobs visible to `caller` (own jobs; all jobs for admins), newest first.
    pub fn list(&self, caller: &Caller, policy: &AccessPolicy) -> Vec<Job> {
        let admin = policy.is_admin(caller);
        let mut jobs: Vec<Job> = self
            .inner
            .jobs
            .lock()
            .values()
            .filter(|e| admin || e.job.owner == caller.subject())
            .map(Entry::snapshot)
            .collect();
        jobs.sort_by(|a, b| b.created_at.cmp(&a.created_at).then(a.job_id.cmp(&b.job_id)));
        jobs
    }

    /// Non-terminal jobs, for pollers.
    pub fn active_job_ids(&self) -> Vec<Uuid> {
        self.inner
            .jobs
            .lock()
            .values()
            .filter(|e| !e.job.state.is_terminal())
            .map(|e| e.job.job_id)
            .collect()
    }

    /// `(running, accepted)` counts.
    pub fn counts(&self) -> (usize, usize) {
        let jobs = self.inner.jobs.lock();
        let count = |s| jobs.values().filter(|e| e.job.state == s).count();
        (count(JobState::Running), count(JobState::Accepted))
    }

    pub fn len(&self) -> usize {
        self.inner.jobs.lock().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Purges results of successful jobs with `expiresAt < now`. Job
    /// metadata stays. Returns the number of jobs purged by this call.
    pub fn sweep_expired(&self, now: DateTime<Utc>) -> usize {
        let mut jobs = self.inner.jobs.lock();
        let mut purged = 0;
        for entry in jobs.values_mut() {
            let expired = entry.job.state == JobState::Successful
                && !entry.purged
                && entry.job.expires_at.is_some_and(|t| t < now);
            if !expired {
                continue;
            }
            if let Some(key) = &entry.job.result_ref {
                if let Err(e) = self.inner.results.delete(key) {
                    tracing::warn!(job = %entry.job.job_id, error = %e, "result purge failed");
                    continue;
                }
            }
            entry.purged = true;
            purged += 1;
        }
        purged
    }

    fn take_pending(&self, id: Uuid) -> Option<(Pending, ExecutionContext)> {
        let mut jobs = self.inner.jobs.lock();
        let entry = jobs.get_mut(&id)?;
        let pending = entry.pending.take()?;
        Some((pending, entry.ctx.clone()))
    }

    /// Appends a usage record for a job and remembers its compute time.
    pub fn record_usage(&self, id: Uuid, compute_seconds: f64) {
        let job = {
            let mut jobs = self.inner.jobs.lock();
            let Some(entry) = jobs.get_mut(&id) else { return };
            entry.compute_seconds = Some(compute_seconds);
            entry.job.clone()
        };
        self.inner.usage.record(UsageRecord {
            subject: job.owner,
            process_id: job.process_id,
            job_id: id.to_string(),
            compute_seconds,
            timestamp: self.inner.clock.now(),
        });
    }
}

fn select_outputs(mut outputs: Outputs, requested: Option<&[String]>) -> Outputs {
    if let Some(names) = requested {
        outputs.retain(|k, _| names.iter().any(|n| n == k));
    }
    outputs
}

/// Runs an executor on its own task so a panic surfaces as a failure.
async fn run_isolated(
    executor: Arc<dyn ProcessExecutor>,
    inputs: Inputs,
    ctx: ExecutionContext,
) -> Result<Outputs, ExecutionError> {
    match tokio::spawn(async move { executor.execute(inputs, ctx).await }).await {
        Ok(result) => result,
        Err(e) if e.is_panic() => Err(ExecutionError::Failed("process panicked".into())),
        Err(e) => Err(ExecutionError::Failed(e.to_string())),
    }
}

async fn worker(inner: Weak<Inner>, queue: Arc<tokio::sync::Mutex<mpsc::Receiver<Uuid>>>) {
    loop {
        let next = queue.lock().await.recv().await;
        let Some(id) = next else { return };
        let Some(inner) = inner.upgrade() else { return };
        let manager = JobManager { inner };
        run_job(&manager, id).await;
    }
}

async fn run_job(manager: &JobManager, id: Uuid) {
    // Dismissed while queued: nothing pending, nothing to run.
    let Some((pending, ctx)) = manager.take_pending(id) else { return };
    if manager.transition(id, Transition::Start).is_err() {
        return;
    }
    let started = Instant::now();
    let result = run_isolated(pending.executor, pending.inputs, ctx.clone()).await;
    let compute_seconds = started.elapsed().as_secs_f64();
    manager.record_usage(id, compute_seconds);
    let change = match result {
        _ if ctx.is_cancelled() => return,
        Ok(outputs) => Transition::Succeed(ExecutionOutcome {
            outputs: select_outputs(outputs, pending.requested_outputs.as_deref()),
            compute_seconds,
        }),
        Err(e) => Transition::Fail(e.to_string()),
    };
    if let Err(e) = manager.transition(id, change) {
        if let JobError::Storage(msg) = &e {
            let _ = manager.transition(id, Transition::Fail(msg.clone()));
        }
        tracing::debug!(job = %id, error = %e, "final transition rejected");
    }
}
