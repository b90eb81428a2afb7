//! Federation platform. Mirrors the catalogs of configured providers under
//! `providerId:localId`, forwards executions, follows remote jobs and either
//! stores their results or proxies reads upstream.

mod catalog;
mod config;

pub use catalog::{Catalog, MirroredProcess, ProviderStatus, RefreshOutcome};
pub use config::{AuthSection, JobsSection, PlatformConfig, ProviderConfig, ServerSection};

use std::collections::{BTreeMap, HashMap};
use std::sync::{Arc, Weak};
use std::time::Duration;

use async_trait::async_trait;
use futures::future::join_all;
use parking_lot::{Mutex, RwLock};
use serde::{Deserialize, Serialize};
use serde_json::Value;
use tokio::time::Instant;
use uuid::Uuid;

use ump_core::access::{AccessPolicy, Authenticator, Caller, TokenStore, UsageRecord};
use ump_core::jobs::{
    ExecutionOutcome, Job, JobConfig, JobDeps, JobManager, JobResults, JobState, Submission, Transition,
};
use ump_core::protocol::{
    from_bytes, landing_page, ExecuteRequest, LandingPage, Outputs, ProcessDescription, ProcessSummary,
    NAMESPACE_SEPARATOR,
};
use ump_core::store::{FileJobLog, FileResultStore};
use ump_core::ProblemDetail;

use crate::backend::{Backend, Described};
use crate::client::{ClientError, Executed, ProcessClient};
use crate::config::ConfigError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LinkMode {
    Sync,
    Async,
}

/// Ties a platform job to the upstream job executing it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct RemoteJobLink {
    pub platform_job_id: Uuid,
    pub provider: String,
    pub upstream_job_id: String,
    pub mode: LinkMode,
    pub mirror_results: bool,
}

struct PollState {
    link: RemoteJobLink,
    next_due: Instant,
    interval: Duration,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct JobCounts {
    /// Running jobs.
    pub active: usize,
    /// Accepted jobs not yet running.
    pub queued: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlatformHealth {
    pub providers: Vec<ProviderStatus>,
    pub jobs: JobCounts,
}

/// Configuration-derived state, swapped as a whole on reload.
struct Snapshot {
    config: PlatformConfig,
    policy: Arc<AccessPolicy>,
    clients: BTreeMap<String, ProcessClient>,
}

impl Snapshot {
    fn build(config: PlatformConfig) -> Result<Self, ConfigError> {
        let mut clients = BTreeMap::new();
        for p in &config.providers {
            let client = ProcessClient::new(&p.base_url, p.auth_token.clone(), Some(p.timeout()))
                .map_err(|e| ConfigError::Invalid(format!("provider {}: {e}", p.provider_id)))?;
            clients.insert(p.provider_id.clone(), client);
        }
        Ok(Self {
            policy: Arc::new(config.policy()),
            config,
            clients,
        })
    }
}

fn load_tokens(config: &PlatformConfig) -> Result<TokenStore, ConfigError> {
    match &config.auth.token_file {
        Some(path) => TokenStore::load(path).map_err(|e| ConfigError::Invalid(e.to_string())),
        None => Ok(TokenStore::default()),
    }
}

pub struct Platform {
    snapshot: RwLock<Arc<Snapshot>>,
    catalog: RwLock<Arc<Catalog>>,
    auth: Authenticator,
    jobs: JobManager,
    links: Mutex<HashMap<Uuid, PollState>>,
    refresh_lock: tokio::sync::Mutex<()>,
}

impl Platform {
    /// Builds the platform, refreshes the catalog once and starts the catalog
    /// refresher and the remote job poller.
    pub async fn start(config: PlatformConfig) -> Result<Arc<Self>, ConfigError> {
        let mut deps = JobDeps::default();
        if let Some(dir) = &config.server.data_dir {
            deps.log = Arc::new(FileJobLog::open(dir).map_err(|e| ConfigError::Io(e.to_string()))?);
            deps.results = Arc::new(FileResultStore::open(dir).map_err(|e| ConfigError::Io(e.to_string()))?);
        }
        Self::start_with(config, deps).await
    }

    pub async fn start_with(config: PlatformConfig, deps: JobDeps) -> Result<Arc<Self>, ConfigError> {
        config.validate()?;
        let tokens = load_tokens(&config)?;
        let jobs = JobManager::start(
            JobConfig {
                workers: config.jobs.worker_pool_size,
                queue_capacity: config.jobs.queue_capacity,
                ..JobConfig::default()
            },
            deps,
        );
        let platform = Arc::new(Self {
            snapshot: RwLock::new(Arc::new(Snapshot::build(config)?)),
            catalog: RwLock::new(Arc::new(Catalog::default())),
            auth: Authenticator::new(tokens),
            jobs,
            links: Mutex::new(HashMap::new()),
            refresh_lock: tokio::sync::Mutex::new(()),
        });
        platform.refresh_catalog().await;
        tokio::spawn(refresher(Arc::downgrade(&platform)));
        tokio::spawn(poller(Arc::downgrade(&platform)));
        Ok(platform)
    }

    pub fn config(&self) -> PlatformConfig {
        self.snapshot.read().config.clone()
    }

    fn snapshot(&self) -> Arc<Snapshot> {
        self.snapshot.read().clone()
    }

    pub fn catalog(&self) -> Arc<Catalog> {
        self.catalog.read().clone()
    }

    /// Atomically replaces the provider set, policy and tokens, then
    /// refreshes the catalog. On error the previous configuration stays.
    pub async fn reload(&self, config: PlatformConfig) -> Result<BTreeMap<String, RefreshOutcome>, ConfigError> {
        config.validate()?;
        let tokens = load_tokens(&config)?;
        let snapshot = Snapshot::build(config)?;
        *self.snapshot.write() = Arc::new(snapshot);
        self.auth.replace(tokens);
        Ok(self.refresh_catalog().await)
    }

    /// Fetches every provider's catalog concurrently, each bounded by its
    /// timeout. Unreachable providers keep their last-known entries.
    pub async fn refresh_catalog(&self) -> BTreeMap<String, RefreshOutcome> {
        let _guard = self.refresh_lock.lock().await;
        let snap = self.snapshot();
        let fetches = snap.config.providers.iter().map(|p| {
            let client = snap.clients[&p.provider_id].clone();
            async move {
                let result = tokio::time::timeout(p.timeout(), fetch_provider(&client, p)).await;
                let result = match result {
                    Ok(r) => r.map_err(|e| e.to_string()),
                    Err(_) => Err(format!("no answer within {} ms", p.timeout_millis)),
                };
                (p.provider_id.clone(), result)
            }
        });
        let results = join_all(fetches).await;
        let now = self.jobs.clock().now();
        let mut catalog = self
            .catalog()
            .retain_providers(|id| snap.config.provider(id).is_some());
        let mut outcomes = BTreeMap::new();
        for (provider, result) in results {
            let outcome = match result {
                Ok(descriptions) => {
                    let process_count = descriptions.len();
                    catalog = catalog.with_fetched(&provider, descriptions, now);
                    RefreshOutcome::Reachable { process_count }
                }
                Err(error) => {
                    tracing::warn!(%provider, %error, "provider unreachable during catalog refresh");
                    catalog = catalog.with_unreachable(&provider, &error);
                    RefreshOutcome::Unreachable { error }
                }
            };
            outcomes.insert(provider, outcome);
        }
        *self.catalog.write() = Arc::new(catalog);
        outcomes
    }

    fn mark_unreachable(&self, provider: &str, error: &str) {
        let mut catalog = self.catalog.write();
        if catalog.is_reachable(provider) {
            *catalog = Arc::new(catalog.with_unreachable(provider, error));
        }
    }

    /// Catalog entry, provider settings and client for a namespaced ID the
    /// caller may use.
    fn route(&self, id: &str, caller: &Caller) -> Result<(MirroredProcess, ProviderConfig, ProcessClient), ProblemDetail> {
        let not_found = || ProblemDetail::not_found(format!("no process {id}"));
        let entry = self.catalog().get(id).cloned().ok_or_else(not_found)?;
        let snap = self.snapshot();
        if !snap.policy.authorize_process(caller, id).is_allow() {
            return Err(snap.policy.denial(caller, id));
        }
        let provider = snap.config.provider(&entry.provider).cloned().ok_or_else(not_found)?;
        let client = snap.clients[&provider.provider_id].clone();
        Ok((entry, provider, client))
    }

    /// Maps a failed upstream call onto the problem returned to our caller.
    fn upstream_problem(&self, provider: &ProviderConfig, e: &ClientError) -> ProblemDetail {
        let id = &provider.provider_id;
        match e {
            ClientError::Remote(p) if p.kind == "federation-loop" => p.clone(),
            ClientError::Remote(p) if (400..500).contains(&p.status) => ProblemDetail {
                detail: format!("provider {id}: {}", p.detail),
                ..p.clone()
            },
            ClientError::Remote(p) => {
                ProblemDetail::bad_gateway(format!("provider {id} failed with status {}: {}", p.status, p.detail))
            }
            ClientError::Unreachable { detail, .. } | ClientError::Protocol { detail, .. } => {
                self.mark_unreachable(id, detail);
                ProblemDetail::bad_gateway(format!("provider {id} is unreachable: {detail}"))
            }
            ClientError::Timeout { .. } => {
                let detail = format!("provider {id} did not answer within {} ms", provider.timeout_millis);
                self.mark_unreachable(id, &detail);
                ProblemDetail::gateway_timeout(detail)
            }
        }
    }

    pub fn link(&self, platform_job_id: Uuid) -> Option<RemoteJobLink> {
        self.links.lock().get(&platform_job_id).map(|s| s.link.clone())
    }

    pub fn health_report(&self) -> PlatformHealth {
        let catalog = self.catalog();
        let providers = self
            .snapshot()
            .config
            .providers
            .iter()
            .map(|p| {
                catalog.providers.get(&p.provider_id).cloned().unwrap_or(ProviderStatus {
                    provider_id: p.provider_id.clone(),
                    reachable: false,
                    last_refreshed: None,
                    process_count: 0,
                    error: None,
                })
            })
            .collect();
        let (active, queued) = self.jobs.counts();
        PlatformHealth {
            providers,
            jobs: JobCounts { active, queued },
        }
    }

    /// Polls upstream status of every due, non-terminal linked job. Returns
    /// how many platform jobs changed.
    pub async fn poll_remote_jobs(&self) -> usize {
        let now = Instant::now();
        let due: Vec<RemoteJobLink> = self
            .links
            .lock()
            .values()
            .filter(|s| s.next_due <= now)
            .map(|s| s.link.clone())
            .filter(|l| self.jobs.peek(l.platform_job_id).is_some_and(|j| !j.state.is_terminal()))
            .collect();
        let changed = join_all(due.iter().map(|l| self.poll_one(l))).await;
        changed.into_iter().filter(|c| *c).count()
    }

    fn schedule(&self, id: Uuid, failed: bool) {
        let cfg = &self.snapshot().config;
        if let Some(state) = self.links.lock().get_mut(&id) {
            state.interval = if failed {
                (state.interval * 2).min(cfg.max_poll_interval())
            } else {
                cfg.poll_interval()
            };
            state.next_due = Instant::now() + state.interval;
        }
    }

    fn ensure_started(&self, id: Uuid) {
        if self.jobs.peek(id).is_some_and(|j| j.state == JobState::Accepted) {
            let _ = self.jobs.transition(id, Transition::Start);
        }
    }

    /// Finishes a platform job as failed. Returns whether it changed.
    fn fail(&self, id: Uuid, message: String) -> bool {
        self.ensure_started(id);
        let changed = self.jobs.transition(id, Transition::Fail(message)).is_ok();
        if changed {
            self.jobs.record_usage(id, 0.0);
        }
        changed
    }

    async fn poll_one(&self, link: &RemoteJobLink) -> bool {
        let id = link.platform_job_id;
        let Some(client) = self.snapshot().clients.get(&link.provider).cloned() else {
            return self.fail(id, format!("provider {} is no longer configured", link.provider));
        };
        let status = client
            .send(reqwest::Method::GET, &format!("/jobs/{}", link.upstream_job_id), &[], None, &[])
            .await
            .and_then(|r| r.ok())
            .and_then(|r| r.parse::<Value>());
        let status = match status {
            Ok(v) => v,
            Err(ClientError::Remote(p)) if p.status == 404 || p.status == 410 => {
                return self.fail(id, "upstream job lost".into());
            }
            Err(e) => {
                tracing::debug!(job = %id, error = %e, "upstream status poll failed");
                self.schedule(id, true);
                return false;
            }
        };
        self.schedule(id, false);
        let state = status.get("state").and_then(Value::as_str).unwrap_or_default().to_string();
        let message = status.get("message").and_then(Value::as_str).unwrap_or_default().to_string();
        let before = self.jobs.peek(id).map(|j| j.state);
        match state.parse::<JobState>() {
            Ok(JobState::Accepted) => {}
            Ok(JobState::Running) => {
                self.ensure_started(id);
                if let Some(p) = status.get("progress").and_then(Value::as_u64) {
                    self.jobs.report_progress(id, p.min(99) as u8);
                }
            }
            Ok(JobState::Successful) => return self.finish(link, &client).await,
            Ok(JobState::Failed) => return self.fail(id, format!("upstream job failed: {message}")),
            Ok(JobState::Dismissed) => {
                return self.jobs.transition(id, Transition::Dismiss("dismissed upstream".into())).is_ok();
            }
            Err(_) => return self.fail(id, format!("upstream reported unknown state {state:?}")),
        }
        self.jobs.peek(id).map(|j| j.state) != before
    }

    async fn finish(&self, link: &RemoteJobLink, client: &ProcessClient) -> bool {
        let id = link.platform_job_id;
        let (bytes, seconds) = match client.results(&link.upstream_job_id).await {
            Ok(r) => r,
            Err(ClientError::Remote(p)) if p.status == 404 || p.status == 410 => {
                return self.fail(id, format!("upstream results unavailable: {}", p.detail));
            }
            Err(e) => {
                tracing::debug!(job = %id, error = %e, "upstream results fetch failed");
                self.schedule(id, true);
                return false;
            }
        };
        let compute_seconds = seconds.unwrap_or(0.0);
        let transition = if link.mirror_results {
            match from_bytes::<Outputs>(&bytes) {
                Ok(outputs) => Transition::Succeed(ExecutionOutcome {
                    outputs,
                    compute_seconds,
                }),
                Err(p) => return self.fail(id, format!("upstream results are malformed: {}", p.detail)),
            }
        } else {
            Transition::SucceedExternal {
                result_ref: link.upstream_job_id.clone(),
                compute_seconds,
            }
        };
        self.ensure_started(id);
        match self.jobs.transition(id, transition) {
            Ok(_) => {
                self.jobs.record_usage(id, compute_seconds);
                true
            }
            Err(e) => {
                tracing::debug!(job = %id, error = %e, "linked job finished concurrently");
                false
            }
        }
    }

    #[allow(clippy::too_many_arguments)]
    async fn forward_sync(
        &self,
        id: &str,
        entry: &MirroredProcess,
        provider: &ProviderConfig,
        client: &ProcessClient,
        req: &ExecuteRequest,
        caller: &Caller,
        hops: u32,
    ) -> Result<Submission, ProblemDetail> {
        self.jobs.usage().check(caller, None, self.jobs.clock().now())?;
        let started = std::time::Instant::now();
        match client.execute(entry.local_id(), req, hops + 1).await {
            Ok(Executed::Sync { body, compute_seconds }) => {
                let outputs: Outputs = from_bytes(&body).map_err(|p| {
                    ProblemDetail::bad_gateway(format!("provider {} sent malformed outputs: {}", provider.provider_id, p.detail))
                })?;
                let compute_seconds = compute_seconds.unwrap_or_else(|| started.elapsed().as_secs_f64());
                self.jobs.usage().record(UsageRecord {
                    subject: caller.subject().to_string(),
                    process_id: id.to_string(),
                    job_id: "sync".into(),
                    compute_seconds,
                    timestamp: self.jobs.clock().now(),
                });
                Ok(Submission::Sync(ExecutionOutcome {
                    outputs,
                    compute_seconds,
                }))
            }
            Ok(Executed::Accepted { .. }) => Err(ProblemDetail::bad_gateway(format!(
                "provider {} answered a synchronous request with a job",
                provider.provider_id
            ))),
            Err(e) => Err(self.upstream_problem(provider, &e)),
        }
    }

    #[allow(clippy::too_many_arguments)]
    async fn forward_async(
        &self,
        id: &str,
        entry: &MirroredProcess,
        provider: &ProviderConfig,
        client: &ProcessClient,
        req: &ExecuteRequest,
        caller: &Caller,
        hops: u32,
    ) -> Result<Submission, ProblemDetail> {
        let job = self.jobs.create_linked(id, caller, &req.inputs, &provider.provider_id)?;
        let job_id = job.job_id;
        self.jobs.set_retention(job_id, provider.retention());
        match client.execute(entry.local_id(), req, hops + 1).await {
            Ok(Executed::Accepted { job: upstream, .. }) => {
                let interval = self.snapshot().config.poll_interval();
                self.links.lock().insert(
                    job_id,
                    PollState {
                        link: RemoteJobLink {
                            platform_job_id: job_id,
                            provider: provider.provider_id.clone(),
                            upstream_job_id: upstream.job_id.to_string(),
                            mode: LinkMode::Async,
                            mirror_results: provider.mirror_results,
                        },
                        next_due: Instant::now() + interval,
                        interval,
                    },
                );
            }
            Ok(Executed::Sync { body, compute_seconds }) => {
                // The provider ran the request inline; finish the job at once.
                let outputs: Outputs = match from_bytes(&body) {
                    Ok(o) => o,
                    Err(p) => {
                        self.fail(job_id, format!("provider sent malformed outputs: {}", p.detail));
                        return Err(ProblemDetail::bad_gateway(p.detail));
                    }
                };
                let compute_seconds = compute_seconds.unwrap_or(0.0);
                self.ensure_started(job_id);
                self.jobs
                    .transition(
                        job_id,
                        Transition::Succeed(ExecutionOutcome {
                            outputs,
                            compute_seconds,
                        }),
                    )
                    .map_err(ProblemDetail::from)?;
                self.jobs.record_usage(job_id, compute_seconds);
            }
            Err(e) => {
                let problem = self.upstream_problem(provider, &e);
                self.fail(job_id, problem.detail.clone());
                return Err(problem);
            }
        }
        Ok(Submission::Accepted(self.jobs.peek(job_id).unwrap_or(job)))
    }
}

/// Summaries of a provider's processes that pass its filter, described one
/// by one. Upstream IDs that are already namespaced cannot be namespaced
/// again and are skipped.
async fn fetch_provider(client: &ProcessClient, provider: &ProviderConfig) -> Result<Vec<ProcessDescription>, ClientError> {
    let summaries = client.all_processes().await?;
    let ids: Vec<String> = summaries
        .into_iter()
        .map(|s| s.id)
        .filter(|id| {
            let nested = id.contains(NAMESPACE_SEPARATOR);
            if nested {
                tracing::warn!(provider = %provider.provider_id, %id, "skipping already namespaced process");
            }
            !nested && provider.admits(id)
        })
        .collect();
    let described = join_all(ids.iter().map(|id| client.describe(id))).await;
    described.into_iter().map(|r| r.map(|(d, _)| d)).collect()
}

async fn refresher(platform: Weak<Platform>) {
    loop {
        let every = match platform.upgrade() {
            Some(p) => Duration::from_secs(p.snapshot().config.server.catalog_refresh_seconds),
            None => return,
        };
        tokio::time::sleep(every).await;
        match platform.upgrade() {
            Some(p) => {
                p.refresh_catalog().await;
            }
            None => return,
        }
    }
}

async fn poller(platform: Weak<Platform>) {
    loop {
        let every = match platform.upgrade() {
            Some(p) => p.snapshot().config.poll_interval(),
            None => return,
        };
        // Tick faster than the interval so a job is seen soon after it is due.
        tokio::time::sleep(every / 4).await;
        match platform.upgrade() {
            Some(p) => {
                p.poll_remote_jobs().await;
            }
            None => return,
        }
    }
}

#[async_trait]
impl Backend for Platform {
    fn landing(&self) -> LandingPage {
        landing_page(
            &self.snapshot().config.server.title,
            "Single point of access to the simulation models of all connected model servers.",
        )
    }

    fn authenticate(&self, bearer: Option<&str>) -> Result<Caller, ProblemDetail> {
        self.auth.authenticate(bearer)
    }

    fn policy(&self) -> Arc<AccessPolicy> {
        self.snapshot().policy.clone()
    }

    fn jobs(&self) -> &JobManager {
        &self.jobs
    }

    async fn list_processes(&self, caller: &Caller) -> Vec<ProcessSummary> {
        let policy = self.policy();
        self.catalog()
            .processes
            .values()
            .filter(|p| policy.authorize_process(caller, &p.namespaced_id).is_allow())
            .map(MirroredProcess::summary)
            .collect()
    }

    async fn describe(&self, id: &str, caller: &Caller) -> Result<Described, ProblemDetail> {
        let (entry, _, _) = self.route(id, caller)?;
        Ok(Described {
            description: entry.description(),
            stale: !entry.reachable,
        })
    }

    async fn execute(
        &self,
        id: &str,
        req: ExecuteRequest,
        caller: &Caller,
        hops: u32,
    ) -> Result<Submission, ProblemDetail> {
        let (entry, provider, client) = self.route(id, caller)?;
        if req.prefer_async {
            self.forward_async(id, &entry, &provider, &client, &req, caller, hops).await
        } else {
            self.forward_sync(id, &entry, &provider, &client, &req, caller, hops).await
        }
    }

    async fn results(&self, id: Uuid, caller: &Caller) -> Result<Vec<u8>, ProblemDetail> {
        match self.jobs.get_results(id, caller, &self.policy())? {
            JobResults::Stored(bytes) => Ok(bytes),
            JobResults::External(upstream_id) => {
                let link = self
                    .link(id)
                    .ok_or_else(|| ProblemDetail::internal(format!("job {id} has no upstream link")))?;
                let snap = self.snapshot();
                let (Some(provider), Some(client)) =
                    (snap.config.provider(&link.provider), snap.clients.get(&link.provider))
                else {
                    return Err(ProblemDetail::bad_gateway(format!(
                        "provider {} is no longer configured",
                        link.provider
                    )));
                };
                client
                    .results(&upstream_id)
                    .await
                    .map(|(bytes, _)| bytes)
                    .map_err(|e| self.upstream_problem(provider, &e))
            }
        }
    }

    async fn dismiss(&self, id: Uuid, caller: &Caller) -> Result<Job, ProblemDetail> {
        let job = self.jobs.dismiss(id, caller, &self.policy())?;
        if let Some(link) = self.link(id) {
            if let Some(client) = self.snapshot().clients.get(&link.provider) {
                if let Err(e) = client.dismiss(&link.upstream_job_id).await {
                    tracing::warn!(job = %id, provider = %link.provider, error = %e, "upstream dismissal failed");
                }
            }
        }
        Ok(job)
    }

    fn health(&self) -> Value {
        serde_json::to_value(self.health_report()).expect("health report serializes")
    }
}

impl std::fmt::Debug for Platform {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Platform")
            .field("providers", &self.snapshot().config.providers.len())
            .field("processes", &self.catalog().processes.len())
            .finish()
    }
}

