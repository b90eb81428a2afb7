//! A process server hosting locally executable models.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use async_trait::async_trait;
use chrono::Duration;
use parking_lot::RwLock;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use ump_core::access::{AccessPolicy, Authenticator, Caller, TokenStore, Visibility};
use ump_core::jobs::{JobConfig, JobDeps, JobManager, ProcessExecutor, Submission};
use ump_core::protocol::{
    apply_defaults, check_description, landing_page, validate_execute_request, ExecuteRequest, LandingPage,
    ProcessDescription, ProcessSummary,
};
use ump_core::store::{FileJobLog, FileResultStore};
use ump_core::{sim, ProblemDetail};

use crate::backend::{Backend, Described};
use crate::comfort::ComfortIndex;
use crate::config::{self, ConfigError};
use crate::subprocess::SubprocessExecutor;

/// A process description bound to its implementation.
#[derive(Clone)]
pub struct ProcessRegistration {
    pub description: ProcessDescription,
    pub executor: Arc<dyn ProcessExecutor>,
}

impl ProcessRegistration {
    pub fn new(description: ProcessDescription, executor: impl ProcessExecutor + 'static) -> Self {
        Self {
            description,
            executor: Arc::new(executor),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AuthMode {
    /// Every process is public; tokens are optional.
    #[default]
    Open,
    /// Processes require an authenticated caller unless listed as public.
    Token,
}

/// A process entry of the server configuration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum ProcessSpec {
    HeatDiffusion,
    NoiseMap,
    #[serde(rename_all = "camelCase")]
    ComfortIndex {
        platform_url: String,
        #[serde(default = "default_heat_process")]
        heat_process: String,
        #[serde(default = "default_noise_process")]
        noise_process: String,
        #[serde(default)]
        token: Option<String>,
    },
    /// A worker program speaking the stdio protocol of [`crate::subprocess`].
    Subprocess { command: Vec<String> },
}

fn default_heat_process() -> String {
    format!("alpha:{}", sim::HEAT_DIFFUSION_ID)
}

fn default_noise_process() -> String {
    format!("alpha:{}", sim::NOISE_MAP_ID)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase", deny_unknown_fields)]
pub struct ServerConfig {
    #[serde(default = "config::default_bind")]
    pub bind_address: String,
    pub server_id: String,
    #[serde(default)]
    pub title: Option<String>,
    #[serde(default = "config::default_workers")]
    pub worker_pool_size: usize,
    #[serde(default = "config::default_queue")]
    pub queue_capacity: usize,
    #[serde(default = "config::default_retention")]
    pub result_retention_seconds: u64,
    #[serde(default)]
    pub auth_mode: AuthMode,
    #[serde(default)]
    pub token_file: Option<PathBuf>,
    /// Per-process visibility in token mode (`public`, `authenticated` or a role).
    #[serde(default)]
    pub visibility: BTreeMap<String, Visibility>,
    /// Directory for the job log and result blobs; in memory when absent.
    #[serde(default)]
    pub data_dir: Option<PathBuf>,
    #[serde(default)]
    pub processes: Vec<ProcessSpec>,
}

impl ServerConfig {
    pub fn new(server_id: &str) -> Self {
        Self {
            bind_address: config::default_bind(),
            server_id: server_id.into(),
            title: None,
            worker_pool_size: config::default_workers(),
            queue_capacity: config::default_queue(),
            result_retention_seconds: config::default_retention(),
            auth_mode: AuthMode::Open,
            token_file: None,
            visibility: BTreeMap::new(),
            data_dir: None,
            processes: Vec::new(),
        }
    }

    pub fn parse(text: &str) -> Result<Self, ConfigError> {
        let cfg: ServerConfig = config::parse_document(text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        Self::parse(&config::read(path)?)
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        if self.server_id.is_empty() {
            return Err(ConfigError::Invalid("serverId must not be empty".into()));
        }
        if self.worker_pool_size == 0 {
            return Err(ConfigError::Invalid("workerPoolSize must be at least 1".into()));
        }
        if self.queue_capacity == 0 {
            return Err(ConfigError::Invalid("queueCapacity must be at least 1".into()));
        }
        if self.result_retention_seconds == 0 {
            return Err(ConfigError::Invalid("resultRetentionSeconds must be positive".into()));
        }
        if self.auth_mode == AuthMode::Token && self.token_file.is_none() {
            return Err(ConfigError::Invalid("authMode token requires tokenFile".into()));
        }
        Ok(())
    }

    pub fn job_config(&self) -> JobConfig {
        JobConfig {
            workers: self.worker_pool_size,
            queue_capacity: self.queue_capacity,
            retention: Duration::seconds(self.result_retention_seconds as i64),
        }
    }

    pub fn policy(&self) -> AccessPolicy {
        match self.auth_mode {
            AuthMode::Open => AccessPolicy::open(),
            AuthMode::Token => AccessPolicy {
                process_visibility: self.visibility.clone(),
                ..AccessPolicy::default()
            },
        }
    }
}

pub struct ModelServer {
    server_id: String,
    title: String,
    registry: RwLock<BTreeMap<String, ProcessRegistration>>,
    jobs: JobManager,
    auth: Authenticator,
    policy: RwLock<Arc<AccessPolicy>>,
}

impl ModelServer {
    /// Must be called within a tokio runtime (the job workers are spawned).
    pub fn new(server_id: &str, policy: AccessPolicy, tokens: TokenStore, jobs: JobManager) -> Self {
        Self {
            server_id: server_id.into(),
            title: format!("Model server {server_id}"),
            registry: RwLock::new(BTreeMap::new()),
            jobs,
            auth: Authenticator::new(tokens),
            policy: RwLock::new(Arc::new(policy)),
        }
    }

    /// An open server with default job settings and in-memory storage.
    pub fn open(server_id: &str) -> Self {
        Self::new(
            server_id,
            AccessPolicy::open(),
            TokenStore::default(),
            JobManager::start(JobConfig::default(), JobDeps::default()),
        )
    }

    /// Builds a server from its configuration, including storage and processes.
    pub async fn from_config(cfg: &ServerConfig) -> Result<Self, ConfigError> {
        cfg.validate()?;
        let tokens = match &cfg.token_file {
            Some(path) => TokenStore::load(path).map_err(|e| ConfigError::Invalid(e.to_string()))?,
            None => TokenStore::default(),
        };
        let mut deps = JobDeps::default();
        if let Some(dir) = &cfg.data_dir {
            deps.log = Arc::new(FileJobLog::open(dir).map_err(|e| ConfigError::Io(e.to_string()))?);
            deps.results = Arc::new(FileResultStore::open(dir).map_err(|e| ConfigError::Io(e.to_string()))?);
        }
        let mut server = Self::new(&cfg.server_id, cfg.policy(), tokens, JobManager::start(cfg.job_config(), deps));
        if let Some(title) = &cfg.title {
            server.title = title.clone();
        }
        for spec in &cfg.processes {
            let reg = registration(spec).await?;
            server.register(reg).map_err(|p| ConfigError::Invalid(p.detail))?;
        }
        Ok(server)
    }

    pub fn server_id(&self) -> &str {
        &self.server_id
    }

    /// Adds a process; returns the new registry size. Duplicate IDs conflict.
    pub fn register(&self, reg: ProcessRegistration) -> Result<usize, ProblemDetail> {
        let id = reg.description.summary.id.clone();
        check_description(&reg.description)
            .map_err(|e| ProblemDetail::bad_request(format!("invalid description of {id}: {e}")))?;
        if id.contains(ump_core::protocol::NAMESPACE_SEPARATOR) {
            return Err(ProblemDetail::bad_request(format!("local process IDs may not be namespaced: {id}")));
        }
        let mut registry = self.registry.write();
        if registry.contains_key(&id) {
            return Err(ProblemDetail::conflict(format!("conflict: process {id} is already registered")));
        }
        registry.insert(id, reg);
        Ok(registry.len())
    }

    /// Replaces the token store, keeping the policy.
    pub fn reload_tokens(&self, tokens: TokenStore) {
        self.auth.replace(tokens);
    }

    fn lookup(&self, id: &str, caller: &Caller) -> Result<ProcessRegistration, ProblemDetail> {
        let reg = self
            .registry
            .read()
            .get(id)
            .cloned()
            .ok_or_else(|| ProblemDetail::not_found(format!("no process {id}")))?;
        let policy = self.policy();
        if !policy.authorize_process(caller, id).is_allow() {
            return Err(policy.denial(caller, id));
        }
        Ok(reg)
    }
}

/// Instantiates a configured process.
pub async fn registration(spec: &ProcessSpec) -> Result<ProcessRegistration, ConfigError> {
    Ok(match spec {
        ProcessSpec::HeatDiffusion => ProcessRegistration::new(sim::heat_diffusion_description(), sim::HeatDiffusion),
        ProcessSpec::NoiseMap => ProcessRegistration::new(sim::noise_map_description(), sim::NoiseMap),
        ProcessSpec::ComfortIndex {
            platform_url,
            heat_process,
            noise_process,
            token,
        } => ProcessRegistration::new(
            sim::comfort_index_description(),
            ComfortIndex::new(platform_url, token.clone(), heat_process, noise_process),
        ),
        ProcessSpec::Subprocess { command } => {
            let executor = SubprocessExecutor::new(command.clone()).map_err(ConfigError::Invalid)?;
            let description = executor
                .describe()
                .await
                .map_err(|e| ConfigError::Invalid(format!("worker {command:?}: {e}")))?;
            ProcessRegistration {
                description,
                executor: Arc::new(executor),
            }
        }
    })
}

#[async_trait]
impl Backend for ModelServer {
    fn landing(&self) -> LandingPage {
        landing_page(&self.title, "Simulation models exposed through the process API.")
    }

    fn authenticate(&self, bearer: Option<&str>) -> Result<Caller, ProblemDetail> {
        self.auth.authenticate(bearer)
    }

    fn policy(&self) -> Arc<AccessPolicy> {
        self.policy.read().clone()
    }

    fn jobs(&self) -> &JobManager {
        &self.jobs
    }

    async fn list_processes(&self, caller: &Caller) -> Vec<ProcessSummary> {
        let policy = self.policy();
        self.registry
            .read()
            .iter()
            .filter(|(id, _)| policy.authorize_process(caller, id).is_allow())
            .map(|(_, reg)| reg.description.summary.clone())
            .collect()
    }

    async fn describe(&self, id: &str, caller: &Caller) -> Result<Described, ProblemDetail> {
        Ok(Described {
            description: self.lookup(id, caller)?.description,
            stale: false,
        })
    }

    async fn execute(
        &self,
        id: &str,
        req: ExecuteRequest,
        caller: &Caller,
        hops: u32,
    ) -> Result<Submission, ProblemDetail> {
        let reg = self.lookup(id, caller)?;
        let violations = validate_execute_request(&req, &reg.description);
        if !violations.is_empty() {
            return Err(ProblemDetail::invalid_inputs(violations));
        }
        let req = apply_defaults(req, &reg.description);
        self.jobs.submit(id, req, caller, reg.executor, hops).await
    }

    fn health(&self) -> Value {
        let (running, accepted) = self.jobs.counts();
        json!({
            "serverId": self.server_id,
            "processCount": self.registry.read().len(),
            "jobs": { "active": running, "queued": accepted },
        })
    }
}
