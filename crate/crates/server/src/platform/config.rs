use std::collections::{BTreeMap, BTreeSet};
use std::path::{Path, PathBuf};
use std::time::Duration;

use serde::{Deserialize, Serialize};

use ump_core::access::{AccessPolicy, Visibility, DEFAULT_ADMIN_ROLE};
use ump_core::protocol::is_valid_token;

use crate::config::{self, ConfigError};
use crate::model_server::AuthMode;

/// One upstream model server (or platform).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase", deny_unknown_fields)]
pub struct ProviderConfig {
    pub provider_id: String,
    pub base_url: String,
    #[serde(default)]
    pub include: Option<Vec<String>>,
    #[serde(default)]
    pub exclude: Option<Vec<String>>,
    /// Visible without authentication.
    #[serde(default)]
    pub public: bool,
    /// Store results on the platform instead of proxying reads upstream.
    #[serde(default = "yes")]
    pub mirror_results: bool,
    #[serde(default = "config::default_retention")]
    pub retention_seconds: u64,
    #[serde(default = "default_timeout")]
    pub timeout_millis: u64,
    #[serde(default)]
    pub auth_token: Option<String>,
}

fn yes() -> bool {
    true
}

fn default_timeout() -> u64 {
    5_000
}

impl ProviderConfig {
    pub fn new(provider_id: &str, base_url: &str) -> Self {
        Self {
            provider_id: provider_id.into(),
            base_url: base_url.into(),
            include: None,
            exclude: None,
            public: false,
            mirror_results: true,
            retention_seconds: config::default_retention(),
            timeout_millis: default_timeout(),
            auth_token: None,
        }
    }

    pub fn timeout(&self) -> Duration {
        Duration::from_millis(self.timeout_millis)
    }

    pub fn retention(&self) -> chrono::Duration {
        chrono::Duration::seconds(self.retention_seconds as i64)
    }

    /// Whether a local process ID passes the include/exclude filter.
    pub fn admits(&self, local_id: &str) -> bool {
        if let Some(include) = &self.include {
            return include.iter().any(|i| i == local_id);
        }
        if let Some(exclude) = &self.exclude {
            return !exclude.iter().any(|e| e == local_id);
        }
        true
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase", deny_unknown_fields)]
pub struct ServerSection {
    #[serde(default = "config::default_bind")]
    pub bind_address: String,
    #[serde(default = "default_title")]
    pub title: String,
    #[serde(default = "default_refresh")]
    pub catalog_refresh_seconds: u64,
    /// Directory for the job log and mirrored results; in memory when absent.
    #[serde(default)]
    pub data_dir: Option<PathBuf>,
}

fn default_title() -> String {
    "Urban model platform".into()
}

fn default_refresh() -> u64 {
    300
}

impl Default for ServerSection {
    fn default() -> Self {
        Self {
            bind_address: config::default_bind(),
            title: default_title(),
            catalog_refresh_seconds: default_refresh(),
            data_dir: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase", deny_unknown_fields)]
pub struct JobsSection {
    #[serde(default = "config::default_workers")]
    pub worker_pool_size: usize,
    #[serde(default = "config::default_queue")]
    pub queue_capacity: usize,
    #[serde(default = "default_poll")]
    pub poll_interval_millis: u64,
    /// Upper bound of the polling backoff after upstream errors.
    #[serde(default = "default_max_poll")]
    pub max_poll_interval_millis: u64,
}

fn default_poll() -> u64 {
    1_000
}

fn default_max_poll() -> u64 {
    30_000
}

impl Default for JobsSection {
    fn default() -> Self {
        Self {
            worker_pool_size: config::default_workers(),
            queue_capacity: config::default_queue(),
            poll_interval_millis: default_poll(),
            max_poll_interval_millis: default_max_poll(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase", deny_unknown_fields)]
pub struct AuthSection {
    /// `open` makes every process public; `token` (the default) hides
    /// non-public providers from anonymous callers.
    #[serde(default = "token_mode")]
    pub mode: AuthMode,
    #[serde(default)]
    pub token_file: Option<PathBuf>,
    #[serde(default = "default_admin_role")]
    pub admin_role: String,
    /// Extra visibility rules keyed by namespaced ID or `providerId:*`.
    #[serde(default)]
    pub visibility: BTreeMap<String, Visibility>,
}

fn token_mode() -> AuthMode {
    AuthMode::Token
}

fn default_admin_role() -> String {
    DEFAULT_ADMIN_ROLE.into()
}

impl Default for AuthSection {
    fn default() -> Self {
        Self {
            mode: AuthMode::Token,
            token_file: None,
            admin_role: default_admin_role(),
            visibility: BTreeMap::new(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(rename_all = "camelCase", deny_unknown_fields)]
pub struct PlatformConfig {
    #[serde(default)]
    pub server: ServerSection,
    #[serde(default)]
    pub providers: Vec<ProviderConfig>,
    #[serde(default)]
    pub jobs: JobsSection,
    #[serde(default)]
    pub auth: AuthSection,
}

impl PlatformConfig {
    pub fn parse(text: &str) -> Result<Self, ConfigError> {
        let cfg: PlatformConfig = config::parse_document(text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        Self::parse(&config::read(path)?)
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let invalid = |msg: String| Err(ConfigError::Invalid(msg));
        let mut seen = BTreeSet::new();
        for p in &self.providers {
            if !is_valid_token(&p.provider_id) {
                return invalid(format!("providerId {:?} must match [A-Za-z0-9_-]+", p.provider_id));
            }
            if !seen.insert(p.provider_id.as_str()) {
                return invalid(format!("duplicate providerId {:?}", p.provider_id));
            }
            if p.include.is_some() && p.exclude.is_some() {
                return invalid(format!("provider {}: include and exclude are mutually exclusive", p.provider_id));
            }
            if p.retention_seconds == 0 || p.timeout_millis == 0 {
                return invalid(format!("provider {}: retentionSeconds and timeoutMillis must be positive", p.provider_id));
            }
            if let Err(e) = reqwest::Url::parse(&p.base_url) {
                return invalid(format!("provider {}: baseUrl {:?}: {e}", p.provider_id, p.base_url));
            }
        }
        if self.jobs.worker_pool_size == 0 || self.jobs.queue_capacity == 0 {
            return invalid("workerPoolSize and queueCapacity must be at least 1".into());
        }
        if self.jobs.poll_interval_millis == 0 || self.jobs.max_poll_interval_millis < self.jobs.poll_interval_millis {
            return invalid("pollIntervalMillis must be positive and not above maxPollIntervalMillis".into());
        }
        if self.server.catalog_refresh_seconds == 0 {
            return invalid("catalogRefreshSeconds must be positive".into());
        }
        Ok(())
    }

    pub fn provider(&self, id: &str) -> Option<&ProviderConfig> {
        self.providers.iter().find(|p| p.provider_id == id)
    }

    /// Access policy: public providers get a `providerId:*` public entry
    /// unless the auth section already has one.
    pub fn policy(&self) -> AccessPolicy {
        let mut process_visibility = self.auth.visibility.clone();
        for p in self.providers.iter().filter(|p| p.public) {
            process_visibility
                .entry(AccessPolicy::wildcard(&p.provider_id))
                .or_insert(Visibility::Public);
        }
        AccessPolicy {
            process_visibility,
            admin_role: self.auth.admin_role.clone(),
            default_visibility: match self.auth.mode {
                AuthMode::Open => Visibility::Public,
                AuthMode::Token => Visibility::Authenticated,
            },
        }
    }

    pub fn poll_interval(&self) -> Duration {
        Duration::from_millis(self.jobs.poll_interval_millis)
    }

    pub fn max_poll_interval(&self) -> Duration {
        Duration::from_millis(self.jobs.max_poll_interval_millis)
    }
}
