use std::collections::BTreeMap;

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};

use ump_core::protocol::{namespaced, ProcessDescription, ProcessSummary};

/// An upstream process republished under its provider's namespace.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct MirroredProcess {
    pub namespaced_id: String,
    pub provider: String,
    /// The upstream description exactly as fetched.
    pub upstream_description: ProcessDescription,
    pub last_refreshed: DateTime<Utc>,
    pub reachable: bool,
}

impl MirroredProcess {
    pub fn new(provider: &str, upstream: ProcessDescription, now: DateTime<Utc>) -> Self {
        Self {
            namespaced_id: namespaced(provider, &upstream.summary.id),
            provider: provider.into(),
            upstream_description: upstream,
            last_refreshed: now,
            reachable: true,
        }
    }

    pub fn local_id(&self) -> &str {
        &self.upstream_description.summary.id
    }

    /// The upstream description with its ID namespaced.
    pub fn description(&self) -> ProcessDescription {
        let mut d = self.upstream_description.clone();
        d.summary.id = self.namespaced_id.clone();
        d
    }

    pub fn summary(&self) -> ProcessSummary {
        self.description().summary
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct ProviderStatus {
    pub provider_id: String,
    pub reachable: bool,
    /// Last successful refresh.
    pub last_refreshed: Option<DateTime<Utc>>,
    pub process_count: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

/// Result of refreshing one provider.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase", tag = "status")]
pub enum RefreshOutcome {
    Reachable { process_count: usize },
    Unreachable { error: String },
}

/// Immutable catalog snapshot; the platform swaps whole snapshots.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Catalog {
    pub processes: BTreeMap<String, MirroredProcess>,
    pub providers: BTreeMap<String, ProviderStatus>,
}

impl Catalog {
    pub fn get(&self, namespaced_id: &str) -> Option<&MirroredProcess> {
        self.processes.get(namespaced_id)
    }

    /// Replaces one provider's entries after a successful fetch.
    pub fn with_fetched(&self, provider: &str, fetched: Vec<ProcessDescription>, now: DateTime<Utc>) -> Catalog {
        let mut next = self.clone();
        next.processes.retain(|_, p| p.provider != provider);
        let count = fetched.len();
        for d in fetched {
            let m = MirroredProcess::new(provider, d, now);
            next.processes.insert(m.namespaced_id.clone(), m);
        }
        next.providers.insert(
            provider.into(),
            ProviderStatus {
                provider_id: provider.into(),
                reachable: true,
                last_refreshed: Some(now),
                process_count: count,
                error: None,
            },
        );
        next
    }

    /// Keeps a provider's last-known entries, flagged unreachable.
    pub fn with_unreachable(&self, provider: &str, error: &str) -> Catalog {
        let mut next = self.clone();
        for p in next.processes.values_mut().filter(|p| p.provider == provider) {
            p.reachable = false;
        }
        let count = next.processes.values().filter(|p| p.provider == provider).count();
        let previous = self.providers.get(provider).and_then(|s| s.last_refreshed);
        next.providers.insert(
            provider.into(),
            ProviderStatus {
                provider_id: provider.into(),
                reachable: false,
                last_refreshed: previous,
                process_count: count,
                error: Some(error.into()),
            },
        );
        next
    }

    /// Drops providers that are no longer configured.
    pub fn retain_providers(&self, keep: impl Fn(&str) -> bool) -> Catalog {
        let mut next = self.clone();
        next.processes.retain(|_, p| keep(&p.provider));
        next.providers.retain(|id, _| keep(id));
        next
    }

    pub fn is_reachable(&self, provider: &str) -> bool {
        self.providers.get(provider).is_some_and(|s| s.reachable)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ump_core::sim;

    #[test]
    fn namespacing_rewrites_only_the_id() {
        let m = MirroredProcess::new("alpha", sim::heat_diffusion_description(), Utc::now());
        assert_eq!(m.namespaced_id, "alpha:heat-diffusion");
        assert_eq!(m.local_id(), "heat-diffusion");
        let mut d = m.description();
        assert_eq!(d.summary.id, "alpha:heat-diffusion");
        d.summary.id = "heat-diffusion".into();
        assert_eq!(d, sim::heat_diffusion_description());
    }

    #[test]
    fn unreachable_keeps_entries() {
        let now = Utc::now();
        let c = Catalog::default().with_fetched(
            "a",
            vec![sim::heat_diffusion_description(), sim::noise_map_description()],
            now,
        );
        let c = c.with_fetched("b", vec![sim::comfort_index_description()], now);
        let down = c.with_unreachable("a", "connection refused");
        assert_eq!(down.processes.len(), 3);
        assert!(!down.get("a:noise-map").unwrap().reachable);
        assert!(down.get("b:comfort-index").unwrap().reachable);
        assert_eq!(down.providers["a"].last_refreshed, Some(now));
        assert!(!down.is_reachable("a") && down.is_reachable("b"));
        let back = down.with_fetched("a", vec![sim::heat_diffusion_description()], now);
        assert_eq!(back.processes.len(), 2);
        assert!(back.is_reachable("a"));
        assert_eq!(back.retain_providers(|p| p == "b").processes.len(), 1);
    }
}
