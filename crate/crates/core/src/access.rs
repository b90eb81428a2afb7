//! Authentication, process visibility, job ownership and usage accounting.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fmt;
use std::path::Path;
use std::sync::Arc;

use chrono::{DateTime, Duration, Utc};
use parking_lot::{Mutex, RwLock};
use serde::{Deserialize, Serialize};

use crate::protocol::{split_namespaced, ProblemDetail};

/// Subject name used for unauthenticated callers.
pub const ANONYMOUS_SUBJECT: &str = "anonymous";

pub const DEFAULT_ADMIN_ROLE: &str = "admin";

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct Quota {
    pub max_concurrent_jobs: u32,
    pub max_compute_seconds_per_day: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct Principal {
    pub subject: String,
    pub roles: BTreeSet<String>,
    pub quota: Quota,
}

/// The result of authentication.
#[derive(Debug, Clone, PartialEq)]
pub enum Caller {
    Anonymous,
    Principal(Principal),
}

impl Caller {
    pub fn subject(&self) -> &str {
        match self {
            Caller::Anonymous => ANONYMOUS_SUBJECT,
            Caller::Principal(p) => &p.subject,
        }
    }

    pub fn has_role(&self, role: &str) -> bool {
        matches!(self, Caller::Principal(p) if p.roles.contains(role))
    }

    pub fn quota(&self) -> Option<&Quota> {
        match self {
            Caller::Anonymous => None,
            Caller::Principal(p) => Some(&p.quota),
        }
    }

    pub fn is_anonymous(&self) -> bool {
        matches!(self, Caller::Anonymous)
    }
}

#[derive(Debug, thiserror::Error)]
pub enum TokenFileError {
    #[error("token file line {line}: {message}")]
    Syntax { line: usize, message: String },
    #[error("cannot read token file: {0}")]
    Io(#[from] std::io::Error),
}

/// Static bearer-token table: `token<TAB>subject<TAB>roles<TAB>maxJobs<TAB>maxSecondsPerDay`.
///
/// Blank lines and lines starting with `#` are ignored. Roles are
/// comma-separated and may be empty.
#[derive(Debug, Clone, Default)]
pub struct TokenStore {
    tokens: HashMap<String, Principal>,
}

impl TokenStore {
    pub fn parse(text: &str) -> Result<Self, TokenFileError> {
        let mut tokens = HashMap::new();
        for (idx, raw) in text.lines().enumerate() {
            let line = idx + 1;
            let err = |message: String| TokenFileError::Syntax { line, message };
            if raw.trim().is_empty() || raw.trim_start().starts_with('#') {
                continue;
            }
            let fields: Vec<&str> = raw.split('\t').collect();
            let [token, subject, roles, jobs, seconds] = fields[..] else {
                return Err(err(format!("expected 5 tab-separated fields, found {}", fields.len())));
            };
            if token.is_empty() {
                return Err(err("empty token".into()));
            }
            if subject.is_empty() || subject == ANONYMOUS_SUBJECT {
                return Err(err(format!("invalid subject {subject:?}")));
            }
            let max_concurrent_jobs: u32 = jobs
                .trim()
                .parse()
                .ok()
                .filter(|n| *n > 0)
                .ok_or_else(|| err(format!("maxConcurrentJobs must be a positive integer, got {jobs:?}")))?;
            let max_compute_seconds_per_day: f64 = seconds
                .trim()
                .parse()
                .ok()
                .filter(|s: &f64| s.is_finite() && *s > 0.0)
                .ok_or_else(|| err(format!("maxComputeSecondsPerDay must be positive, got {seconds:?}")))?;
            let roles = roles
                .split(',')
                .map(str::trim)
                .filter(|r| !r.is_empty())
                .map(String::from)
                .collect();
            let principal = Principal {
                subject: subject.to_string(),
                roles,
                quota: Quota {
                    max_concurrent_jobs,
                    max_compute_seconds_per_day,
                },
            };
            if tokens.insert(token.to_string(), principal).is_some() {
                return Err(err("duplicate token".into()));
            }
        }
        Ok(Self { tokens })
    }

    pub fn load(path: &Path) -> Result<Self, TokenFileError> {
        Self::parse(&std::fs::read_to_string(path)?)
    }

    pub fn insert(&mut self, token: impl Into<String>, principal: Principal) {
        self.tokens.insert(token.into(), principal);
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }
}

/// Resolves bearer tokens against a swappable [`TokenStore`] snapshot.
#[derive(Debug, Default)]
pub struct Authenticator {
    store: RwLock<Arc<TokenStore>>,
}

impl Authenticator {
    pub fn new(store: TokenStore) -> Self {
        Self {
            store: RwLock::new(Arc::new(store)),
        }
    }

    /// Atomically replaces the token table.
    pub fn replace(&self, store: TokenStore) {
        *self.store.write() = Arc::new(store);
    }

    pub fn authenticate(&self, bearer: Option<&str>) -> Result<Caller, ProblemDetail> {
        let Some(token) = bearer else {
            return Ok(Caller::Anonymous);
        };
        let store = self.store.read().clone();
        store
            .tokens
            .get(token)
            .cloned()
            .map(Caller::Principal)
            .ok_or_else(|| ProblemDetail::unauthorized("unknown bearer token"))
    }
}

/// Who may see and run a process.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Visibility {
    Public,
    /// Any authenticated principal.
    Authenticated,
    Role(String),
}

impl Serialize for Visibility {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(match self {
            Visibility::Public => "public",
            Visibility::Authenticated => "authenticated",
            Visibility::Role(r) => r,
        })
    }
}

impl<'de> Deserialize<'de> for Visibility {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        Ok(match s.as_str() {
            "public" => Visibility::Public,
            "authenticated" => Visibility::Authenticated,
            _ => Visibility::Role(s),
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Decision {
    Allow,
    Deny,
}

impl Decision {
    pub fn is_allow(self) -> bool {
        self == Decision::Allow
    }
}

/// Visibility rules keyed by namespaced ID or `providerId:*` wildcard.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct AccessPolicy {
    #[serde(default)]
    pub process_visibility: BTreeMap<String, Visibility>,
    #[serde(default = "default_admin_role")]
    pub admin_role: String,
    /// Applies when no exact or wildcard entry matches.
    #[serde(default = "default_visibility")]
    pub default_visibility: Visibility,
}

fn default_admin_role() -> String {
    DEFAULT_ADMIN_ROLE.to_string()
}

fn default_visibility() -> Visibility {
    Visibility::Authenticated
}

impl Default for AccessPolicy {
    fn default() -> Self {
        Self {
            process_visibility: BTreeMap::new(),
            admin_role: default_admin_role(),
            default_visibility: default_visibility(),
        }
    }
}

impl AccessPolicy {
    /// Every process visible to everyone.
    pub fn open() -> Self {
        Self {
            default_visibility: Visibility::Public,
            ..Self::default()
        }
    }

    pub fn wildcard(provider: &str) -> String {
        format!("{provider}:*")
    }

    /// Exact entry, else the provider wildcard, else the default.
    pub fn visibility_of(&self, process_id: &str) -> &Visibility {
        if let Some(v) = self.process_visibility.get(process_id) {
            return v;
        }
        split_namespaced(process_id)
            .and_then(|(provider, _)| self.process_visibility.get(&Self::wildcard(provider)))
            .unwrap_or(&self.default_visibility)
    }

    pub fn is_admin(&self, caller: &Caller) -> bool {
        caller.has_role(&self.admin_role)
    }

    pub fn authorize_process(&self, caller: &Caller, process_id: &str) -> Decision {
        let allowed = self.is_admin(caller)
            || match self.visibility_of(process_id) {
                Visibility::Public => true,
                Visibility::Authenticated => !caller.is_anonymous(),
                Visibility::Role(role) => caller.has_role(role),
            };
        if allowed {
            Decision::Allow
        } else {
            Decision::Deny
        }
    }

    /// Error for a denied describe/execute. Anonymous callers get 404 so the
    /// catalog is not disclosed.
    pub fn denial(&self, caller: &Caller, process_id: &str) -> ProblemDetail {
        if caller.is_anonymous() {
            ProblemDetail::not_found(format!("no process {process_id}"))
        } else {
            ProblemDetail::forbidden(format!("{} may not use process {process_id}", caller.subject()))
        }
    }

    pub fn authorize_job(&self, caller: &Caller, owner: &str) -> Decision {
        if caller.subject() == owner || self.is_admin(caller) {
            Decision::Allow
        } else {
            Decision::Deny
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct UsageRecord {
    pub subject: String,
    pub process_id: String,
    /// Job UUID, or `"sync"` for synchronous runs.
    pub job_id: String,
    pub compute_seconds: f64,
    pub timestamp: DateTime<Utc>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct SubjectUsage {
    pub subject: String,
    pub total_compute_seconds: f64,
    pub runs: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UsageReport {
    pub subjects: Vec<SubjectUsage>,
}

/// Append-only record of compute consumption per subject.
#[derive(Debug, Default)]
pub struct UsageLedger {
    records: Mutex<Vec<UsageRecord>>,
}

impl fmt::Display for UsageRecord {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{} {} {} {}s", self.subject, self.process_id, self.job_id, self.compute_seconds)
    }
}

impl UsageLedger {
    pub fn new() -> Self {
        Self::default()
    }

    /// Pre-execution quota check. `active_jobs` counts the caller's
    /// accepted and running jobs; pass `None` for synchronous runs, which
    /// only consume the daily allowance.
    pub fn check(&self, caller: &Caller, active_jobs: Option<usize>, now: DateTime<Utc>) -> Result<(), ProblemDetail> {
        let Some(quota) = caller.quota() else {
            return Ok(());
        };
        if let Some(active) = active_jobs {
            if active >= quota.max_concurrent_jobs as usize {
                return Err(ProblemDetail::quota_exceeded(format!(
                    "{} already has {active} active jobs (limit {})",
                    caller.subject(),
                    quota.max_concurrent_jobs
                )));
            }
        }
        let used = self.compute_seconds_since(caller.subject(), now - Duration::hours(24));
        if used >= quota.max_compute_seconds_per_day {
            return Err(ProblemDetail::quota_exceeded(format!(
                "{} used {used}s of {}s in the last 24h",
                caller.subject(),
                quota.max_compute_seconds_per_day
            )));
        }
        Ok(())
    }

    pub fn record(&self, record: UsageRecord) {
        debug_assert!(record.compute_seconds >= 0.0);
        self.records.lock().push(record);
    }

    /// Compute seconds recorded for `subject` strictly after `since`.
    pub fn compute_seconds_since(&self, subject: &str, since: DateTime<Utc>) -> f64 {
        self.records
            .lock()
            .iter()
            .filter(|r| r.subject == subject && r.timestamp > since)
            .map(|r| r.compute_seconds)
            .sum()
    }

    pub fn records(&self) -> Vec<UsageRecord> {
        self.records.lock().clone()
    }

    /// Per-subject totals, sorted by subject. With `subject` set, the report
    /// holds exactly that subject (zero if it has no records).
    pub fn report(&self, subject: Option<&str>) -> UsageReport {
        let mut totals: BTreeMap<String, SubjectUsage> = BTreeMap::new();
        if let Some(s) = subject {
            totals.insert(
                s.to_string(),
                SubjectUsage {
                    subject: s.to_string(),
                    total_compute_seconds: 0.0,
                    runs: 0,
                },
            );
        }
        for r in self.records.lock().iter() {
            if subject.is_some_and(|s| s != r.subject) {
                continue;
            }
            let entry = totals.entry(r.subject.clone()).or_insert_with(|| SubjectUsage {
                subject: r.subject.clone(),
                total_compute_seconds: 0.0,
                runs: 0,
            });
            entry.total_compute_seconds += r.compute_seconds;
            entry.runs += 1;
        }
        UsageReport {
            subjects: totals.into_values().collect(),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const TOKENS: &str = "# token\tsubject\troles\tjobs\tseconds\n\
        t-alice\talice\tplanner\t2\t10\n\
        t-root\troot\tadmin,planner\t10\t1000\n\
        \n\
        t-bob\tbob\t\t1\t5.5\n";

    fn auth() -> Authenticator {
        Authenticator::new(TokenStore::parse(TOKENS).unwrap())
    }

    fn principal(subject: &str, roles: &[&str]) -> Caller {
        Caller::Principal(Principal {
            subject: subject.into(),
            roles: roles.iter().map(|r| r.to_string()).collect(),
            quota: Quota {
                max_concurrent_jobs: 2,
                max_compute_seconds_per_day: 10.0,
            },
        })
    }

    #[test]
    fn authenticate_cases() {
        let a = auth();
        assert_eq!(a.authenticate(None).unwrap(), Caller::Anonymous);
        let alice = a.authenticate(Some("t-alice")).unwrap();
        assert_eq!(alice.subject(), "alice");
        assert!(alice.has_role("planner"));
        assert_eq!(alice.quota().unwrap().max_concurrent_jobs, 2);
        let bob = a.authenticate(Some("t-bob")).unwrap();
        assert!(matches!(&bob, Caller::Principal(p) if p.roles.is_empty()));
        assert_eq!(a.authenticate(Some("garbage")).unwrap_err().status, 401);
    }

    #[test]
    fn token_file_errors_carry_line_numbers() {
        let err = TokenStore::parse("a\tb\tc\t1\t1\nbad line\n").unwrap_err();
        assert!(err.to_string().contains("line 2"), "{err}");
        assert!(TokenStore::parse("a\tb\t\t0\t1\n").is_err());
        assert!(TokenStore::parse("a\tb\t\t1\t-1\n").is_err());
        assert!(TokenStore::parse("a\tanonymous\t\t1\t1\n").is_err());
        assert!(TokenStore::parse("a\tb\t\t1\t1\na\tc\t\t1\t1\n").is_err());
    }

    #[test]
    fn replace_swaps_tokens() {
        let a = auth();
        a.replace(TokenStore::parse("new\tnewbie\t\t1\t1\n").unwrap());
        assert!(a.authenticate(Some("t-alice")).is_err());
        assert_eq!(a.authenticate(Some("new")).unwrap().subject(), "newbie");
    }

    #[test]
    fn process_visibility_rules() {
        let mut policy = AccessPolicy::default();
        policy.process_visibility.insert("alpha:*".into(), Visibility::Public);
        policy.process_visibility.insert("alpha:secret".into(), Visibility::Role("planner".into()));
        policy.process_visibility.insert("beta:*".into(), Visibility::Role("planner".into()));

        let anon = Caller::Anonymous;
        let alice = principal("alice", &["planner"]);
        let bob = principal("bob", &[]);
        let root = principal("root", &["admin"]);

        assert!(policy.authorize_process(&anon, "alpha:heat").is_allow());
        assert!(!policy.authorize_process(&anon, "alpha:secret").is_allow());
        assert!(policy.authorize_process(&alice, "alpha:secret").is_allow());
        assert!(!policy.authorize_process(&bob, "beta:x").is_allow());
        assert!(!policy.authorize_process(&anon, "gamma:x").is_allow());
        assert!(policy.authorize_process(&bob, "gamma:x").is_allow());
        for id in ["alpha:heat", "alpha:secret", "beta:x", "gamma:x"] {
            assert!(policy.authorize_process(&root, id).is_allow());
        }
        assert_eq!(policy.denial(&anon, "beta:x").status, 404);
        assert_eq!(policy.denial(&bob, "beta:x").status, 403);
    }

    #[test]
    fn job_ownership() {
        let policy = AccessPolicy::default();
        assert!(policy.authorize_job(&principal("alice", &[]), "alice").is_allow());
        assert!(!policy.authorize_job(&principal("bob", &[]), "alice").is_allow());
        assert!(policy.authorize_job(&principal("root", &["admin"]), "alice").is_allow());
    }

    fn at(hours: i64) -> DateTime<Utc> {
        DateTime::from_timestamp(1_700_000_000, 0).unwrap() + Duration::hours(hours)
    }

    #[test]
    fn concurrent_quota() {
        let ledger = UsageLedger::new();
        let alice = principal("alice", &[]);
        assert!(ledger.check(&alice, Some(1), at(0)).is_ok());
        let err = ledger.check(&alice, Some(2), at(0)).unwrap_err();
        assert_eq!((err.status, err.kind.as_str()), (429, "quota-exceeded"));
        assert!(ledger.check(&Caller::Anonymous, Some(1000), at(0)).is_ok());
    }

    #[test]
    fn daily_cap_rolls_after_24h() {
        let ledger = UsageLedger::new();
        let alice = principal("alice", &[]);
        ledger.record(UsageRecord {
            subject: "alice".into(),
            process_id: "p".into(),
            job_id: "sync".into(),
            compute_seconds: 10.0,
            timestamp: at(0),
        });
        assert_eq!(ledger.check(&alice, None, at(1)).unwrap_err().status, 429);
        assert_eq!(ledger.check(&alice, Some(0), at(23)).unwrap_err().status, 429);
        assert!(ledger.check(&alice, None, at(24)).is_ok());
        assert!(ledger.check(&alice, None, at(30)).is_ok());
    }

    #[test]
    fn report_sums_exactly() {
        let ledger = UsageLedger::new();
        let seconds = [0.1, 0.2, 0.30000000000000004, 7.0, 1e-9];
        let mut expected = 0.0;
        for (i, s) in seconds.iter().enumerate() {
            expected += s;
            ledger.record(UsageRecord {
                subject: "alice".into(),
                process_id: "p".into(),
                job_id: format!("j{i}"),
                compute_seconds: *s,
                timestamp: at(0),
            });
            ledger.record(UsageRecord {
                subject: "bob".into(),
                process_id: "p".into(),
                job_id: "sync".into(),
                compute_seconds: 1.0,
                timestamp: at(0),
            });
        }
        let report = ledger.report(Some("alice"));
        assert_eq!(report.subjects.len(), 1);
        assert_eq!(report.subjects[0].total_compute_seconds, expected);
        assert_eq!(report.subjects[0].runs, 5);
        let all = ledger.report(None);
        assert_eq!(all.subjects.iter().map(|s| s.subject.as_str()).collect::<Vec<_>>(), ["alice", "bob"]);
        assert_eq!(all.subjects[1].total_compute_seconds, 5.0);
        assert_eq!(ledger.report(Some("nobody")).subjects[0].runs, 0);
    }
}
