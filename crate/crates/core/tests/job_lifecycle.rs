use std::collections::HashSet;
use std::sync::Arc;
use std::time::Duration as StdDuration;

use async_trait::async_trait;
use chrono::{DateTime, Duration, Utc};
use serde_json::json;
use uuid::Uuid;

use ump_core::access::{AccessPolicy, Caller, Principal, Quota, UsageLedger};
use ump_core::jobs::{
    ExecutionContext, ExecutionError, ExecutionOutcome, JobConfig, JobDeps, JobManager, JobResults, JobState,
    ProcessExecutor, Submission, Transition,
};
use ump_core::protocol::{to_bytes, ExecuteRequest, Inputs, Outputs};
use ump_core::store::{JobLog, MemoryJobLog, MemoryResultStore};
use ump_core::{sim, Clock, ManualClock};

struct Constant;

#[async_trait]
impl ProcessExecutor for Constant {
    async fn execute(&self, _: Inputs, _: ExecutionContext) -> Result<Outputs, ExecutionError> {
        Ok(Outputs::from([("answer".to_string(), json!(42))]))
    }
}

struct DivideByZero;

#[async_trait]
impl ProcessExecutor for DivideByZero {
    async fn execute(&self, inputs: Inputs, _: ExecutionContext) -> Result<Outputs, ExecutionError> {
        let denominator = inputs.get("d").and_then(|v| v.as_i64()).unwrap_or(0);
        1i64.checked_div(denominator)
            .map(|q| Outputs::from([("q".to_string(), json!(q))]))
            .ok_or_else(|| ExecutionError::Failed("division by zero".into()))
    }
}

struct Panics;

#[async_trait]
impl ProcessExecutor for Panics {
    async fn execute(&self, _: Inputs, _: ExecutionContext) -> Result<Outputs, ExecutionError> {
        panic!("boom")
    }
}

/// Blocks until released, checking for cancellation.
struct Gate(Arc<tokio::sync::Notify>);

#[async_trait]
impl ProcessExecutor for Gate {
    async fn execute(&self, _: Inputs, ctx: ExecutionContext) -> Result<Outputs, ExecutionError> {
        ctx.report_progress(40);
        loop {
            tokio::select! {
                _ = self.0.notified() => return Ok(Outputs::from([("done".to_string(), json!(true))])),
                _ = tokio::time::sleep(StdDuration::from_millis(5)) => {
                    if ctx.is_cancelled() {
                        return Err(ExecutionError::Cancelled);
                    }
                }
            }
        }
    }
}

fn t0() -> DateTime<Utc> {
    DateTime::from_timestamp(1_700_000_000, 0).unwrap()
}

fn principal(subject: &str, roles: &[&str], jobs: u32, seconds: f64) -> Caller {
    Caller::Principal(Principal {
        subject: subject.into(),
        roles: roles.iter().map(|r| r.to_string()).collect(),
        quota: Quota {
            max_concurrent_jobs: jobs,
            max_compute_seconds_per_day: seconds,
        },
    })
}

fn alice() -> Caller {
    principal("alice", &[], 1000, 1e9)
}

fn manager() -> JobManager {
    JobManager::start(JobConfig::default(), JobDeps::default())
}

fn manual(clock: &ManualClock, config: JobConfig) -> JobManager {
    JobManager::start(
        config,
        JobDeps {
            clock: Arc::new(clock.clone()),
            ..JobDeps::default()
        },
    )
}

async fn wait_terminal(m: &JobManager, id: Uuid) -> ump_core::Job {
    for _ in 0..500 {
        let job = m.peek(id).unwrap();
        if job.state.is_terminal() {
            return job;
        }
        tokio::time::sleep(StdDuration::from_millis(5)).await;
    }
    panic!("job {id} never finished");
}

async fn submit_async(m: &JobManager, caller: &Caller, exec: Arc<dyn ProcessExecutor>) -> ump_core::Job {
    match m.submit("p", ExecuteRequest::default().asynchronous(), caller, exec, 0).await.unwrap() {
        Submission::Accepted(job) => job,
        Submission::Sync(_) => panic!("expected a job"),
    }
}

#[tokio::test]
async fn sync_submit_creates_no_job() {
    let m = manager();
    let out = m.submit("const", ExecuteRequest::default(), &alice(), Arc::new(Constant), 0).await.unwrap();
    match out {
        Submission::Sync(outcome) => assert_eq!(outcome.outputs["answer"], json!(42)),
        Submission::Accepted(_) => panic!("sync run produced a job"),
    }
    assert!(m.is_empty());
    assert!(m.list(&alice(), &AccessPolicy::default()).is_empty());
}

#[tokio::test]
async fn async_submit_starts_accepted_and_succeeds() {
    let m = manager();
    let job = submit_async(&m, &alice(), Arc::new(Constant)).await;
    assert_eq!((job.state, job.progress), (JobState::Accepted, 0));
    let now = m.get_status(job.job_id, &alice(), &AccessPolicy::default()).unwrap();
    assert!(matches!(now.state, JobState::Accepted | JobState::Running | JobState::Successful));
    let done = wait_terminal(&m, job.job_id).await;
    assert_eq!((done.state, done.progress), (JobState::Successful, 100));
    done.check_invariants().unwrap();
    let results = m.get_results(job.job_id, &alice(), &AccessPolicy::default()).unwrap();
    assert_eq!(results, JobResults::Stored(br#"{"answer":42}"#.to_vec()));

    // Finished snapshots never change.
    let again = m.get_status(job.job_id, &alice(), &AccessPolicy::default()).unwrap();
    assert_eq!(again, done);
}

#[tokio::test]
async fn failing_process_fails_the_job() {
    let m = manager();
    let job = submit_async(&m, &alice(), Arc::new(DivideByZero)).await;
    let done = wait_terminal(&m, job.job_id).await;
    assert_eq!(done.state, JobState::Failed);
    assert!(!done.message.is_empty());
    let err = m.get_results(job.job_id, &alice(), &AccessPolicy::default()).unwrap_err();
    assert_eq!(err.status, 404);
    assert!(err.detail.contains("results not available"));

    let sync = m.submit("p", ExecuteRequest::default(), &alice(), Arc::new(DivideByZero), 0).await.unwrap_err();
    assert_eq!(sync.status, 500);
    assert!(sync.detail.contains("division by zero"));
}

#[tokio::test]
async fn panicking_process_is_contained() {
    let m = manager();
    let job = submit_async(&m, &alice(), Arc::new(Panics)).await;
    assert_eq!(wait_terminal(&m, job.job_id).await.state, JobState::Failed);
    assert_eq!(m.submit("p", ExecuteRequest::default(), &alice(), Arc::new(Panics), 0).await.unwrap_err().status, 500);
    // The pool still works.
    let ok = submit_async(&m, &alice(), Arc::new(Constant)).await;
    assert_eq!(wait_terminal(&m, ok.job_id).await.state, JobState::Successful);
}

#[tokio::test]
async fn unknown_and_foreign_jobs() {
    let m = manager();
    let policy = AccessPolicy::default();
    assert_eq!(m.get_status(Uuid::new_v4(), &alice(), &policy).unwrap_err().status, 404);
    let job = submit_async(&m, &alice(), Arc::new(Constant)).await;
    let bob = principal("bob", &[], 10, 10.0);
    assert_eq!(m.get_status(job.job_id, &bob, &policy).unwrap_err().status, 403);
    assert_eq!(m.get_results(job.job_id, &bob, &policy).unwrap_err().status, 403);
    assert_eq!(m.dismiss(job.job_id, &bob, &policy).unwrap_err().status, 403);
    let admin = principal("root", &["admin"], 10, 10.0);
    assert!(m.get_status(job.job_id, &admin, &policy).is_ok());
    assert!(m.list(&bob, &policy).is_empty());
    assert_eq!(m.list(&admin, &policy).len(), 1);
}

/// Builds a job in `state` through the public API.
fn job_in_state(m: &JobManager, state: JobState) -> Uuid {
    let job = m.create_linked("p", &alice(), &Inputs::new(), "prov").unwrap();
    let id = job.job_id;
    let path: &[Transition] = match state {
        JobState::Accepted => &[],
        JobState::Running => &[Transition::Start],
        JobState::Successful => &[Transition::Start, Transition::into_state(JobState::Successful).unwrap()],
        JobState::Failed => &[Transition::Start, Transition::Fail("x".into())],
        JobState::Dismissed => &[Transition::Dismiss("x".into())],
    };
    for t in path {
        m.transition(id, t.clone()).unwrap();
    }
    assert_eq!(m.peek(id).unwrap().state, state);
    id
}

#[tokio::test]
async fn exactly_five_legal_transitions() {
    let m = manager();
    let mut legal = Vec::new();
    for from in JobState::ALL {
        for to in JobState::ALL {
            let id = job_in_state(&m, from);
            let before = m.peek(id).unwrap();
            let accepted = match Transition::into_state(to) {
                Some(t) => m.transition(id, t).is_ok(),
                None => false,
            };
            let after = m.peek(id).unwrap();
            after.check_invariants().unwrap();
            if accepted {
                assert_eq!(after.state, to);
                legal.push((from, to));
            } else {
                assert_eq!(after, before, "rejected transition {from} -> {to} changed the job");
            }
            assert_eq!(accepted, from.can_transition(to));
        }
    }
    use JobState::*;
    assert_eq!(
        legal,
        vec![(Accepted, Running), (Accepted, Dismissed), (Running, Successful), (Running, Failed), (Running, Dismissed)]
    );
}

#[tokio::test]
async fn dismissal() {
    let m = JobManager::start(
        JobConfig {
            workers: 1,
            ..JobConfig::default()
        },
        JobDeps::default(),
    );
    let policy = AccessPolicy::default();
    let gate = Arc::new(tokio::sync::Notify::new());
    let running = submit_async(&m, &alice(), Arc::new(Gate(gate.clone()))).await;
    let queued = submit_async(&m, &alice(), Arc::new(Constant)).await;

    // The single worker holds `running`; `queued` waits.
    for _ in 0..200 {
        if m.peek(running.job_id).unwrap().state == JobState::Running {
            break;
        }
        tokio::time::sleep(StdDuration::from_millis(5)).await;
    }
    assert_eq!(m.peek(running.job_id).unwrap().progress, 40);
    assert_eq!(m.dismiss(queued.job_id, &alice(), &policy).unwrap().state, JobState::Dismissed);
    assert_eq!(m.dismiss(queued.job_id, &alice(), &policy).unwrap_err().status, 409);

    let dismissed = m.dismiss(running.job_id, &alice(), &policy).unwrap();
    assert_eq!(dismissed.state, JobState::Dismissed);
    dismissed.check_invariants().unwrap();
    tokio::time::sleep(StdDuration::from_millis(50)).await;
    assert_eq!(m.peek(running.job_id).unwrap().state, JobState::Dismissed);
    assert_eq!(m.peek(queued.job_id).unwrap().state, JobState::Dismissed);

    let done = submit_async(&m, &alice(), Arc::new(Constant)).await;
    wait_terminal(&m, done.job_id).await;
    assert_eq!(m.dismiss(done.job_id, &alice(), &policy).unwrap_err().status, 409);
}

#[tokio::test(flavor = "multi_thread", worker_threads = 4)]
async fn concurrent_submits_are_distinct() {
    let m = manager();
    let mut handles = Vec::new();
    for _ in 0..100 {
        let m = m.clone();
        handles.push(tokio::spawn(async move { submit_async(&m, &alice(), Arc::new(Constant)).await.job_id }));
    }
    let mut ids = HashSet::new();
    for h in handles {
        ids.insert(h.await.unwrap());
    }
    assert_eq!(ids.len(), 100);
    assert_eq!(m.len(), 100);
    for id in &ids {
        wait_terminal(&m, *id).await.check_invariants().unwrap();
    }
}

#[tokio::test(flavor = "multi_thread", worker_threads = 4)]
async fn concurrent_reads_see_consistent_snapshots() {
    let m = manager();
    let ids: Vec<Uuid> = {
        let mut v = Vec::new();
        for _ in 0..20 {
            v.push(submit_async(&m, &alice(), Arc::new(sim::HeatDiffusion)).await.job_id);
        }
        v
    };
    let reader = {
        let m = m.clone();
        let ids = ids.clone();
        tokio::spawn(async move {
            for _ in 0..200 {
                for id in &ids {
                    m.peek(*id).unwrap().check_invariants().unwrap();
                }
                tokio::task::yield_now().await;
            }
        })
    };
    reader.await.unwrap();
}

#[tokio::test]
async fn queue_full_is_429() {
    let gate = Arc::new(tokio::sync::Notify::new());
    let m = JobManager::start(
        JobConfig {
            workers: 1,
            queue_capacity: 2,
            ..JobConfig::default()
        },
        JobDeps::default(),
    );
    let first = submit_async(&m, &alice(), Arc::new(Gate(gate.clone()))).await;
    for _ in 0..200 {
        if m.peek(first.job_id).unwrap().state == JobState::Running {
            break;
        }
        tokio::time::sleep(StdDuration::from_millis(5)).await;
    }
    submit_async(&m, &alice(), Arc::new(Constant)).await;
    submit_async(&m, &alice(), Arc::new(Constant)).await;
    let err = m
        .submit("p", ExecuteRequest::default().asynchronous(), &alice(), Arc::new(Constant), 0)
        .await
        .unwrap_err();
    assert_eq!(err.status, 429);
    assert_eq!(m.len(), 3);
    gate.notify_one();
}

#[tokio::test]
async fn concurrent_job_quota() {
    let m = manager();
    let gate = Arc::new(tokio::sync::Notify::new());
    let limited = principal("carol", &[], 2, 1e6);
    submit_async(&m, &limited, Arc::new(Gate(gate.clone()))).await;
    submit_async(&m, &limited, Arc::new(Gate(gate.clone()))).await;
    let err = m
        .submit("p", ExecuteRequest::default().asynchronous(), &limited, Arc::new(Constant), 0)
        .await
        .unwrap_err();
    assert_eq!((err.status, err.kind.as_str()), (429, "quota-exceeded"));
    gate.notify_waiters();
}

#[tokio::test]
async fn retention_sweep() {
    let clock = ManualClock::new(t0());
    let m = manual(
        &clock,
        JobConfig {
            retention: Duration::seconds(100),
            ..JobConfig::default()
        },
    );
    let policy = AccessPolicy::default();
    // Five jobs finishing at t0, t0+10, ..., t0+40 expire at t0+100 ... t0+140.
    let mut ids = Vec::new();
    for i in 0..5 {
        clock.set(t0() + Duration::seconds(10 * i));
        let job = m.create_linked("p", &alice(), &Inputs::new(), "local").unwrap();
        m.transition(job.job_id, Transition::Start).unwrap();
        m.transition(
            job.job_id,
            Transition::Succeed(ExecutionOutcome {
                outputs: Outputs::from([("i".to_string(), json!(i))]),
                compute_seconds: 0.0,
            }),
        )
        .unwrap();
        ids.push(job.job_id);
    }
    assert_eq!(m.sweep_expired(t0() + Duration::seconds(50)), 0);

    // expiresAt < now for the jobs expiring at 100, 110, 120.
    let now = t0() + Duration::seconds(125);
    clock.set(now);
    assert_eq!(m.sweep_expired(now), 3);
    assert_eq!(m.sweep_expired(now), 0);
    for (i, id) in ids.iter().enumerate() {
        let res = m.get_results(*id, &alice(), &policy);
        if i < 3 {
            assert_eq!(res.unwrap_err().status, 410);
            // Metadata survives the purge.
            assert_eq!(m.get_status(*id, &alice(), &policy).unwrap().state, JobState::Successful);
        } else {
            assert_eq!(res.unwrap(), JobResults::Stored(to_bytes(&Outputs::from([("i".to_string(), json!(i))]))));
        }
    }
}

#[tokio::test]
async fn job_log_holds_legal_paths() {
    let log = Arc::new(MemoryJobLog::new());
    let m = JobManager::start(
        JobConfig::default(),
        JobDeps {
            log: log.clone(),
            results: Arc::new(MemoryResultStore::new()),
            ..JobDeps::default()
        },
    );
    let a = submit_async(&m, &alice(), Arc::new(Constant)).await;
    let b = submit_async(&m, &alice(), Arc::new(DivideByZero)).await;
    wait_terminal(&m, a.job_id).await;
    wait_terminal(&m, b.job_id).await;
    for id in [a.job_id, b.job_id] {
        let history = log.history(id).unwrap();
        assert_eq!(history[0].job.state, JobState::Accepted);
        for pair in history.windows(2) {
            assert!(pair[0].job.state.can_transition(pair[1].job.state));
        }
        assert!(history.last().unwrap().job.state.is_terminal());
        assert_eq!(history[0].inputs_digest.len(), 64);
    }
}

#[tokio::test]
async fn sync_and_async_outputs_match() {
    let m = manager();
    let mut inputs = Inputs::new();
    let mut grid = ump_core::protocol::NumberGrid::filled(5, 4, 18.0);
    grid.values[7] = 35.5;
    inputs.insert("grid".into(), serde_json::to_value(&grid).unwrap());
    inputs.insert("alpha".into(), json!(0.2));
    inputs.insert("iterations".into(), json!(13));
    let req = ExecuteRequest::new(inputs);
    let Submission::Sync(sync) = m.submit("h", req.clone(), &alice(), Arc::new(sim::HeatDiffusion), 0).await.unwrap() else {
        panic!()
    };
    let Submission::Accepted(job) = m.submit("h", req.asynchronous(), &alice(), Arc::new(sim::HeatDiffusion), 0).await.unwrap() else {
        panic!()
    };
    wait_terminal(&m, job.job_id).await;
    let JobResults::Stored(bytes) = m.get_results(job.job_id, &alice(), &AccessPolicy::default()).unwrap() else {
        panic!()
    };
    assert_eq!(bytes, to_bytes(&sync.outputs));
}

#[tokio::test]
async fn usage_is_conserved_and_daily_cap_applies() {
    let clock = ManualClock::new(t0());
    let usage = Arc::new(UsageLedger::new());
    let m = JobManager::start(
        JobConfig::default(),
        JobDeps {
            clock: Arc::new(clock.clone()),
            usage: usage.clone(),
            ..JobDeps::default()
        },
    );
    let dave = principal("dave", &[], 10, 1e6);
    let mut expected = Vec::new();
    for _ in 0..3 {
        let Submission::Sync(o) = m.submit("c", ExecuteRequest::default(), &dave, Arc::new(Constant), 0).await.unwrap() else {
            panic!()
        };
        expected.push(o.compute_seconds);
    }
    let job = submit_async(&m, &dave, Arc::new(Constant)).await;
    wait_terminal(&m, job.job_id).await;
    expected.push(m.compute_seconds(job.job_id).unwrap());
    let total: f64 = expected.iter().sum();
    assert_eq!(usage.report(Some("dave")).subjects[0].total_compute_seconds, total);

    // A subject that has burnt its daily allowance is refused until the window rolls.
    usage.record(ump_core::access::UsageRecord {
        subject: "erin".into(),
        process_id: "c".into(),
        job_id: "sync".into(),
        compute_seconds: 10.0,
        timestamp: clock.now(),
    });
    let erin = principal("erin", &[], 10, 10.0);
    assert_eq!(m.submit("c", ExecuteRequest::default(), &erin, Arc::new(Constant), 0).await.unwrap_err().status, 429);
    clock.advance(Duration::hours(24) + Duration::seconds(1));
    assert!(m.submit("c", ExecuteRequest::default(), &erin, Arc::new(Constant), 0).await.is_ok());
}
