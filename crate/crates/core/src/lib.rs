//! Core of the urban model platform: the process API data model, job
//! lifecycle, access control, storage and the bundled simulation models.
//!
//! HTTP serving and federation live in `ump-server`.

// Negated float comparisons are used deliberately so that NaN fails checks.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod access;
pub mod clock;
pub mod jobs;
pub mod protocol;
pub mod sim;
pub mod store;

pub use access::{AccessPolicy, Authenticator, Caller, Principal, Quota, TokenStore, UsageLedger};
pub use clock::{Clock, ManualClock, SystemClock};
pub use jobs::{
    ExecutionContext, ExecutionError, ExecutionOutcome, Job, JobConfig, JobDeps, JobManager, JobResults, JobState,
    JobList, ProcessExecutor, Submission, Transition,
};
pub use protocol::ProblemDetail;
