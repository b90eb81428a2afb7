use std::fmt;

use serde::{Deserialize, Serialize};

use super::validate::Violation;

/// Media type for problem bodies.
pub const PROBLEM_MEDIA_TYPE: &str = "application/problem+json";

/// HTTP statuses a [`ProblemDetail`] may carry.
pub const ALLOWED_STATUSES: [u16; 11] = [400, 401, 403, 404, 409, 410, 422, 429, 500, 502, 504];

/// Error body returned by every endpoint on failure.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct ProblemDetail {
    #[serde(rename = "type")]
    pub kind: String,
    pub title: String,
    pub status: u16,
    pub detail: String,
    /// Input violations, present on 422 responses.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub violations: Option<Vec<Violation>>,
}

impl ProblemDetail {
    pub fn new(status: u16, kind: impl Into<String>, title: impl Into<String>, detail: impl Into<String>) -> Self {
        debug_assert!(ALLOWED_STATUSES.contains(&status), "status {status} not allowed");
        Self {
            kind: kind.into(),
            title: title.into(),
            status,
            detail: detail.into(),
            violations: None,
        }
    }

    pub fn bad_request(detail: impl Into<String>) -> Self {
        Self::new(400, "bad-request", "Bad request", detail)
    }

    pub fn unauthorized(detail: impl Into<String>) -> Self {
        Self::new(401, "unauthorized", "Unauthorized", detail)
    }

    pub fn forbidden(detail: impl Into<String>) -> Self {
        Self::new(403, "forbidden", "Forbidden", detail)
    }

    pub fn not_found(detail: impl Into<String>) -> Self {
        Self::new(404, "not-found", "Not found", detail)
    }

    pub fn conflict(detail: impl Into<String>) -> Self {
        Self::new(409, "conflict", "Conflict", detail)
    }

    pub fn gone(detail: impl Into<String>) -> Self {
        Self::new(410, "gone", "Gone", detail)
    }

    pub fn invalid_inputs(violations: Vec<Violation>) -> Self {
        let detail = violations.iter().map(ToString::to_string).collect::<Vec<_>>().join("; ");
        Self {
            violations: Some(violations),
            ..Self::new(422, "invalid-inputs", "Invalid inputs", detail)
        }
    }

    pub fn too_many_requests(detail: impl Into<String>) -> Self {
        Self::new(429, "queue-full", "Too many requests", detail)
    }

    pub fn quota_exceeded(detail: impl Into<String>) -> Self {
        Self::new(429, "quota-exceeded", "Quota exceeded", detail)
    }

    pub fn internal(detail: impl Into<String>) -> Self {
        Self::new(500, "internal-error", "Internal server error", detail)
    }

    pub fn federation_loop(detail: impl Into<String>) -> Self {
        Self::new(500, "federation-loop", "Federation loop detected", detail)
    }

    pub fn bad_gateway(detail: impl Into<String>) -> Self {
        Self::new(502, "bad-gateway", "Upstream unavailable", detail)
    }

    pub fn gateway_timeout(detail: impl Into<String>) -> Self {
        Self::new(504, "gateway-timeout", "Upstream timed out", detail)
    }

    /// True if `status` is one of [`ALLOWED_STATUSES`].
    pub fn has_valid_status(&self) -> bool {
        ALLOWED_STATUSES.contains(&self.status)
    }
}

impl fmt::Display for ProblemDetail {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{} {}: {}", self.status, self.title, self.detail)
    }
}

impl std::error::Error for ProblemDetail {}
