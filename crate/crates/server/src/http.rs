//! HTTP binding of the process API. Model servers and platforms share this
//! router; they differ only in their [`Backend`].

use std::sync::Arc;

use axum::body::Bytes;
use axum::extract::{Path, Query, Request, State};
use axum::http::{header, HeaderMap, HeaderName, HeaderValue, StatusCode};
use axum::middleware::{self, Next};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Extension, Router};
use chrono::{DateTime, Utc};
use serde::Serialize;
use serde_json::json;
use uuid::Uuid;

use ump_core::access::Caller;
use ump_core::jobs::{JobList, Submission};
use ump_core::protocol::{self, from_bytes, to_bytes, ExecuteRequest, ProcessList, JSON_MEDIA_TYPE, PROBLEM_MEDIA_TYPE};
use ump_core::store::{JobFilter, Paging};
use ump_core::ProblemDetail;

use crate::backend::{Backend, HOPS_HEADER, MAX_HOPS};

pub const COMPUTE_SECONDS_HEADER: &str = "x-compute-seconds";

/// Value of the `Warning` header on descriptions served from cache.
pub const STALE_WARNING: &str = "stale";

/// One entry of the route table.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RouteSpec {
    pub method: &'static str,
    pub path: &'static str,
    /// Whether the route runs behind authentication.
    pub authenticated: bool,
}

const fn route(method: &'static str, path: &'static str, authenticated: bool) -> RouteSpec {
    RouteSpec {
        method,
        path,
        authenticated,
    }
}

/// Every route served by [`router`]. Path parameters are written `{name}`.
pub const ROUTES: [RouteSpec; 12] = [
    route("GET", "/", false),
    route("GET", "/conformance", false),
    route("GET", "/processes", true),
    route("GET", "/processes/{processID}", true),
    route("POST", "/processes/{processID}/execution", true),
    route("GET", "/jobs", true),
    route("GET", "/jobs/{jobID}", true),
    route("GET", "/jobs/{jobID}/results", true),
    route("DELETE", "/jobs/{jobID}", true),
    route("GET", "/health", true),
    route("GET", "/admin/usage", true),
    route("POST", "/admin/sweep", true),
];

/// A [`ProblemDetail`] rendered as `application/problem+json`.
#[derive(Debug)]
pub struct Problem(pub ProblemDetail);

impl From<ProblemDetail> for Problem {
    fn from(p: ProblemDetail) -> Self {
        Problem(p)
    }
}

impl IntoResponse for Problem {
    fn into_response(self) -> Response {
        let status = StatusCode::from_u16(self.0.status).unwrap_or(StatusCode::INTERNAL_SERVER_ERROR);
        (status, [(header::CONTENT_TYPE, PROBLEM_MEDIA_TYPE)], to_bytes(&self.0)).into_response()
    }
}

type Api = Arc<dyn Backend>;
type ApiResult = Result<Response, Problem>;

fn json<T: Serialize>(status: StatusCode, value: &T) -> Response {
    (status, [(header::CONTENT_TYPE, JSON_MEDIA_TYPE)], to_bytes(value)).into_response()
}

fn raw_json(bytes: Vec<u8>) -> Response {
    (StatusCode::OK, [(header::CONTENT_TYPE, JSON_MEDIA_TYPE)], bytes).into_response()
}

pub fn router(api: Api) -> Router {
    let protected = Router::new()
        .route("/processes", get(list_processes))
        .route("/processes/{id}", get(describe))
        .route("/processes/{id}/execution", post(execute))
        .route("/jobs", get(list_jobs))
        .route("/jobs/{id}", get(job_status).delete(dismiss))
        .route("/jobs/{id}/results", get(job_results))
        .route("/health", get(health))
        .route("/admin/usage", get(usage))
        .route("/admin/sweep", post(sweep))
        .route_layer(middleware::from_fn_with_state(api.clone(), authenticate));
    Router::new()
        .route("/", get(landing))
        .route("/conformance", get(conformance))
        .merge(protected)
        .fallback(no_route)
        .method_not_allowed_fallback(no_route)
        .with_state(api)
}

async fn no_route() -> Problem {
    Problem(ProblemDetail::not_found("no such route"))
}

/// Extracts the bearer token. A malformed `Authorization` header is a 401.
pub fn bearer_token(headers: &HeaderMap) -> Result<Option<String>, ProblemDetail> {
    let Some(value) = headers.get(header::AUTHORIZATION) else {
        return Ok(None);
    };
    let value = value
        .to_str()
        .map_err(|_| ProblemDetail::unauthorized("malformed Authorization header"))?;
    match value.split_once(' ') {
        Some((scheme, token)) if scheme.eq_ignore_ascii_case("bearer") && !token.trim().is_empty() => {
            Ok(Some(token.trim().to_string()))
        }
        _ => Err(ProblemDetail::unauthorized("expected a Bearer token")),
    }
}

async fn authenticate(State(api): State<Api>, mut req: Request, next: Next) -> Response {
    let caller = bearer_token(req.headers()).and_then(|token| api.authenticate(token.as_deref()));
    match caller {
        Ok(caller) => {
            req.extensions_mut().insert(caller);
            next.run(req).await
        }
        Err(p) => Problem(p).into_response(),
    }
}

/// True if the `Prefer` header asks for asynchronous execution.
pub fn prefers_async(headers: &HeaderMap) -> bool {
    headers
        .get_all("prefer")
        .iter()
        .filter_map(|v| v.to_str().ok())
        .flat_map(|v| v.split(','))
        .any(|pref| pref.trim().eq_ignore_ascii_case("respond-async"))
}

pub fn hop_count(headers: &HeaderMap) -> Result<u32, ProblemDetail> {
    match headers.get(HOPS_HEADER) {
        None => Ok(0),
        Some(v) => v
            .to_str()
            .ok()
            .and_then(|s| s.trim().parse().ok())
            .ok_or_else(|| ProblemDetail::bad_request(format!("{HOPS_HEADER} must be a non-negative integer"))),
    }
}

fn job_id(raw: &str) -> Result<Uuid, ProblemDetail> {
    Uuid::parse_str(raw).map_err(|_| ProblemDetail::not_found(format!("no job {raw}")))
}

async fn landing(State(api): State<Api>) -> Response {
    json(StatusCode::OK, &api.landing())
}

async fn conformance() -> Response {
    json(StatusCode::OK, &protocol::conformance())
}

async fn list_processes(
    State(api): State<Api>,
    Extension(caller): Extension<Caller>,
    Query(params): Query<Vec<(String, String)>>,
) -> ApiResult {
    let mut paging = Paging::default();
    for (key, value) in &params {
        match key.as_str() {
            "limit" | "offset" => paging.set(key, value)?,
            other => return Err(ProblemDetail::bad_request(format!("unknown parameter {other:?}")).into()),
        }
    }
    let all = api.list_processes(&caller).await;
    let total = all.len();
    Ok(json(
        StatusCode::OK,
        &ProcessList {
            processes: paging.apply(all),
            total,
        },
    ))
}

async fn describe(State(api): State<Api>, Extension(caller): Extension<Caller>, Path(id): Path<String>) -> ApiResult {
    let described = api.describe(&id, &caller).await?;
    let mut response = json(StatusCode::OK, &described.description);
    if described.stale {
        response
            .headers_mut()
            .insert(header::WARNING, HeaderValue::from_static(STALE_WARNING));
    }
    Ok(response)
}

async fn execute(
    State(api): State<Api>,
    Extension(caller): Extension<Caller>,
    Path(id): Path<String>,
    headers: HeaderMap,
    body: Bytes,
) -> ApiResult {
    let hops = hop_count(&headers)?;
    if hops > MAX_HOPS {
        return Err(ProblemDetail::federation_loop(format!("request passed {hops} platforms (limit {MAX_HOPS})")).into());
    }
    let mut req: ExecuteRequest = if body.iter().all(u8::is_ascii_whitespace) {
        ExecuteRequest::default()
    } else {
        from_bytes(&body)?
    };
    req.prefer_async |= prefers_async(&headers);
    match api.execute(&id, req, &caller, hops).await? {
        Submission::Sync(outcome) => {
            let mut response = json(StatusCode::OK, &outcome.outputs);
            if let Ok(v) = HeaderValue::from_str(&outcome.compute_seconds.to_string()) {
                response.headers_mut().insert(HeaderName::from_static(COMPUTE_SECONDS_HEADER), v);
            }
            Ok(response)
        }
        Submission::Accepted(job) => {
            let mut response = json(StatusCode::CREATED, &job);
            let location = HeaderValue::from_str(&format!("/jobs/{}", job.job_id)).expect("uuid is a valid header");
            response.headers_mut().insert(header::LOCATION, location);
            Ok(response)
        }
    }
}

async fn list_jobs(
    State(api): State<Api>,
    Extension(caller): Extension<Caller>,
    Query(params): Query<Vec<(String, String)>>,
) -> ApiResult {
    let (filter, paging) = JobFilter::from_query(params.iter().map(|(k, v)| (k.as_str(), v.as_str())))?;
    let jobs: Vec<_> = api
        .jobs()
        .list(&caller, &api.policy())
        .into_iter()
        .filter(|j| filter.matches(j))
        .collect();
    let total = jobs.len();
    Ok(json(
        StatusCode::OK,
        &JobList {
            jobs: paging.apply(jobs),
            total,
        },
    ))
}

async fn job_status(State(api): State<Api>, Extension(caller): Extension<Caller>, Path(id): Path<String>) -> ApiResult {
    let job = api.jobs().get_status(job_id(&id)?, &caller, &api.policy())?;
    Ok(json(StatusCode::OK, &job))
}

async fn job_results(State(api): State<Api>, Extension(caller): Extension<Caller>, Path(id): Path<String>) -> ApiResult {
    let id = job_id(&id)?;
    let bytes = api.results(id, &caller).await?;
    let mut response = raw_json(bytes);
    if let Some(seconds) = api.jobs().compute_seconds(id) {
        if let Ok(v) = HeaderValue::from_str(&seconds.to_string()) {
            response.headers_mut().insert(HeaderName::from_static(COMPUTE_SECONDS_HEADER), v);
        }
    }
    Ok(response)
}

async fn dismiss(State(api): State<Api>, Extension(caller): Extension<Caller>, Path(id): Path<String>) -> ApiResult {
    let job = api.dismiss(job_id(&id)?, &caller).await?;
    Ok(json(StatusCode::OK, &job))
}

async fn health(State(api): State<Api>) -> Response {
    json(StatusCode::OK, &api.health())
}

fn require_admin(api: &Api, caller: &Caller) -> Result<(), ProblemDetail> {
    if caller.is_anonymous() {
        return Err(ProblemDetail::unauthorized("administration requires a token"));
    }
    if !api.policy().is_admin(caller) {
        return Err(ProblemDetail::forbidden(format!("{} is not an administrator", caller.subject())));
    }
    Ok(())
}

async fn usage(
    State(api): State<Api>,
    Extension(caller): Extension<Caller>,
    Query(params): Query<Vec<(String, String)>>,
) -> ApiResult {
    require_admin(&api, &caller)?;
    let mut subject = None;
    for (key, value) in &params {
        match key.as_str() {
            "subject" => subject = Some(value.as_str()),
            other => return Err(ProblemDetail::bad_request(format!("unknown parameter {other:?}")).into()),
        }
    }
    Ok(json(StatusCode::OK, &api.jobs().usage().report(subject)))
}

async fn sweep(
    State(api): State<Api>,
    Extension(caller): Extension<Caller>,
    Query(params): Query<Vec<(String, String)>>,
) -> ApiResult {
    require_admin(&api, &caller)?;
    let mut now = api.jobs().clock().now();
    for (key, value) in &params {
        match key.as_str() {
            "now" => {
                now = DateTime::parse_from_rfc3339(value)
                    .map_err(|e| ProblemDetail::bad_request(format!("now: {e}")))?
                    .with_timezone(&Utc)
            }
            other => return Err(ProblemDetail::bad_request(format!("unknown parameter {other:?}")).into()),
        }
    }
    let purged = api.sweep(now);
    Ok(json(StatusCode::OK, &json!({ "purged": purged, "now": now })))
}
