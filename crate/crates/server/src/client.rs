//! Typed HTTP client for the process API.

use std::time::Duration;

use reqwest::header::{HeaderMap, AUTHORIZATION, CONTENT_TYPE, LOCATION};
use reqwest::{Method, StatusCode, Url};
use serde::de::DeserializeOwned;
use serde_json::Value;

use ump_core::access::UsageReport;
use ump_core::jobs::{Job, JobList};
use ump_core::protocol::{
    from_bytes, to_bytes, ConformanceDeclaration, ExecuteRequest, LandingPage, Outputs, ProcessDescription,
    ProcessList, ProcessSummary, JSON_MEDIA_TYPE,
};
use ump_core::ProblemDetail;

use crate::backend::HOPS_HEADER;
use crate::http::COMPUTE_SECONDS_HEADER;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum ClientError {
    /// The server answered with an error status.
    #[error("{}: {}", .0.status, .0.detail)]
    Remote(ProblemDetail),
    #[error("cannot reach {url}: {detail}")]
    Unreachable { url: String, detail: String },
    #[error("no answer from {url} in time")]
    Timeout { url: String },
    #[error("unexpected response from {url}: {detail}")]
    Protocol { url: String, detail: String },
}

impl ClientError {
    pub fn problem(&self) -> Option<&ProblemDetail> {
        match self {
            ClientError::Remote(p) => Some(p),
            _ => None,
        }
    }
}

/// A raw HTTP exchange.
#[derive(Debug, Clone)]
pub struct RawResponse {
    pub status: StatusCode,
    pub headers: HeaderMap,
    pub body: Vec<u8>,
    url: String,
}

impl RawResponse {
    pub fn header(&self, name: &str) -> Option<&str> {
        self.headers.get(name).and_then(|v| v.to_str().ok())
    }

    /// Errors on non-2xx statuses, decoding the problem body when present.
    pub fn ok(self) -> Result<Self, ClientError> {
        if self.status.is_success() {
            return Ok(self);
        }
        let problem = serde_json::from_slice::<ProblemDetail>(&self.body).unwrap_or_else(|_| {
            ProblemDetail::new(
                self.status.as_u16(),
                "about:blank",
                self.status.canonical_reason().unwrap_or("Error"),
                String::from_utf8_lossy(&self.body).into_owned(),
            )
        });
        Err(ClientError::Remote(problem))
    }

    pub fn parse<T: DeserializeOwned>(&self) -> Result<T, ClientError> {
        from_bytes(&self.body).map_err(|p| ClientError::Protocol {
            url: self.url.clone(),
            detail: p.detail,
        })
    }

    fn compute_seconds(&self) -> Option<f64> {
        self.header(COMPUTE_SECONDS_HEADER).and_then(|v| v.parse().ok())
    }
}

/// Outcome of an execute call.
#[derive(Debug, Clone, PartialEq)]
pub enum Executed {
    /// Synchronous outputs exactly as sent by the server.
    Sync { body: Vec<u8>, compute_seconds: Option<f64> },
    Accepted { job: Job, location: Option<String> },
}

impl Executed {
    pub fn outputs(&self) -> Option<Outputs> {
        match self {
            Executed::Sync { body, .. } => serde_json::from_slice(body).ok(),
            Executed::Accepted { .. } => None,
        }
    }
}

#[derive(Debug, Clone)]
pub struct ProcessClient {
    base: Url,
    token: Option<String>,
    http: reqwest::Client,
}

impl ProcessClient {
    /// `timeout` bounds each request end to end. Connections are not pooled,
    /// so a server that went away is noticed on the next call.
    pub fn new(base_url: &str, token: Option<String>, timeout: Option<Duration>) -> Result<Self, ClientError> {
        let mut base = Url::parse(base_url).map_err(|e| ClientError::Unreachable {
            url: base_url.into(),
            detail: e.to_string(),
        })?;
        if !base.path().ends_with('/') {
            let path = format!("{}/", base.path());
            base.set_path(&path);
        }
        let mut builder = reqwest::Client::builder().pool_max_idle_per_host(0);
        if let Some(t) = timeout {
            builder = builder.timeout(t);
        }
        let http = builder.build().map_err(|e| ClientError::Unreachable {
            url: base_url.into(),
            detail: e.to_string(),
        })?;
        Ok(Self { base, token, http })
    }

    pub fn base_url(&self) -> &str {
        self.base.as_str()
    }

    pub fn url(&self, path: &str, query: &[(&str, &str)]) -> Url {
        let mut url = self.base.join(path.trim_start_matches('/')).expect("relative paths join");
        if !query.is_empty() {
            url.query_pairs_mut().extend_pairs(query);
        }
        url
    }

    /// Sends one request; any HTTP status is returned as a response.
    pub async fn send(
        &self,
        method: Method,
        path: &str,
        query: &[(&str, &str)],
        body: Option<Vec<u8>>,
        headers: &[(&str, String)],
    ) -> Result<RawResponse, ClientError> {
        let url = self.url(path, query);
        let shown = url.to_string();
        let mut req = self.http.request(method, url);
        if let Some(token) = &self.token {
            req = req.header(AUTHORIZATION, format!("Bearer {token}"));
        }
        for (name, value) in headers {
            req = req.header(*name, value);
        }
        if let Some(body) = body {
            req = req.header(CONTENT_TYPE, JSON_MEDIA_TYPE).body(body);
        }
        let resp = req.send().await.map_err(|e| transport_error(&shown, e))?;
        let status = resp.status();
        let headers = resp.headers().clone();
        let body = resp.bytes().await.map_err(|e| transport_error(&shown, e))?.to_vec();
        Ok(RawResponse {
            status,
            headers,
            body,
            url: shown,
        })
    }

    async fn get<T: DeserializeOwned>(&self, path: &str, query: &[(&str, &str)]) -> Result<T, ClientError> {
        self.send(Method::GET, path, query, None, &[]).await?.ok()?.parse()
    }

    pub async fn landing(&self) -> Result<LandingPage, ClientError> {
        self.get("/", &[]).await
    }

    pub async fn conformance(&self) -> Result<ConformanceDeclaration, ClientError> {
        self.get("/conformance", &[]).await
    }

    pub async fn processes(&self, limit: usize, offset: usize) -> Result<ProcessList, ClientError> {
        let (limit, offset) = (limit.to_string(), offset.to_string());
        self.get("/processes", &[("limit", &limit), ("offset", &offset)]).await
    }

    /// Every summary, following pages.
    pub async fn all_processes(&self) -> Result<Vec<ProcessSummary>, ClientError> {
        const PAGE: usize = 1000;
        let mut all = Vec::new();
        loop {
            let page = self.processes(PAGE, all.len()).await?;
            let n = page.processes.len();
            all.extend(page.processes);
            if n < PAGE || all.len() >= page.total {
                return Ok(all);
            }
        }
    }

    /// The description and whether the server flagged it stale.
    pub async fn describe(&self, id: &str) -> Result<(ProcessDescription, bool), ClientError> {
        let resp = self
            .send(Method::GET, &format!("/processes/{id}"), &[], None, &[])
            .await?
            .ok()?;
        let stale = resp.header("warning").is_some_and(|w| w.contains(crate::http::STALE_WARNING));
        Ok((resp.parse()?, stale))
    }

    /// Posts an execution. `req.prefer_async` becomes the `Prefer` header.
    pub async fn execute(&self, id: &str, req: &ExecuteRequest, hops: u32) -> Result<Executed, ClientError> {
        let mut headers = vec![(HOPS_HEADER, hops.to_string())];
        if req.prefer_async {
            headers.push(("prefer", "respond-async".to_string()));
        }
        let body = ExecuteRequest {
            prefer_async: false,
            ..req.clone()
        };
        let resp = self
            .send(Method::POST, &format!("/processes/{id}/execution"), &[], Some(to_bytes(&body)), &headers)
            .await?
            .ok()?;
        if resp.status == StatusCode::CREATED {
            let location = resp.header(LOCATION.as_str()).map(str::to_string);
            return Ok(Executed::Accepted {
                job: resp.parse()?,
                location,
            });
        }
        let compute_seconds = resp.compute_seconds();
        Ok(Executed::Sync {
            body: resp.body,
            compute_seconds,
        })
    }

    pub async fn status(&self, job_id: &str) -> Result<Job, ClientError> {
        self.get(&format!("/jobs/{job_id}"), &[]).await
    }

    /// Raw results document and the reported compute seconds.
    pub async fn results(&self, job_id: &str) -> Result<(Vec<u8>, Option<f64>), ClientError> {
        let resp = self
            .send(Method::GET, &format!("/jobs/{job_id}/results"), &[], None, &[])
            .await?
            .ok()?;
        let seconds = resp.compute_seconds();
        Ok((resp.body, seconds))
    }

    pub async fn dismiss(&self, job_id: &str) -> Result<Job, ClientError> {
        self.send(Method::DELETE, &format!("/jobs/{job_id}"), &[], None, &[])
            .await?
            .ok()?
            .parse()
    }

    pub async fn jobs(&self, query: &[(&str, &str)]) -> Result<JobList, ClientError> {
        self.get("/jobs", query).await
    }

    /// Polls until the job is terminal.
    pub async fn wait(&self, job_id: &str, interval: Duration) -> Result<Job, ClientError> {
        loop {
            let job = self.status(job_id).await?;
            if job.state.is_terminal() {
                return Ok(job);
            }
            tokio::time::sleep(interval).await;
        }
    }

    pub async fn health(&self) -> Result<Value, ClientError> {
        self.get("/health", &[]).await
    }

    pub async fn usage(&self, subject: Option<&str>) -> Result<UsageReport, ClientError> {
        match subject {
            Some(s) => self.get("/admin/usage", &[("subject", s)]).await,
            None => self.get("/admin/usage", &[]).await,
        }
    }

    pub async fn sweep(&self, now: Option<&str>) -> Result<Value, ClientError> {
        let query: Vec<(&str, &str)> = now.map(|n| ("now", n)).into_iter().collect();
        self.send(Method::POST, "/admin/sweep", &query, None, &[])
            .await?
            .ok()?
            .parse()
    }
}

fn transport_error(url: &str, e: reqwest::Error) -> ClientError {
    if e.is_timeout() {
        ClientError::Timeout { url: url.into() }
    } else if e.is_connect() || e.is_request() {
        ClientError::Unreachable {
            url: url.into(),
            detail: error_chain(&e),
        }
    } else {
        ClientError::Protocol {
            url: url.into(),
            detail: error_chain(&e),
        }
    }
}

fn error_chain(e: &dyn std::error::Error) -> String {
    let mut msg = e.to_string();
    let mut source = e.source();
    while let Some(s) = source {
        msg.push_str(": ");
        msg.push_str(&s.to_string());
        source = s.source();
    }
    msg
}
