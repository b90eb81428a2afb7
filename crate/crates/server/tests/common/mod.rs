#![allow(dead_code)]

use std::sync::Arc;
use std::time::Duration;

use rand::rngs::StdRng;
use rand::{Rng, SeedableRng};
use serde_json::{json, Value};

use ump_core::access::{AccessPolicy, TokenStore};
use ump_core::jobs::{Job, JobConfig, JobDeps, JobManager};
use ump_core::protocol::{Inputs, NumberGrid};
use ump_core::sim;
use ump_server::model_server::{ModelServer, ProcessRegistration};
use ump_server::serve::{self, RunningServer};
use ump_server::{Backend, ProcessClient};

pub const TOKENS: &str = "\
admin-token\troot\tadmin\t100\t100000
alice-token\talice\tanalyst\t100\t100000
bob-token\tbob\t\t100\t100000
carol-token\tcarol\t\t2\t100000
";

pub fn rng(seed: u64) -> StdRng {
    StdRng::seed_from_u64(seed)
}

pub fn random_grid(rng: &mut StdRng) -> NumberGrid {
    let width = rng.random_range(1..=7);
    let height = rng.random_range(1..=7);
    NumberGrid {
        width,
        height,
        cell_size: rng.random_range(0.5..5.0),
        origin: [rng.random_range(-5.0..5.0), rng.random_range(-5.0..5.0)],
        values: (0..width * height).map(|_| rng.random_range(-10.0..50.0)).collect(),
    }
}

pub fn random_sources(rng: &mut StdRng) -> Value {
    let n = rng.random_range(0..=4);
    Value::Array(
        (0..n)
            .map(|_| {
                json!({
                    "x": rng.random_range(-10.0..20.0),
                    "y": rng.random_range(-10.0..20.0),
                    "attributes": { "level": rng.random_range(30.0..110.0) }
                })
            })
            .collect(),
    )
}

fn heat_part(rng: &mut StdRng, inputs: &mut Inputs) {
    inputs.insert("grid".into(), serde_json::to_value(random_grid(rng)).unwrap());
    if rng.random_bool(0.8) {
        inputs.insert("alpha".into(), json!(rng.random_range(0.0..=sim::MAX_ALPHA)));
    }
    if rng.random_bool(0.8) {
        inputs.insert("iterations".into(), json!(rng.random_range(0..30)));
    }
}

/// Valid random inputs for one of the bundled processes.
pub fn random_inputs(process: &str, rng: &mut StdRng) -> Inputs {
    let mut inputs = Inputs::new();
    match process {
        sim::HEAT_DIFFUSION_ID => heat_part(rng, &mut inputs),
        sim::NOISE_MAP_ID => {
            inputs.insert("sources".into(), random_sources(rng));
            inputs.insert("width".into(), json!(rng.random_range(1..=8)));
            inputs.insert("height".into(), json!(rng.random_range(1..=8)));
            if rng.random_bool(0.7) {
                inputs.insert("cellSize".into(), json!(rng.random_range(0.5..5.0)));
            }
            if rng.random_bool(0.7) {
                inputs.insert("originX".into(), json!(rng.random_range(-5.0..5.0)));
                inputs.insert("originY".into(), json!(rng.random_range(-5.0..5.0)));
            }
        }
        sim::COMFORT_INDEX_ID => {
            heat_part(rng, &mut inputs);
            inputs.insert("sources".into(), random_sources(rng));
            inputs.insert("weightTemperature".into(), json!(rng.random_range(0.0..=1.0)));
            inputs.insert("weightNoise".into(), json!(rng.random_range(0.0..=1.0)));
        }
        other => panic!("no generator for {other}"),
    }
    inputs
}

pub fn registration(process: &str) -> ProcessRegistration {
    match process {
        sim::HEAT_DIFFUSION_ID => ProcessRegistration::new(sim::heat_diffusion_description(), sim::HeatDiffusion),
        sim::NOISE_MAP_ID => ProcessRegistration::new(sim::noise_map_description(), sim::NoiseMap),
        other => panic!("no local registration for {other}"),
    }
}

/// An open model server with heat-diffusion and noise-map.
pub fn local_models(id: &str) -> Arc<ModelServer> {
    let server = Arc::new(ModelServer::open(id));
    server.register(registration(sim::HEAT_DIFFUSION_ID)).unwrap();
    server.register(registration(sim::NOISE_MAP_ID)).unwrap();
    server
}

/// A token-mode model server using [`TOKENS`].
pub fn guarded_models(id: &str, policy: AccessPolicy, jobs: JobConfig) -> Arc<ModelServer> {
    let server = Arc::new(ModelServer::new(
        id,
        policy,
        TokenStore::parse(TOKENS).unwrap(),
        JobManager::start(jobs, JobDeps::default()),
    ));
    server.register(registration(sim::HEAT_DIFFUSION_ID)).unwrap();
    server.register(registration(sim::NOISE_MAP_ID)).unwrap();
    server
}

pub async fn serve(api: Arc<dyn Backend>) -> RunningServer {
    let listener = serve::bind("127.0.0.1:0").await.unwrap();
    serve::spawn(listener, api).unwrap()
}

pub fn client(url: &str, token: Option<&str>) -> ProcessClient {
    ProcessClient::new(url, token.map(String::from), Some(Duration::from_secs(10))).unwrap()
}

/// Polls `f` until it yields a value or `timeout` passes.
pub async fn eventually<T, F, Fut>(timeout: Duration, mut f: F) -> Option<T>
where
    F: FnMut() -> Fut,
    Fut: std::future::Future<Output = Option<T>>,
{
    let deadline = tokio::time::Instant::now() + timeout;
    loop {
        if let Some(v) = f().await {
            return Some(v);
        }
        if tokio::time::Instant::now() >= deadline {
            return None;
        }
        tokio::time::sleep(Duration::from_millis(10)).await;
    }
}

pub async fn wait_terminal(client: &ProcessClient, job_id: &str) -> Job {
    tokio::time::timeout(Duration::from_secs(20), client.wait(job_id, Duration::from_millis(10)))
        .await
        .expect("job finished in time")
        .expect("status readable")
}

/// Extra process that always fails, for isolation checks.
pub struct Broken;

#[async_trait::async_trait]
impl ump_core::ProcessExecutor for Broken {
    async fn execute(
        &self,
        _inputs: Inputs,
        _ctx: ump_core::ExecutionContext,
    ) -> Result<ump_core::protocol::Outputs, ump_core::ExecutionError> {
        Err(ump_core::ExecutionError::Failed("model diverged".into()))
    }
}

pub fn broken_registration() -> ProcessRegistration {
    let mut desc = sim::noise_map_description();
    desc.summary.id = "broken".into();
    desc.summary.title = "Always fails".into();
    ProcessRegistration::new(desc, Broken)
}

pub fn fast_platform_config(providers: Vec<ump_server::ProviderConfig>) -> ump_server::PlatformConfig {
    let mut cfg = ump_server::PlatformConfig {
        providers,
        ..ump_server::PlatformConfig::default()
    };
    cfg.auth.mode = ump_server::model_server::AuthMode::Open;
    cfg.jobs.poll_interval_millis = 20;
    cfg.jobs.max_poll_interval_millis = 200;
    cfg
}

pub fn provider(id: &str, url: &str) -> ump_server::ProviderConfig {
    ump_server::ProviderConfig {
        timeout_millis: 2_000,
        ..ump_server::ProviderConfig::new(id, url)
    }
}

/// Minimal hand-written upstream whose job status reply is scripted.
pub struct FakeUpstream {
    addr: std::net::SocketAddr,
    task: tokio::task::JoinHandle<()>,
    /// Status code and body returned by `GET /jobs/{id}`.
    pub job_reply: Arc<parking_lot::Mutex<(u16, Value)>>,
}

impl FakeUpstream {
    pub const PROCESS: &'static str = "fake";

    pub async fn start() -> Self {
        use axum::http::StatusCode;
        use axum::routing::{get, post};
        use axum::Json;

        let job = ump_core::Job::accepted(uuid::Uuid::new_v4(), Self::PROCESS, "anonymous", chrono::Utc::now());
        let job_value = serde_json::to_value(&job).unwrap();
        let job_reply = Arc::new(parking_lot::Mutex::new((200u16, job_value.clone())));
        let mut desc = sim::noise_map_description();
        desc.summary.id = Self::PROCESS.into();
        let summary = serde_json::to_value(&desc.summary).unwrap();
        let desc = serde_json::to_value(&desc).unwrap();

        let reply = job_reply.clone();
        let app = axum::Router::new()
            .route("/processes", get(move || async move { Json(json!({"processes": [summary], "total": 1})) }))
            .route("/processes/{id}", get(move || async move { Json(desc) }))
            .route(
                "/processes/{id}/execution",
                post(move || async move { (StatusCode::CREATED, Json(job_value)) }),
            )
            .route(
                "/jobs/{id}",
                get(move || async move {
                    let (status, body) = reply.lock().clone();
                    (StatusCode::from_u16(status).unwrap(), Json(body))
                }),
            )
            .route("/jobs/{id}/results", get(|| async { Json(json!({"grid": null})) }));
        let listener = serve::bind("127.0.0.1:0").await.unwrap();
        let addr = listener.local_addr().unwrap();
        let task = tokio::spawn(async move {
            let _ = axum::serve(listener, app).await;
        });
        Self { addr, task, job_reply }
    }

    pub fn url(&self) -> String {
        format!("http://{}", self.addr)
    }
}

impl Drop for FakeUpstream {
    fn drop(&mut self) {
        self.task.abort();
    }
}

/// Accepts connections and never answers.
pub struct Silent {
    addr: std::net::SocketAddr,
    task: tokio::task::JoinHandle<()>,
}

impl Silent {
    pub async fn start() -> Self {
        let listener = tokio::net::TcpListener::bind("127.0.0.1:0").await.unwrap();
        let addr = listener.local_addr().unwrap();
        let task = tokio::spawn(async move {
            let mut held = Vec::new();
            while let Ok((socket, _)) = listener.accept().await {
                held.push(socket);
            }
        });
        Self { addr, task }
    }

    pub fn url(&self) -> String {
        format!("http://{}", self.addr)
    }
}

impl Drop for Silent {
    fn drop(&mut self) {
        self.task.abort();
    }
}
