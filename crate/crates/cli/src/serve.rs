use std::io::{self, Write};
use std::path::{Path, PathBuf};
use std::sync::Arc;

use serde_json::json;
use tokio::signal::unix::{signal, SignalKind};

use ump_core::access::TokenStore;
use ump_server::demo::{self, DemoOptions};
use ump_server::serve::{self, RunningServer};
use ump_server::{ModelServer, Platform, PlatformConfig, ServerConfig};

use crate::args::{DemoCommand, ServeCommand};
use crate::Failure;

/// Replaces the port of a `host:port` address.
pub fn with_port(bind: &str, port: Option<u16>) -> String {
    match (port, bind.rsplit_once(':')) {
        (Some(p), Some((host, _))) => format!("{host}:{p}"),
        (Some(p), None) => format!("{bind}:{p}"),
        (None, _) => bind.to_string(),
    }
}

fn config_path(config: Option<PathBuf>, var: &str) -> Result<PathBuf, Failure> {
    config.ok_or_else(|| Failure::Usage(format!("no configuration file: pass --config or set {var}")))
}

async fn listen(addr: &str) -> Result<tokio::net::TcpListener, Failure> {
    serve::bind(addr).await.map_err(|e| match e.kind() {
        io::ErrorKind::AddrInUse => Failure::Local(format!("{addr} is already in use")),
        _ => Failure::Local(format!("cannot bind {addr}: {e}")),
    })
}

fn ready(server: &RunningServer) {
    println!("READY {}", server.addr());
    let _ = io::stdout().flush();
}

enum Signal {
    Reload,
    Stop,
}

struct Signals {
    term: tokio::signal::unix::Signal,
    int: tokio::signal::unix::Signal,
    hup: tokio::signal::unix::Signal,
}

impl Signals {
    fn install() -> Result<Self, Failure> {
        let install = |kind| signal(kind).map_err(|e| Failure::Local(format!("cannot install signal handler: {e}")));
        Ok(Self {
            term: install(SignalKind::terminate())?,
            int: install(SignalKind::interrupt())?,
            hup: install(SignalKind::hangup())?,
        })
    }

    async fn next(&mut self) -> Signal {
        tokio::select! {
            _ = self.term.recv() => Signal::Stop,
            _ = self.int.recv() => Signal::Stop,
            _ = self.hup.recv() => Signal::Reload,
        }
    }
}

async fn stop(server: RunningServer) -> Result<(), Failure> {
    tracing::info!("draining connections");
    server.stop().await.map_err(|e| Failure::Local(format!("shutdown: {e}")))
}

pub async fn run(cmd: ServeCommand) -> Result<(), Failure> {
    match cmd {
        ServeCommand::ModelServer { config, port } => model_server(&config_path(config, "MODEL_SERVER_CONFIG")?, port).await,
        ServeCommand::Platform { config, port } => platform(&config_path(config, "UMP_CONFIG")?, port).await,
    }
}

async fn model_server(path: &Path, port: Option<u16>) -> Result<(), Failure> {
    let cfg = ServerConfig::load(path).map_err(|e| Failure::Usage(format!("{}: {e}", path.display())))?;
    let models = ModelServer::from_config(&cfg)
        .await
        .map_err(|e| Failure::Usage(format!("{}: {e}", path.display())))?;
    let models = Arc::new(models);
    let server = serve::spawn(listen(&with_port(&cfg.bind_address, port)).await?, models.clone())
        .map_err(|e| Failure::Local(e.to_string()))?;
    let mut signals = Signals::install()?;
    tracing::info!(server_id = %cfg.server_id, addr = %server.addr(), "model server listening");
    ready(&server);
    loop {
        match signals.next().await {
            Signal::Stop => return stop(server).await,
            Signal::Reload => match &cfg.token_file {
                Some(file) => match TokenStore::load(file) {
                    Ok(tokens) => {
                        tracing::info!(tokens = tokens.len(), "token file reloaded");
                        models.reload_tokens(tokens);
                    }
                    Err(e) => tracing::error!(error = %e, "token file reload failed; keeping previous tokens"),
                },
                None => tracing::info!("nothing to reload in open mode"),
            },
        }
    }
}

async fn platform(path: &Path, port: Option<u16>) -> Result<(), Failure> {
    let cfg = PlatformConfig::load(path).map_err(|e| Failure::Usage(format!("{}: {e}", path.display())))?;
    let listener = listen(&with_port(&cfg.server.bind_address, port)).await?;
    let platform = Platform::start(cfg)
        .await
        .map_err(|e| Failure::Usage(format!("{}: {e}", path.display())))?;
    let server = serve::spawn(listener, platform.clone()).map_err(|e| Failure::Local(e.to_string()))?;
    let mut signals = Signals::install()?;
    tracing::info!(addr = %server.addr(), "platform listening");
    ready(&server);
    loop {
        match signals.next().await {
            Signal::Stop => return stop(server).await,
            Signal::Reload => {
                let reloaded = match PlatformConfig::load(path) {
                    Ok(cfg) => platform.reload(cfg).await,
                    Err(e) => Err(e),
                };
                match reloaded {
                    Ok(outcomes) => tracing::info!(providers = outcomes.len(), "configuration reloaded"),
                    Err(e) => tracing::error!(error = %e, "reload failed; keeping previous configuration"),
                }
            }
        }
    }
}

pub async fn demo(cmd: DemoCommand, json: bool) -> Result<(), Failure> {
    let DemoCommand::Up { host, port } = cmd;
    let demo = demo::launch(DemoOptions {
        host,
        platform_port: port,
        ..DemoOptions::default()
    })
    .await
    .map_err(|e| Failure::Local(format!("cannot start demo: {e}")))?;
    let mut signals = Signals::install()?;
    if json {
        let table = json!({
            "platform": demo.platform_url,
            demo::ALPHA: demo.alpha_url,
            demo::BETA: demo.beta_url,
        });
        println!("{table}");
    } else {
        print!("{}", demo.endpoint_table());
    }
    let addr = demo.platform_url.trim_start_matches("http://").to_string();
    println!("READY {addr}");
    let _ = io::stdout().flush();
    loop {
        if let Signal::Stop = signals.next().await {
            return demo
                .shutdown()
                .await
                .map_err(|e| Failure::Local(format!("shutdown: {e}")));
        }
    }
}
