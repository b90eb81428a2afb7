//! Demo topology: model server `alpha` hosting heat-diffusion and noise-map,
//! model server `beta` hosting comfort-index, and one platform federating
//! both. The comfort model calls back into the platform for its inputs.

use std::io;
use std::sync::Arc;

use ump_core::sim;

use crate::comfort::ComfortIndex;
use crate::model_server::{ModelServer, ProcessRegistration};
use crate::platform::{Platform, PlatformConfig, ProviderConfig};
use crate::serve::{self, RunningServer};

pub const ALPHA: &str = "alpha";
pub const BETA: &str = "beta";

#[derive(Debug, Clone)]
pub struct DemoOptions {
    pub host: String,
    /// Platform port; 0 picks a free one. Model servers always use free ports.
    pub platform_port: u16,
    pub poll_interval_millis: u64,
    pub timeout_millis: u64,
    pub mirror_results: bool,
    pub retention_seconds: u64,
}

impl Default for DemoOptions {
    fn default() -> Self {
        Self {
            host: "127.0.0.1".into(),
            platform_port: 0,
            poll_interval_millis: 1_000,
            timeout_millis: 5_000,
            mirror_results: true,
            retention_seconds: 7 * 24 * 3600,
        }
    }
}

pub struct Demo {
    pub alpha: Arc<ModelServer>,
    pub beta: Arc<ModelServer>,
    pub platform: Arc<Platform>,
    pub alpha_server: Option<RunningServer>,
    pub beta_server: Option<RunningServer>,
    pub platform_server: Option<RunningServer>,
    pub alpha_url: String,
    pub beta_url: String,
    pub platform_url: String,
}

fn io_err(e: impl std::fmt::Display) -> io::Error {
    io::Error::other(e.to_string())
}

/// The platform configuration used by the demo for the given provider URLs.
pub fn platform_config(alpha_url: &str, beta_url: &str, opts: &DemoOptions) -> PlatformConfig {
    let provider = |id: &str, url: &str| ProviderConfig {
        public: true,
        mirror_results: opts.mirror_results,
        timeout_millis: opts.timeout_millis,
        retention_seconds: opts.retention_seconds,
        ..ProviderConfig::new(id, url)
    };
    let mut cfg = PlatformConfig {
        providers: vec![provider(ALPHA, alpha_url), provider(BETA, beta_url)],
        ..PlatformConfig::default()
    };
    cfg.jobs.poll_interval_millis = opts.poll_interval_millis;
    cfg
}

/// Binds all listeners first so every URL is known, then starts the model
/// servers and finally the platform.
pub async fn launch(opts: DemoOptions) -> io::Result<Demo> {
    let alpha_listener = serve::bind(&format!("{}:0", opts.host)).await?;
    let beta_listener = serve::bind(&format!("{}:0", opts.host)).await?;
    let platform_listener = serve::bind(&format!("{}:{}", opts.host, opts.platform_port)).await?;
    let url = |l: &tokio::net::TcpListener| l.local_addr().map(|a| format!("http://{a}"));
    let (alpha_url, beta_url, platform_url) = (url(&alpha_listener)?, url(&beta_listener)?, url(&platform_listener)?);

    let alpha = Arc::new(ModelServer::open(ALPHA));
    alpha
        .register(ProcessRegistration::new(sim::heat_diffusion_description(), sim::HeatDiffusion))
        .map_err(io_err)?;
    alpha
        .register(ProcessRegistration::new(sim::noise_map_description(), sim::NoiseMap))
        .map_err(io_err)?;
    let beta = Arc::new(ModelServer::open(BETA));
    beta.register(ProcessRegistration::new(
        sim::comfort_index_description(),
        ComfortIndex::new(
            &platform_url,
            None,
            &format!("{ALPHA}:{}", sim::HEAT_DIFFUSION_ID),
            &format!("{ALPHA}:{}", sim::NOISE_MAP_ID),
        ),
    ))
    .map_err(io_err)?;
    let alpha_server = serve::spawn(alpha_listener, alpha.clone())?;
    let beta_server = serve::spawn(beta_listener, beta.clone())?;

    let platform = Platform::start(platform_config(&alpha_url, &beta_url, &opts))
        .await
        .map_err(io_err)?;
    let platform_server = serve::spawn(platform_listener, platform.clone())?;
    Ok(Demo {
        alpha,
        beta,
        platform,
        alpha_server: Some(alpha_server),
        beta_server: Some(beta_server),
        platform_server: Some(platform_server),
        alpha_url,
        beta_url,
        platform_url,
    })
}

impl Demo {
    /// Human-readable endpoint table.
    pub fn endpoint_table(&self) -> String {
        let rows = [
            ("platform", "platform", self.platform_url.as_str(), "alpha:*, beta:*"),
            ("alpha", "model server", self.alpha_url.as_str(), "heat-diffusion, noise-map"),
            ("beta", "model server", self.beta_url.as_str(), "comfort-index"),
        ];
        let mut out = format!("{:<10} {:<14} {:<28} {}\n", "NAME", "ROLE", "URL", "PROCESSES");
        for (name, role, url, processes) in rows {
            out.push_str(&format!("{name:<10} {role:<14} {url:<28} {processes}\n"));
        }
        out
    }

    /// Stops every service gracefully.
    pub async fn shutdown(mut self) -> io::Result<()> {
        for server in [self.platform_server.take(), self.beta_server.take(), self.alpha_server.take()]
            .into_iter()
            .flatten()
        {
            server.stop().await?;
        }
        Ok(())
    }
}
