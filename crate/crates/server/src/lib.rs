//! HTTP services of the urban model platform: model servers hosting
//! simulation processes and the federation platform in front of them.

pub mod backend;
pub mod client;
pub mod comfort;
pub mod config;
pub mod demo;
pub mod http;
pub mod model_server;
pub mod platform;
pub mod serve;
pub mod subprocess;

pub use backend::{Backend, Described, HOPS_HEADER, MAX_HOPS};
pub use client::{ClientError, Executed, ProcessClient};
pub use config::ConfigError;
pub use model_server::{ModelServer, ProcessRegistration, ServerConfig};
pub use platform::{Platform, PlatformConfig, ProviderConfig};
pub use serve::RunningServer;
