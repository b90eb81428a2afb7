use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};

/// Model servers, federation platforms and their clients.
///
/// Settings are taken from flags first, then environment variables, then
/// the configuration file.
#[derive(Debug, Parser)]
#[command(name = "ump", version)]
pub struct Cli {
    /// Machine-readable JSON output.
    #[arg(long, global = true)]
    pub json: bool,
    /// Debug logging on stderr.
    #[arg(long, short, global = true)]
    pub verbose: bool,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Run a model server or a platform.
    #[command(subcommand)]
    Serve(ServeCommand),
    /// Call the process API.
    Client(ClientArgs),
    /// Administrative operations (admin token required).
    Admin(AdminArgs),
    /// Local demo topology.
    #[command(subcommand)]
    Demo(DemoCommand),
    /// Stdio worker for one bundled process.
    #[command(hide = true)]
    Worker { process: String },
}

#[derive(Debug, Subcommand)]
pub enum ServeCommand {
    /// Host simulation processes.
    ModelServer {
        #[arg(long, env = "MODEL_SERVER_CONFIG")]
        config: Option<PathBuf>,
        /// Overrides the port of bindAddress.
        #[arg(long, env = "MODEL_SERVER_PORT")]
        port: Option<u16>,
    },
    /// Federate model servers.
    Platform {
        #[arg(long, env = "UMP_CONFIG")]
        config: Option<PathBuf>,
        /// Overrides the port of server.bindAddress.
        #[arg(long, env = "UMP_PORT")]
        port: Option<u16>,
    },
}

#[derive(Debug, Args)]
pub struct Connection {
    /// Base URL of the server or platform.
    #[arg(long, env = "UMP_URL", default_value = "http://127.0.0.1:8080", global = true)]
    pub url: String,
    /// Bearer token.
    #[arg(long, env = "UMP_TOKEN", hide_env_values = true, global = true)]
    pub token: Option<String>,
    /// Per-request timeout in milliseconds.
    #[arg(long, default_value_t = 30_000, global = true)]
    pub timeout_ms: u64,
}

#[derive(Debug, Args)]
pub struct ClientArgs {
    #[command(flatten)]
    pub conn: Connection,
    #[command(subcommand)]
    pub command: ClientCommand,
}

#[derive(Debug, Subcommand)]
pub enum ClientCommand {
    /// List processes.
    Processes {
        #[arg(long)]
        limit: Option<usize>,
        #[arg(long, default_value_t = 0)]
        offset: usize,
    },
    /// Show a process description.
    Describe { process: String },
    /// Execute a process. Inputs come from --inputs, or stdin when piped.
    Execute {
        process: String,
        /// JSON file with an inputs map or a full execute request; `-` is stdin.
        #[arg(long, short)]
        inputs: Option<PathBuf>,
        /// Run as a job.
        #[arg(long = "async")]
        asynchronous: bool,
        /// With --async: poll until the job ends and print its results.
        #[arg(long, requires = "asynchronous")]
        wait: bool,
        /// Polling interval for --wait, in milliseconds.
        #[arg(long, default_value_t = 500)]
        poll_ms: u64,
    },
    /// Show a job.
    Status { job: String },
    /// Print a job's results.
    Results { job: String },
    /// List jobs.
    Jobs {
        #[arg(long)]
        process: Option<String>,
        #[arg(long)]
        state: Option<String>,
    },
    /// Dismiss a job.
    Dismiss { job: String },
}

#[derive(Debug, Args)]
pub struct AdminArgs {
    #[command(flatten)]
    pub conn: Connection,
    #[command(subcommand)]
    pub command: AdminCommand,
}

#[derive(Debug, Subcommand)]
pub enum AdminCommand {
    /// Purge results whose retention has passed.
    Sweep {
        /// Reference time (RFC 3339); the server clock when absent.
        #[arg(long)]
        now: Option<String>,
    },
    /// Compute usage per subject.
    Usage {
        #[arg(long)]
        subject: Option<String>,
    },
}

#[derive(Debug, Subcommand)]
pub enum DemoCommand {
    /// Start two model servers and a platform federating them.
    Up {
        #[arg(long, default_value = "127.0.0.1")]
        host: String,
        /// Platform port; 0 picks a free one.
        #[arg(long, env = "UMP_PORT", default_value_t = 0)]
        port: u16,
    },
}
