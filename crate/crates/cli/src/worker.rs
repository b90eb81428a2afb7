//! Out-of-process form of the bundled models, speaking the length-prefixed
//! stdio protocol.

use ump_core::jobs::{ExecutionContext, ProcessExecutor};
use ump_core::protocol::ProcessDescription;
use ump_core::sim;
use ump_server::subprocess::serve_stdio;

fn bundled(process: &str) -> Option<(ProcessDescription, Box<dyn ProcessExecutor>)> {
    match process {
        sim::HEAT_DIFFUSION_ID => Some((sim::heat_diffusion_description(), Box::new(sim::HeatDiffusion))),
        sim::NOISE_MAP_ID => Some((sim::noise_map_description(), Box::new(sim::NoiseMap))),
        _ => None,
    }
}

pub fn run(process: &str) -> Result<(), String> {
    let (description, executor) = bundled(process).ok_or_else(|| format!("no bundled worker for {process:?}"))?;
    let runtime = tokio::runtime::Builder::new_current_thread()
        .enable_all()
        .build()
        .map_err(|e| e.to_string())?;
    serve_stdio(std::io::stdin().lock(), std::io::stdout().lock(), &description, |inputs| {
        runtime
            .block_on(executor.execute(inputs, ExecutionContext::new(0)))
            .map_err(|e| e.to_string())
    })
    .map_err(|e| e.to_string())
}
