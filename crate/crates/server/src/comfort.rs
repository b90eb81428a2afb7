//! Comfort index model. Obtains its temperature and noise inputs by running
//! the heat and noise processes through a platform over HTTP, then combines
//! them cell by cell.

use async_trait::async_trait;
use serde_json::{json, Value};

use ump_core::jobs::{ExecutionContext, ExecutionError, ProcessExecutor};
use ump_core::protocol::{ExecuteRequest, Inputs, NumberGrid, Outputs};
use ump_core::sim::{self, ComfortWeights};

use crate::client::{ClientError, Executed, ProcessClient};

pub struct ComfortIndex {
    platform_url: String,
    token: Option<String>,
    heat_process: String,
    noise_process: String,
}

impl ComfortIndex {
    pub fn new(platform_url: &str, token: Option<String>, heat_process: &str, noise_process: &str) -> Self {
        Self {
            platform_url: platform_url.into(),
            token,
            heat_process: heat_process.into(),
            noise_process: noise_process.into(),
        }
    }
}

/// Inputs of the two sub-model runs: heat diffusion of the given grid and a
/// noise map over the same cells.
pub fn sub_model_inputs(inputs: &Inputs) -> Result<(Inputs, Inputs), ExecutionError> {
    let grid: NumberGrid = sim::input(inputs, "grid")?;
    grid.check().map_err(ExecutionError::InvalidInput)?;
    let pick = |name: &str| -> Result<Value, ExecutionError> {
        inputs
            .get(name)
            .cloned()
            .ok_or_else(|| ExecutionError::InvalidInput(format!("{name}: required, absent")))
    };
    let heat = Inputs::from([
        ("grid".to_string(), pick("grid")?),
        ("alpha".to_string(), pick("alpha")?),
        ("iterations".to_string(), pick("iterations")?),
    ]);
    let noise = Inputs::from([
        ("sources".to_string(), pick("sources")?),
        ("width".to_string(), json!(grid.width)),
        ("height".to_string(), json!(grid.height)),
        ("cellSize".to_string(), json!(grid.cell_size)),
        ("originX".to_string(), json!(grid.origin[0])),
        ("originY".to_string(), json!(grid.origin[1])),
    ]);
    Ok((heat, noise))
}

pub fn weights(inputs: &Inputs) -> Result<ComfortWeights, ExecutionError> {
    Ok(ComfortWeights {
        temperature: sim::input(inputs, "weightTemperature")?,
        noise: sim::input(inputs, "weightNoise")?,
    })
}

/// Combines sub-model outputs as the comfort process does.
pub fn combine(heat: &Outputs, noise: &Outputs, weights: ComfortWeights) -> Result<Outputs, ExecutionError> {
    let grid = |outputs: &Outputs, which: &str| -> Result<NumberGrid, ExecutionError> {
        let value = outputs
            .get("grid")
            .ok_or_else(|| ExecutionError::Failed(format!("{which} result has no grid")))?;
        serde_json::from_value(value.clone()).map_err(|e| ExecutionError::Failed(format!("{which} grid: {e}")))
    };
    let comfort = sim::comfort_index(&grid(heat, "heat")?, &grid(noise, "noise")?, weights).map_err(ExecutionError::Failed)?;
    Ok(sim::grid_outputs(&comfort))
}

fn sub_model_error(process: &str, e: ClientError) -> ExecutionError {
    match e {
        ClientError::Remote(p) if p.kind == "federation-loop" => ExecutionError::Upstream(p),
        ClientError::Remote(p) => ExecutionError::Failed(format!(
            "sub-model {process} failed: {}",
            String::from_utf8_lossy(&ump_core::protocol::to_bytes(&p))
        )),
        other => ExecutionError::Failed(format!("sub-model {process} failed: {other}")),
    }
}

impl ComfortIndex {
    async fn run(&self, client: &ProcessClient, process: &str, inputs: Inputs, hops: u32) -> Result<Outputs, ExecutionError> {
        match client.execute(process, &ExecuteRequest::new(inputs), hops).await {
            Ok(Executed::Sync { body, .. }) => serde_json::from_slice(&body)
                .map_err(|e| ExecutionError::Failed(format!("sub-model {process} returned malformed outputs: {e}"))),
            Ok(Executed::Accepted { .. }) => {
                Err(ExecutionError::Failed(format!("sub-model {process} answered a synchronous request with a job")))
            }
            Err(e) => Err(sub_model_error(process, e)),
        }
    }
}

#[async_trait]
impl ProcessExecutor for ComfortIndex {
    async fn execute(&self, inputs: Inputs, ctx: ExecutionContext) -> Result<Outputs, ExecutionError> {
        let (heat_inputs, noise_inputs) = sub_model_inputs(&inputs)?;
        let weights = weights(&inputs)?;
        let client = ProcessClient::new(&self.platform_url, self.token.clone(), None)
            .map_err(|e| ExecutionError::Failed(e.to_string()))?;
        let hops = ctx.hops + 1;
        let (heat, noise) = tokio::join!(
            self.run(&client, &self.heat_process, heat_inputs, hops),
            self.run(&client, &self.noise_process, noise_inputs, hops),
        );
        if ctx.is_cancelled() {
            return Err(ExecutionError::Cancelled);
        }
        combine(&heat?, &noise?, weights)
    }
}
