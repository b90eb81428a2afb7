//! Bundled simulation models: heat diffusion, point-source noise and the
//! comfort index that combines them.
//!
//! The dynamics are deliberately simple and analytically checkable.

use std::collections::{BTreeMap, BTreeSet};

use async_trait::async_trait;
use serde_json::{json, Value};

use crate::jobs::{ExecutionContext, ExecutionError, ProcessExecutor};
use crate::protocol::{
    DataKind, GeoPoint, InputDescription, Inputs, JobControl, NumberGrid, OutputDescription, OutputKind, Outputs,
    ProcessDescription, ProcessSummary,
};

pub const HEAT_DIFFUSION_ID: &str = "heat-diffusion";
pub const NOISE_MAP_ID: &str = "noise-map";
pub const COMFORT_INDEX_ID: &str = "comfort-index";

/// Largest stable diffusion coefficient for the 5-point stencil.
pub const MAX_ALPHA: f64 = 0.25;
/// Reference distance of source levels, meters.
pub const REFERENCE_DISTANCE: f64 = 1.0;
/// Lowest reported sound level; stands in for silence.
pub const DB_FLOOR: f64 = -120.0;

/// One explicit step of the insulated 5-point stencil:
/// `v'[c] = v[c] + alpha * (sum of in-grid neighbors - k * v[c])`, where `k`
/// is the number of in-grid neighbors. Neighbors are summed left, right,
/// below, above.
fn diffuse_step(width: usize, height: usize, alpha: f64, src: &[f64], dst: &mut [f64]) {
    for row in 0..height {
        for col in 0..width {
            let i = row * width + col;
            let mut sum = 0.0;
            let mut k = 0.0;
            if col > 0 {
                sum += src[i - 1];
                k += 1.0;
            }
            if col + 1 < width {
                sum += src[i + 1];
                k += 1.0;
            }
            if row > 0 {
                sum += src[i - width];
                k += 1.0;
            }
            if row + 1 < height {
                sum += src[i + width];
                k += 1.0;
            }
            dst[i] = src[i] + alpha * (sum - k * src[i]);
        }
    }
}

/// Runs `iterations` diffusion steps. `on_step(done)` is called before each
/// step; returning `false` stops early and yields `None`.
pub fn heat_diffusion_with(
    grid: &NumberGrid,
    alpha: f64,
    iterations: u64,
    mut on_step: impl FnMut(u64) -> bool,
) -> Option<NumberGrid> {
    let mut current = grid.values.clone();
    let mut next = vec![0.0; current.len()];
    for step in 0..iterations {
        if !on_step(step) {
            return None;
        }
        diffuse_step(grid.width, grid.height, alpha, &current, &mut next);
        std::mem::swap(&mut current, &mut next);
    }
    Some(NumberGrid {
        values: current,
        ..grid.clone()
    })
}

pub fn heat_diffusion(grid: &NumberGrid, alpha: f64, iterations: u64) -> NumberGrid {
    heat_diffusion_with(grid, alpha, iterations, |_| true).expect("never stopped")
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NoiseSource {
    pub x: f64,
    pub y: f64,
    /// Level in dB at [`REFERENCE_DISTANCE`].
    pub level: f64,
}

impl NoiseSource {
    /// Reads a source from a point with a numeric `level` attribute.
    pub fn from_point(p: &GeoPoint) -> Result<Self, String> {
        let level = p
            .attributes
            .get("level")
            .and_then(Value::as_f64)
            .ok_or_else(|| format!("source at ({}, {}) lacks a numeric level", p.x, p.y))?;
        Ok(Self { x: p.x, y: p.y, level })
    }

    /// Attenuated level at distance `d`; distances under the reference
    /// distance are clamped to it.
    pub fn level_at(&self, d: f64) -> f64 {
        self.level - 20.0 * (d.max(REFERENCE_DISTANCE) / REFERENCE_DISTANCE).log10()
    }
}

/// Energetic sum `10 log10(sum 10^(L/10))`, floored at [`DB_FLOOR`].
pub fn energetic_sum(levels: impl IntoIterator<Item = f64>) -> f64 {
    let energy: f64 = levels.into_iter().map(|l| 10f64.powf(l / 10.0)).sum();
    if energy > 0.0 {
        (10.0 * energy.log10()).max(DB_FLOOR)
    } else {
        DB_FLOOR
    }
}

/// Geometry of a receiver grid.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GridGeometry {
    pub width: usize,
    pub height: usize,
    pub cell_size: f64,
    pub origin: [f64; 2],
}

impl GridGeometry {
    pub fn of(grid: &NumberGrid) -> Self {
        Self {
            width: grid.width,
            height: grid.height,
            cell_size: grid.cell_size,
            origin: grid.origin,
        }
    }
}

/// Sound level at every receiver cell center.
pub fn noise_map(sources: &[NoiseSource], receiver: GridGeometry) -> NumberGrid {
    let mut grid = NumberGrid {
        width: receiver.width,
        height: receiver.height,
        cell_size: receiver.cell_size,
        origin: receiver.origin,
        values: Vec::with_capacity(receiver.width * receiver.height),
    };
    for row in 0..receiver.height {
        for col in 0..receiver.width {
            let (cx, cy) = grid.cell_center(col, row);
            let level = energetic_sum(sources.iter().map(|s| s.level_at((s.x - cx).hypot(s.y - cy))));
            grid.values.push(level);
        }
    }
    grid
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ComfortWeights {
    pub temperature: f64,
    pub noise: f64,
}

fn clamp01(x: f64) -> f64 {
    x.clamp(0.0, 1.0)
}

/// Per-cell comfort `clamp01(1 - wT * normT - wN * normN)` with
/// `normT = clamp01((T - 20) / 20)` and `normN = clamp01((L - 40) / 40)`.
pub fn comfort_index(heat: &NumberGrid, noise: &NumberGrid, weights: ComfortWeights) -> Result<NumberGrid, String> {
    if !heat.is_congruent(noise) {
        return Err("temperature and noise grids are not congruent".into());
    }
    let values = heat
        .values
        .iter()
        .zip(&noise.values)
        .map(|(t, l)| {
            let norm_t = clamp01((t - 20.0) / 20.0);
            let norm_n = clamp01((l - 40.0) / 40.0);
            clamp01(1.0 - weights.temperature * norm_t - weights.noise * norm_n)
        })
        .collect();
    Ok(NumberGrid {
        values,
        ..heat.clone()
    })
}

fn summary(id: &str, title: &str, description: &str, keywords: &[&str]) -> ProcessSummary {
    ProcessSummary {
        id: id.into(),
        version: "1.0.0".into(),
        title: title.into(),
        description: description.into(),
        keywords: keywords.iter().map(|k| k.to_string()).collect(),
        job_control_options: BTreeSet::from([JobControl::SyncExecute, JobControl::AsyncExecute]),
    }
}

fn grid_output(title: &str) -> BTreeMap<String, OutputDescription> {
    BTreeMap::from([(
        "grid".to_string(),
        OutputDescription {
            title: title.into(),
            data_kind: OutputKind::NumberGrid,
        },
    )])
}

fn heat_inputs() -> Vec<(&'static str, InputDescription)> {
    vec![
        ("grid", InputDescription::required("Initial temperatures (°C)", DataKind::NumberGrid)),
        (
            "alpha",
            InputDescription::optional("Diffusion coefficient", DataKind::Number, json!(0.1)).with_bounds(0.0, MAX_ALPHA),
        ),
        (
            "iterations",
            InputDescription::optional("Time steps", DataKind::Integer, json!(10)).with_bounds(0.0, 100_000.0),
        ),
    ]
}

fn to_map(inputs: Vec<(&str, InputDescription)>) -> BTreeMap<String, InputDescription> {
    inputs.into_iter().map(|(k, v)| (k.to_string(), v)).collect()
}

pub fn heat_diffusion_description() -> ProcessDescription {
    ProcessDescription {
        summary: summary(
            HEAT_DIFFUSION_ID,
            "Urban heat diffusion",
            "Explicit diffusion of a temperature grid with insulated borders.",
            &["heat", "climate"],
        ),
        inputs: to_map(heat_inputs()),
        outputs: grid_output("Temperatures after diffusion (°C)"),
    }
}

fn noise_inputs() -> Vec<(&'static str, InputDescription)> {
    vec![
        ("sources", InputDescription::required("Point sources with a `level` attribute (dB at 1 m)", DataKind::GeoPointList)),
    ]
}

pub fn noise_map_description() -> ProcessDescription {
    let mut inputs = noise_inputs();
    inputs.extend([
        ("width", InputDescription::required("Receiver columns", DataKind::Integer).with_bounds(1.0, 1024.0)),
        ("height", InputDescription::required("Receiver rows", DataKind::Integer).with_bounds(1.0, 1024.0)),
        (
            "cellSize",
            InputDescription::optional("Receiver cell size (m)", DataKind::Number, json!(1.0)).with_bounds(0.001, 1e6),
        ),
        ("originX", InputDescription::optional("Receiver grid origin x (m)", DataKind::Number, json!(0.0))),
        ("originY", InputDescription::optional("Receiver grid origin y (m)", DataKind::Number, json!(0.0))),
    ]);
    ProcessDescription {
        summary: summary(
            NOISE_MAP_ID,
            "Point-source noise map",
            "Spherical spreading from point sources with energetic summation.",
            &["noise"],
        ),
        inputs: to_map(inputs),
        outputs: grid_output("Sound level (dB)"),
    }
}

pub fn comfort_index_description() -> ProcessDescription {
    let mut inputs = heat_inputs();
    inputs.extend(noise_inputs());
    inputs.extend([
        (
            "weightTemperature",
            InputDescription::optional("Temperature weight", DataKind::Number, json!(0.5)).with_bounds(0.0, 1.0),
        ),
        (
            "weightNoise",
            InputDescription::optional("Noise weight", DataKind::Number, json!(0.5)).with_bounds(0.0, 1.0),
        ),
    ]);
    ProcessDescription {
        summary: summary(
            COMFORT_INDEX_ID,
            "Outdoor comfort index",
            "Combines heat-diffusion and noise-map results obtained through a platform.",
            &["heat", "noise", "comfort"],
        ),
        inputs: to_map(inputs),
        outputs: grid_output("Comfort index (0 = worst, 1 = best)"),
    }
}

/// Reads a required input of a concrete type.
pub fn input<T: serde::de::DeserializeOwned>(inputs: &Inputs, name: &str) -> Result<T, ExecutionError> {
    let value = inputs
        .get(name)
        .ok_or_else(|| ExecutionError::InvalidInput(format!("{name}: required, absent")))?;
    serde_json::from_value(value.clone()).map_err(|e| ExecutionError::InvalidInput(format!("{name}: {e}")))
}

pub fn grid_outputs(grid: &NumberGrid) -> Outputs {
    Outputs::from([("grid".to_string(), serde_json::to_value(grid).expect("grids serialize"))])
}

pub fn noise_sources(inputs: &Inputs) -> Result<Vec<NoiseSource>, ExecutionError> {
    input::<Vec<GeoPoint>>(inputs, "sources")?
        .iter()
        .map(NoiseSource::from_point)
        .collect::<Result<_, _>>()
        .map_err(ExecutionError::InvalidInput)
}

async fn blocking<T: Send + 'static>(f: impl FnOnce() -> T + Send + 'static) -> Result<T, ExecutionError> {
    tokio::task::spawn_blocking(f)
        .await
        .map_err(|e| ExecutionError::Failed(format!("simulation task aborted: {e}")))
}

#[derive(Debug, Default, Clone, Copy)]
pub struct HeatDiffusion;

#[async_trait]
impl ProcessExecutor for HeatDiffusion {
    async fn execute(&self, inputs: Inputs, ctx: ExecutionContext) -> Result<Outputs, ExecutionError> {
        let grid: NumberGrid = input(&inputs, "grid")?;
        grid.check().map_err(ExecutionError::InvalidInput)?;
        let alpha: f64 = input(&inputs, "alpha")?;
        let iterations: u64 = input(&inputs, "iterations")?;
        if !(0.0..=MAX_ALPHA).contains(&alpha) {
            return Err(ExecutionError::InvalidInput(format!("alpha must lie in [0, {MAX_ALPHA}]")));
        }
        let result = blocking(move || {
            heat_diffusion_with(&grid, alpha, iterations, |step| {
                ctx.report_progress((step * 100 / iterations.max(1)) as u8);
                !ctx.is_cancelled()
            })
        })
        .await?;
        result.map(|g| grid_outputs(&g)).ok_or(ExecutionError::Cancelled)
    }
}

#[derive(Debug, Default, Clone, Copy)]
pub struct NoiseMap;

#[async_trait]
impl ProcessExecutor for NoiseMap {
    async fn execute(&self, inputs: Inputs, _ctx: ExecutionContext) -> Result<Outputs, ExecutionError> {
        let sources = noise_sources(&inputs)?;
        let receiver = GridGeometry {
            width: input(&inputs, "width")?,
            height: input(&inputs, "height")?,
            cell_size: input(&inputs, "cellSize")?,
            origin: [input(&inputs, "originX")?, input(&inputs, "originY")?],
        };
        if receiver.width == 0 || receiver.height == 0 || !(receiver.cell_size > 0.0) {
            return Err(ExecutionError::InvalidInput("receiver grid must be non-empty with positive cellSize".into()));
        }
        let grid = blocking(move || noise_map(&sources, receiver)).await?;
        Ok(grid_outputs(&grid))
    }
}

#[cfg(test)]
mod tests {
    use proptest::prelude::*;

    use super::*;
    use crate::protocol::check_description;

    /// Brute-force stencil over explicit (col, row) coordinates.
    fn oracle_step(g: &NumberGrid, alpha: f64) -> NumberGrid {
        let (w, h) = (g.width as i64, g.height as i64);
        let at = |c: i64, r: i64| g.values[(r * w + c) as usize];
        let mut values = Vec::new();
        for r in 0..h {
            for c in 0..w {
                let nbrs: Vec<f64> = [(-1, 0), (1, 0), (0, -1), (0, 1)]
                    .iter()
                    .map(|(dc, dr)| (c + dc, r + dr))
                    .filter(|(nc, nr)| (0..w).contains(nc) && (0..h).contains(nr))
                    .map(|(nc, nr)| at(nc, nr))
                    .collect();
                let mut sum = 0.0;
                for n in &nbrs {
                    sum += n;
                }
                values.push(at(c, r) + alpha * (sum - nbrs.len() as f64 * at(c, r)));
            }
        }
        NumberGrid { values, ..g.clone() }
    }

    fn oracle(g: &NumberGrid, alpha: f64, iterations: u64) -> NumberGrid {
        (0..iterations).fold(g.clone(), |acc, _| oracle_step(&acc, alpha))
    }

    fn hot_center() -> NumberGrid {
        let mut g = NumberGrid::filled(3, 3, 0.0);
        g.values[4] = 100.0;
        g
    }

    #[test]
    fn hot_center_single_step() {
        // Hand evaluation: center 100 + 0.25 * (0 - 4 * 100) = 0; each edge
        // neighbor 0 + 0.25 * (100 - 3 * 0) = 25; corners see no heat.
        let out = heat_diffusion(&hot_center(), 0.25, 1);
        assert_eq!(out.values, vec![0.0, 25.0, 0.0, 25.0, 0.0, 25.0, 0.0, 25.0, 0.0]);
        assert_eq!(out, oracle(&hot_center(), 0.25, 1));
    }

    #[test]
    fn uniform_grid_is_fixed_point() {
        let g = NumberGrid::filled(7, 4, 20.0);
        for (alpha, n) in [(0.0, 5), (0.1, 50), (0.25, 200)] {
            assert_eq!(heat_diffusion(&g, alpha, n), g);
        }
    }

    #[test]
    fn zero_iterations_is_identity() {
        let g = hot_center();
        assert_eq!(heat_diffusion(&g, 0.2, 0), g);
    }

    #[test]
    fn stop_hook_aborts() {
        assert!(heat_diffusion_with(&hot_center(), 0.1, 10, |step| step < 3).is_none());
    }

    fn arb_grid() -> impl Strategy<Value = NumberGrid> {
        (1usize..12, 1usize..12).prop_flat_map(|(w, h)| {
            proptest::collection::vec(0.0f64..100.0, w * h).prop_map(move |values| NumberGrid {
                width: w,
                height: h,
                cell_size: 1.0,
                origin: [0.0, 0.0],
                values,
            })
        })
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(1000))]
        #[test]
        fn total_heat_is_conserved(g in arb_grid(), alpha in 0.0f64..=MAX_ALPHA, n in 0u64..=50) {
            let before: f64 = g.values.iter().sum();
            let after: f64 = heat_diffusion(&g, alpha, n).values.iter().sum();
            prop_assert!((after - before).abs() <= 1e-9 * before.abs().max(f64::MIN_POSITIVE), "{before} vs {after}");
        }
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(100))]
        #[test]
        fn matches_brute_force_exactly(g in arb_grid(), alpha in 0.0f64..=MAX_ALPHA, n in 0u64..=20) {
            prop_assert_eq!(heat_diffusion(&g, alpha, n), oracle(&g, alpha, n));
        }

        #[test]
        fn noise_increases_with_any_source_level(
            sources in proptest::collection::vec((-20.0f64..20.0, -20.0f64..20.0, 30.0f64..110.0), 1..5),
            which in 0usize..5,
            bump in 0.5f64..20.0,
        ) {
            let mut srcs: Vec<NoiseSource> = sources.iter().map(|&(x, y, level)| NoiseSource { x, y, level }).collect();
            let geometry = GridGeometry { width: 4, height: 3, cell_size: 5.0, origin: [-10.0, -7.5] };
            let before = noise_map(&srcs, geometry);
            let i = which % srcs.len();
            srcs[i].level += bump;
            let after = noise_map(&srcs, geometry);
            for (a, b) in after.values.iter().zip(&before.values) {
                prop_assert!(a > b);
            }
        }

        #[test]
        fn comfort_in_unit_range_and_decreasing(
            t in -50.0f64..80.0, l in 0.0f64..140.0, dt in 0.0f64..10.0, dl in 0.0f64..10.0,
            wt in 0.0f64..=1.0, wn in 0.0f64..=1.0,
        ) {
            let w = ComfortWeights { temperature: wt, noise: wn };
            let c = |t, l| comfort_index(&NumberGrid::filled(1, 1, t), &NumberGrid::filled(1, 1, l), w).unwrap().values[0];
            let base = c(t, l);
            prop_assert!((0.0..=1.0).contains(&base));
            prop_assert!(c(t + dt, l) <= base);
            prop_assert!(c(t, l + dl) <= base);
        }
    }

    #[test]
    fn co_located_source_gives_its_level() {
        let s = [NoiseSource { x: 0.5, y: 0.5, level: 73.25 }];
        let g = noise_map(&s, GridGeometry { width: 1, height: 1, cell_size: 1.0, origin: [0.0, 0.0] });
        assert_eq!(g.values, vec![73.25]);
    }

    #[test]
    fn ten_meters_loses_twenty_db() {
        let s = NoiseSource { x: 0.0, y: 0.0, level: 100.0 };
        assert_eq!(s.level_at(10.0), 80.0);
        let g = noise_map(&[NoiseSource { x: 10.5, y: 0.5, level: 100.0 }], GridGeometry { width: 1, height: 1, cell_size: 1.0, origin: [0.0, 0.0] });
        assert_eq!(g.values, vec![80.0]);
    }

    #[test]
    fn two_equal_sources_add_three_db() {
        // 60 + 10 * log10(2), evaluated independently of `energetic_sum`.
        let expected = 60.0 + 10.0 * std::f64::consts::LOG10_2;
        assert!((expected - 63.0103).abs() < 1e-4);
        assert!((energetic_sum([60.0, 60.0]) - expected).abs() < 1e-6);
        let s = [NoiseSource { x: 0.5, y: 0.5, level: 60.0 }, NoiseSource { x: 0.5, y: 0.5, level: 60.0 }];
        let g = noise_map(&s, GridGeometry { width: 1, height: 1, cell_size: 1.0, origin: [0.0, 0.0] });
        assert!((g.values[0] - 63.0103).abs() < 1e-4);
    }

    #[test]
    fn silence_is_floored() {
        let g = noise_map(&[], GridGeometry { width: 2, height: 1, cell_size: 1.0, origin: [0.0, 0.0] });
        assert_eq!(g.values, vec![DB_FLOOR, DB_FLOOR]);
        assert_eq!(energetic_sum([-400.0]), DB_FLOOR);
    }

    #[test]
    fn comfort_extremes() {
        let w = ComfortWeights { temperature: 0.3, noise: 0.9 };
        let best = comfort_index(&NumberGrid::filled(2, 2, 20.0), &NumberGrid::filled(2, 2, 40.0), w).unwrap();
        assert!(best.values.iter().all(|v| *v == 1.0));
        let half = ComfortWeights { temperature: 0.5, noise: 0.5 };
        let worst = comfort_index(&NumberGrid::filled(2, 2, 40.0), &NumberGrid::filled(2, 2, 80.0), half).unwrap();
        assert!(worst.values.iter().all(|v| *v == 0.0));
        assert!(comfort_index(&NumberGrid::filled(2, 2, 20.0), &NumberGrid::filled(1, 2, 40.0), w).is_err());
    }

    #[test]
    fn descriptions_are_valid() {
        for d in [heat_diffusion_description(), noise_map_description(), comfort_index_description()] {
            check_description(&d).unwrap();
        }
        let heat = heat_diffusion_description();
        assert_eq!(heat.inputs.keys().collect::<Vec<_>>(), ["alpha", "grid", "iterations"]);
    }

    #[tokio::test]
    async fn executors_are_referentially_transparent() {
        let mut inputs = Inputs::new();
        inputs.insert("grid".into(), serde_json::to_value(hot_center()).unwrap());
        inputs.insert("alpha".into(), json!(0.2));
        inputs.insert("iterations".into(), json!(7));
        let a = HeatDiffusion.execute(inputs.clone(), ExecutionContext::default()).await.unwrap();
        let b = HeatDiffusion.execute(inputs, ExecutionContext::default()).await.unwrap();
        assert_eq!(crate::protocol::to_bytes(&a), crate::protocol::to_bytes(&b));

        let mut noise = Inputs::new();
        noise.insert("sources".into(), json!([{"x": 0.5, "y": 0.5, "attributes": {"level": 70.0}}]));
        for (k, v) in [("width", json!(2)), ("height", json!(2)), ("cellSize", json!(1.0)), ("originX", json!(0.0)), ("originY", json!(0.0))] {
            noise.insert(k.into(), v);
        }
        let out = NoiseMap.execute(noise.clone(), ExecutionContext::default()).await.unwrap();
        let grid: NumberGrid = serde_json::from_value(out["grid"].clone()).unwrap();
        assert_eq!(grid.values[0], 70.0);

        noise.insert("sources".into(), json!([{"x": 0.0, "y": 0.0}]));
        assert!(matches!(NoiseMap.execute(noise, ExecutionContext::default()).await, Err(ExecutionError::InvalidInput(_))));
    }

    #[tokio::test]
    async fn cancelled_heat_run_stops() {
        let mut inputs = Inputs::new();
        inputs.insert("grid".into(), serde_json::to_value(hot_center()).unwrap());
        inputs.insert("alpha".into(), json!(0.2));
        inputs.insert("iterations".into(), json!(1000));
        let ctx = ExecutionContext::default();
        ctx.cancel();
        assert!(matches!(HeatDiffusion.execute(inputs, ctx).await, Err(ExecutionError::Cancelled)));
    }
}
