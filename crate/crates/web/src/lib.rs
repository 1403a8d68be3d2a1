//! WebAssembly bindings for the browser demo. Every exported function
//! takes and returns JSON strings so the page needs no generated types.

use std::collections::BTreeSet;
use std::sync::Arc;

use cobp::examples::{self, life, robot};
use cobp::verifier::{verify, Limits, VerifyOptions};
use cobp::{Arbiter, CobpError, Engine, StepStatus};
use serde::Serialize;
use wasm_bindgen::prelude::*;

/// Keeps a stray click from freezing the tab.
pub const MAX_GENERATIONS: u32 = 100;
pub const MAX_ROBOT_STEPS: u32 = 5_000;
pub const MAX_VERIFY_STATES: usize = 200_000;

#[derive(Serialize)]
struct RobotRun {
    rows: i64,
    cols: i64,
    walls: Vec<(i64, i64)>,
    /// `(row, col, heading)` after every move, starting pose first.
    poses: Vec<(i64, i64, i64)>,
    status: StepStatus,
}

fn to_json(v: &impl Serialize) -> Result<String, CobpError> {
    serde_json::to_string(v).map_err(|e| CobpError::Config(e.to_string()))
}

/// Populations per generation, as a JSON array of `[row, col]` lists,
/// for a seed given as a JSON array of cells.
pub fn life_generations_json(cells: &str, generations: u32) -> Result<String, CobpError> {
    let seed: BTreeSet<(i64, i64)> = serde_json::from_str(cells)
        .map_err(|e| CobpError::InitDocument(format!("cells: {e}")))?;
    let generations = generations.clamp(1, MAX_GENERATIONS);
    let pops = life::run_generations(
        Arc::new(life::build(generations)),
        life::context(seed),
        Arbiter::FirstLexicographic,
        0,
        u64::MAX,
    )?;
    to_json(&pops)
}

/// A seeded run of the robot in the open room.
pub fn robot_run_json(seed: u64, steps: u32) -> Result<String, CobpError> {
    let world = robot::open_world();
    let (program, ctx) = robot::build(&world)?;
    let mut engine = Engine::new(Arc::new(program), ctx, Arbiter::SeededRandom, seed)?;
    let pose = |e: &Engine| robot::pose(e.state().ctx()).map(|((r, c), h)| (r, c, h));
    let mut poses: Vec<_> = pose(&engine).into_iter().collect();
    let mut status = StepStatus::StepLimit;
    for _ in 0..steps.min(MAX_ROBOT_STEPS) {
        let report = engine.step()?;
        if report.status.is_final() {
            status = report.status;
            break;
        }
        if report.entry.selected_event.as_ref().is_some_and(|e| e.label() == "move") {
            poses.extend(pose(&engine));
        }
    }
    to_json(&RobotRun {
        rows: world.grid.rows,
        cols: world.grid.cols,
        walls: world.grid.walls.iter().copied().collect(),
        poses,
        status,
    })
}

/// Verifies a registered example with its own assertions.
pub fn verify_json(name: &str) -> Result<String, CobpError> {
    let ex = examples::build(name)?;
    let opts = VerifyOptions {
        limits: Limits::new(MAX_VERIFY_STATES, 10_000)?,
        ..Default::default()
    };
    Ok(verify(&ex.program, ex.ctx_init.clone(), &ex.assertions, opts)?.to_json())
}

fn js(e: CobpError) -> JsValue {
    JsValue::from_str(&e.to_string())
}

#[wasm_bindgen]
pub fn example_names() -> Vec<String> {
    examples::names().map(str::to_owned).collect()
}

#[wasm_bindgen]
pub fn life_generations(cells: &str, generations: u32) -> Result<String, JsValue> {
    life_generations_json(cells, generations).map_err(js)
}

#[wasm_bindgen]
pub fn robot_run(seed: u32, steps: u32) -> Result<String, JsValue> {
    robot_run_json(u64::from(seed), steps).map_err(js)
}

#[wasm_bindgen]
pub fn verify_example(name: &str) -> Result<String, JsValue> {
    verify_json(name).map_err(js)
}
