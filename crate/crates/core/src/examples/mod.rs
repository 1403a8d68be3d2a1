//! The bundled example programs and a name-based registry over them.

pub mod building;
pub mod ext_hot_cold;
pub mod hot_cold;
pub mod life;
pub mod robot;

use std::sync::Arc;

use crate::context::ContextStore;
use crate::engine::{Arbiter, Program};
use crate::error::{CobpError, Result};
use crate::verifier::Assertion;

/// Parses a user-supplied context-init document for a specific example.
pub type CtxParser = fn(&str) -> Result<ContextStore>;

/// A ready-to-run program with its initial context and the properties it
/// is expected to satisfy.
#[derive(Clone)]
pub struct ExampleProgram {
    pub name: &'static str,
    pub description: &'static str,
    pub program: Arc<Program>,
    pub ctx_init: ContextStore,
    pub assertions: Vec<Assertion>,
    /// Arbiter used by the CLI when none is given.
    pub arbiter: Arbiter,
    /// How to read a replacement context from a file, if supported.
    pub parse_ctx: Option<CtxParser>,
}

impl std::fmt::Debug for ExampleProgram {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("ExampleProgram")
            .field("name", &self.name)
            .field("assertions", &self.assertions.len())
            .finish_non_exhaustive()
    }
}

const NAMES: &[(&str, &str)] = &[
    ("hot-cold", "three cold and three hot pours in any order"),
    ("hotcold-interleave", "hot-cold with strict cold/hot alternation"),
    ("ext-hot-cold", "per-room pouring after a button push; kitchens interleave"),
    ("gol", "game of life on a blinker for four generations"),
    ("gol-dance", "evolved game of life with a lonely dancing triple"),
    ("gol-dance-buggy", "evolved game of life without the loneliness check, on three in a row"),
    ("robot", "lidar-driven robot avoiding obstacles in an open room"),
    ("robot-corner", "the same robot driving into a dead-end corridor"),
    ("robot-delivery", "robot with a battery carrying one delivery"),
    ("smart-building-1room", "one office, one motion event, ten simulated minutes"),
    ("smart-building-2room", "an office and a kitchen, one motion event each"),
    ("smart-building-emergency", "one office, a worker and a fire drill"),
];

pub fn names() -> impl Iterator<Item = &'static str> {
    NAMES.iter().map(|(n, _)| *n)
}

pub fn describe(name: &str) -> Option<&'static str> {
    NAMES.iter().find(|(n, _)| *n == name).map(|(_, d)| *d)
}

/// Generations simulated by the bundled game-of-life examples.
pub const GOL_GENERATIONS: u32 = 4;

/// A blinker (three in a row), a period-two oscillator.
pub const BLINKER: [life::Cell; 3] = [(2, 1), (2, 2), (2, 3)];

/// Three individuals around (1, 1), none touching another.
pub const LONELY_TRIPLE: [life::Cell; 3] = [(0, 0), (0, 2), (2, 1)];

pub fn build(name: &str) -> Result<ExampleProgram> {
    use building::{BuildingConfig, EmergencyScript, Worker};

    let description = describe(name)
        .ok_or_else(|| CobpError::Config(format!("unknown example '{name}'")))?;
    let name: &'static str = names().find(|n| *n == name).unwrap_or_default();
    let mut assertions = Vec::new();
    let mut arbiter = Arbiter::SeededRandom;
    let mut parse_ctx: Option<CtxParser> = None;

    let (program, ctx_init) = match name {
        "hot-cold" => hot_cold::build(false),
        "hotcold-interleave" => hot_cold::build(true),
        "ext-hot-cold" => ext_hot_cold::build(&[(1, "kitchen"), (2, "bathroom"), (3, "bedroom")])?,
        "gol" | "gol-dance" | "gol-dance-buggy" => {
            assertions.push(life::barrier_assertion());
            parse_ctx = Some(life::parse_ctx);
            let (p, pop) = match name {
                "gol" => (life::build(GOL_GENERATIONS), BLINKER),
                "gol-dance" => (life::build_evolved(2, true), LONELY_TRIPLE),
                _ => (life::build_evolved(2, false), BLINKER),
            };
            if name != "gol" {
                assertions.push(life::no_duplication_assertion());
            }
            (p, life::context(pop))
        }
        "robot" | "robot-corner" | "robot-delivery" => {
            let world = match name {
                "robot" => robot::open_world(),
                "robot-corner" => robot::corner_world(),
                _ => robot::delivery_world(),
            };
            assertions.push(robot::wall_assertion(world.grid.clone()));
            robot::build(&world)?
        }
        _ => {
            let mut cfg = match name {
                "smart-building-2room" => {
                    BuildingConfig::rooms(&[(1, "office"), (2, "kitchen")], 1, 10)
                }
                _ => BuildingConfig::rooms(&[(1, "office")], 1, 10),
            };
            if name == "smart-building-emergency" {
                cfg.ticks = 6;
                cfg.emergency = Some(EmergencyScript { start: 2, end: 4 });
                cfg.workers.push(Worker {
                    id: "w1".into(),
                    name: "Ada".into(),
                    visits: 1,
                });
            }
            // program reactions win over the environment in simulation
            arbiter = Arbiter::Priority(
                [
                    "on",
                    "off",
                    "roomIsEmpty",
                    "roomIsNonempty",
                    "workerEntered",
                    "workerExited",
                    "announce",
                ]
                .map(String::from)
                .to_vec(),
            );
            assertions.push(building::emergency_assertion());
            building::build(&cfg)?
        }
    };
    program.validate()?;
    Ok(ExampleProgram {
        name,
        description,
        program: Arc::new(program),
        ctx_init,
        assertions,
        arbiter,
        parse_ctx,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn every_registered_example_builds() {
        for n in names() {
            let ex = build(n).unwrap_or_else(|e| panic!("{n}: {e}"));
            assert_eq!(ex.name, n);
        }
    }

    #[test]
    fn unknown_example_is_a_config_error() {
        assert!(matches!(build("nope"), Err(CobpError::Config(_))));
    }
}
