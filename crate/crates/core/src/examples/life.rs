//! Game of Life with a tick/tock generation barrier, and the evolved
//! variant in which three lonely individuals circle an empty cell before
//! reproducing there.

use std::collections::BTreeSet;
use std::sync::Arc;

use serde::Deserialize;

use crate::behavior::{CbtDefinition, StepOutcome};
use crate::context::{key_string, ContextStore, Query, QueryResult, Record, UpdateCommand};
use crate::engine::{Arbiter, Engine, Program, StepStatus, SystemState};
use crate::error::{CobpError, Result};
use crate::events::{Event, EventSet, SyncStatement};
use crate::value::Value;
use crate::verifier::Assertion;

pub type Cell = (i64, i64);

/// Clockwise ring around a cell with rows growing downwards, starting east.
const RING: [Cell; 8] = [
    (0, 1),
    (1, 1),
    (1, 0),
    (1, -1),
    (0, -1),
    (-1, -1),
    (-1, 0),
    (-1, 1),
];

pub fn ngb((r, c): Cell) -> [Cell; 8] {
    RING.map(|(dr, dc)| (r + dr, c + dc))
}

/// The cell following `cell` on the dance circle around `center`.
pub fn next(center: Cell, cell: Cell) -> Option<Cell> {
    let offset = (cell.0 - center.0, cell.1 - center.1);
    let i = RING.iter().position(|&o| o == offset)?;
    let (dr, dc) = RING[(i + 1) % RING.len()];
    Some((center.0 + dr, center.1 + dc))
}

pub fn cell_value((r, c): Cell) -> Value {
    Value::cell(r, c)
}

pub fn cell_key(c: Cell) -> String {
    key_string(&cell_value(c))
}

pub fn population(ctx: &ContextStore) -> BTreeSet<Cell> {
    ctx.rows("pop")
        .filter_map(|(_, r)| r.get("cell").and_then(Value::as_cell))
        .collect()
}

fn tick_value(ctx: &ContextStore) -> i64 {
    ctx.field("tick", "tick", "value")
        .and_then(Value::as_int)
        .unwrap_or(0)
}

fn count(pop: &BTreeSet<Cell>, c: Cell) -> usize {
    ngb(c).iter().filter(|n| pop.contains(n)).count()
}

pub fn die(c: Cell) -> Event {
    Event::new("die", cell_value(c))
}

pub fn reproduce(c: Cell) -> Event {
    Event::new("reproduce", cell_value(c))
}

pub fn step(c: Cell) -> Event {
    Event::new("step", cell_value(c))
}

pub fn tick() -> Event {
    Event::named("tick")
}

pub fn tock() -> Event {
    Event::named("tock")
}

/// Builds a context holding `pop` with the barrier lowered.
pub fn context(pop: impl IntoIterator<Item = Cell>) -> ContextStore {
    let mut ctx = ContextStore::new();
    ctx.create_table("pop", "cell");
    ctx.create_table("tick", "id");
    for c in pop {
        ctx.insert("pop", row(c)).expect("pop table exists");
    }
    ctx.insert(
        "tick",
        [
            ("id".to_owned(), Value::from("tick")),
            ("value".to_owned(), Value::from(0)),
        ]
        .into(),
    )
    .expect("tick table exists");
    ctx
}

fn row(c: Cell) -> Record {
    [("cell".to_owned(), cell_value(c))].into()
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct CompactSeed {
    pop: Vec<(i64, i64)>,
    #[serde(default)]
    tick: i64,
}

/// Accepts `{"pop": [[r, c], ...], "tick": 0}` or a full context-init
/// document with `pop` and `tick` tables.
pub fn parse_ctx(text: &str) -> Result<ContextStore> {
    if let Ok(seed) = serde_json::from_str::<CompactSeed>(text) {
        if seed.tick != 0 {
            return Err(CobpError::InitDocument(
                "a seed must start with the barrier lowered (tick 0)".into(),
            ));
        }
        return Ok(context(seed.pop));
    }
    let ctx = ContextStore::from_init_json(text)?;
    if ctx.table("pop").is_none() || ctx.get("tick", "tick").is_none() {
        return Err(CobpError::InitDocument(
            "expected a 'pop' table and a 'tick' table with row 'tick'".into(),
        ));
    }
    Ok(ctx)
}

fn cell_arg(args: &Value) -> Result<Cell, String> {
    args.as_cell()
        .ok_or_else(|| format!("expected a [row, col] cell, got {args}"))
}

fn seed_cell(seed: &QueryResult) -> Result<Cell, String> {
    seed.get("cell")
        .and_then(Value::as_cell)
        .ok_or_else(|| format!("seed '{}' has no cell", seed.key))
}

fn results(cells: impl IntoIterator<Item = Cell>) -> Vec<QueryResult> {
    cells
        .into_iter()
        .map(|c| QueryResult::new(cell_key(c), row(c)))
        .collect()
}

/// Queries only answer while the barrier is raised, so every generation
/// spawns fresh copies at its tick.
fn gated<F>(name: &str, f: F) -> Query
where
    F: Fn(&BTreeSet<Cell>) -> Vec<Cell> + Send + Sync + 'static,
{
    Query::new(name, move |ctx, _| {
        if tick_value(ctx) == 0 {
            return Vec::new();
        }
        results(f(&population(ctx)))
    })
}

/// Empty cells next to the population; the only candidates for births.
fn empty_candidates(pop: &BTreeSet<Cell>) -> BTreeSet<Cell> {
    pop.iter()
        .flat_map(|&c| ngb(c))
        .filter(|c| !pop.contains(c))
        .collect()
}

/// The classic rules as cell predicates over a population.
fn rule(index: usize, pop: &BTreeSet<Cell>) -> Vec<Cell> {
    match index {
        1 => pop.iter().copied().filter(|&c| count(pop, c) < 2).collect(),
        2 => pop
            .iter()
            .copied()
            .filter(|&c| (2..=3).contains(&count(pop, c)))
            .collect(),
        3 => pop.iter().copied().filter(|&c| count(pop, c) > 3).collect(),
        4 => empty_candidates(pop)
            .into_iter()
            .filter(|&c| count(pop, c) == 3)
            .collect(),
        _ => unreachable!("rules are numbered 1 to 4"),
    }
}

/// Empty cells surrounded by exactly three individuals that, when
/// `lonely` is set, have no neighbours of their own.
pub fn dance_centers(pop: &BTreeSet<Cell>, lonely: bool) -> Vec<Cell> {
    empty_candidates(pop)
        .into_iter()
        .filter(|&c| {
            let members: Vec<Cell> = ngb(c).into_iter().filter(|n| pop.contains(n)).collect();
            members.len() == 3 && (!lonely || members.iter().all(|&m| count(pop, m) == 0))
        })
        .collect()
}

fn dancing(pop: &BTreeSet<Cell>, lonely: bool) -> BTreeSet<Cell> {
    dance_centers(pop, lonely)
        .into_iter()
        .flat_map(|c| std::iter::once(c).chain(ngb(c)))
        .collect()
}

/// Request `e` while holding the barrier, then finish.
fn act_once(name: String, query: String, make: fn(Cell) -> Event) -> CbtDefinition {
    CbtDefinition::new(name, query, 0, move |i| {
        let c = seed_cell(i.seed)?;
        Ok(match i.last_event {
            None => StepOutcome::sync(
                SyncStatement::new()
                    .request(make(c))
                    .block(EventSet::event(tick())),
                0,
            ),
            Some(_) => StepOutcome::Done,
        })
    })
}

fn survive(name: String, query: String) -> CbtDefinition {
    CbtDefinition::new(name, query, 0, |_| Ok(StepOutcome::Done))
}

/// Raises and lowers the barrier once per generation and finishes after
/// `generations` of them. Even states wait for tick, odd ones for tock.
fn tick_cbt(generations: u32) -> CbtDefinition {
    let limit = 2 * i64::from(generations);
    CbtDefinition::new("CBT_tick", "One", 0, move |i| {
        let n = i.state.as_int().unwrap_or(0) + i64::from(i.last_event.is_some());
        Ok(if n >= limit {
            StepOutcome::Done
        } else if n % 2 == 0 {
            StepOutcome::sync(SyncStatement::new().request(tick()), n)
        } else {
            StepOutcome::sync(
                SyncStatement::new()
                    .request(tock())
                    .block(EventSet::all_except([tock()])),
                n,
            )
        })
    })
}

pub const DANCE_STEPS: i64 = 8;

/// Eight steps around the centre, then a birth there.
fn dance_cbt() -> CbtDefinition {
    CbtDefinition::new("CBT_A", "Q_A", 0, |i| {
        let c = seed_cell(i.seed)?;
        let k = i.state.as_int().unwrap_or(0) + i64::from(i.last_event.is_some());
        let stmt = SyncStatement::new().block(EventSet::event(tick()));
        Ok(if k < DANCE_STEPS {
            StepOutcome::sync(stmt.request(step(c)), k)
        } else if k == DANCE_STEPS {
            StepOutcome::sync(stmt.request(reproduce(c)), k)
        } else {
            StepOutcome::Done
        })
    })
}

fn add_common(p: &mut Program) {
    p.repo.add_query(Query::constant("One"));
    p.repo.add_update(UpdateCommand::new("AddIndividual", |ctx, args| {
        ctx.insert("pop", row(cell_arg(args)?)).map(drop)
    }));
    p.repo.add_update(UpdateCommand::new("RemoveIndividual", |ctx, args| {
        ctx.remove("pop", &key_string(args)).map(drop)
    }));
    p.repo.add_update(UpdateCommand::new("ToggleTick", |ctx, _| {
        let v = tick_value(ctx);
        ctx.set_field("tick", "tick", "value", Value::from(1 - v))
    }));
    p.effects
        .forward("die", "RemoveIndividual")
        .forward("reproduce", "AddIndividual")
        .forward("tick", "ToggleTick")
        .forward("tock", "ToggleTick");
}

/// The classic game, running for `generations` generations.
pub fn build(generations: u32) -> Program {
    let mut p = Program::new("gol");
    add_common(&mut p);
    for i in 1..=4 {
        p.repo
            .add_query(gated(&format!("Q_{i}"), move |pop| rule(i, pop)));
    }
    p.add_cbt(act_once("CBT_1".into(), "Q_1".into(), die));
    p.add_cbt(survive("CBT_2".into(), "Q_2".into()));
    p.add_cbt(act_once("CBT_3".into(), "Q_3".into(), die));
    p.add_cbt(act_once("CBT_4".into(), "Q_4".into(), reproduce));
    p.add_cbt(tick_cbt(generations));
    p
}

/// The evolved game. With `lonely` false the dance query drops its
/// loneliness condition, which lets two dances share individuals.
pub fn build_evolved(generations: u32, lonely: bool) -> Program {
    let mut p = Program::new(if lonely { "gol-dance" } else { "gol-dance-buggy" });
    add_common(&mut p);
    p.repo.add_query(gated("Q_A", move |pop| dance_centers(pop, lonely)));
    for i in 1..=4 {
        p.repo.add_query(gated(&format!("Q_B{i}"), move |pop| {
            let excluded = dancing(pop, lonely);
            rule(i, pop)
                .into_iter()
                .filter(|c| !excluded.contains(c))
                .collect()
        }));
    }
    p.repo.add_update(UpdateCommand::new("DanceStep", |ctx, args| {
        let center = cell_arg(args)?;
        let pop = population(ctx);
        let movers: Vec<Cell> = ngb(center).into_iter().filter(|n| pop.contains(n)).collect();
        for &m in &movers {
            ctx.remove("pop", &cell_key(m))?;
        }
        for m in movers {
            let to = next(center, m).expect("movers are ring cells");
            ctx.insert("pop", row(to))?;
        }
        Ok(())
    }));
    p.effects.forward("step", "DanceStep");
    p.add_cbt(dance_cbt());
    p.add_cbt(act_once("CBT_B1".into(), "Q_B1".into(), die));
    p.add_cbt(survive("CBT_B2".into(), "Q_B2".into()));
    p.add_cbt(act_once("CBT_B3".into(), "Q_B3".into(), die));
    p.add_cbt(act_once("CBT_B4".into(), "Q_B4".into(), reproduce));
    p.add_cbt(tick_cbt(generations));
    p
}

/// No individual steps, dies or is born while the barrier is raised.
pub fn barrier_assertion() -> Assertion {
    Assertion::new("generation-barrier", |st, last| match last {
        Some(e) if matches!(e.label(), "die" | "reproduce" | "step") => tick_value(st.ctx()) == 0,
        _ => true,
    })
}

/// After every dance step, each active dance has exactly its three
/// members and no individual belongs to two dances.
pub fn no_duplication_assertion() -> Assertion {
    Assertion::new("no-duplication", |st, last| {
        if last.map(Event::label) != Some("step") {
            return true;
        }
        let pop = population(st.ctx());
        let mut seen = BTreeSet::new();
        for c in st.copies().filter(|c| c.cbt_name() == "CBT_A") {
            let Some(center) = c.seed().get("cell").and_then(Value::as_cell) else {
                return false;
            };
            let group: Vec<Cell> = ngb(center).into_iter().filter(|n| pop.contains(n)).collect();
            if group.len() != 3 || !group.iter().all(|m| seen.insert(*m)) {
                return false;
            }
        }
        true
    })
}

/// Runs a game and returns the population at the start of every
/// generation followed by the final one.
pub fn run_generations(
    program: Arc<Program>,
    ctx: ContextStore,
    arbiter: Arbiter,
    seed: u64,
    max_steps: u64,
) -> Result<Vec<BTreeSet<Cell>>> {
    let mut eng = Engine::new(program, ctx, arbiter, seed)?;
    let mut out = Vec::new();
    for _ in 0..max_steps {
        let report = eng.step()?;
        match report.status {
            StepStatus::Quiescent => {
                out.push(population(eng.state().ctx()));
                return Ok(out);
            }
            StepStatus::Deadlock => {
                return Err(CobpError::Config("game of life deadlocked".into()))
            }
            _ => {}
        }
        if report.entry.selected_event.as_ref() == Some(&tick()) {
            out.push(population(eng.state().ctx()));
        }
    }
    Err(CobpError::Config(format!(
        "game did not finish within {max_steps} steps"
    )))
}

/// Live copies of rule CBTs as `(cbt name, seed cell)`.
pub fn rule_copies(st: &SystemState) -> BTreeSet<(String, Cell)> {
    st.copies()
        .filter(|c| c.cbt_name() != "CBT_tick")
        .filter_map(|c| {
            let cell = c.seed().get("cell")?.as_cell()?;
            Some((c.cbt_name().to_owned(), cell))
        })
        .collect()
}
