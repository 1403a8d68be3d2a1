//! Explicit-state exploration of a program's synchronization points:
//! deadlock detection, assertions, state counting and trace enumeration.

use std::collections::{BTreeSet, HashMap, HashSet};
use std::fmt;
use std::ops::ControlFlow;
use std::sync::Arc;
#[cfg(not(target_arch = "wasm32"))]
use std::time::Instant;

use rayon::prelude::*;
use serde::Serialize;
use sha2::{Digest, Sha256};
#[cfg(target_arch = "wasm32")]
use web_time::Instant;

use crate::context::ContextStore;
use crate::engine::{Choice, Enabled, Program, SystemState};
use crate::error::{CobpError, Result};
use crate::events::{Event, SyncStatement};
use crate::value::Value;

pub type StateKey = [u8; 32];

#[derive(Serialize)]
struct KeyCopy<'a> {
    cbt: &'a str,
    state: &'a Value,
    seed: &'a str,
    pending: &'a SyncStatement,
}

/// Digest of a state, independent of the order copies were registered in.
pub fn state_key(st: &SystemState) -> StateKey {
    let mut copies: Vec<KeyCopy<'_>> = st
        .copies()
        .map(|c| KeyCopy {
            cbt: c.cbt_name(),
            state: c.state(),
            seed: &c.seed().key,
            pending: c.statement(),
        })
        .collect();
    copies.sort_by(|a, b| (a.cbt, a.seed).cmp(&(b.cbt, b.seed)));
    let mut h = Sha256::new();
    h.update(st.ctx().digest_bytes());
    let rest = serde_json::to_vec(&(copies, st.pending_notices(), st.external_queue()))
        .expect("state parts serialize");
    h.update(rest);
    h.finalize().into()
}

type AssertFn = Arc<dyn Fn(&SystemState, Option<&Event>) -> bool + Send + Sync>;

/// A safety property checked on every reached state.
#[derive(Clone)]
pub struct Assertion {
    name: String,
    holds: AssertFn,
}

impl Assertion {
    pub fn new<F>(name: impl Into<String>, holds: F) -> Self
    where
        F: Fn(&SystemState, Option<&Event>) -> bool + Send + Sync + 'static,
    {
        Assertion {
            name: name.into(),
            holds: Arc::new(holds),
        }
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn check(&self, st: &SystemState, last: Option<&Event>) -> bool {
        (self.holds)(st, last)
    }
}

impl fmt::Debug for Assertion {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Assertion").field("name", &self.name).finish()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SearchOrder {
    Dfs,
    Bfs,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Limits {
    pub max_states: usize,
    pub max_depth: usize,
}

impl Default for Limits {
    fn default() -> Self {
        Limits {
            max_states: 1_000_000,
            max_depth: 10_000,
        }
    }
}

impl Limits {
    pub fn new(max_states: usize, max_depth: usize) -> Result<Self> {
        if max_states == 0 || max_depth == 0 {
            return Err(CobpError::Limits(format!(
                "bounds must be positive (max_states={max_states}, max_depth={max_depth})"
            )));
        }
        Ok(Limits {
            max_states,
            max_depth,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
#[serde(rename_all = "camelCase")]
pub enum Outcome {
    Ok,
    Deadlock,
    Violation,
    BoundExceeded,
}

#[derive(Debug, Clone, Serialize)]
#[serde(rename_all = "camelCase")]
pub struct Verdict {
    pub outcome: Outcome,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub violation: Option<String>,
    pub states_visited: usize,
    pub elapsed_ms: u128,
    /// Events from the initial state to the offending one, notices included.
    pub counterexample: Option<Vec<Event>>,
}

impl Verdict {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("verdicts serialize")
    }
}

impl fmt::Display for Verdict {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let outcome = match (&self.outcome, &self.violation) {
            (Outcome::Ok, _) => "ok".to_owned(),
            (Outcome::Deadlock, _) => "deadlock".to_owned(),
            (Outcome::Violation, Some(name)) => format!("violation of '{name}'"),
            (Outcome::Violation, None) => "violation".to_owned(),
            (Outcome::BoundExceeded, _) => "bound exceeded".to_owned(),
        };
        write!(
            f,
            "{outcome}, {} states visited in {} ms",
            self.states_visited, self.elapsed_ms
        )
    }
}

struct Node {
    parent: Option<usize>,
    event: Option<Event>,
    depth: usize,
}

struct Search<'a> {
    program: &'a Program,
    limits: Limits,
    nodes: Vec<Node>,
    visited: HashMap<StateKey, usize>,
    depth_hit: bool,
}

enum Found {
    Deadlock(usize),
    Violation(usize, String),
    Bound,
}

/// Successor choices of a state; `None` means deadlock.
fn choices(program: &Program, st: &SystemState) -> Result<Option<Vec<Choice>>> {
    Ok(match st.enabled(program)? {
        Enabled::Notice(_) => Some(vec![Choice::Notice]),
        Enabled::Internal(sel) => Some(sel.into_iter().map(Choice::Internal).collect()),
        Enabled::External { index, .. } => Some(vec![Choice::External(index)]),
        Enabled::Quiescent => Some(Vec::new()),
        Enabled::Deadlock => None,
    })
}

type Expansion = Option<Vec<(Event, SystemState, StateKey)>>;

fn expand(program: &Program, st: &SystemState, depth: usize) -> Result<Expansion> {
    let Some(cs) = choices(program, st)? else {
        return Ok(None);
    };
    let mut out = Vec::with_capacity(cs.len());
    for c in cs {
        let t = st.transition(program, &c, depth as u64 + 1)?;
        let key = state_key(&t.state);
        out.push((t.event, t.state, key));
    }
    Ok(Some(out))
}

fn first_violation(
    assertions: &[Assertion],
    st: &SystemState,
    last: Option<&Event>,
) -> Option<String> {
    assertions
        .iter()
        .find(|a| !a.check(st, last))
        .map(|a| a.name().to_owned())
}

impl<'a> Search<'a> {
    fn new(program: &'a Program, limits: Limits) -> Self {
        Search {
            program,
            limits,
            nodes: Vec::new(),
            visited: HashMap::new(),
            depth_hit: false,
        }
    }

    /// Registers a state; `None` when it was seen before.
    fn add(&mut self, key: StateKey, parent: Option<usize>, event: Option<Event>) -> Option<usize> {
        if self.visited.contains_key(&key) {
            return None;
        }
        let depth = parent.map_or(0, |p| self.nodes[p].depth + 1);
        let idx = self.nodes.len();
        self.nodes.push(Node {
            parent,
            event,
            depth,
        });
        self.visited.insert(key, idx);
        Some(idx)
    }

    fn path(&self, mut idx: usize) -> Vec<Event> {
        let mut out = Vec::new();
        while let Some(e) = &self.nodes[idx].event {
            out.push(e.clone());
            idx = self.nodes[idx].parent.expect("non-root nodes have parents");
        }
        out.reverse();
        out
    }

    fn dfs(&mut self, init: SystemState, assertions: &[Assertion]) -> Result<Option<Found>> {
        let root = self
            .add(state_key(&init), None, None)
            .expect("fresh search");
        if let Some(name) = first_violation(assertions, &init, None) {
            return Ok(Some(Found::Violation(root, name)));
        }
        let mut stack = vec![(root, init)];
        while let Some((idx, st)) = stack.pop() {
            let depth = self.nodes[idx].depth;
            if depth >= self.limits.max_depth {
                if st.enabled(self.program)? != Enabled::Quiescent {
                    self.depth_hit = true;
                }
                continue;
            }
            let Some(succ) = expand(self.program, &st, depth)? else {
                return Ok(Some(Found::Deadlock(idx)));
            };
            let mut fresh = Vec::new();
            for (e, next, key) in succ {
                let Some(child) = self.add(key, Some(idx), Some(e.clone())) else {
                    continue;
                };
                if let Some(name) = first_violation(assertions, &next, Some(&e)) {
                    return Ok(Some(Found::Violation(child, name)));
                }
                if self.nodes.len() > self.limits.max_states {
                    return Ok(Some(Found::Bound));
                }
                fresh.push((child, next));
            }
            // first choice explored first
            stack.extend(fresh.into_iter().rev());
        }
        Ok(None)
    }

    /// Level-synchronous search. Expansion runs in parallel; merging is
    /// sequential in frontier order, so results do not depend on the
    /// number of workers.
    fn bfs(&mut self, init: SystemState, assertions: &[Assertion]) -> Result<Option<Found>> {
        let root = self
            .add(state_key(&init), None, None)
            .expect("fresh search");
        if let Some(name) = first_violation(assertions, &init, None) {
            return Ok(Some(Found::Violation(root, name)));
        }
        let mut frontier = vec![(root, init)];
        let mut depth = 0;
        while !frontier.is_empty() {
            if depth >= self.limits.max_depth {
                for (_, st) in &frontier {
                    if st.enabled(self.program)? != Enabled::Quiescent {
                        self.depth_hit = true;
                    }
                }
                break;
            }
            let program = self.program;
            let expanded: Vec<Result<Expansion>> = frontier
                .par_iter()
                .map(|(_, st)| expand(program, st, depth))
                .collect();
            let mut next_frontier = Vec::new();
            for ((idx, _), exp) in frontier.iter().zip(expanded) {
                let Some(succ) = exp? else {
                    return Ok(Some(Found::Deadlock(*idx)));
                };
                for (e, next, key) in succ {
                    let Some(child) = self.add(key, Some(*idx), Some(e.clone())) else {
                        continue;
                    };
                    if let Some(name) = first_violation(assertions, &next, Some(&e)) {
                        return Ok(Some(Found::Violation(child, name)));
                    }
                    if self.nodes.len() > self.limits.max_states {
                        return Ok(Some(Found::Bound));
                    }
                    next_frontier.push((child, next));
                }
            }
            frontier = next_frontier;
            depth += 1;
        }
        Ok(None)
    }
}

/// Options for [`verify`].
#[derive(Debug, Clone, Copy)]
pub struct VerifyOptions {
    pub limits: Limits,
    pub order: SearchOrder,
    /// Worker threads for breadth-first expansion; `0` uses the default.
    pub workers: usize,
}

impl Default for VerifyOptions {
    fn default() -> Self {
        VerifyOptions {
            limits: Limits::default(),
            order: SearchOrder::Dfs,
            workers: 0,
        }
    }
}

/// Explores every arbiter choice from `ctx_init`, stopping at the first
/// deadlock or assertion violation.
pub fn verify(
    program: &Program,
    ctx_init: ContextStore,
    assertions: &[Assertion],
    opts: VerifyOptions,
) -> Result<Verdict> {
    let started = Instant::now();
    Limits::new(opts.limits.max_states, opts.limits.max_depth)?;
    let init = SystemState::initial(program, ctx_init)?;
    let mut search = Search::new(program, opts.limits);
    let found = match opts.order {
        SearchOrder::Dfs => search.dfs(init, assertions)?,
        SearchOrder::Bfs => {
            let pool = rayon::ThreadPoolBuilder::new()
                .num_threads(opts.workers)
                .build()
                .map_err(|e| CobpError::Config(format!("thread pool: {e}")))?;
            pool.install(|| search.bfs(init, assertions))?
        }
    };
    let states_visited = search.nodes.len();
    let (outcome, violation, counterexample) = match found {
        Some(Found::Deadlock(i)) => (Outcome::Deadlock, None, Some(search.path(i))),
        Some(Found::Violation(i, name)) => (Outcome::Violation, Some(name), Some(search.path(i))),
        Some(Found::Bound) => (Outcome::BoundExceeded, None, None),
        None if search.depth_hit => (Outcome::BoundExceeded, None, None),
        None => (Outcome::Ok, None, None),
    };
    Ok(Verdict {
        outcome,
        violation,
        states_visited,
        elapsed_ms: started.elapsed().as_millis(),
        counterexample,
    })
}

/// Number of reachable synchronization points, deadlocks included.
pub fn count_states(program: &Program, ctx_init: ContextStore, limits: Limits) -> Result<usize> {
    Ok(explore_graph(program, ctx_init, limits)?.states.len())
}

/// The reachable transition graph.
#[derive(Debug, Default)]
pub struct StateGraph {
    pub initial: Option<StateKey>,
    pub states: HashSet<StateKey>,
    pub edges: HashSet<(StateKey, Event, StateKey)>,
    pub deadlocks: HashSet<StateKey>,
}

/// Successors of every reachable state, in choice order.
struct Adjacency {
    root: StateKey,
    succ: HashMap<StateKey, Vec<(Event, StateKey)>>,
    deadlocks: HashSet<StateKey>,
}

fn adjacency(program: &Program, ctx_init: ContextStore, limits: Limits) -> Result<Adjacency> {
    let limits = Limits::new(limits.max_states, limits.max_depth)?;
    let init = SystemState::initial(program, ctx_init)?;
    let root = state_key(&init);
    let mut adj = Adjacency {
        root,
        succ: HashMap::new(),
        deadlocks: HashSet::new(),
    };
    let mut seen = HashSet::from([root]);
    let mut stack = vec![(root, init)];
    while let Some((key, st)) = stack.pop() {
        let Some(expanded) = expand(program, &st, 0)? else {
            adj.deadlocks.insert(key);
            adj.succ.insert(key, Vec::new());
            continue;
        };
        let mut out = Vec::with_capacity(expanded.len());
        for (e, next, nkey) in expanded {
            out.push((e, nkey));
            if seen.insert(nkey) {
                if seen.len() > limits.max_states {
                    return Err(CobpError::BoundExceeded { states: seen.len() });
                }
                stack.push((nkey, next));
            }
        }
        adj.succ.insert(key, out);
    }
    Ok(adj)
}

pub fn explore_graph(program: &Program, ctx_init: ContextStore, limits: Limits) -> Result<StateGraph> {
    let adj = adjacency(program, ctx_init, limits)?;
    let mut g = StateGraph {
        initial: Some(adj.root),
        deadlocks: adj.deadlocks,
        ..Default::default()
    };
    for (from, out) in adj.succ {
        g.states.insert(from);
        for (e, to) in out {
            g.edges.insert((from, e, to));
        }
    }
    Ok(g)
}

/// Calls `visit` once per maximal run (ending in quiescence or deadlock)
/// with the run's program-namespace events, in choice order. Runs are
/// not deduplicated. Cycles make the set infinite and are reported as
/// exceeding the bound, as are runs longer than `max_depth`. Returns the
/// number of runs visited.
pub fn visit_maximal_traces<F>(
    program: &Program,
    ctx_init: ContextStore,
    limits: Limits,
    mut visit: F,
) -> Result<u64>
where
    F: FnMut(&[Event]) -> ControlFlow<()>,
{
    let adj = adjacency(program, ctx_init, limits)?;
    let states = adj.succ.len();
    // frame: (state, next child to take, whether entering it pushed an event)
    let mut frames: Vec<(StateKey, usize, bool)> = vec![(adj.root, 0, false)];
    let mut on_path = HashSet::from([adj.root]);
    let mut path: Vec<Event> = Vec::new();
    let mut runs = 0u64;
    while let Some(top) = frames.last_mut() {
        let (key, child) = (top.0, top.1);
        let out = &adj.succ[&key];
        if out.is_empty() && child == 0 {
            runs += 1;
            if visit(&path).is_break() {
                return Ok(runs);
            }
        }
        if let Some((e, next)) = out.get(child) {
            top.1 += 1;
            if frames.len() > limits.max_depth || !on_path.insert(*next) {
                return Err(CobpError::BoundExceeded { states });
            }
            let pushed = !e.is_context();
            if pushed {
                path.push(e.clone());
            }
            frames.push((*next, 0, pushed));
        } else {
            let (key, _, pushed) = frames.pop().expect("nonempty");
            on_path.remove(&key);
            if pushed {
                path.pop();
            }
        }
    }
    Ok(runs)
}

/// The deduplicated set of maximal runs; see [`visit_maximal_traces`].
/// More than `max_states` distinct runs count as exceeding the bound.
pub fn enumerate_maximal_traces(
    program: &Program,
    ctx_init: ContextStore,
    limits: Limits,
) -> Result<BTreeSet<Vec<Event>>> {
    let mut out = BTreeSet::new();
    let mut over = false;
    visit_maximal_traces(program, ctx_init, limits, |t| {
        if !out.contains(t) {
            out.insert(t.to_vec());
        }
        if out.len() > limits.max_states {
            over = true;
            return ControlFlow::Break(());
        }
        ControlFlow::Continue(())
    })?;
    if over {
        return Err(CobpError::BoundExceeded { states: out.len() });
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::behavior::{CbtDefinition, StepOutcome};
    use crate::context::Query;
    use crate::events::EventSet;

    fn counter(name: &str, label: &str, times: i64) -> CbtDefinition {
        let e = Event::named(label);
        CbtDefinition::new(name, "Program", 0, move |i| {
            let done = i.state.as_int().unwrap_or(0) + i64::from(i.last_event.is_some());
            Ok(if done >= times {
                StepOutcome::Done
            } else {
                StepOutcome::sync(SyncStatement::new().request(e.clone()), done)
            })
        })
    }

    fn program(cbts: Vec<CbtDefinition>) -> Program {
        let mut p = Program::new("t");
        p.repo.add_query(Query::constant("Program"));
        for c in cbts {
            p.add_cbt(c);
        }
        p
    }

    #[test]
    fn empty_program_has_one_state() {
        let n = count_states(&program(vec![]), ContextStore::new(), Limits::default()).unwrap();
        assert_eq!(n, 1);
    }

    #[test]
    fn nonpositive_limits_are_rejected() {
        assert!(matches!(Limits::new(0, 5), Err(CobpError::Limits(_))));
        let opts = VerifyOptions {
            limits: Limits {
                max_states: 10,
                max_depth: 0,
            },
            ..Default::default()
        };
        assert!(verify(&program(vec![]), ContextStore::new(), &[], opts).is_err());
    }

    #[test]
    fn deadlock_carries_a_path() {
        let blocker = CbtDefinition::new("Blocker", "Program", 0, |i| {
            Ok(StepOutcome::sync(
                SyncStatement::new()
                    .wait_for(EventSet::label("a"))
                    .block(if i.last_event.is_some() {
                        EventSet::label("b")
                    } else {
                        EventSet::None
                    }),
                1,
            ))
        });
        let p = program(vec![counter("A", "a", 1), counter("B", "b", 1), blocker]);
        let v = verify(&p, ContextStore::new(), &[], VerifyOptions::default()).unwrap();
        assert_eq!(v.outcome, Outcome::Deadlock);
        assert_eq!(v.counterexample, Some(vec![Event::named("a")]));
    }

    #[test]
    fn assertion_violation_is_reported_with_path() {
        let p = program(vec![counter("A", "a", 3)]);
        let never_twice = Assertion::new("at most one a", |st, _| {
            st.copies().all(|c| c.state().as_int().unwrap_or(0) < 2)
        });
        let v = verify(&p, ContextStore::new(), &[never_twice], VerifyOptions::default()).unwrap();
        assert_eq!(v.outcome, Outcome::Violation);
        assert_eq!(v.violation.as_deref(), Some("at most one a"));
        assert_eq!(v.counterexample.unwrap().len(), 2);
    }

    #[test]
    fn state_bound_is_reported() {
        let p = program(vec![counter("A", "a", 50)]);
        let opts = VerifyOptions {
            limits: Limits::new(10, 1000).unwrap(),
            ..Default::default()
        };
        let v = verify(&p, ContextStore::new(), &[], opts).unwrap();
        assert_eq!(v.outcome, Outcome::BoundExceeded);
        assert!(v.counterexample.is_none());
        assert!(count_states(&p, ContextStore::new(), Limits::new(10, 1000).unwrap()).is_err());
    }

    #[test]
    fn cycles_cannot_be_enumerated() {
        let looper = CbtDefinition::new("Loop", "Program", 0, |_| {
            Ok(StepOutcome::sync(SyncStatement::new().request(Event::named("x")), 0))
        });
        let err = enumerate_maximal_traces(&program(vec![looper]), ContextStore::new(), Limits::default())
            .unwrap_err();
        assert!(matches!(err, CobpError::BoundExceeded { .. }));
    }

    #[test]
    fn bfs_and_dfs_agree_on_counts() {
        let p = program(vec![counter("A", "a", 3), counter("B", "b", 2)]);
        let dfs = verify(&p, ContextStore::new(), &[], VerifyOptions::default()).unwrap();
        for workers in [1, 4] {
            let bfs = verify(
                &p,
                ContextStore::new(),
                &[],
                VerifyOptions {
                    order: SearchOrder::Bfs,
                    workers,
                    ..Default::default()
                },
            )
            .unwrap();
            assert_eq!(bfs.outcome, Outcome::Ok);
            assert_eq!(bfs.states_visited, dfs.states_visited);
        }
        assert_eq!(dfs.states_visited, 12);
    }
}
