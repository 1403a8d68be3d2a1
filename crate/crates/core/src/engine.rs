//! The synchronization cycle: select an event, apply its effect, diff the
//! bound queries, announce removed results, advance and spawn live copies.

use std::collections::{BTreeMap, BTreeSet, VecDeque};
use std::io::Write;
use std::sync::{Arc, Mutex};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::behavior::{spawn_live_copies, CbtDefinition, LiveCopy};
use crate::context::{
    apply_effect, ContextStore, EffectMap, QueryBinding, QueryDelta, QueryDiff, Repository,
    ResultSet,
};
use crate::error::{CobpError, Result};
use crate::events::{is_blocked, selectable, Event, PredicateRegistry, SyncStatement};

/// Everything needed to execute a context-oriented behavioral program.
#[derive(Debug, Clone, Default)]
pub struct Program {
    pub name: String,
    pub repo: Repository,
    pub effects: EffectMap,
    /// The specification proper.
    pub cbts: Vec<Arc<CbtDefinition>>,
    /// Environment simulators, executed exactly like program CBTs.
    pub env: Vec<Arc<CbtDefinition>>,
    pub predicates: PredicateRegistry,
}

impl Program {
    pub fn new(name: impl Into<String>) -> Self {
        Program {
            name: name.into(),
            ..Default::default()
        }
    }

    pub fn add_cbt(&mut self, cbt: CbtDefinition) -> &mut Self {
        self.cbts.push(Arc::new(cbt));
        self
    }

    pub fn add_env(&mut self, cbt: CbtDefinition) -> &mut Self {
        self.env.push(Arc::new(cbt));
        self
    }

    /// Program CBTs followed by environment CBTs.
    pub fn all_cbts(&self) -> Vec<Arc<CbtDefinition>> {
        self.cbts.iter().chain(&self.env).cloned().collect()
    }

    /// Distinct query bindings used by any CBT, ordered by key.
    pub fn bindings(&self) -> Vec<QueryBinding> {
        let by_key: BTreeMap<String, QueryBinding> = self
            .cbts
            .iter()
            .chain(&self.env)
            .map(|c| (c.binding().key(), c.binding().clone()))
            .collect();
        by_key.into_values().collect()
    }

    /// Checks that every CBT query is registered.
    pub fn validate(&self) -> Result<()> {
        for cbt in self.cbts.iter().chain(&self.env) {
            self.repo.query(&cbt.binding().query)?;
        }
        Ok(())
    }
}

/// A synchronization point of the whole system.
#[derive(Debug, Clone)]
pub struct SystemState {
    ctx: ContextStore,
    copies: BTreeMap<String, LiveCopy>,
    notices: VecDeque<Event>,
    external: VecDeque<Event>,
    results: BTreeMap<String, ResultSet>,
}

impl SystemState {
    /// Spawns the initial live copies from the initial context.
    pub fn initial(program: &Program, ctx: ContextStore) -> Result<Self> {
        program.validate()?;
        let mut diff = QueryDiff::default();
        let mut results = BTreeMap::new();
        for b in program.bindings() {
            let rs = b.evaluate(&ctx, &program.repo)?;
            diff.per_query
                .insert(b.key(), QueryDelta::between(&ResultSet::new(), &rs));
            results.insert(b.key(), rs);
        }
        let spawned = spawn_live_copies(&program.all_cbts(), &diff, &ctx, 0)?;
        let mut copies = BTreeMap::new();
        for lc in spawned.copies {
            copies.insert(lc.id().to_owned(), lc);
        }
        Ok(SystemState {
            ctx,
            copies,
            notices: VecDeque::new(),
            external: VecDeque::new(),
            results,
        })
    }

    pub fn ctx(&self) -> &ContextStore {
        &self.ctx
    }

    /// Live copies ordered by id (`cbtName#seedKey`).
    pub fn copies(&self) -> impl Iterator<Item = &LiveCopy> {
        self.copies.values()
    }

    pub fn copy_ids(&self) -> impl Iterator<Item = &str> {
        self.copies.keys().map(String::as_str)
    }

    pub fn pending_notices(&self) -> &VecDeque<Event> {
        &self.notices
    }

    pub fn external_queue(&self) -> &VecDeque<Event> {
        &self.external
    }

    pub fn statements(&self) -> Vec<&SyncStatement> {
        self.copies.values().map(LiveCopy::statement).collect()
    }

    /// Every requested event, deduplicated and sorted.
    pub fn requested(&self) -> Vec<Event> {
        let set: BTreeSet<&Event> = self
            .copies
            .values()
            .flat_map(|c| c.statement().requested())
            .collect();
        set.into_iter().cloned().collect()
    }

    pub fn push_external(&mut self, e: Event) -> Result<()> {
        if e.is_context() {
            return Err(CobpError::ContextEventRejected(e.to_string()));
        }
        self.external.push_back(e);
        Ok(())
    }

    /// What may happen next, in delivery priority order.
    pub fn enabled(&self, program: &Program) -> Result<Enabled> {
        if let Some(n) = self.notices.front() {
            return Ok(Enabled::Notice(n.clone()));
        }
        let stmts = self.statements();
        let mut sel = selectable(&stmts, &program.predicates)?;
        if !sel.is_empty() {
            sel.sort();
            return Ok(Enabled::Internal(sel));
        }
        for (index, e) in self.external.iter().enumerate() {
            if !is_blocked(&stmts, e, &program.predicates)? {
                return Ok(Enabled::External {
                    index,
                    event: e.clone(),
                });
            }
        }
        if stmts.iter().any(|s| !s.requested().is_empty()) {
            Ok(Enabled::Deadlock)
        } else {
            Ok(Enabled::Quiescent)
        }
    }

    /// Applies one transition. `position` labels step-function errors.
    pub fn transition(&self, program: &Program, choice: &Choice, position: u64) -> Result<Transition> {
        let mut next = self.clone();
        let e = match choice {
            Choice::Notice => next
                .notices
                .pop_front()
                .ok_or_else(|| CobpError::Config("no pending notice".into()))?,
            Choice::Internal(e) => e.clone(),
            Choice::External(i) => next
                .external
                .remove(*i)
                .ok_or_else(|| CobpError::Config(format!("no external event at {i}")))?,
        };

        let mut diff = QueryDiff::default();
        let mut ended = Vec::new();
        if !e.is_context() && program.effects.has_rule(e.label()) {
            next.ctx = apply_effect(&self.ctx, &program.repo, &program.effects, &e)?;
            for b in program.bindings() {
                let key = b.key();
                let after = b.evaluate(&next.ctx, &program.repo)?;
                let delta = QueryDelta::between(&self.results[&key], &after);
                for seed_key in delta.removed.keys() {
                    next.notices.push_back(Event::ctx_ended(&key, seed_key));
                    ended.push(format!("{key}#{seed_key}"));
                }
                next.results.insert(key.clone(), after);
                diff.per_query.insert(key, delta);
            }
        }

        let old = std::mem::take(&mut next.copies);
        for (id, lc) in old {
            if let Some(lc) = lc.advance(&e, &next.ctx, &program.predicates, position)? {
                next.copies.insert(id, lc);
            }
        }
        let spawned = spawn_live_copies(&program.all_cbts(), &diff, &next.ctx, position)?;
        for lc in spawned.copies {
            if next.copies.contains_key(lc.id()) {
                return Err(CobpError::DuplicateLiveCopy(lc.id().to_owned()));
            }
            next.copies.insert(lc.id().to_owned(), lc);
        }
        Ok(Transition {
            event: e,
            state: next,
            spawned: spawned.ids,
            ended,
        })
    }
}

/// Outcome of inspecting a state for the next event.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Enabled {
    /// A `CTX.Ended` notice awaits delivery.
    Notice(Event),
    /// Selectable program events, sorted.
    Internal(Vec<Event>),
    /// No internal event is selectable; this external event is admitted.
    External { index: usize, event: Event },
    Deadlock,
    Quiescent,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Choice {
    Notice,
    Internal(Event),
    External(usize),
}

#[derive(Debug, Clone)]
pub struct Transition {
    pub event: Event,
    pub state: SystemState,
    pub spawned: Vec<String>,
    /// `bindingKey#seedKey` for each removed query result.
    pub ended: Vec<String>,
}

/// Event-selection policy among selectable events.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Arbiter {
    SeededRandom,
    FirstLexicographic,
    /// Labels earlier in the list win; unranked labels come last. Ties go
    /// to the lexicographically smallest event.
    Priority(Vec<String>),
}

impl Arbiter {
    /// Picks an index into `candidates`, which must be nonempty and sorted.
    pub fn choose(&self, candidates: &[Event], rng: &mut ChaCha8Rng) -> usize {
        match self {
            Arbiter::SeededRandom => rng.random_range(0..candidates.len()),
            Arbiter::FirstLexicographic => 0,
            Arbiter::Priority(ranks) => {
                let rank = |e: &Event| {
                    ranks
                        .iter()
                        .position(|l| l == e.label())
                        .unwrap_or(ranks.len())
                };
                (0..candidates.len())
                    .min_by_key(|&i| (rank(&candidates[i]), i))
                    .unwrap_or(0)
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub enum StepStatus {
    Init,
    Progressed,
    SuperStep,
    Quiescent,
    Deadlock,
    StepLimit,
}

impl StepStatus {
    pub fn is_final(self) -> bool {
        matches!(
            self,
            StepStatus::Quiescent | StepStatus::Deadlock | StepStatus::StepLimit
        )
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct TraceEntry {
    pub step: u64,
    pub status: StepStatus,
    pub selected_event: Option<Event>,
    /// Requested events at the synchronization point before selection.
    pub requested: Vec<Event>,
    /// Labels of requested events that were blocked.
    pub blocked_labels: Vec<String>,
    pub spawned_ids: Vec<String>,
    pub ended_keys: Vec<String>,
    pub ctx_digest: String,
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Trace {
    pub entries: Vec<TraceEntry>,
}

impl Trace {
    pub fn final_status(&self) -> Option<StepStatus> {
        self.entries.last().map(|e| e.status)
    }

    /// All selected events, notices included.
    pub fn events(&self) -> impl Iterator<Item = &Event> {
        self.entries.iter().filter_map(|e| e.selected_event.as_ref())
    }

    /// Selected program-namespace events only.
    pub fn program_events(&self) -> Vec<Event> {
        self.events().filter(|e| !e.is_context()).cloned().collect()
    }

    pub fn to_jsonl(&self) -> String {
        let mut out = String::new();
        for e in &self.entries {
            out.push_str(&serde_json::to_string(e).expect("trace entries serialize"));
            out.push('\n');
        }
        out
    }

    pub fn write_jsonl(&self, w: &mut impl Write) -> std::io::Result<()> {
        w.write_all(self.to_jsonl().as_bytes())
    }

    pub fn from_jsonl(text: &str) -> Result<Self, serde_json::Error> {
        let entries = text
            .lines()
            .filter(|l| !l.trim().is_empty())
            .map(serde_json::from_str)
            .collect::<Result<_, _>>()?;
        Ok(Trace { entries })
    }
}

/// Thread-safe handle for producers of external events.
#[derive(Debug, Clone, Default)]
pub struct Inbox(Arc<Mutex<VecDeque<Event>>>);

impl Inbox {
    pub fn push(&self, e: Event) -> Result<()> {
        if e.is_context() {
            return Err(CobpError::ContextEventRejected(e.to_string()));
        }
        self.0.lock().expect("inbox lock poisoned").push_back(e);
        Ok(())
    }

    fn drain(&self) -> Vec<Event> {
        self.0.lock().expect("inbox lock poisoned").drain(..).collect()
    }
}

/// Result of a single [`Engine::step`].
#[derive(Debug, Clone)]
pub struct StepReport {
    pub status: StepStatus,
    pub entry: TraceEntry,
}

/// A single-threaded runtime over one program.
#[derive(Debug)]
pub struct Engine {
    program: Arc<Program>,
    state: SystemState,
    arbiter: Arbiter,
    rng: ChaCha8Rng,
    steps: u64,
    inbox: Inbox,
}

impl Engine {
    pub fn new(
        program: Arc<Program>,
        ctx_init: ContextStore,
        arbiter: Arbiter,
        seed: u64,
    ) -> Result<Self> {
        let state = SystemState::initial(&program, ctx_init)?;
        Ok(Engine {
            program,
            state,
            arbiter,
            rng: ChaCha8Rng::seed_from_u64(seed),
            steps: 0,
            inbox: Inbox::default(),
        })
    }

    pub fn program(&self) -> &Program {
        &self.program
    }

    pub fn state(&self) -> &SystemState {
        &self.state
    }

    pub fn steps(&self) -> u64 {
        self.steps
    }

    pub fn inbox(&self) -> Inbox {
        self.inbox.clone()
    }

    pub fn enqueue_external(&mut self, e: Event) -> Result<()> {
        self.state.push_external(e)
    }

    fn snapshot_entry(&self, step: u64, status: StepStatus) -> Result<TraceEntry> {
        let requested = self.state.requested();
        let stmts = self.state.statements();
        let mut blocked = BTreeSet::new();
        for e in &requested {
            if is_blocked(&stmts, e, &self.program.predicates)? {
                blocked.insert(e.label().to_owned());
            }
        }
        Ok(TraceEntry {
            step,
            status,
            selected_event: None,
            requested,
            blocked_labels: blocked.into_iter().collect(),
            spawned_ids: Vec::new(),
            ended_keys: Vec::new(),
            ctx_digest: self.state.ctx.digest(),
        })
    }

    /// The step-0 entry describing the initial state.
    pub fn init_entry(&self) -> Result<TraceEntry> {
        let mut entry = self.snapshot_entry(0, StepStatus::Init)?;
        entry.spawned_ids = self.state.copy_ids().map(str::to_owned).collect();
        Ok(entry)
    }

    /// Performs one transition, or reports quiescence or deadlock without
    /// changing the state.
    pub fn step(&mut self) -> Result<StepReport> {
        for e in self.inbox.drain() {
            self.state.push_external(e)?;
        }
        let position = self.steps + 1;
        let (choice, status) = match self.state.enabled(&self.program)? {
            Enabled::Notice(_) => (Choice::Notice, StepStatus::Progressed),
            Enabled::Internal(sel) => {
                let i = self.arbiter.choose(&sel, &mut self.rng);
                (Choice::Internal(sel[i].clone()), StepStatus::Progressed)
            }
            Enabled::External { index, .. } => (Choice::External(index), StepStatus::SuperStep),
            Enabled::Deadlock => {
                let entry = self.snapshot_entry(position, StepStatus::Deadlock)?;
                return Ok(StepReport {
                    status: StepStatus::Deadlock,
                    entry,
                });
            }
            Enabled::Quiescent => {
                let entry = self.snapshot_entry(position, StepStatus::Quiescent)?;
                return Ok(StepReport {
                    status: StepStatus::Quiescent,
                    entry,
                });
            }
        };
        let mut entry = self.snapshot_entry(position, status)?;
        if let Choice::Internal(e) = &choice {
            debug_assert!(
                self.state.statements().iter().any(|s| s.requested().contains(e))
                    && !is_blocked(&self.state.statements(), e, &self.program.predicates)
                        .unwrap_or(true),
                "selected event {e} must be requested and unblocked"
            );
        }
        let t = self.state.transition(&self.program, &choice, position)?;
        log::debug!("step {position}: {}", t.event);
        self.state = t.state;
        self.steps = position;
        entry.selected_event = Some(t.event);
        entry.spawned_ids = t.spawned;
        entry.ended_keys = t.ended;
        entry.ctx_digest = self.state.ctx.digest();
        Ok(StepReport { status, entry })
    }

    /// Steps until quiescence, deadlock or `max_steps` transitions. The
    /// trace starts with an init entry and ends with the final status.
    pub fn run(&mut self, max_steps: u64) -> Result<Trace> {
        let mut trace = Trace {
            entries: vec![self.init_entry()?],
        };
        let mut taken = 0;
        loop {
            if taken == max_steps {
                let entry = self.snapshot_entry(self.steps + 1, StepStatus::StepLimit)?;
                trace.entries.push(entry);
                return Ok(trace);
            }
            let report = self.step()?;
            trace.entries.push(report.entry);
            if report.status.is_final() {
                return Ok(trace);
            }
            taken += 1;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::context::Query;
    use crate::events::EventSet;

    fn requester(name: &str, label: &str, times: i64) -> CbtDefinition {
        let e = Event::named(label);
        CbtDefinition::new(name, "Program", 0, move |i| {
            let done = i.state.as_int().unwrap_or(0) + i64::from(i.last_event.is_some());
            Ok(if done >= times {
                crate::behavior::StepOutcome::Done
            } else {
                crate::behavior::StepOutcome::sync(SyncStatement::new().request(e.clone()), done)
            })
        })
    }

    fn program(cbts: Vec<CbtDefinition>) -> Arc<Program> {
        let mut p = Program::new("t");
        p.repo.add_query(Query::constant("Program"));
        for c in cbts {
            p.add_cbt(c);
        }
        Arc::new(p)
    }

    #[test]
    fn quiescent_program_ends_immediately() {
        let mut eng = Engine::new(program(vec![]), ContextStore::new(), Arbiter::SeededRandom, 0)
            .unwrap();
        let trace = eng.run(10).unwrap();
        assert_eq!(trace.entries.len(), 2);
        assert_eq!(trace.entries[0].status, StepStatus::Init);
        assert_eq!(trace.final_status(), Some(StepStatus::Quiescent));
    }

    #[test]
    fn blocked_request_is_a_deadlock() {
        let blocker = CbtDefinition::once("Blocker", "Program", |_, _| {
            SyncStatement::new().block(EventSet::label("a"))
        });
        let mut eng = Engine::new(
            program(vec![requester("A", "a", 1), blocker]),
            ContextStore::new(),
            Arbiter::FirstLexicographic,
            0,
        )
        .unwrap();
        let trace = eng.run(10).unwrap();
        let last = trace.entries.last().unwrap();
        assert_eq!(last.status, StepStatus::Deadlock);
        assert_eq!(last.blocked_labels, vec!["a"]);
    }

    #[test]
    fn externals_wait_for_a_super_step_in_fifo_order() {
        let mut eng = Engine::new(
            program(vec![requester("A", "a", 1)]),
            ContextStore::new(),
            Arbiter::FirstLexicographic,
            0,
        )
        .unwrap();
        let inbox = eng.inbox();
        inbox.push(Event::named("x1")).unwrap();
        inbox.push(Event::named("x2")).unwrap();
        let first = eng.step().unwrap();
        assert_eq!(first.entry.selected_event, Some(Event::named("a")));
        assert_eq!(eng.state().external_queue().len(), 2);
        let second = eng.step().unwrap();
        assert_eq!(second.status, StepStatus::SuperStep);
        assert_eq!(second.entry.selected_event, Some(Event::named("x1")));
        assert_eq!(eng.step().unwrap().entry.selected_event, Some(Event::named("x2")));
        assert_eq!(eng.step().unwrap().status, StepStatus::Quiescent);
    }

    #[test]
    fn context_events_are_rejected_by_the_inbox() {
        let inbox = Inbox::default();
        assert!(matches!(
            inbox.push(Event::ctx_ended("Q", "1")),
            Err(CobpError::ContextEventRejected(_))
        ));
    }

    #[test]
    fn step_limit_is_recorded() {
        let mut eng = Engine::new(
            program(vec![requester("A", "a", 5)]),
            ContextStore::new(),
            Arbiter::SeededRandom,
            0,
        )
        .unwrap();
        let trace = eng.run(2).unwrap();
        assert_eq!(trace.final_status(), Some(StepStatus::StepLimit));
        let steps: Vec<u64> = trace.entries.iter().map(|e| e.step).collect();
        assert_eq!(steps, vec![0, 1, 2, 3]);
    }

    #[test]
    fn priority_arbiter_prefers_ranked_labels() {
        let evs = vec![Event::named("a"), Event::named("b"), Event::named("c")];
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let arb = Arbiter::Priority(vec!["c".into(), "b".into()]);
        assert_eq!(arb.choose(&evs, &mut rng), 2);
        let arb = Arbiter::Priority(vec!["zzz".into()]);
        assert_eq!(arb.choose(&evs, &mut rng), 0);
    }

    #[test]
    fn trace_round_trips_through_jsonl() {
        let mut eng = Engine::new(
            program(vec![requester("A", "a", 2), requester("B", "b", 2)]),
            ContextStore::new(),
            Arbiter::SeededRandom,
            3,
        )
        .unwrap();
        let trace = eng.run(100).unwrap();
        let text = trace.to_jsonl();
        assert!(text.lines().next().unwrap().contains("\"selectedEvent\":null"));
        assert_eq!(Trace::from_jsonl(&text).unwrap(), trace);
    }
}
