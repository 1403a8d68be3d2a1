//! Context-aware b-thread definitions and their live copies.
//!
//! A CBT body is an explicit state machine: a step function maps the
//! current state, the seed, the (post-effect) context and the event that
//! resumed the copy to the next synchronization statement and state.

use std::fmt;
use std::sync::Arc;

use crate::context::{ContextStore, QueryBinding, QueryDiff, QueryResult};
use crate::error::{CobpError, Result};
use crate::events::{Event, PredicateRegistry, SyncStatement};
use crate::value::{Map, Value};

/// Inputs to one invocation of a step function.
#[derive(Debug, Clone, Copy)]
pub struct StepInput<'a> {
    pub state: &'a Value,
    pub seed: &'a QueryResult,
    pub ctx: &'a ContextStore,
    /// `None` on the first call after spawning.
    pub last_event: Option<&'a Event>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum StepOutcome {
    Sync { statement: SyncStatement, next: Value },
    Done,
}

impl StepOutcome {
    pub fn sync(statement: SyncStatement, next: impl Into<Value>) -> Self {
        StepOutcome::Sync {
            statement,
            next: next.into(),
        }
    }
}

type StepFn = Arc<dyn Fn(&StepInput<'_>) -> Result<StepOutcome, String> + Send + Sync>;

/// A b-thread bound to a context query.
#[derive(Clone)]
pub struct CbtDefinition {
    name: String,
    binding: QueryBinding,
    init_state: Value,
    step: StepFn,
    interruptible: bool,
}

impl CbtDefinition {
    pub fn new<F>(
        name: impl Into<String>,
        query: impl Into<String>,
        init_state: impl Into<Value>,
        step: F,
    ) -> Self
    where
        F: Fn(&StepInput<'_>) -> Result<StepOutcome, String> + Send + Sync + 'static,
    {
        CbtDefinition {
            name: name.into(),
            binding: QueryBinding::new(query),
            init_state: init_state.into(),
            step: Arc::new(step),
            interruptible: false,
        }
    }

    /// A CBT with a single synchronization point: the statement built from
    /// the seed and context is submitted once, and the copy ends as soon as
    /// it resumes.
    pub fn once<F>(name: impl Into<String>, query: impl Into<String>, stmt: F) -> Self
    where
        F: Fn(&QueryResult, &ContextStore) -> SyncStatement + Send + Sync + 'static,
    {
        CbtDefinition::new(name, query, 0, move |i| {
            Ok(match i.last_event {
                None => StepOutcome::sync(stmt(i.seed, i.ctx), 0),
                Some(_) => StepOutcome::Done,
            })
        })
    }

    pub fn with_params(mut self, params: Map) -> Self {
        self.binding.params = params;
        self
    }

    /// End copies automatically when their seed leaves the query.
    pub fn interruptible(mut self) -> Self {
        self.interruptible = true;
        self
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn binding(&self) -> &QueryBinding {
        &self.binding
    }

    pub fn init_state(&self) -> &Value {
        &self.init_state
    }

    pub fn is_interruptible(&self) -> bool {
        self.interruptible
    }

    pub fn step(&self, input: &StepInput<'_>) -> Result<StepOutcome, String> {
        (self.step)(input)
    }
}

impl fmt::Debug for CbtDefinition {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("CbtDefinition")
            .field("name", &self.name)
            .field("binding", &self.binding)
            .field("init_state", &self.init_state)
            .field("interruptible", &self.interruptible)
            .finish()
    }
}

/// A running instance of a CBT, paused at a synchronization point.
#[derive(Clone)]
pub struct LiveCopy {
    id: String,
    cbt: Arc<CbtDefinition>,
    state: Value,
    seed: QueryResult,
    pending: SyncStatement,
}

pub fn live_copy_id(cbt: &str, seed_key: &str) -> String {
    format!("{cbt}#{seed_key}")
}

impl LiveCopy {
    /// Spawns a copy at the CBT's initial state and runs it to its first
    /// synchronization point. `Ok(None)` when it finishes immediately.
    pub fn start(
        cbt: &Arc<CbtDefinition>,
        seed: QueryResult,
        ctx: &ContextStore,
        position: u64,
    ) -> Result<Option<LiveCopy>> {
        let id = live_copy_id(cbt.name(), &seed.key);
        let outcome = cbt
            .step(&StepInput {
                state: cbt.init_state(),
                seed: &seed,
                ctx,
                last_event: None,
            })
            .map_err(|reason| CobpError::StepFailed {
                copy: id.clone(),
                step: position,
                reason,
            })?;
        Ok(match outcome {
            StepOutcome::Done => None,
            StepOutcome::Sync { statement, next } => Some(LiveCopy {
                id,
                cbt: Arc::clone(cbt),
                state: next,
                seed,
                pending: statement,
            }),
        })
    }

    pub fn id(&self) -> &str {
        &self.id
    }

    pub fn cbt(&self) -> &Arc<CbtDefinition> {
        &self.cbt
    }

    pub fn cbt_name(&self) -> &str {
        self.cbt.name()
    }

    pub fn state(&self) -> &Value {
        &self.state
    }

    pub fn seed(&self) -> &QueryResult {
        &self.seed
    }

    pub fn statement(&self) -> &SyncStatement {
        &self.pending
    }

    fn is_own_end_notice(&self, e: &Event) -> bool {
        self.cbt.interruptible
            && e.ended_target() == Some((self.cbt.binding.key().as_str(), self.seed.key.as_str()))
    }

    /// Resumes the copy if `e` is requested or waited for, using the
    /// post-effect context. `Ok(None)` when the copy finished.
    pub fn advance(
        self,
        e: &Event,
        ctx_after: &ContextStore,
        predicates: &PredicateRegistry,
        position: u64,
    ) -> Result<Option<LiveCopy>> {
        if self.is_own_end_notice(e) {
            return Ok(None);
        }
        if !self.pending.resumes_on(e, predicates)? {
            return Ok(Some(self));
        }
        let outcome = self
            .cbt
            .step(&StepInput {
                state: &self.state,
                seed: &self.seed,
                ctx: ctx_after,
                last_event: Some(e),
            })
            .map_err(|reason| CobpError::StepFailed {
                copy: self.id.clone(),
                step: position,
                reason,
            })?;
        Ok(match outcome {
            StepOutcome::Done => None,
            StepOutcome::Sync { statement, next } => Some(LiveCopy {
                state: next,
                pending: statement,
                ..self
            }),
        })
    }
}

impl fmt::Debug for LiveCopy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("LiveCopy")
            .field("id", &self.id)
            .field("state", &self.state)
            .field("pending", &self.pending)
            .finish()
    }
}

/// Copies created for the added results of one transition.
#[derive(Debug, Default)]
pub struct Spawned {
    /// Every spawned id, including copies that finished immediately.
    pub ids: Vec<String>,
    pub copies: Vec<LiveCopy>,
}

/// One copy per (CBT, added result of its query), in CBT registration
/// order and then result-key order, each run to its first sync point.
pub fn spawn_live_copies(
    cbts: &[Arc<CbtDefinition>],
    diff: &QueryDiff,
    ctx: &ContextStore,
    position: u64,
) -> Result<Spawned> {
    let mut out = Spawned::default();
    for cbt in cbts {
        let Some(delta) = diff.delta(&cbt.binding().key()) else {
            continue;
        };
        for seed in delta.added.values() {
            out.ids.push(live_copy_id(cbt.name(), &seed.key));
            if let Some(lc) = LiveCopy::start(cbt, seed.clone(), ctx, position)? {
                out.copies.push(lc);
            }
        }
    }
    Ok(out)
}

/// Statements of the given copies in the order supplied (callers keep
/// copies sorted by id).
pub fn collect_statements<'a>(
    copies: impl IntoIterator<Item = &'a LiveCopy>,
) -> Vec<&'a SyncStatement> {
    copies.into_iter().map(LiveCopy::statement).collect()
}
