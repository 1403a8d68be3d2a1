//! Context-oriented behavioral programming: a runtime for context-aware
//! b-threads and an explicit-state verifier over the same transition
//! relation.

pub mod behavior;
pub mod context;
pub mod engine;
pub mod error;
pub mod events;
pub mod examples;
pub mod value;
pub mod verifier;

pub use behavior::{CbtDefinition, LiveCopy, StepInput, StepOutcome};
pub use context::{
    ContextStore, EffectMap, Query, QueryBinding, QueryResult, Record, Repository, UpdateCommand,
};
pub use engine::{Arbiter, Engine, Program, StepStatus, SystemState, Trace, TraceEntry};
pub use error::{CobpError, Result};
pub use events::{Event, EventSet, PredicateRegistry, SyncStatement};
pub use value::{Map, Value};
pub use verifier::{Assertion, Limits, Outcome, SearchOrder, Verdict, VerifyOptions};
