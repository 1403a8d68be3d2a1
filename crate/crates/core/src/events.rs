//! Events, event-set matchers and synchronization statements.

use std::collections::{BTreeSet, HashMap};
use std::fmt;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{CobpError, Result};
use crate::value::Value;

/// Label of the engine-synthesized notification that a seed left its query.
pub const CTX_ENDED: &str = "CTX.Ended";

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Namespace {
    Program,
    /// Reserved for notifications synthesized by the engine.
    Context,
}

/// A named occurrence with a structured payload.
///
/// Equality is structural over namespace, label and payload. Only the
/// engine can create context-namespace events.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct Event {
    ns: Namespace,
    label: String,
    #[serde(default)]
    payload: Value,
}

impl Event {
    pub fn new(label: impl Into<String>, payload: impl Into<Value>) -> Self {
        Event {
            ns: Namespace::Program,
            label: label.into(),
            payload: payload.into(),
        }
    }

    /// An event without payload.
    pub fn named(label: impl Into<String>) -> Self {
        Event::new(label, Value::Null)
    }

    pub(crate) fn ctx_ended(query: &str, key: &str) -> Self {
        Event {
            ns: Namespace::Context,
            label: CTX_ENDED.to_owned(),
            payload: Value::map([("query", Value::from(query)), ("key", Value::from(key))]),
        }
    }

    pub fn ns(&self) -> Namespace {
        self.ns
    }

    pub fn label(&self) -> &str {
        &self.label
    }

    pub fn payload(&self) -> &Value {
        &self.payload
    }

    pub fn is_context(&self) -> bool {
        self.ns == Namespace::Context
    }

    /// For a `CTX.Ended` notice, the `(query, key)` it announces.
    pub fn ended_target(&self) -> Option<(&str, &str)> {
        if !self.is_context() || self.label != CTX_ENDED {
            return None;
        }
        Some((
            self.payload.get("query")?.as_str()?,
            self.payload.get("key")?.as_str()?,
        ))
    }
}

impl fmt::Display for Event {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.payload.is_null() {
            f.write_str(&self.label)
        } else {
            write!(f, "{}({})", self.label, self.payload)
        }
    }
}

type PayloadPredicate = Arc<dyn Fn(&Value) -> bool + Send + Sync>;

/// Payload predicates referenced by id from [`EventSet::LabelMatch`].
///
/// Keeping predicates out of the matcher itself keeps event sets
/// serializable, which the verifier relies on for state hashing.
#[derive(Clone, Default)]
pub struct PredicateRegistry {
    predicates: HashMap<String, PayloadPredicate>,
}

impl PredicateRegistry {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn register<F>(&mut self, id: impl Into<String>, predicate: F)
    where
        F: Fn(&Value) -> bool + Send + Sync + 'static,
    {
        self.predicates.insert(id.into(), Arc::new(predicate));
    }

    pub fn contains(&self, id: &str) -> bool {
        self.predicates.contains_key(id)
    }

    fn eval(&self, id: &str, payload: &Value) -> Result<bool> {
        let p = self
            .predicates
            .get(id)
            .ok_or_else(|| CobpError::Config(format!("unknown payload predicate '{id}'")))?;
        Ok(p(payload))
    }
}

impl fmt::Debug for PredicateRegistry {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let mut ids: Vec<_> = self.predicates.keys().collect();
        ids.sort();
        f.debug_struct("PredicateRegistry").field("ids", &ids).finish()
    }
}

/// Declarative event matcher used for wait-for and block sets.
///
/// The event universe is open: `All` and `Complement` are intensional and
/// are never enumerated.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize, Default)]
#[serde(rename_all = "camelCase")]
pub enum EventSet {
    Explicit(BTreeSet<Event>),
    All,
    #[default]
    None,
    Complement(Box<EventSet>),
    Union(Vec<EventSet>),
    /// Matches events with this label whose payload satisfies the
    /// registered predicate (any payload when `predicate` is `None`).
    LabelMatch {
        label: String,
        predicate: Option<String>,
    },
}

impl EventSet {
    pub fn event(e: Event) -> Self {
        EventSet::Explicit(BTreeSet::from([e]))
    }

    pub fn events(events: impl IntoIterator<Item = Event>) -> Self {
        EventSet::Explicit(events.into_iter().collect())
    }

    pub fn label(label: impl Into<String>) -> Self {
        EventSet::LabelMatch {
            label: label.into(),
            predicate: None,
        }
    }

    pub fn label_where(label: impl Into<String>, predicate: impl Into<String>) -> Self {
        EventSet::LabelMatch {
            label: label.into(),
            predicate: Some(predicate.into()),
        }
    }

    /// Matches the `CTX.Ended` notice for `key` leaving `query`.
    pub fn ended(query: &str, key: &str) -> Self {
        EventSet::event(Event::ctx_ended(query, key))
    }

    pub fn complement(set: EventSet) -> Self {
        EventSet::Complement(Box::new(set))
    }

    /// Everything except the given events.
    pub fn all_except(events: impl IntoIterator<Item = Event>) -> Self {
        EventSet::complement(EventSet::events(events))
    }

    pub fn union(sets: impl IntoIterator<Item = EventSet>) -> Self {
        EventSet::Union(sets.into_iter().collect())
    }

    /// Events matching `self` but not `other`.
    pub fn difference(self, other: EventSet) -> Self {
        EventSet::complement(EventSet::union([EventSet::complement(self), other]))
    }

    pub fn matches(&self, e: &Event, predicates: &PredicateRegistry) -> Result<bool> {
        Ok(match self {
            EventSet::Explicit(set) => set.contains(e),
            EventSet::All => true,
            EventSet::None => false,
            EventSet::Complement(inner) => !inner.matches(e, predicates)?,
            EventSet::Union(sets) => {
                for s in sets {
                    if s.matches(e, predicates)? {
                        return Ok(true);
                    }
                }
                false
            }
            EventSet::LabelMatch { label, predicate } => {
                label == e.label()
                    && match predicate {
                        Some(id) => predicates.eval(id, e.payload())?,
                        None => true,
                    }
            }
        })
    }

    /// Checks that every predicate id used by this matcher is registered.
    pub fn validate(&self, predicates: &PredicateRegistry) -> Result<()> {
        match self {
            EventSet::Complement(inner) => inner.validate(predicates),
            EventSet::Union(sets) => sets.iter().try_for_each(|s| s.validate(predicates)),
            EventSet::LabelMatch {
                predicate: Some(id),
                ..
            } if !predicates.contains(id) => Err(CobpError::Config(format!(
                "unknown payload predicate '{id}'"
            ))),
            _ => Ok(()),
        }
    }
}

/// One live copy's bid at a synchronization point.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize, Default)]
#[serde(rename_all = "camelCase")]
pub struct SyncStatement {
    requested: Vec<Event>,
    waited_for: EventSet,
    blocked: EventSet,
}

impl SyncStatement {
    pub fn new() -> Self {
        Self::default()
    }

    /// Adds a requested event; duplicates are ignored, order is kept.
    pub fn request(mut self, e: Event) -> Self {
        if !self.requested.contains(&e) {
            self.requested.push(e);
        }
        self
    }

    pub fn request_all(self, events: impl IntoIterator<Item = Event>) -> Self {
        events.into_iter().fold(self, SyncStatement::request)
    }

    pub fn wait_for(mut self, set: EventSet) -> Self {
        self.waited_for = set;
        self
    }

    pub fn block(mut self, set: EventSet) -> Self {
        self.blocked = set;
        self
    }

    pub fn requested(&self) -> &[Event] {
        &self.requested
    }

    pub fn waited_for(&self) -> &EventSet {
        &self.waited_for
    }

    pub fn blocked(&self) -> &EventSet {
        &self.blocked
    }

    /// Whether a copy paused on this statement resumes when `e` is selected.
    pub fn resumes_on(&self, e: &Event, predicates: &PredicateRegistry) -> Result<bool> {
        Ok(self.requested.contains(e) || self.waited_for.matches(e, predicates)?)
    }

    pub fn validate(&self, predicates: &PredicateRegistry) -> Result<()> {
        self.waited_for.validate(predicates)?;
        self.blocked.validate(predicates)
    }
}

/// True when any statement blocks `e`.
pub fn is_blocked(
    statements: &[&SyncStatement],
    e: &Event,
    predicates: &PredicateRegistry,
) -> Result<bool> {
    for s in statements {
        if s.blocked.matches(e, predicates)? {
            return Ok(true);
        }
    }
    Ok(false)
}

/// Events requested by some statement and blocked by none.
///
/// The result is a set; it is returned in first-request order so callers
/// get a deterministic sequence.
pub fn selectable(
    statements: &[&SyncStatement],
    predicates: &PredicateRegistry,
) -> Result<Vec<Event>> {
    let mut seen = BTreeSet::new();
    let mut out = Vec::new();
    for s in statements {
        for e in &s.requested {
            if seen.insert(e) && !is_blocked(statements, e, predicates)? {
                out.push(e.clone());
            }
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn reg() -> PredicateRegistry {
        let mut r = PredicateRegistry::new();
        r.register("even", |v| v.as_int().is_some_and(|i| i % 2 == 0));
        r
    }

    #[test]
    fn explicit_membership() {
        let hot = Event::named("Hot");
        assert!(EventSet::event(hot.clone()).matches(&hot, &reg()).unwrap());
    }

    #[test]
    fn complement_of_tock_contains_tick() {
        let set = EventSet::all_except([Event::named("tock")]);
        assert!(set.matches(&Event::named("tick"), &reg()).unwrap());
        assert!(!set.matches(&Event::named("tock"), &reg()).unwrap());
    }

    #[test]
    fn none_matches_nothing() {
        for e in [Event::named("a"), Event::new("b", 3), Event::ctx_ended("q", "k")] {
            assert!(!EventSet::None.matches(&e, &reg()).unwrap());
        }
    }

    #[test]
    fn label_match_with_predicate() {
        let set = EventSet::label_where("n", "even");
        assert!(set.matches(&Event::new("n", 4), &reg()).unwrap());
        assert!(!set.matches(&Event::new("n", 3), &reg()).unwrap());
        assert!(!set.matches(&Event::new("m", 4), &reg()).unwrap());
        assert!(EventSet::label("n").matches(&Event::new("n", 3), &reg()).unwrap());
    }

    #[test]
    fn unknown_predicate_is_a_config_error() {
        let set = EventSet::label_where("n", "odd");
        let err = set.matches(&Event::new("n", 1), &reg()).unwrap_err();
        assert!(matches!(err, CobpError::Config(_)));
        assert!(set.validate(&reg()).is_err());
        // a different label short-circuits before the predicate is consulted
        assert!(!set.matches(&Event::new("m", 1), &reg()).unwrap());
    }

    #[test]
    fn difference_removes_the_exception() {
        let fwd = Event::new("move", "forward");
        let left = Event::new("move", "left");
        let set = EventSet::label("move").difference(EventSet::event(fwd.clone()));
        assert!(!set.matches(&fwd, &reg()).unwrap());
        assert!(set.matches(&left, &reg()).unwrap());
        assert!(!set.matches(&Event::named("scan"), &reg()).unwrap());
    }

    #[test]
    fn requested_is_deduplicated() {
        let s = SyncStatement::new()
            .request(Event::named("a"))
            .request(Event::named("b"))
            .request(Event::named("a"));
        assert_eq!(s.requested(), &[Event::named("a"), Event::named("b")]);
    }

    #[test]
    fn selectable_hot_cold_start() {
        let cold = SyncStatement::new().request(Event::named("Cold"));
        let hot = SyncStatement::new().request(Event::named("Hot"));
        let sel = selectable(&[&cold, &hot], &reg()).unwrap();
        let set: BTreeSet<_> = sel.into_iter().collect();
        assert_eq!(set, BTreeSet::from([Event::named("Cold"), Event::named("Hot")]));
    }

    #[test]
    fn selectable_with_interleave_blocking_hot() {
        let cold = SyncStatement::new().request(Event::named("Cold"));
        let hot = SyncStatement::new().request(Event::named("Hot"));
        let interleave = SyncStatement::new()
            .wait_for(EventSet::events([Event::named("Cold"), Event::named("Hot")]))
            .block(EventSet::event(Event::named("Hot")));
        let sel = selectable(&[&cold, &hot, &interleave], &reg()).unwrap();
        assert_eq!(sel, vec![Event::named("Cold")]);
    }

    #[test]
    fn everything_blocked_gives_empty_selection() {
        let s = SyncStatement::new()
            .request(Event::named("a"))
            .block(EventSet::All);
        assert!(selectable(&[&s], &reg()).unwrap().is_empty());
    }

    #[test]
    fn event_json_shape() {
        let e = Event::new("die", Value::cell(5, 5));
        assert_eq!(
            serde_json::to_string(&e).unwrap(),
            r#"{"ns":"program","label":"die","payload":[5,5]}"#
        );
        let n = Event::ctx_ended("Kitchen", "1");
        assert_eq!(n.ended_target(), Some(("Kitchen", "1")));
        assert!(n.to_string().starts_with("CTX.Ended("));
    }

    fn arb_event() -> impl Strategy<Value = Event> {
        (prop::sample::select(vec!["a", "b", "c"]), 0i64..4)
            .prop_map(|(l, p)| Event::new(l, p))
    }

    fn arb_set() -> impl Strategy<Value = EventSet> {
        let leaf = prop_oneof![
            Just(EventSet::All),
            Just(EventSet::None),
            prop::collection::btree_set(arb_event(), 0..4).prop_map(EventSet::Explicit),
            prop::sample::select(vec!["a", "b", "c"]).prop_map(EventSet::label),
            prop::sample::select(vec!["a", "b"]).prop_map(|l| EventSet::label_where(l, "even")),
        ];
        leaf.prop_recursive(3, 16, 3, |inner| {
            prop_oneof![
                inner.clone().prop_map(EventSet::complement),
                prop::collection::vec(inner, 0..3).prop_map(EventSet::Union),
            ]
        })
    }

    proptest! {
        #[test]
        fn double_complement_is_identity(set in arb_set(), e in arb_event()) {
            let r = reg();
            let cc = EventSet::complement(EventSet::complement(set.clone()));
            prop_assert_eq!(cc.matches(&e, &r).unwrap(), set.matches(&e, &r).unwrap());
        }

        #[test]
        fn de_morgan(a in arb_set(), b in arb_set(), e in arb_event()) {
            let r = reg();
            let lhs = EventSet::complement(EventSet::union([a.clone(), b.clone()]));
            let rhs_a = EventSet::complement(a).matches(&e, &r).unwrap();
            let rhs_b = EventSet::complement(b).matches(&e, &r).unwrap();
            prop_assert_eq!(lhs.matches(&e, &r).unwrap(), rhs_a && rhs_b);
        }

        #[test]
        fn matches_is_pure(set in arb_set(), e in arb_event()) {
            let r = reg();
            prop_assert_eq!(set.matches(&e, &r).unwrap(), set.matches(&e, &r).unwrap());
        }

        #[test]
        fn selected_events_are_requested_and_unblocked(
            stmts in prop::collection::vec(
                (prop::collection::vec(arb_event(), 0..3), arb_set()), 0..4)
        ) {
            let r = reg();
            let stmts: Vec<SyncStatement> = stmts
                .into_iter()
                .map(|(req, blk)| SyncStatement::new().request_all(req).block(blk))
                .collect();
            let refs: Vec<&SyncStatement> = stmts.iter().collect();
            for e in selectable(&refs, &r).unwrap() {
                prop_assert!(stmts.iter().any(|s| s.requested().contains(&e)));
                prop_assert!(stmts.iter().all(|s| !s.blocked().matches(&e, &r).unwrap()));
            }
        }
    }
}
