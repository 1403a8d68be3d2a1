//! Pouring cold and hot water three times each, optionally interleaved.

use crate::behavior::{CbtDefinition, StepOutcome};
use crate::context::{ContextStore, Query};
use crate::engine::Program;
use crate::events::{Event, EventSet, SyncStatement};

pub const POURS: i64 = 3;

/// Requests `e` `times` times, then finishes. The state counts pours.
pub(crate) fn pour(name: &str, query: &str, e: Event, times: i64) -> CbtDefinition {
    CbtDefinition::new(name, query, 0, move |i| {
        let done = i.state.as_int().unwrap_or(0) + i64::from(i.last_event.is_some());
        Ok(if done >= times {
            StepOutcome::Done
        } else {
            StepOutcome::sync(SyncStatement::new().request(e.clone()), done)
        })
    })
}

/// Alternates between blocking `hot` and blocking `cold`, starting with
/// `hot` blocked so that cold water comes first.
pub(crate) fn interleave(name: &str, query: &str, cold: Event, hot: Event) -> CbtDefinition {
    CbtDefinition::new(name, query, "blockHot", move |i| {
        let state = match (i.state.as_str(), i.last_event) {
            (_, None) => "blockHot",
            (Some("blockHot"), Some(e)) if *e == cold => "blockCold",
            (Some("blockCold"), Some(e)) if *e == hot => "blockHot",
            (s, e) => return Err(format!("resumed in {s:?} by {e:?}")),
        };
        let blocked = if state == "blockHot" { &hot } else { &cold };
        Ok(StepOutcome::sync(
            SyncStatement::new()
                .wait_for(EventSet::events([cold.clone(), hot.clone()]))
                .block(EventSet::event(blocked.clone())),
            state,
        ))
    })
}

pub fn build(with_interleave: bool) -> (Program, ContextStore) {
    let name = if with_interleave {
        "hotcold-interleave"
    } else {
        "hot-cold"
    };
    let mut p = Program::new(name);
    p.repo.add_query(Query::constant("Program"));
    p.add_cbt(pour("Cold", "Program", Event::named("Cold"), POURS));
    p.add_cbt(pour("Hot", "Program", Event::named("Hot"), POURS));
    if with_interleave {
        p.add_cbt(interleave(
            "Interleave",
            "Program",
            Event::named("Cold"),
            Event::named("Hot"),
        ));
    }
    (p, ContextStore::new())
}
