//! Hot-cold per room: every room with taps pours after its button is
//! pushed, and kitchens interleave the two kinds of pours.

use std::collections::BTreeSet;

use crate::behavior::{CbtDefinition, StepOutcome};
use crate::context::{ContextStore, Query, QueryResult};
use crate::engine::Program;
use crate::error::{CobpError, Result};
use crate::events::{Event, EventSet, SyncStatement};
use crate::value::Value;

use super::hot_cold::POURS;

pub const ROOM_TYPES: &[&str] = &["kitchen", "bathroom", "bedroom", "living room", "hall"];

fn room_id(seed: &QueryResult) -> Result<i64, String> {
    seed.get("id")
        .and_then(Value::as_int)
        .ok_or_else(|| format!("room seed '{}' has no integer id", seed.key))
}

pub fn push(room: i64) -> Event {
    Event::new("Push", room)
}

pub fn cold(room: i64) -> Event {
    Event::new("Cold", room)
}

pub fn hot(room: i64) -> Event {
    Event::new("Hot", room)
}

/// Idle until the room's button is pushed, then pour three times and go
/// back to idle. State 0 is idle, state k is "about to pour for the k-th
/// time".
fn pour_on_push(name: &str, make: fn(i64) -> Event) -> CbtDefinition {
    CbtDefinition::new(name, "RoomWithTaps", 0, move |i| {
        let room = room_id(i.seed)?;
        let next = match (i.state.as_int().unwrap_or(0), i.last_event) {
            (_, None) => 0,
            (0, Some(_)) => 1,
            (k, Some(_)) if k >= POURS => 0,
            (k, Some(_)) => k + 1,
        };
        let stmt = if next == 0 {
            SyncStatement::new().wait_for(EventSet::event(push(room)))
        } else {
            SyncStatement::new().request(make(room))
        };
        Ok(StepOutcome::sync(stmt, next))
    })
}

fn kitchen_interleave() -> CbtDefinition {
    CbtDefinition::new("Int", "Kitchen", "blockHot", |i| {
        let room = room_id(i.seed)?;
        let state = match (i.state.as_str(), i.last_event) {
            (_, None) => "blockHot",
            (Some("blockHot"), Some(e)) if *e == cold(room) => "blockCold",
            (Some("blockCold"), Some(e)) if *e == hot(room) => "blockHot",
            (s, e) => return Err(format!("resumed in {s:?} by {e:?}")),
        };
        let blocked = if state == "blockHot" { hot(room) } else { cold(room) };
        Ok(StepOutcome::sync(
            SyncStatement::new()
                .wait_for(EventSet::events([cold(room), hot(room)]))
                .block(EventSet::event(blocked)),
            state,
        ))
    })
}

/// Names of the CBTs that make up the specification (the button is part
/// of the environment).
pub const CBT_NAMES: [&str; 3] = ["Cold", "Hot", "Int"];

pub fn build(rooms: &[(i64, &str)]) -> Result<(Program, ContextStore)> {
    let mut seen = BTreeSet::new();
    let mut ctx = ContextStore::new();
    ctx.create_table("room", "id");
    for &(id, ty) in rooms {
        if !seen.insert(id) {
            return Err(CobpError::Config(format!("duplicate room id {id}")));
        }
        if !ROOM_TYPES.contains(&ty) {
            return Err(CobpError::Config(format!("unknown room type '{ty}'")));
        }
        ctx.insert(
            "room",
            [("id".to_owned(), Value::from(id)), ("type".to_owned(), Value::from(ty))].into(),
        )
        .map_err(CobpError::Config)?;
    }

    let mut p = Program::new("ext-hot-cold");
    p.repo.add_query(Query::select("RoomWithTaps", "room", |r, _, _| {
        matches!(r.get("type").and_then(Value::as_str), Some("kitchen" | "bathroom"))
    }));
    p.repo.add_query(Query::select("Kitchen", "room", |r, _, _| {
        r.get("type").and_then(Value::as_str) == Some("kitchen")
    }));
    p.add_cbt(pour_on_push("Cold", cold));
    p.add_cbt(pour_on_push("Hot", hot));
    p.add_cbt(kitchen_interleave());
    p.add_env(CbtDefinition::new("Button", "RoomWithTaps", 0, |i| {
        let room = room_id(i.seed)?;
        Ok(match i.last_event {
            None => StepOutcome::sync(SyncStatement::new().request(push(room)), 0),
            Some(_) => StepOutcome::Done,
        })
    }));
    Ok((p, ctx))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::engine::SystemState;

    #[test]
    fn three_room_init_has_five_program_copies() {
        let (p, ctx) = build(&[(1, "kitchen"), (2, "bathroom"), (3, "bedroom")]).unwrap();
        let st = SystemState::initial(&p, ctx).unwrap();
        let ids: Vec<&str> = st
            .copy_ids()
            .filter(|id| CBT_NAMES.iter().any(|n| id.starts_with(&format!("{n}#"))))
            .collect();
        assert_eq!(ids, vec!["Cold#1", "Cold#2", "Hot#1", "Hot#2", "Int#1"]);
        assert_eq!(p.cbts.len(), 3);
    }

    #[test]
    fn duplicate_rooms_and_unknown_types_are_rejected() {
        assert!(build(&[(1, "kitchen"), (1, "bathroom")]).is_err());
        assert!(build(&[(1, "garage")]).is_err());
    }

    #[test]
    fn no_rooms_no_copies() {
        let (p, ctx) = build(&[]).unwrap();
        let st = SystemState::initial(&p, ctx).unwrap();
        assert_eq!(st.copies().count(), 0);
    }

    #[test]
    fn events_display_with_room() {
        assert_eq!(cold(1).to_string(), "Cold(1)");
    }
}
