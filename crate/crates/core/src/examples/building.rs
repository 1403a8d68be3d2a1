//! A smart building: lights and air-conditioners follow room occupancy,
//! occupancy follows motion and a simulated clock, emergencies keep lights
//! on, and workers are announced when they badge into a room.

use std::collections::{BTreeMap, BTreeSet};

use crate::behavior::{CbtDefinition, StepOutcome};
use crate::context::{key_string, ContextStore, Query, QueryResult, Record, UpdateCommand};
use crate::engine::Program;
use crate::error::{CobpError, Result};
use crate::events::{Event, EventSet, SyncStatement};
use crate::value::{Map, Value};
use crate::verifier::Assertion;

pub const ROOM_TYPES: &[&str] = &["office", "kitchen", "restroom"];
/// Simulated seconds per clock tick.
pub const TICK_SECONDS: i64 = 60;
/// A room with no movement for longer than this is considered empty.
pub const EMPTY_AFTER_SECONDS: i64 = 3 * 60;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Worker {
    pub id: String,
    pub name: String,
    /// The room this worker badges into (and later out of).
    pub visits: i64,
}

/// Emergency raised after `start` clock ticks and cleared after `end`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct EmergencyScript {
    pub start: u32,
    pub end: u32,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BuildingConfig {
    pub rooms: Vec<(i64, String)>,
    pub workers: Vec<Worker>,
    pub emergency: Option<EmergencyScript>,
    /// Clock ticks simulated.
    pub ticks: u32,
    /// Motion detections simulated per room.
    pub moves: u32,
}

impl BuildingConfig {
    pub fn rooms(rooms: &[(i64, &str)], moves: u32, ticks: u32) -> Self {
        BuildingConfig {
            rooms: rooms.iter().map(|&(id, t)| (id, t.to_owned())).collect(),
            workers: Vec::new(),
            emergency: None,
            ticks,
            moves,
        }
    }
}

fn device_event(label: &str, room: i64, device: &str) -> Event {
    Event::new(
        label,
        Value::map([("room", room.into()), ("device", device.into())]),
    )
}

pub fn on(room: i64, device: &str) -> Event {
    device_event("on", room, device)
}

pub fn off(room: i64, device: &str) -> Event {
    device_event("off", room, device)
}

pub fn motion(room: i64) -> Event {
    Event::new("motionDetected", room)
}

pub fn room_is_empty(room: i64) -> Event {
    Event::new("roomIsEmpty", room)
}

pub fn room_is_nonempty(room: i64) -> Event {
    Event::new("roomIsNonempty", room)
}

pub fn clock_tick() -> Event {
    Event::named("clockTick")
}

fn worker_room(worker: &str, room: i64) -> Value {
    Value::map([("worker", worker.into()), ("room", room.into())])
}

fn seed_int(seed: &QueryResult, field: &str) -> Result<i64, String> {
    seed.get(field)
        .and_then(Value::as_int)
        .ok_or_else(|| format!("seed '{}' lacks integer '{field}'", seed.key))
}

fn seed_str<'a>(seed: &'a QueryResult, field: &str) -> Result<&'a str, String> {
    seed.get(field)
        .and_then(Value::as_str)
        .ok_or_else(|| format!("seed '{}' lacks string '{field}'", seed.key))
}

fn now(ctx: &ContextStore) -> i64 {
    ctx.field("clock", "clock", "now")
        .and_then(Value::as_int)
        .unwrap_or(0)
}

fn is_type(r: &Record, ty: &str) -> bool {
    r.get("type").and_then(Value::as_str) == Some(ty)
}

fn flag(r: &Record, field: &str, v: i64) -> bool {
    r.get(field).and_then(Value::as_int) == Some(v)
}

pub fn context(cfg: &BuildingConfig) -> Result<ContextStore> {
    let mut ctx = ContextStore::new();
    for (table, key) in [
        ("room", "id"),
        ("clock", "id"),
        ("emergency", "id"),
        ("worker", "id"),
    ] {
        ctx.create_table(table, key);
    }
    let mut ids = BTreeSet::new();
    for (id, ty) in &cfg.rooms {
        if !ROOM_TYPES.contains(&ty.as_str()) {
            return Err(CobpError::Config(format!("unknown room type '{ty}'")));
        }
        if !ids.insert(*id) {
            return Err(CobpError::Config(format!("duplicate room id {id}")));
        }
        let row: Record = [
            ("id", Value::from(*id)),
            ("type", ty.as_str().into()),
            ("isEmpty", 1.into()),
            ("lastMovement", 0.into()),
        ]
        .into_iter()
        .map(|(k, v)| (k.to_owned(), v))
        .collect();
        ctx.insert("room", row).map_err(CobpError::Config)?;
    }
    for w in &cfg.workers {
        if !ids.contains(&w.visits) {
            return Err(CobpError::Config(format!(
                "worker '{}' visits unknown room {}",
                w.id, w.visits
            )));
        }
        let row: Record = [
            ("id", Value::from(w.id.as_str())),
            ("name", w.name.as_str().into()),
            ("room", Value::Null),
        ]
        .into_iter()
        .map(|(k, v)| (k.to_owned(), v))
        .collect();
        ctx.insert("worker", row).map_err(CobpError::Config)?;
    }
    ctx.insert(
        "clock",
        [
            ("id".to_owned(), Value::from("clock")),
            ("now".to_owned(), Value::from(0)),
        ]
        .into(),
    )
    .map_err(CobpError::Config)?;
    Ok(ctx)
}

fn room_arg(args: &Value) -> Result<String, String> {
    if args.as_int().is_none() {
        return Err(format!("expected a room id, got {args}"));
    }
    Ok(key_string(args))
}

fn add_repository(p: &mut Program) {
    let repo = &mut p.repo;
    repo.add_query(Query::constant("Building"));
    repo.add_query(Query::select("Room", "room", |_, _, _| true));
    repo.add_query(Query::select("Office", "room", |r, _, _| is_type(r, "office")));
    repo.add_query(Query::select("Emergency", "emergency", |_, _, _| true));
    repo.add_query(Query::select("EmptyRoom", "room", |r, _, _| flag(r, "isEmpty", 1)));
    repo.add_query(Query::select("NonemptyRoom", "room", |r, _, _| {
        flag(r, "isEmpty", 0)
    }));
    repo.add_query(Query::select("EmptyOffice", "room", |r, _, _| {
        is_type(r, "office") && flag(r, "isEmpty", 1)
    }));
    repo.add_query(Query::select("NonemptyOffice", "room", |r, _, _| {
        is_type(r, "office") && flag(r, "isEmpty", 0)
    }));
    repo.add_query(Query::select("NoMovement", "room", |r, ctx, params| {
        let seconds = params.get("seconds").and_then(Value::as_int).unwrap_or(0);
        let last = r.get("lastMovement").and_then(Value::as_int).unwrap_or(0);
        now(ctx) - last > seconds
    }));
    // one result per (room, active emergency)
    repo.add_query(Query::new("RoomInEmergency", |ctx, _| {
        let mut out = Vec::new();
        for (ekey, _) in ctx.rows("emergency") {
            for (rkey, room) in ctx.rows("room") {
                let rec: Record = [
                    ("room".to_owned(), room.get("id").cloned().unwrap_or_default()),
                    ("emergency".to_owned(), Value::from(ekey)),
                ]
                .into();
                out.push(QueryResult::new(format!("{rkey}/{ekey}"), rec));
            }
        }
        out
    }));
    repo.add_query(Query::select("Worker", "worker", |_, _, _| true));
    repo.add_query(Query::select("WorkerInARoom", "worker", |r, _, _| {
        r.get("room").is_some_and(|v| !v.is_null())
    }));

    repo.add_update(UpdateCommand::new("RoomIsEmpty", |ctx, args| {
        ctx.set_field("room", &room_arg(args)?, "isEmpty", 1.into())
    }));
    repo.add_update(UpdateCommand::new("RoomIsNonempty", |ctx, args| {
        ctx.set_field("room", &room_arg(args)?, "isEmpty", 0.into())
    }));
    repo.add_update(UpdateCommand::new("UpdateMovement", |ctx, args| {
        let t = now(ctx);
        ctx.set_field("room", &room_arg(args)?, "lastMovement", t.into())
    }));
    repo.add_update(UpdateCommand::new("AdvanceClock", |ctx, args| {
        let dt = args.as_int().ok_or("clock advance needs seconds")?;
        let t = now(ctx) + dt;
        ctx.set_field("clock", "clock", "now", t.into())
    }));
    repo.add_update(UpdateCommand::new("StartEmergency", |ctx, args| {
        ctx.insert("emergency", [("id".to_owned(), args.clone())].into())
            .map(drop)
    }));
    repo.add_update(UpdateCommand::new("EndEmergency", |ctx, args| {
        ctx.remove("emergency", &key_string(args)).map(drop)
    }));
    repo.add_update(UpdateCommand::new("WorkerEntered", |ctx, args| {
        let w = args.get("worker").map(key_string).ok_or("missing worker")?;
        let room = args.get("room").cloned().ok_or("missing room")?;
        ctx.set_field("worker", &w, "room", room)
    }));
    repo.add_update(UpdateCommand::new("WorkerLeft", |ctx, args| {
        ctx.set_field("worker", &key_string(args), "room", Value::Null)
    }));

    p.effects
        .forward("motionDetected", "UpdateMovement")
        .forward("roomIsEmpty", "RoomIsEmpty")
        .forward("roomIsNonempty", "RoomIsNonempty")
        .forward("emergencyStarted", "StartEmergency")
        .forward("emergencyEnded", "EndEmergency")
        .forward("workerEntered", "WorkerEntered")
        .forward("workerExited", "WorkerLeft")
        .on("clockTick", |_| {
            vec![("AdvanceClock".to_owned(), Value::from(TICK_SECONDS))]
        });
}

fn switch(name: &str, query: &str, make: fn(i64, &str) -> Event, device: &'static str) -> CbtDefinition {
    CbtDefinition::once(name, query, move |seed, _| {
        let room = seed_int(seed, "id").unwrap_or_default();
        SyncStatement::new().request(make(room, device))
    })
    .interruptible()
}

fn add_cbts(p: &mut Program) {
    p.add_cbt(switch("Light: On", "NonemptyRoom", on, "light"));
    p.add_cbt(switch("Light: Off", "EmptyRoom", off, "light"));
    p.add_cbt(switch("Air-conditioner: On", "NonemptyOffice", on, "ac"));
    p.add_cbt(switch("Air-conditioner: Off", "EmptyOffice", off, "ac"));

    p.add_cbt(CbtDefinition::new("Emergency: Lights", "RoomInEmergency", 0, |i| {
        let room = seed_int(i.seed, "room")?;
        Ok(match i.last_event {
            None => StepOutcome::sync(
                SyncStatement::new()
                    .block(EventSet::event(off(room, "light")))
                    .wait_for(EventSet::ended("RoomInEmergency", &i.seed.key)),
                0,
            ),
            Some(_) => StepOutcome::Done,
        })
    }));
    p.add_cbt(
        CbtDefinition::once("Emergency: all lights on", "RoomInEmergency", |seed, _| {
            let room = seed_int(seed, "room").unwrap_or_default();
            SyncStatement::new().request(on(room, "light"))
        })
        .interruptible(),
    );

    p.add_cbt(CbtDefinition::new("Mark room as nonempty", "EmptyRoom", 0, |i| {
        let room = seed_int(i.seed, "id")?;
        let k = i.state.as_int().unwrap_or(0) + i64::from(i.last_event.is_some());
        Ok(match k {
            0 => StepOutcome::sync(SyncStatement::new().wait_for(EventSet::event(motion(room))), 0),
            1 => StepOutcome::sync(SyncStatement::new().request(room_is_nonempty(room)), 1),
            _ => StepOutcome::Done,
        })
    }));
    let seconds: Map = [("seconds".to_owned(), Value::from(EMPTY_AFTER_SECONDS))].into();
    p.add_cbt(
        CbtDefinition::new("Mark room as empty", "NoMovement", 0, |i| {
            let room = seed_int(i.seed, "id")?;
            Ok(match i.last_event {
                None => StepOutcome::sync(
                    SyncStatement::new()
                        .request(room_is_empty(room))
                        .wait_for(EventSet::event(motion(room))),
                    0,
                ),
                Some(_) => StepOutcome::Done,
            })
        })
        .with_params(seconds),
    );

    p.add_cbt(CbtDefinition::new("Detect worker entrance", "Worker", 0, |i| {
        let w = i.seed.key.as_str();
        match i.last_event {
            Some(e) if e.label() == "badgeIn" => {
                let room = e.payload().get("room").cloned().unwrap_or_default();
                let entered = Event::new(
                    "workerEntered",
                    Value::map([("worker", w.into()), ("room", room)]),
                );
                Ok(StepOutcome::sync(SyncStatement::new().request(entered), 1))
            }
            _ => {
                let badges = i.ctx.rows("room").filter_map(|(_, r)| {
                    let room = r.get("id")?.as_int()?;
                    Some(Event::new("badgeIn", worker_room(w, room)))
                });
                Ok(StepOutcome::sync(
                    SyncStatement::new().wait_for(EventSet::events(badges)),
                    0,
                ))
            }
        }
    }));
    p.add_cbt(CbtDefinition::new("Detect worker leaving", "WorkerInARoom", 0, |i| {
        let k = i.state.as_int().unwrap_or(0) + i64::from(i.last_event.is_some());
        let w = i.seed.key.as_str();
        Ok(match k {
            0 => StepOutcome::sync(
                SyncStatement::new().wait_for(EventSet::event(Event::new("badgeOut", w))),
                0,
            ),
            1 => StepOutcome::sync(SyncStatement::new().request(Event::new("workerExited", w)), 1),
            _ => StepOutcome::Done,
        })
    }));
    p.add_cbt(
        CbtDefinition::once("AnnounceWorkerName", "WorkerInARoom", |seed, _| {
            let name = seed_str(seed, "name").unwrap_or_default();
            SyncStatement::new().request(Event::new("announce", name))
        })
        .interruptible(),
    );
}

/// Counts `times` requests of an event, then finishes.
fn repeat(name: &str, query: &str, times: u32, make: fn(&QueryResult) -> Result<Event, String>) -> CbtDefinition {
    let times = i64::from(times);
    CbtDefinition::new(name, query, 0, move |i| {
        let done = i.state.as_int().unwrap_or(0) + i64::from(i.last_event.is_some());
        Ok(if done >= times {
            StepOutcome::Done
        } else {
            StepOutcome::sync(SyncStatement::new().request(make(i.seed)?), done)
        })
    })
}

fn add_environment(p: &mut Program, cfg: &BuildingConfig) {
    p.add_env(repeat("Clock", "Building", cfg.ticks, |_| Ok(clock_tick())));
    p.add_env(repeat("Motion sensor", "Room", cfg.moves, |seed| {
        Ok(motion(seed_int(seed, "id")?))
    }));

    if let Some(script) = cfg.emergency {
        let (start, end) = (i64::from(script.start), i64::from(script.end));
        // state: (ticks seen, phase) with phase 0 before, 1 during, 2 after
        p.add_env(CbtDefinition::new("Emergency script", "Building", Value::List(vec![0.into(), 0.into()]), move |i| {
            let (mut ticks, mut phase) = match i.state.as_list() {
                Some([Value::Int(t), Value::Int(ph)]) => (*t, *ph),
                _ => return Err("bad script state".into()),
            };
            match i.last_event.map(Event::label) {
                Some("clockTick") => ticks += 1,
                Some("emergencyStarted" | "emergencyEnded") => phase += 1,
                _ => {}
            }
            let due = (phase == 0 && ticks >= start) || (phase == 1 && ticks >= end);
            let stmt = if phase >= 2 {
                return Ok(StepOutcome::Done);
            } else if due {
                let label = if phase == 0 { "emergencyStarted" } else { "emergencyEnded" };
                SyncStatement::new()
                    .request(Event::new(label, "fire-drill"))
                    .block(EventSet::event(clock_tick()))
            } else {
                SyncStatement::new().wait_for(EventSet::event(clock_tick()))
            };
            Ok(StepOutcome::sync(stmt, Value::List(vec![ticks.into(), phase.into()])))
        }));
    }

    let visits: BTreeMap<String, i64> = cfg
        .workers
        .iter()
        .map(|w| (w.id.clone(), w.visits))
        .collect();
    if !visits.is_empty() {
        p.add_env(CbtDefinition::new("Badge reader", "Worker", 0, move |i| {
            let w = i.seed.key.as_str();
            let room = *visits.get(w).ok_or_else(|| format!("no visit for '{w}'"))?;
            let k = i.state.as_int().unwrap_or(0) + i64::from(i.last_event.is_some());
            Ok(match k {
                0 => StepOutcome::sync(
                    SyncStatement::new().request(Event::new("badgeIn", worker_room(w, room))),
                    0,
                ),
                1 => StepOutcome::sync(SyncStatement::new().request(Event::new("badgeOut", w)), 1),
                _ => StepOutcome::Done,
            })
        }));
    }
}

pub fn build(cfg: &BuildingConfig) -> Result<(Program, ContextStore)> {
    let ctx = context(cfg)?;
    let mut p = Program::new("smart-building");
    add_repository(&mut p);
    add_cbts(&mut p);
    add_environment(&mut p, cfg);
    Ok((p, ctx))
}

/// No light is switched off while an emergency is active.
pub fn emergency_assertion() -> Assertion {
    Assertion::new("lights-stay-on-in-emergency", |st, last| match last {
        Some(e) if e.label() == "off" && e.payload().get("device") == Some(&Value::from("light")) => {
            st.ctx().rows("emergency").next().is_none()
        }
        _ => true,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::engine::SystemState;

    #[test]
    fn unknown_room_type_is_rejected() {
        let cfg = BuildingConfig::rooms(&[(1, "garage")], 1, 1);
        assert!(matches!(build(&cfg), Err(CobpError::Config(_))));
    }

    #[test]
    fn no_movement_binding_key_carries_its_parameter() {
        let (p, _) = build(&BuildingConfig::rooms(&[(1, "office")], 1, 1)).unwrap();
        let keys: Vec<String> = p.bindings().iter().map(|b| b.key()).collect();
        assert!(keys.contains(&r#"NoMovement{"seconds":180}"#.to_owned()));
    }

    #[test]
    fn empty_rooms_start_with_light_off_requests() {
        let (p, ctx) = build(&BuildingConfig::rooms(&[(1, "office")], 1, 1)).unwrap();
        let st = SystemState::initial(&p, ctx).unwrap();
        let req = st.requested();
        assert!(req.contains(&off(1, "light")));
        assert!(req.contains(&off(1, "ac")));
        assert!(req.contains(&motion(1)));
    }

    #[test]
    fn cbt_count_does_not_grow_with_rooms() {
        let one = build(&BuildingConfig::rooms(&[(1, "office")], 1, 1)).unwrap().0;
        let many = build(&BuildingConfig::rooms(
            &[(1, "office"), (2, "kitchen"), (3, "restroom")],
            1,
            1,
        ))
        .unwrap()
        .0;
        assert_eq!(one.cbts.len(), many.cbts.len());
    }
}
