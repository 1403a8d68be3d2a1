//! A robot on an occupancy grid that wanders while avoiding walls, with
//! optional delivery and recharging behaviour.
//!
//! Moves are unit steps forward or quarter turns in place. A lidar in the
//! environment scans after every move and the scan's effect refreshes the
//! robot's obstacle distances.

use std::collections::{BTreeSet, HashMap, VecDeque};
use std::sync::Arc;

use crate::behavior::{CbtDefinition, StepOutcome};
use crate::context::{key_string, ContextStore, Query, QueryResult, Record, UpdateCommand};
use crate::engine::Program;
use crate::error::{CobpError, Result};
use crate::events::{Event, EventSet, SyncStatement};
use crate::value::Value;
use crate::verifier::Assertion;

pub type Cell = (i64, i64);
/// A cell and a heading.
type Pose = (Cell, i64);

pub const ROBOT_ID: &str = "r1";
/// Obstacle distances are reported up to this many cells.
pub const SCAN_RANGE: i64 = 9;
/// Minimum free cells towards a direction for the move to be allowed.
pub const MIN_DIST: i64 = 1;

const MOVES: [&str; 3] = ["forward", "left", "right"];

/// Headings 0..4 are north, east, south, west.
fn delta(heading: i64) -> Cell {
    match heading.rem_euclid(4) {
        0 => (-1, 0),
        1 => (0, 1),
        2 => (1, 0),
        _ => (0, -1),
    }
}

fn turn(heading: i64, m: &str) -> i64 {
    match m {
        "left" => (heading + 3) % 4,
        "right" => (heading + 1) % 4,
        _ => heading,
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Grid {
    pub rows: i64,
    pub cols: i64,
    pub walls: BTreeSet<Cell>,
}

impl Grid {
    /// `#` is a wall, anything else is free.
    pub fn parse(text: &str) -> Result<Grid> {
        let lines: Vec<&str> = text.lines().map(str::trim).filter(|l| !l.is_empty()).collect();
        let cols = lines.first().map_or(0, |l| l.len());
        if lines.is_empty() || lines.iter().any(|l| l.len() != cols) {
            return Err(CobpError::Config("grid must be a nonempty rectangle".into()));
        }
        let walls = lines
            .iter()
            .enumerate()
            .flat_map(|(r, l)| {
                l.bytes()
                    .enumerate()
                    .filter(|&(_, b)| b == b'#')
                    .map(move |(c, _)| (r as i64, c as i64))
            })
            .collect();
        Ok(Grid {
            rows: lines.len() as i64,
            cols: cols as i64,
            walls,
        })
    }

    pub fn is_wall(&self, (r, c): Cell) -> bool {
        r < 0 || c < 0 || r >= self.rows || c >= self.cols || self.walls.contains(&(r, c))
    }

    /// Free cells from `pos` towards `heading`, capped at the scan range.
    pub fn distance(&self, pos: Cell, heading: i64) -> i64 {
        let (dr, dc) = delta(heading);
        let mut n = 0;
        while n < SCAN_RANGE && !self.is_wall((pos.0 + dr * (n + 1), pos.1 + dc * (n + 1))) {
            n += 1;
        }
        n
    }

    pub fn scan(&self, pos: Cell, heading: i64) -> (i64, i64, i64) {
        (
            self.distance(pos, heading),
            self.distance(pos, turn(heading, "left")),
            self.distance(pos, turn(heading, "right")),
        )
    }

    /// Moves allowed by the avoidance rules in a pose.
    fn allowed(&self, pos: Cell, heading: i64) -> impl Iterator<Item = &'static str> {
        let (a, l, r) = self.scan(pos, heading);
        MOVES
            .into_iter()
            .zip([a, l, r])
            .filter(|&(_, d)| d >= MIN_DIST)
            .map(|(m, _)| m)
    }

    /// Shortest move sequence from a pose to `goal`, honouring the
    /// avoidance rules. `None` when unreachable.
    pub fn path(&self, pos: Cell, heading: i64, goal: Cell) -> Option<Vec<&'static str>> {
        let start = (pos, heading);
        let mut prev: HashMap<Pose, (Pose, &'static str)> = HashMap::new();
        let mut queue = VecDeque::from([start]);
        let mut seen = BTreeSet::from([start]);
        while let Some((p, h)) = queue.pop_front() {
            if p == goal {
                let mut moves = Vec::new();
                let mut cur = (p, h);
                while let Some(&(from, m)) = prev.get(&cur) {
                    moves.push(m);
                    cur = from;
                }
                moves.reverse();
                return Some(moves);
            }
            for m in self.allowed(p, h) {
                let next = apply_move(p, h, m);
                if seen.insert(next) {
                    prev.insert(next, ((p, h), m));
                    queue.push_back(next);
                }
            }
        }
        None
    }
}

fn apply_move(pos: Cell, heading: i64, m: &str) -> (Cell, i64) {
    if m == "forward" {
        let (dr, dc) = delta(heading);
        ((pos.0 + dr, pos.1 + dc), heading)
    } else {
        (pos, turn(heading, m))
    }
}

pub fn move_event(m: &str) -> Event {
    Event::new("move", m)
}

pub fn scan_event((a, l, r): (i64, i64, i64)) -> Event {
    Event::new(
        "scan",
        Value::map([("a", a.into()), ("l", l.into()), ("r", r.into())]),
    )
}

pub fn new_target(id: &str, pos: Cell, kind: &str) -> Event {
    Event::new(
        "newTarget",
        Value::map([
            ("id", id.into()),
            ("pos", Value::cell(pos.0, pos.1)),
            ("kind", kind.into()),
        ]),
    )
}

pub fn target_reached(id: &str) -> Event {
    Event::new("targetReached", id)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Battery {
    pub level: i64,
    pub capacity: i64,
    /// Levels in `1..=low` count as low.
    pub low: i64,
    pub socket: Option<Cell>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Delivery {
    pub id: String,
    pub source: Cell,
    pub target: Cell,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RobotWorld {
    pub grid: Grid,
    pub start: Cell,
    pub heading: i64,
    pub battery: Option<Battery>,
    pub deliveries: Vec<Delivery>,
}

/// A 10x10 room with a pillar in the middle and no dead ends.
pub fn open_world() -> RobotWorld {
    let grid = Grid::parse(
        "##########
         #........#
         #........#
         #........#
         #...##...#
         #...##...#
         #........#
         #........#
         #........#
         ##########",
    )
    .expect("valid grid");
    RobotWorld {
        grid,
        start: (1, 1),
        heading: 1,
        battery: None,
        deliveries: Vec::new(),
    }
}

/// A one-cell-wide corridor; driving to its end leaves no allowed move.
pub fn corner_world() -> RobotWorld {
    let grid = Grid::parse(
        "#######
         #.....#
         #######",
    )
    .expect("valid grid");
    RobotWorld {
        grid,
        start: (1, 1),
        heading: 1,
        battery: None,
        deliveries: Vec::new(),
    }
}

/// A 3x3 room with one delivery and just enough battery for it plus a
/// little wandering.
pub fn delivery_world() -> RobotWorld {
    let grid = Grid::parse(
        "#####
         #...#
         #...#
         #...#
         #####",
    )
    .expect("valid grid");
    RobotWorld {
        grid,
        start: (1, 1),
        heading: 1,
        battery: Some(Battery {
            level: 6,
            capacity: 6,
            low: 0,
            socket: None,
        }),
        deliveries: vec![Delivery {
            id: "d1".into(),
            source: (1, 3),
            target: (3, 3),
        }],
    }
}

fn robot_pose(r: &Record) -> Option<(Cell, i64)> {
    Some((
        (r.get("row")?.as_int()?, r.get("col")?.as_int()?),
        r.get("heading")?.as_int()?,
    ))
}

fn robot_record(ctx: &ContextStore) -> Result<&Record, String> {
    ctx.get("robot", ROBOT_ID)
        .ok_or_else(|| format!("no robot '{ROBOT_ID}' in context"))
}

fn field_below(field: &'static str) -> impl Fn(&Record, &ContextStore, &crate::value::Map) -> bool {
    move |r, _, _| r.get(field).and_then(Value::as_int).is_some_and(|d| d < MIN_DIST)
}

fn target_id(seed: &QueryResult) -> String {
    seed.key.clone()
}

pub fn context(world: &RobotWorld) -> Result<ContextStore> {
    if world.grid.is_wall(world.start) {
        return Err(CobpError::Config(format!(
            "robot start {:?} is occupied",
            world.start
        )));
    }
    let (a, l, r) = world.grid.scan(world.start, world.heading);
    let mut robot: Record = [
        ("id", Value::from(ROBOT_ID)),
        ("row", world.start.0.into()),
        ("col", world.start.1.into()),
        ("heading", world.heading.into()),
        ("oAhead", a.into()),
        ("oLeft", l.into()),
        ("oRight", r.into()),
    ]
    .into_iter()
    .map(|(k, v)| (k.to_owned(), v))
    .collect();
    if let Some(b) = world.battery {
        robot.insert("battery".into(), b.level.into());
    }
    let mut ctx = ContextStore::new();
    ctx.create_table("robot", "id");
    ctx.create_table("target", "id");
    ctx.create_table("delivery", "id");
    ctx.insert("robot", robot).map_err(CobpError::Config)?;
    for d in &world.deliveries {
        ctx.insert(
            "delivery",
            [
                ("id".to_owned(), Value::from(d.id.as_str())),
                ("source".to_owned(), Value::cell(d.source.0, d.source.1)),
                ("target".to_owned(), Value::cell(d.target.0, d.target.1)),
            ]
            .into(),
        )
        .map_err(CobpError::Config)?;
    }
    Ok(ctx)
}

fn avoid(name: &str, query: &'static str, m: &'static str) -> CbtDefinition {
    CbtDefinition::new(name, query, 0, move |i| {
        Ok(match i.last_event {
            None => StepOutcome::sync(
                SyncStatement::new()
                    .block(EventSet::event(move_event(m)))
                    .wait_for(EventSet::ended(query, &i.seed.key)),
                0,
            ),
            Some(_) => StepOutcome::Done,
        })
    })
}

pub fn build(world: &RobotWorld) -> Result<(Program, ContextStore)> {
    let ctx = context(world)?;
    let grid = Arc::new(world.grid.clone());
    let battery = world.battery;
    let mut p = Program::new("robot");

    p.repo.add_query(Query::select("Robot", "robot", |_, _, _| true));
    p.repo.add_query(Query::select("ActiveRobot", "robot", |r, _, _| {
        r.get("battery").and_then(Value::as_int).is_none_or(|b| b > 0)
    }));
    p.repo
        .add_query(Query::select("ObstacleAhead", "robot", field_below("oAhead")));
    p.repo
        .add_query(Query::select("ObstacleLeft", "robot", field_below("oLeft")));
    p.repo
        .add_query(Query::select("ObstacleRight", "robot", field_below("oRight")));
    let low = battery.map_or(0, |b| b.low);
    p.repo.add_query(Query::select("LowBattery", "robot", move |r, _, _| {
        r.get("battery")
            .and_then(Value::as_int)
            .is_some_and(|b| b > 0 && b <= low)
    }));
    p.repo.add_query(Query::select("Target", "target", |_, _, _| true));
    p.repo.add_query(Query::select("Delivery", "delivery", |_, _, _| true));

    p.repo.add_update(UpdateCommand::new("SetObstacles", |ctx, args| {
        let keys: Vec<String> = ctx.rows("robot").map(|(k, _)| k.to_owned()).collect();
        for k in keys {
            for (arg, field) in [("a", "oAhead"), ("l", "oLeft"), ("r", "oRight")] {
                let v = args.get(arg).cloned().ok_or(format!("scan lacks '{arg}'"))?;
                ctx.set_field("robot", &k, field, v)?;
            }
        }
        Ok(())
    }));
    p.repo.add_update(UpdateCommand::new("MoveRobot", |ctx, args| {
        let m = args.as_str().ok_or("move needs a direction")?;
        let r = robot_record(ctx)?;
        let (pos, h) = robot_pose(r).ok_or("robot row lacks a pose")?;
        let battery = r.get("battery").and_then(Value::as_int);
        let ((row, col), heading) = apply_move(pos, h, m);
        ctx.set_field("robot", ROBOT_ID, "row", row.into())?;
        ctx.set_field("robot", ROBOT_ID, "col", col.into())?;
        ctx.set_field("robot", ROBOT_ID, "heading", heading.into())?;
        if let Some(b) = battery {
            ctx.set_field("robot", ROBOT_ID, "battery", (b - 1).max(0).into())?;
        }
        Ok(())
    }));
    p.repo.add_update(UpdateCommand::new("NewTarget", |ctx, args| {
        let row = args.as_map().ok_or("target must be a record")?.clone();
        ctx.insert("target", row).map(drop)
    }));
    p.repo.add_update(UpdateCommand::new("TargetReached", move |ctx, args| {
        let id = key_string(args);
        let removed = ctx.remove("target", &id)?.ok_or(format!("no target '{id}'"))?;
        if removed.get("kind").and_then(Value::as_str) == Some("socket") {
            if let Some(b) = battery {
                ctx.set_field("robot", ROBOT_ID, "battery", b.capacity.into())?;
            }
        }
        Ok(())
    }));
    p.effects
        .forward("scan", "SetObstacles")
        .forward("move", "MoveRobot")
        .forward("newTarget", "NewTarget")
        .forward("targetReached", "TargetReached");

    p.add_cbt(
        CbtDefinition::new("Movement", "ActiveRobot", 0, |_| {
            Ok(StepOutcome::sync(
                SyncStatement::new().request_all(MOVES.map(move_event)),
                0,
            ))
        })
        .interruptible(),
    );
    p.add_cbt(avoid("Avoid obstacles: ahead", "ObstacleAhead", "forward"));
    p.add_cbt(avoid("Avoid obstacles: left", "ObstacleLeft", "left"));
    p.add_cbt(avoid("Avoid obstacles: right", "ObstacleRight", "right"));

    if let Some(socket) = battery.and_then(|b| b.socket) {
        p.add_cbt(CbtDefinition::once("GoToPowerSocket", "LowBattery", move |_, _| {
            SyncStatement::new().request(new_target("socket", socket, "socket"))
        }));
    }
    if !world.deliveries.is_empty() {
        p.add_cbt(CbtDefinition::new("Deliver", "Delivery", 0, |i| {
            let leg = |field: &str| -> Result<(String, Cell), String> {
                let pos = i
                    .seed
                    .get(field)
                    .and_then(Value::as_cell)
                    .ok_or(format!("delivery lacks '{field}'"))?;
                Ok((format!("{}:{field}", i.seed.key), pos))
            };
            let k = i.state.as_int().unwrap_or(0) + i64::from(i.last_event.is_some());
            let stmt = match k {
                0 => {
                    let (id, pos) = leg("source")?;
                    SyncStatement::new().request(new_target(&id, pos, "pickup"))
                }
                1 => SyncStatement::new().wait_for(EventSet::ended("Target", &leg("source")?.0)),
                2 => {
                    let (id, pos) = leg("target")?;
                    SyncStatement::new().request(new_target(&id, pos, "dropoff"))
                }
                3 => SyncStatement::new().wait_for(EventSet::ended("Target", &leg("target")?.0)),
                _ => return Ok(StepOutcome::Done),
            };
            Ok(StepOutcome::sync(stmt, k))
        }));
    }
    if !world.deliveries.is_empty() || battery.is_some_and(|b| b.socket.is_some()) {
        let grid = Arc::clone(&grid);
        p.add_cbt(CbtDefinition::new("GoToTarget", "Target", 0, move |i| {
            if i.last_event.is_some_and(|e| e.label() == "targetReached") {
                return Ok(StepOutcome::Done);
            }
            let goal = i
                .seed
                .get("pos")
                .and_then(Value::as_cell)
                .ok_or("target lacks a position")?;
            let (pos, h) = robot_record(i.ctx).and_then(|r| robot_pose(r).ok_or("no pose".into()))?;
            let path = grid
                .path(pos, h, goal)
                .ok_or_else(|| format!("target {goal:?} is unreachable"))?;
            let stmt = match path.first() {
                // stay put until the arrival is recorded
                None => SyncStatement::new()
                    .request(target_reached(&target_id(i.seed)))
                    .block(EventSet::label("move")),
                Some(&m) => SyncStatement::new()
                    .block(EventSet::label("move").difference(EventSet::event(move_event(m))))
                    .wait_for(EventSet::event(move_event(m))),
            };
            Ok(StepOutcome::sync(stmt, 0))
        }));
    }

    let lidar_grid = Arc::clone(&grid);
    p.add_env(CbtDefinition::new("Lidar", "Robot", 0, move |i| {
        let scanned = i.last_event.is_some_and(|e| e.label() == "scan");
        Ok(if scanned {
            StepOutcome::sync(SyncStatement::new().wait_for(EventSet::label("move")), 1)
        } else {
            let (pos, h) = robot_pose(robot_record(i.ctx)?).ok_or("robot row lacks a pose")?;
            StepOutcome::sync(
                SyncStatement::new()
                    .request(scan_event(lidar_grid.scan(pos, h)))
                    .block(EventSet::label("move")),
                0,
            )
        })
    }));
    Ok((p, ctx))
}

/// The robot's current cell.
pub fn robot_cell(ctx: &ContextStore) -> Option<Cell> {
    pose(ctx).map(|(p, _)| p)
}

/// The robot's cell and heading.
pub fn pose(ctx: &ContextStore) -> Option<(Cell, i64)> {
    robot_pose(ctx.get("robot", ROBOT_ID)?)
}

pub fn wall_assertion(grid: Grid) -> Assertion {
    Assertion::new("robot-off-walls", move |st, _| {
        robot_cell(st.ctx()).is_some_and(|c| !grid.is_wall(c))
    })
}
