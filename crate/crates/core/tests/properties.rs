mod common;

use std::collections::{BTreeMap, BTreeSet};
use std::sync::Arc;

use cobp::engine::StepStatus;
use cobp::examples::{self, building, ext_hot_cold, hot_cold};
use cobp::verifier::{
    count_states, enumerate_maximal_traces, explore_graph, state_key, verify, Limits, Outcome,
    SearchOrder, VerifyOptions,
};
use cobp::{
    Arbiter, CbtDefinition, ContextStore, Engine, Event, EventSet, Program, Query, StepOutcome,
    SyncStatement, SystemState, UpdateCommand,
};
use common::{BThread, Bsync};
use proptest::prelude::*;

const LABELS: [&str; 3] = ["a", "b", "c"];

/// A random acyclic plain b-thread: each state requests, waits for and
/// blocks subsets of the labels and moves to a later state or finishes.
fn bthread() -> impl Strategy<Value = BThread> {
    let sync = (0u8..8, 0u8..8, 0u8..8, prop::collection::vec(0usize..4, 3));
    prop::collection::vec(sync, 1..4).prop_map(|raw| {
        let n = raw.len();
        let pick = |mask: u8| -> Vec<&'static str> {
            LABELS
                .iter()
                .enumerate()
                .filter(|(i, _)| mask >> i & 1 == 1)
                .map(|(_, l)| *l)
                .collect()
        };
        let states = raw
            .into_iter()
            .enumerate()
            .map(|(k, (req, wait, block, jumps))| {
                let next = LABELS
                    .iter()
                    .zip(jumps)
                    .map(|(l, j)| {
                        let to = k + 1 + j;
                        (*l, (to < n).then_some(to))
                    })
                    .collect();
                Bsync {
                    request: pick(req),
                    wait: pick(wait),
                    block: pick(block),
                    next,
                }
            })
            .collect();
        BThread { states }
    })
}

fn set(labels: &[&str]) -> EventSet {
    EventSet::events(labels.iter().map(|l| Event::named(*l)))
}

fn as_cbt(name: String, t: BThread) -> CbtDefinition {
    CbtDefinition::new(name, "Program", 0, move |i| {
        let at = match i.last_event {
            None => Some(0),
            Some(e) => {
                let cur = i.state.as_int().ok_or("state is not an index")? as usize;
                *t.states[cur].next.get(e.label()).ok_or("unexpected resume")?
            }
        };
        let Some(k) = at else {
            return Ok(StepOutcome::Done);
        };
        let s = &t.states[k];
        let stmt = SyncStatement::new()
            .request_all(s.request.iter().map(|l| Event::named(*l)))
            .wait_for(set(&s.wait))
            .block(set(&s.block));
        Ok(StepOutcome::sync(stmt, k as i64))
    })
}

fn program(threads: &[BThread]) -> Program {
    let mut p = Program::new("random");
    p.repo.add_query(Query::constant("Program"));
    for (i, t) in threads.iter().enumerate() {
        p.add_cbt(as_cbt(format!("T{i}"), t.clone()));
    }
    p
}

/// Whether the plain program can reach a state where something is
/// requested but every requested event is blocked.
fn plain_deadlocks(threads: &[BThread]) -> bool {
    fn go(threads: &[BThread], at: Vec<Option<usize>>) -> bool {
        let live: Vec<(usize, &Bsync)> = at
            .iter()
            .enumerate()
            .filter_map(|(i, s)| s.map(|s| (i, &threads[i].states[s])))
            .collect();
        let blocked: BTreeSet<&str> = live.iter().flat_map(|(_, b)| b.block.clone()).collect();
        let requested: BTreeSet<&str> = live.iter().flat_map(|(_, b)| b.request.clone()).collect();
        let selectable: Vec<&str> = requested.iter().copied().filter(|e| !blocked.contains(e)).collect();
        if selectable.is_empty() {
            return !requested.is_empty();
        }
        selectable.into_iter().any(|e| {
            let mut next = at.clone();
            for &(i, b) in &live {
                if b.request.contains(&e) || b.wait.contains(&e) {
                    next[i] = b.next[e];
                }
            }
            go(threads, next)
        })
    }
    go(threads, threads.iter().map(|_| Some(0)).collect())
}

fn labels(t: &[Event]) -> Vec<String> {
    t.iter().map(|e| e.label().to_owned()).collect()
}

fn limits() -> Limits {
    Limits::new(100_000, 1_000).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(128))]

    #[test]
    fn context_free_programs_match_plain_behavioral_programming(
        threads in prop::collection::vec(bthread(), 1..4)
    ) {
        let p = program(&threads);
        let ours: BTreeSet<Vec<String>> = enumerate_maximal_traces(&p, ContextStore::new(), limits())
            .unwrap()
            .iter()
            .map(|t| labels(t))
            .collect();
        prop_assert_eq!(ours, common::plain_traces(&threads));

        let v = verify(&p, ContextStore::new(), &[], VerifyOptions::default()).unwrap();
        prop_assert_eq!(v.outcome == Outcome::Deadlock, plain_deadlocks(&threads));
        prop_assert_eq!(v.counterexample.is_some(), v.outcome == Outcome::Deadlock);
    }

    #[test]
    fn registration_order_does_not_change_state_keys(
        threads in prop::collection::vec(bthread(), 2..4),
        rotate in 0usize..3,
    ) {
        let p = program(&threads);
        let mut q = Program::new("random");
        q.repo.add_query(Query::constant("Program"));
        let mut cbts: Vec<CbtDefinition> = threads
            .iter()
            .enumerate()
            .map(|(i, t)| as_cbt(format!("T{i}"), t.clone()))
            .collect();
        let len = cbts.len();
        cbts.rotate_left(rotate % len);
        cbts.reverse();
        for c in cbts {
            q.add_cbt(c);
        }
        let a = explore_graph(&p, ContextStore::new(), limits()).unwrap();
        let b = explore_graph(&q, ContextStore::new(), limits()).unwrap();
        prop_assert_eq!(a.initial, b.initial);
        prop_assert_eq!(a.states, b.states);
        prop_assert_eq!(a.edges, b.edges);
        let va = verify(&p, ContextStore::new(), &[], VerifyOptions::default()).unwrap();
        let vb = verify(&q, ContextStore::new(), &[], VerifyOptions::default()).unwrap();
        prop_assert_eq!(va.outcome, vb.outcome);
        prop_assert_eq!(va.states_visited, vb.states_visited);
    }

    #[test]
    fn engine_runs_are_paths_of_the_explored_graph(seed in any::<u64>(), which in 0usize..3) {
        let (p, ctx) = match which {
            0 => ext_hot_cold::build(&[(1, "kitchen"), (2, "bathroom")]).unwrap(),
            1 => building::build(&building::BuildingConfig::rooms(&[(1, "office")], 1, 4)).unwrap(),
            _ => examples::robot::build(&examples::robot::delivery_world()).unwrap(),
        };
        let graph = explore_graph(&p, ctx.clone(), Limits::default()).unwrap();
        let mut eng = Engine::new(Arc::new(p), ctx, Arbiter::SeededRandom, seed).unwrap();
        let mut at = state_key(eng.state());
        prop_assert_eq!(Some(at), graph.initial);
        loop {
            let r = eng.step().unwrap();
            if r.status.is_final() {
                prop_assert_eq!(r.status, StepStatus::Quiescent);
                break;
            }
            let next = state_key(eng.state());
            let e = r.entry.selected_event.clone().unwrap();
            prop_assert!(graph.edges.contains(&(at, e, next)));
            at = next;
        }
    }

    #[test]
    fn live_copies_track_their_query(ops in prop::collection::vec((any::<bool>(), 0i64..5), 0..30)) {
        let p = Arc::new(watcher());
        let mut ctx = ContextStore::new();
        ctx.create_table("item", "id");
        let mut eng = Engine::new(Arc::clone(&p), ctx, Arbiter::FirstLexicographic, 0).unwrap();
        for (add, id) in ops {
            eng.enqueue_external(Event::new(if add { "add" } else { "remove" }, id)).unwrap();
        }
        loop {
            let r = eng.step().unwrap();
            let st = eng.state();
            if st.pending_notices().is_empty() {
                let rows: BTreeSet<String> = st.ctx().rows("item").map(|(k, _)| format!("Watcher#{k}")).collect();
                let live: BTreeSet<String> = st.copy_ids().map(str::to_owned).collect();
                prop_assert_eq!(live, rows);
            }
            if r.status.is_final() {
                prop_assert_eq!(r.status, StepStatus::Quiescent);
                break;
            }
        }
    }
}

/// One interruptible copy per row of `item`, each waiting forever.
fn watcher() -> Program {
    let mut p = Program::new("watcher");
    p.repo.add_query(Query::select("Items", "item", |_, _, _| true));
    p.repo.add_update(UpdateCommand::new("Add", |ctx, id| {
        let key = cobp::context::key_string(id);
        if ctx.get("item", &key).is_none() {
            ctx.insert("item", [("id".to_owned(), id.clone())].into())?;
        }
        Ok(())
    }));
    p.repo.add_update(UpdateCommand::new("Remove", |ctx, id| {
        ctx.remove("item", &cobp::context::key_string(id)).map(drop)
    }));
    p.effects.forward("add", "Add").forward("remove", "Remove");
    p.add_cbt(
        CbtDefinition::once("Watcher", "Items", |_, _| {
            SyncStatement::new().wait_for(EventSet::event(Event::named("never")))
        })
        .interruptible(),
    );
    p
}

#[test]
fn breadth_first_verdicts_do_not_depend_on_workers() {
    for name in ["hotcold-interleave", "gol-dance-buggy", "robot-corner", "smart-building-emergency"] {
        let ex = examples::build(name).unwrap();
        let run = |order, workers| {
            let opts = VerifyOptions {
                order,
                workers,
                ..Default::default()
            };
            verify(&ex.program, ex.ctx_init.clone(), &ex.assertions, opts).unwrap()
        };
        let one = run(SearchOrder::Bfs, 1);
        for workers in [2, 4] {
            let many = run(SearchOrder::Bfs, workers);
            assert_eq!(one.outcome, many.outcome, "{name}");
            assert_eq!(one.states_visited, many.states_visited, "{name}");
            assert_eq!(one.counterexample, many.counterexample, "{name}");
        }
        assert_eq!(one.outcome, run(SearchOrder::Dfs, 0).outcome, "{name}");
    }
}

#[test]
fn hot_cold_state_counts_match_product_oracle() {
    // reachable (cold left, hot left) pairs, plus the interleaver's phase
    let base: BTreeSet<(u8, u8)> = (0..=3).flat_map(|c| (0..=3).map(move |h| (c, h))).collect();
    let (p, ctx) = hot_cold::build(false);
    assert_eq!(count_states(&p, ctx, limits()).unwrap(), base.len());

    let mut inter = BTreeSet::new();
    let mut frontier = vec![(3u8, 3u8, false)];
    while let Some(s @ (c, h, hot_turn)) = frontier.pop() {
        if inter.insert(s) {
            if !hot_turn && c > 0 {
                frontier.push((c - 1, h, true));
            }
            if hot_turn && h > 0 {
                frontier.push((c, h - 1, false));
            }
        }
    }
    let (p, ctx) = hot_cold::build(true);
    assert_eq!(count_states(&p, ctx.clone(), limits()).unwrap(), inter.len());
    let v = verify(&p, ctx, &[], VerifyOptions::default()).unwrap();
    assert_eq!((v.outcome, v.states_visited), (Outcome::Ok, inter.len()));
}

#[test]
fn empty_program_has_one_state() {
    let p = Program::new("empty");
    assert_eq!(count_states(&p, ContextStore::new(), limits()).unwrap(), 1);
    let st = SystemState::initial(&p, ContextStore::new()).unwrap();
    assert_eq!(st.copies().count(), 0);
}

#[test]
fn zero_limits_are_rejected() {
    assert!(Limits::new(0, 10).is_err());
    assert!(Limits::new(10, 0).is_err());
}

#[test]
fn extended_hot_cold_scales_copies_not_definitions() {
    let mut counts = BTreeMap::new();
    for n in [1i64, 5, 10] {
        let rooms: Vec<(i64, &str)> = (0..n)
            .map(|i| (i, "bathroom"))
            .chain((0..n).map(|i| (100 + i, "kitchen")))
            .collect();
        let (p, ctx) = ext_hot_cold::build(&rooms).unwrap();
        let st = SystemState::initial(&p, ctx).unwrap();
        counts.insert(n, (p.cbts.len(), st.copies().filter(|c| c.cbt_name() != "Button").count()));
    }
    assert_eq!(counts[&1], (3, 5));
    assert_eq!(counts[&10], (3, 50));
}

#[test]
fn trace_jsonl_round_trips() {
    let ex = examples::build("gol").unwrap();
    let mut eng = Engine::new(Arc::clone(&ex.program), ex.ctx_init.clone(), Arbiter::SeededRandom, 9).unwrap();
    let trace = eng.run(1000).unwrap();
    let text = trace.to_jsonl();
    assert_eq!(cobp::Trace::from_jsonl(&text).unwrap(), trace);
    let first: serde_json::Value = serde_json::from_str(text.lines().next().unwrap()).unwrap();
    assert_eq!(first["status"], "init");
    assert!(first.get("ctxDigest").is_some());
}
