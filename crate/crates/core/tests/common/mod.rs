//! Oracles written independently of the library: a plain behavioral
//! programming interpreter over labelled b-threads and a direct
//! synchronous Game of Life.

#![allow(dead_code)]

use std::collections::{BTreeMap, BTreeSet};

/// One synchronization point of a plain b-thread.
#[derive(Clone, Debug)]
pub struct Bsync {
    pub request: Vec<&'static str>,
    pub wait: Vec<&'static str>,
    pub block: Vec<&'static str>,
    /// Next state index per triggering label; `None` finishes the thread.
    pub next: BTreeMap<&'static str, Option<usize>>,
}

#[derive(Clone, Debug)]
pub struct BThread {
    pub states: Vec<Bsync>,
}

/// A b-thread that requests `label` `times` times.
pub fn repeat(label: &'static str, times: usize) -> BThread {
    let states = (0..times)
        .map(|k| Bsync {
            request: vec![label],
            wait: vec![],
            block: vec![],
            next: BTreeMap::from([(label, if k + 1 < times { Some(k + 1) } else { None })]),
        })
        .collect();
    BThread { states }
}

/// Alternates between `first` and `second`, starting with `first`.
pub fn alternate(first: &'static str, second: &'static str) -> BThread {
    BThread {
        states: vec![
            Bsync {
                request: vec![],
                wait: vec![first, second],
                block: vec![second],
                next: BTreeMap::from([(first, Some(1))]),
            },
            Bsync {
                request: vec![],
                wait: vec![first, second],
                block: vec![first],
                next: BTreeMap::from([(second, Some(0))]),
            },
        ],
    }
}

/// Every maximal run of a plain behavioral program.
pub fn plain_traces(threads: &[BThread]) -> BTreeSet<Vec<String>> {
    let mut out = BTreeSet::new();
    let start: Vec<Option<usize>> = threads.iter().map(|t| (!t.states.is_empty()).then_some(0)).collect();
    walk(threads, start, &mut Vec::new(), &mut out);
    out
}

fn walk(
    threads: &[BThread],
    at: Vec<Option<usize>>,
    path: &mut Vec<String>,
    out: &mut BTreeSet<Vec<String>>,
) {
    let live: Vec<(usize, &Bsync)> = at
        .iter()
        .enumerate()
        .filter_map(|(i, s)| s.map(|s| (i, &threads[i].states[s])))
        .collect();
    let blocked: BTreeSet<&str> = live.iter().flat_map(|(_, b)| b.block.iter().copied()).collect();
    let selectable: BTreeSet<&str> = live
        .iter()
        .flat_map(|(_, b)| b.request.iter().copied())
        .filter(|e| !blocked.contains(e))
        .collect();
    if selectable.is_empty() {
        out.insert(path.clone());
        return;
    }
    for e in selectable {
        let mut next = at.clone();
        for &(i, b) in &live {
            if b.request.contains(&e) || b.wait.contains(&e) {
                next[i] = *b.next.get(e).expect("every requested or waited label has a successor");
            }
        }
        path.push(e.to_owned());
        walk(threads, next, path, out);
        path.pop();
    }
}

pub type Cell = (i64, i64);

/// One synchronous generation of Conway's rules on an unbounded plane.
pub fn conway_step(pop: &BTreeSet<Cell>) -> BTreeSet<Cell> {
    let mut counts: BTreeMap<Cell, usize> = BTreeMap::new();
    for &(r, c) in pop {
        for dr in -1..=1 {
            for dc in -1..=1 {
                if (dr, dc) != (0, 0) {
                    *counts.entry((r + dr, c + dc)).or_default() += 1;
                }
            }
        }
    }
    counts
        .into_iter()
        .filter(|(cell, n)| *n == 3 || (*n == 2 && pop.contains(cell)))
        .map(|(cell, _)| cell)
        .collect()
}

pub fn binomial(n: u64, k: u64) -> u64 {
    (1..=k).fold(1, |acc, i| acc * (n + 1 - i) / i)
}
