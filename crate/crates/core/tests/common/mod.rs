#![allow(dead_code)]

use std::collections::{BTreeMap, BTreeSet};

use dcsim::trace::{EventKind, Trace, TraceRecord};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde_json::{json, Value};

pub const MAX_RANDOM_NODES: usize = 10;
pub const MAX_RANDOM_LOSS: f64 = 0.3;
pub const MAX_RANDOM_ADUS: u64 = 20;

pub const CANONICAL: [(&str, &str); 9] = [
    ("E", "R2"),
    ("R2", "R4"),
    ("R4", "A"),
    ("R4", "B"),
    ("R4", "C"),
    ("R2", "R3"),
    ("R3", "D"),
    ("R3", "R6"),
    ("R6", "X"),
];

/// Hop-count all-pairs distances over an undirected link list, computed
/// with Floyd-Warshall as a check on the simulator's own routing.
pub fn apsp(links: &[(&str, &str)]) -> BTreeMap<(String, String), u32> {
    let mut nodes: BTreeSet<String> = BTreeSet::new();
    for (a, b) in links {
        nodes.insert(a.to_string());
        nodes.insert(b.to_string());
    }
    let mut d = BTreeMap::new();
    for a in &nodes {
        for b in &nodes {
            d.insert((a.clone(), b.clone()), if a == b { 0 } else { u32::MAX / 4 });
        }
    }
    for (a, b) in links {
        d.insert((a.to_string(), b.to_string()), 1);
        d.insert((b.to_string(), a.to_string()), 1);
    }
    for k in &nodes {
        for i in &nodes {
            for j in &nodes {
                let via = d[&(i.clone(), k.clone())] + d[&(k.clone(), j.clone())];
                if via < d[&(i.clone(), j.clone())] {
                    d.insert((i.clone(), j.clone()), via);
                }
            }
        }
    }
    d
}

pub fn originations<'a>(t: &'a Trace, packet: &'a str) -> impl Iterator<Item = &'a TraceRecord> + 'a {
    t.iter()
        .filter(move |r| r.kind == EventKind::Send && r.link.is_none() && r.packet == packet)
}

/// A random connected scenario: up to ten nodes, random host/router split,
/// up to twenty ADUs. With `lossy` every link drops independently with a
/// probability of at most 0.3.
pub fn random_scenario(seed: u64, lossy: bool) -> Value {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = rng.random_range(3..=MAX_RANDOM_NODES);
    let mut hosts: Vec<bool> = (0..n).map(|_| rng.random_bool(0.5)).collect();
    hosts[0] = true;
    hosts[n - 1] = true;
    let id = |i: usize| if hosts[i] { format!("H{i}") } else { format!("R{i}") };
    let nodes: Vec<Value> = (0..n)
        .map(|i| json!({"id": id(i), "kind": if hosts[i] { "host" } else { "router" }}))
        .collect();
    let mut edges = BTreeSet::new();
    for i in 1..n {
        edges.insert((rng.random_range(0..i), i));
    }
    for _ in 0..rng.random_range(0..=n / 2) {
        let (a, b) = (rng.random_range(0..n), rng.random_range(0..n));
        if a != b {
            edges.insert((a.min(b), a.max(b)));
        }
    }
    let links: Vec<Value> = edges
        .iter()
        .map(|&(a, b)| {
            let p: f64 = rng.random_range(0.0..=MAX_RANDOM_LOSS);
            let mut l = json!({"a": id(a), "b": id(b), "delay_ms": rng.random_range(1..=20)});
            if lossy {
                l["loss"] = json!({"random": p});
            }
            l
        })
        .collect();
    let members: Vec<String> = (0..n).filter(|&i| hosts[i]).map(id).collect();
    let mut budget = rng.random_range(1..=MAX_RANDOM_ADUS);
    let mut schedule = Vec::new();
    while budget > 0 {
        let m = &members[rng.random_range(0..members.len())];
        let count = rng.random_range(1..=budget);
        budget -= count;
        schedule.push(json!({
            "member": m, "count": count,
            "start_ms": rng.random_range(200..3000), "interval_ms": rng.random_range(50..500)
        }));
    }
    json!({
        "name": format!("random-{seed}"),
        "seed": seed,
        "end_ms": 300000,
        "topology": {"nodes": nodes, "links": links},
        "srm": {"session_period_ms": 500},
        "svs": {"refresh_period_ms": 2000},
        "ndn": {"consumer_retx_ms": 100},
        "app": {"schedule": schedule}
    })
}

/// Replays preload/produce/deliver records to answer "did `node` hold
/// `name` at this point of the trace".
#[derive(Default)]
pub struct Holdings {
    members: BTreeSet<String>,
    preload: BTreeMap<String, u64>,
    held: BTreeSet<(String, String)>,
}

impl Holdings {
    pub fn observe(&mut self, r: &TraceRecord) {
        match r.kind {
            EventKind::Node if r.flag("member") => {
                self.members.insert(r.node.clone());
            }
            EventKind::Preload => {
                let p = r.name.trim_start_matches('/').to_string();
                self.preload.insert(p, r.int("count").unwrap_or(0) as u64);
            }
            EventKind::Produce | EventKind::Deliver => {
                self.held.insert((r.node.clone(), r.name.clone()));
            }
            _ => {}
        }
    }

    pub fn holds(&self, node: &str, name: &str) -> bool {
        if self.held.contains(&(node.to_string(), name.to_string())) {
            return true;
        }
        let Some((p, seq)) = name.trim_start_matches('/').split_once("/seq=") else {
            return false;
        };
        let seq: u64 = seq.parse().unwrap_or(u64::MAX);
        self.members.contains(node) && self.preload.get(p).is_some_and(|&n| seq <= n)
    }
}
