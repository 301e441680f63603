use std::collections::{BTreeMap, BTreeSet};

use dcsim::harness;
use dcsim::scenario::{Protocol, Scenario};
use dcsim::trace::{EventKind, Trace};
use serde_json::json;

mod common;
use common::{apsp, originations, random_scenario, Holdings, CANONICAL};

fn random(seed: u64, lossy: bool) -> Scenario {
    Scenario::from_json_str(&random_scenario(seed, lossy).to_string()).unwrap()
}

#[test]
fn srm_never_requests_held_or_repairs_missing_data() {
    for seed in 0..25 {
        let out = harness::run(&random(seed, true), Protocol::Srm).unwrap();
        let mut h = Holdings::default();
        for r in out.trace.iter() {
            if r.is_origination() && r.packet == "rq" {
                assert!(!h.holds(&r.node, &r.name), "seed {seed}: {} asked for held {}", r.node, r.name);
            }
            if r.is_origination() && r.packet == "rr" {
                assert!(h.holds(&r.node, &r.name), "seed {seed}: {} repaired missing {}", r.node, r.name);
            }
            h.observe(r);
        }
    }
}

#[test]
fn ideal_mode_costs_every_unaffected_member_two_packets() {
    let d = apsp(&CANONICAL);
    let members = ["A", "B", "C", "D", "E", "X"];
    for (a, b) in CANONICAL {
        // orient the edge away from the producer E
        let (u, v) = if d[&("E".into(), a.into())] < d[&("E".into(), b.into())] { (a, b) } else { (b, a) };
        let mut doc = serde_json::to_value(Scenario::preset("fig1").unwrap()).unwrap();
        doc["loss_scripts"] = json!([{"from": u, "to": v, "kind": "data", "name": "/E/seq=12"}]);
        let sc = Scenario::from_json_str(&doc.to_string()).unwrap();
        let out = harness::run(&sc, Protocol::Srm).unwrap();
        let s = &out.summary;
        let lost: BTreeSet<&str> = members
            .iter()
            .copied()
            .filter(|m| *m != "E" && d[&(u.into(), (*m).into())] > d[&(v.into(), (*m).into())])
            .collect();
        assert_eq!((s.rq_sent, s.rr_sent), (1, 1), "drop {u}>{v}");
        for m in members {
            let want = if lost.contains(m) { 0 } else { 2 };
            assert_eq!(s.extra(m), want, "drop {u}>{v}: member {m} (losers {lost:?})");
        }
        assert!(s.complete(), "drop {u}>{v}");
    }
}

fn tree_labels(sc: &Scenario, producer: &str) -> BTreeSet<String> {
    let r = sc.resolve().unwrap();
    let p = r.topo.idx(producer).unwrap();
    let tree = r.routes.multicast_tree(&r.members, p);
    tree.edges
        .iter()
        .map(|&(a, b)| r.topo.link_label(a, b))
        .collect()
}

#[test]
fn ndn_data_follows_interest_paths_in_reverse() {
    for seed in 0..25 {
        let out = harness::run(&random(seed, true), Protocol::Ndn).unwrap();
        let mut asked: BTreeSet<(String, String)> = BTreeSet::new();
        for r in out.trace.iter() {
            let Some(link) = r.link.as_deref() else { continue };
            if r.kind != EventKind::Send {
                continue;
            }
            let (a, b) = link.split_once('>').unwrap();
            match r.packet.as_str() {
                "interest" => {
                    asked.insert((format!("{a}>{b}"), r.name.clone()));
                }
                "data" => assert!(
                    asked.contains(&(format!("{b}>{a}"), r.name.clone())),
                    "seed {seed}: data {} on {link} without an Interest on {b}>{a}",
                    r.name
                ),
                _ => {}
            }
        }
    }
}

fn data_links(t: &Trace) -> BTreeMap<String, Vec<String>> {
    let mut m: BTreeMap<String, Vec<String>> = BTreeMap::new();
    for r in t.iter() {
        if r.kind == EventKind::Send && r.packet == "data" {
            if let Some(l) = &r.link {
                m.entry(r.name.clone()).or_default().push(l.clone());
            }
        }
    }
    m
}

#[test]
fn loss_free_data_spans_the_producer_tree_once() {
    for seed in 0..25 {
        let sc = random(seed, false);
        let out = harness::run(&sc, Protocol::Ndn).unwrap();
        assert!(out.summary.complete(), "seed {seed}");
        for (name, links) in data_links(&out.trace) {
            let producer = name.trim_start_matches('/').split('/').next().unwrap();
            let set: BTreeSet<String> = links.iter().cloned().collect();
            assert_eq!(set.len(), links.len(), "seed {seed}: {name} crossed a link twice: {links:?}");
            assert_eq!(set, tree_labels(&sc, producer), "seed {seed}: {name}");
        }
    }
}

#[test]
fn loss_free_producers_answer_each_name_once() {
    for seed in 0..25 {
        let out = harness::run(&random(seed, false), Protocol::Ndn).unwrap();
        let mut served: BTreeMap<String, usize> = BTreeMap::new();
        for r in originations(&out.trace, "data") {
            *served.entry(r.name.clone()).or_default() += 1;
        }
        for (name, n) in served {
            assert_eq!(n, 1, "seed {seed}: {name}");
        }
    }
}

fn star(k: usize, access_ms: u64, core_ms: u64) -> Scenario {
    let mut nodes = vec![json!({"id": "P", "kind": "host"}), json!({"id": "R", "kind": "router"})];
    let mut links = vec![json!({"a": "P", "b": "R", "delay_ms": core_ms})];
    for i in 0..k {
        nodes.push(json!({"id": format!("C{i}"), "kind": "host"}));
        links.push(json!({"a": "R", "b": format!("C{i}"), "delay_ms": access_ms}));
    }
    let doc = json!({
        "name": "star",
        "end_ms": 5000,
        "protocols": ["ndn"],
        "topology": {"nodes": nodes, "links": links},
        "app": {"schedule": [{"member": "P", "count": 1, "start_ms": 1000}]}
    });
    Scenario::from_json_str(&doc.to_string()).unwrap()
}

proptest::proptest! {
    #![proptest_config(proptest::prelude::ProptestConfig::with_cases(32))]
    #[test]
    fn simultaneous_requests_reach_the_producer_once(k in 1usize..8, access in 1u64..30, core in 1u64..30) {
        let out = harness::run(&star(k, access, core), Protocol::Ndn).unwrap();
        let name = "/P/seq=1";
        let at_p = out.trace.iter()
            .filter(|r| r.node == "P" && r.kind == EventKind::Recv && r.packet == "interest" && r.name == name)
            .count();
        proptest::prop_assert_eq!(at_p, 1);
        let aggregated = out.trace.iter()
            .filter(|r| r.node == "R" && r.kind == EventKind::Aggregate && r.name == name)
            .count();
        proptest::prop_assert_eq!(aggregated, k - 1);
        proptest::prop_assert!(out.summary.complete());
    }
}

fn parse_vector(s: &str) -> BTreeMap<String, u64> {
    s.trim_matches(|c| c == '[' || c == ']')
        .split(',')
        .filter(|e| !e.is_empty())
        .map(|e| {
            let (p, n) = e.rsplit_once(':').unwrap();
            (p.to_string(), n.parse().unwrap())
        })
        .collect()
}

#[test]
fn svs_vectors_converge_and_never_shrink() {
    for seed in 0..25 {
        let sc = random(seed, true);
        let out = harness::run(&sc, Protocol::Ndn).unwrap();
        let mut last: BTreeMap<String, BTreeMap<String, u64>> = BTreeMap::new();
        let mut published: BTreeMap<String, u64> = BTreeMap::new();
        for r in out.trace.iter() {
            if r.kind == EventKind::Produce {
                *published.entry(r.node.clone()).or_default() += 1;
            }
            if r.is_origination() && r.packet == "sync" {
                let v = parse_vector(r.text("vector").unwrap());
                if let Some(prev) = last.get(&r.node) {
                    for (p, &n) in prev {
                        assert!(v.get(p).copied().unwrap_or(0) >= n, "seed {seed}: {} shrank {p}", r.node);
                    }
                }
                last.insert(r.node.clone(), v);
            }
        }
        let vectors: Vec<_> = out.live.vectors.values().collect();
        assert!(vectors.windows(2).all(|w| w[0] == w[1]), "seed {seed}: vectors differ");
        for (p, n) in published {
            assert_eq!(vectors[0].get(&p), n, "seed {seed}: {p}");
        }
    }
}

fn final_holdings(t: &Trace) -> BTreeSet<(String, String)> {
    t.iter()
        .filter(|r| matches!(r.kind, EventKind::Deliver | EventKind::Produce))
        .map(|r| (r.node.clone(), r.name.clone()))
        .collect()
}

#[test]
fn both_bindings_end_with_the_same_items() {
    for seed in 0..25 {
        let sc = random(seed, false);
        let srm = harness::run(&sc, Protocol::Srm).unwrap();
        let ndn = harness::run(&sc, Protocol::Ndn).unwrap();
        assert!(srm.summary.complete() && ndn.summary.complete(), "seed {seed}");
        assert_eq!(final_holdings(&srm.trace), final_holdings(&ndn.trace), "seed {seed}");
    }
}

#[test]
fn ndn_applications_only_see_validated_data() {
    for seed in 0..25 {
        let out = harness::run(&random(seed, true), Protocol::Ndn).unwrap();
        assert_eq!(out.summary.unvalidated_deliveries, 0);
        assert!(out
            .trace
            .iter()
            .filter(|r| r.kind == EventKind::Deliver)
            .all(|r| r.flag("validated")));
        let sent = originations(&out.trace, "data").count();
        assert!(sent > 0 || out.summary.produced == 0, "seed {seed}");
    }
}

#[test]
fn lone_loser_behind_r6_is_repaired_by_d() {
    let mut doc = serde_json::to_value(Scenario::preset("fig1").unwrap()).unwrap();
    doc["loss_scripts"] = json!([{"from": "R3", "to": "R6", "kind": "data", "name": "/E/seq=12"}]);
    let sc = Scenario::from_json_str(&doc.to_string()).unwrap();
    let out = harness::run(&sc, Protocol::Srm).unwrap();
    let rq: Vec<&str> = originations(&out.trace, "rq").map(|r| r.node.as_str()).collect();
    let rr: Vec<&str> = originations(&out.trace, "rr").map(|r| r.node.as_str()).collect();
    assert_eq!(rq, ["X"]);
    assert_eq!(rr, ["D"]);
    for m in ["A", "B", "C", "D", "E"] {
        assert_eq!(out.summary.extra(m), 2, "{m}");
    }
}
