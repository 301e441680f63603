use dcsim::harness;
use dcsim::scenario::{Protocol, Scenario, PRESETS};
use dcsim::trace::{check_conservation, emit_trace, read_jsonl, summarize, EventKind, Format};
use dcsim::RunOutput;

mod common;
use common::random_scenario;

fn all_runs() -> Vec<(String, RunOutput)> {
    let mut out = Vec::new();
    for (name, _) in PRESETS {
        let sc = Scenario::preset(name).unwrap();
        for p in [Protocol::Srm, Protocol::Ndn] {
            out.push((format!("{name}.{p}"), harness::run(&sc, p).unwrap()));
        }
    }
    for seed in 0..15 {
        let sc = Scenario::from_json_str(&random_scenario(seed, true).to_string()).unwrap();
        for p in [Protocol::Srm, Protocol::Ndn] {
            out.push((format!("random-{seed}.{p}"), harness::run(&sc, p).unwrap()));
        }
    }
    out
}

#[test]
fn every_link_send_is_received_or_dropped() {
    for (label, run) in all_runs() {
        check_conservation(&run.trace).unwrap_or_else(|e| panic!("{label}: {e}"));
    }
}

#[test]
fn conservation_check_notices_a_missing_receive() {
    let sc = Scenario::preset("fig3").unwrap();
    let run = harness::run(&sc, Protocol::Ndn).unwrap();
    let mut recs = run.trace.records().to_vec();
    let i = recs.iter().position(|r| r.kind == EventKind::Recv).unwrap();
    recs.remove(i);
    let broken = dcsim::trace::Trace::from_records(recs);
    assert!(check_conservation(&broken).is_err());
}

#[test]
fn timestamps_never_go_backwards() {
    for (label, run) in all_runs() {
        let ts: Vec<u64> = run.trace.iter().map(|r| r.ts).collect();
        assert!(ts.windows(2).all(|w| w[0] <= w[1]), "{label}");
        assert_eq!(run.trace.records().last().unwrap().kind, EventKind::End, "{label}");
    }
}

#[test]
fn summary_recomputes_from_written_trace() {
    let dir = tempfile::tempdir().unwrap();
    for (label, run) in all_runs() {
        let path = dir.path().join(format!("{label}.jsonl"));
        emit_trace(&run.trace, Format::Jsonl, &path).unwrap();
        let back = read_jsonl(&path).unwrap();
        assert_eq!(back.records(), run.trace.records(), "{label}");
        assert_eq!(summarize(&back).unwrap(), run.summary, "{label}");
    }
}

#[test]
fn summary_agrees_with_protocol_counters() {
    for (label, run) in all_runs() {
        let s = &run.summary;
        let l = &run.live;
        assert_eq!(s.rq_sent, l.rq_sent, "{label} rq");
        assert_eq!(s.rr_sent, l.rr_sent, "{label} rr");
        assert_eq!(s.sync_sent, l.sync_sent, "{label} sync");
        assert_eq!(s.give_ups, l.give_ups, "{label} give-ups");
        assert_eq!(s.missing_items, l.missing, "{label} missing");
        for (node, &hits) in &l.cache_hits {
            assert_eq!(s.node(node).cache_hits, hits, "{label} {node} hits");
        }
        for (node, &agg) in &l.aggregations {
            assert_eq!(s.node(node).aggregations, agg, "{label} {node} aggregations");
        }
    }
}

#[test]
fn truncated_trace_is_rejected() {
    let sc = Scenario::preset("fig1").unwrap();
    let run = harness::run(&sc, Protocol::Srm).unwrap();
    let mut recs = run.trace.records().to_vec();
    recs.pop();
    assert!(summarize(&dcsim::trace::Trace::from_records(recs)).is_err());
}
