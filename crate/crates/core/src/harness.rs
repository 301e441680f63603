//! Batch drivers: single runs, side-by-side comparisons and parameter sweeps.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use rayon::prelude::*;
use serde::Serialize;
use serde_json::Value;

use crate::error::SimError;
use crate::scenario::{Protocol, Scenario};
use crate::sim::{self, RunOutput};

pub fn run(sc: &Scenario, protocol: Protocol) -> Result<RunOutput, SimError> {
    let r = sc.resolve()?;
    sim::run(&r, protocol, r.seed)
}

#[derive(Debug, Clone)]
pub struct Comparison {
    pub scenario: String,
    pub runs: Vec<RunOutput>,
}

pub fn compare(sc: &Scenario, protocols: &[Protocol]) -> Result<Comparison, SimError> {
    let runs = protocols
        .iter()
        .map(|&p| run(sc, p))
        .collect::<Result<Vec<_>, _>>()?;
    Ok(Comparison {
        scenario: sc.name.clone(),
        runs,
    })
}

impl Comparison {
    pub fn to_json(&self) -> Value {
        let runs: Vec<Value> = self
            .runs
            .iter()
            .map(|r| serde_json::json!({ "protocol": r.protocol.to_string(), "summary": r.summary.to_json() }))
            .collect();
        serde_json::json!({ "scenario": self.scenario, "runs": runs })
    }

    /// Plain-text table with one column per protocol.
    pub fn render_table(&self) -> String {
        let mut rows: Vec<(String, Vec<String>)> = Vec::new();
        let col = |f: &dyn Fn(&RunOutput) -> String| self.runs.iter().map(f).collect::<Vec<_>>();
        rows.push(("rq_sent".into(), col(&|r| r.summary.rq_sent.to_string())));
        rows.push(("rr_sent".into(), col(&|r| r.summary.rr_sent.to_string())));
        rows.push(("duplicate_rq".into(), col(&|r| r.summary.duplicate_rq.to_string())));
        rows.push(("duplicate_rr".into(), col(&|r| r.summary.duplicate_rr.to_string())));
        rows.push(("sync_sent".into(), col(&|r| r.summary.sync_sent.to_string())));
        rows.push((
            "extra_recovery_total".into(),
            col(&|r| r.summary.extra_recovery_packets.values().sum::<u64>().to_string()),
        ));
        rows.push((
            "mean_recovery_latency_ms".into(),
            col(&|r| {
                r.summary
                    .mean_recovery_latency_us
                    .map_or("-".into(), |us| format!("{:.3}", us / 1000.0))
            }),
        ));
        rows.push(("complete".into(), col(&|r| r.summary.complete().to_string())));
        rows.push((
            "completion_time_ms".into(),
            col(&|r| format!("{:.3}", r.summary.completion_time().as_millis_f64())),
        ));
        let mut ids: Vec<&String> = self
            .runs
            .iter()
            .flat_map(|r| r.summary.extra_recovery_packets.keys())
            .collect();
        ids.sort();
        ids.dedup();
        for id in ids {
            rows.push((format!("extra[{id}]"), col(&|r| r.summary.extra(id).to_string())));
        }

        let head: Vec<String> = self.runs.iter().map(|r| r.protocol.to_string()).collect();
        let w0 = rows.iter().map(|r| r.0.len()).max().unwrap_or(6).max(6);
        let mut out = String::new();
        let _ = write!(out, "{:<w0$}", "metric");
        for h in &head {
            let _ = write!(out, "  {h:>10}");
        }
        out.push('\n');
        for (k, vals) in rows {
            let _ = write!(out, "{k:<w0$}");
            for v in vals {
                let _ = write!(out, "  {v:>10}");
            }
            out.push('\n');
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SweepRow {
    pub value: Value,
    pub seed: u64,
    pub duplicate_rq: u64,
    pub duplicate_rr: u64,
    pub mean_recovery_latency_us: Option<f64>,
    pub complete: bool,
}

/// Parses a sweep value: `unlimited` means no limit, anything else is JSON
/// or, failing that, a bare string.
pub fn parse_value(s: &str) -> Value {
    if s == "unlimited" {
        return Value::Null;
    }
    serde_json::from_str(s).unwrap_or_else(|_| Value::String(s.to_string()))
}

fn set_path(doc: &mut Value, path: &str, v: Value) -> Result<(), SimError> {
    let unknown = || SimError::UnknownParam(path.to_string());
    let mut cur = doc;
    let parts: Vec<&str> = path.split('.').collect();
    let (last, init) = parts.split_last().ok_or_else(unknown)?;
    for p in init {
        cur = cur.get_mut(*p).ok_or_else(unknown)?;
    }
    let obj = cur.as_object_mut().ok_or_else(unknown)?;
    if !obj.contains_key(*last) {
        return Err(unknown());
    }
    obj.insert((*last).to_string(), v);
    Ok(())
}

/// Sets every parameter in `params` to each value in turn and runs each
/// combination once per seed. Rows come back sorted by value then seed.
pub fn sweep(
    sc: &Scenario,
    protocol: Protocol,
    params: &[String],
    values: &[String],
    seeds: &[u64],
) -> Result<Vec<SweepRow>, SimError> {
    let base = serde_json::to_value(sc).expect("scenario is plain data");
    let mut jobs = Vec::new();
    for raw in values {
        let v = parse_value(raw);
        let mut doc = base.clone();
        for p in params {
            set_path(&mut doc, p, v.clone())?;
        }
        let variant = Scenario::from_json_str(&doc.to_string()).map_err(|e| SimError::BadValue {
            param: params.join(","),
            value: raw.clone(),
            msg: e.to_string(),
        })?;
        let r = variant.resolve()?;
        for &seed in seeds {
            jobs.push((v.clone(), seed, r.clone()));
        }
    }
    let mut rows = jobs
        .into_par_iter()
        .map(|(value, seed, r)| {
            let out = sim::run(&r, protocol, seed)?;
            Ok(SweepRow {
                value,
                seed,
                duplicate_rq: out.summary.duplicate_rq,
                duplicate_rr: out.summary.duplicate_rr,
                mean_recovery_latency_us: out.summary.mean_recovery_latency_us,
                complete: out.summary.complete(),
            })
        })
        .collect::<Result<Vec<_>, SimError>>()?;
    rows.sort_by(|a, b| {
        value_key(&a.value)
            .partial_cmp(&value_key(&b.value))
            .unwrap_or(std::cmp::Ordering::Equal)
            .then(a.seed.cmp(&b.seed))
    });
    Ok(rows)
}

// numbers ascend, unlimited last
fn value_key(v: &Value) -> (u8, f64, String) {
    match v {
        Value::Number(n) => (0, n.as_f64().unwrap_or(0.0), String::new()),
        Value::Null => (2, 0.0, String::new()),
        other => (1, 0.0, other.to_string()),
    }
}

/// Per-value means over seeds: (duplicate RQ, duplicate RR, latency in µs).
pub fn sweep_means(rows: &[SweepRow]) -> Vec<(Value, f64, f64, Option<f64>)> {
    let mut groups: BTreeMap<String, (Value, Vec<&SweepRow>)> = BTreeMap::new();
    let mut order = Vec::new();
    for r in rows {
        let k = r.value.to_string();
        if !groups.contains_key(&k) {
            order.push(k.clone());
        }
        groups.entry(k).or_insert_with(|| (r.value.clone(), Vec::new())).1.push(r);
    }
    order
        .into_iter()
        .map(|k| {
            let (v, rs) = &groups[&k];
            let n = rs.len() as f64;
            let rq = rs.iter().map(|r| r.duplicate_rq as f64).sum::<f64>() / n;
            let rr = rs.iter().map(|r| r.duplicate_rr as f64).sum::<f64>() / n;
            let lat: Vec<f64> = rs.iter().filter_map(|r| r.mean_recovery_latency_us).collect();
            let lat = (!lat.is_empty()).then(|| lat.iter().sum::<f64>() / lat.len() as f64);
            (v.clone(), rq, rr, lat)
        })
        .collect()
}

pub fn sweep_csv(rows: &[SweepRow]) -> String {
    let mut out = String::from("value,seed,duplicate_rq,duplicate_rr,mean_recovery_latency_us,complete\n");
    for r in rows {
        let value = match &r.value {
            Value::Null => "unlimited".to_string(),
            Value::String(s) => s.clone(),
            v => v.to_string(),
        };
        let lat = r.mean_recovery_latency_us.map_or(String::new(), |l| format!("{l:.1}"));
        let _ = writeln!(
            out,
            "{value},{},{},{},{lat},{}",
            r.seed, r.duplicate_rq, r.duplicate_rr, r.complete
        );
    }
    out
}
