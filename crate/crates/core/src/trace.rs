//! Canonical event trace, the run summary derived from it, and writers.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::engine::SimTime;
use crate::ndn::Name;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum EventKind {
    Send,
    Recv,
    Drop,
    CacheHit,
    Aggregate,
    Suppress,
    Expire,
    ValidateFail,
    /// Run preamble: one per node.
    Node,
    /// Items `1..=count` of a producer held by every member at start.
    Preload,
    Produce,
    Deliver,
    GiveUp,
    End,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TraceProtocol {
    Srm,
    Ndn,
    Svs,
    App,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Extra {
    Int(i64),
    Str(String),
}

impl From<i64> for Extra {
    fn from(v: i64) -> Self {
        Extra::Int(v)
    }
}

impl From<u64> for Extra {
    fn from(v: u64) -> Self {
        Extra::Int(v as i64)
    }
}

impl From<bool> for Extra {
    fn from(v: bool) -> Self {
        Extra::Int(i64::from(v))
    }
}

impl From<&str> for Extra {
    fn from(v: &str) -> Self {
        Extra::Str(v.to_string())
    }
}

impl From<String> for Extra {
    fn from(v: String) -> Self {
        Extra::Str(v)
    }
}

/// One trace line. Fields are declared in key order so serialized
/// records have sorted keys.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TraceRecord {
    #[serde(default)]
    pub extra: BTreeMap<String, Extra>,
    pub kind: EventKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub link: Option<String>,
    pub name: String,
    pub node: String,
    pub packet: String,
    pub protocol: TraceProtocol,
    /// Microseconds since the start of the run.
    pub ts: u64,
}

impl TraceRecord {
    pub fn int(&self, key: &str) -> Option<i64> {
        match self.extra.get(key) {
            Some(Extra::Int(v)) => Some(*v),
            _ => None,
        }
    }

    pub fn text(&self, key: &str) -> Option<&str> {
        match self.extra.get(key) {
            Some(Extra::Str(v)) => Some(v),
            _ => None,
        }
    }

    pub fn flag(&self, key: &str) -> bool {
        self.int(key).is_some_and(|v| v != 0)
    }

    /// A `send` without a link is the protocol-level origination of a packet.
    pub fn is_origination(&self) -> bool {
        self.kind == EventKind::Send && self.link.is_none()
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Trace {
    records: Vec<TraceRecord>,
}

impl Trace {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn from_records(records: Vec<TraceRecord>) -> Self {
        Trace { records }
    }

    pub fn push(&mut self, r: TraceRecord) {
        debug_assert!(self.records.last().is_none_or(|l| l.ts <= r.ts));
        self.records.push(r);
    }

    pub fn records(&self) -> &[TraceRecord] {
        &self.records
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn iter(&self) -> std::slice::Iter<'_, TraceRecord> {
        self.records.iter()
    }
}

#[derive(Debug, Error)]
pub enum TraceError {
    #[error("trace has no end record; the run did not finish")]
    IncompleteTrace,
    #[error("trace line {line}: {source}")]
    BadLine {
        line: usize,
        source: serde_json::Error,
    },
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct NodeCounters {
    pub aggregations: u64,
    pub cache_hits: u64,
    pub data_rx: u64,
    pub drops: u64,
    pub interest_rx: u64,
    pub rq_rx: u64,
    pub rr_rx: u64,
    pub session_rx: u64,
    pub sync_rx: u64,
    pub validation_failures: u64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub protocol: String,
    pub end_us: u64,
    pub nodes: BTreeMap<String, NodeCounters>,
    pub rq_sent: u64,
    pub rr_sent: u64,
    pub duplicate_rq: u64,
    pub duplicate_rr: u64,
    pub sync_sent: u64,
    pub produced: u64,
    pub validated_deliveries: u64,
    pub unvalidated_deliveries: u64,
    pub give_ups: u64,
    /// Recovery packets received at, or sent by, a member that already held
    /// the item at that moment.
    pub extra_recovery_packets: BTreeMap<String, u64>,
    pub recovery_latencies_us: BTreeMap<String, Vec<u64>>,
    pub mean_recovery_latency_us: Option<f64>,
    /// Items produced (or preloaded) that each member still lacks at the end.
    pub missing_items: BTreeMap<String, u64>,
    /// Time of the last application delivery.
    pub completion_time_us: u64,
}

impl RunSummary {
    pub fn node(&self, id: &str) -> NodeCounters {
        self.nodes.get(id).cloned().unwrap_or_default()
    }

    pub fn extra(&self, id: &str) -> u64 {
        self.extra_recovery_packets.get(id).copied().unwrap_or(0)
    }

    pub fn complete(&self) -> bool {
        self.missing_items.values().all(|&m| m == 0)
    }

    pub fn completion_time(&self) -> SimTime {
        SimTime::from_micros(self.completion_time_us)
    }

    pub fn to_json(&self) -> serde_json::Value {
        serde_json::to_value(self).expect("summary is plain data")
    }
}

fn is_recovery_packet(r: &TraceRecord) -> bool {
    match (r.protocol, r.packet.as_str()) {
        (TraceProtocol::Srm, "rq" | "rr") => true,
        (TraceProtocol::Ndn, "interest") => r.flag("retx"),
        (TraceProtocol::Ndn, "data") => r.flag("recovery"),
        _ => false,
    }
}

struct Holdings {
    preload: HashMap<String, u64>,
    held: HashSet<(String, String)>,
}

impl Holdings {
    fn holds(&self, node: &str, item: &str) -> bool {
        if self.held.contains(&(node.to_string(), item.to_string())) {
            return true;
        }
        let Ok(name) = item.parse::<Name>() else {
            return false;
        };
        match name.parse_adu() {
            Some((p, s)) => self.preload.get(p).is_some_and(|&n| s <= n),
            None => false,
        }
    }
}

/// Recomputes every summary metric from a finished trace.
pub fn summarize(trace: &Trace) -> Result<RunSummary, TraceError> {
    let end = trace
        .iter()
        .rev()
        .find(|r| r.kind == EventKind::End)
        .ok_or(TraceError::IncompleteTrace)?;
    let mut s = RunSummary {
        protocol: end.packet.clone(),
        end_us: end.ts,
        ..RunSummary::default()
    };
    let mut members = Vec::new();
    let mut hold = Holdings {
        preload: HashMap::new(),
        held: HashSet::new(),
    };
    let mut produced: Vec<String> = Vec::new();
    let mut rq_per: HashMap<&str, u64> = HashMap::new();
    let mut rr_per: HashMap<&str, u64> = HashMap::new();
    let mut latency_sum = 0u64;
    let mut latency_n = 0u64;

    for r in trace.iter() {
        match r.kind {
            EventKind::Node => {
                s.nodes.insert(r.node.clone(), NodeCounters::default());
                if r.flag("member") {
                    members.push(r.node.clone());
                    s.extra_recovery_packets.insert(r.node.clone(), 0);
                    s.recovery_latencies_us.insert(r.node.clone(), Vec::new());
                }
            }
            EventKind::Preload => {
                let n = r.int("count").unwrap_or(0).max(0) as u64;
                let p = r.name.trim_start_matches('/').to_string();
                for seq in 1..=n {
                    produced.push(Name::for_adu(&p, seq).to_string());
                }
                hold.preload.insert(p, n);
            }
            EventKind::Produce => {
                produced.push(r.name.clone());
                hold.held.insert((r.node.clone(), r.name.clone()));
            }
            _ => {}
        }

        let is_member = s.extra_recovery_packets.contains_key(&r.node);
        if is_recovery_packet(r)
            && is_member
            && (r.kind == EventKind::Recv || r.is_origination())
            && hold.holds(&r.node, &r.name)
        {
            *s.extra_recovery_packets.get_mut(&r.node).expect("member") += 1;
        }

        let mut scratch = NodeCounters::default();
        let c = s.nodes.get_mut(&r.node).unwrap_or(&mut scratch);
        match r.kind {
            EventKind::Recv => match r.packet.as_str() {
                "adu" | "data" => c.data_rx += 1,
                "rq" => c.rq_rx += 1,
                "rr" => c.rr_rx += 1,
                "session" => c.session_rx += 1,
                "interest" => c.interest_rx += 1,
                "sync" => c.sync_rx += 1,
                _ => {}
            },
            EventKind::CacheHit => c.cache_hits += 1,
            EventKind::Aggregate => c.aggregations += 1,
            EventKind::Drop => c.drops += 1,
            EventKind::ValidateFail => c.validation_failures += 1,
            EventKind::Send if r.is_origination() => match r.packet.as_str() {
                "rq" => {
                    s.rq_sent += 1;
                    *rq_per.entry(&r.name).or_default() += 1;
                }
                "rr" => {
                    s.rr_sent += 1;
                    *rr_per.entry(&r.name).or_default() += 1;
                }
                "sync" => s.sync_sent += 1,
                _ => {}
            },
            EventKind::Deliver => {
                hold.held.insert((r.node.clone(), r.name.clone()));
                s.completion_time_us = s.completion_time_us.max(r.ts);
                if r.flag("validated") {
                    s.validated_deliveries += 1;
                } else if r.protocol == TraceProtocol::App && s.protocol == "ndn" {
                    s.unvalidated_deliveries += 1;
                }
                if r.flag("recovered") {
                    if let Some(l) = r.int("latency_us") {
                        let l = l.max(0) as u64;
                        s.recovery_latencies_us
                            .entry(r.node.clone())
                            .or_default()
                            .push(l);
                        latency_sum += l;
                        latency_n += 1;
                    }
                }
            }
            EventKind::GiveUp => s.give_ups += 1,
            _ => {}
        }
    }

    s.duplicate_rq = rq_per.values().map(|n| n.saturating_sub(1)).sum();
    s.duplicate_rr = rr_per.values().map(|n| n.saturating_sub(1)).sum();
    s.produced = produced.len() as u64;
    if latency_n > 0 {
        s.mean_recovery_latency_us = Some(latency_sum as f64 / latency_n as f64);
    }
    for m in &members {
        let missing = produced.iter().filter(|item| !hold.holds(m, item)).count();
        s.missing_items.insert(m.clone(), missing as u64);
    }
    Ok(s)
}

/// Checks that every link transmission has exactly one matching `recv` or
/// `drop`, except packets still in flight when the run ended.
pub fn check_conservation(trace: &Trace) -> Result<(), String> {
    let end = trace
        .iter()
        .rev()
        .find(|r| r.kind == EventKind::End)
        .map(|r| r.ts)
        .ok_or("no end record")?;
    let mut sent: HashMap<i64, (u64, &str)> = HashMap::new();
    let mut outcomes: HashMap<i64, u32> = HashMap::new();
    for r in trace.iter() {
        let (Some(_), Some(pkt)) = (&r.link, r.int("pkt")) else {
            continue;
        };
        match r.kind {
            EventKind::Send => {
                let due = r.int("due").unwrap_or(0).max(0) as u64;
                if sent.insert(pkt, (due, r.link.as_deref().unwrap_or(""))).is_some() {
                    return Err(format!("packet {pkt} sent twice"));
                }
            }
            EventKind::Recv | EventKind::Drop => {
                if !sent.contains_key(&pkt) {
                    return Err(format!("packet {pkt} {:?} without a send", r.kind));
                }
                *outcomes.entry(pkt).or_default() += 1;
            }
            _ => {}
        }
    }
    for (pkt, (due, link)) in sent {
        match outcomes.get(&pkt).copied().unwrap_or(0) {
            1 => {}
            0 if due > end => {}
            n => return Err(format!("packet {pkt} on {link} has {n} outcomes")),
        }
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Format {
    Jsonl,
    Json,
    Csv,
}

impl Format {
    /// Picks a format from the file extension.
    pub fn from_path(p: &Path) -> Option<Format> {
        match p.extension()?.to_str()? {
            "jsonl" => Some(Format::Jsonl),
            "json" => Some(Format::Json),
            "csv" => Some(Format::Csv),
            _ => None,
        }
    }
}

fn create(path: &Path) -> Result<BufWriter<File>, TraceError> {
    Ok(BufWriter::new(File::create(path)?))
}

pub fn write_trace<W: Write>(trace: &Trace, format: Format, mut w: W) -> Result<(), TraceError> {
    match format {
        Format::Jsonl => {
            for r in trace.iter() {
                serde_json::to_writer(&mut w, r)?;
                w.write_all(b"\n")?;
            }
        }
        Format::Json => {
            serde_json::to_writer_pretty(&mut w, trace.records())?;
            w.write_all(b"\n")?;
        }
        Format::Csv => {
            let mut cw = csv::Writer::from_writer(w);
            cw.write_record(["ts", "node", "kind", "protocol", "packet", "name", "link", "extra"])?;
            for r in trace.iter() {
                let v = serde_json::to_value(r)?;
                let field = |k: &str| match &v[k] {
                    serde_json::Value::String(s) => s.clone(),
                    serde_json::Value::Null => String::new(),
                    other => other.to_string(),
                };
                cw.write_record([
                    field("ts"),
                    field("node"),
                    field("kind"),
                    field("protocol"),
                    field("packet"),
                    field("name"),
                    field("link"),
                    v["extra"].to_string(),
                ])?;
            }
            cw.flush()?;
            return Ok(());
        }
    }
    w.flush()?;
    Ok(())
}

pub fn emit_trace(trace: &Trace, format: Format, path: &Path) -> Result<(), TraceError> {
    write_trace(trace, format, create(path)?)
}

#[derive(Serialize)]
struct CsvRow<'a> {
    node: &'a str,
    member: u8,
    data_rx: u64,
    rq_rx: u64,
    rr_rx: u64,
    session_rx: u64,
    interest_rx: u64,
    sync_rx: u64,
    cache_hits: u64,
    aggregations: u64,
    drops: u64,
    validation_failures: u64,
    extra_recovery_packets: u64,
    missing_items: u64,
}

pub fn write_summary<W: Write>(s: &RunSummary, format: Format, mut w: W) -> Result<(), TraceError> {
    match format {
        Format::Json => {
            serde_json::to_writer_pretty(&mut w, &s.to_json())?;
            w.write_all(b"\n")?;
            w.flush()?;
        }
        Format::Jsonl => {
            serde_json::to_writer(&mut w, &s.to_json())?;
            w.write_all(b"\n")?;
            w.flush()?;
        }
        Format::Csv => {
            let mut cw = csv::Writer::from_writer(w);
            for (id, c) in &s.nodes {
                let member = s.extra_recovery_packets.contains_key(id);
                cw.serialize(CsvRow {
                    node: id,
                    member: u8::from(member),
                    data_rx: c.data_rx,
                    rq_rx: c.rq_rx,
                    rr_rx: c.rr_rx,
                    session_rx: c.session_rx,
                    interest_rx: c.interest_rx,
                    sync_rx: c.sync_rx,
                    cache_hits: c.cache_hits,
                    aggregations: c.aggregations,
                    drops: c.drops,
                    validation_failures: c.validation_failures,
                    extra_recovery_packets: s.extra(id),
                    missing_items: s.missing_items.get(id).copied().unwrap_or(0),
                })?;
            }
            cw.flush()?;
        }
    }
    Ok(())
}

pub fn emit_summary(s: &RunSummary, format: Format, path: &Path) -> Result<(), TraceError> {
    write_summary(s, format, create(path)?)
}

pub fn read_jsonl(path: &Path) -> Result<Trace, TraceError> {
    let f = BufReader::new(File::open(path)?);
    let mut records = Vec::new();
    for (i, line) in f.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let r = serde_json::from_str(&line).map_err(|source| TraceError::BadLine {
            line: i + 1,
            source,
        })?;
        records.push(r);
    }
    Ok(Trace::from_records(records))
}
