//! Scenario documents: loading, validation and resolution into the
//! runtime configuration consumed by the simulator.

use std::collections::BTreeMap;
use std::fmt;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::engine::SimTime;
use crate::multicast::ScopeLimit;
use crate::ndn::{Name, NamePattern, TrustSchema};
use crate::srm::SrmConfig;
use crate::svs::SvsConfig;
use crate::topology::{
    shortest_paths, LossModel, Node, NodeIdx, NodeKind, RouteTables, ScriptedDrop, Topology,
};

#[derive(Debug, Error)]
pub enum ScenarioError {
    #[error("scenario does not parse at `{path}`: {msg}")]
    Parse { path: String, msg: String },
    #[error("invalid `{key}`: {msg}")]
    Invalid { key: String, msg: String },
    #[error("unknown preset or missing file `{0}`")]
    UnknownPreset(String),
    #[error("cannot read {path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
}

fn invalid(key: impl Into<String>, msg: impl fmt::Display) -> ScenarioError {
    ScenarioError::Invalid {
        key: key.into(),
        msg: msg.to_string(),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Protocol {
    Srm,
    Ndn,
}

impl fmt::Display for Protocol {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Protocol::Srm => "srm",
            Protocol::Ndn => "ndn",
        })
    }
}

impl FromStr for Protocol {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim() {
            "srm" => Ok(Protocol::Srm),
            "ndn" => Ok(Protocol::Ndn),
            other => Err(format!("unknown protocol `{other}` (expected srm or ndn)")),
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TopologySpec {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub preset: Option<String>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub nodes: Vec<Node>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub links: Vec<LinkSpec>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LinkSpec {
    pub a: String,
    pub b: String,
    pub delay_ms: f64,
    #[serde(default)]
    pub loss: LossModel,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GroupSpec {
    pub id: String,
    pub members: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SrmSpec {
    pub c1: f64,
    pub c2: f64,
    pub d1: f64,
    pub d2: f64,
    pub session_period_ms: f64,
    pub session_jitter: f64,
    pub ideal_mode: bool,
    pub rq_scope_hops: Option<u32>,
    pub default_dist_ms: f64,
    pub max_backoff: u32,
    pub hold_down: f64,
}

impl Default for SrmSpec {
    fn default() -> Self {
        let c = SrmConfig::default();
        SrmSpec {
            c1: c.c1,
            c2: c.c2,
            d1: c.d1,
            d2: c.d2,
            session_period_ms: c.session_period.as_millis_f64(),
            session_jitter: c.session_jitter,
            ideal_mode: c.ideal_mode,
            rq_scope_hops: None,
            default_dist_ms: c.default_dist.as_millis_f64(),
            max_backoff: c.max_backoff,
            hold_down: c.hold_down,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct NdnSpec {
    pub interest_lifetime_ms: f64,
    pub retx_suppression_ms: f64,
    pub cs_capacity: Option<usize>,
    pub consumer_retx_ms: Option<f64>,
}

impl Default for NdnSpec {
    fn default() -> Self {
        NdnSpec {
            interest_lifetime_ms: 4000.0,
            retx_suppression_ms: 100.0,
            cs_capacity: None,
            consumer_retx_ms: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SvsSpec {
    pub sync_prefix: String,
    pub refresh_period_ms: f64,
    pub suppression_window_ms: f64,
    pub refresh_jitter: f64,
}

impl Default for SvsSpec {
    fn default() -> Self {
        let c = SvsConfig::default();
        SvsSpec {
            sync_prefix: c.sync_prefix.to_string(),
            refresh_period_ms: c.refresh_period.as_millis_f64(),
            suppression_window_ms: c.suppression_window.as_millis_f64(),
            refresh_jitter: c.refresh_jitter,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrustSpec {
    pub anchors: Vec<String>,
    /// `(data pattern, signer pattern)` pairs.
    pub rules: Vec<(String, String)>,
}

impl Default for TrustSpec {
    fn default() -> Self {
        TrustSpec {
            anchors: vec!["/mgr/KEY/1".into()],
            rules: TrustSchema::default_rules(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScheduleEntry {
    pub member: String,
    pub count: u64,
    pub start_ms: f64,
    #[serde(default = "default_interval")]
    pub interval_ms: f64,
    #[serde(default = "default_payload")]
    pub payload_size: u32,
    /// Sign with another member's key instead of the producer's own.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub signer: Option<String>,
}

fn default_interval() -> f64 {
    1000.0
}

fn default_payload() -> u32 {
    100
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AppSpec {
    pub schedule: Vec<ScheduleEntry>,
    /// Items `1..=n` per producer that every member holds at start.
    pub initial: BTreeMap<String, u64>,
    pub max_retx: u32,
    pub consumer_retx_ms: Option<f64>,
}

impl Default for AppSpec {
    fn default() -> Self {
        AppSpec {
            schedule: Vec::new(),
            initial: BTreeMap::new(),
            max_retx: 10,
            consumer_retx_ms: None,
        }
    }
}

fn default_seed() -> u64 {
    1
}

fn default_protocols() -> Vec<Protocol> {
    vec![Protocol::Srm, Protocol::Ndn]
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Scenario {
    pub name: String,
    #[serde(default = "default_seed")]
    pub seed: u64,
    pub end_ms: u64,
    #[serde(default = "default_protocols")]
    pub protocols: Vec<Protocol>,
    pub topology: TopologySpec,
    #[serde(default)]
    pub groups: Vec<GroupSpec>,
    #[serde(default)]
    pub loss_scripts: Vec<ScriptedDrop>,
    #[serde(default)]
    pub srm: SrmSpec,
    #[serde(default)]
    pub ndn: NdnSpec,
    #[serde(default)]
    pub svs: SvsSpec,
    #[serde(default)]
    pub trust: TrustSpec,
    #[serde(default)]
    pub app: AppSpec,
}

/// JSON Schema describing the scenario document.
pub const SCHEMA: &str = include_str!("../scenarios/schema.json");

pub const PRESETS: [(&str, &str); 3] = [
    ("fig1", include_str!("../scenarios/fig1.json")),
    ("fig3", include_str!("../scenarios/fig3.json")),
    ("fig3-loss", include_str!("../scenarios/fig3-loss.json")),
];

/// Network-level NDN settings resolved to simulator units.
#[derive(Debug, Clone, PartialEq)]
pub struct NdnConfig {
    pub interest_lifetime: SimTime,
    pub retx_suppression: SimTime,
    pub cs_capacity: Option<usize>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Production {
    pub member: NodeIdx,
    pub at: SimTime,
    pub payload_size: u32,
    pub signer: Option<NodeIdx>,
}

/// Everything a run needs, validated and in simulator units.
#[derive(Debug, Clone)]
pub struct Resolved {
    pub name: String,
    pub seed: u64,
    pub end: SimTime,
    pub protocols: Vec<Protocol>,
    pub topo: Topology,
    pub routes: RouteTables,
    pub group_id: String,
    pub members: Vec<NodeIdx>,
    pub srm: SrmConfig,
    pub ndn: NdnConfig,
    pub svs: SvsConfig,
    pub trust: TrustSchema,
    pub productions: Vec<Production>,
    pub initial: BTreeMap<NodeIdx, u64>,
    pub max_retx: u32,
    /// Initial consumer retransmission timeout, when configured.
    pub consumer_retx: Option<SimTime>,
}

fn millis(key: &str, v: f64, allow_zero: bool) -> Result<SimTime, ScenarioError> {
    match SimTime::from_millis_f64_exact(v) {
        Some(t) if allow_zero || t > SimTime::ZERO => Ok(t),
        _ if allow_zero => Err(invalid(key, format!("{v} must be a non-negative whole number of microseconds"))),
        _ => Err(invalid(key, format!("{v} must be positive (microsecond resolution)"))),
    }
}

fn non_negative(key: &str, v: f64) -> Result<f64, ScenarioError> {
    if v.is_finite() && v >= 0.0 {
        Ok(v)
    } else {
        Err(invalid(key, format!("{v} must be a finite non-negative number")))
    }
}

fn fraction(key: &str, v: f64) -> Result<f64, ScenarioError> {
    if v.is_finite() && (0.0..1.0).contains(&v) {
        Ok(v)
    } else {
        Err(invalid(key, format!("{v} must lie in [0, 1)")))
    }
}

impl Scenario {
    pub fn from_json_str(text: &str) -> Result<Scenario, ScenarioError> {
        let de = &mut serde_json::Deserializer::from_str(text);
        let sc: Scenario = serde_path_to_error::deserialize(de).map_err(|e| ScenarioError::Parse {
            path: match e.path().to_string() {
                p if p == "." => "<root>".to_string(),
                p => p,
            },
            msg: e.inner().to_string(),
        })?;
        sc.resolve()?;
        Ok(sc)
    }

    pub fn from_path(path: &Path) -> Result<Scenario, ScenarioError> {
        let text = std::fs::read_to_string(path).map_err(|source| ScenarioError::Io {
            path: path.display().to_string(),
            source,
        })?;
        Self::from_json_str(&text)
    }

    pub fn preset(name: &str) -> Result<Scenario, ScenarioError> {
        let (_, text) = PRESETS
            .iter()
            .find(|(n, _)| *n == name)
            .ok_or_else(|| ScenarioError::UnknownPreset(name.to_string()))?;
        Self::from_json_str(text)
    }

    /// Resolves a CLI target: an existing file, a preset name, or
    /// `<preset>.<protocol>` which also narrows the protocol list.
    pub fn load_target(target: &str) -> Result<Scenario, ScenarioError> {
        let p = Path::new(target);
        if p.is_file() {
            return Self::from_path(p);
        }
        if let Ok(sc) = Self::preset(target) {
            return Ok(sc);
        }
        if let Some((base, proto)) = target.rsplit_once('.') {
            if let (Ok(mut sc), Ok(proto)) = (Self::preset(base), proto.parse::<Protocol>()) {
                sc.protocols = vec![proto];
                return Ok(sc);
            }
        }
        Err(ScenarioError::UnknownPreset(target.to_string()))
    }

    pub fn to_json_string(&self) -> String {
        let v = serde_json::to_value(self).expect("scenario is plain data");
        serde_json::to_string_pretty(&v).expect("value serializes")
    }

    fn build_topology(&self) -> Result<Topology, ScenarioError> {
        let spec = &self.topology;
        let mut topo = match (&spec.preset, spec.nodes.is_empty()) {
            (Some(p), true) if p == "canonical" => Topology::canonical(),
            (Some(p), true) => return Err(invalid("topology.preset", format!("unknown preset `{p}`"))),
            (Some(_), false) => {
                return Err(invalid("topology", "give either `preset` or `nodes`/`links`, not both"))
            }
            (None, true) => return Err(invalid("topology.nodes", "no nodes given")),
            (None, false) => {
                let mut t = Topology::new(spec.nodes.clone()).map_err(|e| invalid("topology.nodes", e))?;
                for (i, l) in spec.links.iter().enumerate() {
                    let key = format!("topology.links[{i}]");
                    let delay = millis(&format!("{key}.delay_ms"), l.delay_ms, false)?;
                    t.add_link(&l.a, &l.b, delay, l.loss.clone())
                        .map_err(|e| invalid(key.clone(), e))?;
                }
                t
            }
        };
        for (i, d) in self.loss_scripts.iter().enumerate() {
            topo.add_scripted_drop(d.clone())
                .map_err(|e| invalid(format!("loss_scripts[{i}]"), e))?;
        }
        Ok(topo)
    }

    /// Validates every field and converts to runtime configuration.
    pub fn resolve(&self) -> Result<Resolved, ScenarioError> {
        if self.end_ms == 0 {
            return Err(invalid("end_ms", "must be positive"));
        }
        if self.protocols.is_empty() {
            return Err(invalid("protocols", "list at least one of srm, ndn"));
        }
        let topo = self.build_topology()?;
        let routes = shortest_paths(&topo).map_err(|e| invalid("topology", e))?;

        let (group_id, member_ids): (String, Vec<String>) = match self.groups.as_slice() {
            [] => (
                "g".into(),
                topo.nodes()
                    .iter()
                    .filter(|n| n.kind == NodeKind::Host)
                    .map(|n| n.id.clone())
                    .collect(),
            ),
            [g] => (g.id.clone(), g.members.clone()),
            _ => return Err(invalid("groups", "exactly one group is supported")),
        };
        let mut members = Vec::new();
        for (i, m) in member_ids.iter().enumerate() {
            let key = format!("groups[0].members[{i}]");
            let idx = topo.idx(m).map_err(|e| invalid(key.clone(), e))?;
            if !topo.is_host(idx) {
                return Err(invalid(key, format!("`{m}` is a router; members must be hosts")));
            }
            if members.contains(&idx) {
                return Err(invalid(key, format!("`{m}` listed twice")));
            }
            members.push(idx);
        }
        if members.is_empty() {
            return Err(invalid("groups[0].members", "group has no members"));
        }
        members.sort_by(|a, b| topo.node(*a).id.cmp(&topo.node(*b).id));
        let member_idx = |key: &str, id: &str| -> Result<NodeIdx, ScenarioError> {
            topo.idx(id)
                .ok()
                .filter(|i| members.contains(i))
                .ok_or_else(|| invalid(key, format!("`{id}` is not a group member")))
        };

        let s = &self.srm;
        let srm = SrmConfig {
            c1: non_negative("srm.c1", s.c1)?,
            c2: non_negative("srm.c2", s.c2)?,
            d1: non_negative("srm.d1", s.d1)?,
            d2: non_negative("srm.d2", s.d2)?,
            session_period: millis("srm.session_period_ms", s.session_period_ms, false)?,
            session_jitter: fraction("srm.session_jitter", s.session_jitter)?,
            ideal_mode: s.ideal_mode,
            rq_scope: match s.rq_scope_hops {
                Some(0) => return Err(invalid("srm.rq_scope_hops", "must be at least 1 or null")),
                Some(h) => ScopeLimit::hops(h),
                None => ScopeLimit::UNLIMITED,
            },
            default_dist: millis("srm.default_dist_ms", s.default_dist_ms, false)?,
            max_backoff: if s.max_backoff <= 20 {
                s.max_backoff
            } else {
                return Err(invalid("srm.max_backoff", "must be at most 20"));
            },
            hold_down: non_negative("srm.hold_down", s.hold_down)?,
        };
        if srm.c1 + srm.c2 == 0.0 {
            return Err(invalid("srm.c2", "c1 + c2 must be positive"));
        }

        let n = &self.ndn;
        let ndn = NdnConfig {
            interest_lifetime: millis("ndn.interest_lifetime_ms", n.interest_lifetime_ms, false)?,
            retx_suppression: millis("ndn.retx_suppression_ms", n.retx_suppression_ms, true)?,
            cs_capacity: n.cs_capacity,
        };
        let ndn_retx = n
            .consumer_retx_ms
            .map(|v| millis("ndn.consumer_retx_ms", v, false))
            .transpose()?;
        let app_retx = self
            .app
            .consumer_retx_ms
            .map(|v| millis("app.consumer_retx_ms", v, false))
            .transpose()?;

        let v = &self.svs;
        let sync_prefix: Name = v
            .sync_prefix
            .parse()
            .map_err(|e| invalid("svs.sync_prefix", e))?;
        let svs = SvsConfig {
            sync_prefix: sync_prefix.clone(),
            refresh_period: millis("svs.refresh_period_ms", v.refresh_period_ms, false)?,
            suppression_window: millis("svs.suppression_window_ms", v.suppression_window_ms, true)?,
            refresh_jitter: fraction("svs.refresh_jitter", v.refresh_jitter)?,
        };
        for &m in &members {
            let host: Name = Name::from_components([topo.node(m).id.as_str()])
                .map_err(|e| invalid("groups[0].members", e))?;
            if host.is_prefix_of(&sync_prefix) || sync_prefix.is_prefix_of(&host) {
                return Err(invalid("svs.sync_prefix", format!("collides with member prefix {host}")));
            }
        }

        let mut anchors = Vec::new();
        for (i, a) in self.trust.anchors.iter().enumerate() {
            let key = format!("trust.anchors[{i}]");
            let name: Name = a.parse().map_err(|e| invalid(key.clone(), e))?;
            if name.len() != 3 || name.components()[1] != "KEY" {
                return Err(invalid(key, "anchor must be named /<entity>/KEY/<id>"));
            }
            anchors.push(name);
        }
        if anchors.is_empty() {
            return Err(invalid("trust.anchors", "at least one anchor is required"));
        }
        for (i, (d, sg)) in self.trust.rules.iter().enumerate() {
            d.parse::<NamePattern>()
                .map_err(|e| invalid(format!("trust.rules[{i}][0]"), e))?;
            sg.parse::<NamePattern>()
                .map_err(|e| invalid(format!("trust.rules[{i}][1]"), e))?;
        }
        let trust = TrustSchema::from_strings(&self.trust.rules, &anchors)
            .map_err(|e| invalid("trust.rules", e))?;

        let mut productions = Vec::new();
        for (i, e) in self.app.schedule.iter().enumerate() {
            let key = format!("app.schedule[{i}]");
            let member = member_idx(&format!("{key}.member"), &e.member)?;
            let start = millis(&format!("{key}.start_ms"), e.start_ms, true)?;
            let interval = millis(&format!("{key}.interval_ms"), e.interval_ms, false)?;
            let signer = e
                .signer
                .as_deref()
                .map(|s| member_idx(&format!("{key}.signer"), s))
                .transpose()?;
            for k in 0..e.count {
                let at = SimTime::from_micros(start.as_micros() + k * interval.as_micros());
                productions.push(Production {
                    member,
                    at,
                    payload_size: e.payload_size,
                    signer,
                });
            }
        }
        let mut initial = BTreeMap::new();
        for (p, &n) in &self.app.initial {
            initial.insert(member_idx(&format!("app.initial.{p}"), p)?, n);
        }

        Ok(Resolved {
            name: self.name.clone(),
            seed: self.seed,
            end: SimTime::from_millis(self.end_ms),
            protocols: self.protocols.clone(),
            topo,
            routes,
            group_id,
            members,
            srm,
            ndn,
            svs,
            trust,
            productions,
            initial,
            max_retx: self.app.max_retx,
            consumer_retx: app_retx.or(ndn_retx),
        })
    }
}

/// Network used when a caller wants a quick custom topology in code.
pub fn inline_topology(nodes: &[(&str, NodeKind)], links: &[(&str, &str, f64)]) -> TopologySpec {
    TopologySpec {
        preset: None,
        nodes: nodes
            .iter()
            .map(|(id, kind)| Node {
                id: id.to_string(),
                kind: *kind,
            })
            .collect(),
        links: links
            .iter()
            .map(|(a, b, d)| LinkSpec {
                a: a.to_string(),
                b: b.to_string(),
                delay_ms: *d,
                loss: LossModel::None,
            })
            .collect(),
    }
}
