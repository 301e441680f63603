//! Network graph, link loss models and offline route computation.

use std::cmp::Reverse;
use std::collections::{BTreeMap, BTreeSet, BinaryHeap, HashMap};
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::engine::{RandomSource, SimTime, StreamId};

pub type NodeIdx = usize;
pub type LinkIdx = usize;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum NodeKind {
    Host,
    Router,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Node {
    pub id: String,
    pub kind: NodeKind,
}

/// Selects packets by kind label (`data`, `interest`, `rq`, ...) and/or name.
/// An absent field matches anything.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PacketMatch {
    #[serde(default)]
    pub kind: Option<String>,
    #[serde(default)]
    pub name: Option<String>,
}

impl PacketMatch {
    pub fn matches(&self, kind: &str, name: Option<&str>) -> bool {
        let kind_ok = match &self.kind {
            None => true,
            Some(k) => k == kind || (k == "data" && name_kinds_data(kind)),
        };
        let name_ok = match (&self.name, name) {
            (None, _) => true,
            (Some(want), Some(have)) => want == have,
            (Some(_), None) => false,
        };
        kind_ok && name_ok
    }
}

// `data` selects the payload-carrying packet under either architecture
fn name_kinds_data(kind: &str) -> bool {
    kind == "adu"
}

/// One-shot drop of the first packet matching `rule` sent `from` → `to`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScriptedDrop {
    pub from: String,
    pub to: String,
    #[serde(flatten)]
    pub rule: PacketMatch,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum LossModel {
    #[default]
    None,
    /// Independent per-packet drop probability, applied in each direction.
    Random(f64),
    Scripted(Vec<ScriptedDrop>),
}

#[derive(Debug, Clone, PartialEq)]
pub struct Link {
    pub a: NodeIdx,
    pub b: NodeIdx,
    pub delay: SimTime,
    pub loss: LossModel,
}

impl Link {
    pub fn other(&self, n: NodeIdx) -> NodeIdx {
        if n == self.a {
            self.b
        } else {
            self.a
        }
    }
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum TopologyError {
    #[error("duplicate node id `{0}`")]
    DuplicateNode(String),
    #[error("unknown node `{0}`")]
    UnknownNode(String),
    #[error("duplicate link {0}-{1}")]
    DuplicateLink(String, String),
    #[error("self-loop on `{0}`")]
    SelfLoop(String),
    #[error("link {0}-{1} must have a positive delay")]
    BadDelay(String, String),
    #[error("loss probability {0} outside [0, 1]")]
    BadLossProb(f64),
    #[error("scripted drop {from}>{to} does not lie on link {a}-{b}")]
    BadScriptDirection {
        from: String,
        to: String,
        a: String,
        b: String,
    },
    #[error("graph is disconnected; unreachable pairs: {}", fmt_pairs(.0))]
    DisconnectedGraph(Vec<(String, String)>),
}

fn fmt_pairs(p: &[(String, String)]) -> String {
    let shown: Vec<String> = p.iter().take(8).map(|(a, b)| format!("{a}->{b}")).collect();
    let mut s = shown.join(", ");
    if p.len() > 8 {
        s.push_str(&format!(", ... ({} total)", p.len()));
    }
    s
}

#[derive(Debug, Clone)]
pub struct Topology {
    nodes: Vec<Node>,
    index: HashMap<String, NodeIdx>,
    links: Vec<Link>,
    /// Per node: (neighbor, link), sorted by neighbor id.
    adj: Vec<Vec<(NodeIdx, LinkIdx)>>,
}

impl Topology {
    pub fn new(nodes: Vec<Node>) -> Result<Self, TopologyError> {
        let mut index = HashMap::new();
        for (i, n) in nodes.iter().enumerate() {
            if index.insert(n.id.clone(), i).is_some() {
                return Err(TopologyError::DuplicateNode(n.id.clone()));
            }
        }
        let adj = vec![Vec::new(); nodes.len()];
        Ok(Topology {
            nodes,
            index,
            links: Vec::new(),
            adj,
        })
    }

    pub fn add_link(
        &mut self,
        a: &str,
        b: &str,
        delay: SimTime,
        loss: LossModel,
    ) -> Result<LinkIdx, TopologyError> {
        let ai = self.idx(a)?;
        let bi = self.idx(b)?;
        if ai == bi {
            return Err(TopologyError::SelfLoop(a.to_string()));
        }
        if delay == SimTime::ZERO {
            return Err(TopologyError::BadDelay(a.to_string(), b.to_string()));
        }
        if self.link_between(ai, bi).is_some() {
            return Err(TopologyError::DuplicateLink(a.to_string(), b.to_string()));
        }
        match &loss {
            LossModel::Random(p) if !(0.0..=1.0).contains(p) => {
                return Err(TopologyError::BadLossProb(*p))
            }
            LossModel::Scripted(drops) => {
                for d in drops {
                    let ok = (d.from == a && d.to == b) || (d.from == b && d.to == a);
                    if !ok {
                        return Err(TopologyError::BadScriptDirection {
                            from: d.from.clone(),
                            to: d.to.clone(),
                            a: a.to_string(),
                            b: b.to_string(),
                        });
                    }
                }
            }
            _ => {}
        }
        let li = self.links.len();
        self.links.push(Link {
            a: ai,
            b: bi,
            delay,
            loss,
        });
        self.adj[ai].push((bi, li));
        self.adj[bi].push((ai, li));
        let nodes = &self.nodes;
        for list in [ai, bi] {
            self.adj[list].sort_by(|x, y| nodes[x.0].id.cmp(&nodes[y.0].id));
        }
        Ok(li)
    }

    /// Appends a scripted drop to an existing link, converting a lossless
    /// link into a scripted one.
    pub fn add_scripted_drop(&mut self, drop: ScriptedDrop) -> Result<(), TopologyError> {
        let from = self.idx(&drop.from)?;
        let to = self.idx(&drop.to)?;
        let li = self.link_between(from, to).ok_or_else(|| {
            TopologyError::BadScriptDirection {
                from: drop.from.clone(),
                to: drop.to.clone(),
                a: drop.from.clone(),
                b: drop.to.clone(),
            }
        })?;
        let link = &mut self.links[li];
        match &mut link.loss {
            LossModel::None => link.loss = LossModel::Scripted(vec![drop]),
            LossModel::Scripted(v) => v.push(drop),
            LossModel::Random(_) => {
                return Err(TopologyError::BadScriptDirection {
                    from: drop.from.clone(),
                    to: drop.to.clone(),
                    a: "random-loss link".into(),
                    b: "scripted".into(),
                })
            }
        }
        Ok(())
    }

    pub fn idx(&self, id: &str) -> Result<NodeIdx, TopologyError> {
        self.index
            .get(id)
            .copied()
            .ok_or_else(|| TopologyError::UnknownNode(id.to_string()))
    }

    pub fn node(&self, i: NodeIdx) -> &Node {
        &self.nodes[i]
    }

    pub fn nodes(&self) -> &[Node] {
        &self.nodes
    }

    pub fn links(&self) -> &[Link] {
        &self.links
    }

    pub fn link(&self, li: LinkIdx) -> &Link {
        &self.links[li]
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn neighbors(&self, n: NodeIdx) -> &[(NodeIdx, LinkIdx)] {
        &self.adj[n]
    }

    pub fn link_between(&self, a: NodeIdx, b: NodeIdx) -> Option<LinkIdx> {
        self.adj[a].iter().find(|(n, _)| *n == b).map(|(_, l)| *l)
    }

    pub fn is_host(&self, n: NodeIdx) -> bool {
        self.nodes[n].kind == NodeKind::Host
    }

    /// `"A>B"` label for the directed link.
    pub fn link_label(&self, from: NodeIdx, to: NodeIdx) -> String {
        format!("{}>{}", self.nodes[from].id, self.nodes[to].id)
    }

    /// The topology used by both worked examples: producer E behind R2, hosts
    /// A-C behind R4, D behind R3, X behind R6 (via R3). All links 10ms.
    pub fn canonical() -> Self {
        let hosts = ["A", "B", "C", "D", "E", "X"];
        let routers = ["R2", "R3", "R4", "R6"];
        let mut nodes: Vec<Node> = hosts
            .iter()
            .map(|h| Node {
                id: h.to_string(),
                kind: NodeKind::Host,
            })
            .collect();
        nodes.extend(routers.iter().map(|r| Node {
            id: r.to_string(),
            kind: NodeKind::Router,
        }));
        let mut t = Topology::new(nodes).expect("static ids are unique");
        let d = SimTime::from_millis(10);
        for (a, b) in CANONICAL_LINKS {
            t.add_link(a, b, d, LossModel::None)
                .expect("static links are valid");
        }
        t
    }
}

pub const CANONICAL_LINKS: [(&str, &str); 9] = [
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

/// All-pairs shortest delays and next hops.
#[derive(Debug, Clone)]
pub struct RouteTables {
    dist: Vec<Vec<u64>>,
    next_hop: Vec<Vec<Option<NodeIdx>>>,
    hops: Vec<Vec<u32>>,
}

impl RouteTables {
    pub fn dist(&self, from: NodeIdx, to: NodeIdx) -> SimTime {
        SimTime::from_micros(self.dist[from][to])
    }

    pub fn next_hop(&self, from: NodeIdx, to: NodeIdx) -> Option<NodeIdx> {
        self.next_hop[from][to]
    }

    /// Link count along the chosen next-hop path.
    pub fn hop_count(&self, from: NodeIdx, to: NodeIdx) -> u32 {
        self.hops[from][to]
    }

    pub fn path(&self, from: NodeIdx, to: NodeIdx) -> Vec<NodeIdx> {
        let mut p = vec![from];
        let mut cur = from;
        while cur != to {
            cur = self.next_hop[cur][to].expect("connected graph");
            p.push(cur);
        }
        p
    }

    /// Source-rooted shortest-path tree reaching `members`. Each node's parent
    /// is its next hop toward `root`, so the tree is exactly the reverse of the
    /// unicast paths members use to reach the root.
    pub fn multicast_tree(&self, members: &[NodeIdx], root: NodeIdx) -> McastTree {
        let mut edges = BTreeSet::new();
        for &m in members {
            let mut cur = m;
            while cur != root {
                let parent = self.next_hop[cur][root].expect("connected graph");
                if !edges.insert((parent, cur)) {
                    break;
                }
                cur = parent;
            }
        }
        McastTree::from_edges(root, edges)
    }
}

/// Directed edge set of a delivery tree.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct McastTree {
    pub root: NodeIdx,
    pub edges: BTreeSet<(NodeIdx, NodeIdx)>,
    children: BTreeMap<NodeIdx, Vec<NodeIdx>>,
}

impl McastTree {
    pub fn from_edges(root: NodeIdx, edges: BTreeSet<(NodeIdx, NodeIdx)>) -> Self {
        let mut children: BTreeMap<NodeIdx, Vec<NodeIdx>> = BTreeMap::new();
        for &(p, c) in &edges {
            children.entry(p).or_default().push(c);
        }
        McastTree {
            root,
            edges,
            children,
        }
    }

    pub fn children(&self, n: NodeIdx) -> &[NodeIdx] {
        self.children.get(&n).map(Vec::as_slice).unwrap_or(&[])
    }

    /// Nodes touched by the tree, including the root.
    pub fn nodes(&self) -> BTreeSet<NodeIdx> {
        let mut s = BTreeSet::from([self.root]);
        for &(p, c) in &self.edges {
            s.insert(p);
            s.insert(c);
        }
        s
    }

    /// Undirected neighbor sets, used for shared-tree flooding.
    pub fn undirected_neighbors(&self) -> BTreeMap<NodeIdx, BTreeSet<NodeIdx>> {
        let mut m: BTreeMap<NodeIdx, BTreeSet<NodeIdx>> = BTreeMap::new();
        for &(p, c) in &self.edges {
            m.entry(p).or_default().insert(c);
            m.entry(c).or_default().insert(p);
        }
        m
    }

    /// Nodes in the subtree below `v` (inclusive).
    pub fn subtree(&self, v: NodeIdx) -> BTreeSet<NodeIdx> {
        let mut out = BTreeSet::new();
        let mut stack = vec![v];
        while let Some(n) = stack.pop() {
            if out.insert(n) {
                stack.extend_from_slice(self.children(n));
            }
        }
        out
    }
}

/// Dijkstra from every node. Next-hop ties break toward the neighbor with the
/// lexicographically smallest id.
pub fn shortest_paths(topo: &Topology) -> Result<RouteTables, TopologyError> {
    let n = topo.len();
    let mut dist = vec![vec![u64::MAX; n]; n];
    for (src, row) in dist.iter_mut().enumerate() {
        row[src] = 0;
        let mut heap = BinaryHeap::new();
        heap.push(Reverse((0u64, src)));
        while let Some(Reverse((d, u))) = heap.pop() {
            if d > row[u] {
                continue;
            }
            for &(v, li) in topo.neighbors(u) {
                let nd = d + topo.link(li).delay.as_micros();
                if nd < row[v] {
                    row[v] = nd;
                    heap.push(Reverse((nd, v)));
                }
            }
        }
    }
    let mut unreachable = Vec::new();
    for (u, row) in dist.iter().enumerate() {
        for (v, d) in row.iter().enumerate() {
            if *d == u64::MAX {
                unreachable.push((topo.node(u).id.clone(), topo.node(v).id.clone()));
            }
        }
    }
    if !unreachable.is_empty() {
        return Err(TopologyError::DisconnectedGraph(unreachable));
    }
    let mut next_hop = vec![vec![None; n]; n];
    for u in 0..n {
        for v in 0..n {
            if u == v {
                continue;
            }
            // neighbors are sorted by id, so the first tight edge wins ties
            next_hop[u][v] = topo
                .neighbors(u)
                .iter()
                .find(|(nb, li)| topo.link(*li).delay.as_micros() + dist[*nb][v] == dist[u][v])
                .map(|(nb, _)| *nb);
        }
    }
    let hops: Vec<Vec<u32>> = (0..n)
        .map(|u| {
            (0..n)
                .map(|v| {
                    let mut cur = u;
                    let mut h = 0;
                    while cur != v {
                        cur = next_hop[cur][v].expect("reachable");
                        h += 1;
                    }
                    h
                })
                .collect()
        })
        .collect();
    Ok(RouteTables {
        dist,
        next_hop,
        hops,
    })
}

/// Convenience wrapper resolving ids and checking connectivity.
pub fn multicast_tree(
    topo: &Topology,
    members: &[&str],
    root: &str,
) -> Result<McastTree, TopologyError> {
    let routes = shortest_paths(topo)?;
    let root = topo.idx(root)?;
    let members = members
        .iter()
        .map(|m| topo.idx(m))
        .collect::<Result<Vec<_>, _>>()?;
    Ok(routes.multicast_tree(&members, root))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DropReason {
    Random,
    Scripted,
}

impl fmt::Display for DropReason {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            DropReason::Random => "random-loss",
            DropReason::Scripted => "scripted-loss",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Transmit {
    Deliver { at: SimTime },
    Drop(DropReason),
}

/// Mutable per-run loss state: which scripted drops have fired.
#[derive(Debug, Clone)]
pub struct LossState {
    fired: Vec<Vec<bool>>,
}

impl LossState {
    pub fn new(topo: &Topology) -> Self {
        LossState {
            fired: topo
                .links()
                .iter()
                .map(|l| match &l.loss {
                    LossModel::Scripted(v) => vec![false; v.len()],
                    _ => Vec::new(),
                })
                .collect(),
        }
    }

    /// Decides the fate of one packet sent `from` across `link`.
    #[allow(clippy::too_many_arguments)]
    pub fn transmit(
        &mut self,
        topo: &Topology,
        rng: &mut RandomSource,
        link: LinkIdx,
        from: NodeIdx,
        kind: &str,
        name: Option<&str>,
        now: SimTime,
    ) -> Transmit {
        let l = topo.link(link);
        let to = l.other(from);
        match &l.loss {
            LossModel::None => {}
            LossModel::Random(p) => {
                if *p > 0.0 {
                    let stream = StreamId::new(format!(
                        "link:{}-{}:{}",
                        topo.node(l.a).id,
                        topo.node(l.b).id,
                        topo.node(from).id
                    ));
                    let u = rng.uniform(&stream, 0.0, 1.0).expect("valid range");
                    if u < *p {
                        return Transmit::Drop(DropReason::Random);
                    }
                }
            }
            LossModel::Scripted(drops) => {
                for (i, d) in drops.iter().enumerate() {
                    if self.fired[link][i] {
                        continue;
                    }
                    if d.from == topo.node(from).id
                        && d.to == topo.node(to).id
                        && d.rule.matches(kind, name)
                    {
                        self.fired[link][i] = true;
                        return Transmit::Drop(DropReason::Scripted);
                    }
                }
            }
        }
        Transmit::Deliver { at: now + l.delay }
    }
}
