//! One simulation run: wires the engine, links, and either protocol stack
//! together and records the canonical trace.

use std::collections::BTreeMap;

use crate::app::{AppError, Consumer, Timeout};
use crate::engine::{Engine, SimTime, StreamId, Target};
use crate::error::SimError;
use crate::multicast::{McastGroup, McastHeader, Multicast, ScopeLimit};
use crate::ndn::{
    sign, validate, CertStore, Certificate, DataPacket, Face, Fib, Forwarder, FwdAction, Interest,
    Name, Validation,
};
use crate::scenario::{Protocol, Resolved};
use crate::srm::{AduId, Arrival, Member, SrmEnv, SrmPacket, SrmTimer};
use crate::svs::{StateVector, SvsEnv, SvsTimer, SyncState};
use crate::topology::{LossState, NodeIdx, RouteTables, Transmit};
use crate::trace::{summarize, EventKind, Extra, RunSummary, Trace, TraceProtocol, TraceRecord};

#[derive(Debug, Clone)]
enum Wire {
    Srm(SrmPacket, McastHeader),
    Interest(Interest),
    Data(DataPacket),
}

#[derive(Debug, Clone)]
enum Ev {
    Arrive { from: NodeIdx, pkt: u64, wire: Wire },
    Srm(SrmTimer),
    Svs(SvsTimer),
    Retx(Name),
    PitExpire(Name),
    Produce(usize),
}

/// Counters kept by the protocol modules themselves, independent of the
/// trace, for cross-checking the trace-derived summary.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct LiveCounters {
    pub rq_sent: u64,
    pub rr_sent: u64,
    pub sync_sent: u64,
    pub give_ups: u64,
    pub cache_hits: BTreeMap<String, u64>,
    pub aggregations: BTreeMap<String, u64>,
    /// Items each member still lacks, from protocol state.
    pub missing: BTreeMap<String, u64>,
    /// Final sync state per member (NDN runs only).
    pub vectors: BTreeMap<String, StateVector>,
}

#[derive(Debug, Clone)]
pub struct RunOutput {
    pub protocol: Protocol,
    pub trace: Trace,
    pub summary: RunSummary,
    pub live: LiveCounters,
}

fn ex<const N: usize>(pairs: [(&str, Extra); N]) -> BTreeMap<String, Extra> {
    pairs.into_iter().map(|(k, v)| (k.to_string(), v)).collect()
}

enum SrmOut {
    Multicast(SrmPacket, ScopeLimit),
    Delivered(AduId, Arrival),
    Suppressed(&'static str, AduId),
}

struct SrmCtx<'a> {
    me: NodeIdx,
    stream: StreamId,
    engine: &'a mut Engine<Ev>,
    others: &'a BTreeMap<NodeIdx, Member>,
    routes: &'a RouteTables,
    ids: &'a [String],
    out: Vec<SrmOut>,
}

impl SrmCtx<'_> {
    fn nearest(&self, mut cands: Vec<NodeIdx>, to: NodeIdx) -> Option<NodeIdx> {
        cands.sort_by(|&a, &b| {
            (self.routes.dist(a, to), &self.ids[a]).cmp(&(self.routes.dist(b, to), &self.ids[b]))
        });
        cands.first().copied()
    }
}

impl SrmEnv for SrmCtx<'_> {
    fn now(&self) -> SimTime {
        self.engine.now()
    }

    fn uniform(&mut self, lo: f64, hi: f64) -> f64 {
        self.engine.uniform(&self.stream, lo, hi).expect("ordered timer window")
    }

    fn schedule(&mut self, delay: SimTime, timer: SrmTimer) -> crate::engine::EventHandle {
        self.engine
            .schedule_in(delay, Target::Node(self.me), Ev::Srm(timer))
    }

    fn cancel(&mut self, h: crate::engine::EventHandle) {
        self.engine.cancel(h);
    }

    fn multicast(&mut self, pkt: SrmPacket, scope: ScopeLimit) {
        self.out.push(SrmOut::Multicast(pkt, scope));
    }

    fn delivered(&mut self, id: AduId, how: Arrival) {
        self.out.push(SrmOut::Delivered(id, how));
    }

    fn suppressed(&mut self, kind: &'static str, id: AduId) {
        self.out.push(SrmOut::Suppressed(kind, id));
    }

    // the caller is itself a loser when asking
    fn ideal_requester(&self, id: AduId) -> Option<NodeIdx> {
        let mut c: Vec<NodeIdx> = self
            .others
            .values()
            .filter(|m| m.me != id.producer && !m.holds(id))
            .map(|m| m.me)
            .collect();
        c.push(self.me);
        self.nearest(c, id.producer)
    }

    // the caller is itself a holder when asking
    fn ideal_replier(&self, id: AduId, requester: NodeIdx) -> Option<NodeIdx> {
        let mut c: Vec<NodeIdx> = self
            .others
            .values()
            .filter(|m| m.holds(id))
            .map(|m| m.me)
            .collect();
        c.push(self.me);
        self.nearest(c, requester)
    }
}

enum SvsOut {
    Send(StateVector),
    Suppressed,
}

struct SvsCtx<'a> {
    me: NodeIdx,
    stream: StreamId,
    engine: &'a mut Engine<Ev>,
    out: Vec<SvsOut>,
}

impl SvsEnv for SvsCtx<'_> {
    fn now(&self) -> SimTime {
        self.engine.now()
    }

    fn uniform(&mut self, lo: f64, hi: f64) -> f64 {
        self.engine.uniform(&self.stream, lo, hi).expect("ordered window")
    }

    fn schedule(&mut self, delay: SimTime, timer: SvsTimer) -> crate::engine::EventHandle {
        self.engine
            .schedule_in(delay, Target::Node(self.me), Ev::Svs(timer))
    }

    fn cancel(&mut self, h: crate::engine::EventHandle) {
        self.engine.cancel(h);
    }

    fn send_sync(&mut self, vector: &StateVector) {
        self.out.push(SvsOut::Send(vector.clone()));
    }

    fn suppressed(&mut self) {
        self.out.push(SvsOut::Suppressed);
    }
}

struct NdnMember {
    svs: SyncState,
    consumer: Consumer,
    produced: u64,
    signers: BTreeMap<u64, NodeIdx>,
}

struct Sim<'a> {
    r: &'a Resolved,
    protocol: Protocol,
    engine: Engine<Ev>,
    loss: LossState,
    trace: Trace,
    next_pkt: u64,
    ids: Vec<String>,
    mcast: Option<Multicast>,
    srm: BTreeMap<NodeIdx, Member>,
    fwd: Vec<Forwarder>,
    apps: BTreeMap<NodeIdx, NdnMember>,
    certs: CertStore,
    keys: BTreeMap<NodeIdx, Certificate>,
    give_ups: u64,
}

/// Runs `r` under one protocol binding with the given seed.
pub fn run(r: &Resolved, protocol: Protocol, seed: u64) -> Result<RunOutput, SimError> {
    let mut sim = Sim {
        r,
        protocol,
        engine: Engine::new(seed),
        loss: LossState::new(&r.topo),
        trace: Trace::new(),
        next_pkt: 0,
        ids: r.topo.nodes().iter().map(|n| n.id.clone()).collect(),
        mcast: None,
        srm: BTreeMap::new(),
        fwd: Vec::new(),
        apps: BTreeMap::new(),
        certs: CertStore::default(),
        keys: BTreeMap::new(),
        give_ups: 0,
    };
    sim.preamble();
    match protocol {
        Protocol::Srm => sim.start_srm()?,
        Protocol::Ndn => sim.start_ndn(),
    }
    for (i, p) in r.productions.iter().enumerate() {
        sim.engine
            .schedule(p.at, Target::Node(p.member), Ev::Produce(i))?;
    }
    log::debug!("{}: {protocol} run, seed {seed}", r.name);
    sim.main_loop();
    log::debug!("{}: {} trace records", r.name, sim.trace.len());
    let summary = summarize(&sim.trace)?;
    let live = sim.live();
    Ok(RunOutput {
        protocol,
        trace: sim.trace,
        summary,
        live,
    })
}

impl Sim<'_> {
    fn now(&self) -> SimTime {
        self.engine.now()
    }

    #[allow(clippy::too_many_arguments)]
    fn rec(
        &mut self,
        node: NodeIdx,
        kind: EventKind,
        protocol: TraceProtocol,
        packet: &str,
        name: &str,
        link: Option<String>,
        extra: BTreeMap<String, Extra>,
    ) {
        let ts = self.now().as_micros();
        let node = self.ids[node].clone();
        log::trace!("{ts} {kind:?} {node} {packet} {name}");
        self.trace.push(TraceRecord {
            extra,
            kind,
            link,
            name: name.to_string(),
            node,
            packet: packet.to_string(),
            protocol,
            ts,
        });
    }

    fn is_member(&self, n: NodeIdx) -> bool {
        self.r.members.contains(&n)
    }

    fn preamble(&mut self) {
        for n in 0..self.ids.len() {
            let extra = ex([
                ("host", self.r.topo.is_host(n).into()),
                ("member", self.is_member(n).into()),
            ]);
            self.rec(n, EventKind::Node, TraceProtocol::App, "node", "", None, extra);
        }
        for (&p, &count) in &self.r.initial {
            let name = format!("/{}", self.ids[p]);
            self.rec(
                p,
                EventKind::Preload,
                TraceProtocol::App,
                "item",
                &name,
                None,
                ex([("count", count.into())]),
            );
        }
    }

    fn adu_name(&self, id: AduId) -> String {
        Name::for_adu(&self.ids[id.producer], id.seq).to_string()
    }

    // ---- links ----

    fn describe(&self, wire: &Wire) -> (TraceProtocol, &'static str, String, BTreeMap<String, Extra>) {
        match wire {
            Wire::Srm(p, _) => {
                let name = match p {
                    SrmPacket::Session(m) => format!("/{}", self.ids[m.sender]),
                    _ => self.adu_name(p.adu().expect("non-session packets name an ADU")),
                };
                (TraceProtocol::Srm, p.kind(), name, BTreeMap::new())
            }
            Wire::Interest(i) if self.fwd_is_sync(&i.name) => {
                (TraceProtocol::Svs, "sync", i.name.to_string(), BTreeMap::new())
            }
            Wire::Interest(i) => (
                TraceProtocol::Ndn,
                "interest",
                i.name.to_string(),
                ex([("retx", i.retx.into())]),
            ),
            Wire::Data(d) => (
                TraceProtocol::Ndn,
                "data",
                d.name.to_string(),
                ex([("recovery", d.recovery.into())]),
            ),
        }
    }

    fn fwd_is_sync(&self, name: &Name) -> bool {
        self.r.svs.sync_prefix.is_prefix_of(name)
    }

    fn send_link(&mut self, from: NodeIdx, to: NodeIdx, wire: Wire) {
        let topo = &self.r.topo;
        let li = topo
            .link_between(from, to)
            .expect("forwarding only follows existing links");
        let (proto, kind, name, mut extra) = self.describe(&wire);
        let pkt = self.next_pkt;
        self.next_pkt += 1;
        let now = self.now();
        let due = now + topo.link(li).delay;
        let label = topo.link_label(from, to);
        extra.insert("pkt".into(), pkt.into());
        extra.insert("due".into(), due.as_micros().into());
        self.rec(from, EventKind::Send, proto, kind, &name, Some(label.clone()), extra);
        let fate = self
            .loss
            .transmit(topo, self.engine.rng(), li, from, kind, Some(&name), now);
        match fate {
            Transmit::Drop(reason) => {
                let extra = ex([("pkt", pkt.into()), ("reason", reason.to_string().into())]);
                self.rec(from, EventKind::Drop, proto, kind, &name, Some(label), extra);
            }
            Transmit::Deliver { at } => {
                self.engine
                    .schedule(at, Target::Node(to), Ev::Arrive { from, pkt, wire })
                    .expect("arrival is in the future");
            }
        }
    }

    fn main_loop(&mut self) {
        let end = self.r.end;
        while let Some(ev) = self.engine.pop_until(end) {
            let Target::Node(n) = ev.target else {
                continue;
            };
            match ev.payload {
                Ev::Arrive { from, pkt, wire } => self.on_arrive(n, from, pkt, wire),
                Ev::Srm(t) => {
                    let ((), out) = self.with_member(n, |m, ctx| m.on_timer(ctx, t));
                    self.flush_srm(n, out);
                }
                Ev::Svs(t) => {
                    let ((), out) = self.with_svs(n, |s, ctx| s.on_timer(ctx, t));
                    self.flush_svs(n, out);
                }
                Ev::Retx(name) => self.on_retx(n, name),
                Ev::PitExpire(name) => {
                    let now = self.now();
                    let acts = self.fwd[n].pit_expire(&name, now);
                    self.apply(n, acts);
                }
                Ev::Produce(i) => self.produce(i),
            }
        }
        self.engine.advance_to(end);
        let proto = self.protocol.to_string();
        let ts = self.now().as_micros();
        self.trace.push(TraceRecord {
            extra: BTreeMap::new(),
            kind: EventKind::End,
            link: None,
            name: String::new(),
            node: "-".into(),
            packet: proto,
            protocol: TraceProtocol::App,
            ts,
        });
    }

    fn on_arrive(&mut self, to: NodeIdx, from: NodeIdx, pkt: u64, wire: Wire) {
        let (proto, kind, name, mut extra) = self.describe(&wire);
        extra.insert("pkt".into(), pkt.into());
        let label = self.r.topo.link_label(from, to);
        self.rec(to, EventKind::Recv, proto, kind, &name, Some(label), extra);
        let now = self.now();
        match wire {
            Wire::Srm(p, hdr) => {
                let mcast = self.mcast.as_ref().expect("srm run");
                let next = mcast.fan_out(&hdr, to);
                let deliver = mcast.delivers_to(&hdr, to);
                for (child, h) in next {
                    self.send_link(to, child, Wire::Srm(p.clone(), h));
                }
                if deliver {
                    let (res, out) = self.with_member(to, |m, ctx| m.on_packet(ctx, &p));
                    self.flush_srm(to, out);
                    if let Err(e) = res {
                        let extra = ex([("reason", e.to_string().into())]);
                        self.rec(to, EventKind::Drop, TraceProtocol::Srm, kind, &name, None, extra);
                    }
                }
            }
            Wire::Interest(i) => {
                let acts = self.fwd[to].on_interest(Face::Link(from), i, now);
                self.apply(to, acts);
            }
            Wire::Data(d) => {
                let acts = self.fwd[to].on_data(Face::Link(from), d, now);
                self.apply(to, acts);
            }
        }
    }

    // ---- SRM ----

    fn start_srm(&mut self) -> Result<(), SimError> {
        let r = self.r;
        let group = McastGroup {
            id: r.group_id.clone(),
            members: r.members.iter().copied().collect(),
        };
        self.mcast = Some(Multicast::new(&r.topo, &r.routes, vec![group])?);
        for &m in &r.members {
            let mut mem = Member::new(m, r.srm.clone());
            for (&p, &n) in &r.initial {
                mem.preload(p, n);
            }
            self.srm.insert(m, mem);
        }
        for &m in &r.members {
            let ((), out) = self.with_member(m, |mem, ctx| mem.start(ctx));
            self.flush_srm(m, out);
        }
        Ok(())
    }

    fn with_member<R>(
        &mut self,
        n: NodeIdx,
        f: impl FnOnce(&mut Member, &mut SrmCtx<'_>) -> R,
    ) -> (R, Vec<SrmOut>) {
        let mut m = self.srm.remove(&n).expect("srm member");
        let mut ctx = SrmCtx {
            me: n,
            stream: StreamId::new(format!("srm:{}", self.ids[n])),
            engine: &mut self.engine,
            others: &self.srm,
            routes: &self.r.routes,
            ids: &self.ids,
            out: Vec::new(),
        };
        let res = f(&mut m, &mut ctx);
        let out = ctx.out;
        self.srm.insert(n, m);
        (res, out)
    }

    fn flush_srm(&mut self, n: NodeIdx, out: Vec<SrmOut>) {
        for o in out {
            match o {
                SrmOut::Multicast(pkt, scope) => {
                    let mcast = self.mcast.as_ref().expect("srm run");
                    let hdr = mcast
                        .send(&self.r.topo, 0, n, scope)
                        .expect("only members multicast");
                    let next = mcast.fan_out(&hdr, n);
                    let (proto, kind, name, _) = self.describe(&Wire::Srm(pkt.clone(), hdr));
                    let extra = match &pkt {
                        SrmPacket::Rq { requester, .. } => {
                            ex([("requester", self.ids[*requester].clone().into())])
                        }
                        SrmPacket::Rr { replier, .. } => {
                            ex([("replier", self.ids[*replier].clone().into())])
                        }
                        _ => BTreeMap::new(),
                    };
                    self.rec(n, EventKind::Send, proto, kind, &name, None, extra);
                    for (child, h) in next {
                        self.send_link(n, child, Wire::Srm(pkt.clone(), h));
                    }
                }
                SrmOut::Delivered(id, how) => {
                    let name = self.adu_name(id);
                    let mut extra = ex([("validated", false.into())]);
                    match how {
                        Arrival::Original => {
                            extra.insert("recovered".into(), false.into());
                        }
                        Arrival::Repair { latency } => {
                            extra.insert("recovered".into(), true.into());
                            if let Some(l) = latency {
                                extra.insert("latency_us".into(), l.as_micros().into());
                            }
                        }
                    }
                    self.rec(n, EventKind::Deliver, TraceProtocol::App, "item", &name, None, extra);
                }
                SrmOut::Suppressed(kind, id) => {
                    let name = self.adu_name(id);
                    self.rec(n, EventKind::Suppress, TraceProtocol::Srm, kind, &name, None, BTreeMap::new());
                }
            }
        }
    }

    // ---- NDN ----

    fn start_ndn(&mut self) {
        let r = self.r;
        let topo = &r.topo;
        let tree = r.routes.multicast_tree(&r.members, r.members[0]);
        let tree_nb = tree.undirected_neighbors();
        for v in 0..topo.len() {
            let mut fib = Fib::default();
            for &h in &r.members {
                let face = if h == v {
                    Face::App
                } else {
                    Face::Link(r.routes.next_hop(v, h).expect("connected graph"))
                };
                let prefix = Name::from_components([self.ids[h].as_str()]).expect("host id");
                fib.insert(prefix, vec![face]);
            }
            let mut sync: Vec<NodeIdx> = tree_nb.get(&v).map(|s| s.iter().copied().collect()).unwrap_or_default();
            sync.sort_by(|a, b| self.ids[*a].cmp(&self.ids[*b]));
            let mut faces: Vec<Face> = sync.into_iter().map(Face::Link).collect();
            if r.members.contains(&v) {
                faces.push(Face::App);
            }
            if !faces.is_empty() {
                fib.insert(r.svs.sync_prefix.clone(), faces);
            }
            self.fwd.push(Forwarder::new(
                v,
                fib,
                r.ndn.cs_capacity,
                r.ndn.retx_suppression,
                r.svs.sync_prefix.clone(),
            ));
        }

        let anchors: Vec<Certificate> = r
            .trust
            .anchors
            .iter()
            .map(|a| Certificate::self_signed(&a.components()[0], &a.components()[2]))
            .collect();
        for a in &anchors {
            self.certs.insert(a.clone());
        }
        let member_ids: Vec<&str> = r.members.iter().map(|&m| self.ids[m].as_str()).collect();
        for &m in &r.members {
            let cert = Certificate::issue(&self.ids[m], "1", &anchors[0]);
            self.certs.insert(cert.clone());
            self.keys.insert(m, cert);
            let mut svs = SyncState::new(&self.ids[m], &member_ids, r.svs.clone());
            let mut consumer = Consumer::new(&self.ids[m], r.max_retx);
            for (&p, &n) in &r.initial {
                svs.preload(&self.ids[p], n);
                consumer.preload(&self.ids[p], n);
            }
            self.apps.insert(
                m,
                NdnMember {
                    svs,
                    consumer,
                    produced: r.initial.get(&m).copied().unwrap_or(0),
                    signers: BTreeMap::new(),
                },
            );
        }
        for &m in &r.members {
            let ((), out) = self.with_svs(m, |s, ctx| s.start(ctx));
            self.flush_svs(m, out);
        }
    }

    fn with_svs<R>(
        &mut self,
        n: NodeIdx,
        f: impl FnOnce(&mut SyncState, &mut SvsCtx<'_>) -> R,
    ) -> (R, Vec<SvsOut>) {
        let app = self.apps.get_mut(&n).expect("ndn member");
        let mut ctx = SvsCtx {
            me: n,
            stream: StreamId::new(format!("svs:{}", self.ids[n])),
            engine: &mut self.engine,
            out: Vec::new(),
        };
        let res = f(&mut app.svs, &mut ctx);
        (res, ctx.out)
    }

    fn nonce(&mut self, n: NodeIdx) -> u64 {
        let s = StreamId::new(format!("nonce:{}", self.ids[n]));
        self.engine.rng().next_u64(&s)
    }

    fn flush_svs(&mut self, n: NodeIdx, out: Vec<SvsOut>) {
        let prefix = self.r.svs.sync_prefix.clone();
        for o in out {
            match o {
                SvsOut::Send(v) => {
                    let interest = Interest {
                        name: prefix.clone(),
                        nonce: self.nonce(n),
                        lifetime: self.r.ndn.interest_lifetime,
                        app_params: Some(v.encode()),
                        retx: false,
                    };
                    let extra = ex([("vector", v.to_string().into())]);
                    self.rec(n, EventKind::Send, TraceProtocol::Svs, "sync", &prefix.to_string(), None, extra);
                    let now = self.now();
                    let acts = self.fwd[n].on_interest(Face::App, interest, now);
                    self.apply(n, acts);
                }
                SvsOut::Suppressed => {
                    self.rec(n, EventKind::Suppress, TraceProtocol::Svs, "sync", &prefix.to_string(), None, BTreeMap::new());
                }
            }
        }
    }

    fn face_label(&self, f: Face) -> String {
        match f {
            Face::App => "app".into(),
            Face::Link(m) => self.ids[m].clone(),
        }
    }

    fn apply(&mut self, n: NodeIdx, actions: Vec<FwdAction>) {
        for a in actions {
            match a {
                FwdAction::SendInterest { face: Face::Link(m), interest } => {
                    self.send_link(n, m, Wire::Interest(interest))
                }
                FwdAction::SendInterest { face: Face::App, interest } => self.app_interest(n, interest),
                FwdAction::SendData { face: Face::Link(m), data } => self.send_link(n, m, Wire::Data(data)),
                FwdAction::SendData { face: Face::App, data } => self.app_data(n, data),
                FwdAction::CacheHit { face, name } => {
                    let extra = ex([("face", self.face_label(face).into())]);
                    self.rec(n, EventKind::CacheHit, TraceProtocol::Ndn, "data", &name.to_string(), None, extra);
                }
                FwdAction::Aggregate { face, name } => {
                    let extra = ex([("face", self.face_label(face).into())]);
                    self.rec(n, EventKind::Aggregate, TraceProtocol::Ndn, "interest", &name.to_string(), None, extra);
                }
                FwdAction::Drop {
                    face,
                    name,
                    reason,
                    interest,
                } => {
                    let (proto, packet) = match (interest, self.fwd_is_sync(&name)) {
                        (true, true) => (TraceProtocol::Svs, "sync"),
                        (true, false) => (TraceProtocol::Ndn, "interest"),
                        (false, _) => (TraceProtocol::Ndn, "data"),
                    };
                    let extra = ex([
                        ("face", self.face_label(face).into()),
                        ("reason", reason.to_string().into()),
                    ]);
                    self.rec(n, EventKind::Drop, proto, packet, &name.to_string(), None, extra);
                }
                FwdAction::ExpireAt { name, at } => {
                    self.engine
                        .schedule(at, Target::Node(n), Ev::PitExpire(name))
                        .expect("expiry lies ahead");
                }
                FwdAction::Expired { name } => {
                    self.rec(n, EventKind::Expire, TraceProtocol::Ndn, "interest", &name.to_string(), None, BTreeMap::new());
                }
            }
        }
    }

    fn make_data(&self, n: NodeIdx, seq: u64) -> DataPacket {
        let app = &self.apps[&n];
        let signer = app.signers.get(&seq).copied().unwrap_or(n);
        let name = Name::for_adu(&self.ids[n], seq);
        let content = format!("{}:{seq}", self.ids[n]).into_bytes();
        sign(&self.keys[&signer], name, content)
    }

    fn app_interest(&mut self, n: NodeIdx, interest: Interest) {
        let now = self.now();
        if self.fwd_is_sync(&interest.name) {
            let Some(params) = interest.app_params.clone() else {
                let extra = ex([("reason", "missing-vector".into())]);
                self.rec(n, EventKind::Drop, TraceProtocol::Svs, "sync", &interest.name.to_string(), None, extra);
                return;
            };
            if !self.apps.contains_key(&n) {
                return;
            }
            let (res, out) = self.with_svs(n, |s, ctx| s.on_sync_interest(ctx, &params));
            self.flush_svs(n, out);
            match res {
                Err(e) => {
                    let extra = ex([("reason", e.to_string().into())]);
                    self.rec(n, EventKind::Drop, TraceProtocol::Svs, "sync", &interest.name.to_string(), None, extra);
                }
                Ok(_) => {
                    let app = &self.apps[&n];
                    for name in app.consumer.gaps(app.svs.local()) {
                        self.fetch(n, name);
                    }
                }
            }
            return;
        }
        let own = interest
            .name
            .parse_adu()
            .filter(|(p, _)| *p == self.ids[n])
            .map(|(_, s)| s);
        let available = self.apps.get(&n).map_or(0, |a| a.produced);
        match own {
            Some(seq) if seq >= 1 && seq <= available => {
                let mut data = self.make_data(n, seq);
                data.recovery = interest.retx;
                let extra = ex([("recovery", data.recovery.into())]);
                self.rec(n, EventKind::Send, TraceProtocol::Ndn, "data", &data.name.to_string(), None, extra);
                let acts = self.fwd[n].on_data(Face::App, data, now);
                self.apply(n, acts);
            }
            _ => {
                let extra = ex([("reason", "not-produced".into())]);
                self.rec(n, EventKind::Drop, TraceProtocol::Ndn, "interest", &interest.name.to_string(), None, extra);
            }
        }
    }

    fn rto_for(&self, n: NodeIdx, name: &Name) -> SimTime {
        if let Some(t) = self.r.consumer_retx {
            return t;
        }
        let producer = name.parse_adu().and_then(|(p, _)| self.r.topo.idx(p).ok());
        match producer.map(|p| self.r.routes.dist(n, p)) {
            Some(d) if d > SimTime::ZERO => SimTime::from_micros(4 * d.as_micros()),
            _ => SimTime::from_millis(500),
        }
    }

    fn fetch(&mut self, n: NodeIdx, name: Name) {
        let rto = self.rto_for(n, &name);
        let now = self.now();
        let app = self.apps.get_mut(&n).expect("ndn member");
        if !app.consumer.start_fetch(&name, now, rto) {
            return;
        }
        self.send_interest(n, &name, false);
        let h = self
            .engine
            .schedule_in(rto, Target::Node(n), Ev::Retx(name.clone()));
        self.apps.get_mut(&n).expect("ndn member").consumer.set_timer(&name, h);
    }

    fn send_interest(&mut self, n: NodeIdx, name: &Name, retx: bool) {
        let interest = Interest {
            name: name.clone(),
            nonce: self.nonce(n),
            lifetime: self.r.ndn.interest_lifetime,
            app_params: None,
            retx,
        };
        let extra = ex([("retx", retx.into())]);
        self.rec(n, EventKind::Send, TraceProtocol::Ndn, "interest", &name.to_string(), None, extra);
        let now = self.now();
        let acts = self.fwd[n].on_interest(Face::App, interest, now);
        self.apply(n, acts);
    }

    fn on_retx(&mut self, n: NodeIdx, name: Name) {
        let app = self.apps.get_mut(&n).expect("ndn member");
        match app.consumer.timeout(&name) {
            None => {}
            Some(Timeout::Retransmit { rto, .. }) => {
                self.send_interest(n, &name, true);
                let h = self
                    .engine
                    .schedule_in(rto, Target::Node(n), Ev::Retx(name.clone()));
                self.apps.get_mut(&n).expect("ndn member").consumer.set_timer(&name, h);
            }
            Some(Timeout::GiveUp(o)) => {
                self.give_ups += 1;
                let err = AppError::RetxLimitExceeded {
                    name: name.to_string(),
                    retx: o.retx,
                };
                let extra = ex([("retx", u64::from(o.retx).into()), ("reason", err.to_string().into())]);
                self.rec(n, EventKind::GiveUp, TraceProtocol::App, "item", &name.to_string(), None, extra);
            }
        }
    }

    fn app_data(&mut self, n: NodeIdx, data: DataPacket) {
        let Some(app) = self.apps.get(&n) else {
            return;
        };
        if app.consumer.holds_name(&data.name) {
            return;
        }
        let name = data.name.to_string();
        match validate(&data, &self.r.trust, &self.certs) {
            Validation::Reject(reason) => {
                let extra = ex([("reason", reason.to_string().into())]);
                self.rec(n, EventKind::ValidateFail, TraceProtocol::App, "data", &name, None, extra);
            }
            Validation::Accept { depth } => {
                let now = self.now();
                let app = self.apps.get_mut(&n).expect("checked above");
                let Some(fetch) = app.consumer.accept(&data.name) else {
                    return;
                };
                let mut extra = ex([("validated", true.into()), ("depth", (depth as u64).into())]);
                match fetch {
                    Some(o) => {
                        if let Some(h) = o.timer {
                            self.engine.cancel(h);
                        }
                        extra.insert("recovered".into(), (o.retx > 0).into());
                        extra.insert("latency_us".into(), (now - o.first_sent).as_micros().into());
                    }
                    // arrived after the fetch was abandoned
                    None => {
                        extra.insert("recovered".into(), true.into());
                    }
                }
                self.rec(n, EventKind::Deliver, TraceProtocol::App, "item", &name, None, extra);
            }
        }
    }

    // ---- application ----

    fn produce(&mut self, i: usize) {
        let p = self.r.productions[i].clone();
        let n = p.member;
        match self.protocol {
            Protocol::Srm => {
                let (id, out) = self.with_member(n, |m, ctx| m.produce_adu(ctx, p.payload_size));
                let name = self.adu_name(id);
                self.rec(n, EventKind::Produce, TraceProtocol::App, "item", &name, None, BTreeMap::new());
                self.flush_srm(n, out);
            }
            Protocol::Ndn => {
                let (seq, out) = self.with_svs(n, |s, ctx| s.publish(ctx));
                let app = self.apps.get_mut(&n).expect("ndn member");
                app.produced = seq;
                if let Some(s) = p.signer {
                    app.signers.insert(seq, s);
                }
                let own = Name::for_adu(&self.ids[n], seq);
                app.consumer.accept(&own);
                let mut extra = BTreeMap::new();
                if let Some(s) = p.signer {
                    extra.insert("signer".to_string(), Extra::from(self.ids[s].clone()));
                }
                self.rec(n, EventKind::Produce, TraceProtocol::App, "item", &own.to_string(), None, extra);
                self.flush_svs(n, out);
            }
        }
    }

    fn live(&self) -> LiveCounters {
        let mut l = LiveCounters {
            give_ups: self.give_ups,
            ..Default::default()
        };
        match self.protocol {
            Protocol::Srm => {
                let produced: Vec<(NodeIdx, u64)> = self
                    .r
                    .members
                    .iter()
                    .map(|&p| (p, self.srm[&p].received(p).map_or(0, |s| s.len())))
                    .collect();
                for m in self.srm.values() {
                    l.rq_sent += m.counters.rq_sent;
                    l.rr_sent += m.counters.rr_sent;
                    let missing: u64 = produced
                        .iter()
                        .map(|&(p, n)| n - m.received(p).map_or(0, |s| s.len()).min(n))
                        .sum();
                    l.missing.insert(self.ids[m.me].clone(), missing);
                }
            }
            Protocol::Ndn => {
                for (&m, app) in &self.apps {
                    l.sync_sent += app.svs.sync_sent;
                    let missing: u64 = self
                        .apps
                        .iter()
                        .map(|(&p, pa)| pa.produced - app.consumer.held(&self.ids[p]).min(pa.produced))
                        .sum();
                    l.missing.insert(self.ids[m].clone(), missing);
                    l.vectors.insert(self.ids[m].clone(), app.svs.local().clone());
                }
                for f in &self.fwd {
                    l.cache_hits.insert(self.ids[f.node].clone(), f.stats.cache_hits);
                    l.aggregations.insert(self.ids[f.node].clone(), f.stats.aggregations);
                }
            }
        }
        l
    }
}
