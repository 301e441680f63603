//! SRM member state machine. Members are sans-IO: every side effect goes
//! through [`SrmEnv`], which the simulator (or a test double) implements.

use std::collections::BTreeMap;

use thiserror::Error;

use crate::engine::{EventHandle, SimTime};
use crate::multicast::ScopeLimit;
use crate::seqset::SeqSet;
use crate::topology::NodeIdx;

#[derive(Debug, Clone, PartialEq)]
pub struct SrmConfig {
    pub c1: f64,
    pub c2: f64,
    pub d1: f64,
    pub d2: f64,
    pub session_period: SimTime,
    /// Fraction of the period; each interval is scaled by `1 + U(-j, j)`.
    pub session_jitter: f64,
    pub ideal_mode: bool,
    pub rq_scope: ScopeLimit,
    pub default_dist: SimTime,
    /// Cap on the request backoff exponent.
    pub max_backoff: u32,
    /// After sending or hearing an RR, RQs for that id are ignored for this
    /// many one-way distances.
    pub hold_down: f64,
}

impl Default for SrmConfig {
    fn default() -> Self {
        SrmConfig {
            c1: 2.0,
            c2: 2.0,
            d1: 1.0,
            d2: 1.0,
            session_period: SimTime::from_secs(1),
            session_jitter: 0.1,
            ideal_mode: false,
            rq_scope: ScopeLimit::UNLIMITED,
            default_dist: SimTime::from_millis(50),
            max_backoff: 5,
            hold_down: 3.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct AduId {
    pub producer: NodeIdx,
    pub seq: u64,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SessionMsg {
    pub sender: NodeIdx,
    pub latest: BTreeMap<NodeIdx, u64>,
    pub ts: SimTime,
    /// peer → (peer's session timestamp, time held here before this send)
    pub echoes: BTreeMap<NodeIdx, (SimTime, SimTime)>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum SrmPacket {
    Adu { id: AduId, size: u32 },
    Session(SessionMsg),
    Rq { id: AduId, requester: NodeIdx },
    Rr { id: AduId, replier: NodeIdx, size: u32 },
}

impl SrmPacket {
    pub fn kind(&self) -> &'static str {
        match self {
            SrmPacket::Adu { .. } => "adu",
            SrmPacket::Session(_) => "session",
            SrmPacket::Rq { .. } => "rq",
            SrmPacket::Rr { .. } => "rr",
        }
    }

    pub fn adu(&self) -> Option<AduId> {
        match self {
            SrmPacket::Adu { id, .. } | SrmPacket::Rq { id, .. } | SrmPacket::Rr { id, .. } => {
                Some(*id)
            }
            SrmPacket::Session(_) => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SrmTimer {
    Session,
    Rq(AduId),
    Rr(AduId),
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum SrmError {
    #[error("session message from node {0} has an empty latest map")]
    MalformedSession(NodeIdx),
}

/// How an ADU reached the application.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Arrival {
    Original,
    /// Via RR; latency is measured from loss detection when known.
    Repair { latency: Option<SimTime> },
}

pub trait SrmEnv {
    fn now(&self) -> SimTime;
    /// Uniform draw in `[lo, hi)` from this member's stream.
    fn uniform(&mut self, lo: f64, hi: f64) -> f64;
    fn schedule(&mut self, delay: SimTime, timer: SrmTimer) -> EventHandle;
    fn cancel(&mut self, h: EventHandle);
    fn multicast(&mut self, pkt: SrmPacket, scope: ScopeLimit);
    fn delivered(&mut self, id: AduId, how: Arrival);
    /// A pending RQ or RR was suppressed or backed off.
    fn suppressed(&mut self, kind: &'static str, id: AduId);
    /// Ideal-mode oracle: the single loser allowed to request `id`.
    fn ideal_requester(&self, id: AduId) -> Option<NodeIdx>;
    /// Ideal-mode oracle: the single holder allowed to answer `requester`.
    fn ideal_replier(&self, id: AduId, requester: NodeIdx) -> Option<NodeIdx>;
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct SrmCounters {
    pub adu_sent: u64,
    pub session_sent: u64,
    pub rq_sent: u64,
    pub rr_sent: u64,
}

#[derive(Debug, Clone)]
pub struct Member {
    pub me: NodeIdx,
    cfg: SrmConfig,
    received: BTreeMap<NodeIdx, SeqSet>,
    highest_heard: BTreeMap<NodeIdx, u64>,
    dist: BTreeMap<NodeIdx, SimTime>,
    last_session: BTreeMap<NodeIdx, (SimTime, SimTime)>,
    pending_rq: BTreeMap<AduId, (EventHandle, u32)>,
    pending_rr: BTreeMap<AduId, (EventHandle, NodeIdx)>,
    hold_down: BTreeMap<AduId, SimTime>,
    detected_at: BTreeMap<AduId, SimTime>,
    own_seq: u64,
    pub counters: SrmCounters,
}

fn scale(d: SimTime, f: f64) -> f64 {
    d.as_secs_f64() * f
}

impl Member {
    pub fn new(me: NodeIdx, cfg: SrmConfig) -> Self {
        Member {
            me,
            cfg,
            received: BTreeMap::new(),
            highest_heard: BTreeMap::from([(me, 0)]),
            dist: BTreeMap::new(),
            last_session: BTreeMap::new(),
            pending_rq: BTreeMap::new(),
            pending_rr: BTreeMap::new(),
            hold_down: BTreeMap::new(),
            detected_at: BTreeMap::new(),
            own_seq: 0,
            counters: SrmCounters::default(),
        }
    }

    /// Marks `1..=n` of `producer` as already held by everyone.
    pub fn preload(&mut self, producer: NodeIdx, n: u64) {
        self.received.insert(producer, SeqSet::filled(n));
        let h = self.highest_heard.entry(producer).or_insert(0);
        *h = (*h).max(n);
        if producer == self.me {
            self.own_seq = n;
        }
    }

    pub fn holds(&self, id: AduId) -> bool {
        self.received.get(&id.producer).is_some_and(|s| s.contains(id.seq))
    }

    pub fn received(&self, producer: NodeIdx) -> Option<&SeqSet> {
        self.received.get(&producer)
    }

    pub fn dist(&self, peer: NodeIdx) -> Option<SimTime> {
        self.dist.get(&peer).copied()
    }

    pub fn pending_rq(&self, id: AduId) -> Option<u32> {
        self.pending_rq.get(&id).map(|&(_, k)| k)
    }

    pub fn has_pending_rr(&self, id: AduId) -> bool {
        self.pending_rr.contains_key(&id)
    }

    pub fn detected_at(&self, id: AduId) -> Option<SimTime> {
        self.detected_at.get(&id).copied()
    }

    fn dist_or_default(&self, peer: NodeIdx) -> SimTime {
        self.dist(peer).unwrap_or(self.cfg.default_dist)
    }

    pub fn start(&mut self, env: &mut dyn SrmEnv) {
        let first = env.uniform(0.0, self.cfg.session_period.as_secs_f64());
        env.schedule(SimTime::from_secs_f64(first), SrmTimer::Session);
    }

    pub fn produce_adu(&mut self, env: &mut dyn SrmEnv, size: u32) -> AduId {
        self.own_seq += 1;
        let id = AduId {
            producer: self.me,
            seq: self.own_seq,
        };
        self.received.entry(self.me).or_default().insert(id.seq);
        self.highest_heard.insert(self.me, id.seq);
        self.counters.adu_sent += 1;
        env.multicast(SrmPacket::Adu { id, size }, ScopeLimit::UNLIMITED);
        id
    }

    pub fn on_timer(&mut self, env: &mut dyn SrmEnv, t: SrmTimer) {
        match t {
            SrmTimer::Session => self.on_session_timer(env),
            SrmTimer::Rq(id) => self.on_rq_timer(env, id),
            SrmTimer::Rr(id) => self.on_rr_timer(env, id),
        }
    }

    pub fn on_packet(&mut self, env: &mut dyn SrmEnv, pkt: &SrmPacket) -> Result<(), SrmError> {
        match pkt {
            SrmPacket::Adu { id, .. } => self.on_adu(env, *id),
            SrmPacket::Session(m) => self.on_session_msg(env, m)?,
            SrmPacket::Rq { id, requester } => self.on_rq(env, *id, *requester),
            SrmPacket::Rr { id, replier, .. } => self.on_rr(env, *id, *replier),
        }
        Ok(())
    }

    fn on_session_timer(&mut self, env: &mut dyn SrmEnv) {
        let now = env.now();
        let echoes = self
            .last_session
            .iter()
            .map(|(&peer, &(their_ts, got_at))| (peer, (their_ts, now - got_at)))
            .collect();
        let msg = SessionMsg {
            sender: self.me,
            latest: self.highest_heard.clone(),
            ts: now,
            echoes,
        };
        self.counters.session_sent += 1;
        env.multicast(SrmPacket::Session(msg), ScopeLimit::UNLIMITED);
        let j = self.cfg.session_jitter;
        let f = 1.0 + env.uniform(-j, j);
        env.schedule(
            SimTime::from_secs_f64(scale(self.cfg.session_period, f)),
            SrmTimer::Session,
        );
    }

    fn on_adu(&mut self, env: &mut dyn SrmEnv, id: AduId) {
        let h = self.highest_heard.entry(id.producer).or_insert(0);
        *h = (*h).max(id.seq);
        if self.received.entry(id.producer).or_default().insert(id.seq) {
            if let Some((h, _)) = self.pending_rq.remove(&id) {
                env.cancel(h);
            }
            env.delivered(id, Arrival::Original);
        }
    }

    pub fn on_session_msg(&mut self, env: &mut dyn SrmEnv, m: &SessionMsg) -> Result<(), SrmError> {
        if m.latest.is_empty() {
            return Err(SrmError::MalformedSession(m.sender));
        }
        if m.sender == self.me {
            return Ok(());
        }
        let now = env.now();
        self.last_session.insert(m.sender, (m.ts, now));
        if let Some(&(my_ts, hold)) = m.echoes.get(&self.me) {
            let rtt = now.saturating_sub(my_ts).saturating_sub(hold);
            self.dist
                .insert(m.sender, SimTime::from_micros(rtt.as_micros() / 2));
        }
        for (&p, &s) in &m.latest {
            let h = self.highest_heard.entry(p).or_insert(0);
            *h = (*h).max(s);
        }
        self.detect_losses(env);
        Ok(())
    }

    fn detect_losses(&mut self, env: &mut dyn SrmEnv) {
        let now = env.now();
        let gaps: Vec<AduId> = self
            .highest_heard
            .iter()
            .filter(|(&p, _)| p != self.me)
            .flat_map(|(&p, &hh)| {
                let have = self.received.get(&p);
                (1..=hh)
                    .filter(move |&s| !have.is_some_and(|r| r.contains(s)))
                    .map(move |seq| AduId { producer: p, seq })
            })
            .collect();
        for id in gaps {
            self.detected_at.entry(id).or_insert(now);
            if self.pending_rq.contains_key(&id) {
                continue;
            }
            if self.cfg.ideal_mode && env.ideal_requester(id) != Some(self.me) {
                continue;
            }
            self.schedule_rq(env, id, 0);
        }
    }

    /// Draws from `[2^k·C1·d, 2^k·(C1+C2)·d]`, `d` the distance to the producer.
    pub fn schedule_rq(&mut self, env: &mut dyn SrmEnv, id: AduId, k: u32) {
        let k = k.min(self.cfg.max_backoff);
        let d = self.dist_or_default(id.producer);
        let f = f64::from(1u32 << k);
        let lo = scale(d, f * self.cfg.c1);
        let hi = scale(d, f * (self.cfg.c1 + self.cfg.c2));
        let delay = SimTime::from_secs_f64(env.uniform(lo, hi));
        let h = env.schedule(delay, SrmTimer::Rq(id));
        self.pending_rq.insert(id, (h, k));
    }

    fn on_rq_timer(&mut self, env: &mut dyn SrmEnv, id: AduId) {
        let Some((_, k)) = self.pending_rq.remove(&id) else {
            return;
        };
        if self.holds(id) {
            return;
        }
        self.counters.rq_sent += 1;
        env.multicast(
            SrmPacket::Rq {
                id,
                requester: self.me,
            },
            self.cfg.rq_scope,
        );
        // keep asking until an RR arrives
        self.schedule_rq(env, id, k + 1);
    }

    fn on_rq(&mut self, env: &mut dyn SrmEnv, id: AduId, requester: NodeIdx) {
        if requester == self.me {
            return;
        }
        let now = env.now();
        if self.holds(id) {
            if self.pending_rr.contains_key(&id) {
                return;
            }
            if self.hold_down.get(&id).is_some_and(|&t| now < t) {
                return;
            }
            if self.cfg.ideal_mode && env.ideal_replier(id, requester) != Some(self.me) {
                return;
            }
            let d = self.dist_or_default(requester);
            let lo = scale(d, self.cfg.d1);
            let hi = scale(d, self.cfg.d1 + self.cfg.d2);
            let delay = SimTime::from_secs_f64(env.uniform(lo, hi));
            let h = env.schedule(delay, SrmTimer::Rr(id));
            self.pending_rr.insert(id, (h, requester));
        } else if let Some((h, k)) = self.pending_rq.remove(&id) {
            env.cancel(h);
            env.suppressed("rq", id);
            self.schedule_rq(env, id, k + 1);
        }
    }

    fn on_rr_timer(&mut self, env: &mut dyn SrmEnv, id: AduId) {
        let Some((_, requester)) = self.pending_rr.remove(&id) else {
            return;
        };
        self.counters.rr_sent += 1;
        env.multicast(
            SrmPacket::Rr {
                id,
                replier: self.me,
                size: 0,
            },
            ScopeLimit::UNLIMITED,
        );
        let d = self.dist_or_default(requester);
        self.hold_down
            .insert(id, env.now() + SimTime::from_secs_f64(scale(d, self.cfg.hold_down)));
    }

    fn on_rr(&mut self, env: &mut dyn SrmEnv, id: AduId, replier: NodeIdx) {
        let now = env.now();
        if let Some((h, _)) = self.pending_rq.remove(&id) {
            env.cancel(h);
        }
        if let Some((h, _)) = self.pending_rr.remove(&id) {
            env.cancel(h);
            env.suppressed("rr", id);
        }
        let d = self.dist_or_default(replier);
        self.hold_down
            .insert(id, now + SimTime::from_secs_f64(scale(d, self.cfg.hold_down)));
        let hh = self.highest_heard.entry(id.producer).or_insert(0);
        *hh = (*hh).max(id.seq);
        if self.received.entry(id.producer).or_default().insert(id.seq) {
            let latency = self.detected_at.get(&id).map(|&t| now - t);
            env.delivered(id, Arrival::Repair { latency });
        }
    }
}
