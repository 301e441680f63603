//! State Vector Sync. Like the SRM member, [`SyncState`] is sans-IO and
//! talks to the world through [`SvsEnv`].

use std::collections::BTreeMap;
use std::fmt;

use thiserror::Error;

use crate::engine::{EventHandle, SimTime};
use crate::ndn::Name;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum SvsError {
    #[error("malformed state vector: {0}")]
    MalformedVector(String),
}

/// Producer → latest sequence number. Absent producers read as 0.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct StateVector {
    entries: BTreeMap<String, u64>,
}

impl StateVector {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn from_pairs<'a>(pairs: impl IntoIterator<Item = (&'a str, u64)>) -> Self {
        let mut v = Self::new();
        for (p, s) in pairs {
            v.set(p, s);
        }
        v
    }

    pub fn get(&self, producer: &str) -> u64 {
        self.entries.get(producer).copied().unwrap_or(0)
    }

    pub fn set(&mut self, producer: &str, seq: u64) {
        self.entries.insert(producer.to_string(), seq);
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, u64)> {
        self.entries.iter().map(|(p, &s)| (p.as_str(), s))
    }

    /// Element-wise maximum.
    pub fn merge(&self, other: &StateVector) -> StateVector {
        let mut out = self.clone();
        for (p, s) in other.iter() {
            if s > out.get(p) || !out.entries.contains_key(p) {
                out.set(p, s);
            }
        }
        out
    }

    /// `(self is behind somewhere, self is ahead somewhere)` relative to `other`.
    pub fn compare(&self, other: &StateVector) -> (bool, bool) {
        let mut behind = false;
        let mut ahead = false;
        for p in self.entries.keys().chain(other.entries.keys()) {
            let (a, b) = (self.get(p), other.get(p));
            behind |= a < b;
            ahead |= a > b;
        }
        (behind, ahead)
    }

    /// `<len>:<producer>=<seq>;` per entry, producers in lexicographic order.
    pub fn encode(&self) -> Vec<u8> {
        let mut s = String::new();
        for (p, seq) in self.iter() {
            s.push_str(&format!("{}:{p}={seq};", p.len()));
        }
        s.into_bytes()
    }

    pub fn decode(bytes: &[u8]) -> Result<StateVector, SvsError> {
        let bad = |why: &str| SvsError::MalformedVector(why.to_string());
        let mut rest = std::str::from_utf8(bytes).map_err(|_| bad("not utf-8"))?;
        let mut v = StateVector::new();
        while !rest.is_empty() {
            let (len, tail) = rest.split_once(':').ok_or_else(|| bad("missing length"))?;
            let len: usize = len.parse().map_err(|_| bad("bad length"))?;
            if tail.len() < len || !tail.is_char_boundary(len) {
                return Err(bad("truncated producer"));
            }
            let (producer, tail) = tail.split_at(len);
            let tail = tail.strip_prefix('=').ok_or_else(|| bad("missing `=`"))?;
            let (seq, tail) = tail.split_once(';').ok_or_else(|| bad("missing `;`"))?;
            let seq = seq.parse().map_err(|_| bad("bad seq"))?;
            if producer.is_empty() {
                return Err(bad("empty producer"));
            }
            v.set(producer, seq);
            rest = tail;
        }
        Ok(v)
    }
}

impl fmt::Display for StateVector {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str("[")?;
        for (i, (p, s)) in self.iter().enumerate() {
            if i > 0 {
                f.write_str(",")?;
            }
            write!(f, "{p}:{s}")?;
        }
        f.write_str("]")
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SvsConfig {
    pub sync_prefix: Name,
    pub refresh_period: SimTime,
    pub suppression_window: SimTime,
    /// Fraction of the period; refresh intervals are scaled by `1 + U(-j, j)`.
    pub refresh_jitter: f64,
}

impl Default for SvsConfig {
    fn default() -> Self {
        SvsConfig {
            sync_prefix: "/sync".parse().expect("valid prefix"),
            refresh_period: SimTime::from_secs(30),
            suppression_window: SimTime::from_millis(200),
            refresh_jitter: 0.1,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SvsTimer {
    Refresh,
    Reply,
}

pub trait SvsEnv {
    fn now(&self) -> SimTime;
    fn uniform(&mut self, lo: f64, hi: f64) -> f64;
    fn schedule(&mut self, delay: SimTime, timer: SvsTimer) -> EventHandle;
    fn cancel(&mut self, h: EventHandle);
    /// Multicast a Sync Interest carrying `vector`.
    fn send_sync(&mut self, vector: &StateVector);
    fn suppressed(&mut self);
}

#[derive(Debug, Clone)]
pub struct SyncState {
    pub me: String,
    cfg: SvsConfig,
    local: StateVector,
    refresh: Option<EventHandle>,
    pending_reply: Option<EventHandle>,
    pub sync_sent: u64,
}

impl SyncState {
    pub fn new(me: &str, members: &[&str], cfg: SvsConfig) -> Self {
        SyncState {
            me: me.to_string(),
            cfg,
            local: StateVector::from_pairs(members.iter().map(|m| (*m, 0))),
            refresh: None,
            pending_reply: None,
            sync_sent: 0,
        }
    }

    pub fn local(&self) -> &StateVector {
        &self.local
    }

    pub fn has_pending_reply(&self) -> bool {
        self.pending_reply.is_some()
    }

    /// Initial state known to everyone before the run starts.
    pub fn preload(&mut self, producer: &str, seq: u64) {
        if seq > self.local.get(producer) {
            self.local.set(producer, seq);
        }
    }

    pub fn start(&mut self, env: &mut dyn SvsEnv) {
        self.reset_refresh(env);
    }

    fn reset_refresh(&mut self, env: &mut dyn SvsEnv) {
        if let Some(h) = self.refresh.take() {
            env.cancel(h);
        }
        let j = self.cfg.refresh_jitter;
        let f = 1.0 + env.uniform(-j, j);
        let delay = SimTime::from_secs_f64(self.cfg.refresh_period.as_secs_f64() * f);
        self.refresh = Some(env.schedule(delay, SvsTimer::Refresh));
    }

    fn send(&mut self, env: &mut dyn SvsEnv) {
        self.sync_sent += 1;
        env.send_sync(&self.local);
        self.reset_refresh(env);
    }

    /// Bumps the own entry and announces it; returns the new seq.
    pub fn publish(&mut self, env: &mut dyn SvsEnv) -> u64 {
        let seq = self.local.get(&self.me) + 1;
        self.local.set(&self.me.clone(), seq);
        self.send(env);
        seq
    }

    /// Merges a heard vector and returns the `(producer, seq)` pairs that
    /// became newly known.
    pub fn on_sync_interest(
        &mut self,
        env: &mut dyn SvsEnv,
        params: &[u8],
    ) -> Result<Vec<(String, u64)>, SvsError> {
        let remote = StateVector::decode(params)?;
        let mut fresh = Vec::new();
        for (p, s) in remote.iter() {
            let have = self.local.get(p);
            fresh.extend((have + 1..=s).map(|seq| (p.to_string(), seq)));
        }
        let (remote_behind, remote_ahead) = remote.compare(&self.local);
        self.local = self.local.merge(&remote);
        if !remote_behind {
            // an equal-or-newer vector makes our correction unnecessary
            if let Some(h) = self.pending_reply.take() {
                env.cancel(h);
                env.suppressed();
            }
        } else if !remote_ahead && self.pending_reply.is_none() {
            let w = self.cfg.suppression_window.as_secs_f64();
            let delay = SimTime::from_secs_f64(env.uniform(0.0, w));
            self.pending_reply = Some(env.schedule(delay, SvsTimer::Reply));
        }
        self.reset_refresh(env);
        Ok(fresh)
    }

    pub fn on_timer(&mut self, env: &mut dyn SvsEnv, t: SvsTimer) {
        match t {
            SvsTimer::Refresh => {
                self.refresh = None;
                self.send(env);
            }
            SvsTimer::Reply => {
                self.pending_reply = None;
                self.send(env);
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sv(pairs: &[(&str, u64)]) -> StateVector {
        StateVector::from_pairs(pairs.iter().copied())
    }

    #[test]
    fn merge_examples() {
        assert_eq!(sv(&[("A", 1)]).merge(&sv(&[("A", 3), ("B", 2)])), sv(&[("A", 3), ("B", 2)]));
        let v = sv(&[("A", 4), ("C", 1)]);
        assert_eq!(v.merge(&v), v);
    }

    #[test]
    fn merge_is_associative_on_small_vectors() {
        let vals = 0..3u64;
        let mut all = Vec::new();
        for a in vals.clone() {
            for b in vals.clone() {
                all.push(sv(&[("A", a), ("B", b)]));
            }
        }
        for x in &all {
            for y in &all {
                assert_eq!(x.merge(y), y.merge(x));
                for z in &all {
                    assert_eq!(x.merge(y).merge(z), x.merge(&y.merge(z)));
                }
            }
        }
    }

    #[test]
    fn encoding_is_sorted_and_round_trips() {
        let v = sv(&[("X", 431), ("A", 123), ("E", 12)]);
        assert_eq!(String::from_utf8(v.encode()).unwrap(), "1:A=123;1:E=12;1:X=431;");
        assert_eq!(StateVector::decode(&v.encode()).unwrap(), v);
        for bad in [&b"1:A=1"[..], b"x:A=1;", b"5:A=1;", b"1:A1;", b"0:=1;"] {
            assert!(StateVector::decode(bad).is_err(), "{bad:?}");
        }
    }

    #[derive(Default)]
    struct Env {
        now: SimTime,
        next: u64,
        sent: Vec<StateVector>,
        scheduled: Vec<(SimTime, SvsTimer, EventHandle)>,
        cancelled: Vec<EventHandle>,
    }

    impl SvsEnv for Env {
        fn now(&self) -> SimTime {
            self.now
        }
        fn uniform(&mut self, lo: f64, hi: f64) -> f64 {
            (lo + hi) / 2.0
        }
        fn schedule(&mut self, delay: SimTime, timer: SvsTimer) -> EventHandle {
            let h = EventHandle::from_seq(self.next);
            self.next += 1;
            self.scheduled.push((self.now + delay, timer, h));
            h
        }
        fn cancel(&mut self, h: EventHandle) {
            self.cancelled.push(h);
        }
        fn send_sync(&mut self, v: &StateVector) {
            self.sent.push(v.clone());
        }
        fn suppressed(&mut self) {}
    }

    const MEMBERS: [&str; 6] = ["A", "B", "C", "D", "E", "X"];

    fn fig3_state(me: &str) -> SyncState {
        let mut s = SyncState::new(me, &MEMBERS, SvsConfig::default());
        for (p, n) in [("A", 123), ("B", 223), ("C", 15), ("D", 941), ("E", 11), ("X", 431)] {
            s.preload(p, n);
        }
        s
    }

    #[test]
    fn publish_announces_full_vector() {
        let mut env = Env::default();
        let mut e = fig3_state("E");
        assert_eq!(e.publish(&mut env), 12);
        assert_eq!(env.sent[0].to_string(), "[A:123,B:223,C:15,D:941,E:12,X:431]");
        let mut fresh = SyncState::new("A", &MEMBERS, SvsConfig::default());
        fresh.publish(&mut env);
        assert_eq!(env.sent[1].to_string(), "[A:1,B:0,C:0,D:0,E:0,X:0]");
    }

    #[test]
    fn newer_remote_reveals_missing_items() {
        let mut env = Env::default();
        let mut d = fig3_state("D");
        let remote = sv(&[("E", 12)]).encode();
        let fresh = d.on_sync_interest(&mut env, &remote).unwrap();
        assert_eq!(fresh, vec![("E".to_string(), 12)]);
        assert_eq!(d.local().get("E"), 12);
        assert!(!d.has_pending_reply());
        assert!(env.sent.is_empty());
        assert!(matches!(d.on_sync_interest(&mut env, b"junk"), Err(SvsError::MalformedVector(_))));
    }

    #[test]
    fn older_remote_gets_suppressible_correction() {
        let mut env = Env::default();
        let mut a = fig3_state("A");
        a.preload("E", 12);
        let older = fig3_state("B").local().encode();
        a.on_sync_interest(&mut env, &older).unwrap();
        assert!(a.has_pending_reply());
        let reply = env.scheduled.iter().find(|s| s.1 == SvsTimer::Reply).unwrap();
        assert_eq!(reply.0, SimTime::from_millis(100));
        // a peer already sent the newer vector: cancel ours
        a.on_sync_interest(&mut env, &a.local().clone().encode()).unwrap();
        assert!(!a.has_pending_reply());
        assert!(env.sent.is_empty());
    }

    #[test]
    fn equal_remote_only_resets_refresh() {
        let mut env = Env::default();
        let mut a = fig3_state("A");
        a.start(&mut env);
        env.now = SimTime::from_secs(10);
        let same = a.local().encode();
        a.on_sync_interest(&mut env, &same).unwrap();
        assert!(env.sent.is_empty());
        assert_eq!(env.cancelled.len(), 1);
        let (at, t, _) = *env.scheduled.last().unwrap();
        assert_eq!((at, t), (SimTime::from_secs(40), SvsTimer::Refresh));
    }

    #[test]
    fn lone_member_refreshes_once_per_period() {
        let mut env = Env::default();
        let cfg = SvsConfig {
            refresh_jitter: 0.0,
            ..SvsConfig::default()
        };
        let mut a = SyncState::new("A", &["A"], cfg);
        a.start(&mut env);
        for _ in 0..10 {
            let (at, t, _) = *env.scheduled.last().unwrap();
            env.now = at;
            a.on_timer(&mut env, t);
        }
        assert_eq!(env.sent.len(), 10);
        assert_eq!(env.now, SimTime::from_secs(300));
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        fn arb_vec() -> impl Strategy<Value = StateVector> {
            proptest::collection::btree_map("[A-F]", 0u64..20, 0..6)
                .prop_map(|m| StateVector { entries: m })
        }

        proptest! {
            #[test]
            fn merge_laws(a in arb_vec(), b in arb_vec(), c in arb_vec()) {
                prop_assert_eq!(a.merge(&b), b.merge(&a));
                prop_assert_eq!(a.merge(&b).merge(&c), a.merge(&b.merge(&c)));
                prop_assert_eq!(a.merge(&a), a.clone());
                let m = a.merge(&b);
                for (p, s) in a.iter().chain(b.iter()) {
                    prop_assert!(m.get(p) >= s);
                }
            }

            #[test]
            fn codec_round_trip(a in arb_vec()) {
                prop_assert_eq!(StateVector::decode(&a.encode()).unwrap(), a);
            }

            #[test]
            fn local_never_decreases(vs in proptest::collection::vec(arb_vec(), 1..8)) {
                let mut env = Env::default();
                let mut s = SyncState::new("A", &["A", "B"], SvsConfig::default());
                let mut prev = s.local().clone();
                for v in vs {
                    s.on_sync_interest(&mut env, &v.encode()).unwrap();
                    let (behind, _) = s.local().compare(&prev);
                    prop_assert!(!behind);
                    prev = s.local().clone();
                }
            }
        }
    }
}
