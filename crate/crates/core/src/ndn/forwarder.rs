//! Per-node forwarding pipeline. The forwarder is sans-IO: each input yields
//! a list of [`FwdAction`]s for the caller to carry out.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::fmt;

use super::name::Name;
use super::packet::{DataPacket, Interest};
use crate::engine::SimTime;
use crate::topology::NodeIdx;

/// A forwarder interface: a link to a neighbor or the local application.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Face {
    Link(NodeIdx),
    App,
}

#[derive(Debug, Clone, Default)]
pub struct Fib {
    entries: BTreeMap<Name, Vec<Face>>,
}

impl Fib {
    pub fn insert(&mut self, prefix: Name, next_hops: Vec<Face>) {
        self.entries.insert(prefix, next_hops);
    }

    /// Longest-prefix match over whole components.
    pub fn lookup(&self, name: &Name) -> Option<&[Face]> {
        (1..=name.len()).rev().find_map(|n| {
            let prefix = Name::from_components(name.components()[..n].iter().cloned()).ok()?;
            self.entries.get(&prefix).map(Vec::as_slice)
        })
    }

    pub fn entries(&self) -> impl Iterator<Item = (&Name, &[Face])> {
        self.entries.iter().map(|(n, f)| (n, f.as_slice()))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct DownRecord {
    pub nonce: u64,
    pub arrival: SimTime,
    pub retx: bool,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PitEntry {
    pub name: Name,
    pub downstreams: BTreeMap<Face, DownRecord>,
    pub upstream_sent_at: SimTime,
    pub nonces_seen: HashSet<u64>,
    pub expiry: SimTime,
}

/// LRU cache keyed by exact name. `None` capacity means unbounded.
#[derive(Debug, Clone, Default)]
pub struct ContentStore {
    capacity: Option<usize>,
    entries: HashMap<Name, (DataPacket, u64)>,
    by_use: BTreeMap<u64, Name>,
    tick: u64,
}

impl ContentStore {
    pub fn new(capacity: Option<usize>) -> Self {
        ContentStore {
            capacity,
            ..Default::default()
        }
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn contains(&self, name: &Name) -> bool {
        self.entries.contains_key(name)
    }

    fn touch(&mut self, name: &Name) {
        self.tick += 1;
        if let Some((_, t)) = self.entries.get_mut(name) {
            self.by_use.remove(t);
            *t = self.tick;
            self.by_use.insert(self.tick, name.clone());
        }
    }

    /// Looks up and marks as recently used.
    pub fn get(&mut self, name: &Name) -> Option<DataPacket> {
        if !self.entries.contains_key(name) {
            return None;
        }
        self.touch(name);
        self.entries.get(name).map(|(d, _)| d.clone())
    }

    /// Returns the evicted name, if any.
    pub fn insert(&mut self, data: DataPacket) -> Option<Name> {
        if self.capacity == Some(0) {
            return None;
        }
        let name = data.name.clone();
        if let Some(slot) = self.entries.get_mut(&name) {
            slot.0 = data;
            self.touch(&name);
            return None;
        }
        let mut evicted = None;
        if self.capacity.is_some_and(|c| self.entries.len() >= c) {
            if let Some((_, old)) = self.by_use.pop_first() {
                self.entries.remove(&old);
                evicted = Some(old);
            }
        }
        self.tick += 1;
        self.by_use.insert(self.tick, name.clone());
        self.entries.insert(name, (data, self.tick));
        evicted
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FwdDrop {
    Duplicate,
    NoRoute,
    Unsolicited,
}

impl fmt::Display for FwdDrop {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            FwdDrop::Duplicate => "duplicate-nonce",
            FwdDrop::NoRoute => "no-route",
            FwdDrop::Unsolicited => "unsolicited",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum FwdAction {
    SendInterest { face: Face, interest: Interest },
    SendData { face: Face, data: DataPacket },
    CacheHit { face: Face, name: Name },
    Aggregate { face: Face, name: Name },
    Drop { face: Face, name: Name, reason: FwdDrop, interest: bool },
    /// Ask to be woken at `at` to check expiry of `name`.
    ExpireAt { name: Name, at: SimTime },
    Expired { name: Name },
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct FwdStats {
    pub cache_hits: u64,
    pub aggregations: u64,
    pub drops: u64,
    pub interests_forwarded: u64,
    pub expirations: u64,
}

#[derive(Debug, Clone)]
pub struct Forwarder {
    pub node: NodeIdx,
    pub fib: Fib,
    pit: HashMap<Name, PitEntry>,
    pub cs: ContentStore,
    retx_suppression: SimTime,
    sync_prefix: Name,
    sync_seen: HashSet<(Name, u64)>,
    pub stats: FwdStats,
}

impl Forwarder {
    pub fn new(
        node: NodeIdx,
        fib: Fib,
        cs_capacity: Option<usize>,
        retx_suppression: SimTime,
        sync_prefix: Name,
    ) -> Self {
        Forwarder {
            node,
            fib,
            pit: HashMap::new(),
            cs: ContentStore::new(cs_capacity),
            retx_suppression,
            sync_prefix,
            sync_seen: HashSet::new(),
            stats: FwdStats::default(),
        }
    }

    pub fn pit_entry(&self, name: &Name) -> Option<&PitEntry> {
        self.pit.get(name)
    }

    pub fn pit_len(&self) -> usize {
        self.pit.len()
    }

    pub fn is_sync(&self, name: &Name) -> bool {
        self.sync_prefix.is_prefix_of(name)
    }

    fn drop(&mut self, face: Face, name: &Name, reason: FwdDrop, interest: bool) -> FwdAction {
        self.stats.drops += 1;
        FwdAction::Drop {
            face,
            name: name.clone(),
            reason,
            interest,
        }
    }

    pub fn on_interest(&mut self, face: Face, interest: Interest, now: SimTime) -> Vec<FwdAction> {
        if self.is_sync(&interest.name) {
            return self.on_sync_interest(face, interest);
        }
        let name = interest.name.clone();
        let lifetime = interest.lifetime;
        if let Some(e) = self.pit.get(&name) {
            if e.nonces_seen.contains(&interest.nonce) {
                return vec![self.drop(face, &name, FwdDrop::Duplicate, true)];
            }
        }
        if let Some(mut data) = self.cs.get(&name) {
            self.stats.cache_hits += 1;
            data.recovery = interest.retx;
            return vec![
                FwdAction::CacheHit {
                    face,
                    name: name.clone(),
                },
                FwdAction::SendData { face, data },
            ];
        }
        let record = DownRecord {
            nonce: interest.nonce,
            arrival: now,
            retx: interest.retx,
        };
        let suppression = self.retx_suppression;
        if let Some(e) = self.pit.get_mut(&name) {
            e.nonces_seen.insert(interest.nonce);
            e.downstreams.insert(face, record);
            let extended = now + lifetime;
            let mut out = Vec::new();
            if extended > e.expiry {
                e.expiry = extended;
                out.push(FwdAction::ExpireAt {
                    name: name.clone(),
                    at: extended,
                });
            }
            if now.saturating_sub(e.upstream_sent_at) >= suppression {
                e.upstream_sent_at = now;
                let upstream = self.upstream(&name, face);
                self.stats.interests_forwarded += upstream.len() as u64;
                out.extend(upstream.into_iter().map(|f| FwdAction::SendInterest {
                    face: f,
                    interest: interest.clone(),
                }));
            } else {
                self.stats.aggregations += 1;
                out.push(FwdAction::Aggregate { face, name });
            }
            return out;
        }
        let upstream = self.upstream(&name, face);
        if upstream.is_empty() {
            return vec![self.drop(face, &name, FwdDrop::NoRoute, true)];
        }
        let expiry = now + lifetime;
        self.pit.insert(
            name.clone(),
            PitEntry {
                name: name.clone(),
                downstreams: BTreeMap::from([(face, record)]),
                upstream_sent_at: now,
                nonces_seen: HashSet::from([interest.nonce]),
                expiry,
            },
        );
        self.stats.interests_forwarded += upstream.len() as u64;
        let mut out: Vec<FwdAction> = upstream
            .into_iter()
            .map(|f| FwdAction::SendInterest {
                face: f,
                interest: interest.clone(),
            })
            .collect();
        out.push(FwdAction::ExpireAt { name, at: expiry });
        out
    }

    fn upstream(&self, name: &Name, incoming: Face) -> Vec<Face> {
        self.fib
            .lookup(name)
            .map(|hops| hops.iter().copied().filter(|&f| f != incoming).collect())
            .unwrap_or_default()
    }

    // Sync Interests are flooded along the FIB's tree faces; no PIT state.
    fn on_sync_interest(&mut self, face: Face, interest: Interest) -> Vec<FwdAction> {
        if !self.sync_seen.insert((interest.name.clone(), interest.nonce)) {
            return vec![self.drop(face, &interest.name, FwdDrop::Duplicate, true)];
        }
        let out = self.upstream(&interest.name, face);
        if out.is_empty() && self.fib.lookup(&interest.name).is_none() {
            return vec![self.drop(face, &interest.name, FwdDrop::NoRoute, true)];
        }
        out.into_iter()
            .map(|f| FwdAction::SendInterest {
                face: f,
                interest: interest.clone(),
            })
            .collect()
    }

    pub fn on_data(&mut self, face: Face, data: DataPacket, _now: SimTime) -> Vec<FwdAction> {
        let Some(entry) = self.pit.remove(&data.name) else {
            return vec![self.drop(face, &data.name, FwdDrop::Unsolicited, false)];
        };
        let mut out = Vec::new();
        for (&down, rec) in &entry.downstreams {
            if down == face {
                continue;
            }
            let mut copy = data.clone();
            copy.recovery = data.recovery || rec.retx;
            out.push(FwdAction::SendData {
                face: down,
                data: copy,
            });
        }
        let mut cached = data;
        cached.recovery = false;
        self.cs.insert(cached);
        out
    }

    /// Removes the entry for `name` if its (possibly extended) expiry has passed.
    pub fn pit_expire(&mut self, name: &Name, now: SimTime) -> Vec<FwdAction> {
        match self.pit.get(name) {
            Some(e) if e.expiry <= now => {
                self.pit.remove(name);
                self.stats.expirations += 1;
                vec![FwdAction::Expired { name: name.clone() }]
            }
            _ => Vec::new(),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const R2: NodeIdx = 1;
    const A: NodeIdx = 10;
    const B: NodeIdx = 11;
    const C: NodeIdx = 12;

    fn n(s: &str) -> Name {
        s.parse().unwrap()
    }

    fn router() -> Forwarder {
        let mut fib = Fib::default();
        fib.insert(n("/E"), vec![Face::Link(R2)]);
        fib.insert(n("/sync"), vec![Face::Link(R2), Face::Link(A), Face::Link(B)]);
        Forwarder::new(4, fib, None, SimTime::from_millis(100), n("/sync"))
    }

    fn interest(name: &str, nonce: u64) -> Interest {
        Interest {
            name: n(name),
            nonce,
            lifetime: SimTime::from_secs(4),
            app_params: None,
            retx: false,
        }
    }

    fn data(name: &str) -> DataPacket {
        DataPacket {
            name: n(name),
            content: vec![1],
            key_locator: n("/E/KEY/1"),
            sig: [0; 32],
            encrypted: false,
            recovery: false,
        }
    }

    fn sends(actions: &[FwdAction]) -> Vec<Face> {
        actions
            .iter()
            .filter_map(|a| match a {
                FwdAction::SendInterest { face, .. } | FwdAction::SendData { face, .. } => {
                    Some(*face)
                }
                _ => None,
            })
            .collect()
    }

    #[test]
    fn three_consumers_one_upstream_interest() {
        let mut f = router();
        let t = SimTime::from_millis(40);
        let a = f.on_interest(Face::Link(A), interest("/E/seq=12", 1), t);
        let b = f.on_interest(Face::Link(B), interest("/E/seq=12", 2), t);
        let c = f.on_interest(Face::Link(C), interest("/E/seq=12", 3), t);
        assert_eq!(sends(&a), vec![Face::Link(R2)]);
        assert!(sends(&b).is_empty() && sends(&c).is_empty());
        assert_eq!(f.stats.aggregations, 2);
        assert_eq!(f.pit_entry(&n("/E/seq=12")).unwrap().downstreams.len(), 3);

        let out = f.on_data(Face::Link(R2), data("/E/seq=12"), SimTime::from_millis(60));
        assert_eq!(sends(&out), vec![Face::Link(A), Face::Link(B), Face::Link(C)]);
        assert!(f.pit_entry(&n("/E/seq=12")).is_none());
        assert!(f.cs.contains(&n("/E/seq=12")));
    }

    #[test]
    fn retransmission_passes_after_suppression_window() {
        let mut f = router();
        f.on_interest(Face::Link(A), interest("/E/seq=12", 1), SimTime::from_millis(40));
        let early = f.on_interest(Face::Link(B), interest("/E/seq=12", 2), SimTime::from_millis(139));
        assert!(sends(&early).is_empty());
        let mut retx = interest("/E/seq=12", 3);
        retx.retx = true;
        let late = f.on_interest(Face::Link(A), retx, SimTime::from_millis(140));
        assert_eq!(sends(&late), vec![Face::Link(R2)]);
        assert_eq!(f.pit_entry(&n("/E/seq=12")).unwrap().upstream_sent_at, SimTime::from_millis(140));
        // the retransmitting face's copy is marked as recovery traffic
        let out = f.on_data(Face::Link(R2), data("/E/seq=12"), SimTime::from_millis(160));
        for a in out {
            if let FwdAction::SendData { face, data } = a {
                assert_eq!(data.recovery, face == Face::Link(A));
            }
        }
    }

    #[test]
    fn cache_hit_creates_no_pit_state() {
        let mut f = router();
        f.on_interest(Face::Link(A), interest("/E/seq=12", 1), SimTime::ZERO);
        f.on_data(Face::Link(R2), data("/E/seq=12"), SimTime::ZERO);
        let out = f.on_interest(Face::Link(B), interest("/E/seq=12", 9), SimTime::from_secs(1));
        assert_eq!(sends(&out), vec![Face::Link(B)]);
        assert!(matches!(out[0], FwdAction::CacheHit { .. }));
        assert_eq!(f.pit_len(), 0);
        assert_eq!(f.stats.cache_hits, 1);
    }

    #[test]
    fn duplicates_no_route_and_unsolicited_are_dropped() {
        let mut f = router();
        f.on_interest(Face::Link(A), interest("/E/seq=1", 7), SimTime::ZERO);
        let dup = f.on_interest(Face::Link(B), interest("/E/seq=1", 7), SimTime::ZERO);
        assert!(matches!(dup[0], FwdAction::Drop { reason: FwdDrop::Duplicate, .. }));
        let nr = f.on_interest(Face::Link(A), interest("/Q/seq=1", 8), SimTime::ZERO);
        assert!(matches!(nr[0], FwdAction::Drop { reason: FwdDrop::NoRoute, .. }));
        let un = f.on_data(Face::Link(R2), data("/E/seq=5"), SimTime::ZERO);
        assert!(matches!(un[0], FwdAction::Drop { reason: FwdDrop::Unsolicited, .. }));
        assert_eq!(f.stats.drops, 3);
    }

    #[test]
    fn expiry_follows_latest_arrival() {
        let mut f = router();
        let out = f.on_interest(Face::Link(A), interest("/E/seq=1", 1), SimTime::ZERO);
        assert!(out.contains(&FwdAction::ExpireAt {
            name: n("/E/seq=1"),
            at: SimTime::from_secs(4)
        }));
        f.on_interest(Face::Link(A), interest("/E/seq=1", 2), SimTime::from_secs(1));
        assert!(f.pit_expire(&n("/E/seq=1"), SimTime::from_secs(4)).is_empty());
        assert_eq!(
            f.pit_expire(&n("/E/seq=1"), SimTime::from_secs(5)),
            vec![FwdAction::Expired { name: n("/E/seq=1") }]
        );
        assert_eq!(f.pit_len(), 0);
    }

    #[test]
    fn lru_eviction_at_capacity_one() {
        let mut cs = ContentStore::new(Some(1));
        assert_eq!(cs.insert(data("/A/seq=1")), None);
        assert_eq!(cs.insert(data("/E/seq=12")), Some(n("/A/seq=1")));
        assert_eq!(cs.len(), 1);
        let mut cs = ContentStore::new(Some(2));
        cs.insert(data("/a"));
        cs.insert(data("/b"));
        cs.get(&n("/a"));
        assert_eq!(cs.insert(data("/c")), Some(n("/b")));
    }

    #[test]
    fn sync_is_flooded_once_without_pit() {
        let mut f = router();
        let mut s = interest("/sync", 5);
        s.app_params = Some(b"x".to_vec());
        let out = f.on_interest(Face::Link(A), s.clone(), SimTime::ZERO);
        assert_eq!(sends(&out), vec![Face::Link(R2), Face::Link(B)]);
        assert_eq!(f.pit_len(), 0);
        let again = f.on_interest(Face::Link(B), s, SimTime::ZERO);
        assert!(matches!(again[0], FwdAction::Drop { reason: FwdDrop::Duplicate, .. }));
    }

    #[test]
    fn fib_longest_prefix() {
        let mut fib = Fib::default();
        fib.insert(n("/E"), vec![Face::Link(1)]);
        fib.insert(n("/E/seq=1"), vec![Face::App]);
        assert_eq!(fib.lookup(&n("/E/seq=1")), Some(&[Face::App][..]));
        assert_eq!(fib.lookup(&n("/E/seq=2")), Some(&[Face::Link(1)][..]));
        assert_eq!(fib.lookup(&n("/EE/seq=2")), None);
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #[test]
            fn cs_never_exceeds_capacity(cap in 1usize..5, names in proptest::collection::vec(0u8..12, 0..40)) {
                let mut cs = ContentStore::new(Some(cap));
                for x in names {
                    cs.insert(data(&format!("/P/seq={x}")));
                    prop_assert!(cs.len() <= cap);
                }
            }
        }
    }
}
