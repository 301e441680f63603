//! Group application state for the NDN binding: which items a member holds
//! and which fetches are in flight.

use std::collections::BTreeMap;

use thiserror::Error;

use crate::engine::{EventHandle, SimTime};
use crate::ndn::Name;
use crate::seqset::SeqSet;
use crate::svs::StateVector;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum AppError {
    #[error("gave up on {name} after {retx} retransmissions")]
    RetxLimitExceeded { name: String, retx: u32 },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Outstanding {
    pub first_sent: SimTime,
    pub retx: u32,
    pub rto: SimTime,
    pub timer: Option<EventHandle>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Timeout {
    /// Send again with a fresh nonce and re-arm the timer for `rto`.
    Retransmit { rto: SimTime, retx: u32 },
    GiveUp(Outstanding),
}

#[derive(Debug, Clone, Default)]
pub struct Consumer {
    me: String,
    received: BTreeMap<String, SeqSet>,
    outstanding: BTreeMap<Name, Outstanding>,
    max_retx: u32,
}

impl Consumer {
    pub fn new(me: &str, max_retx: u32) -> Self {
        Consumer {
            me: me.to_string(),
            max_retx,
            ..Default::default()
        }
    }

    pub fn preload(&mut self, producer: &str, n: u64) {
        self.received.insert(producer.to_string(), SeqSet::filled(n));
    }

    pub fn holds_name(&self, name: &Name) -> bool {
        name.parse_adu()
            .is_some_and(|(p, s)| self.received.get(p).is_some_and(|r| r.contains(s)))
    }

    pub fn held(&self, producer: &str) -> u64 {
        self.received.get(producer).map_or(0, SeqSet::len)
    }

    pub fn is_outstanding(&self, name: &Name) -> bool {
        self.outstanding.contains_key(name)
    }

    pub fn outstanding(&self, name: &Name) -> Option<&Outstanding> {
        self.outstanding.get(name)
    }

    /// Registers a new fetch; false when the item is held or already requested.
    pub fn start_fetch(&mut self, name: &Name, now: SimTime, rto: SimTime) -> bool {
        if self.holds_name(name) || self.is_outstanding(name) {
            return false;
        }
        self.outstanding.insert(
            name.clone(),
            Outstanding {
                first_sent: now,
                retx: 0,
                rto,
                timer: None,
            },
        );
        true
    }

    pub fn set_timer(&mut self, name: &Name, h: EventHandle) {
        if let Some(o) = self.outstanding.get_mut(name) {
            o.timer = Some(h);
        }
    }

    /// Retransmission timer fired: back off ×2, or abandon at the limit.
    pub fn timeout(&mut self, name: &Name) -> Option<Timeout> {
        let o = self.outstanding.get_mut(name)?;
        o.timer = None;
        if o.retx >= self.max_retx {
            let o = self.outstanding.remove(name)?;
            return Some(Timeout::GiveUp(o));
        }
        o.retx += 1;
        o.rto = SimTime::from_micros(o.rto.as_micros().saturating_mul(2));
        Some(Timeout::Retransmit {
            rto: o.rto,
            retx: o.retx,
        })
    }

    /// Records a validated item. Returns `None` for duplicates; otherwise the
    /// fetch record if one was in flight.
    pub fn accept(&mut self, name: &Name) -> Option<Option<Outstanding>> {
        let (p, s) = name.parse_adu()?;
        if !self.received.entry(p.to_string()).or_default().insert(s) {
            return None;
        }
        Some(self.outstanding.remove(name))
    }

    /// Items below the vector's entries that are neither held nor in flight.
    pub fn gaps(&self, v: &StateVector) -> Vec<Name> {
        let mut out = Vec::new();
        for (p, latest) in v.iter() {
            if p == self.me {
                continue;
            }
            let have = self.received.get(p);
            let missing: Box<dyn Iterator<Item = u64>> = match have {
                Some(r) => Box::new(r.missing(latest)),
                None => Box::new(1..=latest),
            };
            for s in missing {
                let n = Name::for_adu(p, s);
                if !self.outstanding.contains_key(&n) {
                    out.push(n);
                }
            }
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn n(s: &str) -> Name {
        s.parse().unwrap()
    }

    #[test]
    fn retransmissions_back_off_then_give_up() {
        let mut c = Consumer::new("D", 3);
        let name = n("/E/seq=12");
        assert!(c.start_fetch(&name, SimTime::ZERO, SimTime::from_millis(200)));
        assert!(!c.start_fetch(&name, SimTime::ZERO, SimTime::from_millis(200)));
        let mut rtos = Vec::new();
        loop {
            match c.timeout(&name).unwrap() {
                Timeout::Retransmit { rto, .. } => rtos.push(rto.as_micros() / 1000),
                Timeout::GiveUp(o) => {
                    assert_eq!(o.retx, 3);
                    break;
                }
            }
        }
        assert_eq!(rtos, vec![400, 800, 1600]);
        assert!(!c.is_outstanding(&name));
        assert_eq!(c.timeout(&name), None);
    }

    #[test]
    fn accept_and_duplicates() {
        let mut c = Consumer::new("D", 10);
        let name = n("/E/seq=12");
        c.start_fetch(&name, SimTime::from_millis(5), SimTime::from_millis(200));
        let got = c.accept(&name).unwrap().unwrap();
        assert_eq!(got.first_sent, SimTime::from_millis(5));
        assert!(c.holds_name(&name));
        assert_eq!(c.accept(&name), None);
    }

    #[test]
    fn gaps_skip_own_held_and_outstanding() {
        let mut c = Consumer::new("D", 10);
        c.preload("E", 10);
        c.start_fetch(&n("/E/seq=11"), SimTime::ZERO, SimTime::from_millis(1));
        let v = StateVector::from_pairs([("D", 5), ("E", 12), ("X", 1)]);
        let gaps: Vec<String> = c.gaps(&v).iter().map(ToString::to_string).collect();
        assert_eq!(gaps, vec!["/E/seq=12", "/X/seq=1"]);
    }
}
