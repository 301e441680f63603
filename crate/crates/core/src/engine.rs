//! Discrete-event scheduler and seeded random streams.
//!
//! Events are ordered by `(fire_at, seq)` where `seq` is a global insertion
//! counter, so two events scheduled for the same instant dispatch in the
//! order they were scheduled. Cancellation is lazy: a cancelled event stays
//! in the heap but its payload is gone, and it is skipped on pop.

use std::cmp::Reverse;
use std::collections::{BTreeMap, BinaryHeap, HashMap};
use std::fmt;
use std::ops::{Add, Sub};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Simulated time in integer microseconds since the start of a run.
#[derive(
    Debug, Clone, Copy, Default, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize,
)]
#[serde(transparent)]
pub struct SimTime(u64);

impl SimTime {
    pub const ZERO: SimTime = SimTime(0);
    pub const MAX: SimTime = SimTime(u64::MAX);

    pub const fn from_micros(micros: u64) -> Self {
        SimTime(micros)
    }

    pub const fn from_millis(ms: u64) -> Self {
        SimTime(ms * 1_000)
    }

    pub const fn from_secs(s: u64) -> Self {
        SimTime(s * 1_000_000)
    }

    /// Converts a duration in seconds, truncating to whole microseconds.
    /// Negative and NaN inputs clamp to zero.
    pub fn from_secs_f64(secs: f64) -> Self {
        if secs.is_nan() || secs <= 0.0 {
            return SimTime(0);
        }
        SimTime((secs * 1e6).floor() as u64)
    }

    /// Exact conversion from a millisecond value given in configuration.
    /// Returns `None` when the value is negative, non-finite or not a whole
    /// number of microseconds.
    pub fn from_millis_f64_exact(ms: f64) -> Option<Self> {
        if !ms.is_finite() || ms < 0.0 {
            return None;
        }
        let micros = ms * 1_000.0;
        let rounded = micros.round();
        if (micros - rounded).abs() > 1e-6 || rounded > u64::MAX as f64 {
            return None;
        }
        Some(SimTime(rounded as u64))
    }

    pub const fn as_micros(self) -> u64 {
        self.0
    }

    pub fn as_secs_f64(self) -> f64 {
        self.0 as f64 / 1e6
    }

    pub fn as_millis_f64(self) -> f64 {
        self.0 as f64 / 1e3
    }

    pub fn saturating_sub(self, other: SimTime) -> SimTime {
        SimTime(self.0.saturating_sub(other.0))
    }
}

impl Add for SimTime {
    type Output = SimTime;
    fn add(self, rhs: SimTime) -> SimTime {
        SimTime(self.0.saturating_add(rhs.0))
    }
}

impl Sub for SimTime {
    type Output = SimTime;
    fn sub(self, rhs: SimTime) -> SimTime {
        SimTime(self.0 - rhs.0)
    }
}

impl fmt::Display for SimTime {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}.{:06}s", self.0 / 1_000_000, self.0 % 1_000_000)
    }
}

/// Who an event is delivered to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Target {
    Node(usize),
    Engine,
}

/// Opaque handle returned by [`Engine::schedule`]; it is the event's `seq`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct EventHandle(u64);

impl EventHandle {
    pub fn seq(self) -> u64 {
        self.0
    }

    #[cfg(test)]
    pub(crate) const fn from_seq(seq: u64) -> Self {
        EventHandle(seq)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimEvent<P> {
    pub fire_at: SimTime,
    pub seq: u64,
    pub target: Target,
    pub payload: P,
}

#[derive(Debug, Error, PartialEq)]
pub enum EngineError {
    #[error("cannot schedule at {at} when the clock is already {now}")]
    SchedulingInPast { at: SimTime, now: SimTime },
    #[error("empty range: lo {lo} > hi {hi}")]
    BadRange { lo: f64, hi: f64 },
}

/// A named random sub-stream, e.g. `srm:E` or `link:R2-R3`.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct StreamId(String);

impl StreamId {
    pub fn new(name: impl Into<String>) -> Self {
        StreamId(name.into())
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }
}

impl From<&str> for StreamId {
    fn from(s: &str) -> Self {
        StreamId(s.to_string())
    }
}

impl From<String> for StreamId {
    fn from(s: String) -> Self {
        StreamId(s)
    }
}

/// Seeded source of independent named sub-streams. Each stream's sequence
/// depends only on the run seed and the stream name.
#[derive(Debug, Clone)]
pub struct RandomSource {
    seed: u64,
    streams: BTreeMap<StreamId, ChaCha8Rng>,
}

fn fnv1a(bytes: &[u8]) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in bytes {
        h ^= u64::from(*b);
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    h
}

fn splitmix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

impl RandomSource {
    pub fn new(seed: u64) -> Self {
        RandomSource {
            seed,
            streams: BTreeMap::new(),
        }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    fn stream(&mut self, id: &StreamId) -> &mut ChaCha8Rng {
        if !self.streams.contains_key(id) {
            let derived = splitmix(self.seed ^ splitmix(fnv1a(id.0.as_bytes())));
            self.streams
                .insert(id.clone(), ChaCha8Rng::seed_from_u64(derived));
        }
        self.streams.get_mut(id).expect("stream inserted above")
    }

    /// Uniform draw in `[lo, hi)`; a degenerate interval returns `lo`.
    pub fn uniform(&mut self, id: &StreamId, lo: f64, hi: f64) -> Result<f64, EngineError> {
        if lo.is_nan() || hi.is_nan() || lo > hi {
            return Err(EngineError::BadRange { lo, hi });
        }
        let u: f64 = self.stream(id).random();
        if lo == hi {
            return Ok(lo);
        }
        let v = lo + (hi - lo) * u;
        // guard against rounding up to hi
        Ok(if v >= hi { lo } else { v })
    }

    pub fn next_u64(&mut self, id: &StreamId) -> u64 {
        self.stream(id).random()
    }
}

/// Deterministic single-threaded event queue with a clock and random source.
#[derive(Debug)]
pub struct Engine<P> {
    clock: SimTime,
    next_seq: u64,
    heap: BinaryHeap<Reverse<(SimTime, u64)>>,
    pending: HashMap<u64, (Target, P)>,
    rng: RandomSource,
    dispatch_log: Option<Vec<(SimTime, u64, Target)>>,
}

impl<P> Engine<P> {
    pub fn new(seed: u64) -> Self {
        Engine {
            clock: SimTime::ZERO,
            next_seq: 0,
            heap: BinaryHeap::new(),
            pending: HashMap::new(),
            rng: RandomSource::new(seed),
            dispatch_log: None,
        }
    }

    /// Records `(fire_at, seq, target)` for every dispatched event.
    pub fn with_dispatch_log(mut self) -> Self {
        self.dispatch_log = Some(Vec::new());
        self
    }

    pub fn dispatch_log(&self) -> Option<&[(SimTime, u64, Target)]> {
        self.dispatch_log.as_deref()
    }

    pub fn now(&self) -> SimTime {
        self.clock
    }

    pub fn rng(&mut self) -> &mut RandomSource {
        &mut self.rng
    }

    pub fn pending_count(&self) -> usize {
        self.pending.len()
    }

    pub fn schedule(
        &mut self,
        at: SimTime,
        target: Target,
        payload: P,
    ) -> Result<EventHandle, EngineError> {
        if at < self.clock {
            return Err(EngineError::SchedulingInPast {
                at,
                now: self.clock,
            });
        }
        let seq = self.next_seq;
        self.next_seq += 1;
        self.heap.push(Reverse((at, seq)));
        self.pending.insert(seq, (target, payload));
        Ok(EventHandle(seq))
    }

    /// Schedules relative to the current clock; never fails.
    pub fn schedule_in(&mut self, delay: SimTime, target: Target, payload: P) -> EventHandle {
        let at = self.clock + delay;
        self.schedule(at, target, payload)
            .expect("relative schedule is never in the past")
    }

    /// Returns true iff the event existed and had not fired yet.
    pub fn cancel(&mut self, handle: EventHandle) -> bool {
        self.pending.remove(&handle.0).is_some()
    }

    pub fn is_pending(&self, handle: EventHandle) -> bool {
        self.pending.contains_key(&handle.0)
    }

    /// Pops the next live event with `fire_at <= end`, advancing the clock.
    pub fn pop_until(&mut self, end: SimTime) -> Option<SimEvent<P>> {
        while let Some(Reverse((at, seq))) = self.heap.peek().copied() {
            if at > end {
                return None;
            }
            self.heap.pop();
            if let Some((target, payload)) = self.pending.remove(&seq) {
                self.clock = at;
                if let Some(log) = self.dispatch_log.as_mut() {
                    log.push((at, seq, target));
                }
                return Some(SimEvent {
                    fire_at: at,
                    seq,
                    target,
                    payload,
                });
            }
        }
        None
    }

    /// Dispatches every event with `fire_at <= end` to `handler`, including
    /// events the handler schedules inside the window. Afterwards the clock is
    /// `max(last dispatched, end)`.
    pub fn run_until<F>(&mut self, end: SimTime, mut handler: F) -> usize
    where
        F: FnMut(&mut Engine<P>, SimEvent<P>),
    {
        let mut count = 0;
        while let Some(ev) = self.pop_until(end) {
            count += 1;
            handler(self, ev);
        }
        self.advance_to(end);
        count
    }

    /// Moves the clock forward without dispatching anything.
    pub fn advance_to(&mut self, t: SimTime) {
        if t > self.clock {
            self.clock = t;
        }
    }

    pub fn uniform(&mut self, stream: &StreamId, lo: f64, hi: f64) -> Result<f64, EngineError> {
        self.rng.uniform(stream, lo, hi)
    }
}
