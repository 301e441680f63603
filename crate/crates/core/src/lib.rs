//! Deterministic packet-level simulator for comparing loss recovery in
//! IP-multicast SRM against NDN with State Vector Sync.

pub mod app;
pub mod engine;
pub mod error;
pub mod harness;
pub mod multicast;
pub mod ndn;
pub mod scenario;
pub mod seqset;
pub mod sim;
pub mod srm;
pub mod svs;
pub mod topology;
pub mod trace;

pub use error::SimError;
pub use scenario::{Protocol, Resolved, Scenario};
pub use sim::{run, LiveCounters, RunOutput};
