//! Named Data Networking: names, packets, trust and forwarding.

pub mod forwarder;
pub mod name;
pub mod packet;
pub mod trust;

pub use forwarder::{ContentStore, Face, Fib, Forwarder, FwdAction, FwdDrop, PitEntry};
pub use name::{Name, NameError};
pub use packet::{sign, sign_with, Certificate, DataPacket, Interest};
pub use trust::{validate, CertStore, NamePattern, RejectReason, TrustRule, TrustSchema, Validation};
