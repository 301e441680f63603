//! Name-based trust schema and chain validation.
//!
//! A rule pairs a data-name pattern with a signer-name pattern. Pattern
//! components are literals, `*` (any one component), component globs such as
//! `seq=*`, or back-references `\1`..`\9`. The first occurrence of a
//! back-reference binds the component it meets; later occurrences, in either
//! pattern of the pair, must see the same component.

use std::collections::{BTreeSet, HashMap};
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::name::Name;
use super::packet::{Certificate, DataPacket};

pub const MAX_CHAIN_DEPTH: usize = 8;

#[derive(Debug, Clone, PartialEq, Eq)]
enum Elem {
    Literal(String),
    Glob(String),
    Any,
    BackRef(u8),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct NamePattern {
    elems: Vec<Elem>,
    text: String,
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum PatternError {
    #[error("pattern `{0}` must start with `/` and have non-empty components")]
    Malformed(String),
    #[error("bad back-reference in `{0}` (use \\1 through \\9)")]
    BadBackRef(String),
}

impl FromStr for NamePattern {
    type Err = PatternError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let rest = s
            .strip_prefix('/')
            .ok_or_else(|| PatternError::Malformed(s.to_string()))?;
        let mut elems = Vec::new();
        for c in rest.split('/') {
            if c.is_empty() {
                return Err(PatternError::Malformed(s.to_string()));
            }
            let e = if let Some(d) = c.strip_prefix('\\') {
                match d.parse::<u8>() {
                    Ok(n @ 1..=9) if d.len() == 1 => Elem::BackRef(n),
                    _ => return Err(PatternError::BadBackRef(s.to_string())),
                }
            } else if c == "*" {
                Elem::Any
            } else if c.contains('*') {
                Elem::Glob(c.to_string())
            } else {
                Elem::Literal(c.to_string())
            };
            elems.push(e);
        }
        Ok(NamePattern {
            elems,
            text: s.to_string(),
        })
    }
}

impl fmt::Display for NamePattern {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.text)
    }
}

fn glob_match(pat: &str, s: &str) -> bool {
    let parts: Vec<&str> = pat.split('*').collect();
    let (first, last) = (parts[0], parts[parts.len() - 1]);
    if !s.starts_with(first) || s.len() < first.len() + last.len() || !s.ends_with(last) {
        return false;
    }
    let mut rest = &s[first.len()..s.len() - last.len()];
    for mid in &parts[1..parts.len() - 1] {
        match rest.find(mid) {
            Some(i) => rest = &rest[i + mid.len()..],
            None => return false,
        }
    }
    true
}

type Bindings = [Option<String>; 10];

impl NamePattern {
    fn match_with(&self, name: &Name, binds: &mut Bindings) -> bool {
        if self.elems.len() != name.len() {
            return false;
        }
        for (e, c) in self.elems.iter().zip(name.components()) {
            let ok = match e {
                Elem::Literal(l) => l == c,
                Elem::Glob(g) => glob_match(g, c),
                Elem::Any => true,
                Elem::BackRef(n) => match &binds[*n as usize] {
                    Some(bound) => bound == c,
                    None => {
                        binds[*n as usize] = Some(c.clone());
                        true
                    }
                },
            };
            if !ok {
                return false;
            }
        }
        true
    }

    pub fn matches(&self, name: &Name) -> bool {
        self.match_with(name, &mut Default::default())
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TrustRule {
    pub data: NamePattern,
    pub signer: NamePattern,
}

impl TrustRule {
    pub fn parse(data: &str, signer: &str) -> Result<Self, PatternError> {
        Ok(TrustRule {
            data: data.parse()?,
            signer: signer.parse()?,
        })
    }

    pub fn allows(&self, data: &Name, signer: &Name) -> bool {
        let mut binds = Bindings::default();
        self.data.match_with(data, &mut binds) && self.signer.match_with(signer, &mut binds)
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TrustSchema {
    pub rules: Vec<TrustRule>,
    pub anchors: BTreeSet<Name>,
}

impl TrustSchema {
    /// Producers sign their own `seq=` data; only `/mgr` certifies producers.
    pub fn default_rules() -> Vec<(String, String)> {
        vec![
            (r"/\1/seq=*".into(), r"/\1/KEY/*".into()),
            ("/*/KEY/*".into(), "/mgr/KEY/*".into()),
        ]
    }

    pub fn from_strings(rules: &[(String, String)], anchors: &[Name]) -> Result<Self, PatternError> {
        Ok(TrustSchema {
            rules: rules
                .iter()
                .map(|(d, s)| TrustRule::parse(d, s))
                .collect::<Result<_, _>>()?,
            anchors: anchors.iter().cloned().collect(),
        })
    }

    pub fn permits(&self, data: &Name, signer: &Name) -> bool {
        self.rules.iter().any(|r| r.allows(data, signer))
    }
}

/// Pre-distributed certificates, keyed by certificate name.
#[derive(Debug, Clone, Default)]
pub struct CertStore {
    certs: HashMap<Name, Certificate>,
}

impl CertStore {
    pub fn insert(&mut self, c: Certificate) {
        self.certs.insert(c.name().clone(), c);
    }

    pub fn get(&self, n: &Name) -> Option<&Certificate> {
        self.certs.get(n)
    }

    pub fn len(&self) -> usize {
        self.certs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.certs.is_empty()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum RejectReason {
    BadDigest,
    SchemaViolation,
    UnknownKey,
    NoAnchorPath,
    DepthExceeded,
}

impl fmt::Display for RejectReason {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        fmt::Debug::fmt(self, f)
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Validation {
    /// Number of signing links followed before reaching an anchor.
    Accept { depth: usize },
    Reject(RejectReason),
}

impl Validation {
    pub fn is_accept(&self) -> bool {
        matches!(self, Validation::Accept { .. })
    }
}

pub fn validate(pkt: &DataPacket, schema: &TrustSchema, store: &CertStore) -> Validation {
    let mut cur = pkt;
    let mut depth = 0;
    loop {
        if schema.anchors.contains(&cur.name) {
            let Some(anchor) = store.get(&cur.name) else {
                return Validation::Reject(RejectReason::UnknownKey);
            };
            if cur.key_locator != cur.name || anchor.packet() != cur {
                return Validation::Reject(RejectReason::NoAnchorPath);
            }
            if !cur.verify_digest(anchor.key()) {
                return Validation::Reject(RejectReason::BadDigest);
            }
            return Validation::Accept { depth };
        }
        if depth >= MAX_CHAIN_DEPTH {
            return Validation::Reject(RejectReason::DepthExceeded);
        }
        let Some(signer) = store.get(&cur.key_locator) else {
            return Validation::Reject(RejectReason::UnknownKey);
        };
        if !cur.verify_digest(signer.key()) {
            return Validation::Reject(RejectReason::BadDigest);
        }
        if cur.key_locator == cur.name {
            // self-signed but not a configured anchor
            return Validation::Reject(RejectReason::NoAnchorPath);
        }
        if !schema.permits(&cur.name, &cur.key_locator) {
            return Validation::Reject(RejectReason::SchemaViolation);
        }
        cur = signer.packet();
        depth += 1;
    }
}
