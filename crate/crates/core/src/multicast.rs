//! IP-multicast substrate: static groups and replication along
//! source-rooted shortest-path trees, with optional hop-count scoping.

use std::collections::{BTreeSet, HashMap};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::topology::{McastTree, NodeIdx, RouteTables, Topology, TopologyError};

pub type GroupIdx = usize;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct McastGroup {
    pub id: String,
    pub members: BTreeSet<NodeIdx>,
}

/// Maximum number of links a packet may traverse from its sender. The
/// sender's access link is hop 1.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ScopeLimit {
    pub hop_count: Option<u32>,
}

impl ScopeLimit {
    pub const UNLIMITED: ScopeLimit = ScopeLimit { hop_count: None };

    pub fn hops(n: u32) -> Self {
        ScopeLimit { hop_count: Some(n) }
    }

    fn allows(&self, hops: u32) -> bool {
        self.hop_count.is_none_or(|h| hops <= h)
    }
}

#[derive(Debug, Error, PartialEq)]
pub enum McastError {
    #[error("node `{node}` is not a member of group `{group}`")]
    NotAMember { node: String, group: String },
    #[error("group member `{0}` is not a host")]
    MemberNotHost(String),
    #[error(transparent)]
    Topology(#[from] TopologyError),
}

/// Per-copy multicast header carried with every replicated packet.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct McastHeader {
    pub group: GroupIdx,
    pub source: NodeIdx,
    /// Links traversed so far.
    pub hops: u32,
    pub scope: ScopeLimit,
}

#[derive(Debug, Clone)]
pub struct Multicast {
    groups: Vec<McastGroup>,
    trees: HashMap<(GroupIdx, NodeIdx), McastTree>,
}

impl Multicast {
    /// Precomputes one source tree per (group, member).
    pub fn new(
        topo: &Topology,
        routes: &RouteTables,
        groups: Vec<McastGroup>,
    ) -> Result<Self, McastError> {
        let mut trees = HashMap::new();
        for (gi, g) in groups.iter().enumerate() {
            for &m in &g.members {
                if !topo.is_host(m) {
                    return Err(McastError::MemberNotHost(topo.node(m).id.clone()));
                }
            }
            let members: Vec<NodeIdx> = g.members.iter().copied().collect();
            for &src in &g.members {
                trees.insert((gi, src), routes.multicast_tree(&members, src));
            }
        }
        Ok(Multicast { groups, trees })
    }

    pub fn group(&self, g: GroupIdx) -> &McastGroup {
        &self.groups[g]
    }

    pub fn groups(&self) -> &[McastGroup] {
        &self.groups
    }

    pub fn tree(&self, g: GroupIdx, source: NodeIdx) -> Option<&McastTree> {
        self.trees.get(&(g, source))
    }

    /// Starts a send: validates membership and returns the origin header.
    pub fn send(
        &self,
        topo: &Topology,
        g: GroupIdx,
        sender: NodeIdx,
        scope: ScopeLimit,
    ) -> Result<McastHeader, McastError> {
        let group = &self.groups[g];
        if !group.members.contains(&sender) {
            return Err(McastError::NotAMember {
                node: topo.node(sender).id.clone(),
                group: group.id.clone(),
            });
        }
        Ok(McastHeader {
            group: g,
            source: sender,
            hops: 0,
            scope,
        })
    }

    /// Copies to forward from `at`: tree children still within scope, each
    /// with its hop count incremented.
    pub fn fan_out(&self, hdr: &McastHeader, at: NodeIdx) -> Vec<(NodeIdx, McastHeader)> {
        let Some(tree) = self.trees.get(&(hdr.group, hdr.source)) else {
            return Vec::new();
        };
        let next = McastHeader {
            hops: hdr.hops + 1,
            ..*hdr
        };
        if !hdr.scope.allows(next.hops) {
            return Vec::new();
        }
        tree.children(at).iter().map(|&c| (c, next)).collect()
    }

    /// Whether a copy arriving at `at` is handed to the local member.
    pub fn delivers_to(&self, hdr: &McastHeader, at: NodeIdx) -> bool {
        at != hdr.source && self.groups[hdr.group].members.contains(&at)
    }
}
