use std::collections::HashMap;

use crate::lattice::{LwwCell, Timestamp};
use crate::metadata::{default_vector, is_meta_key, metadata_vector, ReplicationVector};
use crate::ring::{
    local_ring, responsible_workers, HashRing, NodeId, Placement, RingError, RingMember, Tier,
    TierMap, WorkerAddr,
};

use super::message::Broadcast;

/// One component's (possibly stale) copy of cluster metadata: the hash
/// rings of every tier plus replication vectors that differ from default.
#[derive(Debug, Clone)]
pub struct ClusterView {
    k: u32,
    global: TierMap<HashRing>,
    local: TierMap<HashRing>,
    workers_per_node: TierMap<u32>,
    rvs: HashMap<String, (Timestamp, ReplicationVector)>,
    version: u64,
}

impl ClusterView {
    pub fn new(k: u32, workers_per_node: TierMap<u32>) -> Self {
        Self {
            k,
            global: TierMap::default(),
            local: workers_per_node.map(|_, w| local_ring(*w)),
            workers_per_node,
            rvs: HashMap::new(),
            version: 0,
        }
    }

    pub fn k(&self) -> u32 {
        self.k
    }

    /// Bumped on every effective change.
    pub fn version(&self) -> u64 {
        self.version
    }

    pub fn workers_per_node(&self) -> TierMap<u32> {
        self.workers_per_node
    }

    pub fn global(&self, tier: Tier) -> &HashRing {
        &self.global[tier]
    }

    pub fn node_count(&self, tier: Tier) -> u32 {
        self.global[tier].member_count() as u32
    }

    pub fn node_counts(&self) -> TierMap<u32> {
        TierMap::from_fn(|t| self.node_count(t))
    }

    pub fn nodes(&self, tier: Tier) -> Vec<NodeId> {
        self.global[tier].member_ids().map(NodeId::new).collect()
    }

    pub fn tier_of(&self, node: &NodeId) -> Option<Tier> {
        Tier::ALL
            .into_iter()
            .find(|t| self.global[*t].contains(node.as_str()))
    }

    pub fn add_node(&mut self, node: &NodeId, tier: Tier, weight: u32) -> bool {
        if self.global[tier].contains(node.as_str()) {
            return false;
        }
        match self.global[tier].insert(&RingMember::new(node.as_str(), weight)) {
            Ok(()) => {
                self.version += 1;
                true
            }
            Err(e) => {
                log::warn!("ignoring ring insert for {node}: {e}");
                false
            }
        }
    }

    pub fn remove_node(&mut self, node: &NodeId) -> bool {
        let mut changed = false;
        for tier in Tier::ALL {
            changed |= self.global[tier].remove(node.as_str());
        }
        if changed {
            self.version += 1;
        }
        changed
    }

    /// Replaces a tier's membership wholesale (used when rebuilding from
    /// stored ring metadata).
    pub fn set_members(&mut self, tier: Tier, members: &[RingMember]) -> bool {
        let mut ring = HashRing::new();
        for m in members {
            if let Err(e) = ring.insert(m) {
                log::warn!("skipping ring member {}: {e}", m.member_id);
            }
        }
        if ring == self.global[tier] {
            return false;
        }
        self.global[tier] = ring;
        self.version += 1;
        true
    }

    /// Effective vector for `key`.
    pub fn rv(&self, key: &str) -> ReplicationVector {
        if is_meta_key(key) {
            return metadata_vector();
        }
        self.rvs
            .get(key)
            .map(|(_, rv)| *rv)
            .unwrap_or_else(|| default_vector(self.k))
    }

    pub fn rv_stamp(&self, key: &str) -> Option<Timestamp> {
        self.rvs.get(key).map(|(ts, _)| *ts)
    }

    /// Keys carrying an explicit vector.
    pub fn rv_keys(&self) -> impl Iterator<Item = &str> + '_ {
        self.rvs.keys().map(String::as_str)
    }

    /// LWW-merges a vector update. Returns true when the effective vector
    /// changed.
    pub fn set_rv(&mut self, key: &str, ts: Timestamp, rv: ReplicationVector) -> bool {
        if is_meta_key(key) {
            return false;
        }
        let before = self.rv(key);
        match self.rvs.get(key) {
            Some((old, _)) if *old >= ts => return false,
            _ => {}
        }
        self.rvs.insert(key.to_string(), (ts, rv));
        if before != rv {
            self.version += 1;
            true
        } else {
            false
        }
    }

    pub fn placement(&self, key: &str) -> Result<Placement, RingError> {
        responsible_workers(key, &self.rv(key), &self.global, &self.local)
    }

    pub fn is_responsible(&self, key: &str, addr: &WorkerAddr) -> bool {
        match self.placement(key) {
            Ok(p) => p.0.iter().any(|v| v.contains(addr)),
            Err(_) => false,
        }
    }

    /// Endpoints a client should use: memory replicas only when there are
    /// any, disk replicas otherwise.
    pub fn preferred(&self, key: &str) -> Result<(Tier, Vec<WorkerAddr>), RingError> {
        let mut p = self.placement(key)?;
        if !p[Tier::Mem].is_empty() {
            Ok((Tier::Mem, std::mem::take(&mut p[Tier::Mem])))
        } else {
            Ok((Tier::Ebs, std::mem::take(&mut p[Tier::Ebs])))
        }
    }

    /// Applies a broadcast. Returns true if the view changed.
    pub fn apply(&mut self, b: &Broadcast) -> bool {
        match b {
            Broadcast::Join { node, tier, weight } => self.add_node(node, *tier, *weight),
            Broadcast::Depart { node, .. } | Broadcast::Failed { node, .. } => {
                self.remove_node(node)
            }
            Broadcast::RvUpdate { key, cell } => match ReplicationVector::decode(cell.payload()) {
                Ok(rv) => self.set_rv(key, cell.ts(), rv),
                Err(e) => {
                    log::warn!("ignoring malformed vector for {key}: {e}");
                    false
                }
            },
        }
    }

    /// The vector update as an LWW cell, for storage under the RV key.
    pub fn rv_cell(&self, key: &str) -> Option<LwwCell> {
        self.rvs
            .get(key)
            .map(|(ts, rv)| LwwCell::new(*ts, rv.encode().into_bytes()))
    }
}
