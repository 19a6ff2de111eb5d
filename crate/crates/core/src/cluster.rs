//! Node lifecycle bookkeeping and cost accounting.
//!
//! [`ClusterManager`] is the only actor that changes membership. It tracks
//! spawn delays, heartbeats and tier minimums, and tells its host which
//! join, depart and failure protocols to run; the host owns the workers.

use std::collections::{BTreeMap, BTreeSet};

use thiserror::Error;

use crate::monitor::ClusterShape;
use crate::policy::ActionPlan;
use crate::ring::{NodeId, Tier, TierMap};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum NodeState {
    Pending,
    Live,
    Departing,
    Failed,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct NodeHandle {
    pub id: NodeId,
    pub tier: Tier,
    pub state: NodeState,
    /// When a pending node becomes live.
    pub spawn_deadline_ms: u64,
    pub last_heartbeat_ms: u64,
}

/// Hourly prices.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CostModel {
    pub node_price: TierMap<f64>,
    /// Routing and monitoring nodes together.
    pub overhead: f64,
}

impl Default for CostModel {
    fn default() -> Self {
        Self {
            node_price: TierMap([0.532, 0.133]),
            overhead: 0.30,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum CostError {
    #[error("shape has no nodes")]
    EmptyShape,
}

/// Cost per hour of every live and pending node plus fixed overhead.
pub fn hourly_cost(shape: &ClusterShape, model: &CostModel) -> Result<f64, CostError> {
    let counts = TierMap::from_fn(|t| shape.billed(t));
    cost_of(counts, model)
}

pub fn cost_of(counts: TierMap<u32>, model: &CostModel) -> Result<f64, CostError> {
    if counts.0.iter().all(|n| *n == 0) {
        return Err(CostError::EmptyShape);
    }
    Ok(Tier::ALL
        .into_iter()
        .map(|t| counts[t] as f64 * model.node_price[t])
        .sum::<f64>()
        + model.overhead)
}

/// Something the host must carry out.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Lifecycle {
    /// A pending node's spawn delay elapsed: start it and run the join.
    Join { node: NodeId, tier: Tier },
    /// Run the departure protocol; report back with
    /// [`ClusterManager::departed`].
    Depart { node: NodeId, tier: Tier },
    /// Heartbeats stopped: peers drop the node from their rings.
    Failed { node: NodeId, tier: Tier },
}

#[derive(Debug, Clone)]
pub struct ManagerConfig {
    pub k: u32,
    pub workers_per_node: TierMap<u32>,
    pub spawn_delay_ms: u64,
    pub heartbeat_timeout_ms: u64,
    /// Spawn a replacement for every failed node.
    pub replace_failed: bool,
}

impl ManagerConfig {
    pub fn min_nodes(&self, tier: Tier) -> u32 {
        match tier {
            Tier::Mem => 1,
            Tier::Ebs => self.k + 1,
        }
    }
}

#[derive(Debug)]
pub struct ClusterManager {
    cfg: ManagerConfig,
    nodes: BTreeMap<NodeId, NodeHandle>,
    next_index: TierMap<u32>,
    applied: BTreeSet<u64>,
    queued: Vec<Lifecycle>,
}

impl ClusterManager {
    pub fn new(cfg: ManagerConfig) -> Self {
        Self {
            cfg,
            nodes: BTreeMap::new(),
            next_index: TierMap::default(),
            applied: BTreeSet::new(),
            queued: Vec::new(),
        }
    }

    pub fn config(&self) -> &ManagerConfig {
        &self.cfg
    }

    fn fresh_id(&mut self, tier: Tier) -> NodeId {
        let i = self.next_index[tier];
        self.next_index[tier] += 1;
        let prefix = match tier {
            Tier::Mem => "m",
            Tier::Ebs => "e",
        };
        NodeId::new(format!("{prefix}{i}"))
    }

    /// Registers a node that is live from the start (initial topology).
    pub fn bootstrap(&mut self, tier: Tier, now_ms: u64) -> NodeId {
        let id = self.fresh_id(tier);
        self.nodes.insert(
            id.clone(),
            NodeHandle {
                id: id.clone(),
                tier,
                state: NodeState::Live,
                spawn_deadline_ms: now_ms,
                last_heartbeat_ms: now_ms,
            },
        );
        id
    }

    /// Requests `n` new nodes; they stay pending for the spawn delay.
    pub fn add(&mut self, tier: Tier, n: u32, now_ms: u64) -> Vec<NodeId> {
        (0..n)
            .map(|_| {
                let id = self.fresh_id(tier);
                self.nodes.insert(
                    id.clone(),
                    NodeHandle {
                        id: id.clone(),
                        tier,
                        state: NodeState::Pending,
                        spawn_deadline_ms: now_ms + self.cfg.spawn_delay_ms,
                        last_heartbeat_ms: now_ms + self.cfg.spawn_delay_ms,
                    },
                );
                id
            })
            .collect()
    }

    /// Starts removing a live node unless that would breach the tier
    /// minimum. Returns whether the departure was queued.
    pub fn remove(&mut self, node: &NodeId) -> bool {
        let Some(h) = self.nodes.get(node) else {
            return false;
        };
        if h.state != NodeState::Live {
            return false;
        }
        let tier = h.tier;
        if self.count(tier, NodeState::Live) <= self.cfg.min_nodes(tier) {
            log::info!("not removing {node}: {} tier at its minimum", tier.name());
            return false;
        }
        self.nodes.get_mut(node).unwrap().state = NodeState::Departing;
        self.queued.push(Lifecycle::Depart {
            node: node.clone(),
            tier,
        });
        true
    }

    /// The host finished the departure protocol; the node is deallocated.
    pub fn departed(&mut self, node: &NodeId) {
        self.nodes.remove(node);
    }

    pub fn heartbeat(&mut self, node: &NodeId, now_ms: u64) {
        if let Some(h) = self.nodes.get_mut(node) {
            h.last_heartbeat_ms = h.last_heartbeat_ms.max(now_ms);
        }
    }

    /// Applies the membership part of a plan. A plan for an epoch that was
    /// already applied is ignored.
    pub fn apply_plan(&mut self, plan: &ActionPlan, now_ms: u64) -> Vec<NodeId> {
        if !self.applied.insert(plan.epoch) {
            return Vec::new();
        }
        let mut added = Vec::new();
        for tier in Tier::ALL {
            added.extend(self.add(tier, plan.add_nodes[tier], now_ms));
        }
        for node in &plan.remove_nodes {
            self.remove(node);
        }
        added
    }

    /// Advances time: promotes pending nodes whose delay elapsed and flags
    /// live nodes whose heartbeats stopped.
    pub fn poll(&mut self, now_ms: u64) -> Vec<Lifecycle> {
        let mut out = std::mem::take(&mut self.queued);
        let mut failed = Vec::new();
        for h in self.nodes.values_mut() {
            match h.state {
                NodeState::Pending if now_ms >= h.spawn_deadline_ms => {
                    h.state = NodeState::Live;
                    h.last_heartbeat_ms = now_ms;
                    out.push(Lifecycle::Join {
                        node: h.id.clone(),
                        tier: h.tier,
                    });
                }
                NodeState::Live
                    if now_ms.saturating_sub(h.last_heartbeat_ms)
                        > self.cfg.heartbeat_timeout_ms =>
                {
                    h.state = NodeState::Failed;
                    failed.push((h.id.clone(), h.tier));
                }
                _ => {}
            }
        }
        for (node, tier) in failed {
            log::warn!("{node} missed heartbeats; declaring it failed");
            self.nodes.remove(&node);
            out.push(Lifecycle::Failed { node, tier });
            if self.cfg.replace_failed {
                self.add(tier, 1, now_ms);
            }
            if self.count(tier, NodeState::Live) < self.cfg.min_nodes(tier) {
                log::warn!("{} tier below its minimum; running degraded", tier.name());
            }
        }
        out
    }

    pub fn node(&self, id: &NodeId) -> Option<&NodeHandle> {
        self.nodes.get(id)
    }

    pub fn nodes(&self) -> impl Iterator<Item = &NodeHandle> {
        self.nodes.values()
    }

    pub fn live(&self, tier: Tier) -> Vec<NodeId> {
        self.nodes
            .values()
            .filter(|h| h.tier == tier && h.state == NodeState::Live)
            .map(|h| h.id.clone())
            .collect()
    }

    pub fn count(&self, tier: Tier, state: NodeState) -> u32 {
        self.nodes
            .values()
            .filter(|h| h.tier == tier && h.state == state)
            .count() as u32
    }

    pub fn shape(&self) -> ClusterShape {
        ClusterShape {
            live: TierMap::from_fn(|t| self.count(t, NodeState::Live)),
            pending: TierMap::from_fn(|t| self.count(t, NodeState::Pending)),
            workers_per_node: self.cfg.workers_per_node,
            ..Default::default()
        }
    }
}
