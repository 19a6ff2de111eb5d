//! A whole cluster in one process on a simulated clock.
//!
//! Every storage worker is a real [`Worker`]; the network is a seeded
//! priority queue that delays, reorders and duplicates messages but never
//! corrupts or loses them (undeliverable messages bounce back to the
//! sender). Membership changes go through a [`ClusterManager`], and all
//! metadata lives in the memory-tier workers' stores.

use std::cell::RefCell;
use std::collections::{BTreeMap, BTreeSet};
use std::path::PathBuf;
use std::rc::Rc;
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::cluster::{ClusterManager, Lifecycle, ManagerConfig, NodeState};
use crate::kernel::{
    Broadcast, ClusterView, FileStore, GossipMessage, MemStore, Origin, Outbound, PeerMessage,
    Request, Response, TierStore, Worker, GOSSIP_PERIOD_MS,
};
use crate::lattice::{Clock, LwwCell, SimClock, Stamper};
use crate::metadata::{
    encode_key_stats, encode_membership_cell, key_stats_key, latency_key, latency_registry_key,
    node_stats_key, ring_key, rv_key, LatencyReport, MetaAccess, MetaError, NodeStats,
    ReplicationVector,
};
use crate::monitor::ClusterShape;
use crate::policy::ActionPlan;
use crate::ring::{NodeId, Tier, TierMap, WorkerAddr, DEFAULT_NODE_WEIGHT};
use crate::routing::{AddressSet, RoutingError, RoutingNode, RpcError, StorageRpc};

/// Network fault injection. Delays are drawn uniformly per message.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NetConfig {
    pub min_delay_ms: u64,
    pub max_delay_ms: u64,
    /// Chance that a message is delivered twice.
    pub dup_prob: f64,
}

impl Default for NetConfig {
    fn default() -> Self {
        Self {
            min_delay_ms: 1,
            max_delay_ms: 5,
            dup_prob: 0.0,
        }
    }
}

#[derive(Debug, Clone)]
pub struct SimConfig {
    pub k: u32,
    pub workers_per_node: TierMap<u32>,
    pub seed: u64,
    pub net: NetConfig,
    pub gossip_period_ms: u64,
    pub spawn_delay_ms: u64,
    pub heartbeat_timeout_ms: u64,
    pub replace_failed: bool,
    /// Disk-tier workers keep one file per key under this directory; memory
    /// stores are used everywhere when unset.
    pub data_dir: Option<PathBuf>,
    pub node_capacity_bytes: TierMap<u64>,
    /// Service time per request or merged gossip entry, for occupancy.
    pub op_cost_ms: f64,
}

impl Default for SimConfig {
    fn default() -> Self {
        Self {
            k: 2,
            workers_per_node: TierMap([4, 4]),
            seed: 0,
            net: NetConfig::default(),
            gossip_period_ms: GOSSIP_PERIOD_MS,
            spawn_delay_ms: 5_000,
            heartbeat_timeout_ms: 5 * GOSSIP_PERIOD_MS,
            replace_failed: true,
            data_dir: None,
            node_capacity_bytes: TierMap([64 << 20, 256 << 20]),
            op_cost_ms: 0.05,
        }
    }
}

struct SimNode {
    tier: Tier,
    workers: Vec<Worker>,
    alive: bool,
}

#[derive(Debug, Clone)]
struct Envelope {
    from: Option<WorkerAddr>,
    out: Outbound,
}

/// Counters for tests and reports.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct NetStats {
    pub sent: u64,
    pub duplicated: u64,
    pub bounced: u64,
}

pub struct SimCluster {
    cfg: SimConfig,
    clock: Arc<SimClock>,
    rng: ChaCha8Rng,
    control: ClusterView,
    stamper: Stamper,
    nodes: BTreeMap<NodeId, SimNode>,
    manager: ClusterManager,
    queue: BTreeMap<(u64, u64), Envelope>,
    seq: u64,
    next_node_seq: u32,
    routers: Vec<RoutingNode>,
    next_gossip_ms: u64,
    clients: BTreeSet<String>,
    net: NetStats,
}

impl std::fmt::Debug for SimCluster {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("SimCluster")
            .field("now_ms", &self.now_ms())
            .field("nodes", &self.nodes.keys().collect::<Vec<_>>())
            .field("in_flight", &self.queue.len())
            .finish()
    }
}

impl SimCluster {
    /// Starts a cluster with `initial` live nodes per tier at time zero.
    pub fn new(cfg: SimConfig, initial: TierMap<u32>) -> Self {
        let manager = ClusterManager::new(ManagerConfig {
            k: cfg.k,
            workers_per_node: cfg.workers_per_node,
            spawn_delay_ms: cfg.spawn_delay_ms,
            heartbeat_timeout_ms: cfg.heartbeat_timeout_ms,
            replace_failed: cfg.replace_failed,
        });
        let mut sim = Self {
            control: ClusterView::new(cfg.k, cfg.workers_per_node),
            rng: ChaCha8Rng::seed_from_u64(cfg.seed),
            clock: SimClock::new(0),
            stamper: Stamper::new(0),
            nodes: BTreeMap::new(),
            manager,
            queue: BTreeMap::new(),
            seq: 0,
            next_node_seq: 1,
            routers: Vec::new(),
            next_gossip_ms: cfg.gossip_period_ms,
            clients: BTreeSet::new(),
            net: NetStats::default(),
            cfg,
        };
        let mut ids = Vec::new();
        for tier in Tier::ALL {
            for _ in 0..initial[tier] {
                let id = sim.manager.bootstrap(tier, 0);
                sim.control.add_node(&id, tier, DEFAULT_NODE_WEIGHT);
                ids.push((id, tier));
            }
        }
        for (id, tier) in ids {
            sim.spawn_workers(&id, tier);
        }
        sim.publish_rings();
        let router = RoutingNode::bootstrap(sim.cfg.k, sim.cfg.workers_per_node, &mut sim);
        sim.routers.push(router);
        sim
    }

    pub fn config(&self) -> &SimConfig {
        &self.cfg
    }

    pub fn clock(&self) -> Arc<SimClock> {
        self.clock.clone()
    }

    pub fn now_ms(&self) -> u64 {
        self.clock.now_ms()
    }

    pub fn control_view(&self) -> &ClusterView {
        &self.control
    }

    pub fn manager(&self) -> &ClusterManager {
        &self.manager
    }

    pub fn net_stats(&self) -> NetStats {
        self.net
    }

    pub fn in_flight(&self) -> usize {
        self.queue.len()
    }

    fn spawn_workers(&mut self, id: &NodeId, tier: Tier) {
        let n = self.cfg.workers_per_node[tier];
        let mut workers = Vec::with_capacity(n as usize);
        for w in 0..n {
            let store: Box<dyn TierStore> = match (&self.cfg.data_dir, tier) {
                (Some(dir), Tier::Ebs) => match FileStore::open(dir, id.as_str(), w) {
                    Ok(s) => Box::new(s),
                    Err(e) => {
                        log::error!("cannot open disk store for {id}#{w}: {e}; using memory");
                        Box::new(MemStore::new())
                    }
                },
                _ => Box::new(MemStore::new()),
            };
            let seq = self.next_node_seq;
            self.next_node_seq += 1;
            workers.push(Worker::new(
                WorkerAddr::new(id.clone(), w),
                tier,
                seq,
                self.control.clone(),
                store,
            ));
        }
        self.nodes.insert(
            id.clone(),
            SimNode {
                tier,
                workers,
                alive: true,
            },
        );
    }

    /// The manager is the only writer of ring metadata.
    fn publish_rings(&mut self) {
        for tier in Tier::ALL {
            let payload = encode_membership_cell(self.control.global(tier));
            self.write_meta(&ring_key(tier), payload);
        }
    }

    fn broadcast(&mut self, b: Broadcast) {
        for r in &mut self.routers {
            r.on_broadcast(&b);
        }
        let targets: Vec<WorkerAddr> = self
            .nodes
            .iter()
            .filter(|(_, n)| n.alive)
            .flat_map(|(_, n)| n.workers.iter().map(|w| w.addr().clone()))
            .collect();
        for to in targets {
            self.send(
                None,
                Outbound {
                    to,
                    msg: PeerMessage::Broadcast(b.clone()),
                },
            );
        }
    }

    fn send(&mut self, from: Option<WorkerAddr>, out: Outbound) {
        let copies = if self.rng.random_bool(self.cfg.net.dup_prob.clamp(0.0, 1.0)) {
            self.net.duplicated += 1;
            2
        } else {
            1
        };
        for _ in 0..copies {
            let delay = self.rng.random_range(
                self.cfg.net.min_delay_ms
                    ..=self.cfg.net.max_delay_ms.max(self.cfg.net.min_delay_ms),
            );
            self.seq += 1;
            self.net.sent += 1;
            self.queue.insert(
                (self.now_ms() + delay, self.seq),
                Envelope {
                    from: from.clone(),
                    out: out.clone(),
                },
            );
        }
    }

    fn worker_mut(&mut self, addr: &WorkerAddr) -> Option<&mut Worker> {
        let node = self.nodes.get_mut(&addr.node)?;
        if !node.alive {
            return None;
        }
        node.workers.get_mut(addr.worker as usize)
    }

    pub fn worker(&self, addr: &WorkerAddr) -> Option<&Worker> {
        let node = self.nodes.get(&addr.node)?;
        if !node.alive {
            return None;
        }
        node.workers.get(addr.worker as usize)
    }

    fn deliver(&mut self, env: Envelope) {
        match self.worker_mut(&env.out.to) {
            Some(w) => {
                let from = w.addr().clone();
                let replies = w.on_peer_message(&env.out.msg);
                for r in replies {
                    self.send(Some(from.clone()), r);
                }
            }
            None => {
                self.net.bounced += 1;
                if let Some(from) = &env.from {
                    if let Some(sender) = self.worker_mut(from) {
                        sender.on_delivery_failure(&env.out);
                    }
                }
            }
        }
    }

    /// Advances simulated time, delivering messages and running gossip,
    /// heartbeats and the manager as their times come up.
    pub fn run_for(&mut self, ms: u64) {
        let target = self.now_ms() + ms;
        loop {
            let next_msg = self.queue.keys().next().map(|k| k.0);
            let next = next_msg
                .unwrap_or(u64::MAX)
                .min(self.next_gossip_ms)
                .min(target);
            self.clock.set_ms(next);
            while let Some(entry) = self.queue.first_entry() {
                if entry.key().0 > next {
                    break;
                }
                let env = entry.remove();
                self.deliver(env);
            }
            if next >= self.next_gossip_ms {
                self.next_gossip_ms += self.cfg.gossip_period_ms;
                self.gossip_tick();
            }
            if next >= target {
                break;
            }
        }
    }

    fn gossip_tick(&mut self) {
        let now = self.now_ms();
        let mut outs = Vec::new();
        for node in self.nodes.values_mut().filter(|n| n.alive) {
            for w in &mut node.workers {
                let from = w.addr().clone();
                outs.extend(w.gossip_round().into_iter().map(|o| (from.clone(), o)));
            }
        }
        for (from, o) in outs {
            self.send(Some(from), o);
        }
        let alive: Vec<NodeId> = self
            .nodes
            .iter()
            .filter(|(_, n)| n.alive)
            .map(|(id, _)| id.clone())
            .collect();
        for id in &alive {
            self.manager.heartbeat(id, now);
        }
        let events = self.manager.poll(now);
        for ev in events {
            self.on_lifecycle(ev);
        }
        // departed nodes leave once everything they held is acknowledged
        let drained: Vec<NodeId> = self
            .nodes
            .iter()
            .filter(|(id, n)| {
                n.alive
                    && self.manager.node(id).map(|h| h.state) == Some(NodeState::Departing)
                    && n.workers.iter().all(|w| w.is_drained())
            })
            .map(|(id, _)| id.clone())
            .collect();
        for id in drained {
            log::info!("{id} drained; deallocating");
            self.nodes.remove(&id);
            self.manager.departed(&id);
        }
    }

    fn on_lifecycle(&mut self, ev: Lifecycle) {
        match ev {
            Lifecycle::Join { node, tier } => {
                log::info!("{node} joining {}", tier.name());
                self.control.add_node(&node, tier, DEFAULT_NODE_WEIGHT);
                self.spawn_workers(&node, tier);
                self.publish_rings();
                self.broadcast(Broadcast::Join {
                    node,
                    tier,
                    weight: DEFAULT_NODE_WEIGHT,
                });
            }
            Lifecycle::Depart { node, tier } => {
                log::info!("{node} departing");
                self.control.remove_node(&node);
                if let Some(n) = self.nodes.get_mut(&node) {
                    for w in &mut n.workers {
                        w.depart();
                    }
                }
                self.publish_rings();
                self.broadcast(Broadcast::Depart { node, tier });
            }
            Lifecycle::Failed { node, tier } => {
                self.control.remove_node(&node);
                self.nodes.remove(&node);
                self.publish_rings();
                self.broadcast(Broadcast::Failed { node, tier });
            }
        }
    }

    /// Crashes a node: its workers and their data are gone. Peers notice
    /// once heartbeats time out.
    pub fn fail_node(&mut self, id: &NodeId) -> bool {
        match self.nodes.get_mut(id) {
            Some(n) if n.alive => {
                n.alive = false;
                n.workers.clear();
                true
            }
            _ => false,
        }
    }

    pub fn add_nodes(&mut self, tier: Tier, n: u32) -> Vec<NodeId> {
        let now = self.now_ms();
        self.manager.add(tier, n, now)
    }

    pub fn remove_node(&mut self, id: &NodeId) -> bool {
        let ok = self.manager.remove(id);
        if ok {
            let now = self.now_ms();
            for ev in self.manager.poll(now) {
                self.on_lifecycle(ev);
            }
        }
        ok
    }

    pub fn live_nodes(&self, tier: Tier) -> Vec<NodeId> {
        self.manager.live(tier)
    }

    /// Node membership plus sizing, as the policy sees it.
    pub fn shape(&self, key_bytes: u64) -> ClusterShape {
        ClusterShape {
            node_capacity_bytes: self.cfg.node_capacity_bytes,
            key_bytes,
            ..self.manager.shape()
        }
    }

    /// Membership and vector changes from a plan.
    pub fn apply_plan(&mut self, plan: &ActionPlan) {
        let now = self.now_ms();
        self.manager.apply_plan(plan, now);
        for ev in self.manager.poll(now) {
            self.on_lifecycle(ev);
        }
        for (key, rv) in &plan.rv_updates {
            if let Err(e) = self.apply_rv_update(key, *rv) {
                log::warn!("vector update for {key} rejected: {e}");
            }
        }
    }

    /// Writes a key's vector and tells everyone. Vectors below the fault
    /// floor or beyond the cluster are rejected before anything is written.
    pub fn apply_rv_update(&mut self, key: &str, rv: ReplicationVector) -> Result<bool, MetaError> {
        rv.validate(
            self.cfg.k,
            &self.control.node_counts(),
            &self.cfg.workers_per_node,
        )?;
        if self.control.rv(key) == rv {
            return Ok(false);
        }
        let mk = rv_key(key)?;
        let cell = self
            .write_meta(&mk, rv.encode().into_bytes())
            .ok_or_else(|| MetaError::BadRecord {
                what: "vector",
                line: key.to_string(),
            })?;
        self.control.set_rv(key, cell.ts(), rv);
        self.broadcast(Broadcast::RvUpdate {
            key: key.to_string(),
            cell,
        });
        Ok(true)
    }

    /// Runs until nothing is in flight and no worker has pending gossip,
    /// or `limit_ms` passes. Returns whether quiescence was reached.
    pub fn quiesce(&mut self, limit_ms: u64) -> bool {
        let end = self.now_ms() + limit_ms;
        while self.now_ms() < end {
            self.run_for(self.cfg.gossip_period_ms);
            if self.is_quiet() {
                // one more round so acknowledgments land
                self.run_for(self.cfg.gossip_period_ms);
                if self.is_quiet() {
                    return true;
                }
            }
        }
        false
    }

    pub fn is_quiet(&self) -> bool {
        self.queue.is_empty()
            && self.manager.count(Tier::Mem, NodeState::Pending) == 0
            && self.manager.count(Tier::Ebs, NodeState::Pending) == 0
            && self
                .nodes
                .values()
                .filter(|n| n.alive)
                .all(|n| n.workers.iter().all(|w| w.is_quiet()))
    }

    /// Every live copy of `key`.
    pub fn replicas_of(&mut self, key: &str) -> Vec<(WorkerAddr, LwwCell)> {
        let mut out = Vec::new();
        for n in self.nodes.values_mut().filter(|n| n.alive) {
            for w in &mut n.workers {
                if let Some(c) = w.get_local(key) {
                    out.push((w.addr().clone(), c));
                }
            }
        }
        out
    }

    /// Keys stored anywhere, metadata included.
    pub fn all_keys(&self) -> BTreeSet<String> {
        self.nodes
            .values()
            .filter(|n| n.alive)
            .flat_map(|n| n.workers.iter().flat_map(|w| w.store().keys()))
            .collect()
    }

    /// Keys held by one node's workers.
    pub fn all_keys_on(&self, id: &NodeId) -> BTreeSet<String> {
        self.nodes
            .get(id)
            .filter(|n| n.alive)
            .map(|n| n.workers.iter().flat_map(|w| w.store().keys()).collect())
            .unwrap_or_default()
    }

    pub fn integrity_faults(&self) -> u64 {
        self.nodes
            .values()
            .flat_map(|n| n.workers.iter())
            .map(|w| w.store().integrity_faults())
            .sum()
    }

    /// Each live node publishes its window: per-key access counts,
    /// occupancy and storage use.
    pub fn publish_stats(&mut self, epoch: u64, window_s: f64) {
        let mut reports = Vec::new();
        for (id, n) in self.nodes.iter_mut().filter(|(_, n)| n.alive) {
            let mut counts: BTreeMap<String, u64> = BTreeMap::new();
            let mut busiest = 0u64;
            let mut bytes = 0u64;
            for w in &mut n.workers {
                let win = w.take_window();
                busiest = busiest.max(win.ops);
                for (k, c) in win.accesses {
                    *counts.entry(k).or_insert(0) += c;
                }
                bytes += w.store().bytes();
            }
            let occupancy = (busiest as f64 * self.cfg.op_cost_ms / (window_s * 1000.0)).min(1.0);
            let cap = self.cfg.node_capacity_bytes[n.tier].max(1);
            let stats = NodeStats {
                node_id: id.to_string(),
                tier: n.tier,
                occupancy,
                storage_fraction: (bytes as f64 / cap as f64).min(1.0),
                epoch,
            };
            let records: Vec<_> = counts
                .into_iter()
                .map(|(key, count)| crate::metadata::KeyAccessRecord { key, count })
                .collect();
            reports.push((id.clone(), stats, records));
        }
        for (id, stats, records) in reports {
            if let Ok(k) = node_stats_key(id.as_str(), epoch) {
                self.write_meta(&k, stats.encode().into_bytes());
            }
            if let Ok(k) = key_stats_key(id.as_str(), epoch) {
                self.write_meta(&k, encode_key_stats(&records).into_bytes());
            }
        }
        let mut routers = std::mem::take(&mut self.routers);
        for r in &mut routers {
            r.on_window(self);
        }
        self.routers = routers;
    }

    /// Stores a client's latency report and registers the client.
    pub fn publish_latency(&mut self, report: &LatencyReport) {
        if self.clients.insert(report.client_id.clone()) {
            let list: Vec<&str> = self.clients.iter().map(String::as_str).collect();
            let payload = list.join("\n").into_bytes();
            self.write_meta(&latency_registry_key(), payload);
        }
        if let Ok(k) = latency_key(&report.client_id, report.epoch) {
            self.write_meta(&k, report.encode().into_bytes());
        }
    }

    pub fn router(&self, i: usize) -> Option<&RoutingNode> {
        self.routers.get(i)
    }

    /// Throws routing node `i` away and rebuilds it from metadata.
    pub fn restart_router(&mut self, i: usize) {
        if i < self.routers.len() {
            let r = RoutingNode::bootstrap(self.cfg.k, self.cfg.workers_per_node, self);
            self.routers[i] = r;
        }
    }

    pub fn resolve(&mut self, key: &str, fresh: bool) -> Result<AddressSet, RoutingError> {
        let mut routers = std::mem::take(&mut self.routers);
        let r = if fresh {
            routers[0].resolve_fresh(key, self)
        } else {
            routers[0].resolve(key, self)
        };
        self.routers = routers;
        r
    }

    /// One request handled synchronously by the addressed worker.
    pub fn call(
        &mut self,
        to: &WorkerAddr,
        req: &Request,
        origin: Origin,
    ) -> Result<Response, RpcError> {
        let now = self.now_ms();
        let w = self
            .worker_mut(to)
            .ok_or_else(|| RpcError::Unreachable(to.clone()))?;
        let resp = w.handle_request(req, origin, now);
        let push = w.take_outbox();
        for o in push {
            self.send(Some(to.clone()), o);
        }
        Ok(resp)
    }

    /// Cloneable handle implementing the client transport.
    pub fn into_shared(self) -> SimRpc {
        SimRpc(Rc::new(RefCell::new(self)))
    }
}

impl MetaAccess for SimCluster {
    fn read_meta(&mut self, key: &str) -> Option<LwwCell> {
        let placement = self.control.placement(key).ok()?;
        let mut best: Option<LwwCell> = None;
        for addr in placement.0.iter().flatten() {
            if let Some(w) = self.worker_mut(addr) {
                if let Some(c) = w.get_local(key) {
                    match &mut best {
                        Some(b) => {
                            b.merge_from(&c);
                        }
                        None => best = Some(c),
                    }
                }
            }
        }
        best
    }

    fn write_meta(&mut self, key: &str, payload: Vec<u8>) -> Option<LwwCell> {
        let placement = self.control.placement(key).ok()?;
        let now = self.now_ms();
        let cell = LwwCell::new(self.stamper.stamp(now), payload);
        let msg = PeerMessage::Gossip(GossipMessage {
            sender: WorkerAddr::new(NodeId::new("control"), 0),
            entries: vec![(key.to_string(), cell.clone())],
            handoff: false,
        });
        let mut stored = false;
        for addr in placement.0.iter().flatten() {
            if let Some(w) = self.worker_mut(addr) {
                w.on_peer_message(&msg);
                stored = true;
            }
        }
        stored.then_some(cell)
    }
}

/// Shared handle so several clients can drive one simulated cluster.
#[derive(Clone)]
pub struct SimRpc(pub Rc<RefCell<SimCluster>>);

impl SimRpc {
    pub fn with<T>(&self, f: impl FnOnce(&mut SimCluster) -> T) -> T {
        f(&mut self.0.borrow_mut())
    }
}

impl StorageRpc for SimRpc {
    fn resolve(&mut self, key: &str, fresh: bool) -> Result<AddressSet, RoutingError> {
        self.0.borrow_mut().resolve(key, fresh)
    }

    fn call(
        &mut self,
        to: &WorkerAddr,
        req: &Request,
        origin: Origin,
    ) -> Result<Response, RpcError> {
        self.0.borrow_mut().call(to, req, origin)
    }

    fn now_ms(&self) -> u64 {
        self.0.borrow().now_ms()
    }

    fn backoff(&mut self, ms: u64) {
        self.0.borrow_mut().run_for(ms);
    }
}
