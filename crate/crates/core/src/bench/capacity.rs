//! Capacity-mode driver: the real monitor, policy and cluster manager over
//! the analytic service model, one row per simulated second.

use std::collections::{BTreeMap, BTreeSet, HashMap};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Poisson};

use crate::cluster::{hourly_cost, ClusterManager, Lifecycle, ManagerConfig};
use crate::kernel::ClusterView;
use crate::lattice::{LwwCell, Stamper};
use crate::metadata::{
    disk_only_vector, encode_key_stats, encode_membership_cell, key_stats_key, latency_key,
    latency_registry_key, node_stats_key, ring_key, rv_key, KeyAccessRecord, LatencyReport,
    MetaAccess, NodeStats, ReplicationVector,
};
use crate::monitor::ClusterShape;
use crate::policy::{engine_tick, ActionPlan, PolicyState, SloMode};
use crate::ring::{NodeId, Placement, Tier, TierMap, DEFAULT_NODE_WEIGHT};

use super::model::{service_step, Resources, Route, Step};
use super::report::TimelineRow;
use super::workload::key_name;
use super::BenchConfig;

pub const BENCH_CLIENT: &str = "bench";

/// Metadata kept in a map instead of the storage tier.
#[derive(Debug)]
pub struct MapMeta {
    cells: HashMap<String, LwwCell>,
    stamper: Stamper,
    pub now_ms: u64,
}

impl Default for MapMeta {
    fn default() -> Self {
        Self {
            cells: HashMap::new(),
            stamper: Stamper::new(0),
            now_ms: 0,
        }
    }
}

impl MetaAccess for MapMeta {
    fn read_meta(&mut self, key: &str) -> Option<LwwCell> {
        self.cells.get(key).cloned()
    }

    fn write_meta(&mut self, key: &str, payload: Vec<u8>) -> Option<LwwCell> {
        let cell = LwwCell::new(self.stamper.stamp(self.now_ms), payload);
        let slot = self
            .cells
            .entry(key.to_string())
            .or_insert_with(|| cell.clone());
        slot.merge_from(&cell);
        Some(cell)
    }
}

/// What happened to the cluster during a run, for reports.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct RunLog {
    pub plans: Vec<ActionPlan>,
    /// (time_s, description)
    pub events: Vec<(f64, String)>,
}

pub struct CapacityRun {
    cfg: BenchConfig,
    view: ClusterView,
    manager: ClusterManager,
    meta: MapMeta,
    res: Resources,
    keys: Vec<String>,
    placements: Vec<Option<Placement>>,
    routes: Vec<Option<Route>>,
    stale: BTreeSet<usize>,
    all_stale: bool,
    failed: BTreeSet<NodeId>,
    demand: Vec<f64>,
    phase: usize,
    step: Option<Step>,
    rng: ChaCha8Rng,
    epoch: u64,
    window: Window,
    pub log: RunLog,
}

#[derive(Default)]
struct Window {
    expected: Vec<f64>,
    occupancy: BTreeMap<NodeId, f64>,
    latency_weighted: f64,
    served: f64,
    seconds: u64,
}

impl CapacityRun {
    pub fn new(cfg: &BenchConfig, seed: u64) -> Self {
        let cfg = cfg.clone();
        let manager = ClusterManager::new(ManagerConfig {
            k: cfg.slo.k,
            workers_per_node: cfg.workers_per_node,
            spawn_delay_ms: (cfg.spawn_delay_s * 1000.0).round() as u64,
            heartbeat_timeout_ms: (cfg.heartbeat_timeout_s * 1000.0).round() as u64,
            replace_failed: true,
        });
        let n = cfg.workload.n_keys;
        let keys: Vec<String> = (0..n).map(key_name).collect();
        let mut run = Self {
            view: ClusterView::new(cfg.slo.k, cfg.workers_per_node),
            manager,
            meta: MapMeta::default(),
            res: Resources::new(),
            placements: vec![None; n],
            routes: vec![None; n],
            stale: BTreeSet::new(),
            all_stale: true,
            failed: BTreeSet::new(),
            demand: cfg.workload.demand(&cfg.workload.phases[0]),
            phase: 0,
            step: None,
            rng: ChaCha8Rng::seed_from_u64(seed),
            epoch: 0,
            window: Window {
                expected: vec![0.0; n],
                ..Default::default()
            },
            log: RunLog::default(),
            keys,
            cfg,
        };
        for tier in Tier::ALL {
            for _ in 0..run.cfg.initial_nodes[tier] {
                let id = run.manager.bootstrap(tier, 0);
                run.view.add_node(&id, tier, DEFAULT_NODE_WEIGHT);
            }
        }
        run.publish_rings();
        if run.cfg.start_on_disk {
            let rv = disk_only_vector(run.cfg.slo.k);
            let mut state = PolicyState::default();
            for i in 0..n {
                let key = run.keys[i].clone();
                run.set_rv(&key, rv);
                state.tracked.insert(key);
            }
            state.save(&mut run.meta);
        }
        run
    }

    pub fn view(&self) -> &ClusterView {
        &self.view
    }

    pub fn manager(&self) -> &ClusterManager {
        &self.manager
    }

    fn shape(&self) -> ClusterShape {
        ClusterShape {
            node_capacity_bytes: self.cfg.node_capacity_bytes,
            key_bytes: self.cfg.workload.stored_bytes(),
            ..self.manager.shape()
        }
    }

    fn publish_rings(&mut self) {
        for tier in Tier::ALL {
            let payload = encode_membership_cell(self.view.global(tier));
            self.meta.write_meta(&ring_key(tier), payload);
        }
        self.all_stale = true;
    }

    fn set_rv(&mut self, key: &str, rv: ReplicationVector) -> bool {
        let counts = self.view.node_counts();
        if let Err(e) = rv.validate(self.cfg.slo.k, &counts, &self.cfg.workers_per_node) {
            log::warn!("vector {rv} for {key} rejected: {e}");
            return false;
        }
        let Ok(mk) = rv_key(key) else { return false };
        let Some(cell) = self.meta.write_meta(&mk, rv.encode().into_bytes()) else {
            return false;
        };
        if self.view.set_rv(key, cell.ts(), rv) {
            if let Some(i) = key_index(key) {
                self.stale.insert(i);
            }
        }
        true
    }

    /// Crashes a live node of `tier`; the manager notices via heartbeats.
    pub fn fail_one(&mut self, tier: Tier, t_s: f64) -> Option<NodeId> {
        let victim = self
            .manager
            .live(tier)
            .into_iter()
            .find(|n| !self.failed.contains(n))?;
        self.failed.insert(victim.clone());
        self.all_stale = true;
        self.log.events.push((t_s, format!("failed {victim}")));
        Some(victim)
    }

    fn lifecycle(&mut self, now_ms: u64) {
        for id in self
            .manager
            .live(Tier::Mem)
            .into_iter()
            .chain(self.manager.live(Tier::Ebs))
        {
            if !self.failed.contains(&id) {
                self.manager.heartbeat(&id, now_ms);
            }
        }
        let t = now_ms as f64 / 1000.0;
        for ev in self.manager.poll(now_ms) {
            match ev {
                Lifecycle::Join { node, tier } => {
                    self.view.add_node(&node, tier, DEFAULT_NODE_WEIGHT);
                    self.log.events.push((t, format!("join {node}")));
                }
                Lifecycle::Depart { node, .. } => {
                    // handoff is instant here
                    self.view.remove_node(&node);
                    self.manager.departed(&node);
                    self.log.events.push((t, format!("depart {node}")));
                }
                Lifecycle::Failed { node, .. } => {
                    self.view.remove_node(&node);
                    self.failed.remove(&node);
                    self.log.events.push((t, format!("removed failed {node}")));
                }
            }
            self.publish_rings();
        }
    }

    fn refresh_routes(&mut self) {
        if self.all_stale {
            self.res = Resources::new();
            for tier in Tier::ALL {
                for id in self.view.nodes(tier) {
                    if !self.failed.contains(&id) {
                        self.res
                            .add_node(&id, tier, self.cfg.workers_per_node[tier]);
                    }
                }
            }
            self.stale = (0..self.keys.len()).collect();
            self.all_stale = false;
        }
        if self.stale.is_empty() {
            return;
        }
        for i in std::mem::take(&mut self.stale) {
            let p = self.view.placement(&self.keys[i]).ok();
            self.routes[i] = p.as_ref().and_then(|p| {
                let tier = if p[Tier::Mem].is_empty() {
                    Tier::Ebs
                } else {
                    Tier::Mem
                };
                let r = self.res.route(&self.cfg.model, tier, &p[tier]);
                (!r.shares.is_empty()).then_some(r)
            });
            self.placements[i] = p;
        }
        self.step = None;
    }

    /// Advances one second ending at `t_s` and returns its row.
    pub fn tick(&mut self, t_s: u64) -> TimelineRow {
        let start_ms = (t_s - 1) * 1000;
        self.meta.now_ms = start_ms;
        if let Some(f) = self.cfg.fault_at_s {
            if f as u64 == t_s - 1 {
                let tier = self.cfg.fault_tier;
                self.fail_one(tier, f);
            }
        }
        self.lifecycle(start_ms);
        let phase = self.cfg.workload.phase_index((t_s - 1) as f64);
        if phase != self.phase {
            self.phase = phase;
            self.demand = self.cfg.workload.demand(&self.cfg.workload.phases[phase]);
            self.step = None;
        }
        self.refresh_routes();
        if self.step.is_none() {
            self.step = Some(service_step(
                &self.cfg.model,
                &self.res,
                &self.routes,
                &self.demand,
            ));
        }
        let step = self.step.clone().expect("step computed");
        let shape = self.shape();
        let cost = hourly_cost(&shape, &self.cfg.costs).unwrap_or(0.0);
        let slo_satisfied = match self.cfg.slo.mode {
            SloMode::Latency { l_obj_ms } => step.avg_latency_ms <= l_obj_ms,
            SloMode::Budget { per_hour } => cost <= per_hour + 1e-9,
        };
        let row = TimelineRow {
            time_s: t_s as f64,
            throughput_ops: step.served_ops,
            avg_latency_ms: step.avg_latency_ms,
            cost_per_hr: cost,
            mem_nodes: shape.live[Tier::Mem],
            ebs_nodes: shape.live[Tier::Ebs],
            mem_hit_rate: step.mem_hit_rate,
            slo_satisfied,
        };

        let w = &mut self.window;
        for (e, (d, r)) in w
            .expected
            .iter_mut()
            .zip(self.demand.iter().zip(&self.routes))
        {
            if r.is_some() {
                *e += d * step.alpha;
            }
        }
        for (i, (id, _)) in self.res.nodes.iter().enumerate() {
            *w.occupancy.entry(id.clone()).or_insert(0.0) += step.node_occupancy[i];
        }
        w.latency_weighted += step.avg_latency_ms * step.served_ops;
        w.served += step.served_ops;
        w.seconds += 1;

        if t_s % self.cfg.knobs.window_s as u64 == 0 {
            self.end_window(t_s);
        }
        row
    }

    fn end_window(&mut self, t_s: u64) {
        self.epoch += 1;
        let epoch = self.epoch;
        let now_ms = t_s * 1000;
        self.meta.now_ms = now_ms;
        let w = std::mem::take(&mut self.window);
        self.window.expected = vec![0.0; self.keys.len()];
        let secs = w.seconds.max(1) as f64;

        // replicas stored per node
        let key_bytes = self.cfg.workload.stored_bytes();
        let mut bytes: BTreeMap<&NodeId, u64> = BTreeMap::new();
        for p in self.placements.iter().flatten() {
            for a in p.0.iter().flatten() {
                *bytes.entry(&a.node).or_insert(0) += key_bytes;
            }
        }
        let mut records: BTreeMap<NodeId, Vec<KeyAccessRecord>> = BTreeMap::new();
        for (i, lambda) in w.expected.iter().enumerate() {
            if *lambda <= 0.0 {
                continue;
            }
            let count = Poisson::new(*lambda)
                .map(|p| p.sample(&mut self.rng) as u64)
                .unwrap_or(0);
            if count == 0 {
                continue;
            }
            let Some(r) = &self.routes[i] else { continue };
            let node = self.res.nodes[self.res.worker_node[r.shares[0].0]]
                .0
                .clone();
            records.entry(node).or_default().push(KeyAccessRecord {
                key: self.keys[i].clone(),
                count,
            });
        }
        let mut stats = Vec::new();
        for (id, tier) in &self.res.nodes {
            let cap = self.cfg.node_capacity_bytes[*tier];
            let used = bytes.get(id).copied().unwrap_or(0);
            stats.push(NodeStats {
                node_id: id.to_string(),
                tier: *tier,
                occupancy: (w.occupancy.get(id).copied().unwrap_or(0.0) / secs).clamp(0.0, 1.0),
                storage_fraction: if cap == 0 {
                    0.0
                } else {
                    (used as f64 / cap as f64).min(1.0)
                },
                epoch,
            });
        }
        for s in stats {
            if let Ok(k) = node_stats_key(&s.node_id, epoch) {
                self.meta.write_meta(&k, s.encode().into_bytes());
            }
        }
        for (node, recs) in records {
            if let Ok(k) = key_stats_key(node.as_str(), epoch) {
                self.meta
                    .write_meta(&k, encode_key_stats(&recs).into_bytes());
            }
        }
        if w.served > 0.0 {
            if epoch == 1 {
                self.meta
                    .write_meta(&latency_registry_key(), BENCH_CLIENT.as_bytes().to_vec());
            }
            let report = LatencyReport {
                client_id: BENCH_CLIENT.into(),
                epoch,
                mean_latency_ms: (w.latency_weighted / w.served).max(0.001),
                requests: w.served.round().max(1.0) as u64,
            };
            if let Ok(k) = latency_key(BENCH_CLIENT, epoch) {
                self.meta.write_meta(&k, report.encode().into_bytes());
            }
        }

        let shape = self.shape();
        let plan = match engine_tick(
            &mut self.meta,
            epoch,
            shape,
            &self.cfg.knobs,
            &self.cfg.slo,
            &self.cfg.costs,
        ) {
            Ok(p) => p,
            Err(e) => {
                log::warn!("epoch {epoch}: monitor failed: {e}");
                return;
            }
        };
        self.apply(&plan, now_ms);
        if !plan.is_empty() {
            self.log.plans.push(plan);
        }
    }

    fn apply(&mut self, plan: &ActionPlan, now_ms: u64) {
        let added = self.manager.apply_plan(plan, now_ms);
        if !added.is_empty() {
            let t = now_ms as f64 / 1000.0;
            self.log
                .events
                .push((t, format!("requested {}", added.len())));
        }
        self.lifecycle(now_ms);
        for (key, rv) in &plan.rv_updates {
            self.set_rv(key, *rv);
        }
    }

    /// Runs `1..=duration` and returns every row.
    pub fn run(&mut self) -> Vec<TimelineRow> {
        (1..=self.cfg.duration_s).map(|t| self.tick(t)).collect()
    }

    pub fn rv_of(&self, key: &str) -> ReplicationVector {
        self.view.rv(key)
    }

    pub fn live_counts(&self) -> TierMap<u32> {
        self.manager.shape().live
    }
}

fn key_index(key: &str) -> Option<usize> {
    key.strip_prefix('k')?.parse().ok()
}
