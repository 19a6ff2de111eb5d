//! Analytic service model for capacity-mode runs.
//!
//! Each node serves `Q` requests per second of its tier; one worker alone
//! manages half of that. A key's requests spread over its serving replicas
//! in proportion to what each replica node can give it, so a replica on a
//! fresh node adds a full worker's worth and extra workers on the same node
//! only help until the node itself is full. The whole system is closed
//! loop: when any worker or node is over capacity every client slows by the
//! same factor.

use std::collections::BTreeMap;

use crate::config::{ConfigError, ConfigMap};
use crate::ring::{NodeId, Tier, TierMap, WorkerAddr};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CapacityModel {
    /// Requests per second one node of each tier sustains.
    pub node_rate: TierMap<f64>,
    pub base_latency_ms: TierMap<f64>,
    /// Latency slope past saturation.
    pub queue_factor: f64,
}

impl Default for CapacityModel {
    fn default() -> Self {
        let q = 10_000.0;
        Self {
            node_rate: TierMap([q, q / 15.0]),
            base_latency_ms: TierMap([1.0, 20.0]),
            queue_factor: 10.0,
        }
    }
}

impl CapacityModel {
    pub fn worker_rate(&self, tier: Tier) -> f64 {
        self.node_rate[tier] / 2.0
    }

    /// Reads `Q_mem`, `mem_to_ebs_speed` (default 15), `base_latency_mem`,
    /// `base_latency_ebs` and `queue_factor`.
    pub fn from_config(cfg: &ConfigMap) -> Result<Self, ConfigError> {
        let d = Self::default();
        let q = cfg.f64_or("Q_mem", d.node_rate[Tier::Mem])?;
        let speed = cfg.f64_or("mem_to_ebs_speed", 15.0)?;
        let m = Self {
            node_rate: TierMap([q, q / speed]),
            base_latency_ms: TierMap([
                cfg.f64_or("base_latency_mem", d.base_latency_ms[Tier::Mem])?,
                cfg.f64_or("base_latency_ebs", d.base_latency_ms[Tier::Ebs])?,
            ]),
            queue_factor: cfg.f64_or("queue_factor", d.queue_factor)?,
        };
        m.validate()?;
        Ok(m)
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let bad = |m: &str| Err(ConfigError::Invalid(m.to_string()));
        if !Tier::ALL
            .iter()
            .all(|t| self.node_rate[*t] > 0.0 && self.node_rate[*t].is_finite())
        {
            return bad("node service rates must be positive");
        }
        if !Tier::ALL.iter().all(|t| self.base_latency_ms[*t] > 0.0) {
            return bad("base latencies must be positive");
        }
        if self.base_latency_ms[Tier::Mem] >= self.base_latency_ms[Tier::Ebs] {
            return bad("memory base latency must be below disk base latency");
        }
        if !(self.queue_factor >= 0.0) {
            return bad("queue_factor must not be negative");
        }
        Ok(())
    }
}

/// Every worker and node in the cluster, indexed.
#[derive(Debug, Clone, Default)]
pub struct Resources {
    pub nodes: Vec<(NodeId, Tier)>,
    /// Node index of each worker.
    pub worker_node: Vec<usize>,
    index: BTreeMap<WorkerAddr, usize>,
    node_index: BTreeMap<NodeId, usize>,
}

impl Resources {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add_node(&mut self, id: &NodeId, tier: Tier, workers: u32) {
        let n = self.nodes.len();
        self.nodes.push((id.clone(), tier));
        self.node_index.insert(id.clone(), n);
        for w in 0..workers {
            self.index
                .insert(WorkerAddr::new(id.clone(), w), self.worker_node.len());
            self.worker_node.push(n);
        }
    }

    pub fn worker(&self, addr: &WorkerAddr) -> Option<usize> {
        self.index.get(addr).copied()
    }

    pub fn node(&self, id: &NodeId) -> Option<usize> {
        self.node_index.get(id).copied()
    }

    /// Splits one key's load over its serving endpoints. Unknown endpoints
    /// are skipped.
    pub fn route(&self, model: &CapacityModel, tier: Tier, endpoints: &[WorkerAddr]) -> Route {
        let mut per_node: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
        for a in endpoints {
            if let Some(w) = self.worker(a) {
                let ws = per_node.entry(self.worker_node[w]).or_default();
                if !ws.contains(&w) {
                    ws.push(w);
                }
            }
        }
        let q = model.worker_rate(tier);
        let cap = model.node_rate[tier];
        let give: Vec<(f64, &Vec<usize>)> = per_node
            .values()
            .map(|ws| ((ws.len() as f64 * q).min(cap), ws))
            .collect();
        let total: f64 = give.iter().map(|g| g.0).sum();
        let mut shares = Vec::new();
        for (c, ws) in give {
            for w in ws {
                shares.push((*w, c / total / ws.len() as f64));
            }
        }
        Route { tier, shares }
    }
}

/// Fractions of one key's requests sent to each worker index.
#[derive(Debug, Clone, PartialEq)]
pub struct Route {
    pub tier: Tier,
    pub shares: Vec<(usize, f64)>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Step {
    pub offered_ops: f64,
    pub served_ops: f64,
    /// Fraction of offered load the bottleneck lets through.
    pub alpha: f64,
    pub avg_latency_ms: f64,
    pub mem_hit_rate: f64,
    /// Busy fraction of each node, from served load.
    pub node_occupancy: Vec<f64>,
}

/// Serves one interval of `demand` (requests/s per key, aligned with
/// `routes`). Keys without a route are not served and count as misses.
pub fn service_step(
    model: &CapacityModel,
    res: &Resources,
    routes: &[Option<Route>],
    demand: &[f64],
) -> Step {
    let nw = res.worker_node.len();
    let mut lw = vec![0.0; nw];
    let mut ln = vec![0.0; res.nodes.len()];
    let mut offered = 0.0;
    let mut routed = 0.0;
    let mut mem = 0.0;
    for (route, &d) in routes.iter().zip(demand) {
        offered += d;
        let Some(route) = route else { continue };
        if d == 0.0 || route.shares.is_empty() {
            continue;
        }
        routed += d;
        if route.tier == Tier::Mem {
            mem += d;
        }
        for &(w, s) in &route.shares {
            lw[w] += d * s;
            ln[res.worker_node[w]] += d * s;
        }
    }
    let tier_of_worker = |w: usize| res.nodes[res.worker_node[w]].1;
    let rho_w: Vec<f64> = (0..nw)
        .map(|w| lw[w] / model.worker_rate(tier_of_worker(w)))
        .collect();
    let rho_n: Vec<f64> = res
        .nodes
        .iter()
        .enumerate()
        .map(|(n, (_, t))| ln[n] / model.node_rate[*t])
        .collect();
    let worst = rho_w.iter().chain(&rho_n).fold(0.0f64, |a, b| a.max(*b));
    let alpha = if worst > 1.0 { 1.0 / worst } else { 1.0 };

    let mut lat = 0.0;
    for (route, &d) in routes.iter().zip(demand) {
        let Some(route) = route else { continue };
        if d == 0.0 || route.shares.is_empty() {
            continue;
        }
        let base = model.base_latency_ms[route.tier];
        let mut key_lat = 0.0;
        for &(w, s) in &route.shares {
            let rho = rho_w[w].max(rho_n[res.worker_node[w]]);
            key_lat += s * base * (1.0 + model.queue_factor * (rho - 1.0).max(0.0));
        }
        lat += d * key_lat;
    }
    Step {
        offered_ops: offered,
        served_ops: routed * alpha,
        alpha,
        avg_latency_ms: if routed > 0.0 { lat / routed } else { 0.0 },
        mem_hit_rate: if offered > 0.0 { mem / offered } else { 0.0 },
        node_occupancy: rho_n.iter().map(|r| (r * alpha).min(1.0)).collect(),
    }
}

/// Most a single key can be served at, alone on the cluster.
pub fn sustainable_rate(model: &CapacityModel, res: &Resources, route: &Route) -> f64 {
    let offered = 1e12;
    service_step(model, res, &[Some(route.clone())], &[offered]).served_ops
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cluster(nodes: u32, workers: u32) -> Resources {
        let mut r = Resources::new();
        for i in 0..nodes {
            r.add_node(&NodeId::new(format!("m{i}")), Tier::Mem, workers);
        }
        r
    }

    fn addrs(list: &[(u32, u32)]) -> Vec<WorkerAddr> {
        list.iter()
            .map(|(n, w)| WorkerAddr::new(NodeId::new(format!("m{n}")), *w))
            .collect()
    }

    #[test]
    fn unloaded_key_sees_base_latency() {
        let m = CapacityModel::default();
        let r = cluster(1, 4);
        let route = r.route(&m, Tier::Mem, &addrs(&[(0, 0)]));
        let s = service_step(&m, &r, &[Some(route)], &[10.0]);
        assert_eq!(s.avg_latency_ms, 1.0);
        assert_eq!(s.served_ops, 10.0);
        assert_eq!(s.mem_hit_rate, 1.0);
    }

    #[test]
    fn replicas_across_nodes_and_workers() {
        let m = CapacityModel::default();
        let r = cluster(4, 4);
        let one = sustainable_rate(&m, &r, &r.route(&m, Tier::Mem, &addrs(&[(0, 0)])));
        let four_nodes = sustainable_rate(
            &m,
            &r,
            &r.route(&m, Tier::Mem, &addrs(&[(0, 0), (1, 0), (2, 0), (3, 0)])),
        );
        let four_workers = sustainable_rate(
            &m,
            &r,
            &r.route(&m, Tier::Mem, &addrs(&[(0, 0), (0, 1), (0, 2), (0, 3)])),
        );
        assert!((four_nodes / one - 4.0).abs() < 1e-9);
        assert!((four_workers / one - 2.0).abs() < 1e-9);
    }

    #[test]
    fn overload_raises_latency_and_caps_service() {
        let m = CapacityModel::default();
        let r = cluster(1, 2);
        let route = r.route(&m, Tier::Mem, &addrs(&[(0, 0)]));
        let s = service_step(&m, &r, &[Some(route)], &[10_000.0]);
        // one worker: 5000/s, twice oversubscribed
        assert!((s.served_ops - 5_000.0).abs() < 1e-6);
        assert!((s.avg_latency_ms - 11.0).abs() < 1e-9);
        assert!((s.node_occupancy[0] - 0.5).abs() < 1e-9);
    }

    #[test]
    fn unrouted_keys_are_misses() {
        let m = CapacityModel::default();
        let r = cluster(1, 1);
        let route = r.route(&m, Tier::Mem, &addrs(&[(0, 0)]));
        let s = service_step(&m, &r, &[Some(route), None], &[1.0, 1.0]);
        assert_eq!(s.mem_hit_rate, 0.5);
        assert_eq!(s.served_ops, 1.0);
    }
}
