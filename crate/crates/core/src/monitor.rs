//! Statistics collection. The monitor keeps nothing between ticks: every
//! snapshot is assembled from metadata keys in the store.

use std::collections::{BTreeMap, BTreeSet};

use thiserror::Error;

use crate::metadata::{
    decode_key_stats, decode_membership_cell, key_stats_key, latency_key, latency_registry_key,
    node_stats_key, ring_key, rv_key, LatencyReport, MetaAccess, NodeStats, ReplicationVector,
};
use crate::ring::{NodeId, Tier, TierMap};

/// Node counts and sizing the policy reasons about.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct ClusterShape {
    pub live: TierMap<u32>,
    /// Requested but not yet serving.
    pub pending: TierMap<u32>,
    pub workers_per_node: TierMap<u32>,
    /// Capacity of one node in each tier.
    pub node_capacity_bytes: TierMap<u64>,
    /// Stored size of one replica of one key.
    pub key_bytes: u64,
}

impl ClusterShape {
    /// Live plus pending, the count that is billed.
    pub fn billed(&self, tier: Tier) -> u32 {
        self.live[tier] + self.pending[tier]
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ClusterSnapshot {
    pub epoch: u64,
    pub members: TierMap<Vec<NodeId>>,
    pub node_stats: Vec<NodeStats>,
    /// Accesses per key summed over nodes.
    pub key_counts: BTreeMap<String, u64>,
    /// Keys with an explicit replication vector.
    pub rvs: BTreeMap<String, ReplicationVector>,
    pub latency: Vec<LatencyReport>,
    /// Live members with no statistics for this epoch or the one before.
    pub suspects: Vec<NodeId>,
    pub shape: ClusterShape,
}

impl ClusterSnapshot {
    pub fn empty(epoch: u64, shape: ClusterShape) -> Self {
        Self {
            epoch,
            members: TierMap::default(),
            node_stats: Vec::new(),
            key_counts: BTreeMap::new(),
            rvs: BTreeMap::new(),
            latency: Vec::new(),
            suspects: Vec::new(),
            shape,
        }
    }

    pub fn count(&self, key: &str) -> u64 {
        self.key_counts.get(key).copied().unwrap_or(0)
    }

    pub fn stats_for(&self, tier: Tier) -> impl Iterator<Item = &NodeStats> {
        self.node_stats.iter().filter(move |s| s.tier == tier)
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum MonitorError {
    #[error("ring metadata unreadable")]
    Unreadable,
    #[error("no live nodes")]
    NoLiveNodes,
}

/// Reads everything published for `epoch`. `tracked` lists keys whose
/// vectors should be fetched; `shape` supplies pending counts and sizing
/// from the cluster manager.
pub fn collect<'a>(
    meta: &mut dyn MetaAccess,
    epoch: u64,
    shape: ClusterShape,
    tracked: impl IntoIterator<Item = &'a str>,
) -> Result<ClusterSnapshot, MonitorError> {
    let mut snap = ClusterSnapshot::empty(epoch, shape);
    let mut any_ring = false;
    for tier in Tier::ALL {
        if let Some(cell) = meta.read_meta(&ring_key(tier)) {
            any_ring = true;
            let members = decode_membership_cell(&cell).map_err(|_| MonitorError::Unreadable)?;
            snap.members[tier] = members
                .into_iter()
                .map(|m| NodeId::new(m.member_id))
                .collect();
        }
    }
    if !any_ring {
        return Err(MonitorError::Unreadable);
    }
    snap.shape.live = TierMap::from_fn(|t| snap.members[t].len() as u32);

    for tier in Tier::ALL {
        for node in snap.members[tier].clone() {
            let stats = read_node_stats(meta, node.as_str(), epoch);
            match stats {
                Some(s) => snap.node_stats.push(s),
                None => {
                    let prev = epoch
                        .checked_sub(1)
                        .and_then(|p| read_node_stats(meta, node.as_str(), p));
                    if epoch > 0 && prev.is_none() {
                        snap.suspects.push(node.clone());
                    }
                }
            }
            if let Ok(k) = key_stats_key(node.as_str(), epoch) {
                if let Some(cell) = meta.read_meta(&k) {
                    let text = String::from_utf8_lossy(cell.payload());
                    match decode_key_stats(&text) {
                        Ok(recs) => {
                            for r in recs {
                                *snap.key_counts.entry(r.key).or_insert(0) += r.count;
                            }
                        }
                        Err(e) => log::warn!("bad key stats from {node}: {e}"),
                    }
                }
            }
        }
    }

    if let Some(cell) = meta.read_meta(&latency_registry_key()) {
        let clients: BTreeSet<String> = String::from_utf8_lossy(cell.payload())
            .lines()
            .filter(|l| !l.is_empty())
            .map(str::to_string)
            .collect();
        for c in clients {
            let Ok(k) = latency_key(&c, epoch) else {
                continue;
            };
            if let Some(cell) = meta.read_meta(&k) {
                match LatencyReport::decode(&String::from_utf8_lossy(cell.payload())) {
                    Ok(r) if r.epoch == epoch => snap.latency.push(r),
                    Ok(_) => {}
                    Err(e) => log::warn!("bad latency report from {c}: {e}"),
                }
            }
        }
    }

    for key in tracked {
        let Ok(k) = rv_key(key) else { continue };
        if let Some(cell) = meta.read_meta(&k) {
            if let Ok(rv) = ReplicationVector::decode(cell.payload()) {
                snap.rvs.insert(key.to_string(), rv);
            }
        }
    }
    Ok(snap)
}

fn read_node_stats(meta: &mut dyn MetaAccess, node: &str, epoch: u64) -> Option<NodeStats> {
    let cell = meta.read_meta(&node_stats_key(node, epoch).ok()?)?;
    NodeStats::decode(&String::from_utf8_lossy(cell.payload()))
        .ok()
        .filter(|s| s.epoch == epoch)
}

#[derive(Debug, Clone, PartialEq)]
pub struct Summary {
    pub epoch: u64,
    pub mean_freq: f64,
    pub std_freq: f64,
    /// `mean + s * std`.
    pub hot_threshold: f64,
    /// `mean`.
    pub cold_threshold: f64,
    /// Request-weighted mean of client reports; `None` without reports.
    pub avg_latency_ms: Option<f64>,
    pub avg_storage: TierMap<f64>,
    pub mem_occupancy: f64,
    /// Keys in the frequency population.
    pub population: usize,
}

/// Aggregates a snapshot. The frequency population is every key observed
/// this epoch plus every key carrying a vector (counted as zero when not
/// observed).
pub fn summarize(snap: &ClusterSnapshot, s: f64) -> Result<Summary, MonitorError> {
    if snap.shape.live.0.iter().all(|n| *n == 0) {
        return Err(MonitorError::NoLiveNodes);
    }
    let mut n = 0usize;
    let mut sum = 0.0;
    let mut sum_sq = 0.0;
    let mut add = |c: f64| {
        n += 1;
        sum += c;
        sum_sq += c * c;
    };
    for c in snap.key_counts.values() {
        add(*c as f64);
    }
    for k in snap.rvs.keys() {
        if !snap.key_counts.contains_key(k) {
            add(0.0);
        }
    }
    let (mean, std) = if n == 0 {
        (0.0, 0.0)
    } else {
        let mean = sum / n as f64;
        let var = (sum_sq / n as f64 - mean * mean).max(0.0);
        (mean, var.sqrt())
    };

    let requests: u64 = snap.latency.iter().map(|r| r.requests).sum();
    let avg_latency_ms = (requests > 0).then(|| {
        snap.latency
            .iter()
            .map(|r| r.mean_latency_ms * r.requests as f64)
            .sum::<f64>()
            / requests as f64
    });

    let avg = |tier: Tier, f: fn(&NodeStats) -> f64| {
        let v: Vec<f64> = snap.stats_for(tier).map(f).collect();
        if v.is_empty() {
            0.0
        } else {
            v.iter().sum::<f64>() / v.len() as f64
        }
    };
    Ok(Summary {
        epoch: snap.epoch,
        mean_freq: mean,
        std_freq: std,
        hot_threshold: mean + s * std,
        cold_threshold: mean,
        avg_latency_ms,
        avg_storage: TierMap::from_fn(|t| avg(t, |s| s.storage_fraction)),
        mem_occupancy: avg(Tier::Mem, |s| s.occupancy),
        population: n,
    })
}
