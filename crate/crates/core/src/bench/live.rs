//! Live-mode driver: sampled read-modify-write requests through real
//! workers in the simulated cluster, with the monitor, policy and manager
//! acting on what the workers publish.

use std::collections::BTreeMap;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::cluster::hourly_cost;
use crate::lattice::LwwCell;
use crate::metadata::{disk_only_vector, LatencyReport};
use crate::policy::{engine_tick, PolicyState, SloMode};
use crate::ring::{Tier, TierMap};
use crate::routing::{Client, RetryPolicy};
use crate::sim::{NetConfig, SimConfig};

use super::capacity::BENCH_CLIENT;
use super::model::{service_step, Resources, Route};
use super::report::TimelineRow;
use super::workload::{key_name, KeySampler};
use super::BenchConfig;

/// What the data path did during a live run.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct LiveOutcome {
    pub rows: Vec<TimelineRow>,
    pub requests: u64,
    pub failed_requests: u64,
    /// Acknowledged writes whose value no replica holds at the end.
    pub lost_writes: u64,
    /// Written keys with fewer than k+1 copies at the end.
    pub under_replicated: u64,
    pub quiesced: bool,
}

struct ModelCache {
    version: u64,
    res: Resources,
    routes: Vec<Option<Route>>,
}

pub fn run_live(cfg: &BenchConfig, seed: u64) -> LiveOutcome {
    let k = cfg.slo.k;
    let scale = cfg.workload.phases[0].offered_ops / (2.0 * cfg.live_ops.max(1) as f64);
    let sim_cfg = SimConfig {
        k,
        workers_per_node: cfg.workers_per_node,
        seed,
        net: NetConfig::default(),
        spawn_delay_ms: (cfg.spawn_delay_s * 1000.0) as u64,
        heartbeat_timeout_ms: (cfg.heartbeat_timeout_s * 1000.0) as u64,
        replace_failed: true,
        data_dir: None,
        node_capacity_bytes: cfg.node_capacity_bytes,
        op_cost_ms: scale * 1000.0 / cfg.model.worker_rate(Tier::Mem),
        ..SimConfig::default()
    };
    let rpc = crate::sim::SimCluster::new(sim_cfg, cfg.initial_nodes).into_shared();
    let keys: Vec<String> = (0..cfg.workload.n_keys).map(key_name).collect();
    if cfg.start_on_disk {
        let rv = disk_only_vector(k);
        rpc.with(|s| {
            let mut state = PolicyState::default();
            for key in &keys {
                if s.apply_rv_update(key, rv).is_ok() {
                    state.tracked.insert(key.clone());
                }
            }
            state.save(s);
            s.quiesce(60_000);
        });
    }
    let mut client = Client::new(BENCH_CLIENT, rpc.clone()).with_retry(RetryPolicy {
        attempts: 6,
        first_backoff_ms: 50,
    });
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = LiveOutcome::default();
    let mut oracle: BTreeMap<String, LwwCell> = BTreeMap::new();
    let mut cache: Option<ModelCache> = None;
    let mut phase_idx = usize::MAX;
    let mut demand = Vec::new();
    let mut sampler = None;
    let window = cfg.knobs.window_s as u64;
    let mut epoch = 0;
    let (mut lat_sum, mut lat_n) = (0.0, 0.0);

    for t in 1..=cfg.duration_s {
        if cfg.fault_at_s.is_some_and(|f| f as u64 == t - 1) {
            rpc.with(|s| {
                if let Some(v) = s.live_nodes(cfg.fault_tier).into_iter().next() {
                    log::info!("failing {v}");
                    s.fail_node(&v);
                }
            });
        }
        let p = cfg.workload.phase_index((t - 1) as f64);
        if p != phase_idx {
            phase_idx = p;
            let phase = cfg.workload.phases[p];
            demand = cfg.workload.demand(&phase);
            sampler = Some(KeySampler::new(cfg.workload.n_keys, &phase));
        }
        let sampler = sampler.as_ref().expect("phase sampler");
        let (mut mem_hits, mut served) = (0u64, 0u64);
        for i in 0..cfg.live_ops {
            let key = &keys[sampler.sample(&mut rng)];
            out.requests += 1;
            if client.get(key).is_err() {
                out.failed_requests += 1;
                continue;
            }
            served += 1;
            if client
                .cached_addresses(key)
                .is_some_and(|a| a.tier() == Tier::Mem)
            {
                mem_hits += 1;
            }
            match client.put(key, format!("{t}.{i}")) {
                Ok(cell) => {
                    oracle
                        .entry(key.clone())
                        .and_modify(|c| {
                            c.merge_from(&cell);
                        })
                        .or_insert(cell);
                }
                Err(e) => {
                    log::debug!("put {key} failed: {e}");
                    out.failed_requests += 1;
                }
            }
        }
        rpc.with(|s| s.run_for(1000));

        let (step, shape) = rpc.with(|s| {
            let view = s.control_view();
            if cache.as_ref().map(|c| c.version) != Some(view.version()) {
                let mut res = Resources::new();
                for tier in Tier::ALL {
                    for id in view.nodes(tier) {
                        res.add_node(&id, tier, cfg.workers_per_node[tier]);
                    }
                }
                let routes = keys
                    .iter()
                    .map(|key| {
                        let (tier, addrs) = view.preferred(key).ok()?;
                        let r = res.route(&cfg.model, tier, &addrs);
                        (!r.shares.is_empty()).then_some(r)
                    })
                    .collect();
                cache = Some(ModelCache {
                    version: view.version(),
                    res,
                    routes,
                });
            }
            let c = cache.as_ref().unwrap();
            let step = service_step(&cfg.model, &c.res, &c.routes, &demand);
            (step, s.shape(cfg.workload.stored_bytes()))
        });
        let cost = hourly_cost(&shape, &cfg.costs).unwrap_or(0.0);
        let slo_satisfied = match cfg.slo.mode {
            SloMode::Latency { l_obj_ms } => step.avg_latency_ms <= l_obj_ms,
            SloMode::Budget { per_hour } => cost <= per_hour + 1e-9,
        };
        out.rows.push(TimelineRow {
            time_s: t as f64,
            throughput_ops: step.served_ops,
            avg_latency_ms: step.avg_latency_ms,
            cost_per_hr: cost,
            mem_nodes: shape.live[Tier::Mem],
            ebs_nodes: shape.live[Tier::Ebs],
            mem_hit_rate: if served > 0 {
                mem_hits as f64 / served as f64
            } else {
                step.mem_hit_rate
            },
            slo_satisfied,
        });
        lat_sum += step.avg_latency_ms * served as f64;
        lat_n += served as f64;

        if t % window == 0 {
            epoch += 1;
            let _ = client.take_latency(epoch);
            rpc.with(|s| {
                s.publish_stats(epoch, cfg.knobs.window_s);
                if lat_n > 0.0 {
                    s.publish_latency(&LatencyReport {
                        client_id: BENCH_CLIENT.into(),
                        epoch,
                        mean_latency_ms: (lat_sum / lat_n).max(0.001),
                        requests: lat_n as u64,
                    });
                }
                let shape = s.shape(cfg.workload.stored_bytes());
                match engine_tick(s, epoch, shape, &cfg.knobs, &cfg.slo, &cfg.costs) {
                    Ok(plan) => s.apply_plan(&plan),
                    Err(e) => log::warn!("epoch {epoch}: monitor failed: {e}"),
                }
            });
            lat_sum = 0.0;
            lat_n = 0.0;
        }
    }

    rpc.with(|s| {
        out.quiesced = s.quiesce(120_000);
        for (key, want) in &oracle {
            let copies = s.replicas_of(key);
            if copies.len() < (k + 1) as usize {
                out.under_replicated += 1;
            }
            // unacknowledged writes may land too; the survivors must cover the oracle
            let merged = crate::lattice::merge_all(copies.iter().map(|(_, c)| c));
            let covered = merged.is_some_and(|m| crate::lattice::merge(&m, want) == m);
            if !covered {
                out.lost_writes += 1;
            }
        }
    });
    out
}

/// Node counts at the end of a live run.
pub fn final_counts(out: &LiveOutcome) -> TierMap<u32> {
    out.rows
        .last()
        .map_or(TierMap::default(), |r| TierMap([r.mem_nodes, r.ebs_nodes]))
}
