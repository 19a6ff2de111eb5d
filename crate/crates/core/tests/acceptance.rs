//! Acceptance suite. Each criterion prints one PASS/FAIL line; the binary
//! exits non-zero if any fails.

use std::collections::BTreeMap;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::PathBuf;
use std::thread;
use std::time::{Duration, Instant};

use annakv::bench::model::{sustainable_rate, CapacityModel, Resources};
use annakv::bench::scenario::{run_scenario, Scenario};
use annakv::bench::{BenchConfig, Mode};
use annakv::cluster::CostModel;
use annakv::lattice::{merge, merge_all, LwwCell, Timestamp};
use annakv::metadata::{LatencyReport, NodeStats, ReplicationVector};
use annakv::monitor::{ClusterShape, ClusterSnapshot};
use annakv::policy::{policy_tick, ActionPlan, Knobs, PolicyState, SloSpec};
use annakv::ring::{HashRing, NodeId, RingMember, Tier, TierMap, WorkerAddr};
use annakv::routing::Client;
use annakv::runtime::{ChannelFaults, LocalCluster, RuntimeConfig, TransportKind};
use annakv::sim::{NetConfig, SimCluster, SimConfig};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

type Check = fn() -> Result<String, String>;

macro_rules! ensure {
    ($cond:expr, $($fmt:tt)+) => {
        if !$cond {
            return Err(format!($($fmt)+));
        }
    };
}

fn main() {
    let criteria: [(u32, &str, u64, Check); 11] = [
        (1, "lattice algebra", 5, lattice_algebra),
        (2, "ring balance and disruption", 10, ring_properties),
        (3, "threaded convergence oracle", 30, convergence_oracle),
        (4, "k-fault recovery", 60, fault_recovery),
        (5, "policy examples and fault-floor fuzz", 30, policy_suite),
        (6, "replication ratios", 5, replication_ratios),
        (
            7,
            "selective replication dominance",
            60,
            selective_dominance,
        ),
        (8, "hotspot recovery", 120, hotspot_recovery),
        (9, "dynamic rise then fall", 120, dynamic_scenario),
        (10, "pareto monotonicity", 180, pareto_monotone),
        (11, "deterministic rerun", 120, deterministic_rerun),
    ];
    let only: Option<u32> = std::env::args().skip(1).find_map(|a| a.parse().ok());
    let mut failed = 0;
    for (n, name, budget_s, check) in criteria {
        if only.is_some_and(|o| o != n) {
            continue;
        }
        let t0 = Instant::now();
        let res = catch_unwind(AssertUnwindSafe(check)).unwrap_or_else(|p| {
            Err(p
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_else(|| "panicked".into()))
        });
        let secs = t0.elapsed().as_secs_f64();
        let res = res.and_then(|d| {
            if secs > budget_s as f64 {
                Err(format!("{d}; took {secs:.1}s, budget {budget_s}s"))
            } else {
                Ok(d)
            }
        });
        match res {
            Ok(d) => println!("criterion {n:>2} PASS  {name} ({secs:.2}s): {d}"),
            Err(e) => {
                failed += 1;
                println!("criterion {n:>2} FAIL  {name} ({secs:.2}s): {e}");
            }
        }
    }
    if failed > 0 {
        eprintln!("{failed} criteria failed");
        std::process::exit(1);
    }
}

fn config(name: &str) -> BenchConfig {
    let path = PathBuf::from(env!("CARGO_MANIFEST_DIR")).join(format!("configs/{name}.conf"));
    BenchConfig::load(&path).unwrap_or_else(|e| panic!("{}: {e}", path.display()))
}

fn metric<'a>(rep: &'a annakv::bench::report::ScenarioReport, name: &str) -> &'a str {
    rep.metric(name)
        .unwrap_or_else(|| panic!("missing metric {name}"))
}

// 1 ------------------------------------------------------------------------

fn random_cell(rng: &mut ChaCha8Rng) -> LwwCell {
    let ts = Timestamp::new(
        rng.random_range(0..8),
        rng.random_range(0..3),
        rng.random_range(0..3),
    );
    let len = rng.random_range(0..4);
    let payload: Vec<u8> = (0..len).map(|_| rng.random()).collect();
    LwwCell::new(ts, payload)
}

/// Random binary tree over the sequence, merged bottom-up.
fn bracket(cells: &[LwwCell], rng: &mut ChaCha8Rng) -> LwwCell {
    if cells.len() == 1 {
        return cells[0].clone();
    }
    let at = rng.random_range(1..cells.len());
    let (l, r) = cells.split_at(at);
    merge(&bracket(l, rng), &bracket(r, rng))
}

fn permutations(n: usize) -> Vec<Vec<usize>> {
    if n == 0 {
        return vec![Vec::new()];
    }
    let mut out = Vec::new();
    for p in permutations(n - 1) {
        for i in 0..=p.len() {
            let mut q = p.clone();
            q.insert(i, n - 1);
            out.push(q);
        }
    }
    out
}

fn lattice_algebra() -> Result<String, String> {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let mut orders = 0usize;
    for set in 0..1000 {
        let n = rng.random_range(1..=5);
        let cells: Vec<LwwCell> = (0..n).map(|_| random_cell(&mut rng)).collect();
        // canonical: duplicate-free, sorted by timestamp, folded left
        let mut canon = cells.clone();
        canon.sort_by_key(|c| c.ts());
        canon.dedup();
        let expected = canon
            .iter()
            .skip(1)
            .fold(canon[0].clone(), |a, c| merge(&a, c));
        ensure!(
            merge_all(&cells) == Some(expected.clone()),
            "set {set}: merge_all disagrees"
        );
        ensure!(
            cells.contains(&expected),
            "set {set}: result is not an input"
        );
        for perm in permutations(n) {
            let seq: Vec<LwwCell> = perm.iter().map(|i| cells[*i].clone()).collect();
            for _ in 0..3 {
                ensure!(
                    bracket(&seq, &mut rng) == expected,
                    "set {set}: order {perm:?} differs"
                );
                orders += 1;
            }
        }
        // gossip replay: duplicates and shuffles on top
        let mut replay = cells.clone();
        for _ in 0..rng.random_range(0..2 * n + 1) {
            let c = cells[rng.random_range(0..n)].clone();
            replay.push(c);
        }
        replay.shuffle(&mut rng);
        let mut state = replay[0].clone();
        for c in &replay[1..] {
            state.merge_from(c);
        }
        ensure!(
            state == expected,
            "set {set}: replay with duplicates differs"
        );
    }
    Ok(format!("1000 multisets, {orders} bracketed orders"))
}

// 2 ------------------------------------------------------------------------

fn ring_of(n: usize) -> HashRing {
    let mut ring = HashRing::new();
    for i in 0..n {
        ring.insert(&RingMember::new(format!("node-{i}"), 100))
            .unwrap();
    }
    ring
}

fn ring_properties() -> Result<String, String> {
    let keys: Vec<String> = (0..100_000).map(|i| format!("user:{i}")).collect();
    let ring = ring_of(10);
    let mut owned: BTreeMap<&str, usize> = BTreeMap::new();
    for k in &keys {
        *owned.entry(ring.owner(k).unwrap()).or_default() += 1;
    }
    let ratio = *owned.values().max().unwrap() as f64 / *owned.values().min().unwrap() as f64;
    ensure!(
        owned.len() == 10 && ratio <= 1.5,
        "balance ratio {ratio:.3}"
    );

    let mut worst: f64 = 1.0;
    for n in 1..=12 {
        let before = ring_of(n);
        let after = before.inserted(&RingMember::new("joiner", 100)).unwrap();
        let moved = keys
            .iter()
            .filter(|k| before.owner(k).unwrap() != after.owner(k).unwrap())
            .count();
        let rel = moved as f64 / keys.len() as f64 * (n + 1) as f64;
        ensure!(
            (0.5..=2.0).contains(&rel),
            "n={n}: moved {rel:.3} of the ideal share"
        );
        if (rel - 1.0).abs() > (worst - 1.0).abs() {
            worst = rel;
        }
    }
    Ok(format!(
        "balance {ratio:.3}; join disruption within {worst:.3}x of 1/(n+1) for n=1..12"
    ))
}

// 3 ------------------------------------------------------------------------

fn convergence_oracle() -> Result<String, String> {
    let cluster = LocalCluster::start(RuntimeConfig {
        k: 1,
        nodes: TierMap([1, 1]),
        workers_per_node: TierMap([4, 4]),
        gossip_period_ms: 10,
        transport: TransportKind::Channel(ChannelFaults {
            dup_prob: 0.2,
            max_delay_ms: 5,
            seed: 3,
        }),
    })
    .map_err(|e| e.to_string())?;
    let keys: Vec<String> = (0..200).map(|i| format!("key{i:03}")).collect();
    // a slice of the keys lives on all 8 workers
    for k in keys.iter().take(20) {
        let mut c = Client::new("setup", cluster.rpc());
        c.put(k, "seed").map_err(|e| e.to_string())?;
        cluster
            .set_rv(k, ReplicationVector::new([1, 1], [4, 4]))
            .map_err(|e| format!("{e:?}"))?;
    }

    let threads = 4;
    let per = 5_000 / threads;
    let handles: Vec<_> = (0..threads)
        .map(|t| {
            let rpc = cluster.rpc();
            let keys = keys.clone();
            thread::spawn(move || {
                let mut rng = ChaCha8Rng::seed_from_u64(100 + t as u64);
                let mut c = Client::new(format!("w{t}"), rpc);
                let mut acked = Vec::with_capacity(per);
                let mut failed = 0;
                for i in 0..per {
                    let k = &keys[rng.random_range(0..keys.len())];
                    match c.put(k, format!("t{t}-{i}")) {
                        Ok(cell) => acked.push((k.clone(), cell)),
                        Err(_) => failed += 1,
                    }
                }
                (acked, failed)
            })
        })
        .collect();
    let mut oracle: BTreeMap<String, LwwCell> = BTreeMap::new();
    let mut failed = 0;
    let mut writes = 0;
    for h in handles {
        let (acked, f) = h.join().map_err(|_| "writer panicked".to_string())?;
        failed += f;
        writes += acked.len();
        for (k, c) in acked {
            oracle
                .entry(k)
                .and_modify(|cur| {
                    cur.merge_from(&c);
                })
                .or_insert(c);
        }
    }
    ensure!(failed == 0, "{failed} writes failed");
    ensure!(cluster.quiesce(Duration::from_secs(20)), "no quiescence");
    let reps = cluster.replicas();
    let mut copies = 0;
    for (k, want) in &oracle {
        let have = reps.get(k).ok_or_else(|| format!("{k} missing"))?;
        let expect = if keys[..20].contains(k) { 8 } else { 2 };
        ensure!(
            have.len() == expect,
            "{k}: {} replicas, want {expect}",
            have.len()
        );
        for (addr, cell) in have {
            ensure!(
                cell.encode() == want.encode(),
                "{k} at {addr:?} diverges from the oracle"
            );
        }
        copies += have.len();
    }
    cluster.shutdown();
    Ok(format!(
        "{writes} writes, {} keys, {copies} replicas byte-equal the merge oracle",
        oracle.len()
    ))
}

// 4 ------------------------------------------------------------------------

fn fault_recovery() -> Result<String, String> {
    let cfg = SimConfig {
        k: 2,
        seed: 21,
        net: NetConfig {
            min_delay_ms: 1,
            max_delay_ms: 20,
            dup_prob: 0.1,
        },
        replace_failed: true,
        ..Default::default()
    };
    let rpc = SimCluster::new(cfg, TierMap([2, 4])).into_shared();
    let mut c = Client::new("load", rpc.clone());
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let mut oracle: BTreeMap<String, LwwCell> = BTreeMap::new();
    let victim = NodeId::new("m0");
    for i in 0..1_000 {
        // mid gossip period, so the last writes have not been gossiped yet
        if i == 517 {
            ensure!(
                rpc.with(|s| s.fail_node(&victim)),
                "could not kill {victim}"
            );
        }
        // a paced client: gossip rounds interleave with the writes
        rpc.with(|s| s.run_for(5));
        let k = format!("key{:03}", rng.random_range(0..300));
        let cell = c
            .put(&k, format!("v{i}"))
            .map_err(|e| format!("write {i}: {e}"))?;
        oracle
            .entry(k)
            .and_modify(|cur| {
                cur.merge_from(&cell);
            })
            .or_insert(cell);
    }
    rpc.with(|s| {
        let wait = s.config().spawn_delay_ms + 2_000;
        s.run_for(wait);
        ensure!(s.quiesce(60_000), "no quiescence");
        let mem = s.live_nodes(Tier::Mem);
        ensure!(mem.len() == 2 && !mem.contains(&victim), "memory tier after replacement: {mem:?}");
        let mut lost = 0;
        let mut short = 0;
        for (k, want) in &oracle {
            let reps = s.replicas_of(k);
            if reps.len() < 3 {
                short += 1;
            }
            match merge_all(reps.iter().map(|(_, c)| c)) {
                Some(have) if have.ts() >= want.ts() => {}
                _ => lost += 1,
            }
        }
        ensure!(short == 0, "{short} keys below 3 replicas");
        ensure!(lost == 0, "{lost} acknowledged writes lost");
        Ok(format!(
            "killed {victim} at write 517 of 1000, between gossip rounds; replacement {:?} joined; {} keys at >=3 replicas, none lost",
            mem,
            oracle.len()
        ))
    })
}

// 5 ------------------------------------------------------------------------

fn snapshot(
    n_mem: usize,
    occ: &[f64],
    storage: (f64, f64),
    n_ebs: u32,
    latency: f64,
) -> ClusterSnapshot {
    let shape = ClusterShape {
        live: TierMap([n_mem as u32, n_ebs]),
        workers_per_node: TierMap([4, 4]),
        node_capacity_bytes: TierMap([1 << 20, 1 << 24]),
        key_bytes: 300,
        ..Default::default()
    };
    let mut s = ClusterSnapshot::empty(10, shape);
    for i in 0..n_mem {
        let id = NodeId::new(format!("m{i}"));
        s.members[Tier::Mem].push(id.clone());
        s.node_stats.push(NodeStats {
            node_id: id.to_string(),
            tier: Tier::Mem,
            occupancy: occ[i % occ.len()],
            storage_fraction: storage.0,
            epoch: 10,
        });
    }
    for i in 0..n_ebs {
        let id = NodeId::new(format!("e{i}"));
        s.members[Tier::Ebs].push(id.clone());
        s.node_stats.push(NodeStats {
            node_id: id.to_string(),
            tier: Tier::Ebs,
            occupancy: 0.1,
            storage_fraction: storage.1,
            epoch: 10,
        });
    }
    s.latency.push(LatencyReport {
        client_id: "c".into(),
        epoch: 10,
        mean_latency_ms: latency,
        requests: 1000,
    });
    s
}

fn skew(s: &mut ClusterSnapshot) {
    for i in 0..50 {
        s.key_counts.insert(format!("k{i:02}"), 10);
    }
    s.key_counts.insert("hot".into(), 5_000);
}

fn tick(s: &ClusterSnapshot, slo: &SloSpec, state: &mut PolicyState) -> ActionPlan {
    policy_tick(s, &Knobs::default(), slo, &CostModel::default(), state)
}

fn policy_suite() -> Result<String, String> {
    let slo = SloSpec::latency(2.5, 2);
    let mid = (0.4, 0.6);

    let mut s = snapshot(4, &[0.9, 0.05, 0.05, 0.05], mid, 3, 5.0);
    skew(&mut s);
    let plan = tick(&s, &slo, &mut PolicyState::default());
    ensure!(
        plan.add_nodes == TierMap([0, 0]),
        "split: added {:?}",
        plan.add_nodes
    );
    ensure!(
        plan.rv_for("hot") == Some(&ReplicationVector::new([2, 2], [1, 1])),
        "split: hot vector {:?}",
        plan.rv_for("hot")
    );

    // storage low enough that two nodes still hold everything
    let s = snapshot(3, &[0.03], (0.3, 0.6), 3, 1.0);
    let plan = tick(&s, &slo, &mut PolicyState::default());
    ensure!(
        plan.remove_nodes.len() == 1,
        "removal: {:?}",
        plan.remove_nodes
    );
    ensure!(
        s.members[Tier::Mem].contains(&plan.remove_nodes[0]),
        "removal picked {:?}",
        plan.remove_nodes
    );

    let mut s = snapshot(4, &[0.9], mid, 3, 5.0);
    skew(&mut s);
    let mut state = PolicyState::default();
    let first = tick(&s, &slo, &mut state);
    ensure!(
        first.add_nodes[Tier::Mem] > 0,
        "grace: first tick did not add ({:?})",
        first.add_nodes
    );
    s.epoch += 1;
    let second = tick(&s, &slo, &mut state);
    ensure!(second.is_empty(), "grace: second tick emitted {second:?}");

    // fuzz the fault floor
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut nonempty = 0;
    for case in 0..10_000 {
        let k = rng.random_range(0..3u32);
        let n_mem = rng.random_range(1..7usize);
        let n_ebs = rng.random_range(k + 1..k + 5);
        let occ: Vec<f64> = (0..n_mem).map(|_| rng.random()).collect();
        let mut s = snapshot(
            n_mem,
            &occ,
            (rng.random(), rng.random()),
            n_ebs,
            rng.random_range(0.2..20.0),
        );
        for i in 0..rng.random_range(0..40) {
            let c = match rng.random_range(0..3) {
                0 => rng.random_range(0..5),
                1 => rng.random_range(0..60),
                _ => rng.random_range(1_000..20_000),
            };
            s.key_counts.insert(format!("k{i:02}"), c);
            if rng.random_bool(0.3) {
                let r_m = rng.random_range(0..=n_mem as u32);
                let r_e = rng.random_range((k + 1).saturating_sub(r_m)..=n_ebs);
                let rv = ReplicationVector::new(
                    [r_m, r_e],
                    [rng.random_range(1..5), rng.random_range(1..5)],
                );
                s.rvs.insert(format!("k{i:02}"), rv);
            }
        }
        let slo = if rng.random_bool(0.5) {
            SloSpec::latency(rng.random_range(0.5..10.0), k)
        } else {
            SloSpec::budget(rng.random_range(0.5..8.0), k)
        };
        let knobs = Knobs {
            elasticity: rng.random_bool(0.8),
            replication: rng.random_bool(0.8),
            movement: rng.random_bool(0.8),
            ..Knobs::default()
        };
        let mut state = PolicyState {
            grace_until: rng.random_range(0..15),
            tracked: s.rvs.keys().cloned().collect(),
            ..Default::default()
        };
        let plan = policy_tick(&s, &knobs, &slo, &CostModel::default(), &mut state);
        if !plan.is_empty() {
            nonempty += 1;
        }
        let live = s.shape.live;
        let after = TierMap::from_fn(|t| {
            live[t]
                - plan
                    .remove_nodes
                    .iter()
                    .filter(|n| s.members[t].contains(n))
                    .count() as u32
        });
        ensure!(
            after[Tier::Mem] >= 1 && after[Tier::Ebs] >= k + 1,
            "case {case}: tiers {after:?}"
        );
        for (key, rv) in &plan.rv_updates {
            ensure!(
                rv.validate(k, &after, &s.shape.workers_per_node).is_ok(),
                "case {case}: {key} -> {rv:?} with tiers {after:?}"
            );
        }
    }
    Ok(format!(
        "3 examples exact; 10000 fuzzed snapshots ({nonempty} with actions) respect the floor"
    ))
}

// 6 ------------------------------------------------------------------------

fn replication_ratios() -> Result<String, String> {
    let model = CapacityModel::default();
    let mut res = Resources::new();
    for i in 0..4 {
        res.add_node(&NodeId::new(format!("m{i}")), Tier::Mem, 4);
    }
    let rate =
        |eps: Vec<WorkerAddr>| sustainable_rate(&model, &res, &res.route(&model, Tier::Mem, &eps));
    let one = rate(vec![WorkerAddr::new(NodeId::new("m0"), 0)]);
    let nodes = rate(
        (0..4)
            .map(|i| WorkerAddr::new(NodeId::new(format!("m{i}")), 0))
            .collect(),
    );
    let workers = rate(
        (0..4)
            .map(|w| WorkerAddr::new(NodeId::new("m0"), w))
            .collect(),
    );
    let (rn, rw) = (nodes / one, workers / one);
    ensure!((rn - 4.0).abs() <= 0.04, "across nodes {rn:.4}x");
    ensure!((rw - 2.0).abs() <= 0.02, "across workers {rw:.4}x");
    Ok(format!("4 nodes {rn:.3}x, 4 workers on one node {rw:.3}x"))
}

// 7-11 ---------------------------------------------------------------------

fn selective_dominance() -> Result<String, String> {
    let cfg = config("selective_replication");
    ensure!(cfg.workload.phases[0].theta == 2.0, "theta is not 2");
    let rep = run_scenario(Scenario::SelectiveReplication, &cfg, 1, Mode::Capacity);
    let ratio: f64 = metric(&rep, "throughput_ratio").parse().unwrap();
    ensure!(ratio >= 3.0, "ratio {ratio}");
    Ok(format!(
        "on {} ops/s vs off {} ops/s = {ratio:.2}x",
        metric(&rep, "steady_throughput_on"),
        metric(&rep, "steady_throughput_off")
    ))
}

fn hotspot_recovery() -> Result<String, String> {
    let cfg = config("hotspot");
    let rep = run_scenario(Scenario::Hotspot, &cfg, 1, Mode::Capacity);
    let worst = |m: &str| {
        metric(&rep, m)
            .parse::<f64>()
            .map_err(|_| format!("{m} = {}", metric(&rep, m)))
    };
    let high = worst("theta2.worst_recovery_0.99_s")?;
    let moderate = worst("theta1.worst_recovery_0.8_s")?;
    ensure!(high <= 30.0, "theta 2 needed {high}s to reach 0.99");
    ensure!(moderate <= 60.0, "theta 1 needed {moderate}s to reach 0.80");
    Ok(format!(
        "theta 2 -> 0.99 within {high}s, theta 1 -> 0.80 within {moderate}s"
    ))
}

fn dynamic_scenario() -> Result<String, String> {
    let rep = run_scenario(Scenario::Dynamic, &config("dynamic"), 1, Mode::Capacity);
    let slo: f64 = metric(&rep, "slo_fraction").parse().unwrap();
    ensure!(
        metric(&rep, "rise_then_fall") == "true",
        "nodes did not rise then fall"
    );
    ensure!(slo >= 0.90, "slo fraction {slo}");
    Ok(format!(
        "nodes {} -> {} -> {}, SLO met {:.1}% of intervals",
        metric(&rep, "initial_nodes"),
        metric(&rep, "peak_nodes"),
        metric(&rep, "final_nodes"),
        slo * 100.0
    ))
}

fn pareto_monotone() -> Result<String, String> {
    let cfg = config("pareto_cost");
    ensure!(cfg.caps.len() >= 5, "only {} caps", cfg.caps.len());
    ensure!(cfg.thetas == [0.5, 0.8, 1.0], "thetas {:?}", cfg.thetas);
    let rep = run_scenario(Scenario::ParetoCost, &cfg, 1, Mode::Capacity);
    let mut lines = Vec::new();
    for t in ["0.5", "0.8", "1"] {
        ensure!(
            metric(&rep, &format!("theta{t}.monotone")) == "true",
            "theta {t}: {}",
            metric(&rep, &format!("theta{t}.latencies"))
        );
        lines.push(format!(
            "theta {t}: {}",
            metric(&rep, &format!("theta{t}.latencies"))
        ));
    }
    Ok(lines.join("; "))
}

fn deterministic_rerun() -> Result<String, String> {
    let cfg = config("dynamic");
    let a = run_scenario(Scenario::Dynamic, &cfg, 1, Mode::Capacity);
    let b = run_scenario(Scenario::Dynamic, &cfg, 1, Mode::Capacity);
    let (da, db) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    a.write(da.path()).map_err(|e| e.to_string())?;
    b.write(db.path()).map_err(|e| e.to_string())?;
    let fa = std::fs::read(da.path().join("timeline.csv")).unwrap();
    let fb = std::fs::read(db.path().join("timeline.csv")).unwrap();
    ensure!(fa == fb, "timeline.csv differs between runs");
    ensure!(
        std::fs::read(da.path().join("summary.txt")).unwrap()
            == std::fs::read(db.path().join("summary.txt")).unwrap(),
        "summary differs"
    );
    Ok(format!("{} bytes of timeline identical", fa.len()))
}
