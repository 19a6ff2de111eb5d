//! One policy step on hand-built snapshots: the same latency violation is
//! answered with hot-key replication when memory nodes sit idle, and with
//! new nodes when every memory node is busy.

use annakv::cluster::CostModel;
use annakv::metadata::{LatencyReport, NodeStats};
use annakv::monitor::{ClusterShape, ClusterSnapshot};
use annakv::policy::{policy_tick, Knobs, PolicyState, SloSpec};
use annakv::ring::{NodeId, Tier, TierMap};

fn snapshot(occupancy: &[f64], latency_ms: f64) -> ClusterSnapshot {
    let shape = ClusterShape {
        live: TierMap([occupancy.len() as u32, 3]),
        workers_per_node: TierMap([4, 4]),
        ..Default::default()
    };
    let mut s = ClusterSnapshot::empty(10, shape);
    for (i, occ) in occupancy.iter().enumerate() {
        let id = NodeId::new(format!("m{i}"));
        s.members[Tier::Mem].push(id.clone());
        s.node_stats.push(NodeStats {
            node_id: id.to_string(),
            tier: Tier::Mem,
            occupancy: *occ,
            storage_fraction: 0.1,
            epoch: 10,
        });
    }
    for i in 0..3 {
        s.members[Tier::Ebs].push(NodeId::new(format!("e{i}")));
    }
    s.latency.push(LatencyReport {
        client_id: "c".into(),
        epoch: 10,
        mean_latency_ms: latency_ms,
        requests: 1000,
    });
    for i in 0..50 {
        s.key_counts.insert(format!("k{i:02}"), 10);
    }
    s.key_counts.insert("hot".into(), 5_000);
    s
}

fn main() {
    let slo = SloSpec::latency(2.5, 2);
    for (label, occ) in [
        ("one busy node", vec![0.9, 0.05, 0.05, 0.05]),
        ("all busy", vec![0.9; 4]),
    ] {
        let plan = policy_tick(
            &snapshot(&occ, 5.0),
            &Knobs::default(),
            &slo,
            &CostModel::default(),
            &mut PolicyState::default(),
        );
        println!(
            "{label}: add {:?}, hot key vector {:?}",
            plan.add_nodes,
            plan.rv_for("hot")
        );
    }

    // a budget caps growth instead
    let plan = policy_tick(
        &snapshot(&[0.9; 4], 5.0),
        &Knobs::default(),
        &SloSpec::budget(3.6, 2),
        &CostModel::default(),
        &mut PolicyState::default(),
    );
    println!("under a 3.6/h budget: add {:?}", plan.add_nodes);
}
