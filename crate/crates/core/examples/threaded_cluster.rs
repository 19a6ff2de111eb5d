//! Real threads: one per worker, talking over loopback TCP, then over an
//! in-process channel transport that delays and duplicates messages.

use std::time::Duration;

use annakv::metadata::ReplicationVector;
use annakv::ring::TierMap;
use annakv::routing::Client;
use annakv::runtime::{ChannelFaults, LocalCluster, RuntimeConfig, TransportKind};

fn run(transport: TransportKind) {
    let label = format!("{transport:?}");
    let cluster = LocalCluster::start(RuntimeConfig {
        k: 1,
        nodes: TierMap([1, 2]),
        workers_per_node: TierMap([4, 1]),
        gossip_period_ms: 10,
        transport,
    })
    .expect("start cluster");
    let mut c = Client::new("demo", cluster.rpc());
    for i in 0..100 {
        c.put(&format!("k{i}"), format!("{i}")).unwrap();
    }
    // spread one key over every memory worker
    cluster
        .set_rv("k0", ReplicationVector::new([1, 2], [4, 1]))
        .unwrap();
    let quiet = cluster.quiesce(Duration::from_secs(10));
    let reps = cluster.replicas();
    println!(
        "{label}: quiet={quiet} k0 copies={} k1 copies={} k42={:?}",
        reps["k0"].len(),
        reps["k1"].len(),
        c.get("k42").unwrap().map(String::from_utf8)
    );
    cluster.shutdown();
}

fn main() {
    run(TransportKind::Socket);
    run(TransportKind::Channel(ChannelFaults {
        dup_prob: 0.3,
        max_delay_ms: 20,
        seed: 7,
    }));
}
