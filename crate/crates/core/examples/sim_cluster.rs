//! A deterministic simulated cluster: lossy, duplicating network, a node
//! failure, automatic replacement, and a replica audit at the end.

use annakv::ring::{Tier, TierMap};
use annakv::routing::Client;
use annakv::sim::{NetConfig, SimCluster, SimConfig};

fn main() {
    let cfg = SimConfig {
        k: 2,
        seed: 42,
        net: NetConfig {
            min_delay_ms: 1,
            max_delay_ms: 30,
            dup_prob: 0.1,
        },
        replace_failed: true,
        ..Default::default()
    };
    let rpc = SimCluster::new(cfg, TierMap([2, 3])).into_shared();
    let mut client = Client::new("demo", rpc.clone());

    for i in 0..200 {
        client.put(&format!("user{i}"), format!("v{i}")).unwrap();
    }
    let victim = rpc.with(|s| s.live_nodes(Tier::Ebs)[0].clone());
    println!("killing {victim}");
    rpc.with(|s| s.fail_node(&victim));

    for i in 0..200 {
        client.put(&format!("user{i}"), format!("w{i}")).unwrap();
    }
    rpc.with(|s| {
        let spawn = s.config().spawn_delay_ms;
        s.run_for(spawn + 2_000);
        assert!(s.quiesce(60_000));
        println!(
            "live nodes: mem {:?} ebs {:?}",
            s.live_nodes(Tier::Mem),
            s.live_nodes(Tier::Ebs)
        );
        let short = (0..200)
            .filter(|i| s.replicas_of(&format!("user{i}")).len() < 3)
            .count();
        println!("keys below 3 replicas: {short}");
        println!("network: {:?}", s.net_stats());
    });
    println!(
        "user5 = {:?}",
        client.get("user5").unwrap().map(String::from_utf8)
    );
}
