//! The analytic service model: one hot key spread over more nodes or workers.

use annakv::bench::model::{sustainable_rate, CapacityModel, Resources};
use annakv::ring::{NodeId, Tier, WorkerAddr};

fn main() {
    let model = CapacityModel::default();
    let mut res = Resources::new();
    for i in 0..4 {
        res.add_node(&NodeId::new(format!("m{i}")), Tier::Mem, 4);
    }

    let base = {
        let r = res.route(&model, Tier::Mem, &[WorkerAddr::new("m0", 0)]);
        sustainable_rate(&model, &res, &r)
    };
    println!("one replica, one worker: {base:.0} ops/s");

    for n in 1..=4 {
        let eps: Vec<WorkerAddr> = (0..n)
            .map(|i| WorkerAddr::new(NodeId::new(format!("m{i}")), 0))
            .collect();
        let r = res.route(&model, Tier::Mem, &eps);
        let rate = sustainable_rate(&model, &res, &r);
        println!("{n} node replicas: {rate:.0} ops/s ({:.2}x)", rate / base);
    }
    for w in 1..=4 {
        let eps: Vec<WorkerAddr> = (0..w).map(|i| WorkerAddr::new("m0", i)).collect();
        let r = res.route(&model, Tier::Mem, &eps);
        let rate = sustainable_rate(&model, &res, &r);
        println!(
            "{w} workers on one node: {rate:.0} ops/s ({:.2}x)",
            rate / base
        );
    }
}
