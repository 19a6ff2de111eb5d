//! Runs a bundled benchmark scenario in capacity mode and prints its summary.
//!
//!     cargo run --release --example scenario -- dynamic

use std::path::PathBuf;

use annakv::bench::scenario::{run_scenario, Scenario};
use annakv::bench::{BenchConfig, Mode};

fn main() {
    let name = std::env::args()
        .nth(1)
        .unwrap_or_else(|| "selective_replication".into());
    let scenario: Scenario = name.parse().expect("unknown scenario");
    let path = PathBuf::from(env!("CARGO_MANIFEST_DIR")).join(format!("configs/{name}.conf"));
    let cfg = BenchConfig::load(&path).expect("bad config");
    let report = run_scenario(scenario, &cfg, 1, Mode::Capacity);
    print!("{}", report.summary());
    let csv = report.timeline();
    let lines: Vec<&str> = csv.lines().collect();
    println!("{}", lines[0]);
    for line in &lines[lines.len().saturating_sub(3)..] {
        println!("{line}");
    }
}
