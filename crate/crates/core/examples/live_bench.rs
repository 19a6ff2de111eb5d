//! Live mode: real requests against a simulated cluster that the policy
//! engine resizes, followed by a durability audit.

use annakv::bench::live::run_live;
use annakv::bench::BenchConfig;

fn main() {
    let cfg = BenchConfig::parse(
        "L_obj = 3.3\nk = 2\nmem_nodes = 2\nebs_nodes = 3\nn_keys = 500\ntheta = 1.5\n\
         offered_ops = 8000\nduration = 120\nT = 10\nlive_ops = 100\n",
    )
    .expect("config");
    let out = run_live(&cfg, 3);
    let last = out.rows.last().unwrap();
    println!(
        "{} requests ({} failed), last row: {:.0} ops/s {:.2} ms hit {:.3}",
        out.requests,
        out.failed_requests,
        last.throughput_ops,
        last.avg_latency_ms,
        last.mem_hit_rate
    );
    println!(
        "lost writes {}, under-replicated keys {}, quiesced {}",
        out.lost_writes, out.under_replicated, out.quiesced
    );
}
