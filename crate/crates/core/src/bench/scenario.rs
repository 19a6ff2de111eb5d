//! Named experiments built from capacity or live runs.

use std::fmt::Write as _;
use std::str::FromStr;

use crate::policy::SloSpec;

use super::capacity::CapacityRun;
use super::live::run_live;
use super::report::{Run, ScenarioReport};
use super::{BenchConfig, BenchError, Mode};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Scenario {
    SelectiveReplication,
    Dynamic,
    Hotspot,
    ParetoCost,
    ParetoLatency,
    Fault,
}

impl Scenario {
    pub const ALL: [Scenario; 6] = [
        Scenario::SelectiveReplication,
        Scenario::Dynamic,
        Scenario::Hotspot,
        Scenario::ParetoCost,
        Scenario::ParetoLatency,
        Scenario::Fault,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Scenario::SelectiveReplication => "selective_replication",
            Scenario::Dynamic => "dynamic",
            Scenario::Hotspot => "hotspot",
            Scenario::ParetoCost => "pareto_cost",
            Scenario::ParetoLatency => "pareto_latency",
            Scenario::Fault => "fault",
        }
    }
}

impl FromStr for Scenario {
    type Err = BenchError;
    fn from_str(s: &str) -> Result<Self, BenchError> {
        Scenario::ALL
            .into_iter()
            .find(|x| x.name() == s)
            .ok_or_else(|| BenchError::UnknownScenario(s.to_string()))
    }
}

/// One run of `cfg` in `mode`. Live runs also report data-path checks.
fn run_one(
    cfg: &BenchConfig,
    seed: u64,
    mode: Mode,
    label: &str,
    metrics: &mut Vec<(String, String)>,
) -> Run {
    let rows = match mode {
        Mode::Capacity => CapacityRun::new(cfg, seed).run(),
        Mode::Live => {
            let out = run_live(cfg, seed);
            let prefix = if label.is_empty() {
                String::new()
            } else {
                format!("{label}.")
            };
            for (k, v) in [
                ("requests", out.requests),
                ("failed_requests", out.failed_requests),
                ("lost_writes", out.lost_writes),
                ("under_replicated", out.under_replicated),
            ] {
                metrics.push((format!("{prefix}{k}"), v.to_string()));
            }
            metrics.push((format!("{prefix}quiesced"), out.quiesced.to_string()));
            out.rows
        }
    };
    Run {
        label: if label.is_empty() {
            "main".into()
        } else {
            label.to_string()
        },
        rows,
    }
}

/// Seconds from `shift_s` until the hit rate first reaches `threshold`.
pub fn recovery_time(run: &Run, shift_s: f64, threshold: f64) -> Option<f64> {
    run.rows
        .iter()
        .find(|r| r.time_s > shift_s && r.mem_hit_rate >= threshold)
        .map(|r| r.time_s - shift_s)
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map_or_else(|| "none".into(), |x| format!("{x}"))
}

pub fn run_scenario(
    scenario: Scenario,
    cfg: &BenchConfig,
    seed: u64,
    mode: Mode,
) -> ScenarioReport {
    let mut rep = ScenarioReport {
        scenario: scenario.name().into(),
        mode: mode.name().into(),
        seed,
        ..Default::default()
    };
    let mut m = Vec::new();
    match scenario {
        Scenario::SelectiveReplication => {
            let mut on = cfg.clone();
            on.knobs.replication = true;
            let mut off = cfg.clone();
            off.knobs.replication = false;
            let a = run_one(&on, seed, mode, "replication_on", &mut m);
            let b = run_one(&off, seed, mode, "replication_off", &mut m);
            let (ta, ..) = a.steady(cfg.steady_rows);
            let (tb, ..) = b.steady(cfg.steady_rows);
            m.push(("steady_throughput_on".into(), format!("{ta:.1}")));
            m.push(("steady_throughput_off".into(), format!("{tb:.1}")));
            m.push((
                "throughput_ratio".into(),
                format!("{:.4}", ta / tb.max(1e-9)),
            ));
            rep.runs = vec![a, b];
        }
        Scenario::Dynamic | Scenario::Fault => {
            let run = run_one(cfg, seed, mode, "", &mut m);
            let initial = run.rows.first().map_or(0, |r| r.mem_nodes + r.ebs_nodes);
            let (peak_t, peak) = run
                .rows
                .iter()
                .map(|r| (r.time_s, r.mem_nodes + r.ebs_nodes))
                .fold((0.0, 0), |a, b| if b.1 > a.1 { b } else { a });
            let last = run.rows.last().map_or(0, |r| r.mem_nodes + r.ebs_nodes);
            m.push(("slo_fraction".into(), format!("{:.4}", run.slo_fraction())));
            m.push(("initial_nodes".into(), initial.to_string()));
            m.push(("peak_nodes".into(), peak.to_string()));
            m.push(("peak_time_s".into(), format!("{peak_t}")));
            m.push(("final_nodes".into(), last.to_string()));
            m.push((
                "rise_then_fall".into(),
                (peak > initial && last < peak).to_string(),
            ));
            if scenario == Scenario::Fault {
                let min_tp = run
                    .rows
                    .iter()
                    .map(|r| r.throughput_ops)
                    .fold(f64::INFINITY, f64::min);
                m.push(("min_throughput".into(), format!("{min_tp:.1}")));
                // first row after the fault back at the starting size
                let fault_at = cfg.fault_at_s.unwrap_or(0.0);
                let dipped = run
                    .rows
                    .iter()
                    .position(|r| r.time_s > fault_at && r.mem_nodes + r.ebs_nodes < initial);
                let restored = dipped.and_then(|i| {
                    run.rows[i..]
                        .iter()
                        .find(|r| r.mem_nodes + r.ebs_nodes >= initial)
                        .map(|r| r.time_s)
                });
                m.push(("restored_at_s".into(), fmt_opt(restored)));
            }
            rep.runs = vec![run];
        }
        Scenario::Hotspot => {
            let shifted = cfg.with_shifts();
            let thetas = if cfg.thetas.is_empty() {
                vec![2.0, 1.0]
            } else {
                cfg.thetas.clone()
            };
            for theta in thetas {
                let label = format!("theta{theta}");
                let run = run_one(&shifted.with_theta(theta), seed, mode, &label, &mut m);
                let shifts: Vec<f64> = shifted
                    .workload
                    .phases
                    .iter()
                    .skip(1)
                    .map(|p| p.start_s)
                    .collect();
                for thr in [0.99, 0.80] {
                    let times: Vec<Option<f64>> = shifts
                        .iter()
                        .map(|s| recovery_time(&run, *s, thr))
                        .collect();
                    let worst = if times.iter().any(Option::is_none) {
                        None
                    } else {
                        times.iter().flatten().copied().reduce(f64::max)
                    };
                    let list: Vec<String> = times.into_iter().map(fmt_opt).collect();
                    m.push((format!("{label}.recovery_{thr}_s"), list.join(",")));
                    m.push((format!("{label}.worst_recovery_{thr}_s"), fmt_opt(worst)));
                }
                rep.runs.push(run);
            }
        }
        Scenario::ParetoCost => {
            let thetas = if cfg.thetas.is_empty() {
                vec![0.5, 0.8, 1.0]
            } else {
                cfg.thetas.clone()
            };
            let mut table = String::from("theta,cap,steady_latency_ms,steady_cost_per_hr,steady_throughput_ops,steady_mem_hit_rate\n");
            let mut all = true;
            for theta in thetas {
                let mut lats = Vec::new();
                for cap in &cfg.caps {
                    let mut c = cfg.with_theta(theta);
                    c.slo = SloSpec::budget(*cap, cfg.slo.k);
                    let run = run_one(&c, seed, mode, &format!("theta{theta}_cap{cap}"), &mut m);
                    let (tp, lat, cost, hit) = run.steady(cfg.steady_rows);
                    let _ = writeln!(table, "{theta},{cap},{lat:.4},{cost:.3},{tp:.1},{hit:.4}");
                    lats.push(lat);
                    rep.runs.push(run);
                }
                let mono = lats.windows(2).all(|w| w[1] <= w[0] + 1e-9);
                all &= mono;
                m.push((
                    format!("theta{theta}.latencies"),
                    lats.iter()
                        .map(|l| format!("{l:.4}"))
                        .collect::<Vec<_>>()
                        .join(","),
                ));
                m.push((format!("theta{theta}.monotone"), mono.to_string()));
            }
            m.push(("monotone".into(), all.to_string()));
            rep.tables.push(("sweep.csv".into(), table));
        }
        Scenario::ParetoLatency => {
            let mut table =
                String::from("l_obj_ms,steady_cost_per_hr,steady_latency_ms,slo_fraction\n");
            let l_objs = if cfg.l_objs.is_empty() {
                cfg.slo.l_obj().into_iter().collect()
            } else {
                cfg.l_objs.clone()
            };
            for l in l_objs {
                let mut c = cfg.clone();
                c.slo = SloSpec::latency(l, cfg.slo.k);
                let run = run_one(&c, seed, mode, &format!("lobj{l}"), &mut m);
                let (_, lat, cost, _) = run.steady(cfg.steady_rows);
                let _ = writeln!(table, "{l},{cost:.3},{lat:.4},{:.4}", run.slo_fraction());
                rep.runs.push(run);
            }
            rep.tables.push(("sweep.csv".into(), table));
        }
    }
    rep.metrics = m;
    rep
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::bench::report::TimelineRow;

    #[test]
    fn names_round_trip() {
        for s in Scenario::ALL {
            assert_eq!(s.name().parse::<Scenario>().unwrap(), s);
        }
        assert!("nope".parse::<Scenario>().is_err());
    }

    #[test]
    fn recovery_is_measured_from_the_shift() {
        let rows = [0.2, 0.5, 0.995, 0.999]
            .iter()
            .enumerate()
            .map(|(i, h)| TimelineRow {
                time_s: 300.0 + (i + 1) as f64 * 10.0,
                throughput_ops: 1.0,
                avg_latency_ms: 1.0,
                cost_per_hr: 1.0,
                mem_nodes: 1,
                ebs_nodes: 3,
                mem_hit_rate: *h,
                slo_satisfied: true,
            })
            .collect();
        let run = Run {
            label: "x".into(),
            rows,
        };
        assert_eq!(recovery_time(&run, 300.0, 0.99), Some(30.0));
        assert_eq!(recovery_time(&run, 300.0, 0.9999), None);
    }
}
