//! Workloads, the capacity model, scenario runs and their reports.
//!
//! Two modes drive the same monitor, policy and manager loop. Capacity mode
//! replaces the data path with the analytic [`model`] and is fully
//! deterministic. Live mode sends sampled requests through real workers in
//! the [`crate::sim`] cluster; performance numbers there still come from
//! the model applied to the live topology.

pub mod capacity;
pub mod live;
pub mod model;
pub mod report;
pub mod scenario;
pub mod workload;

use std::path::Path;
use std::str::FromStr;

use thiserror::Error;

use crate::cluster::CostModel;
use crate::config::{ConfigError, ConfigMap};
use crate::policy::{Knobs, SloSpec, DEFAULT_SPAWN_DELAY_S};
use crate::ring::{Tier, TierMap};

pub use model::CapacityModel;
pub use report::{ScenarioReport, TimelineRow};
pub use scenario::{run_scenario, Scenario};
pub use workload::{Phase, WorkloadSpec};

#[derive(Debug, Error)]
pub enum BenchError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error("unknown scenario {0:?}")]
    UnknownScenario(String),
    #[error("unknown mode {0:?}; expected capacity or live")]
    UnknownMode(String),
    #[error("cannot write report: {0}")]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Capacity,
    Live,
}

impl Mode {
    pub fn name(self) -> &'static str {
        match self {
            Mode::Capacity => "capacity",
            Mode::Live => "live",
        }
    }
}

impl FromStr for Mode {
    type Err = BenchError;
    fn from_str(s: &str) -> Result<Self, BenchError> {
        match s {
            "capacity" => Ok(Mode::Capacity),
            "live" => Ok(Mode::Live),
            other => Err(BenchError::UnknownMode(other.to_string())),
        }
    }
}

/// Everything a scenario run reads from its config file.
#[derive(Debug, Clone, PartialEq)]
pub struct BenchConfig {
    pub slo: SloSpec,
    pub knobs: Knobs,
    pub model: CapacityModel,
    pub costs: CostModel,
    pub workload: WorkloadSpec,
    pub initial_nodes: TierMap<u32>,
    pub workers_per_node: TierMap<u32>,
    pub node_capacity_bytes: TierMap<u64>,
    pub spawn_delay_s: f64,
    pub heartbeat_timeout_s: f64,
    /// Keys start with no memory replica.
    pub start_on_disk: bool,
    pub duration_s: u64,
    /// Rows averaged for steady-state figures.
    pub steady_rows: usize,
    /// Budget caps swept by `pareto_cost`.
    pub caps: Vec<f64>,
    /// Skews swept by `pareto_cost` and `hotspot`.
    pub thetas: Vec<f64>,
    /// Latency objectives swept by `pareto_latency`.
    pub l_objs: Vec<f64>,
    /// Hotspot moves every this many seconds (0 = never).
    pub shift_s: f64,
    pub fault_at_s: Option<f64>,
    pub fault_tier: Tier,
    /// Sampled requests per second in live mode.
    pub live_ops: u32,
}

fn list(cfg: &ConfigMap, name: &str) -> Result<Vec<f64>, ConfigError> {
    match cfg.raw(name) {
        None => Ok(Vec::new()),
        Some(v) => v
            .split(',')
            .map(|x| {
                x.trim().parse::<f64>().map_err(|_| ConfigError::BadValue {
                    name: name.to_string(),
                    value: v.to_string(),
                    expected: "comma-separated numbers",
                })
            })
            .collect(),
    }
}

impl BenchConfig {
    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        Self::from_config(&ConfigMap::load(path)?)
    }

    pub fn parse(text: &str) -> Result<Self, ConfigError> {
        Self::from_config(&ConfigMap::parse(text)?)
    }

    /// Reads every setting and rejects names nobody understood.
    pub fn from_config(cfg: &ConfigMap) -> Result<Self, ConfigError> {
        let slo = SloSpec::from_config(cfg)?;
        let knobs = Knobs::from_config(cfg)?;
        let model = CapacityModel::from_config(cfg)?;
        let dc = CostModel::default();
        let costs = CostModel {
            node_price: TierMap([
                cfg.f64_or("price_mem", dc.node_price[Tier::Mem])?,
                cfg.f64_or("price_ebs", dc.node_price[Tier::Ebs])?,
            ]),
            overhead: cfg.f64_or("overhead", dc.overhead)?,
        };
        let n_keys = cfg.u64_or("n_keys", 10_000)? as usize;
        let phases = match cfg.raw("phases") {
            Some(text) => text
                .split(';')
                .filter(|p| !p.trim().is_empty())
                .map(Phase::parse)
                .collect::<Result<Vec<_>, _>>()?,
            None => vec![Phase {
                start_s: 0.0,
                theta: cfg.f64_or("theta", 1.0)?,
                offered_ops: cfg.f64_or("offered_ops", 10_000.0)?,
                offset: 0,
            }],
        };
        let workload = WorkloadSpec {
            n_keys,
            key_bytes: cfg.u64_or("key_bytes", 8)?,
            value_bytes: cfg.u64_or("value_bytes", 256)?,
            phases,
        };
        let fault_tier = match cfg.raw("fault_tier") {
            None => Tier::Ebs,
            Some(t) => Tier::parse(t).ok_or_else(|| ConfigError::BadValue {
                name: "fault_tier".into(),
                value: t.to_string(),
                expected: "mem or ebs",
            })?,
        };
        let c = BenchConfig {
            slo,
            knobs,
            model,
            costs,
            workload,
            initial_nodes: TierMap([
                cfg.u32_or("mem_nodes", 1)?,
                cfg.u32_or("ebs_nodes", slo.k + 1)?,
            ]),
            workers_per_node: TierMap([
                cfg.u32_or("workers_mem", 4)?,
                cfg.u32_or("workers_ebs", 4)?,
            ]),
            node_capacity_bytes: TierMap([
                cfg.u64_or("capacity_mem_bytes", 64 << 20)?,
                cfg.u64_or("capacity_ebs_bytes", 1 << 30)?,
            ]),
            spawn_delay_s: cfg.f64_or("spawn_delay", DEFAULT_SPAWN_DELAY_S)?,
            heartbeat_timeout_s: cfg.f64_or("heartbeat_timeout", 0.5)?,
            start_on_disk: cfg.bool_or("start_on_disk", false)?,
            duration_s: cfg.u64_or("duration", 600)?,
            steady_rows: cfg.u64_or("steady_rows", 60)? as usize,
            caps: list(cfg, "caps")?,
            thetas: list(cfg, "thetas")?,
            l_objs: list(cfg, "l_objs")?,
            shift_s: cfg.f64_or("shift_every", 0.0)?,
            fault_at_s: cfg.get::<f64>("fault_at", "a time in seconds")?,
            fault_tier,
            live_ops: cfg.u32_or("live_ops", 200)?,
        };
        cfg.deny_unused()?;
        c.validate()?;
        Ok(c)
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let bad = |m: String| Err(ConfigError::Invalid(m));
        self.workload.validate()?;
        let t = self.knobs.window_s;
        if t.fract() != 0.0 || t < 1.0 {
            return bad(format!("T must be a whole number of seconds, got {t}"));
        }
        if self.duration_s == 0 {
            return bad("duration must be positive".into());
        }
        if self.initial_nodes[Tier::Mem] < 1 || self.initial_nodes[Tier::Ebs] < self.slo.k + 1 {
            return bad(format!(
                "need at least 1 memory node and {} disk nodes",
                self.slo.k + 1
            ));
        }
        if self.workers_per_node.0.iter().any(|w| *w == 0) {
            return bad("workers per node must be positive".into());
        }
        if !(self.spawn_delay_s >= 0.0) || !(self.heartbeat_timeout_s > 0.0) {
            return bad("spawn_delay must be >= 0 and heartbeat_timeout > 0".into());
        }
        if self.caps.iter().chain(&self.l_objs).any(|v| !(*v > 0.0)) {
            return bad("caps and l_objs must be positive".into());
        }
        if self.thetas.iter().any(|v| !(*v >= 0.0)) {
            return bad("thetas must be >= 0".into());
        }
        if self.shift_s < 0.0 {
            return bad("shift_every must not be negative".into());
        }
        Ok(())
    }

    /// Copy with every phase's skew replaced.
    pub fn with_theta(&self, theta: f64) -> Self {
        let mut c = self.clone();
        for p in &mut c.workload.phases {
            p.theta = theta;
        }
        c
    }

    /// Phases extended so the hotspot jumps every `shift_s` seconds to a
    /// disjoint region of the key space.
    pub fn with_shifts(&self) -> Self {
        let mut c = self.clone();
        if self.shift_s <= 0.0 {
            return c;
        }
        let base = self.workload.phases[0];
        let stride = self.workload.n_keys as u64 / 3 + 1;
        let shifts = (self.duration_s as f64 / self.shift_s).ceil() as u64;
        c.workload.phases = (0..shifts)
            .map(|i| Phase {
                start_s: i as f64 * self.shift_s,
                offset: (base.offset + i * stride) % self.workload.n_keys as u64,
                ..base
            })
            .collect();
        c
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_and_unknown_names() {
        let c = BenchConfig::parse("L_obj=3\n").unwrap();
        assert_eq!(c.workload.n_keys, 10_000);
        assert_eq!(c.initial_nodes, TierMap([1, 3]));
        assert!(matches!(
            BenchConfig::parse("L_obj=3\nbogus=1\n"),
            Err(ConfigError::Unknown(n)) if n == "bogus"
        ));
        assert!(BenchConfig::parse("B=2\nL_obj=3\n").is_err());
        assert!(BenchConfig::parse("L_obj=3\nT=2.5\n").is_err());
    }

    #[test]
    fn phases_and_sweeps_parse() {
        let c =
            BenchConfig::parse("B=2\nphases=0:0.5:100; 60:2:400:17\ncaps=1.4, 2\nthetas=0.5,1\n")
                .unwrap();
        assert_eq!(c.workload.phases.len(), 2);
        assert_eq!(c.workload.phases[1].offset, 17);
        assert_eq!(c.caps, vec![1.4, 2.0]);
        assert_eq!(c.with_theta(0.8).workload.phases[1].theta, 0.8);
    }

    #[test]
    fn shifts_cover_the_run() {
        let c = BenchConfig::parse("L_obj=3\nduration=900\nshift_every=300\n")
            .unwrap()
            .with_shifts();
        let starts: Vec<f64> = c.workload.phases.iter().map(|p| p.start_s).collect();
        assert_eq!(starts, vec![0.0, 300.0, 600.0]);
        assert_ne!(c.workload.phases[0].offset, c.workload.phases[1].offset);
    }
}
