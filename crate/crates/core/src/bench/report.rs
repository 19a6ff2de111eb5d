//! Timeline rows and the files a run leaves behind.

use std::fmt::Write as _;
use std::fs;
use std::io;
use std::path::Path;

pub const TIMELINE_HEADER: &str =
    "time_s,throughput_ops,avg_latency_ms,cost_per_hr,mem_nodes,ebs_nodes,mem_hit_rate,slo_satisfied";

#[derive(Debug, Clone, PartialEq)]
pub struct TimelineRow {
    /// End of the reporting interval.
    pub time_s: f64,
    pub throughput_ops: f64,
    pub avg_latency_ms: f64,
    pub cost_per_hr: f64,
    pub mem_nodes: u32,
    pub ebs_nodes: u32,
    pub mem_hit_rate: f64,
    pub slo_satisfied: bool,
}

impl TimelineRow {
    /// Fixed precision so reruns compare byte for byte.
    pub fn csv_line(&self) -> String {
        format!(
            "{},{:.1},{:.4},{:.3},{},{},{:.4},{}",
            self.time_s,
            self.throughput_ops,
            self.avg_latency_ms,
            self.cost_per_hr,
            self.mem_nodes,
            self.ebs_nodes,
            self.mem_hit_rate,
            self.slo_satisfied
        )
    }
}

pub fn timeline_csv(rows: &[TimelineRow]) -> String {
    let mut s = String::with_capacity(64 * (rows.len() + 1));
    s.push_str(TIMELINE_HEADER);
    s.push('\n');
    for r in rows {
        s.push_str(&r.csv_line());
        s.push('\n');
    }
    s
}

/// One labelled run inside a scenario.
#[derive(Debug, Clone, PartialEq)]
pub struct Run {
    pub label: String,
    pub rows: Vec<TimelineRow>,
}

impl Run {
    pub fn slo_fraction(&self) -> f64 {
        if self.rows.is_empty() {
            return 0.0;
        }
        self.rows.iter().filter(|r| r.slo_satisfied).count() as f64 / self.rows.len() as f64
    }

    /// Dollars spent, integrating the hourly rate over each interval.
    pub fn total_cost(&self) -> f64 {
        let mut prev = 0.0;
        let mut total = 0.0;
        for r in &self.rows {
            total += r.cost_per_hr * (r.time_s - prev) / 3600.0;
            prev = r.time_s;
        }
        total
    }

    /// Means over the final `n` rows: (throughput, latency, cost, hit rate).
    pub fn steady(&self, n: usize) -> (f64, f64, f64, f64) {
        let tail = &self.rows[self.rows.len().saturating_sub(n)..];
        let m = tail.len().max(1) as f64;
        let sum = |f: fn(&TimelineRow) -> f64| tail.iter().map(f).sum::<f64>() / m;
        (
            sum(|r| r.throughput_ops),
            sum(|r| r.avg_latency_ms),
            sum(|r| r.cost_per_hr),
            sum(|r| r.mem_hit_rate),
        )
    }

    pub fn peak_nodes(&self) -> u32 {
        self.rows
            .iter()
            .map(|r| r.mem_nodes + r.ebs_nodes)
            .max()
            .unwrap_or(0)
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct ScenarioReport {
    pub scenario: String,
    pub mode: String,
    pub seed: u64,
    pub runs: Vec<Run>,
    /// Scenario-specific results, in order.
    pub metrics: Vec<(String, String)>,
    /// Extra CSV tables, by file name.
    pub tables: Vec<(String, String)>,
}

impl ScenarioReport {
    pub fn metric(&self, name: &str) -> Option<&str> {
        self.metrics
            .iter()
            .find(|(k, _)| k == name)
            .map(|(_, v)| v.as_str())
    }

    pub fn run(&self, label: &str) -> Option<&Run> {
        self.runs.iter().find(|r| r.label == label)
    }

    /// All runs' rows back to back.
    pub fn timeline(&self) -> String {
        let rows: Vec<TimelineRow> = self
            .runs
            .iter()
            .flat_map(|r| r.rows.iter().cloned())
            .collect();
        timeline_csv(&rows)
    }

    pub fn summary(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "scenario {}", self.scenario);
        let _ = writeln!(s, "mode {}", self.mode);
        let _ = writeln!(s, "seed {}", self.seed);
        for r in &self.runs {
            let last = r.rows.last();
            let _ = writeln!(
                s,
                "run {}: rows {} slo_satisfied {:.4} total_cost {:.4} final_mem {} final_ebs {} peak_nodes {}",
                r.label,
                r.rows.len(),
                r.slo_fraction(),
                r.total_cost(),
                last.map_or(0, |l| l.mem_nodes),
                last.map_or(0, |l| l.ebs_nodes),
                r.peak_nodes()
            );
        }
        for (k, v) in &self.metrics {
            let _ = writeln!(s, "{k} {v}");
        }
        s
    }

    /// Writes `timeline.csv`, `summary.txt`, one timeline per run when
    /// there are several, and any extra tables.
    pub fn write(&self, dir: &Path) -> io::Result<()> {
        fs::create_dir_all(dir)?;
        fs::write(dir.join("timeline.csv"), self.timeline())?;
        fs::write(dir.join("summary.txt"), self.summary())?;
        if self.runs.len() > 1 {
            for r in &self.runs {
                fs::write(
                    dir.join(format!("timeline_{}.csv", r.label)),
                    timeline_csv(&r.rows),
                )?;
            }
        }
        for (name, body) in &self.tables {
            fs::write(dir.join(name), body)?;
        }
        Ok(())
    }
}
