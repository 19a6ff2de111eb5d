//! Zipfian key popularity and phased workloads.

use rand::Rng;
use rand_distr::{Distribution, Zipf};

use crate::config::ConfigError;

/// Name of the key at index `i` (0-based).
pub fn key_name(i: usize) -> String {
    format!("k{i:07}")
}

/// `P(rank r) = r^-theta / sum_j j^-theta` for ranks `1..=n`.
pub fn zipf_pmf(n: usize, theta: f64) -> Vec<f64> {
    let w: Vec<f64> = (1..=n).map(|r| (r as f64).powf(-theta)).collect();
    let total: f64 = w.iter().sum();
    w.into_iter().map(|x| x / total).collect()
}

/// One draw from `1..=n`. Panics if `n == 0` or `theta < 0`.
pub fn zipf_sample(n: u64, theta: f64, rng: &mut impl Rng) -> u64 {
    assert!(n >= 1 && theta >= 0.0, "zipf needs n >= 1 and theta >= 0");
    let z = Zipf::new(n as f64, theta).expect("valid zipf parameters");
    z.sample(rng) as u64
}

/// Draws key indices for one phase; cheaper than [`zipf_sample`] in a loop.
#[derive(Debug, Clone)]
pub struct KeySampler {
    zipf: Zipf<f64>,
    n: usize,
    offset: usize,
}

impl KeySampler {
    pub fn new(n: usize, phase: &Phase) -> Self {
        Self {
            zipf: Zipf::new(n as f64, phase.theta).expect("valid zipf parameters"),
            n,
            offset: phase.offset as usize,
        }
    }

    pub fn sample(&self, rng: &mut impl Rng) -> usize {
        let rank = self.zipf.sample(rng) as usize;
        (rank - 1 + self.offset) % self.n
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Phase {
    pub start_s: f64,
    pub theta: f64,
    pub offered_ops: f64,
    /// Rank 1 lands on key index `offset`; shifting it moves the hotspot.
    pub offset: u64,
}

impl Phase {
    /// `start:theta:ops[:offset]`
    pub fn parse(s: &str) -> Result<Self, ConfigError> {
        let bad = || ConfigError::BadValue {
            name: "phases".into(),
            value: s.to_string(),
            expected: "start:theta:ops[:offset]",
        };
        let f: Vec<&str> = s.trim().split(':').map(str::trim).collect();
        if !(3..=4).contains(&f.len()) {
            return Err(bad());
        }
        Ok(Phase {
            start_s: f[0].parse().map_err(|_| bad())?,
            theta: f[1].parse().map_err(|_| bad())?,
            offered_ops: f[2].parse().map_err(|_| bad())?,
            offset: match f.get(3) {
                Some(o) => o.parse().map_err(|_| bad())?,
                None => 0,
            },
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct WorkloadSpec {
    pub n_keys: usize,
    pub key_bytes: u64,
    pub value_bytes: u64,
    pub phases: Vec<Phase>,
}

impl WorkloadSpec {
    pub fn validate(&self) -> Result<(), ConfigError> {
        let bad = |m: &str| Err(ConfigError::Invalid(m.to_string()));
        if self.n_keys == 0 {
            return bad("n_keys must be positive");
        }
        if self.phases.is_empty() {
            return bad("at least one phase is required");
        }
        if self.phases[0].start_s != 0.0 {
            return bad("the first phase must start at 0");
        }
        for w in self.phases.windows(2) {
            if w[1].start_s <= w[0].start_s {
                return bad("phases must start in increasing order");
            }
        }
        for p in &self.phases {
            if !(p.theta >= 0.0) || !p.theta.is_finite() {
                return bad("theta must be >= 0");
            }
            if !(p.offered_ops > 0.0) || !p.offered_ops.is_finite() {
                return bad("offered ops must be positive");
            }
        }
        Ok(())
    }

    /// Index of the phase in force at `t_s`.
    pub fn phase_index(&self, t_s: f64) -> usize {
        self.phases
            .iter()
            .rposition(|p| p.start_s <= t_s)
            .unwrap_or(0)
    }

    /// Bytes one replica of one key occupies: key, value and stamp.
    pub fn stored_bytes(&self) -> u64 {
        self.key_bytes + self.value_bytes + 20
    }

    /// Requests per second for every key index under a phase.
    pub fn demand(&self, phase: &Phase) -> Vec<f64> {
        let pmf = zipf_pmf(self.n_keys, phase.theta);
        let mut out = vec![0.0; self.n_keys];
        for (r, p) in pmf.iter().enumerate() {
            out[(r + phase.offset as usize) % self.n_keys] = p * phase.offered_ops;
        }
        out
    }
}
