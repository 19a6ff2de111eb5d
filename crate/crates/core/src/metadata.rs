//! Replication vectors, statistics records, and the reserved key scheme
//! that keeps all system metadata inside the store itself.

use std::fmt;
use std::str::FromStr;

use thiserror::Error;

use crate::lattice::LwwCell;
use crate::ring::{decode_membership, HashRing, RingError, RingMember, Tier, TierMap};

/// Every metadata key starts with this prefix; user keys may not.
pub const META_PREFIX: &str = "__anna_meta__/";

/// Node replicas in the memory tier for metadata keys. Metadata is never
/// demoted or re-replicated by the policy engine.
pub const META_MEM_REPLICAS: u32 = 3;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum MetaError {
    #[error("malformed replication vector {0:?}")]
    BadVector(String),
    #[error("replication vector has {total} replicas, fault tolerance needs {needed}")]
    BelowFaultFloor { total: u32, needed: u32 },
    #[error("tier {tier} has {replicas} replicas but only {nodes} live nodes")]
    TooManyReplicas {
        tier: Tier,
        replicas: u32,
        nodes: u32,
    },
    #[error("tier {tier} wants {threads} workers per node but nodes have {workers}")]
    TooManyThreads {
        tier: Tier,
        threads: u32,
        workers: u32,
    },
    #[error("worker replica count must be at least 1")]
    ZeroThreads,
    #[error("key {0:?} uses the reserved metadata prefix")]
    ReservedKey(String),
    #[error("invalid metadata key part {0:?}")]
    BadKeyPart(String),
    #[error("malformed metadata key {0:?}")]
    BadMetaKey(String),
    #[error("malformed {what} record {line:?}")]
    BadRecord { what: &'static str, line: String },
}

/// Per-tier node replica counts `R` and per-node worker replica counts `T`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct ReplicationVector {
    replicas: TierMap<u32>,
    threads: TierMap<u32>,
}

impl ReplicationVector {
    /// `replicas` and `threads` are indexed `[mem, ebs]`.
    pub fn new(replicas: [u32; Tier::COUNT], threads: [u32; Tier::COUNT]) -> Self {
        Self {
            replicas: TierMap(replicas),
            threads: TierMap(threads),
        }
    }

    pub fn replicas(&self, tier: Tier) -> u32 {
        self.replicas[tier]
    }

    pub fn threads(&self, tier: Tier) -> u32 {
        self.threads[tier]
    }

    pub fn set_replicas(&mut self, tier: Tier, n: u32) {
        self.replicas[tier] = n;
    }

    pub fn set_threads(&mut self, tier: Tier, n: u32) {
        self.threads[tier] = n;
    }

    pub fn total_replicas(&self) -> u32 {
        self.replicas.0.iter().sum()
    }

    /// True when at least one replica lives in the memory tier.
    pub fn in_memory(&self) -> bool {
        self.replicas[Tier::Mem] > 0
    }

    /// Checks the user-key invariants against `k` and the cluster shape.
    pub fn validate(
        &self,
        k: u32,
        live_nodes: &TierMap<u32>,
        workers_per_node: &TierMap<u32>,
    ) -> Result<(), MetaError> {
        if self.total_replicas() < k + 1 {
            return Err(MetaError::BelowFaultFloor {
                total: self.total_replicas(),
                needed: k + 1,
            });
        }
        for tier in Tier::ALL {
            if self.threads[tier] == 0 {
                return Err(MetaError::ZeroThreads);
            }
            if self.replicas[tier] > live_nodes[tier] {
                return Err(MetaError::TooManyReplicas {
                    tier,
                    replicas: self.replicas[tier],
                    nodes: live_nodes[tier],
                });
            }
            if self.threads[tier] > workers_per_node[tier] {
                return Err(MetaError::TooManyThreads {
                    tier,
                    threads: self.threads[tier],
                    workers: workers_per_node[tier],
                });
            }
        }
        Ok(())
    }

    /// Canonical text `M:<R_MEM>,<T_MEM>;E:<R_EBS>,<T_EBS>`.
    pub fn encode(&self) -> String {
        self.to_string()
    }

    pub fn decode(bytes: &[u8]) -> Result<Self, MetaError> {
        let text = std::str::from_utf8(bytes)
            .map_err(|_| MetaError::BadVector(String::from_utf8_lossy(bytes).into_owned()))?;
        text.parse()
    }
}

impl fmt::Display for ReplicationVector {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "M:{},{};E:{},{}",
            self.replicas[Tier::Mem],
            self.threads[Tier::Mem],
            self.replicas[Tier::Ebs],
            self.threads[Tier::Ebs]
        )
    }
}

impl FromStr for ReplicationVector {
    type Err = MetaError;

    fn from_str(s: &str) -> Result<Self, MetaError> {
        let bad = || MetaError::BadVector(s.to_string());
        let (mem, ebs) = s.split_once(';').ok_or_else(bad)?;
        let parse_tier = |part: &str, tag: &str| -> Result<(u32, u32), MetaError> {
            let body = part.strip_prefix(tag).ok_or_else(bad)?;
            let (r, t) = body.split_once(',').ok_or_else(bad)?;
            let r = r.parse().map_err(|_| bad())?;
            let t = t.parse().map_err(|_| bad())?;
            Ok((r, t))
        };
        let (rm, tm) = parse_tier(mem, "M:")?;
        let (re, te) = parse_tier(ebs, "E:")?;
        Ok(ReplicationVector::new([rm, re], [tm, te]))
    }
}

/// `[<1, k>, <1, 1>]`: one memory replica, `k` disk replicas, one worker each.
pub fn default_vector(k: u32) -> ReplicationVector {
    ReplicationVector::new([1, k], [1, 1])
}

/// Every key demoted to disk: `k + 1` disk replicas, no memory replica.
pub fn disk_only_vector(k: u32) -> ReplicationVector {
    ReplicationVector::new([0, k + 1], [1, 1])
}

/// The pinned vector used for every metadata key.
pub fn metadata_vector() -> ReplicationVector {
    ReplicationVector::new([META_MEM_REPLICAS, 0], [1, 1])
}

/// Kinds of metadata keys.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum MetaKind {
    Ring,
    Rv,
    NodeStats,
    KeyStats,
    Latency,
    /// Persisted policy-engine state, so the monitor itself stays stateless.
    Policy,
}

impl MetaKind {
    pub const ALL: [MetaKind; 6] = [
        MetaKind::Ring,
        MetaKind::Rv,
        MetaKind::NodeStats,
        MetaKind::KeyStats,
        MetaKind::Latency,
        MetaKind::Policy,
    ];

    pub fn tag(self) -> &'static str {
        match self {
            MetaKind::Ring => "ring",
            MetaKind::Rv => "rv",
            MetaKind::NodeStats => "stats/node",
            MetaKind::KeyStats => "stats/key",
            MetaKind::Latency => "stats/latency",
            MetaKind::Policy => "policy",
        }
    }
}

/// Builds `__anna_meta__/<tag>/<parts joined by '/'>`.
pub fn meta_key<S: AsRef<str>>(kind: MetaKind, parts: &[S]) -> Result<String, MetaError> {
    let mut key = String::from(META_PREFIX);
    key.push_str(kind.tag());
    for p in parts {
        let p = p.as_ref();
        if p.is_empty() || p.contains('/') || p.contains(META_PREFIX) || p.contains('\n') {
            return Err(MetaError::BadKeyPart(p.to_string()));
        }
        key.push('/');
        key.push_str(p);
    }
    Ok(key)
}

/// Inverse of [`meta_key`].
pub fn parse_meta_key(key: &str) -> Result<(MetaKind, Vec<String>), MetaError> {
    let rest = key
        .strip_prefix(META_PREFIX)
        .ok_or_else(|| MetaError::BadMetaKey(key.to_string()))?;
    // Longest tags first so "stats/node" is not mistaken for a shorter tag.
    let mut kinds = MetaKind::ALL;
    kinds.sort_by_key(|k| std::cmp::Reverse(k.tag().len()));
    for kind in kinds {
        let tag = kind.tag();
        if let Some(tail) = rest.strip_prefix(tag) {
            if tail.is_empty() {
                return Ok((kind, Vec::new()));
            }
            if let Some(tail) = tail.strip_prefix('/') {
                let parts: Vec<String> = tail.split('/').map(str::to_string).collect();
                if parts.iter().any(String::is_empty) {
                    break;
                }
                return Ok((kind, parts));
            }
        }
    }
    Err(MetaError::BadMetaKey(key.to_string()))
}

pub fn is_meta_key(key: &str) -> bool {
    key.starts_with(META_PREFIX)
}

/// Rejects user keys that collide with the metadata namespace or would
/// break the line-oriented statistics encodings.
pub fn check_user_key(key: &str) -> Result<(), MetaError> {
    if is_meta_key(key) {
        return Err(MetaError::ReservedKey(key.to_string()));
    }
    if key.contains('\n') {
        return Err(MetaError::BadKeyPart(key.to_string()));
    }
    Ok(())
}

pub fn ring_key(tier: Tier) -> String {
    meta_key(MetaKind::Ring, &[tier.name()]).expect("tier names are valid parts")
}

pub fn rv_key(key: &str) -> Result<String, MetaError> {
    meta_key(MetaKind::Rv, &[key])
}

pub fn node_stats_key(node: &str, epoch: u64) -> Result<String, MetaError> {
    meta_key(MetaKind::NodeStats, &[node, &epoch.to_string()])
}

pub fn key_stats_key(node: &str, epoch: u64) -> Result<String, MetaError> {
    meta_key(MetaKind::KeyStats, &[node, &epoch.to_string()])
}

pub fn latency_key(client: &str, epoch: u64) -> Result<String, MetaError> {
    meta_key(MetaKind::Latency, &[client, &epoch.to_string()])
}

/// Newline-separated list of client ids that publish latency reports.
pub fn latency_registry_key() -> String {
    meta_key(MetaKind::Latency, &["clients"]).expect("static key")
}

pub fn policy_state_key() -> String {
    meta_key(MetaKind::Policy, &["state"]).expect("static key")
}

/// Ring membership as stored under [`ring_key`].
pub fn encode_membership_cell(ring: &HashRing) -> Vec<u8> {
    ring.encode_membership().into_bytes()
}

pub fn decode_membership_cell(cell: &LwwCell) -> Result<Vec<RingMember>, RingError> {
    let text = std::str::from_utf8(cell.payload())
        .map_err(|_| RingError::BadRecord("ring membership is not utf-8".into()))?;
    decode_membership(text)
}

/// Access to metadata stored in the cluster itself. Implemented by every
/// host (simulator, threaded runtime) for the routing, monitoring and
/// policy components.
pub trait MetaAccess {
    /// Merged value across the key's reachable replicas.
    fn read_meta(&mut self, key: &str) -> Option<LwwCell>;
    /// Writes `payload` under `key` with a fresh stamp. Returns the stored
    /// cell, or `None` when no replica accepted it.
    fn write_meta(&mut self, key: &str, payload: Vec<u8>) -> Option<LwwCell>;
}

/// Accesses to one key on one node during one window.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct KeyAccessRecord {
    pub key: String,
    pub count: u64,
}

/// Newline-separated `key,count` lines.
pub fn encode_key_stats(records: &[KeyAccessRecord]) -> String {
    let mut out = String::with_capacity(records.len() * 16);
    for r in records {
        out.push_str(&r.key);
        out.push(',');
        out.push_str(&r.count.to_string());
        out.push('\n');
    }
    out
}

pub fn decode_key_stats(text: &str) -> Result<Vec<KeyAccessRecord>, MetaError> {
    text.lines()
        .filter(|l| !l.is_empty())
        .map(|line| {
            let (key, count) = line.rsplit_once(',').ok_or_else(|| MetaError::BadRecord {
                what: "key stats",
                line: line.to_string(),
            })?;
            let count = count.parse().map_err(|_| MetaError::BadRecord {
                what: "key stats",
                line: line.to_string(),
            })?;
            Ok(KeyAccessRecord {
                key: key.to_string(),
                count,
            })
        })
        .collect()
}

/// One node's report for one window.
#[derive(Debug, Clone, PartialEq)]
pub struct NodeStats {
    pub node_id: String,
    pub tier: Tier,
    /// Fraction of the window spent serving requests and gossip.
    pub occupancy: f64,
    /// Fraction of storage capacity in use.
    pub storage_fraction: f64,
    pub epoch: u64,
}

impl NodeStats {
    /// `node_id,tier,occupancy,storage_fraction,epoch`
    pub fn encode(&self) -> String {
        format!(
            "{},{},{},{},{}",
            self.node_id, self.tier, self.occupancy, self.storage_fraction, self.epoch
        )
    }

    pub fn decode(text: &str) -> Result<Self, MetaError> {
        let bad = || MetaError::BadRecord {
            what: "node stats",
            line: text.to_string(),
        };
        let fields: Vec<&str> = text.trim_end().split(',').collect();
        if fields.len() != 5 {
            return Err(bad());
        }
        let occupancy: f64 = fields[2].parse().map_err(|_| bad())?;
        let storage_fraction: f64 = fields[3].parse().map_err(|_| bad())?;
        if !(0.0..=1.0).contains(&occupancy) || !(0.0..=1.0).contains(&storage_fraction) {
            return Err(bad());
        }
        Ok(NodeStats {
            node_id: fields[0].to_string(),
            tier: Tier::parse(fields[1]).ok_or_else(bad)?,
            occupancy,
            storage_fraction,
            epoch: fields[4].parse().map_err(|_| bad())?,
        })
    }
}

/// Mean request latency one client observed during one window.
#[derive(Debug, Clone, PartialEq)]
pub struct LatencyReport {
    pub client_id: String,
    pub epoch: u64,
    pub mean_latency_ms: f64,
    pub requests: u64,
}

impl LatencyReport {
    /// `client_id,epoch,mean_latency_ms,requests`
    pub fn encode(&self) -> String {
        format!(
            "{},{},{},{}",
            self.client_id, self.epoch, self.mean_latency_ms, self.requests
        )
    }

    pub fn decode(text: &str) -> Result<Self, MetaError> {
        let bad = || MetaError::BadRecord {
            what: "latency",
            line: text.to_string(),
        };
        let fields: Vec<&str> = text.trim_end().split(',').collect();
        if fields.len() != 4 {
            return Err(bad());
        }
        let report = LatencyReport {
            client_id: fields[0].to_string(),
            epoch: fields[1].parse().map_err(|_| bad())?,
            mean_latency_ms: fields[2].parse().map_err(|_| bad())?,
            requests: fields[3].parse().map_err(|_| bad())?,
        };
        if report.requests == 0 || !(report.mean_latency_ms > 0.0) {
            return Err(bad());
        }
        Ok(report)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lattice::{LwwCell, Timestamp};

    #[test]
    fn default_vector_examples() {
        assert_eq!(default_vector(2).encode(), "M:1,1;E:2,1");
        assert_eq!(default_vector(0), ReplicationVector::new([1, 0], [1, 1]));
        assert_eq!(default_vector(5), ReplicationVector::new([1, 5], [1, 1]));
    }

    #[test]
    fn rv_text_round_trip_and_errors() {
        let rv = ReplicationVector::new([3, 7], [4, 2]);
        assert_eq!(
            ReplicationVector::decode(rv.encode().as_bytes()).unwrap(),
            rv
        );
        assert!(matches!(
            "M:1;E:2".parse::<ReplicationVector>(),
            Err(MetaError::BadVector(_))
        ));
        assert!("M:1,1;X:2,1".parse::<ReplicationVector>().is_err());
        assert!("M:1,1".parse::<ReplicationVector>().is_err());
        assert!("M:a,1;E:2,1".parse::<ReplicationVector>().is_err());
    }

    #[test]
    fn meta_key_format() {
        assert_eq!(
            meta_key(MetaKind::Rv, &["foo"]).unwrap(),
            "__anna_meta__/rv/foo"
        );
        assert_eq!(
            meta_key(MetaKind::NodeStats, &["n3", "17"]).unwrap(),
            "__anna_meta__/stats/node/n3/17"
        );
        assert!(meta_key(MetaKind::Rv, &["a/b"]).is_err());
        assert!(meta_key(MetaKind::Rv, &["__anna_meta__/x"]).is_err());
    }

    #[test]
    fn meta_keys_parse_back() {
        for kind in MetaKind::ALL {
            for parts in [vec!["x"], vec!["n1", "42"], vec![]] {
                let key = meta_key(kind, &parts).unwrap();
                let (k2, p2) = parse_meta_key(&key).unwrap();
                assert_eq!(k2, kind);
                assert_eq!(p2, parts);
            }
        }
        assert!(parse_meta_key("user/key").is_err());
    }

    #[test]
    fn reserved_prefix_rejected_for_user_keys() {
        assert_eq!(
            check_user_key("__anna_meta__/rv/x"),
            Err(MetaError::ReservedKey("__anna_meta__/rv/x".into()))
        );
        assert!(check_user_key("ordinary").is_ok());
    }

    #[test]
    fn validate_enforces_fault_floor_and_shape() {
        let live = TierMap([2, 3]);
        let workers = TierMap([4, 4]);
        assert!(default_vector(2).validate(2, &live, &workers).is_ok());
        assert!(matches!(
            ReplicationVector::new([1, 1], [1, 1]).validate(2, &live, &workers),
            Err(MetaError::BelowFaultFloor {
                total: 2,
                needed: 3
            })
        ));
        assert!(matches!(
            ReplicationVector::new([3, 0], [1, 1]).validate(2, &live, &workers),
            Err(MetaError::TooManyReplicas { .. })
        ));
        assert!(matches!(
            ReplicationVector::new([1, 2], [5, 1]).validate(2, &live, &workers),
            Err(MetaError::TooManyThreads { .. })
        ));
    }

    #[test]
    fn per_key_metadata_stays_small() {
        // Stored RV cell plus a decimal access counter for the same key.
        let rv = ReplicationVector::new([12, 0], [4, 1]);
        let cell = LwwCell::new(
            Timestamp::new(u64::MAX, u32::MAX, u32::MAX),
            rv.encode().into_bytes(),
        );
        let counter = u64::MAX.to_string();
        assert!(cell.encoded_len() + counter.len() <= 64);
    }

    #[test]
    fn stats_records_round_trip() {
        let recs = vec![
            KeyAccessRecord {
                key: "a".into(),
                count: 3,
            },
            KeyAccessRecord {
                key: "b,with,commas".into(),
                count: 0,
            },
        ];
        assert_eq!(decode_key_stats(&encode_key_stats(&recs)).unwrap(), recs);
        assert!(decode_key_stats("a\n").is_err());

        let ns = NodeStats {
            node_id: "m3".into(),
            tier: Tier::Mem,
            occupancy: 0.125,
            storage_fraction: 0.5,
            epoch: 17,
        };
        assert_eq!(NodeStats::decode(&ns.encode()).unwrap(), ns);
        assert!(NodeStats::decode("m3,mem,1.5,0.2,1").is_err());

        let lr = LatencyReport {
            client_id: "c0".into(),
            epoch: 4,
            mean_latency_ms: 4.0,
            requests: 10,
        };
        assert_eq!(LatencyReport::decode(&lr.encode()).unwrap(), lr);
        assert!(LatencyReport::decode("c0,4,0,10").is_err());
    }
}
