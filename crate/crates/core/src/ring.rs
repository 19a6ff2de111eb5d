//! Consistent hashing with virtual points.
//!
//! Each tier has a global ring mapping keys to nodes and a local ring mapping
//! keys to worker indices. The local ring is shared by every node of a tier,
//! so a key lands on the same worker indices on each of its replica nodes.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::ops::{Index, IndexMut};
use std::sync::Arc;

use thiserror::Error;

use crate::metadata::ReplicationVector;

/// Default virtual points per physical node on a global ring.
pub const DEFAULT_NODE_WEIGHT: u32 = 100;
/// Default virtual points per worker on a local ring.
pub const DEFAULT_WORKER_WEIGHT: u32 = 16;

/// Storage tiers, fastest first.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Tier {
    Mem,
    Ebs,
}

impl Tier {
    pub const ALL: [Tier; 2] = [Tier::Mem, Tier::Ebs];
    pub const COUNT: usize = 2;

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn name(self) -> &'static str {
        match self {
            Tier::Mem => "mem",
            Tier::Ebs => "ebs",
        }
    }

    pub fn parse(s: &str) -> Option<Tier> {
        match s {
            "mem" | "MEM" => Some(Tier::Mem),
            "ebs" | "EBS" => Some(Tier::Ebs),
            _ => None,
        }
    }
}

impl fmt::Display for Tier {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// One value per tier.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default)]
pub struct TierMap<T>(pub [T; Tier::COUNT]);

impl<T> TierMap<T> {
    pub fn from_fn(mut f: impl FnMut(Tier) -> T) -> Self {
        TierMap([f(Tier::Mem), f(Tier::Ebs)])
    }

    pub fn iter(&self) -> impl Iterator<Item = (Tier, &T)> {
        Tier::ALL.into_iter().zip(self.0.iter())
    }

    pub fn map<U>(&self, mut f: impl FnMut(Tier, &T) -> U) -> TierMap<U> {
        TierMap::from_fn(|t| f(t, &self[t]))
    }
}

impl<T> Index<Tier> for TierMap<T> {
    type Output = T;
    fn index(&self, t: Tier) -> &T {
        &self.0[t.index()]
    }
}

impl<T> IndexMut<Tier> for TierMap<T> {
    fn index_mut(&mut self, t: Tier) -> &mut T {
        &mut self.0[t.index()]
    }
}

/// Storage node identifier; also its member id on a global ring.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct NodeId(Arc<str>);

impl NodeId {
    pub fn new(id: impl AsRef<str>) -> Self {
        NodeId(Arc::from(id.as_ref()))
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }
}

impl fmt::Display for NodeId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl From<&str> for NodeId {
    fn from(s: &str) -> Self {
        NodeId::new(s)
    }
}

/// A (node, worker index) endpoint.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct WorkerAddr {
    pub node: NodeId,
    pub worker: u32,
}

impl WorkerAddr {
    pub fn new(node: impl Into<NodeId>, worker: u32) -> Self {
        Self {
            node: node.into(),
            worker,
        }
    }
}

impl fmt::Display for WorkerAddr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}#{}", self.node, self.worker)
    }
}

/// Hash used for ring positions and key lookups.
pub trait RingHasher: Clone + Send + Sync + 'static {
    fn hash(&self, bytes: &[u8]) -> u64;
}

/// XXH64 with seed 0. Reference vectors: `""` → `0xef46db3751d8e999`,
/// `"a"` → `0xd24ec4f1a98c6e5b`.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct Xxh64;

impl RingHasher for Xxh64 {
    fn hash(&self, bytes: &[u8]) -> u64 {
        xxhash_rust::xxh64::xxh64(bytes, 0)
    }
}

impl<F> RingHasher for F
where
    F: Fn(&[u8]) -> u64 + Clone + Send + Sync + 'static,
{
    fn hash(&self, bytes: &[u8]) -> u64 {
        self(bytes)
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RingMember {
    pub member_id: String,
    pub weight: u32,
}

impl RingMember {
    pub fn new(member_id: impl Into<String>, weight: u32) -> Self {
        Self {
            member_id: member_id.into(),
            weight,
        }
    }
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum RingError {
    #[error("ring is empty")]
    Empty,
    #[error("member {0:?} already present with weight {1}")]
    ConflictingWeight(String, u32),
    #[error("member weight must be positive")]
    ZeroWeight,
    #[error("malformed member id {0:?}")]
    BadMemberId(String),
    #[error("tier {0} needs replicas but its ring is empty")]
    EmptyTier(Tier),
    #[error("malformed ring record {0:?}")]
    BadRecord(String),
}

/// Consistent-hash ring. Points are keyed by `(position, member_id)` so two
/// members whose points collide still each keep theirs.
#[derive(Clone)]
pub struct HashRing<H: RingHasher = Xxh64> {
    hasher: H,
    points: BTreeSet<(u64, Arc<str>)>,
    members: BTreeMap<Arc<str>, u32>,
}

impl Default for HashRing<Xxh64> {
    fn default() -> Self {
        Self::new()
    }
}

impl HashRing<Xxh64> {
    pub fn new() -> Self {
        Self::with_hasher(Xxh64)
    }
}

impl<H: RingHasher> fmt::Debug for HashRing<H> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("HashRing")
            .field("members", &self.members)
            .field("points", &self.points.len())
            .finish()
    }
}

impl<H: RingHasher> PartialEq for HashRing<H> {
    fn eq(&self, other: &Self) -> bool {
        self.points == other.points && self.members == other.members
    }
}

/// Result of [`HashRing::removed`].
#[derive(Debug, Clone)]
pub struct Removal<H: RingHasher> {
    pub ring: HashRing<H>,
    pub found: bool,
}

impl<H: RingHasher> HashRing<H> {
    pub fn with_hasher(hasher: H) -> Self {
        Self {
            hasher,
            points: BTreeSet::new(),
            members: BTreeMap::new(),
        }
    }

    pub fn hasher(&self) -> &H {
        &self.hasher
    }

    pub fn is_empty(&self) -> bool {
        self.members.is_empty()
    }

    pub fn member_count(&self) -> usize {
        self.members.len()
    }

    pub fn point_count(&self) -> usize {
        self.points.len()
    }

    pub fn contains(&self, member_id: &str) -> bool {
        self.members.contains_key(member_id)
    }

    pub fn members(&self) -> impl Iterator<Item = RingMember> + '_ {
        self.members
            .iter()
            .map(|(id, w)| RingMember::new(id.to_string(), *w))
    }

    pub fn member_ids(&self) -> impl Iterator<Item = &str> + '_ {
        self.members.keys().map(|k| &**k)
    }

    /// Positions of all points, in ring order.
    pub fn points(&self) -> impl Iterator<Item = (u64, &str)> + '_ {
        self.points.iter().map(|(p, m)| (*p, &**m))
    }

    pub fn point_position(&self, member_id: &str, index: u32) -> u64 {
        self.hasher.hash(format!("{member_id}:{index}").as_bytes())
    }

    /// Adds `member` in place. Re-inserting with the same weight is a no-op.
    pub fn insert(&mut self, member: &RingMember) -> Result<(), RingError> {
        if member.weight == 0 {
            return Err(RingError::ZeroWeight);
        }
        if member.member_id.is_empty() || member.member_id.contains(['\n', ',']) {
            return Err(RingError::BadMemberId(member.member_id.clone()));
        }
        if let Some(&w) = self.members.get(member.member_id.as_str()) {
            if w == member.weight {
                return Ok(());
            }
            return Err(RingError::ConflictingWeight(member.member_id.clone(), w));
        }
        let id: Arc<str> = Arc::from(member.member_id.as_str());
        for i in 0..member.weight {
            let pos = self.point_position(&id, i);
            self.points.insert((pos, id.clone()));
        }
        self.members.insert(id, member.weight);
        Ok(())
    }

    /// Removes a member in place; returns whether it was present.
    pub fn remove(&mut self, member_id: &str) -> bool {
        let Some((id, weight)) = self.members.remove_entry(member_id) else {
            return false;
        };
        for i in 0..weight {
            let pos = self.point_position(&id, i);
            self.points.remove(&(pos, id.clone()));
        }
        true
    }

    /// Snapshot-style insert: returns a new ring, leaving `self` untouched.
    pub fn inserted(&self, member: &RingMember) -> Result<Self, RingError> {
        let mut next = self.clone();
        next.insert(member)?;
        Ok(next)
    }

    /// Snapshot-style remove. An unknown member yields an unchanged ring
    /// with `found == false`.
    pub fn removed(&self, member_id: &str) -> Removal<H> {
        let mut ring = self.clone();
        let found = ring.remove(member_id);
        Removal { ring, found }
    }

    /// Walks clockwise from the key's position collecting the first
    /// `n_distinct` distinct members.
    pub fn lookup(&self, key: &str, n_distinct: usize) -> Result<Vec<&str>, RingError> {
        if self.points.is_empty() {
            return Err(RingError::Empty);
        }
        let want = n_distinct.min(self.members.len());
        let start = self.hasher.hash(key.as_bytes());
        let mut out: Vec<&str> = Vec::with_capacity(want);
        let from = (start, Arc::<str>::from(""));
        for (_, m) in self.points.range(from..).chain(self.points.iter()) {
            if out.len() == want {
                break;
            }
            if !out.contains(&&**m) {
                out.push(m);
            }
        }
        Ok(out)
    }

    /// The single owner of `key` (first clockwise point).
    pub fn owner(&self, key: &str) -> Result<&str, RingError> {
        Ok(self.lookup(key, 1)?[0])
    }

    /// Membership as newline-separated `member_id,weight` records.
    pub fn encode_membership(&self) -> String {
        let mut out = String::new();
        for (id, w) in &self.members {
            out.push_str(id);
            out.push(',');
            out.push_str(&w.to_string());
            out.push('\n');
        }
        out
    }
}

/// Parses newline-separated `member_id,weight` records.
pub fn decode_membership(text: &str) -> Result<Vec<RingMember>, RingError> {
    text.lines()
        .filter(|l| !l.is_empty())
        .map(|line| {
            let (id, w) = line
                .rsplit_once(',')
                .ok_or_else(|| RingError::BadRecord(line.to_string()))?;
            let weight: u32 = w
                .parse()
                .map_err(|_| RingError::BadRecord(line.to_string()))?;
            if id.is_empty() || weight == 0 {
                return Err(RingError::BadRecord(line.to_string()));
            }
            Ok(RingMember::new(id, weight))
        })
        .collect()
}

/// Builds a local ring over worker indices `0..workers`.
pub fn local_ring(workers: u32) -> HashRing {
    let mut ring = HashRing::new();
    for w in 0..workers {
        ring.insert(&RingMember::new(w.to_string(), DEFAULT_WORKER_WEIGHT))
            .expect("worker ids are well formed");
    }
    ring
}

/// Per-tier worker endpoints responsible for one key.
pub type Placement = TierMap<Vec<WorkerAddr>>;

/// Resolves the workers responsible for `key` under `rv`: for every tier,
/// the first `R_i` distinct nodes on the global ring, and on each of them
/// the first `T_i` distinct workers on the local ring.
pub fn responsible_workers<H: RingHasher>(
    key: &str,
    rv: &ReplicationVector,
    global: &TierMap<HashRing<H>>,
    local: &TierMap<HashRing<H>>,
) -> Result<Placement, RingError> {
    let mut out: Placement = TierMap::default();
    for tier in Tier::ALL {
        let replicas = rv.replicas(tier) as usize;
        if replicas == 0 {
            continue;
        }
        if global[tier].is_empty() {
            return Err(RingError::EmptyTier(tier));
        }
        let nodes = global[tier].lookup(key, replicas)?;
        let workers = local[tier]
            .lookup(key, rv.threads(tier).max(1) as usize)
            .map_err(|_| RingError::EmptyTier(tier))?;
        let workers: Vec<u32> = workers
            .iter()
            .map(|w| {
                w.parse::<u32>()
                    .map_err(|_| RingError::BadMemberId(w.to_string()))
            })
            .collect::<Result<_, _>>()?;
        let slot = &mut out[tier];
        slot.reserve(nodes.len() * workers.len());
        for n in nodes {
            let node = NodeId::new(n);
            for &w in &workers {
                slot.push(WorkerAddr {
                    node: node.clone(),
                    worker: w,
                });
            }
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::metadata::default_vector;

    /// 8-bit FNV-1a fold, small enough to brute-force by hand.
    fn toy8(bytes: &[u8]) -> u64 {
        let mut h: u8 = 0x9d;
        for b in bytes {
            h ^= b;
            h = h.wrapping_mul(0x93);
        }
        h as u64
    }

    fn toy_ring(members: &[(&str, u32)]) -> HashRing<fn(&[u8]) -> u64> {
        let mut r = HashRing::with_hasher(toy8 as fn(&[u8]) -> u64);
        for (id, w) in members {
            r.insert(&RingMember::new(*id, *w)).unwrap();
        }
        r
    }

    /// Linear-scan oracle: sort every (position, member) pair and walk.
    fn brute_lookup(members: &[(&str, u32)], key: &str, n: usize) -> Vec<String> {
        let mut pts: Vec<(u64, String)> = Vec::new();
        for (id, w) in members {
            for i in 0..*w {
                pts.push((toy8(format!("{id}:{i}").as_bytes()), id.to_string()));
            }
        }
        pts.sort();
        let h = toy8(key.as_bytes());
        let start = pts.iter().position(|(p, _)| *p >= h).unwrap_or(0);
        let mut out: Vec<String> = Vec::new();
        for i in 0..pts.len() {
            let m = &pts[(start + i) % pts.len()].1;
            if !out.contains(m) {
                out.push(m.clone());
            }
        }
        out.truncate(n);
        out
    }

    #[test]
    fn xxh64_reference_vectors() {
        assert_eq!(Xxh64.hash(b""), 0xef46db3751d8e999);
        assert_eq!(Xxh64.hash(b"a"), 0xd24ec4f1a98c6e5b);
    }

    #[test]
    fn insert_creates_weight_points() {
        let r = HashRing::new()
            .inserted(&RingMember::new("n1", 100))
            .unwrap();
        assert_eq!(r.point_count(), 100);
        assert_eq!(r.member_count(), 1);
    }

    #[test]
    fn reinsert_is_idempotent_and_conflict_rejected() {
        let m = RingMember::new("n1", 10);
        let r1 = HashRing::new().inserted(&m).unwrap();
        let r2 = r1.inserted(&m).unwrap();
        assert_eq!(r1, r2);
        assert_eq!(
            r1.inserted(&RingMember::new("n1", 11)).unwrap_err(),
            RingError::ConflictingWeight("n1".into(), 10)
        );
        assert_eq!(
            HashRing::new()
                .inserted(&RingMember::new("x", 0))
                .unwrap_err(),
            RingError::ZeroWeight
        );
    }

    #[test]
    fn toy_points_match_hand_evaluation() {
        let r = toy_ring(&[("a", 2)]);
        let got: Vec<u64> = r.points().map(|(p, _)| p).collect();
        let mut want = vec![toy8(b"a:0"), toy8(b"a:1")];
        want.sort();
        assert_eq!(got, want);
        // FNV-style fold evaluated by hand for "a:0".
        let mut h: u8 = 0x9d;
        for b in b"a:0" {
            h ^= b;
            h = h.wrapping_mul(0x93);
        }
        assert!(got.contains(&(h as u64)));
    }

    #[test]
    fn remove_inverts_insert() {
        let base = toy_ring(&[("a", 3), ("b", 3)]);
        let with_c = base.inserted(&RingMember::new("c", 4)).unwrap();
        let back = with_c.removed("c");
        assert!(back.found);
        assert_eq!(back.ring, base);

        let only = toy_ring(&[("a", 5)]).removed("a");
        assert!(only.ring.is_empty());
        assert_eq!(only.ring.point_count(), 0);

        let missing = base.removed("zzz");
        assert!(!missing.found);
        assert_eq!(missing.ring, base);
    }

    #[test]
    fn lookup_matches_linear_scan() {
        let members = [("a", 3), ("b", 2), ("c", 4)];
        let r = toy_ring(&members);
        for key in ["k", "foo", "bar", "", "zz", "key-17"] {
            for n in 1..=4 {
                let got: Vec<String> = r
                    .lookup(key, n)
                    .unwrap()
                    .iter()
                    .map(|s| s.to_string())
                    .collect();
                assert_eq!(got, brute_lookup(&members, key, n), "key {key} n {n}");
            }
        }
    }

    #[test]
    fn lookup_edge_cases() {
        let r = HashRing::new()
            .inserted(&RingMember::new("solo", 4))
            .unwrap();
        assert_eq!(r.lookup("anything", 3).unwrap(), vec!["solo"]);
        let empty = HashRing::new();
        assert_eq!(empty.lookup("k", 1), Err(RingError::Empty));
        let r3 = toy_ring(&[("a", 2), ("b", 2), ("c", 2)]);
        let all = r3.lookup("k", 10).unwrap();
        assert_eq!(all.len(), 3);
        let first = r3.lookup("k", 1).unwrap();
        assert_eq!(all[0], first[0]);
    }

    #[test]
    fn removal_only_remaps_keys_of_removed_member() {
        let mut r = HashRing::new();
        for id in ["n0", "n1", "n2"] {
            r.insert(&RingMember::new(id, DEFAULT_NODE_WEIGHT)).unwrap();
        }
        let after = r.removed("n1").ring;
        for i in 0..10_000 {
            let key = format!("key{i}");
            let before = r.owner(&key).unwrap();
            let now = after.owner(&key).unwrap();
            if before != "n1" {
                assert_eq!(before, now);
            } else {
                // remapped to the next distinct member clockwise
                assert_eq!(now, r.lookup(&key, 2).unwrap()[1]);
            }
        }
    }

    #[test]
    fn membership_text_round_trip() {
        let r = toy_ring(&[("m1", 100), ("m2", 50)]);
        let text = r.encode_membership();
        assert_eq!(text, "m1,100\nm2,50\n");
        let back = decode_membership(&text).unwrap();
        assert_eq!(
            back,
            vec![RingMember::new("m1", 100), RingMember::new("m2", 50)]
        );
        assert!(decode_membership("m1\n").is_err());
        assert!(decode_membership("m1,x\n").is_err());
    }

    fn tiered(mem: &[&str], ebs: &[&str], workers: u32) -> (TierMap<HashRing>, TierMap<HashRing>) {
        let mut g: TierMap<HashRing> = TierMap::default();
        for id in mem {
            g[Tier::Mem]
                .insert(&RingMember::new(*id, DEFAULT_NODE_WEIGHT))
                .unwrap();
        }
        for id in ebs {
            g[Tier::Ebs]
                .insert(&RingMember::new(*id, DEFAULT_NODE_WEIGHT))
                .unwrap();
        }
        let l = TierMap::from_fn(|_| local_ring(workers));
        (g, l)
    }

    #[test]
    fn default_vector_places_one_mem_and_k_ebs() {
        let (g, l) = tiered(&["m0", "m1"], &["e0", "e1", "e2"], 4);
        let p = responsible_workers("user:1", &default_vector(2), &g, &l).unwrap();
        assert_eq!(p[Tier::Mem].len(), 1);
        assert_eq!(p[Tier::Ebs].len(), 2);
    }

    #[test]
    fn full_vector_covers_every_mem_worker() {
        let (g, l) = tiered(&["m0", "m1", "m2"], &["e0"], 4);
        let rv = ReplicationVector::new([3, 0], [4, 1]);
        let p = responsible_workers("k", &rv, &g, &l).unwrap();
        let mut got = p[Tier::Mem].clone();
        got.sort();
        let mut want = Vec::new();
        for n in ["m0", "m1", "m2"] {
            for w in 0..4 {
                want.push(WorkerAddr::new(n, w));
            }
        }
        assert_eq!(got, want);
    }

    #[test]
    fn two_mem_replicas_follow_clockwise_walk() {
        let members = [("m0", 2), ("m1", 2), ("m2", 2), ("m3", 2)];
        let g = TierMap([toy_ring(&members), toy_ring(&[("e0", 2)])]);
        let l = TierMap([toy_ring(&[("0", 2)]), toy_ring(&[("0", 2)])]);
        let rv = ReplicationVector::new([2, 0], [1, 1]);
        for key in ["k", "alpha", "beta"] {
            let p = responsible_workers(key, &rv, &g, &l).unwrap();
            let nodes: Vec<String> = p[Tier::Mem].iter().map(|a| a.node.to_string()).collect();
            assert_eq!(nodes, brute_lookup(&members, key, 2));
        }
    }

    #[test]
    fn empty_tier_with_replicas_is_an_error() {
        let (g, l) = tiered(&["m0"], &[], 2);
        assert_eq!(
            responsible_workers("k", &default_vector(1), &g, &l).unwrap_err(),
            RingError::EmptyTier(Tier::Ebs)
        );
        // no EBS replicas requested, so an empty EBS ring is fine
        let rv = ReplicationVector::new([1, 0], [1, 1]);
        assert!(responsible_workers("k", &rv, &g, &l).is_ok());
    }
}
