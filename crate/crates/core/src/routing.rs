//! Address resolution and the client library.
//!
//! Routing nodes hold only soft state: a cluster view rebuilt from ring and
//! replication metadata stored in the cluster. Clients cache addresses and
//! the last cell they saw per key, so reads never go backwards in time.

use std::collections::{HashMap, HashSet};

use thiserror::Error;

use crate::kernel::{Broadcast, ClusterView, Origin, Request, Response, Status};
use crate::lattice::LwwCell;
use crate::metadata::{
    check_user_key, decode_membership_cell, is_meta_key, ring_key, rv_key, LatencyReport,
    MetaAccess, MetaError, ReplicationVector,
};
use crate::ring::{RingError, Tier, TierMap, WorkerAddr};

/// Refresh cadence for routing metadata, in monitoring windows.
pub const REFRESH_WINDOWS: u32 = 5;

/// Endpoints serving one key. Only one tier is ever populated: memory when
/// the key has a memory replica, disk otherwise.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AddressSet {
    pub key: String,
    pub endpoints: TierMap<Vec<WorkerAddr>>,
    /// Version of the view it was computed from.
    pub version: u64,
}

impl AddressSet {
    pub fn tier(&self) -> Tier {
        if self.endpoints[Tier::Mem].is_empty() {
            Tier::Ebs
        } else {
            Tier::Mem
        }
    }

    pub fn addresses(&self) -> &[WorkerAddr] {
        &self.endpoints[self.tier()]
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum RoutingError {
    #[error(transparent)]
    Ring(#[from] RingError),
    #[error("no endpoints for {0}")]
    NoEndpoints(String),
}

/// Resolves `key` against a view, applying the memory-first rule.
pub fn resolve_in(view: &ClusterView, key: &str) -> Result<AddressSet, RoutingError> {
    let (tier, addrs) = view.preferred(key)?;
    if addrs.is_empty() {
        return Err(RoutingError::NoEndpoints(key.to_string()));
    }
    let mut endpoints = TierMap::<Vec<WorkerAddr>>::default();
    endpoints[tier] = addrs;
    Ok(AddressSet {
        key: key.to_string(),
        endpoints,
        version: view.version(),
    })
}

/// A routing node. Everything it knows can be thrown away and rebuilt from
/// metadata.
#[derive(Debug, Clone)]
pub struct RoutingNode {
    view: ClusterView,
    /// Keys whose vector has been looked up since the last refresh.
    fetched: HashSet<String>,
    windows: u32,
    resolves: u64,
}

impl RoutingNode {
    pub fn new(k: u32, workers_per_node: TierMap<u32>) -> Self {
        Self {
            view: ClusterView::new(k, workers_per_node),
            fetched: HashSet::new(),
            windows: 0,
            resolves: 0,
        }
    }

    /// A node started from nothing but the metadata in the cluster.
    pub fn bootstrap(k: u32, workers_per_node: TierMap<u32>, meta: &mut dyn MetaAccess) -> Self {
        let mut r = Self::new(k, workers_per_node);
        r.refresh(meta);
        r
    }

    pub fn view(&self) -> &ClusterView {
        &self.view
    }

    pub fn resolve_count(&self) -> u64 {
        self.resolves
    }

    /// Rereads ring membership and forgets cached vector lookups.
    pub fn refresh(&mut self, meta: &mut dyn MetaAccess) {
        for tier in Tier::ALL {
            if let Some(cell) = meta.read_meta(&ring_key(tier)) {
                match decode_membership_cell(&cell) {
                    Ok(members) => {
                        self.view.set_members(tier, &members);
                    }
                    Err(e) => log::warn!("bad ring metadata for {}: {e}", tier.name()),
                }
            }
        }
        self.fetched.clear();
    }

    fn fetch_rv(&mut self, key: &str, meta: &mut dyn MetaAccess) {
        if is_meta_key(key) {
            return;
        }
        if let Ok(mk) = rv_key(key) {
            if let Some(cell) = meta.read_meta(&mk) {
                if let Ok(rv) = ReplicationVector::decode(cell.payload()) {
                    self.view.set_rv(key, cell.ts(), rv);
                }
            }
        }
        self.fetched.insert(key.to_string());
    }

    pub fn resolve(
        &mut self,
        key: &str,
        meta: &mut dyn MetaAccess,
    ) -> Result<AddressSet, RoutingError> {
        self.resolves += 1;
        if !self.fetched.contains(key) {
            self.fetch_rv(key, meta);
        }
        resolve_in(&self.view, key)
    }

    /// Resolution after a client saw a redirect: membership and the key's
    /// vector are reread first.
    pub fn resolve_fresh(
        &mut self,
        key: &str,
        meta: &mut dyn MetaAccess,
    ) -> Result<AddressSet, RoutingError> {
        for tier in Tier::ALL {
            if let Some(cell) = meta.read_meta(&ring_key(tier)) {
                if let Ok(members) = decode_membership_cell(&cell) {
                    self.view.set_members(tier, &members);
                }
            }
        }
        self.fetch_rv(key, meta);
        self.resolves += 1;
        resolve_in(&self.view, key)
    }

    pub fn on_broadcast(&mut self, b: &Broadcast) {
        self.view.apply(b);
    }

    /// Called once per monitoring window; refreshes every few windows.
    pub fn on_window(&mut self, meta: &mut dyn MetaAccess) {
        self.windows += 1;
        if self.windows >= REFRESH_WINDOWS {
            self.windows = 0;
            self.refresh(meta);
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum RpcError {
    #[error("{0} unreachable")]
    Unreachable(WorkerAddr),
    #[error("timed out")]
    Timeout,
}

/// What the client library needs from its host.
pub trait StorageRpc {
    /// Asks a routing node for `key`'s endpoints. `fresh` forces the routing
    /// node to reread metadata first.
    fn resolve(&mut self, key: &str, fresh: bool) -> Result<AddressSet, RoutingError>;
    fn call(
        &mut self,
        to: &WorkerAddr,
        req: &Request,
        origin: Origin,
    ) -> Result<Response, RpcError>;
    fn now_ms(&self) -> u64;
    /// Waits before a retry.
    fn backoff(&mut self, ms: u64);
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ClientError {
    #[error(transparent)]
    Key(#[from] MetaError),
    #[error("unavailable after {attempts} attempts: {last}")]
    Unavailable { attempts: u32, last: String },
    #[error("server error: {0}")]
    Server(String),
}

#[derive(Debug, Clone, Copy)]
pub struct RetryPolicy {
    pub attempts: u32,
    pub first_backoff_ms: u64,
}

impl Default for RetryPolicy {
    fn default() -> Self {
        Self {
            attempts: 4,
            first_backoff_ms: crate::kernel::GOSSIP_PERIOD_MS,
        }
    }
}

/// Client handle. Use from one context at a time.
pub struct Client<R: StorageRpc> {
    id: String,
    rpc: R,
    addrs: HashMap<String, AddressSet>,
    values: HashMap<String, LwwCell>,
    retry: RetryPolicy,
    next: usize,
    resolves: u64,
    latency_sum_ms: f64,
    latency_n: u64,
}

impl<R: StorageRpc> Client<R> {
    pub fn new(id: impl Into<String>, rpc: R) -> Self {
        Self {
            id: id.into(),
            rpc,
            addrs: HashMap::new(),
            values: HashMap::new(),
            retry: RetryPolicy::default(),
            next: 0,
            resolves: 0,
            latency_sum_ms: 0.0,
            latency_n: 0,
        }
    }

    pub fn with_retry(mut self, retry: RetryPolicy) -> Self {
        self.retry = retry;
        self
    }

    pub fn id(&self) -> &str {
        &self.id
    }

    pub fn rpc(&self) -> &R {
        &self.rpc
    }

    pub fn rpc_mut(&mut self) -> &mut R {
        &mut self.rpc
    }

    pub fn into_rpc(self) -> R {
        self.rpc
    }

    /// Resolve calls issued so far.
    pub fn resolve_count(&self) -> u64 {
        self.resolves
    }

    pub fn cached_addresses(&self, key: &str) -> Option<&AddressSet> {
        self.addrs.get(key)
    }

    pub fn cached_value(&self, key: &str) -> Option<&LwwCell> {
        self.values.get(key)
    }

    /// Latest value, or `None` for a missing or deleted key.
    pub fn get(&mut self, key: &str) -> Result<Option<Vec<u8>>, ClientError> {
        Ok(self
            .get_cell(key)?
            .filter(|c| !c.is_tombstone())
            .map(|c| c.payload().to_vec()))
    }

    /// The merged cell for `key`, tombstones included.
    pub fn get_cell(&mut self, key: &str) -> Result<Option<LwwCell>, ClientError> {
        check_user_key(key)?;
        let resp = self.execute(Request::get(key))?;
        Ok(match resp.cell {
            Some(cell) => Some(self.observe(key, &cell)),
            None => self.values.get(key).cloned(),
        })
    }

    /// Writes `value`; returns the acknowledged cell.
    pub fn put(&mut self, key: &str, value: impl Into<Vec<u8>>) -> Result<LwwCell, ClientError> {
        check_user_key(key)?;
        let resp = self.execute(Request::put(key, value))?;
        let cell = resp
            .cell
            .ok_or_else(|| ClientError::Server("PUT acknowledged without a cell".into()))?;
        self.observe(key, &cell);
        Ok(cell)
    }

    pub fn delete(&mut self, key: &str) -> Result<LwwCell, ClientError> {
        self.put(key, Vec::new())
    }

    fn observe(&mut self, key: &str, cell: &LwwCell) -> LwwCell {
        let slot = self
            .values
            .entry(key.to_string())
            .or_insert_with(|| cell.clone());
        slot.merge_from(cell);
        slot.clone()
    }

    fn execute(&mut self, req: Request) -> Result<Response, ClientError> {
        let start = self.rpc.now_ms();
        let mut backoff = self.retry.first_backoff_ms;
        let mut fresh = false;
        let mut last = String::from("no attempt made");
        for attempt in 0..self.retry.attempts {
            if attempt > 0 {
                self.rpc.backoff(backoff);
                backoff = backoff.saturating_mul(2);
            }
            let set = match self.addrs.get(&req.key) {
                Some(s) if !fresh => s.clone(),
                _ => {
                    self.resolves += 1;
                    match self.rpc.resolve(&req.key, fresh) {
                        Ok(s) => {
                            self.addrs.insert(req.key.clone(), s.clone());
                            s
                        }
                        Err(e) => {
                            last = e.to_string();
                            fresh = true;
                            continue;
                        }
                    }
                }
            };
            let addrs = set.addresses();
            let to = addrs[self.next % addrs.len()].clone();
            self.next = self.next.wrapping_add(1);
            match self.rpc.call(&to, &req, Origin::Client) {
                Ok(resp) => match resp.status {
                    Status::Ok | Status::KeyMissing => {
                        self.record_latency(start);
                        return Ok(resp);
                    }
                    Status::Redirect => {
                        self.addrs.remove(&req.key);
                        fresh = true;
                        last = format!("redirected by {to}");
                    }
                    Status::Error => {
                        return Err(ClientError::Server(resp.error.unwrap_or_default()));
                    }
                },
                Err(e) => {
                    self.addrs.remove(&req.key);
                    fresh = true;
                    last = e.to_string();
                }
            }
        }
        Err(ClientError::Unavailable {
            attempts: self.retry.attempts,
            last,
        })
    }

    fn record_latency(&mut self, start: u64) {
        let elapsed = self.rpc.now_ms().saturating_sub(start) as f64;
        self.latency_sum_ms += elapsed;
        self.latency_n += 1;
    }

    /// Drains this window's latency observations into a report.
    pub fn take_latency(&mut self, epoch: u64) -> Option<LatencyReport> {
        if self.latency_n == 0 {
            return None;
        }
        // sub-millisecond clocks read zero; report a floor so the mean stays positive
        let mean = (self.latency_sum_ms / self.latency_n as f64).max(0.001);
        let r = LatencyReport {
            client_id: self.id.clone(),
            epoch,
            mean_latency_ms: mean,
            requests: self.latency_n,
        };
        self.latency_sum_ms = 0.0;
        self.latency_n = 0;
        Some(r)
    }

    /// Drops every cached address; values stay cached.
    pub fn clear_addresses(&mut self) {
        self.addrs.clear();
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kernel::{MemStore, OpKind, Worker};
    use crate::lattice::Timestamp;
    use crate::metadata::{default_vector, encode_membership_cell};
    use crate::ring::{NodeId, DEFAULT_NODE_WEIGHT};
    use std::collections::BTreeMap;

    fn view(mem: &[&str], ebs: &[&str]) -> ClusterView {
        let mut v = ClusterView::new(1, TierMap([1, 1]));
        for n in mem {
            v.add_node(&NodeId::new(n), Tier::Mem, DEFAULT_NODE_WEIGHT);
        }
        for n in ebs {
            v.add_node(&NodeId::new(n), Tier::Ebs, DEFAULT_NODE_WEIGHT);
        }
        v
    }

    #[test]
    fn memory_first_resolution() {
        let mut v = view(&["m0", "m1"], &["e0", "e1", "e2"]);
        let s = resolve_in(&v, "a").unwrap();
        assert_eq!(s.tier(), Tier::Mem);
        assert!(s.endpoints[Tier::Ebs].is_empty());
        v.set_rv(
            "a",
            Timestamp::new(1, 0, 0),
            ReplicationVector::new([0, 2], [1, 1]),
        );
        let s = resolve_in(&v, "a").unwrap();
        assert_eq!(s.tier(), Tier::Ebs);
        assert_eq!(s.addresses().len(), 2);
    }

    #[test]
    fn unknown_key_uses_default_placement() {
        let v = view(&["m0", "m1"], &["e0", "e1", "e2"]);
        let s = resolve_in(&v, "never-written").unwrap();
        let expect = crate::ring::responsible_workers(
            "never-written",
            &default_vector(1),
            &TierMap::from_fn(|t| v.global(t).clone()),
            &TierMap::from_fn(|_| crate::ring::local_ring(1)),
        )
        .unwrap();
        assert_eq!(s.endpoints[Tier::Mem], expect[Tier::Mem]);
    }

    /// In-process metadata backed by a plain map.
    #[derive(Default)]
    struct MapMeta(BTreeMap<String, LwwCell>, u64);

    impl MetaAccess for MapMeta {
        fn read_meta(&mut self, key: &str) -> Option<LwwCell> {
            self.0.get(key).cloned()
        }
        fn write_meta(&mut self, key: &str, payload: Vec<u8>) -> Option<LwwCell> {
            self.1 += 1;
            let c = LwwCell::new(Timestamp::new(self.1, 0, 0), payload);
            self.0.insert(key.to_string(), c.clone());
            Some(c)
        }
    }

    #[test]
    fn restarted_router_rebuilds_from_metadata() {
        let v = view(&["m0", "m1"], &["e0", "e1"]);
        let mut meta = MapMeta::default();
        for tier in Tier::ALL {
            let c = encode_membership_cell(v.global(tier));
            meta.write_meta(&ring_key(tier), c);
        }
        let hot = ReplicationVector::new([2, 1], [1, 1]);
        meta.write_meta(&rv_key("hot").unwrap(), hot.encode().into_bytes());
        let mut r = RoutingNode::bootstrap(1, TierMap([1, 1]), &mut meta);
        let s = r.resolve("hot", &mut meta).unwrap();
        assert_eq!(s.addresses().len(), 2);
        assert_eq!(r.view().node_counts(), TierMap([2, 2]));
    }

    /// Single-threaded host over a handful of workers, with call counting.
    struct Local {
        router: RoutingNode,
        meta: MapMeta,
        workers: BTreeMap<WorkerAddr, Worker>,
        clock: u64,
        stale: Option<LwwCell>,
    }

    impl StorageRpc for Local {
        fn resolve(&mut self, key: &str, fresh: bool) -> Result<AddressSet, RoutingError> {
            if fresh {
                self.router.resolve_fresh(key, &mut self.meta)
            } else {
                self.router.resolve(key, &mut self.meta)
            }
        }
        fn call(
            &mut self,
            to: &WorkerAddr,
            req: &Request,
            origin: Origin,
        ) -> Result<Response, RpcError> {
            self.clock += 1;
            if let (Some(old), OpKind::Get) = (&self.stale, req.op) {
                return Ok(Response::ok(old.clone()));
            }
            let w = self
                .workers
                .get_mut(to)
                .ok_or_else(|| RpcError::Unreachable(to.clone()))?;
            Ok(w.handle_request(req, origin, self.clock))
        }
        fn now_ms(&self) -> u64 {
            self.clock
        }
        fn backoff(&mut self, ms: u64) {
            self.clock += ms;
        }
    }

    fn local(nodes: &[&str]) -> Local {
        let v = view(nodes, &[]);
        let mut meta = MapMeta::default();
        meta.write_meta(
            &ring_key(Tier::Mem),
            encode_membership_cell(v.global(Tier::Mem)),
        );
        let mut v0 = ClusterView::new(0, TierMap([1, 1]));
        for n in nodes {
            v0.add_node(&NodeId::new(n), Tier::Mem, DEFAULT_NODE_WEIGHT);
        }
        let workers = nodes
            .iter()
            .enumerate()
            .map(|(i, n)| {
                let a = WorkerAddr::new(*n, 0);
                let w = Worker::new(
                    a.clone(),
                    Tier::Mem,
                    i as u32,
                    v0.clone(),
                    Box::new(MemStore::new()),
                );
                (a, w)
            })
            .collect();
        Local {
            router: RoutingNode::bootstrap(0, TierMap([1, 1]), &mut meta),
            meta,
            workers,
            clock: 0,
            stale: None,
        }
    }

    #[test]
    fn second_get_uses_the_cache() {
        let mut c = Client::new("c0", local(&["m0", "m1"]));
        c.put("x", "1").unwrap();
        let before = c.resolve_count();
        assert_eq!(c.get("x").unwrap().as_deref(), Some(&b"1"[..]));
        assert_eq!(c.resolve_count(), before);
    }

    #[test]
    fn moved_key_costs_one_reresolve() {
        let mut host = local(&["m0", "m1"]);
        let key = (0..)
            .map(|i| format!("k{i}"))
            .find(|k| {
                resolve_in(host.router.view(), k).unwrap().addresses()[0]
                    .node
                    .as_str()
                    == "m0"
            })
            .unwrap();
        // key moves to m1: rewrite membership so only m1 remains
        let mut v1 = ClusterView::new(0, TierMap([1, 1]));
        v1.add_node(&NodeId::new("m1"), Tier::Mem, DEFAULT_NODE_WEIGHT);
        let mut c = Client::new("c0", {
            host.workers
                .get_mut(&WorkerAddr::new("m1", 0))
                .unwrap()
                .replace_view(v1.clone());
            host
        });
        c.put(&key, "old").unwrap();
        let before = c.resolve_count();
        assert_eq!(before, 1);
        {
            let h = c.rpc_mut();
            h.workers
                .get_mut(&WorkerAddr::new("m0", 0))
                .unwrap()
                .replace_view(v1.clone());
            h.meta.write_meta(
                &ring_key(Tier::Mem),
                encode_membership_cell(v1.global(Tier::Mem)),
            );
        }
        c.put(&key, "new").unwrap();
        assert_eq!(c.resolve_count(), before + 1);
        assert_eq!(
            c.cached_addresses(&key).unwrap().addresses()[0]
                .node
                .as_str(),
            "m1"
        );
    }

    #[test]
    fn stale_replica_never_rolls_back_a_read() {
        let mut c = Client::new("c0", local(&["m0"]));
        let first = c.put("x", "v1").unwrap();
        c.put("x", "v2").unwrap();
        c.rpc_mut().stale = Some(first);
        assert_eq!(c.get("x").unwrap().as_deref(), Some(&b"v2"[..]));
    }

    #[test]
    fn reserved_prefix_is_rejected_locally() {
        let mut c = Client::new("c0", local(&["m0"]));
        let key = rv_key("x").unwrap();
        assert!(matches!(c.put(&key, "v"), Err(ClientError::Key(_))));
        assert_eq!(c.resolve_count(), 0);
    }

    #[test]
    fn deleted_key_reads_as_none() {
        let mut c = Client::new("c0", local(&["m0"]));
        c.put("x", "v").unwrap();
        c.delete("x").unwrap();
        assert_eq!(c.get("x").unwrap(), None);
    }
}
