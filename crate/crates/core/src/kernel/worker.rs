//! One storage worker as a sans-IO state machine.
//!
//! The worker never performs I/O on peers itself: requests and peer messages
//! are fed in, and outbound messages are returned for whatever transport
//! hosts it. That keeps the same code driving the deterministic simulator,
//! the threaded runtime and the socket transport.

use std::collections::{BTreeMap, BTreeSet};

use crate::lattice::{LwwCell, Stamper, Timestamp};
use crate::metadata::{is_meta_key, parse_meta_key, KeyAccessRecord, MetaKind, ReplicationVector};
use crate::ring::{Placement, Tier, WorkerAddr};

use super::message::{
    Broadcast, GossipAck, GossipMessage, OpKind, Origin, Outbound, PeerMessage, Request, Response,
};
use super::store::TierStore;
use super::view::ClusterView;

/// Per-window counters a worker hands to its node for publication.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct WindowCounters {
    /// Requests served per user key.
    pub accesses: BTreeMap<String, u64>,
    /// Requests served plus gossip entries merged.
    pub ops: u64,
}

impl WindowCounters {
    pub fn records(&self) -> Vec<KeyAccessRecord> {
        self.accesses
            .iter()
            .map(|(k, c)| KeyAccessRecord {
                key: k.clone(),
                count: *c,
            })
            .collect()
    }
}

pub struct Worker {
    addr: WorkerAddr,
    tier: Tier,
    view: ClusterView,
    stamper: Stamper,
    store: Box<dyn TierStore>,
    dirty: BTreeSet<String>,
    /// Keys this worker no longer owns, with the new owners that have
    /// acknowledged receipt so far.
    handoff: BTreeMap<String, BTreeSet<WorkerAddr>>,
    window: WindowCounters,
    departing: bool,
    /// Pushes of fresh client writes, sent before the write is acknowledged.
    outbox: Vec<Outbound>,
}

impl std::fmt::Debug for Worker {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Worker")
            .field("addr", &self.addr)
            .field("tier", &self.tier)
            .field("keys", &self.store.len())
            .field("dirty", &self.dirty.len())
            .field("handoff", &self.handoff.len())
            .finish()
    }
}

impl Worker {
    /// `node_seq` is the timestamp tiebreak for writes stamped here and must
    /// be unique per worker across the cluster.
    pub fn new(
        addr: WorkerAddr,
        tier: Tier,
        node_seq: u32,
        view: ClusterView,
        store: Box<dyn TierStore>,
    ) -> Self {
        Self {
            addr,
            tier,
            view,
            stamper: Stamper::new(node_seq),
            store,
            dirty: BTreeSet::new(),
            handoff: BTreeMap::new(),
            window: WindowCounters::default(),
            departing: false,
            outbox: Vec::new(),
        }
    }

    pub fn addr(&self) -> &WorkerAddr {
        &self.addr
    }

    pub fn tier(&self) -> Tier {
        self.tier
    }

    pub fn view(&self) -> &ClusterView {
        &self.view
    }

    pub fn store(&self) -> &dyn TierStore {
        self.store.as_ref()
    }

    pub fn store_mut(&mut self) -> &mut dyn TierStore {
        self.store.as_mut()
    }

    pub fn get_local(&mut self, key: &str) -> Option<LwwCell> {
        self.store.get(key)
    }

    pub fn dirty_len(&self) -> usize {
        self.dirty.len()
    }

    pub fn handoff_len(&self) -> usize {
        self.handoff.len()
    }

    pub fn is_departing(&self) -> bool {
        self.departing
    }

    /// A departing worker is drained once every key it held has been
    /// acknowledged by its new owners.
    pub fn is_drained(&self) -> bool {
        self.departing && self.handoff.is_empty() && self.dirty.is_empty() && self.outbox.is_empty()
    }

    /// Nothing left to gossip.
    pub fn is_quiet(&self) -> bool {
        self.handoff.is_empty() && self.dirty.is_empty() && self.outbox.is_empty()
    }

    pub fn take_window(&mut self) -> WindowCounters {
        std::mem::take(&mut self.window)
    }

    pub fn handle_request(&mut self, req: &Request, origin: Origin, now_ms: u64) -> Response {
        if req.key.is_empty() {
            return Response::error("empty key");
        }
        if origin == Origin::Client && is_meta_key(&req.key) {
            return Response::error("reserved key prefix");
        }
        if req.op == OpKind::Put && req.payload.is_none() {
            return Response::error("PUT without payload");
        }
        if self.departing || !self.view.is_responsible(&req.key, &self.addr) {
            return match self.view.preferred(&req.key) {
                Ok((_, addrs)) if !addrs.is_empty() => Response::redirect(addrs),
                Ok(_) => Response::error("no owners"),
                Err(e) => Response::error(e.to_string()),
            };
        }
        self.window.ops += 1;
        if !is_meta_key(&req.key) {
            *self.window.accesses.entry(req.key.clone()).or_insert(0) += 1;
        }
        match req.op {
            OpKind::Get => match self.store.get(&req.key) {
                Some(cell) => Response::ok(cell),
                None => Response::missing(),
            },
            OpKind::Put => {
                let ts = match req.timestamp {
                    Some(ts) => ts,
                    None => self.stamper.stamp(now_ms),
                };
                let cell = LwwCell::new(ts, req.payload.clone().unwrap_or_default());
                if self.merge_local(&req.key, &cell) {
                    self.push_now(&req.key);
                }
                Response::ok(cell)
            }
        }
    }

    /// Queues the key for every other replica right away, so a crash after
    /// the ack cannot take the only copy with it. Falls back to the next
    /// round when there is no placement.
    fn push_now(&mut self, key: &str) {
        let (Some(cell), Ok(placement)) = (self.store.get(key), self.view.placement(key)) else {
            self.dirty.insert(key.to_string());
            return;
        };
        for to in placement.0.iter().flatten().filter(|a| **a != self.addr) {
            self.outbox.push(Outbound {
                to: to.clone(),
                msg: PeerMessage::Gossip(GossipMessage {
                    sender: self.addr.clone(),
                    entries: vec![(key.to_string(), cell.clone())],
                    handoff: false,
                }),
            });
        }
    }

    /// Messages that must leave before the last response is released.
    pub fn take_outbox(&mut self) -> Vec<Outbound> {
        std::mem::take(&mut self.outbox)
    }

    /// Merges into the store and applies vector metadata to the view.
    /// Returns true on change.
    fn merge_local(&mut self, key: &str, cell: &LwwCell) -> bool {
        let changed = match self.store.get(key) {
            Some(mut cur) => {
                if cur.merge_from(cell) {
                    self.store.put(key, &cur);
                    true
                } else {
                    false
                }
            }
            None => {
                self.store.put(key, cell);
                true
            }
        };
        if changed {
            self.apply_meta_value(key, cell);
        }
        changed
    }

    fn apply_meta_value(&mut self, key: &str, cell: &LwwCell) {
        if let Ok((MetaKind::Rv, parts)) = parse_meta_key(key) {
            if let Some(user_key) = parts.into_iter().next() {
                if let Ok(rv) = ReplicationVector::decode(cell.payload()) {
                    self.update_rv(&user_key, cell.ts(), rv);
                }
            }
        }
    }

    fn update_rv(&mut self, key: &str, ts: Timestamp, rv: ReplicationVector) {
        let old = self.view.placement(key).ok();
        if self.view.set_rv(key, ts, rv) && self.store.get(key).is_some() {
            self.rebalance_key(key, old.as_ref());
        }
    }

    /// Called after the view changed for `key`. Pushes the key to new
    /// replicas, or starts handing it off when this worker lost it.
    fn rebalance_key(&mut self, key: &str, old: Option<&Placement>) {
        let new = self.view.placement(key).ok();
        if old == new.as_ref() {
            return;
        }
        if self.view.is_responsible(key, &self.addr) && !self.departing {
            self.handoff.remove(key);
            self.dirty.insert(key.to_string());
        } else {
            self.dirty.remove(key);
            self.handoff.entry(key.to_string()).or_default();
        }
    }

    /// Builds this round's gossip. Dirty keys go to every other replica;
    /// handoff keys are resent to owners that have not acknowledged yet.
    pub fn gossip_round(&mut self) -> Vec<Outbound> {
        let mut out = self.take_outbox();
        let mut plain: BTreeMap<WorkerAddr, Vec<(String, LwwCell)>> = BTreeMap::new();
        let mut handed: BTreeMap<WorkerAddr, Vec<(String, LwwCell)>> = BTreeMap::new();

        for key in std::mem::take(&mut self.dirty) {
            let Some(cell) = self.store.get(&key) else {
                continue;
            };
            let Ok(placement) = self.view.placement(&key) else {
                // No owner tier right now; retry next round.
                self.dirty.insert(key);
                continue;
            };
            if !contains(&placement, &self.addr) || self.departing {
                self.handoff.entry(key).or_default();
                continue;
            }
            for to in placement.0.iter().flatten() {
                if *to != self.addr {
                    plain
                        .entry(to.clone())
                        .or_default()
                        .push((key.clone(), cell.clone()));
                }
            }
        }

        let keys: Vec<String> = self.handoff.keys().cloned().collect();
        for key in keys {
            let Some(cell) = self.store.get(&key) else {
                self.handoff.remove(&key);
                continue;
            };
            let Ok(placement) = self.view.placement(&key) else {
                continue;
            };
            if contains(&placement, &self.addr) && !self.departing {
                self.handoff.remove(&key);
                self.dirty.insert(key);
                continue;
            }
            let acked = &self.handoff[&key];
            let pending: Vec<&WorkerAddr> = placement
                .0
                .iter()
                .flatten()
                .filter(|a| **a != self.addr && !acked.contains(*a))
                .collect();
            if pending.is_empty() {
                self.drop_key(&key);
                continue;
            }
            for to in pending {
                handed
                    .entry(to.clone())
                    .or_default()
                    .push((key.clone(), cell.clone()));
            }
        }

        for (handoff, batch) in [(false, plain), (true, handed)] {
            for (to, entries) in batch {
                out.push(Outbound {
                    to,
                    msg: PeerMessage::Gossip(GossipMessage {
                        sender: self.addr.clone(),
                        entries,
                        handoff,
                    }),
                });
            }
        }
        out
    }

    fn drop_key(&mut self, key: &str) {
        self.handoff.remove(key);
        self.dirty.remove(key);
        self.store.remove(key);
    }

    /// Merges a peer's gossip. Entries for keys this worker does not own
    /// are kept and handed onward rather than discarded.
    pub fn on_gossip(&mut self, msg: &GossipMessage) -> Vec<Outbound> {
        let mut acks = Vec::new();
        for (key, cell) in &msg.entries {
            self.window.ops += 1;
            let changed = self.merge_local(key, cell);
            let owns = self.view.is_responsible(key, &self.addr) && !self.departing;
            // a newer cell restarts acknowledgment tracking
            if !owns && (changed || !self.handoff.contains_key(key)) {
                self.handoff.insert(key.clone(), BTreeSet::new());
            }
            if msg.handoff {
                acks.push((key.clone(), cell.ts()));
            }
        }
        if acks.is_empty() {
            return Vec::new();
        }
        vec![Outbound {
            to: msg.sender.clone(),
            msg: PeerMessage::Ack(GossipAck {
                sender: self.addr.clone(),
                entries: acks,
            }),
        }]
    }

    pub fn on_ack(&mut self, ack: &GossipAck) {
        for (key, ts) in &ack.entries {
            let Some(acked) = self.handoff.get_mut(key) else {
                continue;
            };
            let Some(cell) = self.store.get(key) else {
                continue;
            };
            if cell.ts() <= *ts {
                acked.insert(ack.sender.clone());
            }
            self.try_finish_handoff(key);
        }
    }

    fn try_finish_handoff(&mut self, key: &str) {
        let Ok(placement) = self.view.placement(key) else {
            return;
        };
        let Some(acked) = self.handoff.get(key) else {
            return;
        };
        if contains(&placement, &self.addr) && !self.departing {
            return;
        }
        let done = placement
            .0
            .iter()
            .flatten()
            .all(|a| *a == self.addr || acked.contains(a));
        if done {
            self.drop_key(key);
        }
    }

    pub fn on_peer_message(&mut self, msg: &PeerMessage) -> Vec<Outbound> {
        match msg {
            PeerMessage::Gossip(g) => self.on_gossip(g),
            PeerMessage::Ack(a) => {
                self.on_ack(a);
                Vec::new()
            }
            PeerMessage::Broadcast(b) => {
                self.on_broadcast(b);
                Vec::new()
            }
        }
    }

    pub fn on_broadcast(&mut self, b: &Broadcast) {
        if let Broadcast::RvUpdate { key, cell } = b {
            if let Ok(rv) = ReplicationVector::decode(cell.payload()) {
                self.update_rv(key, cell.ts(), rv);
            }
            return;
        }
        let before = self.view.clone();
        if self.view.apply(b) {
            self.rebalance_all(&before);
        }
    }

    /// Replaces the view wholesale (metadata refresh) and rebalances.
    pub fn replace_view(&mut self, view: ClusterView) {
        let before = std::mem::replace(&mut self.view, view);
        self.rebalance_all(&before);
    }

    fn rebalance_all(&mut self, before: &ClusterView) {
        for key in self.store.keys() {
            let old = before.placement(&key).ok();
            self.rebalance_key(&key, old.as_ref());
        }
    }

    /// Leaves the cluster: stops owning anything and hands every key to its
    /// new owners. The worker is finished once [`Worker::is_drained`].
    pub fn depart(&mut self) {
        let node = self.addr.node.clone();
        self.view.remove_node(&node);
        self.departing = true;
        for key in self.store.keys() {
            self.dirty.remove(&key);
            self.handoff.entry(key).or_default();
        }
    }

    /// A transport could not deliver `out`; its keys are retried next round.
    pub fn on_delivery_failure(&mut self, out: &Outbound) {
        if let PeerMessage::Gossip(g) = &out.msg {
            if !g.handoff {
                for (key, _) in &g.entries {
                    self.dirty.insert(key.clone());
                }
            }
        }
    }

    /// Store contents sorted by key.
    pub fn snapshot(&mut self) -> Vec<(String, LwwCell)> {
        let mut keys = self.store.keys();
        keys.sort();
        keys.into_iter()
            .filter_map(|k| self.store.get(&k).map(|c| (k, c)))
            .collect()
    }
}

fn contains(p: &Placement, addr: &WorkerAddr) -> bool {
    p.0.iter().any(|v| v.contains(addr))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kernel::message::Status;
    use crate::kernel::store::MemStore;
    use crate::metadata::rv_key;
    use crate::ring::{NodeId, TierMap, DEFAULT_NODE_WEIGHT};

    fn view(mem: &[&str], ebs: &[&str], k: u32) -> ClusterView {
        let mut v = ClusterView::new(k, TierMap([1, 1]));
        for n in mem {
            v.add_node(&NodeId::new(n), Tier::Mem, DEFAULT_NODE_WEIGHT);
        }
        for n in ebs {
            v.add_node(&NodeId::new(n), Tier::Ebs, DEFAULT_NODE_WEIGHT);
        }
        v
    }

    fn worker(node: &str, tier: Tier, seq: u32, v: &ClusterView) -> Worker {
        Worker::new(
            WorkerAddr::new(node, 0),
            tier,
            seq,
            v.clone(),
            Box::new(MemStore::new()),
        )
    }

    #[test]
    fn put_then_get_reads_own_write() {
        let v = view(&["m0"], &[], 0);
        let mut w = worker("m0", Tier::Mem, 1, &v);
        let r = w.handle_request(&Request::put("k", "v"), Origin::Client, 10);
        assert_eq!(r.status, Status::Ok);
        let r = w.handle_request(&Request::get("k"), Origin::Client, 11);
        assert_eq!(r.status, Status::Ok);
        assert_eq!(r.cell.unwrap().payload(), b"v");
        assert_eq!(w.take_window().accesses["k"], 2);
    }

    #[test]
    fn absent_key_is_missing() {
        let v = view(&["m0"], &[], 0);
        let mut w = worker("m0", Tier::Mem, 1, &v);
        let r = w.handle_request(&Request::get("nope"), Origin::Client, 0);
        assert_eq!(r.status, Status::KeyMissing);
    }

    #[test]
    fn foreign_key_redirects_to_owner() {
        let v = view(&["m0", "m1"], &[], 0);
        let key = (0..)
            .map(|i| format!("key{i}"))
            .find(|k| v.placement(k).unwrap()[Tier::Mem][0].node.as_str() == "m1")
            .unwrap();
        let mut w = worker("m0", Tier::Mem, 1, &v);
        let r = w.handle_request(&Request::get(key.as_str()), Origin::Client, 0);
        assert_eq!(r.status, Status::Redirect);
        assert_eq!(r.addresses, v.placement(&key).unwrap()[Tier::Mem]);
    }

    #[test]
    fn reserved_keys_and_bad_puts_are_errors() {
        let v = view(&["m0"], &[], 0);
        let mut w = worker("m0", Tier::Mem, 1, &v);
        let key = rv_key("x").unwrap();
        let r = w.handle_request(&Request::get(key.as_str()), Origin::Client, 0);
        assert_eq!(r.status, Status::Error);
        let mut put = Request::put("k", "v");
        put.payload = None;
        assert_eq!(
            w.handle_request(&put, Origin::Client, 0).status,
            Status::Error
        );
    }

    #[test]
    fn empty_dirty_set_sends_nothing() {
        let v = view(&["m0", "m1"], &[], 0);
        let mut w = worker("m0", Tier::Mem, 1, &v);
        assert!(w.gossip_round().is_empty());
    }

    #[test]
    fn two_node_placement_sends_one_entry() {
        let mut v = view(&["m0", "m1"], &[], 0);
        v.set_rv(
            "k",
            Timestamp::new(1, 0, 0),
            ReplicationVector::new([2, 0], [1, 1]),
        );
        let mut w = worker("m0", Tier::Mem, 1, &v);
        w.handle_request(&Request::put("k", "v"), Origin::Client, 5);
        let out = w.gossip_round();
        let entries: usize = out
            .iter()
            .map(|o| match &o.msg {
                PeerMessage::Gossip(g) => g.entries.len(),
                _ => 0,
            })
            .sum();
        assert_eq!(entries, 1);
        assert_eq!(out[0].to, WorkerAddr::new("m1", 0));
        assert!(w.gossip_round().is_empty());
    }

    #[test]
    fn client_write_is_pushed_before_the_ack() {
        let mut v = view(&["m0", "m1"], &[], 0);
        v.set_rv(
            "k",
            Timestamp::new(1, 0, 0),
            ReplicationVector::new([2, 0], [1, 1]),
        );
        let mut w = worker("m0", Tier::Mem, 1, &v);
        w.handle_request(&Request::put("k", "v"), Origin::Client, 5);
        assert!(!w.is_quiet());
        let out = w.take_outbox();
        assert_eq!(out.len(), 1);
        assert_eq!(out[0].to, WorkerAddr::new("m1", 0));
        // already sent; the round has nothing left
        assert!(w.gossip_round().is_empty());
        assert!(w.is_quiet());
        // a bounce falls back to the periodic path
        w.on_delivery_failure(&out[0]);
        assert_eq!(w.gossip_round().len(), 1);
    }

    #[test]
    fn duplicate_gossip_is_idempotent() {
        let mut v = view(&["m0", "m1"], &[], 0);
        v.set_rv(
            "k",
            Timestamp::new(1, 0, 0),
            ReplicationVector::new([2, 0], [1, 1]),
        );
        let mut a = worker("m0", Tier::Mem, 1, &v);
        let mut b = worker("m1", Tier::Mem, 2, &v);
        a.handle_request(&Request::put("k", "v"), Origin::Client, 5);
        let out = a.gossip_round();
        let PeerMessage::Gossip(g) = &out[0].msg else {
            panic!()
        };
        b.on_gossip(g);
        let once = b.snapshot();
        b.on_gossip(g);
        assert_eq!(b.snapshot(), once);
        // no echo back to the sender
        assert!(b.gossip_round().is_empty());
    }

    #[test]
    fn depart_hands_off_and_drains_after_acks() {
        let v = view(&["m0", "m1"], &[], 0);
        let mut a = worker("m0", Tier::Mem, 1, &v);
        let mut b = worker("m1", Tier::Mem, 2, &v);
        let mine: Vec<String> = (0..20)
            .map(|i| format!("k{i}"))
            .filter(|k| v.is_responsible(k, a.addr()))
            .collect();
        for k in &mine {
            a.handle_request(&Request::put(k.as_str(), "v"), Origin::Client, 1);
        }
        a.gossip_round();
        a.depart();
        b.on_broadcast(&Broadcast::Depart {
            node: NodeId::new("m0"),
            tier: Tier::Mem,
        });
        assert!(!a.is_drained());
        let out = a.gossip_round();
        assert_eq!(out.len(), 1);
        let acks = b.on_peer_message(&out[0].msg);
        for ack in acks {
            a.on_peer_message(&ack.msg);
        }
        assert!(a.is_drained());
        assert_eq!(a.store().len(), 0);
        for k in &mine {
            assert!(b.get_local(k).is_some());
        }
    }

    #[test]
    fn same_vector_update_is_silent() {
        let v = view(&["m0", "m1"], &[], 0);
        let mut w = worker("m0", Tier::Mem, 1, &v);
        let key = (0..)
            .map(|i| format!("k{i}"))
            .find(|k| v.is_responsible(k, w.addr()))
            .unwrap();
        w.handle_request(&Request::put(key.as_str(), "v"), Origin::Client, 1);
        w.gossip_round();
        let same = crate::metadata::default_vector(0);
        w.on_broadcast(&Broadcast::RvUpdate {
            key: key.clone(),
            cell: LwwCell::new(Timestamp::new(9, 0, 0), same.encode().into_bytes()),
        });
        assert!(w.gossip_round().is_empty());
    }
}
