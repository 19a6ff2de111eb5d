//! Workers on real threads.
//!
//! Each worker owns its store and runs on its own thread, reading an inbox
//! and gossiping on a timer. Two transports connect them: in-process
//! channels (with optional duplication and reordering) and TCP loopback
//! sockets speaking the wire framing. Membership is fixed for the life of
//! a [`LocalCluster`]; the elastic machinery lives in the simulator.

use std::collections::{BTreeMap, BinaryHeap, HashMap};
use std::io;
use std::net::{SocketAddr, TcpListener, TcpStream};
use std::sync::atomic::{AtomicU64, AtomicUsize, Ordering};
use std::sync::{Arc, Mutex, RwLock};
use std::thread::{self, JoinHandle};
use std::time::{Duration, Instant};

use crossbeam_channel::{bounded, unbounded, Receiver, RecvTimeoutError, Sender};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::kernel::wire::{read_frame, write_frame, Frame};
use crate::kernel::{
    Broadcast, ClusterView, GossipMessage, MemStore, Origin, Outbound, PeerMessage, Request,
    Response, Worker, GOSSIP_PERIOD_MS,
};
use crate::lattice::{Clock, LwwCell, Stamper, SystemClock};
use crate::metadata::{rv_key, MetaError, ReplicationVector};
use crate::ring::{NodeId, Tier, TierMap, WorkerAddr, DEFAULT_NODE_WEIGHT};
use crate::routing::{resolve_in, AddressSet, RoutingError, RpcError, StorageRpc};

/// How long a client waits for one reply.
pub const CALL_TIMEOUT: Duration = Duration::from_secs(2);

enum Input {
    Request {
        req: Request,
        origin: Origin,
        reply: Sender<Response>,
    },
    Peer(PeerMessage),
    Bounce(Outbound),
    Quiet(Sender<bool>),
    Snapshot(Sender<Vec<(String, LwwCell)>>),
    Shutdown,
}

type Mailboxes = Arc<RwLock<HashMap<WorkerAddr, Sender<Input>>>>;

/// Carries peer messages and client requests between workers.
pub trait Transport: Send + Sync {
    fn send(&self, from: Option<&WorkerAddr>, out: Outbound);
    fn request(&self, to: &WorkerAddr, req: &Request, origin: Origin)
        -> Result<Response, RpcError>;
    /// Messages handed to the transport and not yet in an inbox.
    fn in_flight(&self) -> usize;
    /// Total messages ever handed over; lets quiescence spot new traffic.
    fn sent(&self) -> u64;
}

fn push(boxes: &Mailboxes, to: &WorkerAddr, input: Input) -> Result<(), Input> {
    let guard = boxes.read().unwrap();
    match guard.get(to) {
        Some(tx) => tx.send(input).map_err(|e| e.into_inner()),
        None => Err(input),
    }
}

/// Hands an undeliverable message back to its sender, if there was one.
fn bounce(boxes: &Mailboxes, from: Option<&WorkerAddr>, out: Outbound) {
    if let Some(from) = from {
        let _ = push(boxes, from, Input::Bounce(out));
    }
}

fn request_via(
    boxes: &Mailboxes,
    to: &WorkerAddr,
    req: &Request,
    origin: Origin,
) -> Result<Response, RpcError> {
    let (tx, rx) = bounded(1);
    let input = Input::Request {
        req: req.clone(),
        origin,
        reply: tx,
    };
    push(boxes, to, input).map_err(|_| RpcError::Unreachable(to.clone()))?;
    rx.recv_timeout(CALL_TIMEOUT).map_err(|_| RpcError::Timeout)
}

/// Fault injection for the channel transport.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ChannelFaults {
    pub dup_prob: f64,
    /// Messages are held for a uniform 0..=max delay, which reorders them.
    pub max_delay_ms: u64,
    pub seed: u64,
}

impl Default for ChannelFaults {
    fn default() -> Self {
        Self {
            dup_prob: 0.0,
            max_delay_ms: 0,
            seed: 0,
        }
    }
}

struct Delayed {
    at: Instant,
    seq: u64,
    from: Option<WorkerAddr>,
    out: Outbound,
}

impl PartialEq for Delayed {
    fn eq(&self, o: &Self) -> bool {
        (self.at, self.seq) == (o.at, o.seq)
    }
}
impl Eq for Delayed {}
impl PartialOrd for Delayed {
    fn partial_cmp(&self, o: &Self) -> Option<std::cmp::Ordering> {
        Some(self.cmp(o))
    }
}
impl Ord for Delayed {
    // min-heap on delivery time
    fn cmp(&self, o: &Self) -> std::cmp::Ordering {
        (o.at, o.seq).cmp(&(self.at, self.seq))
    }
}

pub struct ChannelTransport {
    boxes: Mailboxes,
    faults: ChannelFaults,
    rng: Mutex<ChaCha8Rng>,
    delay_tx: Mutex<Option<Sender<Delayed>>>,
    delay_thread: Mutex<Option<JoinHandle<()>>>,
    in_flight: Arc<AtomicUsize>,
    sent: AtomicU64,
    seq: AtomicU64,
}

impl ChannelTransport {
    fn new(boxes: Mailboxes, faults: ChannelFaults) -> Self {
        let in_flight = Arc::new(AtomicUsize::new(0));
        let (tx, rx) = unbounded::<Delayed>();
        let b = boxes.clone();
        let inf = in_flight.clone();
        let handle = thread::Builder::new()
            .name("net-delay".into())
            .spawn(move || delay_loop(rx, b, inf))
            .expect("spawn delay thread");
        Self {
            boxes,
            rng: Mutex::new(ChaCha8Rng::seed_from_u64(faults.seed)),
            faults,
            delay_tx: Mutex::new(Some(tx)),
            delay_thread: Mutex::new(Some(handle)),
            in_flight,
            sent: AtomicU64::new(0),
            seq: AtomicU64::new(0),
        }
    }

    fn deliver_now(&self, from: Option<&WorkerAddr>, out: Outbound) {
        if let Err(Input::Peer(msg)) = push(&self.boxes, &out.to, Input::Peer(out.msg.clone())) {
            bounce(&self.boxes, from, Outbound { to: out.to, msg });
        }
        self.in_flight.fetch_sub(1, Ordering::SeqCst);
    }

    fn stop(&self) {
        self.delay_tx.lock().unwrap().take();
        if let Some(h) = self.delay_thread.lock().unwrap().take() {
            let _ = h.join();
        }
    }
}

fn delay_loop(rx: Receiver<Delayed>, boxes: Mailboxes, in_flight: Arc<AtomicUsize>) {
    let mut heap = BinaryHeap::new();
    let mut open = true;
    while open || !heap.is_empty() {
        let now = Instant::now();
        while heap.peek().is_some_and(|d: &Delayed| d.at <= now) {
            let d = heap.pop().unwrap();
            if let Err(Input::Peer(msg)) = push(&boxes, &d.out.to, Input::Peer(d.out.msg.clone())) {
                bounce(&boxes, d.from.as_ref(), Outbound { to: d.out.to, msg });
            }
            in_flight.fetch_sub(1, Ordering::SeqCst);
        }
        if !open {
            if let Some(d) = heap.peek() {
                thread::sleep(d.at.saturating_duration_since(Instant::now()));
            }
            continue;
        }
        let got = match heap.peek() {
            Some(d) => rx.recv_timeout(d.at.saturating_duration_since(now)),
            None => rx.recv().map_err(|_| RecvTimeoutError::Disconnected),
        };
        match got {
            Ok(d) => heap.push(d),
            Err(RecvTimeoutError::Timeout) => {}
            Err(RecvTimeoutError::Disconnected) => open = false,
        }
    }
}

impl Transport for ChannelTransport {
    fn send(&self, from: Option<&WorkerAddr>, out: Outbound) {
        let (copies, delays) = {
            let mut rng = self.rng.lock().unwrap();
            let copies =
                if self.faults.dup_prob > 0.0 && rng.random_bool(self.faults.dup_prob.min(1.0)) {
                    2
                } else {
                    1
                };
            let delays: Vec<u64> = (0..copies)
                .map(|_| rng.random_range(0..=self.faults.max_delay_ms))
                .collect();
            (copies, delays)
        };
        self.in_flight.fetch_add(copies, Ordering::SeqCst);
        self.sent.fetch_add(copies as u64, Ordering::SeqCst);
        for d in delays {
            if d == 0 {
                self.deliver_now(from, out.clone());
                continue;
            }
            let item = Delayed {
                at: Instant::now() + Duration::from_millis(d),
                seq: self.seq.fetch_add(1, Ordering::Relaxed),
                from: from.cloned(),
                out: out.clone(),
            };
            let tx = self.delay_tx.lock().unwrap();
            match tx.as_ref().map(|t| t.send(item)) {
                Some(Ok(())) => {}
                Some(Err(e)) => {
                    drop(tx);
                    self.deliver_now(from, e.into_inner().out);
                }
                None => {
                    drop(tx);
                    self.deliver_now(from, out.clone());
                }
            }
        }
    }

    fn request(
        &self,
        to: &WorkerAddr,
        req: &Request,
        origin: Origin,
    ) -> Result<Response, RpcError> {
        request_via(&self.boxes, to, req, origin)
    }

    fn in_flight(&self) -> usize {
        self.in_flight.load(Ordering::SeqCst)
    }

    fn sent(&self) -> u64 {
        self.sent.load(Ordering::SeqCst)
    }
}

/// One listener per node on 127.0.0.1; peer frames and requests share it.
pub struct SocketTransport {
    boxes: Mailboxes,
    book: HashMap<NodeId, SocketAddr>,
    peers: Mutex<HashMap<NodeId, TcpStream>>,
    clients: Mutex<HashMap<NodeId, TcpStream>>,
    in_flight: Arc<AtomicUsize>,
    sent: AtomicU64,
    next_id: AtomicU64,
}

impl SocketTransport {
    fn bind(boxes: Mailboxes, nodes: &[NodeId]) -> io::Result<(Self, Vec<JoinHandle<()>>)> {
        let in_flight = Arc::new(AtomicUsize::new(0));
        let mut book = HashMap::new();
        let mut threads = Vec::new();
        for node in nodes {
            let listener = TcpListener::bind("127.0.0.1:0")?;
            book.insert(node.clone(), listener.local_addr()?);
            let (b, inf, id) = (boxes.clone(), in_flight.clone(), node.clone());
            threads.push(
                thread::Builder::new()
                    .name(format!("listen-{node}"))
                    .spawn(move || accept_loop(listener, id, b, inf))?,
            );
        }
        Ok((
            Self {
                boxes,
                book,
                peers: Mutex::new(HashMap::new()),
                clients: Mutex::new(HashMap::new()),
                in_flight,
                sent: AtomicU64::new(0),
                next_id: AtomicU64::new(1),
            },
            threads,
        ))
    }

    fn connect(&self, node: &NodeId) -> io::Result<TcpStream> {
        let addr = self.book.get(node).ok_or_else(|| {
            io::Error::new(io::ErrorKind::NotFound, format!("no address for {node}"))
        })?;
        let s = TcpStream::connect(addr)?;
        s.set_nodelay(true)?;
        Ok(s)
    }

    fn write_peer(&self, out: &Outbound) -> io::Result<()> {
        let frame = Frame::Peer {
            worker: out.to.worker,
            msg: out.msg.clone(),
        };
        let mut peers = self.peers.lock().unwrap();
        if !peers.contains_key(&out.to.node) {
            let s = self.connect(&out.to.node)?;
            peers.insert(out.to.node.clone(), s);
        }
        let stream = peers.get_mut(&out.to.node).unwrap();
        let r = write_frame(stream, &frame);
        if r.is_err() {
            peers.remove(&out.to.node);
        }
        r
    }

    /// Closes listeners by poking them after the mailboxes are gone.
    fn stop(&self) {
        self.peers.lock().unwrap().clear();
        self.clients.lock().unwrap().clear();
        for addr in self.book.values() {
            let _ = TcpStream::connect(addr);
        }
    }
}

fn accept_loop(listener: TcpListener, node: NodeId, boxes: Mailboxes, in_flight: Arc<AtomicUsize>) {
    for conn in listener.incoming() {
        let Ok(stream) = conn else { continue };
        // shut down once none of this node's workers remain
        let gone = !boxes.read().unwrap().keys().any(|a| a.node == node);
        if gone {
            return;
        }
        let _ = stream.set_nodelay(true);
        let (b, inf, n) = (boxes.clone(), in_flight.clone(), node.clone());
        let _ = thread::Builder::new()
            .name(format!("conn-{node}"))
            .spawn(move || serve_conn(stream, n, b, inf));
    }
}

fn serve_conn(stream: TcpStream, node: NodeId, boxes: Mailboxes, in_flight: Arc<AtomicUsize>) {
    let Ok(mut writer) = stream.try_clone() else {
        return;
    };
    let mut reader = io::BufReader::new(stream);
    loop {
        let frame = match read_frame(&mut reader) {
            Ok(Some(f)) => f,
            Ok(None) => return,
            Err(e) => {
                log::warn!("dropping connection to {node}: {e}");
                return;
            }
        };
        match frame {
            Frame::Peer { worker, msg } => {
                let to = WorkerAddr::new(node.clone(), worker);
                if push(&boxes, &to, Input::Peer(msg)).is_err() {
                    log::debug!("{to} gone; peer frame dropped");
                }
                in_flight.fetch_sub(1, Ordering::SeqCst);
            }
            Frame::Request {
                id,
                worker,
                origin,
                req,
            } => {
                let to = WorkerAddr::new(node.clone(), worker);
                let resp = request_via(&boxes, &to, &req, origin)
                    .unwrap_or_else(|e| Response::error(e.to_string()));
                if write_frame(&mut writer, &Frame::Response { id, resp }).is_err() {
                    return;
                }
            }
            Frame::Response { .. } => {
                log::warn!("unexpected response frame at {node}");
            }
        }
    }
}

impl Transport for SocketTransport {
    fn send(&self, from: Option<&WorkerAddr>, out: Outbound) {
        self.in_flight.fetch_add(1, Ordering::SeqCst);
        self.sent.fetch_add(1, Ordering::SeqCst);
        if let Err(e) = self.write_peer(&out) {
            log::debug!("send to {} failed: {e}", out.to);
            self.in_flight.fetch_sub(1, Ordering::SeqCst);
            bounce(&self.boxes, from, out);
        }
    }

    fn request(
        &self,
        to: &WorkerAddr,
        req: &Request,
        origin: Origin,
    ) -> Result<Response, RpcError> {
        let id = self.next_id.fetch_add(1, Ordering::Relaxed);
        let frame = Frame::Request {
            id,
            worker: to.worker,
            origin,
            req: req.clone(),
        };
        let unreachable = |_| RpcError::Unreachable(to.clone());
        let mut clients = self.clients.lock().unwrap();
        if !clients.contains_key(&to.node) {
            let s = self.connect(&to.node).map_err(unreachable)?;
            s.set_read_timeout(Some(CALL_TIMEOUT))
                .map_err(unreachable)?;
            clients.insert(to.node.clone(), s);
        }
        let stream = clients.get_mut(&to.node).unwrap();
        let result =
            write_frame(stream, &frame)
                .map_err(unreachable)
                .and_then(|_| match read_frame(stream) {
                    Ok(Some(Frame::Response { id: got, resp })) if got == id => Ok(resp),
                    Ok(_) => Err(RpcError::Unreachable(to.clone())),
                    Err(_) => Err(RpcError::Timeout),
                });
        if result.is_err() {
            clients.remove(&to.node);
        }
        result
    }

    fn in_flight(&self) -> usize {
        self.in_flight.load(Ordering::SeqCst)
    }

    fn sent(&self) -> u64 {
        self.sent.load(Ordering::SeqCst)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum TransportKind {
    Channel(ChannelFaults),
    Socket,
}

#[derive(Debug, Clone)]
pub struct RuntimeConfig {
    pub k: u32,
    pub nodes: TierMap<u32>,
    pub workers_per_node: TierMap<u32>,
    pub gossip_period_ms: u64,
    pub transport: TransportKind,
}

impl Default for RuntimeConfig {
    fn default() -> Self {
        Self {
            k: 2,
            nodes: TierMap([1, 3]),
            workers_per_node: TierMap([2, 2]),
            gossip_period_ms: GOSSIP_PERIOD_MS,
            transport: TransportKind::Channel(ChannelFaults::default()),
        }
    }
}

fn worker_loop(mut w: Worker, rx: Receiver<Input>, net: Arc<dyn Transport>, period: Duration) {
    let addr = w.addr().clone();
    let mut next_gossip = Instant::now() + period;
    loop {
        let wait = next_gossip.saturating_duration_since(Instant::now());
        match rx.recv_timeout(wait) {
            Ok(Input::Request { req, origin, reply }) => {
                let resp = w.handle_request(&req, origin, SystemClock.now_ms());
                for o in w.take_outbox() {
                    net.send(Some(&addr), o);
                }
                let _ = reply.send(resp);
            }
            Ok(Input::Peer(msg)) => {
                for o in w.on_peer_message(&msg) {
                    net.send(Some(&addr), o);
                }
            }
            Ok(Input::Bounce(o)) => w.on_delivery_failure(&o),
            Ok(Input::Quiet(tx)) => {
                let _ = tx.send(w.is_quiet());
            }
            Ok(Input::Snapshot(tx)) => {
                let _ = tx.send(w.snapshot());
            }
            Ok(Input::Shutdown) | Err(RecvTimeoutError::Disconnected) => return,
            Err(RecvTimeoutError::Timeout) => {}
        }
        if Instant::now() >= next_gossip {
            for o in w.gossip_round() {
                net.send(Some(&addr), o);
            }
            next_gossip = Instant::now() + period;
        }
    }
}

enum Net {
    Channel(Arc<ChannelTransport>),
    Socket(Arc<SocketTransport>),
}

/// A fixed set of threaded workers plus the routing view clients use.
pub struct LocalCluster {
    cfg: RuntimeConfig,
    view: Arc<RwLock<ClusterView>>,
    boxes: Mailboxes,
    net: Net,
    threads: Vec<JoinHandle<()>>,
    stamper: Mutex<Stamper>,
    addrs: Vec<WorkerAddr>,
}

impl LocalCluster {
    pub fn start(cfg: RuntimeConfig) -> io::Result<Self> {
        let mut view = ClusterView::new(cfg.k, cfg.workers_per_node);
        let mut ids = Vec::new();
        for tier in Tier::ALL {
            let prefix = if tier == Tier::Mem { "m" } else { "e" };
            for i in 0..cfg.nodes[tier] {
                let id = NodeId::new(format!("{prefix}{i}"));
                view.add_node(&id, tier, DEFAULT_NODE_WEIGHT);
                ids.push((id, tier));
            }
        }
        let boxes: Mailboxes = Arc::new(RwLock::new(HashMap::new()));
        let mut threads = Vec::new();
        let (net, transport): (Net, Arc<dyn Transport>) = match cfg.transport {
            TransportKind::Channel(f) => {
                let t = Arc::new(ChannelTransport::new(boxes.clone(), f));
                (Net::Channel(t.clone()), t)
            }
            TransportKind::Socket => {
                let nodes: Vec<NodeId> = ids.iter().map(|(id, _)| id.clone()).collect();
                let (t, listeners) = SocketTransport::bind(boxes.clone(), &nodes)?;
                threads.extend(listeners);
                let t = Arc::new(t);
                (Net::Socket(t.clone()), t)
            }
        };
        let period = Duration::from_millis(cfg.gossip_period_ms.max(1));
        let mut seq = 1;
        let mut addrs = Vec::new();
        for (id, tier) in &ids {
            for w in 0..cfg.workers_per_node[*tier] {
                let addr = WorkerAddr::new(id.clone(), w);
                let worker = Worker::new(
                    addr.clone(),
                    *tier,
                    seq,
                    view.clone(),
                    Box::new(MemStore::new()),
                );
                seq += 1;
                let (tx, rx) = unbounded();
                boxes.write().unwrap().insert(addr.clone(), tx);
                let net = transport.clone();
                threads.push(
                    thread::Builder::new()
                        .name(format!("worker-{addr}"))
                        .spawn(move || worker_loop(worker, rx, net, period))?,
                );
                addrs.push(addr);
            }
        }
        Ok(Self {
            cfg,
            view: Arc::new(RwLock::new(view)),
            boxes,
            net,
            threads,
            stamper: Mutex::new(Stamper::new(0)),
            addrs,
        })
    }

    pub fn config(&self) -> &RuntimeConfig {
        &self.cfg
    }

    pub fn workers(&self) -> &[WorkerAddr] {
        &self.addrs
    }

    pub fn view(&self) -> ClusterView {
        self.view.read().unwrap().clone()
    }

    fn transport(&self) -> Arc<dyn Transport> {
        match &self.net {
            Net::Channel(t) => t.clone(),
            Net::Socket(t) => t.clone(),
        }
    }

    /// Client-side handle; cheap to clone, one per client thread.
    pub fn rpc(&self) -> LocalRpc {
        LocalRpc {
            view: self.view.clone(),
            net: self.transport(),
            started: Instant::now(),
        }
    }

    /// Installs a replication vector everywhere and records it in metadata.
    pub fn set_rv(&self, key: &str, rv: ReplicationVector) -> Result<(), MetaError> {
        let counts = self.view.read().unwrap().node_counts();
        rv.validate(self.cfg.k, &counts, &self.cfg.workers_per_node)?;
        let mk = rv_key(key)?;
        let ts = self.stamper.lock().unwrap().stamp(SystemClock.now_ms());
        let cell = LwwCell::new(ts, rv.encode().into_bytes());
        let owners = {
            let mut view = self.view.write().unwrap();
            view.set_rv(key, ts, rv);
            view.placement(&mk).map_err(|e| MetaError::BadRecord {
                what: "vector",
                line: e.to_string(),
            })?
        };
        let net = self.transport();
        let gossip = PeerMessage::Gossip(GossipMessage {
            sender: WorkerAddr::new(NodeId::new("control"), 0),
            entries: vec![(mk, cell.clone())],
            handoff: false,
        });
        for to in owners.0.iter().flatten() {
            net.send(
                None,
                Outbound {
                    to: to.clone(),
                    msg: gossip.clone(),
                },
            );
        }
        let b = PeerMessage::Broadcast(Broadcast::RvUpdate {
            key: key.to_string(),
            cell,
        });
        for to in &self.addrs {
            net.send(
                None,
                Outbound {
                    to: to.clone(),
                    msg: b.clone(),
                },
            );
        }
        Ok(())
    }

    fn ask<T>(&self, to: &WorkerAddr, make: impl FnOnce(Sender<T>) -> Input) -> Option<T> {
        let (tx, rx) = bounded(1);
        push(&self.boxes, to, make(tx)).ok()?;
        rx.recv_timeout(CALL_TIMEOUT).ok()
    }

    /// Waits until no message is moving and no worker has anything left to
    /// gossip. Returns false on timeout.
    pub fn quiesce(&self, limit: Duration) -> bool {
        let net = self.transport();
        let end = Instant::now() + limit;
        while Instant::now() < end {
            let before = net.sent();
            if net.in_flight() == 0 {
                let all_quiet = self
                    .addrs
                    .iter()
                    .all(|a| self.ask(a, Input::Quiet).unwrap_or(false));
                if all_quiet && net.in_flight() == 0 && net.sent() == before {
                    return true;
                }
            }
            thread::sleep(Duration::from_millis(self.cfg.gossip_period_ms.max(1)));
        }
        false
    }

    /// Every worker's store contents.
    pub fn snapshot(&self) -> BTreeMap<WorkerAddr, Vec<(String, LwwCell)>> {
        self.addrs
            .iter()
            .filter_map(|a| Some((a.clone(), self.ask(a, Input::Snapshot)?)))
            .collect()
    }

    /// All copies per key.
    pub fn replicas(&self) -> BTreeMap<String, Vec<(WorkerAddr, LwwCell)>> {
        let mut out: BTreeMap<String, Vec<(WorkerAddr, LwwCell)>> = BTreeMap::new();
        for (addr, cells) in self.snapshot() {
            for (k, c) in cells {
                out.entry(k).or_default().push((addr.clone(), c));
            }
        }
        out
    }

    pub fn shutdown(mut self) {
        self.stop();
    }

    fn stop(&mut self) {
        let boxes: Vec<Sender<Input>> = self
            .boxes
            .write()
            .unwrap()
            .drain()
            .map(|(_, tx)| tx)
            .collect();
        for tx in &boxes {
            let _ = tx.send(Input::Shutdown);
        }
        match &self.net {
            Net::Channel(t) => t.stop(),
            Net::Socket(t) => t.stop(),
        }
        for h in self.threads.drain(..) {
            let _ = h.join();
        }
    }
}

impl Drop for LocalCluster {
    fn drop(&mut self) {
        self.stop();
    }
}

/// [`StorageRpc`] over a running [`LocalCluster`]. Routing uses the
/// cluster's shared view directly.
#[derive(Clone)]
pub struct LocalRpc {
    view: Arc<RwLock<ClusterView>>,
    net: Arc<dyn Transport>,
    started: Instant,
}

impl StorageRpc for LocalRpc {
    fn resolve(&mut self, key: &str, _fresh: bool) -> Result<AddressSet, RoutingError> {
        resolve_in(&self.view.read().unwrap(), key)
    }

    fn call(
        &mut self,
        to: &WorkerAddr,
        req: &Request,
        origin: Origin,
    ) -> Result<Response, RpcError> {
        self.net.request(to, req, origin)
    }

    fn now_ms(&self) -> u64 {
        self.started.elapsed().as_millis() as u64
    }

    fn backoff(&mut self, ms: u64) {
        thread::sleep(Duration::from_millis(ms));
    }
}
