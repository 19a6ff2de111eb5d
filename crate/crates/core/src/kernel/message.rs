use crate::lattice::{LwwCell, Timestamp};
use crate::ring::{NodeId, Tier, WorkerAddr};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum OpKind {
    Get,
    Put,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Request {
    pub op: OpKind,
    pub key: String,
    /// Required for PUT, ignored for GET. An empty payload is a delete.
    pub payload: Option<Vec<u8>>,
    /// Caller-supplied stamp; the worker stamps the write when absent.
    pub timestamp: Option<Timestamp>,
}

impl Request {
    pub fn get(key: impl Into<String>) -> Self {
        Self {
            op: OpKind::Get,
            key: key.into(),
            payload: None,
            timestamp: None,
        }
    }

    pub fn put(key: impl Into<String>, payload: impl Into<Vec<u8>>) -> Self {
        Self {
            op: OpKind::Put,
            key: key.into(),
            payload: Some(payload.into()),
            timestamp: None,
        }
    }

    pub fn with_timestamp(mut self, ts: Timestamp) -> Self {
        self.timestamp = Some(ts);
        self
    }
}

/// Who issued a request. Only internal components may touch metadata keys.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Origin {
    Client,
    Internal,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Status {
    Ok,
    KeyMissing,
    Redirect,
    Error,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Response {
    pub status: Status,
    pub cell: Option<LwwCell>,
    /// Fresh owner addresses; non-empty on `Redirect`.
    pub addresses: Vec<WorkerAddr>,
    pub error: Option<String>,
}

impl Response {
    pub fn ok(cell: LwwCell) -> Self {
        Self {
            status: Status::Ok,
            cell: Some(cell),
            addresses: Vec::new(),
            error: None,
        }
    }

    pub fn missing() -> Self {
        Self {
            status: Status::KeyMissing,
            cell: None,
            addresses: Vec::new(),
            error: None,
        }
    }

    pub fn redirect(addresses: Vec<WorkerAddr>) -> Self {
        Self {
            status: Status::Redirect,
            cell: None,
            addresses,
            error: None,
        }
    }

    pub fn error(msg: impl Into<String>) -> Self {
        Self {
            status: Status::Error,
            cell: None,
            addresses: Vec::new(),
            error: Some(msg.into()),
        }
    }
}

/// A batch of full cells pushed from one worker to another replica.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct GossipMessage {
    pub sender: WorkerAddr,
    pub entries: Vec<(String, LwwCell)>,
    /// Set when the sender is handing keys off and waits for acknowledgment
    /// before dropping them.
    pub handoff: bool,
}

/// Acknowledges handoff entries; each timestamp is the one received.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct GossipAck {
    pub sender: WorkerAddr,
    pub entries: Vec<(String, Timestamp)>,
}

/// Cluster-wide notices delivered to every storage worker and routing node.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Broadcast {
    Join {
        node: NodeId,
        tier: Tier,
        weight: u32,
    },
    Depart {
        node: NodeId,
        tier: Tier,
    },
    Failed {
        node: NodeId,
        tier: Tier,
    },
    /// New replication vector for `key`; the cell payload is the encoded vector.
    RvUpdate {
        key: String,
        cell: LwwCell,
    },
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum PeerMessage {
    Gossip(GossipMessage),
    Ack(GossipAck),
    Broadcast(Broadcast),
}

/// A message a worker wants delivered.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Outbound {
    pub to: WorkerAddr,
    pub msg: PeerMessage,
}
