//! The storage node: shared-nothing workers with private stores, request
//! handling with redirection, gossip, join/depart handoff and per-tier
//! persistence.

pub mod message;
pub mod store;
pub mod view;
pub mod wire;
pub mod worker;

pub use message::{
    Broadcast, GossipAck, GossipMessage, OpKind, Origin, Outbound, PeerMessage, Request, Response,
    Status,
};
pub use store::{FileStore, MemStore, TierStore};
pub use view::ClusterView;
pub use worker::{WindowCounters, Worker};

/// Default gossip period in milliseconds.
pub const GOSSIP_PERIOD_MS: u64 = 100;
