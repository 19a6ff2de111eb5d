//! Stream framing for the socket transport.
//!
//! A frame is a 1-byte kind, a 4-byte big-endian body length and the body.
//! Cells inside bodies use the canonical lattice encoding; strings and byte
//! strings are prefixed with a 4-byte big-endian length.

use std::io::{self, Read, Write};

use thiserror::Error;

use crate::lattice::{CodecError, LwwCell, Timestamp};
use crate::ring::{NodeId, Tier, WorkerAddr};

use super::message::{
    Broadcast, GossipAck, GossipMessage, OpKind, Origin, PeerMessage, Request, Response, Status,
};

pub const KIND_REQUEST: u8 = 1;
pub const KIND_RESPONSE: u8 = 2;
pub const KIND_GOSSIP: u8 = 3;
pub const KIND_BROADCAST: u8 = 4;

/// Frames larger than this are rejected rather than allocated.
pub const MAX_BODY: usize = 64 << 20;

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Frame {
    Request {
        id: u64,
        worker: u32,
        origin: Origin,
        req: Request,
    },
    Response {
        id: u64,
        resp: Response,
    },
    /// Peer traffic addressed to one worker of the receiving node.
    Peer {
        worker: u32,
        msg: PeerMessage,
    },
}

#[derive(Debug, Error)]
pub enum WireError {
    #[error("unknown frame kind {0}")]
    UnknownKind(u8),
    #[error("unknown {what} tag {tag}")]
    UnknownTag { what: &'static str, tag: u8 },
    #[error("frame body ended early")]
    Short,
    #[error("{0} trailing bytes in frame body")]
    Trailing(usize),
    #[error("frame body of {0} bytes exceeds limit")]
    TooLarge(usize),
    #[error("invalid utf-8 in string field")]
    Utf8,
    #[error(transparent)]
    Cell(#[from] CodecError),
    #[error(transparent)]
    Io(#[from] io::Error),
}

struct Enc(Vec<u8>);

impl Enc {
    fn u8(&mut self, v: u8) {
        self.0.push(v);
    }
    fn u32(&mut self, v: u32) {
        self.0.extend_from_slice(&v.to_be_bytes());
    }
    fn u64(&mut self, v: u64) {
        self.0.extend_from_slice(&v.to_be_bytes());
    }
    fn bytes(&mut self, b: &[u8]) {
        self.u32(b.len() as u32);
        self.0.extend_from_slice(b);
    }
    fn str(&mut self, s: &str) {
        self.bytes(s.as_bytes());
    }
    fn ts(&mut self, ts: Timestamp) {
        self.u64(ts.clock_ms);
        self.u32(ts.node_seq);
        self.u32(ts.op_seq);
    }
    fn cell(&mut self, c: &LwwCell) {
        c.encode_into(&mut self.0);
    }
    fn addr(&mut self, a: &WorkerAddr) {
        self.str(a.node.as_str());
        self.u32(a.worker);
    }
    fn tier(&mut self, t: Tier) {
        self.u8(t.index() as u8);
    }
}

struct Dec<'a>(&'a [u8]);

impl<'a> Dec<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], WireError> {
        if self.0.len() < n {
            return Err(WireError::Short);
        }
        let (head, rest) = self.0.split_at(n);
        self.0 = rest;
        Ok(head)
    }
    fn u8(&mut self) -> Result<u8, WireError> {
        Ok(self.take(1)?[0])
    }
    fn u32(&mut self) -> Result<u32, WireError> {
        Ok(u32::from_be_bytes(self.take(4)?.try_into().unwrap()))
    }
    fn u64(&mut self) -> Result<u64, WireError> {
        Ok(u64::from_be_bytes(self.take(8)?.try_into().unwrap()))
    }
    fn bytes(&mut self) -> Result<&'a [u8], WireError> {
        let n = self.u32()? as usize;
        self.take(n)
    }
    fn str(&mut self) -> Result<String, WireError> {
        String::from_utf8(self.bytes()?.to_vec()).map_err(|_| WireError::Utf8)
    }
    fn ts(&mut self) -> Result<Timestamp, WireError> {
        Ok(Timestamp::new(self.u64()?, self.u32()?, self.u32()?))
    }
    fn cell(&mut self) -> Result<LwwCell, WireError> {
        let (cell, used) = LwwCell::decode_prefix(self.0)?;
        self.0 = &self.0[used..];
        Ok(cell)
    }
    fn addr(&mut self) -> Result<WorkerAddr, WireError> {
        let node = self.str()?;
        Ok(WorkerAddr::new(NodeId::new(node), self.u32()?))
    }
    fn tier(&mut self) -> Result<Tier, WireError> {
        match self.u8()? {
            0 => Ok(Tier::Mem),
            1 => Ok(Tier::Ebs),
            tag => Err(WireError::UnknownTag { what: "tier", tag }),
        }
    }
    fn finish(self) -> Result<(), WireError> {
        if self.0.is_empty() {
            Ok(())
        } else {
            Err(WireError::Trailing(self.0.len()))
        }
    }
}

fn status_tag(s: Status) -> u8 {
    match s {
        Status::Ok => 0,
        Status::KeyMissing => 1,
        Status::Redirect => 2,
        Status::Error => 3,
    }
}

impl Frame {
    pub fn kind(&self) -> u8 {
        match self {
            Frame::Request { .. } => KIND_REQUEST,
            Frame::Response { .. } => KIND_RESPONSE,
            Frame::Peer {
                msg: PeerMessage::Broadcast(_),
                ..
            } => KIND_BROADCAST,
            Frame::Peer { .. } => KIND_GOSSIP,
        }
    }

    fn body(&self) -> Vec<u8> {
        let mut e = Enc(Vec::new());
        match self {
            Frame::Request {
                id,
                worker,
                origin,
                req,
            } => {
                e.u64(*id);
                e.u32(*worker);
                e.u8(matches!(origin, Origin::Internal) as u8);
                e.u8(matches!(req.op, OpKind::Put) as u8);
                e.str(&req.key);
                match &req.payload {
                    Some(p) => {
                        e.u8(1);
                        e.bytes(p);
                    }
                    None => e.u8(0),
                }
                match req.timestamp {
                    Some(ts) => {
                        e.u8(1);
                        e.ts(ts);
                    }
                    None => e.u8(0),
                }
            }
            Frame::Response { id, resp } => {
                e.u64(*id);
                e.u8(status_tag(resp.status));
                match &resp.cell {
                    Some(c) => {
                        e.u8(1);
                        e.cell(c);
                    }
                    None => e.u8(0),
                }
                e.u32(resp.addresses.len() as u32);
                for a in &resp.addresses {
                    e.addr(a);
                }
                match &resp.error {
                    Some(m) => {
                        e.u8(1);
                        e.str(m);
                    }
                    None => e.u8(0),
                }
            }
            Frame::Peer { worker, msg } => {
                e.u32(*worker);
                match msg {
                    PeerMessage::Gossip(g) => {
                        e.u8(if g.handoff { 1 } else { 0 });
                        e.addr(&g.sender);
                        e.u32(g.entries.len() as u32);
                        for (k, c) in &g.entries {
                            e.str(k);
                            e.cell(c);
                        }
                    }
                    PeerMessage::Ack(a) => {
                        e.u8(2);
                        e.addr(&a.sender);
                        e.u32(a.entries.len() as u32);
                        for (k, ts) in &a.entries {
                            e.str(k);
                            e.ts(*ts);
                        }
                    }
                    PeerMessage::Broadcast(b) => match b {
                        Broadcast::Join { node, tier, weight } => {
                            e.u8(1);
                            e.str(node.as_str());
                            e.tier(*tier);
                            e.u32(*weight);
                        }
                        Broadcast::Depart { node, tier } => {
                            e.u8(2);
                            e.str(node.as_str());
                            e.tier(*tier);
                        }
                        Broadcast::Failed { node, tier } => {
                            e.u8(3);
                            e.str(node.as_str());
                            e.tier(*tier);
                        }
                        Broadcast::RvUpdate { key, cell } => {
                            e.u8(4);
                            e.str(key);
                            e.cell(cell);
                        }
                    },
                }
            }
        }
        e.0
    }

    /// Full frame bytes: kind, length, body.
    pub fn encode(&self) -> Vec<u8> {
        let body = self.body();
        let mut out = Vec::with_capacity(body.len() + 5);
        out.push(self.kind());
        out.extend_from_slice(&(body.len() as u32).to_be_bytes());
        out.extend_from_slice(&body);
        out
    }

    pub fn decode(kind: u8, body: &[u8]) -> Result<Frame, WireError> {
        let mut d = Dec(body);
        let frame = match kind {
            KIND_REQUEST => {
                let id = d.u64()?;
                let worker = d.u32()?;
                let origin = match d.u8()? {
                    0 => Origin::Client,
                    1 => Origin::Internal,
                    tag => {
                        return Err(WireError::UnknownTag {
                            what: "origin",
                            tag,
                        })
                    }
                };
                let op = match d.u8()? {
                    0 => OpKind::Get,
                    1 => OpKind::Put,
                    tag => return Err(WireError::UnknownTag { what: "op", tag }),
                };
                let key = d.str()?;
                let payload = match d.u8()? {
                    0 => None,
                    _ => Some(d.bytes()?.to_vec()),
                };
                let timestamp = match d.u8()? {
                    0 => None,
                    _ => Some(d.ts()?),
                };
                Frame::Request {
                    id,
                    worker,
                    origin,
                    req: Request {
                        op,
                        key,
                        payload,
                        timestamp,
                    },
                }
            }
            KIND_RESPONSE => {
                let id = d.u64()?;
                let status = match d.u8()? {
                    0 => Status::Ok,
                    1 => Status::KeyMissing,
                    2 => Status::Redirect,
                    3 => Status::Error,
                    tag => {
                        return Err(WireError::UnknownTag {
                            what: "status",
                            tag,
                        })
                    }
                };
                let cell = match d.u8()? {
                    0 => None,
                    _ => Some(d.cell()?),
                };
                let n = d.u32()? as usize;
                let mut addresses = Vec::with_capacity(n.min(1024));
                for _ in 0..n {
                    addresses.push(d.addr()?);
                }
                let error = match d.u8()? {
                    0 => None,
                    _ => Some(d.str()?),
                };
                Frame::Response {
                    id,
                    resp: Response {
                        status,
                        cell,
                        addresses,
                        error,
                    },
                }
            }
            KIND_GOSSIP => {
                let worker = d.u32()?;
                let sub = d.u8()?;
                let sender = d.addr()?;
                let n = d.u32()? as usize;
                let msg = match sub {
                    0 | 1 => {
                        let mut entries = Vec::with_capacity(n.min(4096));
                        for _ in 0..n {
                            entries.push((d.str()?, d.cell()?));
                        }
                        PeerMessage::Gossip(GossipMessage {
                            sender,
                            entries,
                            handoff: sub == 1,
                        })
                    }
                    2 => {
                        let mut entries = Vec::with_capacity(n.min(4096));
                        for _ in 0..n {
                            entries.push((d.str()?, d.ts()?));
                        }
                        PeerMessage::Ack(GossipAck { sender, entries })
                    }
                    tag => {
                        return Err(WireError::UnknownTag {
                            what: "gossip",
                            tag,
                        })
                    }
                };
                Frame::Peer { worker, msg }
            }
            KIND_BROADCAST => {
                let worker = d.u32()?;
                let b = match d.u8()? {
                    1 => Broadcast::Join {
                        node: NodeId::new(d.str()?),
                        tier: d.tier()?,
                        weight: d.u32()?,
                    },
                    2 => Broadcast::Depart {
                        node: NodeId::new(d.str()?),
                        tier: d.tier()?,
                    },
                    3 => Broadcast::Failed {
                        node: NodeId::new(d.str()?),
                        tier: d.tier()?,
                    },
                    4 => Broadcast::RvUpdate {
                        key: d.str()?,
                        cell: d.cell()?,
                    },
                    tag => {
                        return Err(WireError::UnknownTag {
                            what: "broadcast",
                            tag,
                        })
                    }
                };
                Frame::Peer {
                    worker,
                    msg: PeerMessage::Broadcast(b),
                }
            }
            other => return Err(WireError::UnknownKind(other)),
        };
        d.finish()?;
        Ok(frame)
    }
}

pub fn write_frame(w: &mut impl Write, frame: &Frame) -> io::Result<()> {
    w.write_all(&frame.encode())
}

/// Reads one frame; `Ok(None)` on a clean end of stream.
pub fn read_frame(r: &mut impl Read) -> Result<Option<Frame>, WireError> {
    let mut head = [0u8; 5];
    match r.read_exact(&mut head[..1]) {
        Ok(()) => {}
        Err(e) if e.kind() == io::ErrorKind::UnexpectedEof => return Ok(None),
        Err(e) => return Err(e.into()),
    }
    r.read_exact(&mut head[1..])?;
    let len = u32::from_be_bytes(head[1..5].try_into().unwrap()) as usize;
    if len > MAX_BODY {
        return Err(WireError::TooLarge(len));
    }
    let mut body = vec![0u8; len];
    r.read_exact(&mut body)?;
    Frame::decode(head[0], &body).map(Some)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn round_trip(f: Frame) {
        let bytes = f.encode();
        let mut cur = io::Cursor::new(bytes);
        assert_eq!(read_frame(&mut cur).unwrap(), Some(f));
        assert!(read_frame(&mut cur).unwrap().is_none());
    }

    #[test]
    fn header_layout() {
        let f = Frame::Peer {
            worker: 2,
            msg: PeerMessage::Broadcast(Broadcast::Depart {
                node: NodeId::new("n"),
                tier: Tier::Ebs,
            }),
        };
        let bytes = f.encode();
        assert_eq!(bytes[0], KIND_BROADCAST);
        assert_eq!(
            u32::from_be_bytes(bytes[1..5].try_into().unwrap()) as usize,
            bytes.len() - 5
        );
    }

    #[test]
    fn every_kind_round_trips() {
        let cell = LwwCell::new(Timestamp::new(1, 2, 3), b"xyz".to_vec());
        round_trip(Frame::Request {
            id: 7,
            worker: 1,
            origin: Origin::Client,
            req: Request::put("k", "v").with_timestamp(Timestamp::new(4, 5, 6)),
        });
        round_trip(Frame::Response {
            id: 7,
            resp: Response::redirect(vec![WorkerAddr::new("a", 0), WorkerAddr::new("b", 3)]),
        });
        round_trip(Frame::Response {
            id: 8,
            resp: Response::ok(cell.clone()),
        });
        round_trip(Frame::Peer {
            worker: 0,
            msg: PeerMessage::Gossip(GossipMessage {
                sender: WorkerAddr::new("a", 1),
                entries: vec![("k".into(), cell.clone())],
                handoff: true,
            }),
        });
        round_trip(Frame::Peer {
            worker: 0,
            msg: PeerMessage::Ack(GossipAck {
                sender: WorkerAddr::new("a", 1),
                entries: vec![("k".into(), cell.ts())],
            }),
        });
        round_trip(Frame::Peer {
            worker: 3,
            msg: PeerMessage::Broadcast(Broadcast::RvUpdate {
                key: "k".into(),
                cell,
            }),
        });
    }

    #[test]
    fn garbage_is_rejected() {
        assert!(matches!(
            Frame::decode(9, &[]),
            Err(WireError::UnknownKind(9))
        ));
        assert!(matches!(
            Frame::decode(KIND_RESPONSE, &[0, 0]),
            Err(WireError::Short)
        ));
        let mut bytes = Frame::Response {
            id: 1,
            resp: Response::missing(),
        }
        .body();
        bytes.push(0);
        assert!(matches!(
            Frame::decode(KIND_RESPONSE, &bytes),
            Err(WireError::Trailing(1))
        ));
    }
}
