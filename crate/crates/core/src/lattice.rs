//! Last-writer-wins cells and their merge algebra.
//!
//! Every value the store holds, user data and system metadata alike, is an
//! [`LwwCell`]. Two cells merge by keeping the one with the greater
//! [`Timestamp`], which makes merge associative, commutative and idempotent,
//! so replicas converge no matter how gossip is duplicated or reordered.

use std::cmp::Ordering;
use std::fmt;
use std::sync::atomic::{AtomicU64, Ordering as AtomicOrdering};
use std::sync::Arc;
use std::time::{SystemTime, UNIX_EPOCH};

use thiserror::Error;

/// Total order over writes: `(clock_ms, node_seq, op_seq)` compared lexicographically.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Default)]
pub struct Timestamp {
    pub clock_ms: u64,
    pub node_seq: u32,
    pub op_seq: u32,
}

impl Timestamp {
    pub const fn new(clock_ms: u64, node_seq: u32, op_seq: u32) -> Self {
        Self {
            clock_ms,
            node_seq,
            op_seq,
        }
    }
}

impl fmt::Display for Timestamp {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "({},{},{})", self.clock_ms, self.node_seq, self.op_seq)
    }
}

/// A timestamped, immutable payload.
///
/// An empty payload is the tombstone marker: deleting a key writes an empty
/// cell with a fresh timestamp, and tombstones are never collected.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct LwwCell {
    ts: Timestamp,
    payload: Arc<[u8]>,
}

impl LwwCell {
    pub fn new(ts: Timestamp, payload: impl Into<Arc<[u8]>>) -> Self {
        Self {
            ts,
            payload: payload.into(),
        }
    }

    pub fn tombstone(ts: Timestamp) -> Self {
        Self::new(ts, Vec::new())
    }

    pub fn ts(&self) -> Timestamp {
        self.ts
    }

    pub fn payload(&self) -> &[u8] {
        &self.payload
    }

    pub fn is_tombstone(&self) -> bool {
        self.payload.is_empty()
    }

    /// Merges `other` into `self` in place. Returns true if `self` changed.
    pub fn merge_from(&mut self, other: &LwwCell) -> bool {
        if order(other, self) == Ordering::Greater {
            *self = other.clone();
            true
        } else {
            false
        }
    }

    /// Size of the canonical encoding in bytes.
    pub fn encoded_len(&self) -> usize {
        HEADER_LEN + self.payload.len()
    }

    /// Canonical byte encoding: 8-byte BE clock, 4-byte BE node_seq, 4-byte BE
    /// op_seq, 4-byte BE payload length, payload.
    pub fn encode(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(self.encoded_len());
        self.encode_into(&mut out);
        out
    }

    pub fn encode_into(&self, out: &mut Vec<u8>) {
        out.extend_from_slice(&self.ts.clock_ms.to_be_bytes());
        out.extend_from_slice(&self.ts.node_seq.to_be_bytes());
        out.extend_from_slice(&self.ts.op_seq.to_be_bytes());
        out.extend_from_slice(&(self.payload.len() as u32).to_be_bytes());
        out.extend_from_slice(&self.payload);
    }

    /// Decodes exactly one cell; trailing bytes are an error.
    pub fn decode(bytes: &[u8]) -> Result<Self, CodecError> {
        let (cell, used) = Self::decode_prefix(bytes)?;
        if used != bytes.len() {
            return Err(CodecError::TrailingBytes(bytes.len() - used));
        }
        Ok(cell)
    }

    /// Decodes one cell from the front of `bytes`, returning it and the
    /// number of bytes consumed.
    pub fn decode_prefix(bytes: &[u8]) -> Result<(Self, usize), CodecError> {
        if bytes.len() < HEADER_LEN {
            return Err(CodecError::Truncated {
                needed: HEADER_LEN,
                got: bytes.len(),
            });
        }
        let clock_ms = u64::from_be_bytes(bytes[0..8].try_into().unwrap());
        let node_seq = u32::from_be_bytes(bytes[8..12].try_into().unwrap());
        let op_seq = u32::from_be_bytes(bytes[12..16].try_into().unwrap());
        let len = u32::from_be_bytes(bytes[16..20].try_into().unwrap()) as usize;
        let end = HEADER_LEN + len;
        if bytes.len() < end {
            return Err(CodecError::Truncated {
                needed: end,
                got: bytes.len(),
            });
        }
        let cell = LwwCell::new(
            Timestamp::new(clock_ms, node_seq, op_seq),
            bytes[HEADER_LEN..end].to_vec(),
        );
        Ok((cell, end))
    }
}

const HEADER_LEN: usize = 8 + 4 + 4 + 4;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum CodecError {
    #[error("truncated cell: needed {needed} bytes, got {got}")]
    Truncated { needed: usize, got: usize },
    #[error("{0} trailing bytes after cell")]
    TrailingBytes(usize),
}

/// Returns whichever input carries the greater timestamp.
pub fn merge(a: &LwwCell, b: &LwwCell) -> LwwCell {
    if dominates(a, b) {
        a.clone()
    } else {
        b.clone()
    }
}

/// True iff `a` sorts at or above `b`; `merge(a, b) == a` exactly when this
/// holds. Stampers never reuse a timestamp, but a forged duplicate with a
/// different payload still needs a winner everyone agrees on: bytes decide.
pub fn dominates(a: &LwwCell, b: &LwwCell) -> bool {
    order(a, b) != Ordering::Less
}

fn order(a: &LwwCell, b: &LwwCell) -> Ordering {
    a.ts.cmp(&b.ts).then_with(|| a.payload.cmp(&b.payload))
}

/// Merges any number of cells; `None` for an empty input.
pub fn merge_all<'a, I>(cells: I) -> Option<LwwCell>
where
    I: IntoIterator<Item = &'a LwwCell>,
{
    cells.into_iter().max_by(|a, b| order(a, b)).cloned()
}

/// Source of `clock_ms` values for new writes. Clocks are always injected.
pub trait Clock: Send + Sync {
    fn now_ms(&self) -> u64;
}

/// Wall clock in milliseconds since the Unix epoch.
#[derive(Debug, Default, Clone, Copy)]
pub struct SystemClock;

impl Clock for SystemClock {
    fn now_ms(&self) -> u64 {
        SystemTime::now()
            .duration_since(UNIX_EPOCH)
            .map(|d| d.as_millis() as u64)
            .unwrap_or(0)
    }
}

/// Manually advanced clock shared by everything in a simulation.
#[derive(Debug, Default)]
pub struct SimClock {
    ms: AtomicU64,
}

impl SimClock {
    pub fn new(start_ms: u64) -> Arc<Self> {
        Arc::new(Self {
            ms: AtomicU64::new(start_ms),
        })
    }

    pub fn set_ms(&self, ms: u64) {
        self.ms.fetch_max(ms, AtomicOrdering::SeqCst);
    }

    pub fn advance_ms(&self, delta: u64) {
        self.ms.fetch_add(delta, AtomicOrdering::SeqCst);
    }
}

impl Clock for SimClock {
    fn now_ms(&self) -> u64 {
        self.ms.load(AtomicOrdering::SeqCst)
    }
}

/// Issues strictly increasing timestamps for one writer.
#[derive(Debug, Clone)]
pub struct Stamper {
    node_seq: u32,
    op_seq: u32,
    last_clock: u64,
}

impl Stamper {
    pub fn new(node_seq: u32) -> Self {
        Self {
            node_seq,
            op_seq: 0,
            last_clock: 0,
        }
    }

    pub fn node_seq(&self) -> u32 {
        self.node_seq
    }

    /// A fresh timestamp, never equal to an earlier one from this stamper
    /// even if the clock stalls or steps backwards.
    pub fn stamp(&mut self, clock_ms: u64) -> Timestamp {
        let clock_ms = clock_ms.max(self.last_clock);
        if clock_ms == self.last_clock {
            self.op_seq = self.op_seq.wrapping_add(1);
        } else {
            self.op_seq = 0;
        }
        self.last_clock = clock_ms;
        Timestamp::new(clock_ms, self.node_seq, self.op_seq)
    }
}
