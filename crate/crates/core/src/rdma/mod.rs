//! Emulated RDMA reliable-connection transport: connection management
//! over datagrams, queue pairs with WRITE and SEND, go-back-N recovery,
//! and a goodput benchmark.

mod bench;
mod channel;
mod endpoint;
mod fabric;
mod live;
pub mod wire;

use bytes::Bytes;
use thiserror::Error;

pub use bench::{throughput_bench, throughput_grid, write_bench_csv, BenchConfig, BenchResult};
pub use channel::{sim_link_pair, ChannelModel, PacketLink, SimChannel, SimLinkEnd};
pub use endpoint::{Endpoint, EndpointConfig, EndpointStats, VerbsHandle};
pub use fabric::Fabric;
pub use live::{drive, UdpLink};

#[derive(Debug, Error)]
pub enum RdmaError {
    #[error("malformed packet: {0}")]
    Wire(String),
    #[error("channel model: {0}")]
    Channel(String),
    #[error("queue pair is {found:?}, expected {expected:?}")]
    QpState { expected: QpState, found: QpState },
    #[error("empty work request batch")]
    EmptyBatch,
    #[error("send queue full")]
    SqFull,
    #[error("work request length {0} outside 1..2^24 or offset out of range")]
    WrLength(usize),
    #[error("memory region length must be nonzero")]
    RegionLength,
    #[error("unknown rkey {0:#010x}")]
    UnknownRkey(u32),
    #[error("connection failed: {0}")]
    Connect(String),
    #[error("engine is gone")]
    Disconnected,
    #[error("no progress by t = {0} s")]
    Stalled(f64),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum QpState {
    Reset,
    Init,
    Ready,
    Error,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Verb {
    Write,
    Send,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct WorkRequest {
    pub wr_id: u64,
    pub verb: Verb,
    pub rkey: u32,
    /// Byte offset inside the remote region.
    pub remote_offset: u64,
    pub data: Bytes,
}

impl WorkRequest {
    pub fn write(wr_id: u64, rkey: u32, remote_offset: u64, data: Bytes) -> Self {
        Self { wr_id, verb: Verb::Write, rkey, remote_offset, data }
    }

    pub fn send(wr_id: u64, data: Bytes) -> Self {
        Self { wr_id, verb: Verb::Send, rkey: 0, remote_offset: 0, data }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CompletionStatus {
    Success,
    RemoteAccessError,
    RetryExceeded,
    /// Still queued when the QP entered the error state.
    Flushed,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Completion {
    pub wr_id: u64,
    pub verb: Verb,
    pub status: CompletionStatus,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct MemoryRegion {
    pub base: u64,
    pub length: u64,
    pub rkey: u32,
}

impl MemoryRegion {
    pub const ADVERT_LEN: usize = 20;

    /// Big-endian base, length, rkey.
    pub fn to_advert(&self) -> Bytes {
        let mut v = Vec::with_capacity(Self::ADVERT_LEN);
        v.extend_from_slice(&self.base.to_be_bytes());
        v.extend_from_slice(&self.length.to_be_bytes());
        v.extend_from_slice(&self.rkey.to_be_bytes());
        v.into()
    }

    pub fn from_advert(b: &[u8]) -> Result<Self, RdmaError> {
        if b.len() != Self::ADVERT_LEN {
            return Err(RdmaError::Wire(format!("region advert of {} bytes", b.len())));
        }
        Ok(Self {
            base: u64::from_be_bytes(b[..8].try_into().unwrap()),
            length: u64::from_be_bytes(b[8..16].try_into().unwrap()),
            rkey: u32::from_be_bytes(b[16..].try_into().unwrap()),
        })
    }
}
