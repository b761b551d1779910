//! Packet format.
//!
//! Every packet is a 20-byte big-endian header followed by the payload.
//!
//! | offset | size | field                                              |
//! |-------:|-----:|----------------------------------------------------|
//! | 0      | 1    | opcode                                             |
//! | 1      | 1    | flags: bit 0 FIRST, bit 1 LAST; NAK syndrome       |
//! | 2      | 2    | destination QP id                                  |
//! | 4      | 3    | PSN                                                |
//! | 7      | 1    | reserved, zero                                     |
//! | 8      | 4    | rkey                                               |
//! | 12     | 5    | remote offset within the region                    |
//! | 17     | 3    | length: whole WR on FIRST packets, else payload    |
//!
//! # Trace capture
//!
//! `PTRC`, u16 version (1), u16 reserved, then per packet: f64 time (s),
//! u8 direction (0 = A→B), u8 dropped flag, u16 reserved, u32 length and
//! the packet bytes. Big-endian.

use std::io::{Read, Write};

use bytes::{BufMut, Bytes, BytesMut};

use super::RdmaError;

pub const HEADER_LEN: usize = 20;
pub const PSN_MASK: u32 = 0x00FF_FFFF;
pub const MAX_WR_LEN: usize = (1 << 24) - 1;
pub const MAX_REMOTE_OFFSET: u64 = (1 << 40) - 1;
pub const FLAG_FIRST: u8 = 1;
pub const FLAG_LAST: u8 = 2;
pub const NAK_SEQUENCE: u8 = 1;
pub const NAK_REMOTE_ACCESS: u8 = 2;
/// QP id used for connection management datagrams.
pub const CM_QP: u16 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Opcode {
    CmReq = 0x01,
    CmRep = 0x02,
    CmRtu = 0x03,
    Write = 0x10,
    Send = 0x11,
    Ack = 0x20,
    Nak = 0x21,
}

impl Opcode {
    fn from_u8(v: u8) -> Option<Self> {
        Some(match v {
            0x01 => Self::CmReq,
            0x02 => Self::CmRep,
            0x03 => Self::CmRtu,
            0x10 => Self::Write,
            0x11 => Self::Send,
            0x20 => Self::Ack,
            0x21 => Self::Nak,
            _ => return None,
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Header {
    pub opcode: Opcode,
    pub flags: u8,
    pub qp_id: u16,
    pub psn: u32,
    pub rkey: u32,
    pub remote_offset: u64,
    pub length: u32,
}

impl Header {
    pub fn new(opcode: Opcode, qp_id: u16, psn: u32) -> Self {
        Self { opcode, flags: 0, qp_id, psn, rkey: 0, remote_offset: 0, length: 0 }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Packet {
    pub header: Header,
    pub payload: Bytes,
}

impl Packet {
    pub fn encode(&self) -> Bytes {
        let h = &self.header;
        let mut b = BytesMut::with_capacity(HEADER_LEN + self.payload.len());
        b.put_u8(h.opcode as u8);
        b.put_u8(h.flags);
        b.put_u16(h.qp_id);
        b.put_slice(&(h.psn & PSN_MASK).to_be_bytes()[1..]);
        b.put_u8(0);
        b.put_u32(h.rkey);
        b.put_slice(&(h.remote_offset & MAX_REMOTE_OFFSET).to_be_bytes()[3..]);
        b.put_slice(&(h.length & PSN_MASK).to_be_bytes()[1..]);
        b.put_slice(&self.payload);
        b.freeze()
    }

    pub fn decode(mut bytes: Bytes) -> Result<Self, RdmaError> {
        if bytes.len() < HEADER_LEN {
            return Err(RdmaError::Wire(format!("{} bytes is shorter than a header", bytes.len())));
        }
        let h = bytes.split_to(HEADER_LEN);
        let opcode = Opcode::from_u8(h[0]).ok_or_else(|| RdmaError::Wire(format!("unknown opcode {:#04x}", h[0])))?;
        let be = |s: &[u8]| s.iter().fold(0u64, |a, &b| (a << 8) | b as u64);
        Ok(Self {
            header: Header {
                opcode,
                flags: h[1],
                qp_id: be(&h[2..4]) as u16,
                psn: be(&h[4..7]) as u32,
                rkey: be(&h[8..12]) as u32,
                remote_offset: be(&h[12..17]),
                length: be(&h[17..20]) as u32,
            },
            payload: bytes,
        })
    }
}

pub fn psn_add(psn: u32, n: u32) -> u32 {
    psn.wrapping_add(n) & PSN_MASK
}

/// Forward distance from `from` to `to` modulo 2²⁴.
pub fn psn_diff(to: u32, from: u32) -> u32 {
    to.wrapping_sub(from) & PSN_MASK
}

#[derive(Debug, Clone, PartialEq)]
pub struct TraceRecord {
    pub time: f64,
    pub direction: u8,
    pub dropped: bool,
    pub bytes: Bytes,
}

const TRACE_MAGIC: &[u8; 4] = b"PTRC";

pub fn write_trace<W: Write>(mut w: W, records: &[TraceRecord]) -> Result<(), RdmaError> {
    w.write_all(TRACE_MAGIC)?;
    w.write_all(&1u16.to_be_bytes())?;
    w.write_all(&[0, 0])?;
    for r in records {
        w.write_all(&r.time.to_be_bytes())?;
        w.write_all(&[r.direction, r.dropped as u8, 0, 0])?;
        w.write_all(&(r.bytes.len() as u32).to_be_bytes())?;
        w.write_all(&r.bytes)?;
    }
    Ok(())
}

pub fn read_trace<R: Read>(mut r: R) -> Result<Vec<TraceRecord>, RdmaError> {
    let mut head = [0u8; 8];
    r.read_exact(&mut head)?;
    if &head[..4] != TRACE_MAGIC || head[4..6] != [0, 1] {
        return Err(RdmaError::Wire("not a version 1 packet trace".into()));
    }
    let mut out = Vec::new();
    let mut rec = [0u8; 16];
    loop {
        match r.read_exact(&mut rec) {
            Ok(()) => {}
            Err(e) if e.kind() == std::io::ErrorKind::UnexpectedEof => break,
            Err(e) => return Err(e.into()),
        }
        let len = u32::from_be_bytes(rec[12..16].try_into().unwrap()) as usize;
        let mut bytes = vec![0u8; len];
        r.read_exact(&mut bytes)?;
        out.push(TraceRecord {
            time: f64::from_be_bytes(rec[..8].try_into().unwrap()),
            direction: rec[8],
            dropped: rec[9] != 0,
            bytes: bytes.into(),
        });
    }
    Ok(out)
}
