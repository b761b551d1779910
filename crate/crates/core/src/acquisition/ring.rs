use std::io::Write;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{Condvar, Mutex};

use bytes::Bytes;

use super::AcqError;

pub const DEFAULT_CAPACITY: usize = 4 * 1024 * 1024;
pub const DEFAULT_BLOCK_SIZE: usize = 256 * 1024;

struct Slot {
    seq: Option<u64>,
    unread: bool,
    data: Bytes,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RingOp {
    Write,
    Read,
    Overflow,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RingTrace {
    pub op: RingOp,
    pub seq: u64,
    pub slot: usize,
}

/// Circular buffer of fixed-size blocks for one writer and one reader.
///
/// Blocks are addressed by an absolute sequence number; block `s` lives in
/// slot `s % slots`. A slot becomes visible to the reader only after the
/// write that filled it has released the slot lock.
pub struct RingBuffer {
    block_size: usize,
    slots: Vec<Mutex<Slot>>,
    freed: Condvar,
    free_lock: Mutex<()>,
    write_seq: AtomicU64,
    overflows: AtomicU64,
    trace: Option<Mutex<Vec<RingTrace>>>,
}

impl RingBuffer {
    pub fn new(capacity: usize, block_size: usize) -> Result<Self, AcqError> {
        if block_size == 0 || capacity == 0 || capacity % block_size != 0 {
            return Err(AcqError::Params(format!(
                "capacity {capacity} must be a positive multiple of block size {block_size}"
            )));
        }
        let slots = (0..capacity / block_size)
            .map(|_| Mutex::new(Slot { seq: None, unread: false, data: Bytes::new() }))
            .collect();
        Ok(Self {
            block_size,
            slots,
            freed: Condvar::new(),
            free_lock: Mutex::new(()),
            write_seq: AtomicU64::new(0),
            overflows: AtomicU64::new(0),
            trace: None,
        })
    }

    pub fn with_trace(mut self) -> Self {
        self.trace = Some(Mutex::new(Vec::new()));
        self
    }

    pub fn block_size(&self) -> usize {
        self.block_size
    }

    pub fn slots(&self) -> usize {
        self.slots.len()
    }

    pub fn capacity(&self) -> usize {
        self.slots.len() * self.block_size
    }

    /// Sequence number the next write will receive.
    pub fn write_cursor(&self) -> u64 {
        self.write_seq.load(Ordering::Acquire)
    }

    pub fn overflow_count(&self) -> u64 {
        self.overflows.load(Ordering::Relaxed)
    }

    /// Blocks written and not yet read.
    pub fn occupancy(&self) -> usize {
        self.slots.iter().filter(|s| s.lock().expect("slot lock").unread).count()
    }

    fn record(&self, op: RingOp, seq: u64) {
        if let Some(t) = &self.trace {
            t.lock().expect("trace lock").push(RingTrace { op, seq, slot: (seq % self.slots.len() as u64) as usize });
        }
    }

    fn check_len(&self, payload: &Bytes) -> Result<(), AcqError> {
        if payload.len() != self.block_size {
            return Err(AcqError::Params(format!(
                "payload is {} bytes, block size {}",
                payload.len(),
                self.block_size
            )));
        }
        Ok(())
    }

    /// Stores one block. Fails without writing if the target slot still
    /// holds an unread block.
    pub fn write(&self, payload: Bytes) -> Result<u64, AcqError> {
        self.check_len(&payload)?;
        let seq = self.write_seq.load(Ordering::Acquire);
        let mut slot = self.slots[(seq % self.slots.len() as u64) as usize].lock().expect("slot lock");
        if slot.unread {
            self.overflows.fetch_add(1, Ordering::Relaxed);
            drop(slot);
            self.record(RingOp::Overflow, seq);
            return Err(AcqError::Overflow { seq });
        }
        *slot = Slot { seq: Some(seq), unread: true, data: payload };
        self.write_seq.store(seq + 1, Ordering::Release);
        drop(slot);
        self.record(RingOp::Write, seq);
        Ok(seq)
    }

    /// Like [`write`](Self::write) but waits for the reader to free the
    /// slot instead of overflowing.
    pub fn write_blocking(&self, payload: Bytes) -> Result<u64, AcqError> {
        self.check_len(&payload)?;
        let seq = self.write_seq.load(Ordering::Acquire);
        let idx = (seq % self.slots.len() as u64) as usize;
        let mut guard = self.free_lock.lock().expect("free lock");
        while self.slots[idx].lock().expect("slot lock").unread {
            guard = self.freed.wait(guard).expect("free lock");
        }
        drop(guard);
        self.write(payload)
    }

    /// Returns block `seq` and releases its slot.
    pub fn read(&self, seq: u64) -> Result<Bytes, AcqError> {
        let mut slot = self.slots[(seq % self.slots.len() as u64) as usize].lock().expect("slot lock");
        match slot.seq {
            Some(s) if s == seq && slot.unread => {
                slot.unread = false;
                let data = std::mem::take(&mut slot.data);
                drop(slot);
                self.record(RingOp::Read, seq);
                let _g = self.free_lock.lock().expect("free lock");
                self.freed.notify_all();
                Ok(data)
            }
            Some(s) if s == seq => Err(AcqError::Sequencing { seq, reason: "already consumed" }),
            Some(s) if s > seq => Err(AcqError::Sequencing { seq, reason: "overwritten" }),
            _ => Err(AcqError::Sequencing { seq, reason: "not yet written" }),
        }
    }

    pub fn trace(&self) -> Vec<RingTrace> {
        self.trace.as_ref().map(|t| t.lock().expect("trace lock").clone()).unwrap_or_default()
    }

    pub fn write_trace_csv<W: Write>(&self, w: W) -> Result<(), AcqError> {
        let mut csv = csv::Writer::from_writer(w);
        csv.write_record(["op", "seq", "slot"])?;
        for t in self.trace() {
            let op = match t.op {
                RingOp::Write => "write",
                RingOp::Read => "read",
                RingOp::Overflow => "overflow",
            };
            csv.write_record([op, &t.seq.to_string(), &t.slot.to_string()])?;
        }
        csv.flush()?;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::sync::Arc;

    fn block(tag: u8, size: usize) -> Bytes {
        Bytes::from(vec![tag; size])
    }

    #[test]
    fn defaults_have_sixteen_slots() {
        let r = RingBuffer::new(DEFAULT_CAPACITY, DEFAULT_BLOCK_SIZE).unwrap();
        assert_eq!(r.slots(), 16);
        assert!(RingBuffer::new(1000, 300).is_err());
    }

    #[test]
    fn first_write_is_index_zero() {
        let r = RingBuffer::new(64, 16).unwrap();
        assert_eq!(r.write(block(1, 16)).unwrap(), 0);
        assert_eq!(r.occupancy(), 1);
        assert!(r.write(block(1, 15)).is_err());
    }

    #[test]
    fn capacity_edge_overflows() {
        let r = RingBuffer::new(16 * 8, 8).unwrap();
        for i in 0..16 {
            assert_eq!(r.write(block(i, 8)).unwrap(), i as u64);
        }
        assert!(matches!(r.write(block(99, 8)), Err(AcqError::Overflow { seq: 16 })));
        assert_eq!(r.overflow_count(), 1);
        // committed data untouched
        assert_eq!(r.read(0).unwrap(), block(0, 8));
        assert_eq!(r.write(block(16, 8)).unwrap(), 16);
    }

    #[test]
    fn read_rules() {
        let r = RingBuffer::new(4 * 4, 4).unwrap().with_trace();
        for i in 0..3 {
            r.write(block(i, 4)).unwrap();
        }
        assert_eq!(r.read(2).unwrap(), block(2, 4));
        assert_eq!(r.read(0).unwrap(), block(0, 4));
        assert!(matches!(r.read(0), Err(AcqError::Sequencing { reason: "already consumed", .. })));
        assert!(matches!(r.read(7), Err(AcqError::Sequencing { reason: "not yet written", .. })));
        let mut out = Vec::new();
        r.write_trace_csv(&mut out).unwrap();
        assert!(String::from_utf8(out).unwrap().starts_with("op,seq,slot\nwrite,0,0\n"));
    }

    #[test]
    fn concurrent_writer_reader_no_torn_blocks() {
        let r = Arc::new(RingBuffer::new(8 * 64, 64).unwrap());
        let n = 5000u64;
        let w = {
            let r = r.clone();
            std::thread::spawn(move || {
                for s in 0..n {
                    let mut v = vec![0u8; 64];
                    v[..8].copy_from_slice(&s.to_le_bytes());
                    let sum = v[..8].iter().fold(0u8, |a, b| a.wrapping_add(*b));
                    v[63] = sum;
                    r.write_blocking(Bytes::from(v)).unwrap();
                }
            })
        };
        let mut s = 0;
        while s < n {
            match r.read(s) {
                Ok(b) => {
                    assert_eq!(u64::from_le_bytes(b[..8].try_into().unwrap()), s);
                    assert_eq!(b[63], b[..8].iter().fold(0u8, |a, b| a.wrapping_add(*b)));
                    s += 1;
                }
                Err(AcqError::Sequencing { reason: "not yet written", .. }) => std::thread::yield_now(),
                Err(e) => panic!("{e}"),
            }
        }
        w.join().unwrap();
        assert_eq!(r.overflow_count(), 0);
    }
}
