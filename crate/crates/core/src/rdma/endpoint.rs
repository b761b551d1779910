use std::collections::{HashMap, VecDeque};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::mpsc::{channel, Receiver, Sender};
use std::sync::{Arc, Mutex};

use bytes::{Bytes, BytesMut};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::wire::*;
use super::{Completion, CompletionStatus, MemoryRegion, QpState, RdmaError, Verb, WorkRequest};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EndpointConfig {
    pub mtu: usize,
    pub sq_depth: usize,
    /// Most unacknowledged packets in flight.
    pub window: usize,
    /// Data packets leave no faster than this, bits/s.
    pub line_rate: f64,
    pub retry_budget: u32,
    /// Retransmission timeout, seconds.
    pub rto: f64,
    pub cm_timeout: f64,
    pub cm_retries: u32,
    pub seed: u64,
    /// Fixed starting PSN instead of a random one.
    pub initial_psn: Option<u32>,
}

impl Default for EndpointConfig {
    fn default() -> Self {
        Self {
            mtu: 4096,
            sq_depth: 1024,
            window: 256,
            line_rate: 100e9,
            retry_budget: 7,
            rto: 10e-6,
            cm_timeout: 50e-6,
            cm_retries: 8,
            seed: 0,
            initial_psn: None,
        }
    }
}

impl EndpointConfig {
    /// Timeout of three round trips, never below 10 µs.
    pub fn for_channel(model: &super::ChannelModel, seed: u64) -> Self {
        let rto = (3.0 * model.base_rtt()).max(10e-6);
        Self { mtu: model.mtu, line_rate: model.bandwidth, rto, cm_timeout: 5.0 * rto, seed, ..Default::default() }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct EndpointStats {
    pub data_packets_sent: u64,
    pub retransmitted_packets: u64,
    pub acks_sent: u64,
    pub naks_sent: u64,
    pub payload_bytes_sent: u64,
    pub payload_bytes_acked: u64,
    pub duplicates_received: u64,
    pub timeouts: u64,
    pub cm_retries: u64,
    pub malformed: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Cm {
    Idle,
    Listening,
    ReqSent,
    RepSent,
    RtuSent,
    Established,
    Failed,
}

struct Segment {
    psn: u32,
    packet: Bytes,
    payload_len: usize,
    sent: bool,
}

struct PendingWr {
    wr_id: u64,
    verb: Verb,
    last_psn: u32,
}

struct Region {
    base: u64,
    data: Vec<u8>,
}

/// Commands and completions exchanged with a [`VerbsHandle`].
struct HandleLink {
    commands: Receiver<Vec<WorkRequest>>,
    completions: Arc<Mutex<VecDeque<Completion>>>,
    rejected: Arc<Mutex<VecDeque<Vec<WorkRequest>>>>,
}

/// Posting and polling from another thread. Work requests reach the
/// engine the next time it runs.
#[derive(Clone)]
pub struct VerbsHandle {
    commands: Sender<Vec<WorkRequest>>,
    completions: Arc<Mutex<VecDeque<Completion>>>,
    outstanding: Arc<AtomicUsize>,
    sq_depth: usize,
}

impl VerbsHandle {
    /// Accepts as many WRs as fit in the send queue and returns the
    /// count; zero free slots is an error.
    pub fn post_batch(&self, mut wrs: Vec<WorkRequest>) -> Result<usize, RdmaError> {
        if wrs.is_empty() {
            return Err(RdmaError::EmptyBatch);
        }
        let free = self.sq_depth.saturating_sub(self.outstanding.load(Ordering::Acquire));
        if free == 0 {
            return Err(RdmaError::SqFull);
        }
        wrs.truncate(free);
        let n = wrs.len();
        self.outstanding.fetch_add(n, Ordering::AcqRel);
        self.commands.send(wrs).map_err(|_| RdmaError::Disconnected)?;
        Ok(n)
    }

    pub fn poll_cq(&self, max: usize) -> Vec<Completion> {
        let mut q = self.completions.lock().expect("cq lock");
        let n = max.min(q.len());
        let out: Vec<Completion> = q.drain(..n).collect();
        self.outstanding.fetch_sub(out.len(), Ordering::AcqRel);
        out
    }
}

/// One side of a reliable connection, with its memory regions.
pub struct Endpoint {
    cfg: EndpointConfig,
    qp_id: u16,
    state: QpState,
    cm: Cm,
    cm_deadline: Option<f64>,
    cm_tries: u32,
    peer_qp: u16,
    // requester
    initial_psn: u32,
    next_psn: u32,
    sq: VecDeque<PendingWr>,
    segs: VecDeque<Segment>,
    next_tx: usize,
    tx_free: f64,
    retries: u32,
    deadline: Option<f64>,
    cq: VecDeque<Completion>,
    // responder
    expected_psn: u32,
    nak_sent: bool,
    access_error: Option<u32>,
    write_window: Option<(u32, u64, u64)>,
    send_buf: BytesMut,
    recv: VecDeque<Bytes>,
    regions: HashMap<u32, Region>,
    next_rkey: u32,
    next_base: u64,
    advertise: Option<MemoryRegion>,
    outbox: VecDeque<Bytes>,
    stats: EndpointStats,
    handle: Option<HandleLink>,
}

impl Endpoint {
    pub fn new(cfg: EndpointConfig) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        let initial_psn = cfg.initial_psn.unwrap_or_else(|| rng.random::<u32>()) & PSN_MASK;
        Self {
            qp_id: rng.random_range(2..u16::MAX),
            state: QpState::Reset,
            cm: Cm::Idle,
            cm_deadline: None,
            cm_tries: 0,
            peer_qp: 0,
            initial_psn,
            next_psn: initial_psn,
            sq: VecDeque::new(),
            segs: VecDeque::new(),
            next_tx: 0,
            tx_free: f64::NEG_INFINITY,
            retries: 0,
            deadline: None,
            cq: VecDeque::new(),
            expected_psn: 0,
            nak_sent: false,
            access_error: None,
            write_window: None,
            send_buf: BytesMut::new(),
            recv: VecDeque::new(),
            regions: HashMap::new(),
            next_rkey: rng.random::<u32>() | 1,
            next_base: 0x1000_0000,
            advertise: None,
            outbox: VecDeque::new(),
            stats: EndpointStats::default(),
            handle: None,
            cfg,
        }
    }

    pub fn config(&self) -> &EndpointConfig {
        &self.cfg
    }

    pub fn qp_id(&self) -> u16 {
        self.qp_id
    }

    pub fn state(&self) -> QpState {
        self.state
    }

    pub fn stats(&self) -> &EndpointStats {
        &self.stats
    }

    pub fn connect_failed(&self) -> bool {
        self.cm == Cm::Failed
    }

    /// WRs posted and not yet completed.
    pub fn outstanding(&self) -> usize {
        self.sq.len()
    }

    pub fn register_memory(&mut self, length: usize) -> Result<MemoryRegion, RdmaError> {
        if length == 0 {
            return Err(RdmaError::RegionLength);
        }
        let rkey = self.next_rkey;
        self.next_rkey = self.next_rkey.wrapping_add(0x9E37_79B9) | 1;
        let base = self.next_base;
        self.next_base += (length as u64).next_multiple_of(4096);
        self.regions.insert(rkey, Region { base, data: vec![0; length] });
        Ok(MemoryRegion { base, length: length as u64, rkey })
    }

    pub fn deregister_memory(&mut self, rkey: u32) -> Result<(), RdmaError> {
        self.regions.remove(&rkey).map(|_| ()).ok_or(RdmaError::UnknownRkey(rkey))
    }

    pub fn region(&self, rkey: u32) -> Option<&[u8]> {
        self.regions.get(&rkey).map(|r| &r.data[..])
    }

    pub fn region_base(&self, rkey: u32) -> Option<u64> {
        self.regions.get(&rkey).map(|r| r.base)
    }

    /// Accept connection requests; once connected, announce `advertise`
    /// to the peer with a SEND.
    pub fn listen(&mut self, advertise: Option<MemoryRegion>) {
        self.cm = Cm::Listening;
        self.advertise = advertise;
    }

    /// Starts the handshake as initiator.
    pub fn connect(&mut self, now: f64) -> Result<(), RdmaError> {
        if self.state != QpState::Reset {
            return Err(RdmaError::QpState { expected: QpState::Reset, found: self.state });
        }
        self.state = QpState::Init;
        self.cm = Cm::ReqSent;
        self.send_cm(Opcode::CmReq);
        self.cm_deadline = Some(now + self.cfg.cm_timeout);
        Ok(())
    }

    /// Messages received by SEND, oldest first.
    pub fn take_message(&mut self) -> Option<Bytes> {
        self.recv.pop_front()
    }

    pub fn verbs_handle(&mut self) -> VerbsHandle {
        let (tx, rx) = channel();
        let completions = Arc::new(Mutex::new(VecDeque::new()));
        let outstanding = Arc::new(AtomicUsize::new(0));
        self.handle = Some(HandleLink {
            commands: rx,
            completions: completions.clone(),
            rejected: Arc::new(Mutex::new(VecDeque::new())),
        });
        VerbsHandle { commands: tx, completions, outstanding, sq_depth: self.cfg.sq_depth }
    }

    fn send_cm(&mut self, op: Opcode) {
        let psn = match op {
            Opcode::CmRtu => 0,
            _ => self.initial_psn,
        };
        let payload = Bytes::copy_from_slice(&self.qp_id.to_be_bytes());
        self.outbox.push_back(Packet { header: Header::new(op, CM_QP, psn), payload }.encode());
    }

    fn control(&mut self, op: Opcode, flags: u8, psn: u32) {
        let mut h = Header::new(op, self.peer_qp, psn);
        h.flags = flags;
        self.outbox.push_back(Packet { header: h, payload: Bytes::new() }.encode());
        match op {
            Opcode::Ack => self.stats.acks_sent += 1,
            _ => self.stats.naks_sent += 1,
        }
    }

    fn become_ready(&mut self) {
        self.state = QpState::Ready;
        self.cm = Cm::Established;
        self.cm_deadline = None;
        if let Some(mr) = self.advertise.take() {
            let wr = WorkRequest::send(u64::MAX, mr.to_advert());
            self.post_batch(vec![wr]).expect("fresh queue has room");
        }
    }

    /// Queues WRs in order. Returns how many fit; none fitting is an error.
    pub fn post_batch(&mut self, wrs: Vec<WorkRequest>) -> Result<usize, RdmaError> {
        if self.state != QpState::Ready {
            return Err(RdmaError::QpState { expected: QpState::Ready, found: self.state });
        }
        if wrs.is_empty() {
            return Err(RdmaError::EmptyBatch);
        }
        for wr in &wrs {
            if wr.data.is_empty() || wr.data.len() > MAX_WR_LEN {
                return Err(RdmaError::WrLength(wr.data.len()));
            }
            if wr.remote_offset > MAX_REMOTE_OFFSET {
                return Err(RdmaError::WrLength(wr.data.len()));
            }
        }
        let mut accepted = 0;
        for wr in wrs {
            if self.sq.len() >= self.cfg.sq_depth {
                break;
            }
            self.segment(wr);
            accepted += 1;
        }
        if accepted == 0 {
            return Err(RdmaError::SqFull);
        }
        Ok(accepted)
    }

    fn segment(&mut self, wr: WorkRequest) {
        let total = wr.data.len();
        let n = total.div_ceil(self.cfg.mtu);
        let op = match wr.verb {
            Verb::Write => Opcode::Write,
            Verb::Send => Opcode::Send,
        };
        for k in 0..n {
            let lo = k * self.cfg.mtu;
            let hi = (lo + self.cfg.mtu).min(total);
            let mut h = Header::new(op, self.peer_qp, self.next_psn);
            h.flags = if k == 0 { FLAG_FIRST } else { 0 } | if k == n - 1 { FLAG_LAST } else { 0 };
            h.rkey = wr.rkey;
            h.remote_offset = wr.remote_offset + lo as u64;
            h.length = if k == 0 { total as u32 } else { (hi - lo) as u32 };
            let packet = Packet { header: h, payload: wr.data.slice(lo..hi) }.encode();
            self.segs.push_back(Segment { psn: self.next_psn, packet, payload_len: hi - lo, sent: false });
            self.next_psn = psn_add(self.next_psn, 1);
        }
        self.sq.push_back(PendingWr { wr_id: wr.wr_id, verb: wr.verb, last_psn: psn_add(self.next_psn, PSN_MASK) });
    }

    /// Completions in posting order, at most `max`.
    pub fn poll_cq(&mut self, max: usize) -> Vec<Completion> {
        let n = max.min(self.cq.len());
        self.cq.drain(..n).collect()
    }

    fn complete(&mut self, status: CompletionStatus) {
        let wr = self.sq.pop_front().expect("pending wr");
        if wr.wr_id == u64::MAX && wr.verb == Verb::Send {
            // internal region announcement
            return;
        }
        self.cq.push_back(Completion { wr_id: wr.wr_id, verb: wr.verb, status });
    }

    fn fail(&mut self, status: CompletionStatus) {
        if !self.sq.is_empty() {
            self.complete(status);
        }
        while !self.sq.is_empty() {
            self.complete(CompletionStatus::Flushed);
        }
        self.segs.clear();
        self.next_tx = 0;
        self.deadline = None;
        self.state = QpState::Error;
    }

    /// Retires the oldest `n` segments as acknowledged.
    fn retire(&mut self, n: usize, now: f64) {
        for _ in 0..n {
            let seg = self.segs.pop_front().expect("outstanding segment");
            self.stats.payload_bytes_acked += seg.payload_len as u64;
            if self.sq.front().is_some_and(|w| w.last_psn == seg.psn) {
                self.complete(CompletionStatus::Success);
            }
        }
        self.next_tx = self.next_tx.saturating_sub(n);
        if n > 0 {
            self.retries = 0;
            self.deadline = (self.next_tx > 0).then_some(now + self.cfg.rto);
        }
    }

    fn on_ack(&mut self, psn: u32, now: f64) {
        let Some(head) = self.segs.front() else { return };
        let d = psn_diff(psn, head.psn) as usize;
        if self.segs.get(d).is_some_and(|s| s.sent) {
            self.retire(d + 1, now);
        }
    }

    fn on_nak(&mut self, syndrome: u8, psn: u32, now: f64) {
        let Some(head) = self.segs.front() else { return };
        let d = psn_diff(psn, head.psn) as usize;
        if d >= self.segs.len() || (d > 0 && !self.segs[d - 1].sent) {
            return;
        }
        self.retire(d, now);
        match syndrome {
            NAK_REMOTE_ACCESS => self.fail(CompletionStatus::RemoteAccessError),
            _ => {
                self.next_tx = 0;
                self.deadline = None;
            }
        }
    }

    fn on_data(&mut self, pkt: Packet) {
        if self.cm == Cm::RepSent {
            // first packet stands in for a lost RTU
            self.become_ready();
        }
        if self.cm == Cm::RtuSent {
            self.cm = Cm::Established;
            self.cm_deadline = None;
        }
        if self.state != QpState::Ready && self.state != QpState::Error {
            return;
        }
        if let Some(p) = self.access_error {
            self.control(Opcode::Nak, NAK_REMOTE_ACCESS, p);
            return;
        }
        let psn = pkt.header.psn;
        let d = psn_diff(psn, self.expected_psn);
        if d == 0 {
            if let Err(()) = self.apply(&pkt) {
                self.access_error = Some(psn);
                self.control(Opcode::Nak, NAK_REMOTE_ACCESS, psn);
                return;
            }
            self.expected_psn = psn_add(psn, 1);
            self.nak_sent = false;
            self.control(Opcode::Ack, 0, psn);
        } else if d < PSN_MASK / 2 {
            if !self.nak_sent {
                self.nak_sent = true;
                self.control(Opcode::Nak, NAK_SEQUENCE, self.expected_psn);
            }
        } else {
            self.stats.duplicates_received += 1;
            self.control(Opcode::Ack, 0, psn_add(self.expected_psn, PSN_MASK));
        }
    }

    fn apply(&mut self, pkt: &Packet) -> Result<(), ()> {
        let h = &pkt.header;
        let first = h.flags & FLAG_FIRST != 0;
        let last = h.flags & FLAG_LAST != 0;
        match h.opcode {
            Opcode::Write => {
                if first {
                    let region = self.regions.get(&h.rkey).ok_or(())?;
                    let end = h.remote_offset.checked_add(h.length as u64).ok_or(())?;
                    if end > region.data.len() as u64 {
                        return Err(());
                    }
                    self.write_window = Some((h.rkey, h.remote_offset, end));
                }
                let (rkey, lo, hi) = self.write_window.ok_or(())?;
                let end = h.remote_offset + pkt.payload.len() as u64;
                if h.rkey != rkey || h.remote_offset < lo || end > hi {
                    return Err(());
                }
                let region = self.regions.get_mut(&rkey).ok_or(())?;
                region.data[h.remote_offset as usize..end as usize].copy_from_slice(&pkt.payload);
                if last {
                    self.write_window = None;
                }
            }
            Opcode::Send => {
                if first {
                    self.send_buf.clear();
                }
                self.send_buf.extend_from_slice(&pkt.payload);
                if last {
                    self.recv.push_back(self.send_buf.split().freeze());
                }
            }
            _ => unreachable!("data opcodes only"),
        }
        Ok(())
    }

    fn on_cm(&mut self, pkt: Packet, now: f64) {
        let src = match pkt.payload.get(..2) {
            Some(b) => u16::from_be_bytes([b[0], b[1]]),
            None => return,
        };
        match (pkt.header.opcode, self.cm) {
            (Opcode::CmReq, Cm::Listening | Cm::RepSent) => {
                self.peer_qp = src;
                self.expected_psn = pkt.header.psn;
                self.state = QpState::Init;
                self.cm = Cm::RepSent;
                self.send_cm(Opcode::CmRep);
            }
            (Opcode::CmReq, Cm::Established) if src == self.peer_qp => self.send_cm(Opcode::CmRep),
            (Opcode::CmRep, Cm::ReqSent) => {
                self.peer_qp = src;
                self.expected_psn = pkt.header.psn;
                self.state = QpState::Ready;
                self.cm = Cm::RtuSent;
                self.cm_tries = 0;
                self.cm_deadline = Some(now + self.cfg.cm_timeout);
                self.send_cm(Opcode::CmRtu);
            }
            (Opcode::CmRep, Cm::RtuSent | Cm::Established) => self.send_cm(Opcode::CmRtu),
            (Opcode::CmRtu, Cm::RepSent) => self.become_ready(),
            _ => {}
        }
    }

    pub fn on_packet(&mut self, bytes: Bytes, now: f64) {
        let pkt = match Packet::decode(bytes) {
            Ok(p) => p,
            Err(_) => {
                self.stats.malformed += 1;
                return;
            }
        };
        if pkt.header.qp_id == CM_QP {
            return self.on_cm(pkt, now);
        }
        if pkt.header.qp_id != self.qp_id {
            self.stats.malformed += 1;
            return;
        }
        match pkt.header.opcode {
            Opcode::Write | Opcode::Send => self.on_data(pkt),
            Opcode::Ack => self.on_ack(pkt.header.psn, now),
            Opcode::Nak => self.on_nak(pkt.header.flags, pkt.header.psn, now),
            _ => self.stats.malformed += 1,
        }
    }

    fn can_send(&self) -> bool {
        self.state == QpState::Ready && self.next_tx < self.segs.len() && self.next_tx < self.cfg.window
    }

    /// Earliest pending timer or transmit opportunity.
    pub fn next_deadline(&self) -> Option<f64> {
        let pace = self.can_send().then_some(self.tx_free);
        [self.deadline, self.cm_deadline, pace].into_iter().flatten().min_by(f64::total_cmp)
    }

    pub fn on_timer(&mut self, now: f64) {
        if self.cm_deadline.is_some_and(|d| d <= now) {
            self.cm_tries += 1;
            self.stats.cm_retries += 1;
            match self.cm {
                Cm::ReqSent if self.cm_tries > self.cfg.cm_retries => {
                    self.cm = Cm::Failed;
                    self.state = QpState::Error;
                    self.cm_deadline = None;
                }
                Cm::ReqSent => {
                    self.send_cm(Opcode::CmReq);
                    self.cm_deadline = Some(now + self.cfg.cm_timeout);
                }
                // peer stayed silent; its first packet would have confirmed
                Cm::RtuSent if self.cm_tries > self.cfg.cm_retries => {
                    self.cm = Cm::Established;
                    self.cm_deadline = None;
                }
                Cm::RtuSent => {
                    self.send_cm(Opcode::CmRtu);
                    self.cm_deadline = Some(now + self.cfg.cm_timeout);
                }
                _ => self.cm_deadline = None,
            }
        }
        if self.deadline.is_some_and(|d| d <= now) {
            self.deadline = None;
            self.retries += 1;
            self.stats.timeouts += 1;
            if self.retries > self.cfg.retry_budget {
                self.fail(CompletionStatus::RetryExceeded);
            } else {
                self.next_tx = 0;
            }
        }
    }

    fn pump_handle(&mut self) {
        let Some(link) = self.handle.take() else { return };
        let mut pending: Vec<Vec<WorkRequest>> = link.rejected.lock().expect("handle lock").drain(..).collect();
        pending.extend(link.commands.try_iter());
        for batch in pending {
            match self.post_batch(batch.clone()) {
                Ok(n) if n == batch.len() => {}
                Ok(n) => link.rejected.lock().expect("handle lock").push_back(batch[n..].to_vec()),
                Err(RdmaError::QpState { found: QpState::Error, .. }) => {
                    // the QP is gone; every WR still completes
                    let mut cq = link.completions.lock().expect("cq lock");
                    for wr in batch {
                        cq.push_back(Completion { wr_id: wr.wr_id, verb: wr.verb, status: CompletionStatus::Flushed });
                    }
                }
                Err(_) => link.rejected.lock().expect("handle lock").push_back(batch),
            }
        }
        link.completions.lock().expect("cq lock").extend(self.cq.drain(..));
        self.handle = Some(link);
    }

    /// Packets to put on the wire now.
    pub fn poll_transmit(&mut self, now: f64) -> Vec<Bytes> {
        self.pump_handle();
        let mut out: Vec<Bytes> = self.outbox.drain(..).collect();
        if self.state == QpState::Ready {
            let start = self.next_tx;
            while self.can_send() && self.tx_free <= now {
                let seg = &mut self.segs[self.next_tx];
                self.tx_free = self.tx_free.max(now) + seg.packet.len() as f64 * 8.0 / self.cfg.line_rate;
                if seg.sent {
                    self.stats.retransmitted_packets += 1;
                }
                seg.sent = true;
                self.stats.data_packets_sent += 1;
                self.stats.payload_bytes_sent += seg.payload_len as u64;
                out.push(seg.packet.clone());
                self.next_tx += 1;
            }
            if self.next_tx > start && self.deadline.is_none() {
                self.deadline = Some(now + self.cfg.rto);
            }
        }
        self.pump_handle();
        out
    }
}
