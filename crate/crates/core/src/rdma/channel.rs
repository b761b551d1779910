use std::cmp::Reverse;
use std::collections::BinaryHeap;
use std::sync::{Arc, Mutex};

use bytes::Bytes;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::wire::TraceRecord;
use super::RdmaError;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ChannelModel {
    /// Largest payload per packet, bytes.
    pub mtu: usize,
    pub loss_probability: f64,
    pub one_way_delay: f64,
    /// Serialization rate, bits/s.
    pub bandwidth: f64,
    /// Add uniform random extra delay of up to `jitter`, letting packets
    /// overtake each other.
    pub reorder: bool,
    pub jitter: f64,
    /// Probability that a delivered packet is delivered twice.
    pub duplicate_probability: f64,
    pub seed: u64,
}

impl Default for ChannelModel {
    fn default() -> Self {
        Self {
            mtu: 4096,
            loss_probability: 0.0,
            one_way_delay: 1e-6,
            bandwidth: 100e9,
            reorder: false,
            jitter: 2e-6,
            duplicate_probability: 0.0,
            seed: 0,
        }
    }
}

impl ChannelModel {
    pub fn validate(&self) -> Result<(), RdmaError> {
        if !(0.0..1.0).contains(&self.loss_probability) {
            return Err(RdmaError::Channel(format!("loss probability {} outside [0, 1)", self.loss_probability)));
        }
        if !(0.0..=1.0).contains(&self.duplicate_probability) {
            return Err(RdmaError::Channel("duplicate probability outside [0, 1]".into()));
        }
        if self.mtu == 0 || !(self.bandwidth > 0.0) || !(self.one_way_delay >= 0.0) || !(self.jitter >= 0.0) {
            return Err(RdmaError::Channel("mtu, bandwidth, delay and jitter must be positive".into()));
        }
        Ok(())
    }

    /// Round trip of one full packet and its acknowledgement on an idle link.
    pub fn base_rtt(&self) -> f64 {
        let ser = (self.mtu + super::wire::HEADER_LEN) as f64 * 8.0 / self.bandwidth;
        2.0 * self.one_way_delay + 2.0 * ser + if self.reorder { self.jitter } else { 0.0 }
    }
}

/// One direction of a simulated link.
pub struct SimChannel {
    model: ChannelModel,
    rng: ChaCha8Rng,
    link_free: f64,
    loss_override: Option<f64>,
}

impl SimChannel {
    pub fn new(model: ChannelModel, stream: u64) -> Result<Self, RdmaError> {
        model.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(model.seed);
        rng.set_stream(stream);
        Ok(Self { model, rng, link_free: f64::NEG_INFINITY, loss_override: None })
    }

    pub fn model(&self) -> &ChannelModel {
        &self.model
    }

    /// Fault injection: replaces the loss probability, allowing 1.0.
    pub fn override_loss(&mut self, p: Option<f64>) {
        self.loss_override = p;
    }

    /// Arrival times of the copies of a packet handed over at `now`.
    pub fn send(&mut self, now: f64, len: usize) -> Vec<f64> {
        let depart = now.max(self.link_free) + len as f64 * 8.0 / self.model.bandwidth;
        self.link_free = depart;
        let loss = self.loss_override.unwrap_or(self.model.loss_probability);
        if loss > 0.0 && self.rng.random::<f64>() < loss {
            return Vec::new();
        }
        let mut arrive = depart + self.model.one_way_delay;
        if self.model.reorder {
            arrive += self.rng.random::<f64>() * self.model.jitter;
        }
        let mut out = vec![arrive];
        if self.model.duplicate_probability > 0.0 && self.rng.random::<f64>() < self.model.duplicate_probability {
            out.push(arrive + self.rng.random::<f64>() * self.model.jitter.max(1e-9));
        }
        out
    }
}

/// Endpoint-facing side of a packet link.
pub trait PacketLink {
    fn transmit(&mut self, now: f64, packet: Bytes) -> Result<(), RdmaError>;
    /// Packets that have arrived by `now`, in arrival order.
    fn receive(&mut self, now: f64) -> Result<Vec<Bytes>, RdmaError>;
}

#[derive(Debug, PartialEq)]
struct Arrival {
    time: f64,
    seq: u64,
    bytes: Bytes,
}
impl Eq for Arrival {}
impl PartialOrd for Arrival {
    fn partial_cmp(&self, other: &Self) -> Option<std::cmp::Ordering> {
        Some(self.cmp(other))
    }
}
impl Ord for Arrival {
    fn cmp(&self, other: &Self) -> std::cmp::Ordering {
        self.time.total_cmp(&other.time).then(self.seq.cmp(&other.seq))
    }
}

struct Shared {
    channels: [SimChannel; 2],
    queues: [BinaryHeap<Reverse<Arrival>>; 2],
    seq: u64,
    trace: Option<Vec<TraceRecord>>,
}

/// One end of an in-process simulated duplex link.
#[derive(Clone)]
pub struct SimLinkEnd {
    side: usize,
    shared: Arc<Mutex<Shared>>,
}

/// Two connected ends. Each direction draws from its own random stream.
pub fn sim_link_pair(model: ChannelModel) -> Result<(SimLinkEnd, SimLinkEnd), RdmaError> {
    let shared = Arc::new(Mutex::new(Shared {
        channels: [SimChannel::new(model, 0)?, SimChannel::new(model, 1)?],
        queues: [BinaryHeap::new(), BinaryHeap::new()],
        seq: 0,
        trace: None,
    }));
    Ok((SimLinkEnd { side: 0, shared: shared.clone() }, SimLinkEnd { side: 1, shared }))
}

impl SimLinkEnd {
    fn lock(&self) -> std::sync::MutexGuard<'_, Shared> {
        self.shared.lock().expect("link lock")
    }

    pub fn next_arrival(&self) -> Option<f64> {
        self.lock().queues[self.side].peek().map(|a| a.0.time)
    }

    /// Fault injection on the direction leaving this end.
    pub fn override_loss(&self, p: Option<f64>) {
        self.lock().channels[self.side].override_loss(p);
    }

    pub fn enable_trace(&self) {
        self.lock().trace.get_or_insert_with(Vec::new);
    }

    pub fn take_trace(&self) -> Vec<TraceRecord> {
        self.lock().trace.as_mut().map(std::mem::take).unwrap_or_default()
    }
}

impl PacketLink for SimLinkEnd {
    fn transmit(&mut self, now: f64, packet: Bytes) -> Result<(), RdmaError> {
        let mut s = self.lock();
        let arrivals = s.channels[self.side].send(now, packet.len());
        if let Some(t) = s.trace.as_mut() {
            t.push(TraceRecord {
                time: now,
                direction: self.side as u8,
                dropped: arrivals.is_empty(),
                bytes: packet.clone(),
            });
        }
        for time in arrivals {
            s.seq += 1;
            let seq = s.seq;
            s.queues[1 - self.side].push(Reverse(Arrival { time, seq, bytes: packet.clone() }));
        }
        Ok(())
    }

    fn receive(&mut self, now: f64) -> Result<Vec<Bytes>, RdmaError> {
        let mut s = self.lock();
        let q = &mut s.queues[self.side];
        let mut out = Vec::new();
        while q.peek().is_some_and(|a| a.0.time <= now) {
            out.push(q.pop().expect("peeked").0.bytes);
        }
        Ok(out)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn loss_must_be_below_one() {
        assert!(ChannelModel { loss_probability: 1.0, ..Default::default() }.validate().is_err());
        assert!(ChannelModel { loss_probability: 0.99, ..Default::default() }.validate().is_ok());
    }

    #[test]
    fn serialization_and_delay() {
        let mut c =
            SimChannel::new(ChannelModel { bandwidth: 8e9, one_way_delay: 1e-6, ..Default::default() }, 0).unwrap();
        // 1000 bytes at 8 Gb/s = 1 µs on the wire
        assert_eq!(c.send(0.0, 1000), vec![2e-6]);
        // queued behind the first
        assert_eq!(c.send(0.0, 1000), vec![3e-6]);
    }

    #[test]
    fn forced_loss_drops_everything() {
        let (mut a, mut b) = sim_link_pair(ChannelModel::default()).unwrap();
        a.override_loss(Some(1.0));
        for _ in 0..100 {
            a.transmit(0.0, Bytes::from_static(b"x")).unwrap();
        }
        assert!(b.receive(1.0).unwrap().is_empty());
        b.transmit(0.0, Bytes::from_static(b"y")).unwrap();
        assert_eq!(a.receive(1.0).unwrap().len(), 1);
    }

    #[test]
    fn reorder_lets_packets_overtake() {
        let m = ChannelModel { reorder: true, jitter: 10e-6, seed: 3, ..Default::default() };
        let (mut a, mut b) = sim_link_pair(m).unwrap();
        for i in 0..50u8 {
            a.transmit(0.0, Bytes::from(vec![i])).unwrap();
        }
        let got: Vec<u8> = b.receive(1.0).unwrap().iter().map(|p| p[0]).collect();
        assert_eq!(got.len(), 50);
        assert!(got.windows(2).any(|w| w[0] > w[1]));
    }
}
