use super::channel::{sim_link_pair, ChannelModel, PacketLink, SimLinkEnd};
use super::endpoint::{Endpoint, EndpointConfig};
use super::{MemoryRegion, RdmaError};

/// Two endpoints joined by a simulated duplex link, advanced event by
/// event in simulated time. `a` initiates, `b` holds the target memory.
pub struct Fabric {
    pub a: Endpoint,
    pub b: Endpoint,
    pub link_a: SimLinkEnd,
    pub link_b: SimLinkEnd,
    now: f64,
}

impl Fabric {
    pub fn new(model: ChannelModel, cfg_a: EndpointConfig, cfg_b: EndpointConfig) -> Result<Self, RdmaError> {
        let (link_a, link_b) = sim_link_pair(model)?;
        Ok(Self { a: Endpoint::new(cfg_a), b: Endpoint::new(cfg_b), link_a, link_b, now: 0.0 })
    }

    /// Endpoints configured from the channel, seeds derived from the
    /// channel seed.
    pub fn with_channel(model: ChannelModel) -> Result<Self, RdmaError> {
        let seed = model.seed.wrapping_mul(0x9E37_79B9_7F4A_7C15);
        Self::new(model, EndpointConfig::for_channel(&model, seed), EndpointConfig::for_channel(&model, seed ^ 1))
    }

    pub fn now(&self) -> f64 {
        self.now
    }

    fn next_event(&self) -> Option<f64> {
        [self.link_a.next_arrival(), self.link_b.next_arrival(), self.a.next_deadline(), self.b.next_deadline()]
            .into_iter()
            .flatten()
            .min_by(f64::total_cmp)
    }

    /// Runs both engines at the current time: deliver, fire timers, transmit.
    pub fn step(&mut self) -> Result<(), RdmaError> {
        let now = self.now;
        for (ep, link) in [(&mut self.a, &mut self.link_a), (&mut self.b, &mut self.link_b)] {
            for p in link.receive(now)? {
                ep.on_packet(p, now);
            }
            ep.on_timer(now);
        }
        for (ep, link) in [(&mut self.a, &mut self.link_a), (&mut self.b, &mut self.link_b)] {
            for p in ep.poll_transmit(now) {
                link.transmit(now, p)?;
            }
        }
        Ok(())
    }

    /// Jumps to the next event and processes it. False when nothing is pending.
    pub fn advance(&mut self) -> Result<bool, RdmaError> {
        self.step()?;
        match self.next_event() {
            Some(t) => {
                self.now = self.now.max(t);
                self.step()?;
                Ok(true)
            }
            None => Ok(false),
        }
    }

    /// Processes every event up to `t`, then sits at `t`.
    pub fn advance_to(&mut self, t: f64) -> Result<(), RdmaError> {
        self.step()?;
        while let Some(e) = self.next_event().filter(|&e| e <= t) {
            self.now = self.now.max(e);
            self.step()?;
        }
        self.now = self.now.max(t);
        self.step()
    }

    /// Advances until `done` holds. Gives up once the clock passes
    /// `limit` or the fabric goes idle.
    pub fn run_until(&mut self, limit: f64, mut done: impl FnMut(&mut Self) -> bool) -> Result<(), RdmaError> {
        loop {
            if done(self) {
                return Ok(());
            }
            if self.now > limit || !self.advance()? {
                return Err(RdmaError::Stalled(self.now));
            }
        }
    }

    /// Handshake: `b` registers `region_len` bytes and listens, `a`
    /// connects and receives the region announcement.
    pub fn connect(&mut self, region_len: usize) -> Result<MemoryRegion, RdmaError> {
        let mr = self.b.register_memory(region_len)?;
        self.b.listen(Some(mr));
        self.a.connect(self.now)?;
        let mut advert = None;
        let limit = self.now + 1.0;
        let r = self.run_until(limit, |f| {
            advert = advert.take().or_else(|| f.a.take_message());
            advert.is_some() || f.a.connect_failed()
        });
        match (advert, r) {
            (Some(m), _) => MemoryRegion::from_advert(&m),
            (None, _) if self.a.connect_failed() => {
                Err(RdmaError::Connect(format!("no reply after {} requests", self.a.stats().cm_retries)))
            }
            (None, Err(e)) => Err(e),
            (None, Ok(())) => unreachable!("run_until returned without a result"),
        }
    }

    /// Drains `a`'s completion queue until `n` completions have arrived.
    pub fn wait_completions(&mut self, n: usize, limit: f64) -> Result<Vec<super::Completion>, RdmaError> {
        let mut out = Vec::with_capacity(n);
        self.run_until(limit, |f| {
            out.extend(f.a.poll_cq(n - out.len()));
            out.len() == n
        })?;
        Ok(out)
    }
}

#[cfg(test)]
mod tests {
    use bytes::Bytes;

    use super::super::{CompletionStatus, QpState, WorkRequest};
    use super::*;

    fn pattern(len: usize, seed: u8) -> Bytes {
        (0..len).map(|i| (i as u8).wrapping_mul(31).wrapping_add(seed)).collect::<Vec<_>>().into()
    }

    #[test]
    fn lossless_connect_takes_one_round() {
        let mut f = Fabric::with_channel(ChannelModel::default()).unwrap();
        let mr = f.connect(4096).unwrap();
        assert_eq!(mr.length, 4096);
        assert_eq!(f.a.stats().cm_retries, 0);
        assert_eq!(f.a.state(), QpState::Ready);
        assert_eq!(f.b.state(), QpState::Ready);
    }

    #[test]
    fn absent_responder_fails() {
        let mut f = Fabric::with_channel(ChannelModel::default()).unwrap();
        f.a.connect(0.0).unwrap();
        let _ = f.run_until(1.0, |f| f.a.connect_failed());
        assert!(f.a.connect_failed());
        assert_eq!(f.a.state(), QpState::Error);
        assert_eq!(f.a.stats().cm_retries, f.a.config().cm_retries as u64 + 1);
    }

    #[test]
    fn lossy_handshake_retries() {
        let m = ChannelModel { loss_probability: 0.3, seed: 11, ..Default::default() };
        let mut f = Fabric::with_channel(m).unwrap();
        f.a.connect(0.0).unwrap();
        f.b.listen(None);
        // with no advert, wait until both sides are ready
        f.run_until(1.0, |f| f.a.state() == QpState::Ready && f.b.state() == QpState::Ready).unwrap();
    }

    #[test]
    fn packet_accounting_without_loss() {
        let mut f = Fabric::with_channel(ChannelModel::default()).unwrap();
        let mr = f.connect(100_000).unwrap();
        let before = (f.a.stats().data_packets_sent, f.b.stats().acks_sent);
        f.a.post_batch(vec![WorkRequest::write(7, mr.rkey, 0, pattern(100_000, 1))]).unwrap();
        let c = f.wait_completions(1, 1.0).unwrap();
        assert_eq!(c[0].status, CompletionStatus::Success);
        let pkts = f.a.stats().data_packets_sent - before.0;
        assert_eq!(pkts, 100_000u64.div_ceil(4096));
        assert_eq!(f.b.stats().acks_sent - before.1, pkts);
        assert_eq!(f.a.stats().retransmitted_packets, 0);
        assert_eq!(f.b.region(mr.rkey).unwrap(), &pattern(100_000, 1)[..]);
    }

    #[test]
    fn eight_quarter_mebibyte_writes() {
        let mut f = Fabric::with_channel(ChannelModel::default()).unwrap();
        let mr = f.connect(8 << 18).unwrap();
        let src = pattern(8 << 18, 9);
        let wrs = (0..8).map(|i| {
            WorkRequest::write(i, mr.rkey, (i << 18) as u64, src.slice((i as usize) << 18..((i as usize + 1) << 18)))
        });
        assert_eq!(f.a.post_batch(wrs.collect()).unwrap(), 8);
        let c = f.wait_completions(8, 1.0).unwrap();
        assert_eq!(c.iter().map(|c| c.wr_id).collect::<Vec<_>>(), (0..8).collect::<Vec<_>>());
        assert!(c.iter().all(|c| c.status == CompletionStatus::Success));
        assert_eq!(f.b.region(mr.rkey).unwrap(), &src[..]);
    }

    #[test]
    fn out_of_bounds_write_is_fatal_and_harmless() {
        let mut f = Fabric::with_channel(ChannelModel::default()).unwrap();
        let mr = f.connect(10_000).unwrap();
        let wrs = vec![
            WorkRequest::write(1, mr.rkey, 0, pattern(100, 1)),
            WorkRequest::write(2, mr.rkey, 9_000, pattern(2_000, 2)),
            WorkRequest::write(3, mr.rkey, 200, pattern(100, 3)),
        ];
        f.a.post_batch(wrs).unwrap();
        let c = f.wait_completions(3, 1.0).unwrap();
        let st: Vec<_> = c.iter().map(|c| c.status).collect();
        assert_eq!(st, vec![CompletionStatus::Success, CompletionStatus::RemoteAccessError, CompletionStatus::Flushed]);
        let r = f.b.region(mr.rkey).unwrap();
        assert_eq!(&r[..100], &pattern(100, 1)[..]);
        assert!(r[100..].iter().all(|&b| b == 0));
        assert_eq!(f.a.state(), QpState::Error);
        assert!(f.a.post_batch(vec![WorkRequest::send(4, pattern(1, 0))]).is_err());
    }

    #[test]
    fn stale_rkey_is_remote_access_error() {
        let mut f = Fabric::with_channel(ChannelModel::default()).unwrap();
        let mr = f.connect(4096).unwrap();
        f.b.deregister_memory(mr.rkey).unwrap();
        f.a.post_batch(vec![WorkRequest::write(1, mr.rkey, 0, pattern(10, 0))]).unwrap();
        assert_eq!(f.wait_completions(1, 1.0).unwrap()[0].status, CompletionStatus::RemoteAccessError);
    }

    #[test]
    fn total_loss_exhausts_retries() {
        let mut f = Fabric::with_channel(ChannelModel::default()).unwrap();
        let mr = f.connect(1 << 16).unwrap();
        f.link_a.override_loss(Some(1.0));
        let wrs = (0..3).map(|i| WorkRequest::write(i, mr.rkey, 0, pattern(5000, 0))).collect();
        f.a.post_batch(wrs).unwrap();
        let c = f.wait_completions(3, 1.0).unwrap();
        assert_eq!(c[0].status, CompletionStatus::RetryExceeded);
        assert!(c[1..].iter().all(|c| c.status == CompletionStatus::Flushed));
        assert_eq!(f.a.state(), QpState::Error);
        assert_eq!(f.a.stats().timeouts, 8);
    }

    #[test]
    fn send_is_delivered_whole() {
        let mut f = Fabric::with_channel(ChannelModel { mtu: 1000, ..Default::default() }).unwrap();
        f.connect(16).unwrap();
        f.a.post_batch(vec![WorkRequest::send(1, pattern(5_500, 4)), WorkRequest::send(2, pattern(3, 5))]).unwrap();
        f.wait_completions(2, 1.0).unwrap();
        assert_eq!(f.b.take_message().unwrap(), pattern(5_500, 4));
        assert_eq!(f.b.take_message().unwrap(), pattern(3, 5));
    }

    #[test]
    fn post_rules() {
        let mut f = Fabric::with_channel(ChannelModel::default()).unwrap();
        assert!(matches!(
            f.a.post_batch(vec![WorkRequest::send(1, pattern(1, 0))]),
            Err(RdmaError::QpState { found: QpState::Reset, .. })
        ));
        f.connect(64).unwrap();
        assert!(matches!(f.a.post_batch(vec![]), Err(RdmaError::EmptyBatch)));
        assert!(matches!(f.a.post_batch(vec![WorkRequest::send(1, Bytes::new())]), Err(RdmaError::WrLength(0))));
        let depth = f.a.config().sq_depth;
        let wrs: Vec<_> = (0..depth as u64 + 5).map(|i| WorkRequest::send(i, pattern(1, 0))).collect();
        assert_eq!(f.a.post_batch(wrs).unwrap(), depth);
        assert!(matches!(f.a.post_batch(vec![WorkRequest::send(9, pattern(1, 0))]), Err(RdmaError::SqFull)));
    }

    #[test]
    fn registrations_are_distinct() {
        let mut e = Endpoint::new(EndpointConfig::default());
        let a = e.register_memory(10).unwrap();
        let b = e.register_memory(10).unwrap();
        assert_ne!(a.rkey, b.rkey);
        assert!(a.base + a.length <= b.base);
        assert!(matches!(e.register_memory(0), Err(RdmaError::RegionLength)));
    }

    #[test]
    fn psn_wraps_during_transfer() {
        let model = ChannelModel { loss_probability: 0.02, seed: 5, ..Default::default() };
        let cfg = EndpointConfig {
            initial_psn: Some(super::super::wire::PSN_MASK - 20),
            ..EndpointConfig::for_channel(&model, 1)
        };
        let mut f = Fabric::new(model, cfg, EndpointConfig::for_channel(&model, 2)).unwrap();
        let mr = f.connect(200_000).unwrap();
        f.a.post_batch(vec![WorkRequest::write(1, mr.rkey, 0, pattern(200_000, 3))]).unwrap();
        assert_eq!(f.wait_completions(1, 1.0).unwrap()[0].status, CompletionStatus::Success);
        assert_eq!(f.b.region(mr.rkey).unwrap(), &pattern(200_000, 3)[..]);
    }

    #[test]
    fn handle_posts_from_another_thread() {
        let mut f = Fabric::with_channel(ChannelModel::default()).unwrap();
        let mr = f.connect(1 << 16).unwrap();
        let h = f.a.verbs_handle();
        let poster = h.clone();
        std::thread::spawn(move || {
            for i in 0..16u64 {
                poster.post_batch(vec![WorkRequest::write(i, mr.rkey, i * 4096, pattern(4096, i as u8))]).unwrap();
            }
        })
        .join()
        .unwrap();
        let mut got = Vec::new();
        f.run_until(1.0, |_| {
            got.extend(h.poll_cq(16));
            got.len() == 16
        })
        .unwrap();
        assert_eq!(got.iter().map(|c| c.wr_id).collect::<Vec<_>>(), (0..16).collect::<Vec<_>>());
    }
}
