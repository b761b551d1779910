use std::collections::VecDeque;

use super::{
    decode_8b10b, is_comma, CodeError, CodecState, Descrambler, Disparity, IlaConfig, LaneStream, LinkError,
    LinkParams, ILA_CONFIG_LEN, ILA_CONFIG_OFFSET, ILA_MULTIFRAMES, K28_0, K28_3, K28_4,
};
use crate::block::SampleBlock;

/// Consecutive commas needed to declare code-group synchronization.
pub const CGS_LOCK_COMMAS: usize = 4;
/// Symbols in the window used to detect loss of synchronization.
pub const LOSS_WINDOW: usize = 8;
/// Invalid symbols within [`LOSS_WINDOW`] that drop synchronization.
pub const LOSS_INVALID_SYMBOLS: usize = 3;

/// Outcome of a receive run.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct LinkStatus {
    pub cgs_locked: bool,
    pub ila_valid: bool,
    /// Arrival delay of each lane's first data octet relative to the
    /// transmit schedule, octet clocks.
    pub lane_skew: Vec<u64>,
    /// Octet clocks from the data-start multiframe boundary at the
    /// transmitter to the release of the first aligned frame.
    pub latency_octets: u64,
    /// First sample index delivered.
    pub data_start_frame: u64,
    pub resync_events: u32,
    pub symbol_errors: u64,
    pub disparity_errors: u64,
}

#[derive(Debug)]
enum LaneState {
    Search { commas: usize },
    Locked,
    Ila { octets: Vec<(u8, bool)> },
    Data,
}

#[derive(Debug)]
enum LaneEvent {
    None,
    LostLock,
}

#[derive(Debug)]
struct LaneRx {
    index: usize,
    state: LaneState,
    codec: CodecState,
    recent: VecDeque<bool>,
    fifo: VecDeque<u8>,
    descrambler: Descrambler,
    data_arrival: Option<u64>,
    symbol_errors: u64,
    disparity_errors: u64,
}

impl LaneRx {
    fn new(index: usize) -> Self {
        Self {
            index,
            state: LaneState::Search { commas: 0 },
            codec: CodecState::default(),
            recent: VecDeque::with_capacity(LOSS_WINDOW),
            fifo: VecDeque::new(),
            descrambler: Descrambler::default(),
            data_arrival: None,
            symbol_errors: 0,
            disparity_errors: 0,
        }
    }

    fn is_data(&self) -> bool {
        matches!(self.state, LaneState::Data)
    }

    fn note(&mut self, valid: bool) -> LaneEvent {
        if self.recent.len() == LOSS_WINDOW {
            self.recent.pop_front();
        }
        self.recent.push_back(valid);
        if self.recent.iter().filter(|v| !**v).count() >= LOSS_INVALID_SYMBOLS {
            self.state = LaneState::Search { commas: 0 };
            self.recent.clear();
            self.fifo.clear();
            self.data_arrival = None;
            LaneEvent::LostLock
        } else {
            LaneEvent::None
        }
    }

    fn accept(&mut self, symbol: u16, cycle: u64, params: &LinkParams) -> Result<LaneEvent, LinkError> {
        if let LaneState::Search { commas } = &mut self.state {
            if is_comma(symbol) {
                // adopt the disparity of whatever comma we see
                self.codec.running_disparity =
                    if symbol == super::COMMA_RD_MINUS { Disparity::Positive } else { Disparity::Negative };
                *commas += 1;
                if *commas >= CGS_LOCK_COMMAS {
                    self.state = LaneState::Locked;
                    self.recent.clear();
                }
            } else {
                *commas = 0;
            }
            return Ok(LaneEvent::None);
        }

        // a disparity error still yields the octet; it only hints at an
        // earlier error on the line
        let (decoded, valid) = match decode_8b10b(symbol, &mut self.codec) {
            Ok(d) => (Some((d.octet, d.is_control)), true),
            Err(CodeError::Disparity { octet, is_control, .. }) => {
                self.disparity_errors += 1;
                (Some((octet, is_control)), false)
            }
            Err(_) => {
                self.symbol_errors += 1;
                (None, false)
            }
        };
        if let LaneEvent::LostLock = self.note(valid) {
            return Ok(LaneEvent::LostLock);
        }

        match &mut self.state {
            LaneState::Search { .. } => unreachable!(),
            LaneState::Locked => match decoded {
                Some((o, true)) if o == super::K28_5 => {}
                Some((o, true)) if o == K28_0 => self.state = LaneState::Ila { octets: vec![(o, true)] },
                None => {}
                Some(_) => {
                    return Err(LinkError::IlaFraming { lane: self.index, reason: "data before /R/".into() });
                }
            },
            LaneState::Ila { octets } => {
                octets.push(decoded.unwrap_or((0, false)));
                if octets.len() == ILA_MULTIFRAMES * params.multiframe_octets() {
                    validate_ila(self.index, octets, params)?;
                    self.state = LaneState::Data;
                    self.data_arrival = Some(cycle + 1);
                }
            }
            LaneState::Data => {
                let o = decoded.map(|(o, _)| o).unwrap_or(0);
                let o = if params.scrambling { self.descrambler.descramble_octet(o) } else { o };
                self.fifo.push_back(o);
            }
        }
        Ok(LaneEvent::None)
    }
}

fn validate_ila(lane: usize, octets: &[(u8, bool)], params: &LinkParams) -> Result<(), LinkError> {
    let fk = params.multiframe_octets();
    let framing = |reason: &str| LinkError::IlaFraming { lane, reason: reason.into() };
    for mf in 0..ILA_MULTIFRAMES {
        if octets[mf * fk] != (K28_0, true) {
            return Err(framing("multiframe does not start with /R/"));
        }
        if octets[mf * fk + fk - 1] != (K28_3, true) {
            return Err(framing("multiframe does not end with /A/"));
        }
    }
    if octets[fk + 1] != (K28_4, true) {
        return Err(framing("missing /Q/"));
    }
    let raw: Vec<u8> =
        octets[fk + ILA_CONFIG_OFFSET..fk + ILA_CONFIG_OFFSET + ILA_CONFIG_LEN].iter().map(|&(o, _)| o).collect();
    let cfg = IlaConfig::from_octets(&raw).ok_or_else(|| framing("configuration checksum mismatch"))?;
    let expected = params.ila_config(lane as u8);
    let checks: [(&'static str, u32, u32); 7] = [
        ("DID", expected.device_id as u32, cfg.device_id as u32),
        ("LID", expected.lane_id as u32, cfg.lane_id as u32),
        ("L", expected.lanes as u32, cfg.lanes as u32),
        ("F", expected.octets_per_frame as u32, cfg.octets_per_frame as u32),
        ("K", expected.frames_per_multiframe as u32, cfg.frames_per_multiframe as u32),
        ("M", expected.converters as u32, cfg.converters as u32),
        ("SCR", expected.scrambling as u32, cfg.scrambling as u32),
    ];
    for (field, e, f) in checks {
        if e != f {
            return Err(LinkError::Config { lane, field, expected: e, found: f });
        }
    }
    Ok(())
}

/// Receive side of one link, advanced one octet clock per [`RxLink::step`].
pub struct RxLink {
    params: LinkParams,
    lanes: Vec<LaneRx>,
    data_start_frame: u64,
    data_start_cycle: u64,
    release_cycle: u64,
    /// Sample index of the next frame [`RxLink::take_samples`] returns.
    next_sample: u64,
    released: bool,
    halted: bool,
    finished: bool,
    frame: Vec<u8>,
    frame_fill: usize,
    out: Vec<Vec<i16>>,
    resync_events: u32,
}

impl RxLink {
    /// `start_cycle` is the octet clock at which the transmitter began
    /// sending; with it the receiver knows on which multiframe boundary the
    /// data phase starts.
    pub fn new(params: LinkParams, start_cycle: u64) -> Result<Self, LinkError> {
        params.validate()?;
        let f = params.octets_per_frame as u64;
        let data_start_frame = params.data_start_frame(start_cycle.div_ceil(f));
        let data_start_cycle = data_start_frame * f;
        let release_cycle = data_start_cycle + params.elastic_depth as u64;
        Ok(Self {
            lanes: (0..params.lanes).map(LaneRx::new).collect(),
            frame: vec![0; params.octets_per_frame * params.lanes],
            out: vec![Vec::new(); params.converters],
            params,
            data_start_frame,
            data_start_cycle,
            release_cycle,
            next_sample: data_start_frame,
            released: false,
            halted: false,
            finished: false,
            frame_fill: 0,
            resync_events: 0,
        })
    }

    pub fn release_cycle(&self) -> u64 {
        self.release_cycle
    }

    pub fn is_finished(&self) -> bool {
        self.finished
    }

    /// Feeds the symbols arriving on each lane at octet clock `cycle`
    /// (`None` when a lane is idle or its input has ended). Returns the
    /// number of complete frames emitted so far.
    pub fn step(&mut self, cycle: u64, arrivals: &[Option<u16>]) -> Result<usize, LinkError> {
        if arrivals.len() != self.lanes.len() {
            return Err(LinkError::LaneCount { expected: self.lanes.len(), found: arrivals.len() });
        }
        for (lane, arrival) in self.lanes.iter_mut().zip(arrivals) {
            if let Some(sym) = *arrival {
                if let LaneEvent::LostLock = lane.accept(sym, cycle, &self.params)? {
                    self.resync_events += 1;
                    self.halted = true;
                }
            }
        }
        if self.halted || self.finished || cycle < self.release_cycle {
            return Ok(self.frames_out());
        }
        for lane in &self.lanes {
            if !lane.is_data() || lane.fifo.is_empty() {
                if cycle == self.release_cycle {
                    if matches!(lane.state, LaneState::Search { .. }) {
                        return Err(LinkError::NoLock { lane: lane.index });
                    }
                    let min_skew = lane
                        .data_arrival
                        .map(|a| a - self.data_start_cycle)
                        .unwrap_or(self.params.elastic_depth as u64 + 1);
                    return Err(LinkError::Alignment {
                        lane: lane.index,
                        skew: min_skew,
                        depth: self.params.elastic_depth,
                    });
                }
                self.finished = true;
                return Ok(self.frames_out());
            }
        }
        let f = self.params.octets_per_frame;
        for (l, lane) in self.lanes.iter_mut().enumerate() {
            debug_assert!(lane.fifo.len() <= self.params.elastic_depth + 1);
            self.frame[l * f + self.frame_fill] = lane.fifo.pop_front().expect("checked non-empty");
        }
        self.released = true;
        self.frame_fill += 1;
        if self.frame_fill == f {
            self.frame_fill = 0;
            for (ch, out) in self.out.iter_mut().enumerate() {
                out.push(i16::from_be_bytes([self.frame[2 * ch], self.frame[2 * ch + 1]]));
            }
        }
        Ok(self.frames_out())
    }

    fn frames_out(&self) -> usize {
        self.out[0].len()
    }

    pub fn status(&self) -> LinkStatus {
        let released = self.released;
        LinkStatus {
            cgs_locked: self.lanes.iter().all(|l| !matches!(l.state, LaneState::Search { .. })),
            ila_valid: self.lanes.iter().all(|l| l.data_arrival.is_some()),
            lane_skew: self
                .lanes
                .iter()
                .map(|l| l.data_arrival.map(|a| a - self.data_start_cycle).unwrap_or(0))
                .collect(),
            latency_octets: if released { self.release_cycle - self.data_start_cycle } else { 0 },
            data_start_frame: self.data_start_frame,
            resync_events: self.resync_events,
            symbol_errors: self.lanes.iter().map(|l| l.symbol_errors).sum(),
            disparity_errors: self.lanes.iter().map(|l| l.disparity_errors).sum(),
        }
    }

    /// Samples released since the previous call.
    pub fn take_samples(&mut self) -> Result<SampleBlock, LinkError> {
        let per_channel: Vec<Vec<i16>> = self.out.iter_mut().map(std::mem::take).collect();
        let block = SampleBlock::from_channels(&per_channel, self.next_sample, self.params.frame_clock)?;
        self.next_sample += block.samples_per_channel() as u64;
        Ok(block)
    }

    fn check_lock(&self) -> Result<(), LinkError> {
        match self.lanes.iter().find(|l| matches!(l.state, LaneState::Search { .. })) {
            Some(l) if self.resync_events == 0 => Err(LinkError::NoLock { lane: l.index }),
            _ => Ok(()),
        }
    }
}

/// Receives a complete capture of every lane of one link.
pub fn rx_link(lanes: &[LaneStream], params: &LinkParams) -> Result<(SampleBlock, LinkStatus), LinkError> {
    if lanes.len() != params.lanes {
        return Err(LinkError::LaneCount { expected: params.lanes, found: lanes.len() });
    }
    let start = lanes[0].start_cycle;
    if lanes.iter().any(|l| l.start_cycle != start) {
        return Err(LinkError::Params("lanes disagree on start cycle".into()));
    }
    let mut rx = RxLink::new(params.clone(), start)?;
    let longest = lanes.iter().map(|l| l.len()).max().unwrap_or(0) as u64;
    let end = start + longest + params.elastic_depth as u64 + 1;
    let mut arrivals = vec![None; lanes.len()];
    for cycle in start..end {
        let k = (cycle - start) as usize;
        for (a, lane) in arrivals.iter_mut().zip(lanes) {
            *a = lane.symbols.get(k).copied();
        }
        rx.step(cycle, &arrivals)?;
        if rx.is_finished() {
            break;
        }
    }
    rx.check_lock()?;
    let status = rx.status();
    Ok((rx.take_samples()?, status))
}
