use super::{
    Encoder, LaneStream, LinkError, LinkParams, Scrambler, SymbolKind, ILA_CONFIG_OFFSET, ILA_MULTIFRAMES, K28_0,
    K28_3, K28_4, K28_5,
};
use crate::block::SampleBlock;

struct LaneTx {
    encoder: Encoder,
    scrambler: Scrambler,
    out: LaneStream,
}

impl LaneTx {
    fn control(&mut self, octet: u8) {
        self.out.symbols.push(self.encoder.control(octet));
        self.out.annotations.push(SymbolKind::Control);
    }

    fn data(&mut self, octet: u8) {
        self.out.symbols.push(self.encoder.data(octet));
        self.out.annotations.push(SymbolKind::Data);
    }
}

/// Transmit side of one link, fed with consecutive sample blocks.
pub struct TxLink {
    params: LinkParams,
    lanes: Vec<LaneTx>,
    next_frame: Option<u64>,
    ila_start: u64,
    data_start: u64,
    frame: Vec<u8>,
}

impl TxLink {
    pub fn new(params: LinkParams, sysref_phase: u64) -> Result<Self, LinkError> {
        params.validate()?;
        let k = params.frames_per_multiframe;
        if sysref_phase % k as u64 != 0 {
            return Err(LinkError::SysrefPhase { phase: sysref_phase, k });
        }
        let lanes = (0..params.lanes)
            .map(|l| LaneTx {
                encoder: Encoder::new(),
                scrambler: Scrambler::default(),
                out: LaneStream::new(l as u8, 0),
            })
            .collect();
        let frame = vec![0u8; 2 * params.converters];
        Ok(Self { params, lanes, next_frame: None, ila_start: 0, data_start: 0, frame })
    }

    pub fn params(&self) -> &LinkParams {
        &self.params
    }

    /// First sample index carried as data, once the stream has started.
    pub fn data_start_frame(&self) -> Option<u64> {
        self.next_frame.map(|_| self.data_start)
    }

    /// Encodes every sample instant of `block`. Instants before the data
    /// phase are consumed by CGS and ILA and are not transmitted.
    pub fn push(&mut self, block: &SampleBlock) -> Result<(), LinkError> {
        if block.channels() != self.params.converters {
            return Err(LinkError::Channels { expected: self.params.converters, found: block.channels() });
        }
        let first = match self.next_frame {
            Some(n) => {
                if block.start_index() != n {
                    return Err(
                        crate::block::BlockError::Discontinuous { expected: n, found: block.start_index() }.into()
                    );
                }
                n
            }
            None => {
                let start = block.start_index();
                self.ila_start = self.params.ila_start_frame(start);
                self.data_start = self.params.data_start_frame(start);
                let cycle = start * self.params.octets_per_frame as u64;
                for lane in &mut self.lanes {
                    lane.out.start_cycle = cycle;
                }
                start
            }
        };
        for t in 0..block.samples_per_channel() {
            let n = first + t as u64;
            if n < self.ila_start {
                self.emit_cgs_frame();
            } else if n < self.data_start {
                self.emit_ila_frame(n - self.ila_start);
            } else {
                for ch in 0..self.params.converters {
                    let [hi, lo] = block.get(ch, t).to_be_bytes();
                    self.frame[2 * ch] = hi;
                    self.frame[2 * ch + 1] = lo;
                }
                self.emit_data_frame();
            }
        }
        self.next_frame = Some(first + block.samples_per_channel() as u64);
        Ok(())
    }

    fn emit_cgs_frame(&mut self) {
        for lane in &mut self.lanes {
            for _ in 0..self.params.octets_per_frame {
                lane.control(K28_5);
            }
        }
    }

    fn emit_ila_frame(&mut self, frame_in_ila: u64) {
        let f = self.params.octets_per_frame;
        let k = self.params.frames_per_multiframe as u64;
        let fk = self.params.multiframe_octets();
        let multiframe = (frame_in_ila / k) as usize;
        debug_assert!(multiframe < ILA_MULTIFRAMES);
        let base = (frame_in_ila % k) as usize * f;
        for (l, lane) in self.lanes.iter_mut().enumerate() {
            let config = self.params.ila_config(l as u8).to_octets();
            for j in base..base + f {
                if j == 0 {
                    lane.control(K28_0);
                } else if j == fk - 1 {
                    lane.control(K28_3);
                } else if multiframe == 1 && j == 1 {
                    lane.control(K28_4);
                } else if multiframe == 1 && (ILA_CONFIG_OFFSET..ILA_CONFIG_OFFSET + config.len()).contains(&j) {
                    lane.data(config[j - ILA_CONFIG_OFFSET]);
                } else {
                    lane.data(j as u8);
                }
            }
        }
    }

    fn emit_data_frame(&mut self) {
        let f = self.params.octets_per_frame;
        let scrambling = self.params.scrambling;
        for (l, lane) in self.lanes.iter_mut().enumerate() {
            for &o in &self.frame[l * f..(l + 1) * f] {
                let o = if scrambling { lane.scrambler.scramble_octet(o) } else { o };
                lane.data(o);
            }
        }
    }

    /// Takes the symbols produced so far, leaving the lanes empty but with
    /// their start cycles advanced.
    pub fn drain(&mut self) -> Vec<LaneStream> {
        self.lanes
            .iter_mut()
            .map(|lane| {
                let next_cycle = lane.out.start_cycle + lane.out.symbols.len() as u64;
                let fresh = LaneStream::new(lane.out.lane_id, next_cycle);
                std::mem::replace(&mut lane.out, fresh)
            })
            .collect()
    }

    pub fn finish(self) -> Vec<LaneStream> {
        self.lanes.into_iter().map(|l| l.out).collect()
    }
}

/// Serializes a contiguous run of sample blocks onto the lanes of one link.
pub fn tx_link(samples: &[SampleBlock], params: &LinkParams, sysref_phase: u64) -> Result<Vec<LaneStream>, LinkError> {
    let mut tx = TxLink::new(params.clone(), sysref_phase)?;
    for b in samples {
        tx.push(b)?;
    }
    Ok(tx.finish())
}
