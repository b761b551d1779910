use std::collections::VecDeque;

use bytes::{Bytes, BytesMut};
use serde::{Deserialize, Serialize};

use super::AcqError;
use crate::block::SampleBlock;

/// Sample index of the first clock edge at or after `event_time`.
///
/// Times within a few ULPs of an edge count as on the edge, so that an
/// event constructed as `k / fs` latches at `k` despite rounding.
pub fn latch_trigger(event_time: f64, sample_clock: f64) -> u64 {
    let x = event_time * sample_clock;
    let r = x.round();
    if (x - r).abs() <= 8.0 * f64::EPSILON * r.abs().max(1.0) {
        r.max(0.0) as u64
    } else {
        x.ceil().max(0.0) as u64
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum TriggerSource {
    /// Laser fire signal.
    #[default]
    External,
    InternalPulser,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct TriggerConfig {
    pub source: TriggerSource,
    /// Sample clock cycles between the latched trigger and the first
    /// captured sample.
    pub delay: u64,
    /// Samples per channel.
    pub window: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct FrameEvent {
    pub frame_id: u64,
    pub trigger_sample_index: u64,
    pub first_sample_index: u64,
    /// Ring sequence number of the frame's first block.
    pub first_block_index: u64,
    pub block_count: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub enum WindowEvent {
    /// The first sample of the frame has been forwarded.
    Started(FrameEvent),
    Completed(FrameEvent, SampleBlock),
}

/// Cuts fixed-length frames out of a continuous sample stream.
pub struct FrameWindower {
    config: TriggerConfig,
    block_size: usize,
    frame_bytes: usize,
    next_frame_id: u64,
    next_block: u64,
    busy_until: Option<u64>,
    pending: VecDeque<FrameEvent>,
    current: Option<(FrameEvent, Vec<SampleBlock>, usize)>,
}

impl FrameWindower {
    /// `channels` is the width of the frames once serialized (after any
    /// padding), used for the block count.
    pub fn new(config: TriggerConfig, channels: usize, block_size: usize) -> Result<Self, AcqError> {
        if config.window == 0 {
            return Err(AcqError::Params("window must be at least one sample".into()));
        }
        if block_size == 0 {
            return Err(AcqError::Params("block size must be positive".into()));
        }
        Ok(Self {
            config,
            block_size,
            frame_bytes: config.window * channels * 2,
            next_frame_id: 0,
            next_block: 0,
            busy_until: None,
            pending: VecDeque::new(),
            current: None,
        })
    }

    pub fn config(&self) -> &TriggerConfig {
        &self.config
    }

    pub fn blocks_per_frame(&self) -> u64 {
        self.frame_bytes.div_ceil(self.block_size) as u64
    }

    /// Arms a frame for a latched trigger. A trigger arriving before the
    /// previous window has been fully captured is rejected.
    pub fn trigger(&mut self, trigger_index: u64) -> Result<FrameEvent, AcqError> {
        let first = trigger_index + self.config.delay;
        if let Some(busy_until) = self.busy_until {
            if first < busy_until {
                return Err(AcqError::Busy { trigger: trigger_index, busy_until });
            }
        }
        let ev = FrameEvent {
            frame_id: self.next_frame_id,
            trigger_sample_index: trigger_index,
            first_sample_index: first,
            first_block_index: self.next_block,
            block_count: self.blocks_per_frame(),
        };
        self.next_frame_id += 1;
        self.next_block += ev.block_count;
        self.busy_until = Some(first + self.config.window as u64);
        self.pending.push_back(ev);
        Ok(ev)
    }

    /// Feeds the next stream block. Samples before an armed window are
    /// discarded.
    pub fn push(&mut self, block: &SampleBlock) -> Result<Vec<WindowEvent>, AcqError> {
        let mut out = Vec::new();
        let mut at = block.start_index();
        while at < block.end_index() {
            if self.current.is_none() {
                match self.pending.front() {
                    Some(ev) if ev.first_sample_index < block.end_index() => {
                        let ev = self.pending.pop_front().expect("checked");
                        if ev.first_sample_index < at {
                            return Err(AcqError::Params(format!(
                                "frame {} starts at sample {}, already streamed past",
                                ev.frame_id, ev.first_sample_index
                            )));
                        }
                        at = ev.first_sample_index;
                        out.push(WindowEvent::Started(ev));
                        self.current = Some((ev, Vec::new(), 0));
                    }
                    _ => break,
                }
            }
            let (_, parts, have) = self.current.as_mut().expect("set above");
            let take = (self.config.window - *have).min((block.end_index() - at) as usize);
            parts.push(block.slice(at, take).expect("range inside block"));
            *have += take;
            at += take as u64;
            if *have == self.config.window {
                let (ev, parts, _) = self.current.take().expect("set above");
                out.push(WindowEvent::Completed(ev, SampleBlock::concat(&parts)?));
            }
        }
        Ok(out)
    }
}

/// Widens a block to `width` channels with a recognisable filler pattern
/// in the added channels.
pub fn pad_channels(block: &SampleBlock, width: usize) -> Result<SampleBlock, AcqError> {
    if width < block.channels() {
        return Err(AcqError::Params(format!("cannot pad {} channels down to {width}", block.channels())));
    }
    let n = block.samples_per_channel();
    let mut data = block.samples().to_vec();
    data.reserve((width - block.channels()) * n);
    for ch in block.channels()..width {
        data.extend((0..n).map(|t| (((ch as u16) << 8) | (block.start_index() + t as u64) as u8 as u16) as i16));
    }
    Ok(SampleBlock::new(width, data, block.start_index(), block.sample_rate())?)
}

/// Serializes a frame time-major (all channels of one instant together,
/// little-endian) into `block_size` payloads, zero-padding the last one.
pub fn frame_to_blocks(frame: &SampleBlock, block_size: usize) -> Vec<Bytes> {
    let total = frame.samples().len() * 2;
    let mut buf = BytesMut::with_capacity(total.div_ceil(block_size) * block_size);
    for v in frame.to_interleaved() {
        buf.extend_from_slice(&v.to_le_bytes());
    }
    buf.resize(total.div_ceil(block_size) * block_size, 0);
    let mut buf = buf.freeze();
    let mut out = Vec::new();
    while !buf.is_empty() {
        out.push(buf.split_to(block_size));
    }
    out
}

pub fn blocks_to_frame(
    blocks: &[Bytes],
    channels: usize,
    samples_per_channel: usize,
    start_index: u64,
    sample_rate: f64,
) -> Result<SampleBlock, AcqError> {
    let need = channels * samples_per_channel * 2;
    let have: usize = blocks.iter().map(|b| b.len()).sum();
    if have < need {
        return Err(AcqError::Params(format!("frame needs {need} bytes, got {have}")));
    }
    let bytes: Vec<u8> = blocks.iter().flat_map(|b| b.iter().copied()).take(need).collect();
    let inter: Vec<i16> = bytes.chunks_exact(2).map(|c| i16::from_le_bytes([c[0], c[1]])).collect();
    Ok(SampleBlock::from_interleaved(channels, &inter, start_index, sample_rate)?)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ramp(channels: usize, n: usize, start: u64) -> SampleBlock {
        let per: Vec<Vec<i16>> =
            (0..channels).map(|c| (0..n).map(|t| (c as u64 * 10_000 + start + t as u64) as i16).collect()).collect();
        SampleBlock::from_channels(&per, start, 80e6).unwrap()
    }

    fn cfg(delay: u64, window: usize) -> TriggerConfig {
        TriggerConfig { source: TriggerSource::InternalPulser, delay, window }
    }

    #[test]
    fn latch_on_and_after_edge() {
        assert_eq!(latch_trigger(3.0 / 80e6, 80e6), 3);
        assert_eq!(latch_trigger(0.0, 80e6), 0);
        let idx = latch_trigger(3.0 / 80e6 + 1e-12, 80e6);
        assert_eq!(idx, 4);
        assert!(idx as f64 / 80e6 - (3.0 / 80e6 + 1e-12) < 12.5e-9);
    }

    #[test]
    fn single_sample_window() {
        let mut w = FrameWindower::new(cfg(0, 1), 2, 1024).unwrap();
        w.trigger(37).unwrap();
        let ev = w.push(&ramp(2, 100, 0)).unwrap();
        match &ev[1] {
            WindowEvent::Completed(_, f) => {
                assert_eq!(f.samples_per_channel(), 1);
                assert_eq!(f.start_index(), 37);
                assert_eq!(f.get(1, 0), 10_037);
            }
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn delay_shifts_first_sample() {
        let mut w = FrameWindower::new(cfg(60, 100), 2, 1024).unwrap();
        let ev = w.trigger(1000).unwrap();
        assert_eq!(ev.first_sample_index, 1060);
        let mut frames = Vec::new();
        for k in 0..12 {
            frames.extend(w.push(&ramp(2, 100, k * 100)).unwrap());
        }
        assert!(matches!(frames[0], WindowEvent::Started(e) if e.frame_id == 0));
        let WindowEvent::Completed(_, f) = &frames[1] else { panic!() };
        assert_eq!(f.start_index(), 1060);
        assert_eq!(f, &ramp(2, 100, 1060));
    }

    #[test]
    fn six_blocks_of_256k() {
        let w = FrameWindower::new(cfg(60, 3072), 256, 256 * 1024).unwrap();
        assert_eq!(w.blocks_per_frame(), 6);
        let w = FrameWindower::new(cfg(60, 3073), 256, 256 * 1024).unwrap();
        assert_eq!(w.blocks_per_frame(), 7);
    }

    #[test]
    fn overlapping_trigger_is_busy() {
        let mut w = FrameWindower::new(cfg(10, 100), 1, 64).unwrap();
        w.trigger(0).unwrap();
        assert!(matches!(w.trigger(50), Err(AcqError::Busy { busy_until: 110, .. })));
        let ev = w.trigger(100).unwrap();
        assert_eq!(ev.frame_id, 1);
        assert_eq!(ev.first_block_index, w.blocks_per_frame());
    }

    #[test]
    fn serialization_roundtrip_and_padding() {
        let f = pad_channels(&ramp(16, 3072, 500), 256).unwrap();
        assert_eq!(f.get(17, 1), ((17u16 << 8) | (501 & 0xFF)) as i16);
        let blocks = frame_to_blocks(&f, 256 * 1024);
        assert_eq!(blocks.len(), 6);
        assert!(blocks.iter().all(|b| b.len() == 256 * 1024));
        // time-major: second int16 is channel 1 at t=0
        assert_eq!(i16::from_le_bytes([blocks[0][2], blocks[0][3]]), f.get(1, 0));
        assert_eq!(blocks_to_frame(&blocks, 256, 3072, 500, 80e6).unwrap(), f);

        let small = ramp(3, 5, 0);
        let b = frame_to_blocks(&small, 8);
        assert_eq!(b.len(), 4);
        let tail: Vec<u8> = (0..3).flat_map(|c| f_le(small.get(c, 4))).chain([0, 0]).collect();
        assert_eq!(&b[3][..], &tail[..]);
    }

    fn f_le(v: i16) -> [u8; 2] {
        v.to_le_bytes()
    }
}
