//! Serial link between the front-end and the backend: 8b/10b coding,
//! scrambling, code-group synchronization, initial lane alignment and
//! per-lane elastic buffering released on a multiframe boundary.
//!
//! Timing model: one frame carries one sample instant of every converter on
//! the link, so frame `n` is sample `n`. Lanes emit one symbol per octet
//! clock and frame `n` occupies octet cycles `[n·F, (n+1)·F)`. Multiframe
//! (LMFC) boundaries sit on frames that are multiples of `K`; the SYSREF
//! phase handed to the transmitter must be one of them.
//!
//! Start-up follows the usual sequence: K28.5 commas for at least one full
//! multiframe, then four ILA multiframes starting on an LMFC boundary, then
//! data. The receiver knows this schedule, so it knows on which LMFC
//! boundary data starts, and releases its elastic buffers a fixed
//! `elastic_depth` octet clocks later. Any lane skew up to that depth is
//! absorbed without changing the output or its latency.

mod capture;
mod codec;
mod rx;
mod scrambler;
mod tx;

pub use capture::{read_capture, write_capture, CodeGroupAligner, LaneCapture};
pub use codec::{
    decode_8b10b, encode_8b10b, is_comma, is_valid_control, CodeError, CodecState, Decoded, Disparity, Encoder,
    COMMA_BITS, COMMA_BITS_INV, COMMA_RD_MINUS, COMMA_RD_PLUS, CONTROL_OCTETS, K28_0, K28_3, K28_4, K28_5,
};
pub use rx::{rx_link, LinkStatus, RxLink, CGS_LOCK_COMMAS, LOSS_INVALID_SYMBOLS, LOSS_WINDOW};
pub use scrambler::{descramble, scramble, Descrambler, Scrambler, DEFAULT_SEED};
pub use tx::{tx_link, TxLink};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::block::BlockError;

/// Number of multiframes in the initial lane alignment sequence.
pub const ILA_MULTIFRAMES: usize = 4;
/// Octets of ILA configuration data, including the checksum.
pub const ILA_CONFIG_LEN: usize = 9;
/// Position of the configuration data inside the second ILA multiframe,
/// after `/R/` and `/Q/`.
pub const ILA_CONFIG_OFFSET: usize = 2;
const BITS_PER_SAMPLE: u8 = 16;

#[derive(Debug, Error)]
pub enum LinkError {
    #[error("invalid link parameters: {0}")]
    Params(String),
    #[error("SYSREF phase {phase} is not on a multiframe boundary (K = {k})")]
    SysrefPhase { phase: u64, k: usize },
    #[error("sample block has {found} channels, link carries {expected}")]
    Channels { expected: usize, found: usize },
    #[error("lane {lane}: skew of {skew} octets exceeds elastic depth {depth}")]
    Alignment { lane: usize, skew: u64, depth: usize },
    #[error("lane {lane}: ILA advertises {field} = {found}, expected {expected}")]
    Config { lane: usize, field: &'static str, expected: u32, found: u32 },
    #[error("lane {lane}: malformed ILA ({reason})")]
    IlaFraming { lane: usize, reason: String },
    #[error("lane {lane}: no code-group synchronization")]
    NoLock { lane: usize },
    #[error("expected {expected} lanes, got {found}")]
    LaneCount { expected: usize, found: usize },
    #[error(transparent)]
    Block(#[from] BlockError),
    #[error("capture file: {0}")]
    Capture(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Link configuration shared by both ends.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LinkParams {
    /// L
    pub lanes: usize,
    /// M, channels carried by this link
    pub converters: usize,
    /// F, octets per frame per lane
    pub octets_per_frame: usize,
    /// K
    pub frames_per_multiframe: usize,
    pub scrambling: bool,
    /// Per-lane elastic buffer depth in octets.
    pub elastic_depth: usize,
    /// Serial bit rate per lane, bits/s.
    pub line_rate: f64,
    /// Frame (sample) clock, Hz.
    pub frame_clock: f64,
    pub device_id: u8,
}

impl Default for LinkParams {
    fn default() -> Self {
        Self {
            lanes: 1,
            converters: 8,
            octets_per_frame: 16,
            frames_per_multiframe: 32,
            scrambling: true,
            elastic_depth: 2 * 16 * 32,
            line_rate: 12.8e9,
            frame_clock: 80e6,
            device_id: 0,
        }
    }
}

impl LinkParams {
    /// Link for `converters` 16-bit channels over `lanes` lanes, with the
    /// multiframe length derived from the SYSREF rate and the elastic depth
    /// set to two multiframes.
    pub fn for_converters(converters: usize, lanes: usize, frame_clock: f64, sysref: f64) -> Self {
        let f = (2 * converters).div_ceil(lanes.max(1));
        let k = (frame_clock / sysref).round().max(1.0) as usize;
        Self {
            lanes,
            converters,
            octets_per_frame: f,
            frames_per_multiframe: k,
            scrambling: true,
            elastic_depth: 2 * f * k,
            line_rate: frame_clock * f as f64 * 10.0,
            frame_clock,
            device_id: 0,
        }
    }

    pub fn validate(&self) -> Result<(), LinkError> {
        let err = |m: String| Err(LinkError::Params(m));
        if self.lanes == 0 || self.lanes > 32 {
            return err(format!("lane count {} outside 1..=32", self.lanes));
        }
        if self.converters == 0 || self.converters > 256 {
            return err(format!("converter count {} outside 1..=256", self.converters));
        }
        if self.octets_per_frame == 0 || self.octets_per_frame > 256 {
            return err(format!("F = {} outside 1..=256", self.octets_per_frame));
        }
        if self.frames_per_multiframe == 0 || self.frames_per_multiframe > 256 {
            return err(format!("K = {} outside 1..=256", self.frames_per_multiframe));
        }
        if self.octets_per_frame * self.lanes != 2 * self.converters {
            return err(format!(
                "F·L = {} does not carry {} 16-bit converters",
                self.octets_per_frame * self.lanes,
                self.converters
            ));
        }
        let fk = self.multiframe_octets();
        if !(17..=1024).contains(&fk) {
            return err(format!("F·K = {fk} outside 17..=1024"));
        }
        if self.elastic_depth == 0 {
            return err("elastic depth must be positive".into());
        }
        if !(self.frame_clock > 0.0) {
            return err("frame clock must be positive".into());
        }
        let expected = self.frame_clock * self.octets_per_frame as f64 * 10.0;
        if ((self.line_rate - expected) / expected).abs() > 1e-9 {
            return err(format!("line rate {} != frame clock · F · 10 = {expected}", self.line_rate));
        }
        Ok(())
    }

    pub fn multiframe_octets(&self) -> usize {
        self.octets_per_frame * self.frames_per_multiframe
    }

    /// Period of the SYSREF/LMFC, seconds.
    pub fn sysref_period(&self) -> f64 {
        self.frames_per_multiframe as f64 / self.frame_clock
    }

    /// Payload bit rate after 8b/10b overhead, all lanes.
    pub fn payload_rate(&self) -> f64 {
        self.line_rate * 0.8 * self.lanes as f64
    }

    pub fn octet_period(&self) -> f64 {
        1.0 / (self.frame_clock * self.octets_per_frame as f64)
    }

    /// Frame on which the ILA starts for a stream whose first sample is
    /// `start_frame`: the first LMFC boundary at least one multiframe later.
    pub fn ila_start_frame(&self, start_frame: u64) -> u64 {
        let k = self.frames_per_multiframe as u64;
        (start_frame + k).div_ceil(k) * k
    }

    pub fn data_start_frame(&self, start_frame: u64) -> u64 {
        self.ila_start_frame(start_frame) + (ILA_MULTIFRAMES * self.frames_per_multiframe) as u64
    }

    pub(crate) fn ila_config(&self, lane_id: u8) -> IlaConfig {
        IlaConfig {
            device_id: self.device_id,
            lane_id,
            lanes: self.lanes as u16,
            octets_per_frame: self.octets_per_frame as u16,
            frames_per_multiframe: self.frames_per_multiframe as u16,
            converters: self.converters as u16,
            scrambling: self.scrambling,
        }
    }
}

/// Link configuration carried in the second ILA multiframe.
///
/// Wire layout (9 octets): `DID, LID, L-1, SCR<<7, F-1, K-1, M-1, N'-1,
/// FCHK` where `FCHK` is the modulo-256 sum of the eight octets before it.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct IlaConfig {
    pub device_id: u8,
    pub lane_id: u8,
    pub lanes: u16,
    pub octets_per_frame: u16,
    pub frames_per_multiframe: u16,
    pub converters: u16,
    pub scrambling: bool,
}

impl IlaConfig {
    pub fn to_octets(&self) -> [u8; ILA_CONFIG_LEN] {
        let mut o = [0u8; ILA_CONFIG_LEN];
        o[0] = self.device_id;
        o[1] = self.lane_id;
        o[2] = (self.lanes - 1) as u8;
        o[3] = (self.scrambling as u8) << 7;
        o[4] = (self.octets_per_frame - 1) as u8;
        o[5] = (self.frames_per_multiframe - 1) as u8;
        o[6] = (self.converters - 1) as u8;
        o[7] = BITS_PER_SAMPLE - 1;
        o[8] = checksum(&o[..8]);
        o
    }

    /// Parses configuration octets; `None` if the checksum does not match.
    pub fn from_octets(o: &[u8]) -> Option<Self> {
        if o.len() < ILA_CONFIG_LEN || checksum(&o[..8]) != o[8] {
            return None;
        }
        Some(Self {
            device_id: o[0],
            lane_id: o[1],
            lanes: o[2] as u16 + 1,
            scrambling: o[3] & 0x80 != 0,
            octets_per_frame: o[4] as u16 + 1,
            frames_per_multiframe: o[5] as u16 + 1,
            converters: o[6] as u16 + 1,
        })
    }
}

fn checksum(octets: &[u8]) -> u8 {
    octets.iter().fold(0u8, |a, &b| a.wrapping_add(b))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SymbolKind {
    Control,
    Data,
}

/// Code groups of one lane in transmission order.
#[derive(Debug, Clone, PartialEq)]
pub struct LaneStream {
    pub lane_id: u8,
    /// Octet clock at which the first symbol left the transmitter.
    pub start_cycle: u64,
    pub symbols: Vec<u16>,
    pub annotations: Vec<SymbolKind>,
}

impl LaneStream {
    pub fn new(lane_id: u8, start_cycle: u64) -> Self {
        Self { lane_id, start_cycle, symbols: Vec::new(), annotations: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.symbols.len()
    }

    pub fn is_empty(&self) -> bool {
        self.symbols.is_empty()
    }

    /// Copy of this lane as seen behind `skew` extra octet clocks of wire
    /// delay. The line idles on commas until the delayed stream arrives.
    pub fn delayed(&self, skew: usize) -> LaneStream {
        // the original stream starts from RD-, so the prefix must end there
        let start = if skew % 2 == 1 { Disparity::Positive } else { Disparity::Negative };
        let mut enc = Encoder::with_state(CodecState { running_disparity: start });
        let mut symbols: Vec<u16> = (0..skew).map(|_| enc.control(K28_5)).collect();
        let mut annotations = vec![SymbolKind::Control; skew];
        symbols.extend_from_slice(&self.symbols);
        annotations.extend_from_slice(&self.annotations);
        LaneStream { lane_id: self.lane_id, start_cycle: self.start_cycle, symbols, annotations }
    }
}

/// Applies one skew per lane.
pub fn apply_skew(lanes: &[LaneStream], skews: &[usize]) -> Vec<LaneStream> {
    lanes.iter().zip(skews).map(|(l, &s)| l.delayed(s)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_rates_are_consistent() {
        let p = LinkParams::default();
        p.validate().unwrap();
        assert_eq!(p.multiframe_octets(), 512);
        assert!((p.payload_rate() - 10.24e9).abs() < 1.0);
        assert!((1.0 / p.sysref_period() - 2.5e6).abs() < 1e-6);
        assert_eq!(LinkParams::for_converters(8, 1, 80e6, 2.5e6), p);
    }

    #[test]
    fn rejects_inconsistent_params() {
        let mut p = LinkParams::default();
        p.octets_per_frame = 8;
        assert!(p.validate().is_err());
        let mut p = LinkParams::default();
        p.line_rate = 10e9;
        assert!(p.validate().is_err());
        let mut p = LinkParams::default();
        p.frames_per_multiframe = 1;
        assert!(p.validate().is_err());
    }

    #[test]
    fn ila_config_checksum() {
        let cfg = LinkParams::default().ila_config(3);
        let o = cfg.to_octets();
        let sum: u32 = o[..8].iter().map(|&b| b as u32).sum();
        assert_eq!(o[8] as u32, sum % 256);
        assert_eq!(IlaConfig::from_octets(&o), Some(cfg));
        let mut bad = o;
        bad[4] ^= 1;
        assert_eq!(IlaConfig::from_octets(&bad), None);
    }

    #[test]
    fn ila_schedule_lands_on_lmfc() {
        let p = LinkParams::default();
        assert_eq!(p.ila_start_frame(0), 32);
        assert_eq!(p.ila_start_frame(1), 64);
        assert_eq!(p.ila_start_frame(32), 64);
        assert_eq!(p.data_start_frame(0), 160);
    }
}
