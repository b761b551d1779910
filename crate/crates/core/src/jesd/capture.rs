//! Lane capture files and bit-level code-group alignment.
//!
//! # Capture format
//!
//! Big-endian throughout.
//!
//! | offset | size | field                                  |
//! |-------:|-----:|----------------------------------------|
//! | 0      | 4    | magic `LCP1`                           |
//! | 4      | 1    | lanes L                                |
//! | 5      | 1    | flags, bit 0 = scrambling              |
//! | 6      | 2    | converters M                           |
//! | 8      | 2    | octets per frame F                     |
//! | 10     | 2    | frames per multiframe K                |
//! | 12     | 4    | elastic depth, octets                  |
//! | 16     | 8    | line rate, f64 bits/s                  |
//! | 24     | 8    | frame clock, f64 Hz                    |
//! | 32     | 1    | device id                              |
//! | 33     | 7    | reserved, zero                         |
//!
//! followed by L lane sections:
//!
//! | size | field                                          |
//! |-----:|------------------------------------------------|
//! | 1    | lane id                                        |
//! | 7    | reserved, zero                                 |
//! | 8    | start cycle (octet clocks)                     |
//! | 8    | symbol count `n`                               |
//! | ⌈10n/8⌉ | symbols, 10 bits each, packed MSB first, zero padded |

use std::io::{Read, Write};

use super::{decode_8b10b, is_comma, CodecState, LaneStream, LinkError, LinkParams, SymbolKind, CGS_LOCK_COMMAS};

const MAGIC: &[u8; 4] = b"LCP1";
const HEADER_LEN: usize = 40;

#[derive(Debug, Clone, PartialEq)]
pub struct LaneCapture {
    pub params: LinkParams,
    pub lanes: Vec<LaneStream>,
}

/// Packs 10-bit symbols MSB first.
pub fn pack_symbols(symbols: &[u16]) -> Vec<u8> {
    let mut out = vec![0u8; (symbols.len() * 10).div_ceil(8)];
    let mut bit = 0usize;
    for &s in symbols {
        for i in (0..10).rev() {
            if (s >> i) & 1 == 1 {
                out[bit / 8] |= 0x80 >> (bit % 8);
            }
            bit += 1;
        }
    }
    out
}

pub fn unpack_symbols(bytes: &[u8], count: usize) -> Vec<u16> {
    (0..count)
        .map(|k| {
            (0..10).fold(0u16, |acc, i| {
                let bit = k * 10 + i;
                (acc << 1) | ((bytes[bit / 8] >> (7 - bit % 8)) & 1) as u16
            })
        })
        .collect()
}

pub fn write_capture<W: Write>(mut w: W, params: &LinkParams, lanes: &[LaneStream]) -> Result<(), LinkError> {
    let mut h = [0u8; HEADER_LEN];
    h[0..4].copy_from_slice(MAGIC);
    h[4] = params.lanes as u8;
    h[5] = params.scrambling as u8;
    h[6..8].copy_from_slice(&(params.converters as u16).to_be_bytes());
    h[8..10].copy_from_slice(&(params.octets_per_frame as u16).to_be_bytes());
    h[10..12].copy_from_slice(&(params.frames_per_multiframe as u16).to_be_bytes());
    h[12..16].copy_from_slice(&(params.elastic_depth as u32).to_be_bytes());
    h[16..24].copy_from_slice(&params.line_rate.to_be_bytes());
    h[24..32].copy_from_slice(&params.frame_clock.to_be_bytes());
    h[32] = params.device_id;
    w.write_all(&h)?;
    for lane in lanes {
        let mut lh = [0u8; 24];
        lh[0] = lane.lane_id;
        lh[8..16].copy_from_slice(&lane.start_cycle.to_be_bytes());
        lh[16..24].copy_from_slice(&(lane.symbols.len() as u64).to_be_bytes());
        w.write_all(&lh)?;
        w.write_all(&pack_symbols(&lane.symbols))?;
    }
    Ok(())
}

pub fn read_capture<R: Read>(mut r: R) -> Result<LaneCapture, LinkError> {
    let mut h = [0u8; HEADER_LEN];
    r.read_exact(&mut h)?;
    if &h[0..4] != MAGIC {
        return Err(LinkError::Capture("bad magic".into()));
    }
    let be16 = |b: &[u8]| u16::from_be_bytes([b[0], b[1]]) as usize;
    let params = LinkParams {
        lanes: h[4] as usize,
        scrambling: h[5] & 1 != 0,
        converters: be16(&h[6..8]),
        octets_per_frame: be16(&h[8..10]),
        frames_per_multiframe: be16(&h[10..12]),
        elastic_depth: u32::from_be_bytes(h[12..16].try_into().unwrap()) as usize,
        line_rate: f64::from_be_bytes(h[16..24].try_into().unwrap()),
        frame_clock: f64::from_be_bytes(h[24..32].try_into().unwrap()),
        device_id: h[32],
    };
    let mut lanes = Vec::with_capacity(params.lanes);
    for _ in 0..params.lanes {
        let mut lh = [0u8; 24];
        r.read_exact(&mut lh)?;
        let start_cycle = u64::from_be_bytes(lh[8..16].try_into().unwrap());
        let count = u64::from_be_bytes(lh[16..24].try_into().unwrap());
        let count = usize::try_from(count).map_err(|_| LinkError::Capture("symbol count too large".into()))?;
        let mut body = vec![0u8; (count * 10).div_ceil(8)];
        r.read_exact(&mut body)?;
        let symbols = unpack_symbols(&body, count);
        let annotations = annotate(&symbols);
        lanes.push(LaneStream { lane_id: lh[0], start_cycle, symbols, annotations });
    }
    Ok(LaneCapture { params, lanes })
}

fn annotate(symbols: &[u16]) -> Vec<SymbolKind> {
    let mut state = CodecState::default();
    symbols
        .iter()
        .map(|&s| match decode_8b10b(s, &mut state) {
            Ok(d) if d.is_control => SymbolKind::Control,
            Err(super::CodeError::Disparity { is_control: true, .. }) => SymbolKind::Control,
            _ => SymbolKind::Data,
        })
        .collect()
}

/// Finds symbol boundaries in a raw serial bit stream by looking for
/// repeated commas at a consistent 10-bit phase.
#[derive(Debug, Default)]
pub struct CodeGroupAligner;

impl CodeGroupAligner {
    /// `bits` holds one bit per element, first bit on the wire first.
    /// Returns the bit offset of the first comma of a run of
    /// [`CGS_LOCK_COMMAS`] and the symbols from there on.
    pub fn align(bits: &[u8]) -> Option<(usize, Vec<u16>)> {
        let symbol_at = |pos: usize| -> Option<u16> {
            bits.get(pos..pos + 10).map(|w| w.iter().fold(0u16, |a, &b| (a << 1) | (b & 1) as u16))
        };
        let offset = (0..bits.len().saturating_sub(10))
            .find(|&pos| (0..CGS_LOCK_COMMAS).all(|k| symbol_at(pos + 10 * k).is_some_and(is_comma)))?;
        let symbols = (offset..).step_by(10).map_while(symbol_at).collect();
        Some((offset, symbols))
    }

    pub fn to_bits(symbols: &[u16]) -> Vec<u8> {
        symbols.iter().flat_map(|&s| (0..10).rev().map(move |i| ((s >> i) & 1) as u8)).collect()
    }
}
