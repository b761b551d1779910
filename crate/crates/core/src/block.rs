//! Channel-major blocks of signed 16-bit samples.
//!
//! A [`SampleBlock`] is the unit that moves through the whole pipeline: the
//! front-end produces them, the link serializes and restores them, the
//! acquisition stage windows them into frames and the host analyses them.
//!
//! # Binary dump format
//!
//! All integers little-endian.
//!
//! | offset | size | field                         |
//! |-------:|-----:|-------------------------------|
//! | 0      | 4    | magic `SBK1`                  |
//! | 4      | 2    | channel count                 |
//! | 6      | 2    | reserved, zero                |
//! | 8      | 8    | start index (sample clock)    |
//! | 16     | 8    | sample rate, IEEE-754 f64     |
//! | 24     | 8    | samples per channel `n`       |
//! | 32     | 2·n·channels | int16 samples, channel-major |

use std::io::{self, Read, Write};

use thiserror::Error;

const MAGIC: &[u8; 4] = b"SBK1";
const HEADER_LEN: usize = 32;

#[derive(Debug, Error)]
pub enum BlockError {
    #[error("sample count {len} is not divisible by channel count {channels}")]
    Shape { len: usize, channels: usize },
    #[error("block needs at least one channel")]
    NoChannels,
    #[error("blocks are not contiguous: expected start {expected}, got {found}")]
    Discontinuous { expected: u64, found: u64 },
    #[error("blocks disagree on {0}")]
    Mismatch(&'static str),
    #[error("bad sample dump: {0}")]
    Format(String),
    #[error(transparent)]
    Io(#[from] io::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
}

#[derive(Debug, Clone, PartialEq)]
pub struct SampleBlock {
    channels: usize,
    samples: Vec<i16>,
    start_index: u64,
    sample_rate: f64,
}

impl SampleBlock {
    /// Builds a block from channel-major samples.
    pub fn new(channels: usize, samples: Vec<i16>, start_index: u64, sample_rate: f64) -> Result<Self, BlockError> {
        if channels == 0 {
            return Err(BlockError::NoChannels);
        }
        if samples.len() % channels != 0 {
            return Err(BlockError::Shape { len: samples.len(), channels });
        }
        Ok(Self { channels, samples, start_index, sample_rate })
    }

    pub fn zeros(channels: usize, per_channel: usize, start_index: u64, sample_rate: f64) -> Self {
        assert!(channels > 0);
        Self { channels, samples: vec![0; channels * per_channel], start_index, sample_rate }
    }

    /// Builds a block from one vector per channel. All channels must have
    /// the same length.
    pub fn from_channels(channels: &[Vec<i16>], start_index: u64, sample_rate: f64) -> Result<Self, BlockError> {
        let first = channels.first().ok_or(BlockError::NoChannels)?.len();
        if channels.iter().any(|c| c.len() != first) {
            return Err(BlockError::Mismatch("channel length"));
        }
        let samples = channels.iter().flat_map(|c| c.iter().copied()).collect();
        Self::new(channels.len(), samples, start_index, sample_rate)
    }

    /// Builds a block from time-major (sample-interleaved) data, where each
    /// consecutive run of `channels` values is one sampling instant.
    pub fn from_interleaved(
        channels: usize,
        interleaved: &[i16],
        start_index: u64,
        sample_rate: f64,
    ) -> Result<Self, BlockError> {
        if channels == 0 {
            return Err(BlockError::NoChannels);
        }
        if interleaved.len() % channels != 0 {
            return Err(BlockError::Shape { len: interleaved.len(), channels });
        }
        let n = interleaved.len() / channels;
        let mut samples = vec![0i16; interleaved.len()];
        for (t, row) in interleaved.chunks_exact(channels).enumerate() {
            for (ch, &v) in row.iter().enumerate() {
                samples[ch * n + t] = v;
            }
        }
        Self::new(channels, samples, start_index, sample_rate)
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn samples_per_channel(&self) -> usize {
        self.samples.len() / self.channels
    }

    pub fn start_index(&self) -> u64 {
        self.start_index
    }

    /// Index one past the last sample instant in this block.
    pub fn end_index(&self) -> u64 {
        self.start_index + self.samples_per_channel() as u64
    }

    pub fn sample_rate(&self) -> f64 {
        self.sample_rate
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn samples(&self) -> &[i16] {
        &self.samples
    }

    pub fn into_samples(self) -> Vec<i16> {
        self.samples
    }

    pub fn channel(&self, ch: usize) -> &[i16] {
        let n = self.samples_per_channel();
        &self.samples[ch * n..(ch + 1) * n]
    }

    pub fn channel_mut(&mut self, ch: usize) -> &mut [i16] {
        let n = self.samples_per_channel();
        &mut self.samples[ch * n..(ch + 1) * n]
    }

    /// Sample of channel `ch` at position `t` relative to the block start.
    pub fn get(&self, ch: usize, t: usize) -> i16 {
        self.samples[ch * self.samples_per_channel() + t]
    }

    /// Time-major copy of the samples (all channels of instant 0, then 1, ...).
    pub fn to_interleaved(&self) -> Vec<i16> {
        let n = self.samples_per_channel();
        let mut out = Vec::with_capacity(self.samples.len());
        for t in 0..n {
            for ch in 0..self.channels {
                out.push(self.samples[ch * n + t]);
            }
        }
        out
    }

    /// Copies instants `[from, from + len)` (absolute sample indices) into a
    /// new block. Returns `None` if the range is not covered.
    pub fn slice(&self, from: u64, len: usize) -> Option<SampleBlock> {
        if from < self.start_index || from + len as u64 > self.end_index() {
            return None;
        }
        let off = (from - self.start_index) as usize;
        let mut samples = Vec::with_capacity(len * self.channels);
        for ch in 0..self.channels {
            samples.extend_from_slice(&self.channel(ch)[off..off + len]);
        }
        Some(SampleBlock { channels: self.channels, samples, start_index: from, sample_rate: self.sample_rate })
    }

    /// Joins contiguous blocks into one.
    pub fn concat(blocks: &[SampleBlock]) -> Result<SampleBlock, BlockError> {
        let first = blocks.first().ok_or(BlockError::NoChannels)?;
        let channels = first.channels;
        let mut expected = first.start_index;
        let mut per_channel: Vec<Vec<i16>> = vec![Vec::new(); channels];
        for b in blocks {
            if b.channels != channels {
                return Err(BlockError::Mismatch("channel count"));
            }
            if b.start_index != expected {
                return Err(BlockError::Discontinuous { expected, found: b.start_index });
            }
            for (ch, dst) in per_channel.iter_mut().enumerate() {
                dst.extend_from_slice(b.channel(ch));
            }
            expected = b.end_index();
        }
        SampleBlock::from_channels(&per_channel, first.start_index, first.sample_rate)
    }

    /// Stacks blocks covering the same instants side by side, channels of the
    /// first block first.
    pub fn stack_channels(blocks: &[SampleBlock]) -> Result<SampleBlock, BlockError> {
        let first = blocks.first().ok_or(BlockError::NoChannels)?;
        let mut samples = Vec::new();
        let mut channels = 0;
        for b in blocks {
            if b.start_index != first.start_index {
                return Err(BlockError::Mismatch("start index"));
            }
            if b.samples_per_channel() != first.samples_per_channel() {
                return Err(BlockError::Mismatch("samples per channel"));
            }
            samples.extend_from_slice(&b.samples);
            channels += b.channels;
        }
        SampleBlock::new(channels, samples, first.start_index, first.sample_rate)
    }

    /// Keeps only channels `[from, from + count)`.
    pub fn select_channels(&self, from: usize, count: usize) -> SampleBlock {
        let n = self.samples_per_channel();
        let samples = self.samples[from * n..(from + count) * n].to_vec();
        SampleBlock { channels: count, samples, start_index: self.start_index, sample_rate: self.sample_rate }
    }

    pub fn write_binary<W: Write>(&self, mut w: W) -> Result<(), BlockError> {
        let channels =
            u16::try_from(self.channels).map_err(|_| BlockError::Format("more than 65535 channels".into()))?;
        let mut header = [0u8; HEADER_LEN];
        header[0..4].copy_from_slice(MAGIC);
        header[4..6].copy_from_slice(&channels.to_le_bytes());
        header[8..16].copy_from_slice(&self.start_index.to_le_bytes());
        header[16..24].copy_from_slice(&self.sample_rate.to_le_bytes());
        header[24..32].copy_from_slice(&(self.samples_per_channel() as u64).to_le_bytes());
        w.write_all(&header)?;
        let mut body = Vec::with_capacity(self.samples.len() * 2);
        for s in &self.samples {
            body.extend_from_slice(&s.to_le_bytes());
        }
        w.write_all(&body)?;
        Ok(())
    }

    pub fn read_binary<R: Read>(mut r: R) -> Result<SampleBlock, BlockError> {
        let mut header = [0u8; HEADER_LEN];
        r.read_exact(&mut header)?;
        if &header[0..4] != MAGIC {
            return Err(BlockError::Format("bad magic".into()));
        }
        let channels = u16::from_le_bytes([header[4], header[5]]) as usize;
        let start_index = u64::from_le_bytes(header[8..16].try_into().unwrap());
        let sample_rate = f64::from_le_bytes(header[16..24].try_into().unwrap());
        let n = u64::from_le_bytes(header[24..32].try_into().unwrap()) as usize;
        let total = n
            .checked_mul(channels)
            .and_then(|v| v.checked_mul(2))
            .ok_or_else(|| BlockError::Format("size overflow".into()))?;
        let mut body = vec![0u8; total];
        r.read_exact(&mut body)?;
        let samples = body.chunks_exact(2).map(|b| i16::from_le_bytes([b[0], b[1]])).collect();
        SampleBlock::new(channels, samples, start_index, sample_rate)
    }

    /// CSV with one row per sampling instant: `sample_index,ch0,ch1,...`.
    pub fn write_csv<W: Write>(&self, w: W) -> Result<(), BlockError> {
        let mut out = csv::Writer::from_writer(w);
        let mut header = vec!["sample_index".to_string()];
        header.extend((0..self.channels).map(|c| format!("ch{c}")));
        out.write_record(&header)?;
        let n = self.samples_per_channel();
        let mut row = Vec::with_capacity(self.channels + 1);
        for t in 0..n {
            row.clear();
            row.push((self.start_index + t as u64).to_string());
            for ch in 0..self.channels {
                row.push(self.samples[ch * n + t].to_string());
            }
            out.write_record(&row)?;
        }
        out.flush()?;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rejects_ragged_shape() {
        assert!(matches!(SampleBlock::new(3, vec![0; 10], 0, 1.0), Err(BlockError::Shape { .. })));
        assert!(matches!(SampleBlock::new(0, vec![], 0, 1.0), Err(BlockError::NoChannels)));
    }

    #[test]
    fn interleave_roundtrip() {
        let b = SampleBlock::from_channels(&[vec![1, 2, 3], vec![4, 5, 6]], 10, 80e6).unwrap();
        assert_eq!(b.to_interleaved(), vec![1, 4, 2, 5, 3, 6]);
        let back = SampleBlock::from_interleaved(2, &b.to_interleaved(), 10, 80e6).unwrap();
        assert_eq!(back, b);
    }

    #[test]
    fn concat_requires_contiguity() {
        let a = SampleBlock::from_channels(&[vec![1, 2]], 0, 1.0).unwrap();
        let b = SampleBlock::from_channels(&[vec![3]], 2, 1.0).unwrap();
        let c = SampleBlock::from_channels(&[vec![4]], 5, 1.0).unwrap();
        assert_eq!(SampleBlock::concat(&[a.clone(), b]).unwrap().channel(0), &[1, 2, 3]);
        assert!(matches!(SampleBlock::concat(&[a, c]), Err(BlockError::Discontinuous { expected: 2, found: 5 })));
    }

    #[test]
    fn slice_by_absolute_index() {
        let b = SampleBlock::from_channels(&[vec![0, 1, 2, 3], vec![10, 11, 12, 13]], 100, 1.0).unwrap();
        let s = b.slice(101, 2).unwrap();
        assert_eq!(s.start_index(), 101);
        assert_eq!(s.channel(1), &[11, 12]);
        assert!(b.slice(99, 2).is_none());
        assert!(b.slice(103, 2).is_none());
    }

    #[test]
    fn binary_dump_layout() {
        let b = SampleBlock::from_channels(&[vec![1, -2], vec![300, -32768]], 7, 80e6).unwrap();
        let mut buf = Vec::new();
        b.write_binary(&mut buf).unwrap();
        assert_eq!(&buf[0..4], b"SBK1");
        assert_eq!(buf.len(), 32 + 8);
        // channel-major, little-endian
        assert_eq!(&buf[32..34], &1i16.to_le_bytes());
        assert_eq!(&buf[34..36], &(-2i16).to_le_bytes());
        assert_eq!(&buf[36..38], &300i16.to_le_bytes());
        assert_eq!(SampleBlock::read_binary(&buf[..]).unwrap(), b);
    }

    #[test]
    fn csv_rows_are_time_major() {
        let b = SampleBlock::from_channels(&[vec![1, 2], vec![3, 4]], 5, 1.0).unwrap();
        let mut buf = Vec::new();
        b.write_csv(&mut buf).unwrap();
        assert_eq!(String::from_utf8(buf).unwrap(), "sample_index,ch0,ch1\n5,1,3\n6,2,4\n");
    }
}
