use std::collections::VecDeque;
use std::f64::consts::PI;

use super::{AfeError, FULL_SCALE};
use crate::block::SampleBlock;
use crate::dsp;

const STOPBAND_DB: f64 = 65.0;

/// Streaming mixer, low-pass and decimator. Input channel `c` becomes
/// output channels `2c` (I) and `2c + 1` (Q) at `fs / decimation`.
///
/// The filter is causal, so the baseband output lags the input by
/// [`group_delay`](Self::group_delay) input samples.
pub struct IqDemodulator {
    f_center: f64,
    decimation: usize,
    taps: Vec<f64>,
    history: Vec<VecDeque<(f64, f64)>>,
    next_input: Option<u64>,
}

impl IqDemodulator {
    pub fn new(sample_rate: f64, f_center: f64, decimation: usize, channels: usize) -> Result<Self, AfeError> {
        if decimation < 2 {
            return Err(AfeError::Params("decimation must be at least 2".into()));
        }
        if !(f_center >= 0.0 && f_center < sample_rate / 2.0) {
            return Err(AfeError::Params(format!("centre frequency {f_center} Hz not below Nyquist")));
        }
        // pass to 0.4/D, stop from 0.5/D (the new Nyquist)
        let transition = 0.1 / decimation as f64;
        let n = dsp::kaiser_taps(STOPBAND_DB, transition);
        let taps = dsp::lowpass(0.45 / decimation as f64, n, dsp::kaiser_beta(STOPBAND_DB));
        Ok(Self {
            f_center: f_center / sample_rate,
            decimation,
            history: vec![VecDeque::from(vec![(0.0, 0.0); taps.len()]); channels],
            taps,
            next_input: None,
        })
    }

    pub fn group_delay(&self) -> usize {
        (self.taps.len() - 1) / 2
    }

    pub fn taps(&self) -> &[f64] {
        &self.taps
    }

    /// Output samples are produced for input indices divisible by the
    /// decimation factor, so the output index is `input_index / D`.
    pub fn process(&mut self, block: &SampleBlock) -> Result<SampleBlock, AfeError> {
        if block.channels() != self.history.len() {
            return Err(AfeError::Params(format!(
                "expected {} channels, got {}",
                self.history.len(),
                block.channels()
            )));
        }
        if let Some(n) = self.next_input {
            if block.start_index() != n {
                return Err(crate::block::BlockError::Discontinuous { expected: n, found: block.start_index() }.into());
            }
        }
        let d = self.decimation as u64;
        let start = block.start_index();
        let first_out = start.div_ceil(d);
        let count = (block.end_index().div_ceil(d) - first_out) as usize;
        let mut out: Vec<Vec<i16>> = vec![Vec::with_capacity(count); 2 * block.channels()];
        for ch in 0..block.channels() {
            let hist = &mut self.history[ch];
            for (i, &x) in block.channel(ch).iter().enumerate() {
                let t = start + i as u64;
                let ph = 2.0 * PI * (self.f_center * t as f64).fract();
                hist.pop_back();
                hist.push_front((x as f64 * ph.cos(), -(x as f64) * ph.sin()));
                if t % d == 0 {
                    let (i_acc, q_acc) = self
                        .taps
                        .iter()
                        .zip(hist.iter())
                        .fold((0.0, 0.0), |(a, b), (h, (i, q))| (a + h * i, b + h * q));
                    out[2 * ch].push(quantize(2.0 * i_acc));
                    out[2 * ch + 1].push(quantize(2.0 * q_acc));
                }
            }
        }
        self.next_input = Some(block.end_index());
        Ok(SampleBlock::from_channels(&out, first_out, block.sample_rate() / d as f64)?)
    }
}

fn quantize(v: f64) -> i16 {
    v.round().clamp(-(FULL_SCALE as f64), FULL_SCALE as f64) as i16
}

/// Demodulates a contiguous run of blocks.
pub fn iq_demodulate(raw: &[SampleBlock], f_center: f64, decimation: usize) -> Result<Vec<SampleBlock>, AfeError> {
    let Some(first) = raw.first() else { return Ok(Vec::new()) };
    let mut demod = IqDemodulator::new(first.sample_rate(), f_center, decimation, first.channels())?;
    raw.iter().map(|b| demod.process(b)).collect()
}
