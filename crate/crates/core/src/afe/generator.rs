use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use super::scenario::evaluate;
use super::{AfeConfig, AfeError, SignalScenario, FULL_SCALE};
use crate::block::SampleBlock;

/// Continuous sample source. Successive [`next_block`](Self::next_block)
/// calls produce the same stream regardless of how it is chunked.
pub struct AfeGenerator {
    config: AfeConfig,
    scenario: SignalScenario,
    position: u64,
    gain: f64,
    noise: Vec<ChaCha8Rng>,
    prbs: Vec<u16>,
    saturated: u64,
}

impl AfeGenerator {
    pub fn new(config: AfeConfig, scenario: SignalScenario) -> Result<Self, AfeError> {
        config.validate()?;
        scenario.validate()?;
        let noise = (0..config.channels)
            .map(|ch| {
                let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
                rng.set_stream(ch as u64);
                rng
            })
            .collect();
        let prbs = (0..config.channels).map(|ch| (ch as u16 % 0x7FFF) + 1).collect();
        Ok(Self { gain: config.gain(), config, scenario, position: 0, noise, prbs, saturated: 0 })
    }

    pub fn config(&self) -> &AfeConfig {
        &self.config
    }

    /// Absolute index of the next sample to be produced.
    pub fn position(&self) -> u64 {
        self.position
    }

    /// Samples clipped to full scale so far.
    pub fn saturation_count(&self) -> u64 {
        self.saturated
    }

    pub fn next_block(&mut self, n: usize) -> Result<SampleBlock, AfeError> {
        if n == 0 {
            return Err(AfeError::Params("block length must be positive".into()));
        }
        let channels = self.config.channels;
        let mut out = vec![0i16; channels * n];
        let normal = Normal::new(0.0, self.config.noise_rms).map_err(|e| AfeError::Params(e.to_string()))?;
        let fs = FULL_SCALE as f64;
        for ch in 0..channels {
            let dst = &mut out[ch * n..(ch + 1) * n];
            for (i, d) in dst.iter_mut().enumerate() {
                let t = self.position + i as u64;
                let clean = match self.scenario {
                    SignalScenario::Prbs { amplitude } => {
                        let s = self.prbs[ch];
                        let bit = ((s >> 14) ^ (s >> 13)) & 1;
                        self.prbs[ch] = ((s << 1) | bit) & 0x7FFF;
                        if bit == 1 {
                            amplitude
                        } else {
                            -amplitude
                        }
                    }
                    _ => evaluate(&self.scenario, &self.config, ch, t),
                };
                let mut v = clean * self.gain;
                if self.config.noise_rms > 0.0 {
                    v += normal.sample(&mut self.noise[ch]);
                }
                let r = v.round();
                *d = if r > fs {
                    self.saturated += 1;
                    FULL_SCALE
                } else if r < -fs {
                    self.saturated += 1;
                    -FULL_SCALE
                } else {
                    r as i16
                };
            }
        }
        let block = SampleBlock::new(channels, out, self.position, self.config.sample_rate)?;
        self.position += n as u64;
        Ok(block)
    }
}
