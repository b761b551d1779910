//! Simulated 16-channel analog front-end.

mod generator;
mod iq;
mod scenario;

pub use generator::AfeGenerator;
pub use iq::{iq_demodulate, IqDemodulator};
pub use scenario::{Echo, SignalScenario};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::block::BlockError;

pub const GAIN_MIN_DB: f64 = -3.0;
pub const GAIN_MAX_DB: f64 = 48.0;
pub const FULL_SCALE: i16 = i16::MAX;
/// Channels carried by one serial link.
pub const CHANNELS_PER_LINK: usize = 8;
pub const RAW_MAX_RATE: f64 = 80e6;
pub const IQ_MAX_RATE: f64 = 125e6;

#[derive(Debug, Error)]
pub enum AfeError {
    #[error("invalid front-end parameter: {0}")]
    Params(String),
    #[error("invalid scenario: {0}")]
    Scenario(String),
    #[error(transparent)]
    Block(#[from] BlockError),
    #[error("scenario file: {0}")]
    Toml(#[from] toml::de::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum OutputMode {
    #[default]
    Raw,
    Iq,
}

/// Analytic magnitude/phase model of the receive chain: a first-order
/// high-pass times an `order`-pole Butterworth low-pass.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BandResponse {
    pub highpass: f64,
    pub lowpass: f64,
    pub order: u32,
}

impl BandResponse {
    pub fn magnitude(&self, f: f64) -> f64 {
        let r = f / self.highpass;
        let hp = r / (1.0 + r * r).sqrt();
        let lp = 1.0 / (1.0 + (f / self.lowpass).powi(2 * self.order as i32)).sqrt();
        hp * lp
    }

    /// Phase of the high-pass section only; the low-pass phase is ignored
    /// since only steady-state tones pass through this model.
    pub fn phase(&self, f: f64) -> f64 {
        (self.highpass / f).atan()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AfeConfig {
    pub channels: usize,
    pub mode: OutputMode,
    pub sample_rate: f64,
    pub gain_db: f64,
    /// Recorded with the configuration; the simulated input is ideal so
    /// the termination does not change the samples.
    pub active_termination: bool,
    /// Additive white Gaussian noise, LSB RMS, added after gain.
    pub noise_rms: f64,
    pub seed: u64,
    /// Applied to tone scenarios only.
    pub response: Option<BandResponse>,
}

impl Default for AfeConfig {
    fn default() -> Self {
        Self {
            channels: 16,
            mode: OutputMode::Raw,
            sample_rate: RAW_MAX_RATE,
            gain_db: 0.0,
            active_termination: true,
            noise_rms: 0.0,
            seed: 0,
            response: None,
        }
    }
}

impl AfeConfig {
    pub fn validate(&self) -> Result<(), AfeError> {
        if self.channels == 0 {
            return Err(AfeError::Params("channel count must be positive".into()));
        }
        if !(GAIN_MIN_DB..=GAIN_MAX_DB).contains(&self.gain_db) {
            return Err(AfeError::Params(format!("gain {} dB outside [{GAIN_MIN_DB}, {GAIN_MAX_DB}]", self.gain_db)));
        }
        let max = match self.mode {
            OutputMode::Raw => RAW_MAX_RATE,
            OutputMode::Iq => IQ_MAX_RATE,
        };
        if !(self.sample_rate > 0.0 && self.sample_rate <= max) {
            return Err(AfeError::Params(format!("sample rate {} Hz outside (0, {max}]", self.sample_rate)));
        }
        if !(self.noise_rms >= 0.0 && self.noise_rms.is_finite()) {
            return Err(AfeError::Params("noise RMS must be finite and non-negative".into()));
        }
        if let Some(r) = self.response {
            if !(r.highpass > 0.0 && r.lowpass > r.highpass && r.order > 0) {
                return Err(AfeError::Params("response needs 0 < highpass < lowpass and order > 0".into()));
            }
        }
        Ok(())
    }

    pub fn gain(&self) -> f64 {
        10f64.powf(self.gain_db / 20.0)
    }

    /// Payload bit rate of one 8-channel link.
    pub fn link_payload_rate(&self) -> f64 {
        CHANNELS_PER_LINK as f64 * 16.0 * self.sample_rate
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn raw_link_payload_rate() {
        assert_eq!(AfeConfig::default().link_payload_rate(), 10.24e9);
    }

    #[test]
    fn gain_range_enforced() {
        let mut c = AfeConfig::default();
        for g in [-3.0, 0.0, 48.0] {
            c.gain_db = g;
            c.validate().unwrap();
        }
        for g in [-3.1, 48.5] {
            c.gain_db = g;
            assert!(c.validate().is_err());
        }
    }

    #[test]
    fn raw_mode_rate_limit() {
        let c = AfeConfig { sample_rate: 125e6, ..Default::default() };
        assert!(c.validate().is_err());
        let c = AfeConfig { sample_rate: 125e6, mode: OutputMode::Iq, ..Default::default() };
        c.validate().unwrap();
    }

    #[test]
    fn response_corners() {
        let r = BandResponse { highpass: 1e6, lowpass: 46e6, order: 2 };
        assert!((r.magnitude(8e6) - 1.0).abs() < 0.02);
        assert!((20.0 * r.magnitude(1e6).log10() + 3.01).abs() < 0.01);
        assert!((20.0 * r.magnitude(46e6).log10() + 3.01).abs() < 0.01);
    }
}
