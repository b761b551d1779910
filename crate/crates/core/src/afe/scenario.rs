use std::f64::consts::PI;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{AfeConfig, AfeError};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Echo {
    /// Reflector depth, metres.
    pub depth: f64,
    pub reflectivity: f64,
}

/// Stimulus seen at the front-end inputs. Amplitudes are in LSB before gain.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum SignalScenario {
    /// Cosine tone on every channel.
    SweptSine {
        frequency: f64,
        amplitude: f64,
        #[serde(default)]
        phase: f64,
    },
    /// Hann-windowed tone bursts returning from point reflectors after a
    /// transmit at `tx_index`, repeated every `period` samples if set.
    PulseEcho {
        echoes: Vec<Echo>,
        center_frequency: f64,
        cycles: f64,
        #[serde(default = "default_sound_speed")]
        sound_speed: f64,
        amplitude: f64,
        #[serde(default)]
        tx_index: u64,
        #[serde(default)]
        period: Option<u64>,
    },
    /// Bipolar N-shaped pulse (Gaussian derivative) on selected channels,
    /// `delay` seconds after a laser shot at `tx_index`.
    OaPulse {
        delay: f64,
        /// Gaussian sigma, seconds.
        width: f64,
        amplitude: f64,
        channels: Vec<usize>,
        #[serde(default)]
        tx_index: u64,
        #[serde(default)]
        period: Option<u64>,
    },
    Dc {
        level: f64,
    },
    /// ±amplitude PRBS-15, channel `c` starts at LFSR state `c + 1`.
    Prbs {
        amplitude: f64,
    },
}

fn default_sound_speed() -> f64 {
    1540.0
}

impl SignalScenario {
    pub fn from_toml(text: &str) -> Result<Self, AfeError> {
        let s: Self = toml::from_str(text)?;
        s.validate()?;
        Ok(s)
    }

    pub fn load(path: &Path) -> Result<Self, AfeError> {
        let text = std::fs::read_to_string(path).map_err(|e| AfeError::Scenario(format!("{}: {e}", path.display())))?;
        Self::from_toml(&text)
    }

    pub fn validate(&self) -> Result<(), AfeError> {
        let bad = |m: &str| Err(AfeError::Scenario(m.into()));
        match self {
            Self::SweptSine { frequency, .. } if !(*frequency >= 0.0) => bad("tone frequency must be non-negative"),
            Self::PulseEcho { center_frequency, cycles, sound_speed, .. }
                if !(*center_frequency > 0.0 && *cycles > 0.0 && *sound_speed > 0.0) =>
            {
                bad("pulse-echo needs positive centre frequency, cycles and sound speed")
            }
            Self::PulseEcho { echoes, .. } if echoes.iter().any(|e| !(e.depth >= 0.0)) => {
                bad("echo depth must be non-negative")
            }
            Self::OaPulse { width, delay, .. } if !(*width > 0.0 && *delay >= 0.0) => {
                bad("OA pulse needs positive width and non-negative delay")
            }
            Self::PulseEcho { period: Some(0), .. } | Self::OaPulse { period: Some(0), .. } => {
                bad("repetition period must be positive")
            }
            _ => Ok(()),
        }
    }

    /// Echo centre sample for a reflector at `depth`, relative to transmit.
    pub fn echo_delay_samples(depth: f64, sound_speed: f64, sample_rate: f64) -> u64 {
        (2.0 * depth / sound_speed * sample_rate).round() as u64
    }
}

/// Most recent shot at or before `t`, and the one after it.
fn shots(t: u64, tx_index: u64, period: Option<u64>) -> [Option<u64>; 2] {
    if t < tx_index {
        return [None, Some(tx_index)];
    }
    match period {
        None => [Some(tx_index), None],
        Some(p) => {
            let k = (t - tx_index) / p;
            [Some(tx_index + k * p), Some(tx_index + (k + 1) * p)]
        }
    }
}

/// Noise-free input value for channel `ch` at absolute sample `t`,
/// before gain. PRBS is handled by the generator since it is stateful.
pub(super) fn evaluate(s: &SignalScenario, cfg: &AfeConfig, ch: usize, t: u64) -> f64 {
    let fs = cfg.sample_rate;
    match s {
        SignalScenario::SweptSine { frequency, amplitude, phase } => {
            let (mag, ph) = match cfg.response {
                Some(r) if *frequency > 0.0 => (r.magnitude(*frequency), r.phase(*frequency)),
                _ => (1.0, 0.0),
            };
            // reduce the phase argument exactly to keep long records clean
            let cyc = (frequency / fs * t as f64).fract();
            amplitude * mag * (2.0 * PI * cyc + phase + ph).cos()
        }
        SignalScenario::PulseEcho { echoes, center_frequency, cycles, sound_speed, amplitude, tx_index, period } => {
            let half = cycles / center_frequency * fs / 2.0;
            let mut v = 0.0;
            for shot in shots(t, *tx_index, *period).into_iter().flatten() {
                for e in echoes {
                    let c = shot as f64 + SignalScenario::echo_delay_samples(e.depth, *sound_speed, fs) as f64;
                    let dt = t as f64 - c;
                    if dt.abs() < half {
                        let w = 0.5 * (1.0 + (PI * dt / half).cos());
                        v += amplitude * e.reflectivity * w * (2.0 * PI * center_frequency * dt / fs).cos();
                    }
                }
            }
            v
        }
        SignalScenario::OaPulse { delay, width, amplitude, channels, tx_index, period } => {
            if !channels.contains(&ch) {
                return 0.0;
            }
            let sigma = width * fs;
            let mut v = 0.0;
            for shot in shots(t, *tx_index, *period).into_iter().flatten() {
                let u = (t as f64 - shot as f64 - delay * fs) / sigma;
                if u.abs() < 8.0 {
                    // peak magnitude of -u·exp(-u²/2) is exp(-1/2) at u = ±1
                    v -= amplitude * u * (0.5 - u * u / 2.0).exp();
                }
            }
            v
        }
        SignalScenario::Dc { level } => *level,
        SignalScenario::Prbs { .. } => 0.0,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_tagged_toml() {
        let s = SignalScenario::from_toml(
            r#"
            kind = "pulse_echo"
            center_frequency = 5e6
            cycles = 3
            amplitude = 1000
            echoes = [{ depth = 0.02, reflectivity = 0.5 }]
            "#,
        )
        .unwrap();
        match s {
            SignalScenario::PulseEcho { sound_speed, echoes, .. } => {
                assert_eq!(sound_speed, 1540.0);
                assert_eq!(echoes.len(), 1);
            }
            other => panic!("{other:?}"),
        }
        assert!(SignalScenario::from_toml(
            "kind = \"oa_pulse\"\ndelay = 1e-6\nwidth = 0\namplitude = 1\nchannels = []"
        )
        .is_err());
    }

    #[test]
    fn echo_delay() {
        // 2 · 0.0154 m / 1540 m/s = 20 µs = 1600 samples at 80 MHz
        assert_eq!(SignalScenario::echo_delay_samples(0.0154, 1540.0, 80e6), 1600);
    }

    #[test]
    fn oa_pulse_peaks_at_amplitude() {
        let s = SignalScenario::OaPulse {
            delay: 1e-6,
            width: 50e-9,
            amplitude: 1000.0,
            channels: vec![2],
            tx_index: 0,
            period: None,
        };
        let cfg = AfeConfig::default();
        // sigma = 4 samples, centre at 80
        assert!((evaluate(&s, &cfg, 2, 76) - 1000.0).abs() < 1e-9);
        assert!((evaluate(&s, &cfg, 2, 84) + 1000.0).abs() < 1e-9);
        assert_eq!(evaluate(&s, &cfg, 1, 76), 0.0);
    }
}
