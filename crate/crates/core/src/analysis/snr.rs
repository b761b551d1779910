use std::io::Write;

use serde::{Deserialize, Serialize};

use super::{AnalysisError, SweepRecord};
use crate::afe::FULL_SCALE;
use crate::dsp;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SnrWindow {
    Rectangular,
    /// 4-term Blackman-Harris; leakage stays below the noise of a 16-bit
    /// record for tones between bins.
    BlackmanHarris,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SnrParams {
    /// Minimum half-width of the fundamental region, bins.
    pub span_bins: usize,
    /// Half-width as a fraction of the fundamental bin index, when larger.
    pub span_fraction: f64,
    /// Guarded harmonics, starting at the 2nd.
    pub harmonic_guards: usize,
    /// Guarded subharmonics f0/2, f0/3, …
    pub subharmonic_guards: usize,
    /// Half-width of each DC, harmonic and subharmonic guard, bins.
    pub guard_bins: usize,
    /// Noise is integrated from here to Nyquist, Hz.
    pub noise_floor_hz: f64,
    pub window: SnrWindow,
}

impl Default for SnrParams {
    fn default() -> Self {
        Self {
            span_bins: 8,
            span_fraction: 0.01,
            harmonic_guards: 3,
            subharmonic_guards: 1,
            guard_bins: 8,
            noise_floor_hz: 1e6,
            window: SnrWindow::BlackmanHarris,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MaskKind {
    Dc,
    Fundamental,
    Harmonic(usize),
    Subharmonic(usize),
}

/// Inclusive bin range excluded from the noise sum.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct MaskRange {
    pub kind: MaskKind,
    pub lo: usize,
    pub hi: usize,
}

impl MaskRange {
    pub fn contains(&self, k: usize) -> bool {
        (self.lo..=self.hi).contains(&k)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SnrResult {
    pub frequency: f64,
    pub fundamental_bin: usize,
    /// Power in signal units: a sine of amplitude A integrates to A²/2.
    pub p_sig: f64,
    pub p_noise: f64,
    pub snr_db: f64,
    /// Relative to a full-scale sine instead of the measured tone.
    pub snr_full_scale_db: f64,
    pub mask: Vec<MaskRange>,
    /// Bins summed into `p_noise`.
    pub noise_bins: Vec<usize>,
}

/// Folds `f` into the first Nyquist zone and returns its bin.
fn alias_bin(f: f64, fs: f64, n: usize) -> usize {
    let f = f.rem_euclid(fs);
    let f = if f > fs / 2.0 { fs - f } else { f };
    ((f / fs * n as f64).round() as usize).min(n / 2)
}

/// Masked-FFT SNR of one tone record.
pub fn snr_estimate(record: &SweepRecord, params: &SnrParams) -> Result<SnrResult, AnalysisError> {
    let n = record.samples.len();
    let fs = record.sample_rate;
    let f0 = record.tone_frequency;
    if n < 16 {
        return Err(AnalysisError::Params(format!("record of {n} samples is too short")));
    }
    if !(f0 > 0.0 && f0 < fs / 2.0) {
        return Err(AnalysisError::Params(format!("tone {f0} Hz outside (0, {})", fs / 2.0)));
    }
    let k0 = (f0 / fs * n as f64).round() as usize;
    let g = params.guard_bins;
    if k0 <= g {
        return Err(AnalysisError::Params(format!("fundamental bin {k0} lies in the DC guard (0..={g})")));
    }

    let mean = record.samples.iter().map(|&s| s as f64).sum::<f64>() / n as f64;
    let w = match params.window {
        SnrWindow::Rectangular => vec![1.0; n],
        SnrWindow::BlackmanHarris => dsp::blackman_harris(n),
    };
    let x: Vec<f64> = record.samples.iter().zip(&w).map(|(&s, &w)| (s as f64 - mean) * w).collect();
    let spec = dsp::rfft(&x);
    let s2: f64 = w.iter().map(|v| v * v).sum();
    let half = n / 2;
    let power = |k: usize| {
        let one_sided = if k == 0 || (n % 2 == 0 && k == half) { 1.0 } else { 2.0 };
        one_sided * spec[k].norm_sqr() / (n as f64 * s2)
    };

    let span = params.span_bins.max((params.span_fraction * k0 as f64).ceil() as usize);
    let clip = |c: usize, h: usize| MaskRange { kind: MaskKind::Dc, lo: c.saturating_sub(h), hi: (c + h).min(half) };
    let mut mask = vec![MaskRange { kind: MaskKind::Dc, lo: 0, hi: g }];
    mask.push(MaskRange { kind: MaskKind::Fundamental, ..clip(k0, span) });
    for h in 2..params.harmonic_guards + 2 {
        mask.push(MaskRange { kind: MaskKind::Harmonic(h), ..clip(alias_bin(h as f64 * f0, fs, n), g) });
    }
    for m in 2..params.subharmonic_guards + 2 {
        mask.push(MaskRange { kind: MaskKind::Subharmonic(m), ..clip(alias_bin(f0 / m as f64, fs, n), g) });
    }

    let fundamental = mask[1];
    let p_sig: f64 = (fundamental.lo..=fundamental.hi).map(power).sum();
    let first = (params.noise_floor_hz / fs * n as f64).ceil() as usize;
    let noise_bins: Vec<usize> = (first..=half).filter(|&k| !mask.iter().any(|m| m.contains(k))).collect();
    let p_noise: f64 = noise_bins.iter().map(|&k| power(k)).sum();
    if !(p_sig > 0.0 && p_noise > 0.0) {
        return Err(AnalysisError::Params(format!("degenerate powers: signal {p_sig}, noise {p_noise}")));
    }
    let full = (FULL_SCALE as f64).powi(2) / 2.0;
    Ok(SnrResult {
        frequency: f0,
        fundamental_bin: k0,
        p_sig,
        p_noise,
        snr_db: 10.0 * (p_sig / p_noise).log10(),
        snr_full_scale_db: 10.0 * (full / p_noise).log10(),
        mask,
        noise_bins,
    })
}

pub fn write_snr_csv<W: Write>(w: W, results: &[SnrResult]) -> Result<(), AnalysisError> {
    let mut csv = csv::Writer::from_writer(w);
    csv.write_record(["frequency_hz", "p_sig", "p_noise", "snr_db", "snr_fs_db"])?;
    for r in results {
        csv.write_record([
            format!("{}", r.frequency),
            format!("{:.6e}", r.p_sig),
            format!("{:.6e}", r.p_noise),
            format!("{:.3}", r.snr_db),
            format!("{:.3}", r.snr_full_scale_db),
        ])?;
    }
    csv.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use std::f64::consts::PI;

    use super::*;

    fn sine(f: f64, amp: f64, n: usize) -> SweepRecord {
        let samples = (0..n).map(|t| (amp * (2.0 * PI * f * t as f64 / 125e6 + 0.3).sin()).round() as i16).collect();
        SweepRecord { tone_frequency: f, sample_rate: 125e6, samples }
    }

    #[test]
    fn full_scale_sine_hits_quantisation_floor() {
        let r = snr_estimate(&sine(7.123e6, 32767.0, 32768), &SnrParams::default()).unwrap();
        // 6.02·16 + 1.76 ≈ 98 dB for an ideal 16-bit quantiser
        assert!(r.snr_db > 90.0, "{}", r.snr_db);
        assert!((r.p_sig - 32767f64.powi(2) / 2.0).abs() / r.p_sig < 0.01);
    }

    #[test]
    fn mask_and_noise_are_disjoint() {
        let r = snr_estimate(&sine(20e6, 1000.0, 8192), &SnrParams::default()).unwrap();
        for &k in &r.noise_bins {
            assert!(!r.mask.iter().any(|m| m.contains(k)));
        }
        // 3rd harmonic at 60 MHz, 4th folds to 45 MHz
        let bin = |f: f64| (f / 125e6 * 8192.0).round() as usize;
        assert!(r.mask.iter().any(|m| m.kind == MaskKind::Harmonic(3) && m.contains(bin(60e6))));
        assert!(r.mask.iter().any(|m| m.kind == MaskKind::Harmonic(4) && m.contains(bin(45e6))));
    }

    #[test]
    fn span_grows_with_frequency() {
        let p = SnrParams::default();
        let r = snr_estimate(&sine(50e6, 1000.0, 32768), &p).unwrap();
        let f = r.mask.iter().find(|m| m.kind == MaskKind::Fundamental).unwrap();
        let k0 = r.fundamental_bin;
        assert_eq!(f.hi - k0, (0.01 * k0 as f64).ceil() as usize);
    }

    #[test]
    fn rejects_bad_tones() {
        let p = SnrParams::default();
        assert!(snr_estimate(&sine(10e3, 1000.0, 8192), &p).is_err());
        assert!(snr_estimate(&SweepRecord { tone_frequency: 70e6, ..sine(1e6, 1.0, 64) }, &p).is_err());
    }
}
