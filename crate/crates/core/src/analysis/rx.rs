use rustfft::num_complex::Complex64;

use super::AnalysisError;
use crate::afe::FULL_SCALE;
use crate::block::SampleBlock;
use crate::dsp;

/// Kaiser windowed-sinc band-pass with 60 dB of stopband rejection.
#[derive(Debug, Clone, PartialEq)]
pub struct BandpassDesign {
    pub taps: Vec<f64>,
    pub f_lo: f64,
    pub f_hi: f64,
    pub sample_rate: f64,
}

impl BandpassDesign {
    pub const STOPBAND_DB: f64 = 60.0;

    /// Transition bands are half the narrowest of: the low edge, the
    /// passband, and the gap to Nyquist.
    pub fn new(sample_rate: f64, f_lo: f64, f_hi: f64) -> Result<Self, AnalysisError> {
        let nyq = sample_rate / 2.0;
        if !(f_lo > 0.0 && f_lo < f_hi && f_hi < nyq) {
            return Err(AnalysisError::Params(format!("band {f_lo}..{f_hi} Hz not inside (0, {nyq})")));
        }
        let tw = 0.5 * f_lo.min(f_hi - f_lo).min(nyq - f_hi) / sample_rate;
        let n = dsp::kaiser_taps(Self::STOPBAND_DB, tw);
        let beta = dsp::kaiser_beta(Self::STOPBAND_DB);
        let taps = dsp::bandpass(f_lo / sample_rate, f_hi / sample_rate, n, beta);
        Ok(Self { taps, f_lo, f_hi, sample_rate })
    }

    pub fn gain(&self, f: f64) -> f64 {
        dsp::response(&self.taps, f / self.sample_rate).norm()
    }
}

/// Zero-phase (delay-compensated) FIR filtering by FFT convolution.
fn convolve_centered(x: &[f64], h: &[f64]) -> Vec<f64> {
    if x.is_empty() {
        return Vec::new();
    }
    let n = (x.len() + h.len()).next_power_of_two();
    let pad = |v: &[f64]| {
        let mut c: Vec<Complex64> = v.iter().map(|&s| Complex64::new(s, 0.0)).collect();
        c.resize(n, Complex64::default());
        c
    };
    let xs = dsp::fft(&pad(x));
    let hs = dsp::fft(&pad(h));
    let prod: Vec<Complex64> = xs.iter().zip(&hs).map(|(a, b)| a * b).collect();
    let y = dsp::ifft(&prod);
    let mid = h.len() / 2;
    y[mid..mid + x.len()].iter().map(|c| c.re / n as f64).collect()
}

pub fn bandpass_trace(x: &[f64], design: &BandpassDesign) -> Vec<f64> {
    convolve_centered(x, &design.taps)
}

/// Analytic-signal magnitude.
pub fn envelope_trace(x: &[f64]) -> Vec<f64> {
    dsp::analytic(x).iter().map(|c| c.norm()).collect()
}

fn map_channels(block: &SampleBlock, f: impl Fn(&[f64]) -> Vec<f64>) -> Result<SampleBlock, AnalysisError> {
    let mut out = Vec::with_capacity(block.samples().len());
    let lim = FULL_SCALE as f64;
    for ch in 0..block.channels() {
        let x: Vec<f64> = block.channel(ch).iter().map(|&s| s as f64).collect();
        out.extend(f(&x).into_iter().map(|v| v.round().clamp(-lim, lim) as i16));
    }
    Ok(SampleBlock::new(block.channels(), out, block.start_index(), block.sample_rate())?)
}

/// Band-pass every channel; the frame keeps its length and time origin.
pub fn bandpass(frame: &SampleBlock, f_lo: f64, f_hi: f64) -> Result<SampleBlock, AnalysisError> {
    let d = BandpassDesign::new(frame.sample_rate(), f_lo, f_hi)?;
    map_channels(frame, |x| bandpass_trace(x, &d))
}

/// Envelope of every channel.
pub fn envelope(frame: &SampleBlock) -> Result<SampleBlock, AnalysisError> {
    map_channels(frame, envelope_trace)
}

#[cfg(test)]
mod tests {
    use std::f64::consts::PI;

    use super::*;

    const FS: f64 = 80e6;

    fn tone(f: f64, n: usize) -> Vec<f64> {
        (0..n).map(|t| (2.0 * PI * f * t as f64 / FS).sin()).collect()
    }

    fn rms(x: &[f64]) -> f64 {
        (x.iter().map(|v| v * v).sum::<f64>() / x.len() as f64).sqrt()
    }

    #[test]
    fn matches_direct_convolution() {
        let d = BandpassDesign::new(FS, 2e6, 8e6).unwrap();
        let x: Vec<f64> = (0..700).map(|i| ((i * 37) % 101) as f64 - 50.0).collect();
        let a = bandpass_trace(&x, &d);
        let b = dsp::filter_centered(&x, &d.taps);
        assert!(a.iter().zip(&b).all(|(p, q)| (p - q).abs() < 1e-8));
    }

    #[test]
    fn band_shape() {
        let d = BandpassDesign::new(FS, 2e6, 8e6).unwrap();
        assert!((20.0 * d.gain(5e6).log10()).abs() < 1.0);
        assert!(20.0 * d.gain(16e6).log10() < -40.0);
        assert!(d.gain(0.0) < 1e-9);
        let n = 20_000;
        let edge = d.taps.len();
        let y = bandpass_trace(&tone(16e6, n), &d);
        assert!(20.0 * (rms(&y[edge..n - edge]) / rms(&tone(16e6, n))).log10() < -40.0);
        let dc = bandpass_trace(&vec![1000.0; n], &d);
        assert!(dc[edge..n - edge].iter().all(|v| v.abs() < 10.0));
    }

    #[test]
    fn envelope_of_sine_is_flat() {
        let x: Vec<f64> = tone(3e6, 8000).iter().map(|v| 500.0 * v).collect();
        let e = envelope_trace(&x);
        for v in &e[80..7920] {
            assert!((v - 500.0).abs() < 10.0, "{v}");
        }
        assert!(envelope_trace(&vec![0.0; 64]).iter().all(|&v| v == 0.0));
    }

    #[test]
    fn invalid_band() {
        assert!(BandpassDesign::new(FS, 0.0, 5e6).is_err());
        assert!(BandpassDesign::new(FS, 6e6, 5e6).is_err());
        assert!(BandpassDesign::new(FS, 1e6, 40e6).is_err());
    }
}
