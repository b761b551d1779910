//! Shared signal-processing helpers: windowed-sinc FIR design, windows,
//! FFT wrappers.

use std::f64::consts::PI;

use rustfft::num_complex::Complex64;
use rustfft::FftPlanner;

/// Zeroth-order modified Bessel function of the first kind.
pub fn bessel_i0(x: f64) -> f64 {
    let mut sum = 1.0;
    let mut term = 1.0;
    let q = x * x / 4.0;
    for k in 1..200 {
        term *= q / (k * k) as f64;
        sum += term;
        if term < sum * 1e-17 {
            break;
        }
    }
    sum
}

/// Kaiser's empirical beta for a stopband attenuation in dB.
pub fn kaiser_beta(atten_db: f64) -> f64 {
    if atten_db > 50.0 {
        0.1102 * (atten_db - 8.7)
    } else if atten_db >= 21.0 {
        0.5842 * (atten_db - 21.0).powf(0.4) + 0.07886 * (atten_db - 21.0)
    } else {
        0.0
    }
}

/// Odd tap count meeting `atten_db` with transition width `transition`
/// (cycles/sample).
pub fn kaiser_taps(atten_db: f64, transition: f64) -> usize {
    let n = ((atten_db - 7.95) / (14.36 * transition)).ceil().max(3.0) as usize + 1;
    n | 1
}

pub fn kaiser(n: usize, beta: f64) -> Vec<f64> {
    if n == 1 {
        return vec![1.0];
    }
    let denom = bessel_i0(beta);
    (0..n)
        .map(|i| {
            let r = 2.0 * i as f64 / (n - 1) as f64 - 1.0;
            bessel_i0(beta * (1.0 - r * r).max(0.0).sqrt()) / denom
        })
        .collect()
}

/// Periodic 4-term Blackman-Harris window.
pub fn blackman_harris(n: usize) -> Vec<f64> {
    const A: [f64; 4] = [0.35875, 0.48829, 0.14128, 0.01168];
    (0..n)
        .map(|i| {
            let x = 2.0 * PI * i as f64 / n as f64;
            A[0] - A[1] * x.cos() + A[2] * (2.0 * x).cos() - A[3] * (3.0 * x).cos()
        })
        .collect()
}

fn sinc(x: f64) -> f64 {
    if x == 0.0 {
        1.0
    } else {
        (PI * x).sin() / (PI * x)
    }
}

/// Kaiser-windowed low-pass with unity DC gain. `cutoff` in cycles/sample.
pub fn lowpass(cutoff: f64, taps: usize, beta: f64) -> Vec<f64> {
    let w = kaiser(taps, beta);
    let mid = (taps - 1) as f64 / 2.0;
    let mut h: Vec<f64> = (0..taps).map(|i| 2.0 * cutoff * sinc(2.0 * cutoff * (i as f64 - mid)) * w[i]).collect();
    let s: f64 = h.iter().sum();
    h.iter_mut().for_each(|v| *v /= s);
    h
}

/// Kaiser-windowed band-pass, unity gain at band centre and exactly zero
/// response at DC.
pub fn bandpass(lo: f64, hi: f64, taps: usize, beta: f64) -> Vec<f64> {
    let w = kaiser(taps, beta);
    let mid = (taps - 1) as f64 / 2.0;
    let mut h: Vec<f64> = (0..taps)
        .map(|i| {
            let t = i as f64 - mid;
            (2.0 * hi * sinc(2.0 * hi * t) - 2.0 * lo * sinc(2.0 * lo * t)) * w[i]
        })
        .collect();
    let dc = h.iter().sum::<f64>() / taps as f64;
    h.iter_mut().for_each(|v| *v -= dc);
    let g = response(&h, (lo + hi) / 2.0).norm();
    h.iter_mut().for_each(|v| *v /= g);
    h
}

/// Frequency response of `h` at `f` cycles/sample.
pub fn response(h: &[f64], f: f64) -> Complex64 {
    h.iter().enumerate().map(|(n, &c)| Complex64::from_polar(c, -2.0 * PI * f * n as f64)).sum()
}

/// Linear-phase filtering with the group delay removed: output has the
/// input's length, edges treated as zero.
pub fn filter_centered(x: &[f64], h: &[f64]) -> Vec<f64> {
    let mid = h.len() / 2;
    (0..x.len())
        .map(|n| {
            h.iter()
                .enumerate()
                .filter_map(|(k, &c)| (n + mid).checked_sub(k).and_then(|i| x.get(i)).map(|&v| c * v))
                .sum()
        })
        .collect()
}

pub fn fft(x: &[Complex64]) -> Vec<Complex64> {
    let mut buf = x.to_vec();
    FftPlanner::new().plan_fft_forward(buf.len()).process(&mut buf);
    buf
}

/// Unnormalised inverse: `ifft(fft(x)) == n·x`.
pub fn ifft(x: &[Complex64]) -> Vec<Complex64> {
    let mut buf = x.to_vec();
    FftPlanner::new().plan_fft_inverse(buf.len()).process(&mut buf);
    buf
}

pub fn rfft(x: &[f64]) -> Vec<Complex64> {
    let c: Vec<Complex64> = x.iter().map(|&v| Complex64::new(v, 0.0)).collect();
    fft(&c)
}

/// Analytic signal via the FFT Hilbert transform.
pub fn analytic(x: &[f64]) -> Vec<Complex64> {
    let n = x.len();
    if n == 0 {
        return Vec::new();
    }
    let mut spec = rfft(x);
    for (k, s) in spec.iter_mut().enumerate() {
        let scale = if k == 0 || (n % 2 == 0 && k == n / 2) {
            1.0
        } else if k < n.div_ceil(2) {
            2.0
        } else {
            0.0
        };
        *s *= scale / n as f64;
    }
    ifft(&spec)
}
