use std::f64::consts::PI;

use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use usdaq_core::analysis::*;

const FS: f64 = 125e6;

fn record(f: f64, samples: impl Iterator<Item = f64>) -> SweepRecord {
    SweepRecord { tone_frequency: f, sample_rate: FS, samples: samples.map(|v| v.round() as i16).collect() }
}

/// Sine of amplitude `amp` plus white noise sized so that the noise
/// between 1 MHz and Nyquist sits `snr_db` below the tone.
fn noisy_tone(f: f64, amp: f64, snr_db: f64, seed: u64) -> SweepRecord {
    let band = (FS / 2.0 - 1e6) / (FS / 2.0);
    // rounding to integers adds 1/12 LSB² of its own
    let var = (amp * amp / 2.0) / 10f64.powf(snr_db / 10.0) / band - 1.0 / 12.0;
    let noise = Normal::new(0.0, var.max(0.0).sqrt()).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let phase = rng.random::<f64>() * 2.0 * PI;
    let v: Vec<f64> =
        (0..RECORD_LEN).map(|t| amp * (2.0 * PI * f * t as f64 / FS + phase).cos() + noise.sample(&mut rng)).collect();
    record(f, v.into_iter())
}

#[test]
fn snr_at_reference_levels() {
    for (i, snr) in [20.0, 40.0, 56.0, 70.0].into_iter().enumerate() {
        let r = snr_estimate(&noisy_tone(9.87e6, 20000.0, snr, i as u64), &SnrParams::default()).unwrap();
        assert!((r.snr_db - snr).abs() <= 0.5, "{snr} dB estimated as {}", r.snr_db);
    }
}

/// Tones on a grid commensurate with fs (25 MHz = fs/5) would only ever
/// be sampled at a handful of phases, so the synthetic source runs off
/// its own clock, a few kHz away from nominal, like a bench generator.
const SOURCE_OFFSET: f64 = 3.217e3;

fn response_sweep(mag: impl Fn(f64) -> f64, seed: u64) -> Vec<SweepRecord> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    default_sweep_grid(FS, 0.2e6)
        .into_iter()
        .map(|f| {
            let a = 30000.0 * mag(f);
            let ph = rng.random::<f64>() * 2.0 * PI;
            let fa = f + SOURCE_OFFSET;
            record(f, (0..RECORD_LEN).map(move |t| a * (2.0 * PI * fa * t as f64 / FS + ph).cos()))
        })
        .collect()
}

#[test]
fn first_order_rolloff_matches_analytic() {
    let h = |f: f64| 1.0 / (1.0 + (f / 10e6).powi(2)).sqrt();
    let r = gain_curve(&response_sweep(h, 1)).unwrap();
    let peak = h(r.f_peak);
    for p in &r.points {
        let expect = 20.0 * (h(p.frequency) / peak).log10();
        assert!((p.gain_db - expect).abs() < 0.1, "{} Hz: {} vs {}", p.frequency, p.gain_db, expect);
    }
    assert_eq!(r.f_lo, None);
    assert!((r.f_hi.unwrap() - 10e6).abs() < 0.2e6);
}

/// First-order high-pass times second-order Butterworth low-pass.
fn band(hp: f64, lp: f64) -> impl Fn(f64) -> f64 {
    move |f: f64| {
        let r = f / hp;
        r / (1.0 + r * r).sqrt() / (1.0 + (f / lp).powi(4)).sqrt()
    }
}

fn bisect(g: impl Fn(f64) -> f64, mut a: f64, mut b: f64) -> f64 {
    for _ in 0..200 {
        let m = 0.5 * (a + b);
        if (g(a) > 0.0) == (g(m) > 0.0) {
            a = m;
        } else {
            b = m;
        }
    }
    0.5 * (a + b)
}

/// Exact −3 dB corners of `band(hp, lp)` referenced to its true maximum.
fn analytic_corners(hp: f64, lp: f64) -> (f64, f64) {
    let h = band(hp, lp);
    let fpk = (0..=100_000)
        .map(|i| 1e5 * 1.0001f64.powi(i))
        .take_while(|&f| f < 1e9)
        .max_by(|a, b| h(*a).total_cmp(&h(*b)))
        .unwrap();
    let g = |f: f64| 20.0 * (h(f) / h(fpk)).log10() + 3.0;
    (bisect(&g, 1.0, fpk), bisect(&g, fpk, 1e10))
}

#[test]
fn band_pass_corners_within_one_step() {
    // tune the sections so the corners land on 1.0 and 46.0 MHz
    let (mut hp, mut lp) = (1e6, 46e6);
    for _ in 0..30 {
        let (lo, hi) = analytic_corners(hp, lp);
        hp *= 1e6 / lo;
        lp *= 46e6 / hi;
    }
    let (lo, hi) = analytic_corners(hp, lp);
    assert!((lo - 1e6).abs() < 1.0 && (hi - 46e6).abs() < 10.0);
    let r = gain_curve(&response_sweep(band(hp, lp), 2)).unwrap();
    assert!((r.f_lo.unwrap() - 1e6).abs() <= 0.2e6, "{:?}", r.f_lo);
    assert!((r.f_hi.unwrap() - 46e6).abs() <= 0.2e6, "{:?}", r.f_hi);
    assert!(r.f_lo.unwrap() < r.f_peak && r.f_peak < r.f_hi.unwrap());
}

#[test]
fn burst_envelope_peaks_at_centre() {
    let fs = 80e6;
    let centre = 1234.0;
    let sigma = 40.0;
    let x: Vec<f64> = (0..4096)
        .map(|t| {
            let d = t as f64 - centre;
            1000.0 * (-d * d / (2.0 * sigma * sigma)).exp() * (2.0 * PI * 5e6 * d / fs).cos()
        })
        .collect();
    let e = envelope_trace(&x);
    let peak = (0..e.len()).max_by(|&a, &b| e[a].total_cmp(&e[b])).unwrap();
    assert_eq!(peak, centre as usize);
    // the envelope follows the Gaussian window
    for t in 1100..1370 {
        let d = t as f64 - centre;
        assert!((e[t] - 1000.0 * (-d * d / (2.0 * sigma * sigma)).exp()).abs() < 5.0);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(20))]

    #[test]
    fn snr_estimator_is_consistent(f0 in 2e6f64..60e6, snr in 15.0f64..75.0, seed: u64) {
        let r = snr_estimate(&noisy_tone(f0, 20000.0, snr, seed), &SnrParams::default()).unwrap();
        prop_assert!((r.snr_db - snr).abs() <= 0.5, "f0 {} snr {} est {}", f0, snr, r.snr_db);
    }

    #[test]
    fn more_guards_never_add_noise(f0 in 2e6f64..60e6, guards in 0usize..6, seed: u64) {
        let rec = noisy_tone(f0, 10000.0, 50.0, seed);
        let p = SnrParams { harmonic_guards: guards, ..Default::default() };
        let a = snr_estimate(&rec, &p).unwrap();
        let b = snr_estimate(&rec, &SnrParams { harmonic_guards: 2 * guards, ..p }).unwrap();
        prop_assert!(b.p_noise <= a.p_noise);
        for k in &b.noise_bins {
            prop_assert!(!b.mask.iter().any(|m| m.contains(*k)));
        }
    }

    #[test]
    fn envelope_bounds_signal(x in prop::collection::vec(-30000.0f64..30000.0, 64..2048)) {
        let e = envelope_trace(&x);
        let edge = x.len() / 100;
        for t in edge..x.len() - edge {
            prop_assert!(e[t] >= x[t].abs() * (1.0 - 1e-9) - 1e-6);
        }
    }
}
