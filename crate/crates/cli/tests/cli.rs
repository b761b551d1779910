use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::Command;

use usdaq_cli::{acquire, budget, characterize, stress, Mode, RunConfig, Stage};
use usdaq_core::afe::BandResponse;

fn config(mode: Mode, out: &Path) -> RunConfig {
    RunConfig { mode, output: out.to_path_buf(), ..Default::default() }
}

fn tree(root: &Path) -> BTreeMap<PathBuf, Vec<u8>> {
    let mut out = BTreeMap::new();
    let mut stack = vec![root.to_path_buf()];
    while let Some(dir) = stack.pop() {
        for e in fs::read_dir(&dir).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else {
                out.insert(p.strip_prefix(root).unwrap().to_path_buf(), fs::read(&p).unwrap());
            }
        }
    }
    out
}

#[test]
fn pulse_echo_frame_arrives_intact() {
    let dir = tempfile::tempdir().unwrap();
    let out = acquire(&config(Mode::AcquireUs, dir.path())).unwrap();
    let r = &out.report;
    assert_eq!(r.completions, 6);
    assert_eq!(r.overflow_count, 0);
    let f = &r.frames[0];
    assert_eq!((f.blocks, f.completions, f.bytes), (6, 6, 6 << 18));
    assert_eq!(f.tx_sha256, f.host_sha256);
    assert!((f.brightest_depth_m - 0.02).abs() < 0.5e-3, "{}", f.brightest_depth_m);
    assert_eq!(r.link.latency_octets, 1024);
    for name in
        ["report.json", "frames/frame_0000.bin", "csv/frame_0000.csv", "csv/image_0000.csv", "images/frame_0000.pgm"]
    {
        assert!(dir.path().join(name).is_file(), "{name}");
    }
}

#[test]
fn optoacoustic_energy_stays_on_lit_channels() {
    let dir = tempfile::tempdir().unwrap();
    let out = acquire(&config(Mode::AcquireOa, dir.path())).unwrap();
    let e = &out.report.frames[0].channel_energy;
    assert_eq!(e.len(), 16);
    assert!(e[4..8].iter().sum::<f64>() >= 0.9, "{e:?}");
}

#[test]
fn same_seed_same_bytes() {
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    acquire(&config(Mode::AcquireUs, a.path())).unwrap();
    acquire(&config(Mode::AcquireUs, b.path())).unwrap();
    let (ta, tb) = (tree(a.path()), tree(b.path()));
    assert_eq!(ta.keys().collect::<Vec<_>>(), tb.keys().collect::<Vec<_>>());
    assert!(ta == tb);
}

#[test]
fn skew_and_loss_leave_payload_and_latency_alone() {
    let dir = tempfile::tempdir().unwrap();
    let clean = acquire(&config(Mode::AcquireUs, &dir.path().join("clean"))).unwrap();
    let mut cfg = config(Mode::AcquireUs, &dir.path().join("faulty"));
    cfg.link.skew = vec![0, 300];
    cfg.transport.channel.loss_probability = 0.01;
    cfg.transport.channel.reorder = true;
    let faulty = acquire(&cfg).unwrap();
    assert_eq!(faulty.frames, clean.frames);
    assert_eq!(faulty.report.link.latency_octets, clean.report.link.latency_octets);
    assert_eq!(faulty.report.link.lane_skew, vec![0, 300]);
    assert!(faulty.report.transport.retransmitted_packets > 0);
    let f = &faulty.report.frames[0];
    assert_eq!(f.tx_sha256, f.host_sha256);
}

#[test]
fn frame_beyond_capacity_is_an_acquisition_error() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = config(Mode::AcquireUs, dir.path());
    cfg.trigger.window = 8192;
    cfg.trigger.frames = 3;
    let e = acquire(&cfg).unwrap_err();
    assert_eq!(e.stage, Stage::Acquisition);
    assert!(e.message.contains("L_f,max = 5639"), "{}", e.message);
}

fn usdaq(args: &[&str]) -> std::process::Output {
    Command::new(env!("CARGO_BIN_EXE_usdaq")).args(args).output().unwrap()
}

#[test]
fn binary_exit_codes_follow_the_failing_stage() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("out");
    let out = out.to_str().unwrap();
    let bad = dir.path().join("bad.toml");
    fs::write(&bad, "mode = \"acquire_us\"\n[trigger]\nwindow = 0\n").unwrap();
    assert_eq!(usdaq(&["acquire", "-c", bad.to_str().unwrap(), "-o", out]).status.code(), Some(10));
    let slow = dir.path().join("slow.toml");
    fs::write(&slow, "[transport]\nbatch_timeout = 1e-9\n").unwrap();
    let r = usdaq(&["acquire", "-c", slow.to_str().unwrap(), "-o", out]);
    assert_eq!(r.status.code(), Some(14), "{}", String::from_utf8_lossy(&r.stderr));
    let r = usdaq(&["budget", "-o", out]);
    assert!(r.status.success());
    assert!(Path::new(out).join("csv/budget.csv").is_file());
}

/// Exact −3 dB corners of `h`, found by bisection on a fine log grid.
fn oracle_corners(h: &BandResponse) -> (f64, f64) {
    let fpk = (0..200_000)
        .map(|i| 1e5 * 1.00005f64.powi(i))
        .max_by(|a, b| h.magnitude(*a).total_cmp(&h.magnitude(*b)))
        .unwrap();
    let g = |f: f64| 20.0 * (h.magnitude(f) / h.magnitude(fpk)).log10() + 3.0;
    let bisect = |mut a: f64, mut b: f64| {
        for _ in 0..200 {
            let m = 0.5 * (a + b);
            if (g(a) > 0.0) == (g(m) > 0.0) {
                a = m;
            } else {
                b = m;
            }
        }
        0.5 * (a + b)
    };
    (bisect(1.0, fpk), bisect(fpk, 1e10))
}

#[test]
fn characterize_finds_front_end_corners() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = config(Mode::Characterize, dir.path());
    let response = BandResponse { highpass: 2e6, lowpass: 25e6, order: 2 };
    cfg.afe.response = Some(response);
    cfg.afe.noise_rms = 1.0;
    let step = 1e6;
    cfg.characterize.step = step;
    let out = characterize(&cfg).unwrap();
    let (lo, hi) = oracle_corners(&response);
    let r = &out.report;
    assert!((r.f_lo.unwrap() - lo).abs() <= step, "{:?} vs {lo}", r.f_lo);
    assert!((r.f_hi.unwrap() - hi).abs() <= step, "{:?} vs {hi}", r.f_hi);
    assert_eq!(r.link_latency_octets, 1024);
    assert!(dir.path().join("csv/gain.csv").is_file() && dir.path().join("csv/snr.csv").is_file());
}

#[test]
fn characterize_snr_matches_injected_noise() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = config(Mode::Characterize, dir.path());
    cfg.afe.noise_rms = 3.0;
    cfg.characterize.frequencies = Some(vec![2.5e6, 9.9e6, 21.3e6, 37.1e6]);
    let out = characterize(&cfg).unwrap();
    let a = cfg.characterize.amplitude;
    let band = (40e6 - 1e6) / 40e6;
    // rounding to codes adds 1/12 LSB² to the injected noise
    let expect = 10.0 * ((a * a / 2.0) / ((9.0 + 1.0 / 12.0) * band)).log10();
    for s in &out.snr {
        assert!((s.snr_db - expect).abs() < 0.5, "{} vs {expect}", s.snr_db);
    }
}

#[test]
fn single_tone_sweep_is_an_analysis_error() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = config(Mode::Characterize, dir.path());
    cfg.characterize.frequencies = Some(vec![5e6]);
    assert_eq!(characterize(&cfg).unwrap_err().stage, Stage::Analysis);
}

#[test]
fn stress_grid_is_monotone_and_repeatable() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = config(Mode::Stress, dir.path());
    cfg.stress.payloads = vec![64 << 10, 1 << 20];
    cfg.stress.batches = vec![1, 16];
    cfg.stress.repeats = 3;
    cfg.stress.bytes_per_run = 2 << 20;
    let r = stress(&cfg).unwrap();
    assert!(r.monotone_in_payload && r.monotone_in_batch);
    assert!(r.points.iter().all(|p| p.spread_gbps == 0.0));
    let gbps = |payload, batch| r.points.iter().find(|p| p.payload == payload && p.batch == batch).unwrap().mean_gbps;
    assert!(gbps(1 << 20, 16) >= 2.0 * gbps(64 << 10, 1));
}

#[test]
fn budget_reference_rows() {
    let dir = tempfile::tempdir().unwrap();
    let r = budget(&config(Mode::Budget, dir.path())).unwrap();
    assert_eq!(r.rows[0].l_f_max, Some(5639));
    let csv = fs::read_to_string(dir.path().join("csv/budget.csv")).unwrap();
    assert_eq!(csv.lines().count(), 1 + r.rows.len());
}
