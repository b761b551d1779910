//! Receive-chain characterization: a tone sweep through the front-end
//! model and the serial link, then gain, −3 dB corners and SNR per tone.

use std::f64::consts::PI;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;
use usdaq_core::afe::{AfeConfig, AfeGenerator, SignalScenario};
use usdaq_core::analysis::{
    default_sweep_grid, gain_curve, snr_estimate, write_gain_csv, write_snr_csv, BandwidthResult, SnrResult,
    SweepRecord,
};
use usdaq_core::jesd::{rx_link, tx_link};

use crate::config::{Mode, RunConfig};
use crate::{at, create, prepare_output, write_report, Stage, StageError};

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CharacterizeReport {
    pub mode: Mode,
    pub seed: u64,
    pub tones: usize,
    pub record_len: usize,
    pub f_peak: f64,
    pub f_lo: Option<f64>,
    pub f_hi: Option<f64>,
    pub min_snr_db: f64,
    pub max_snr_db: f64,
    /// Octet clocks through the link, the same for every tone.
    pub link_latency_octets: u64,
}

#[derive(Debug, Clone)]
pub struct CharacterizeOutcome {
    pub report: CharacterizeReport,
    pub records: Vec<SweepRecord>,
    pub bandwidth: BandwidthResult,
    pub snr: Vec<SnrResult>,
}

pub fn tone_grid(cfg: &RunConfig) -> Vec<f64> {
    match &cfg.characterize.frequencies {
        Some(f) => f.clone(),
        None => default_sweep_grid(cfg.afe.sample_rate, cfg.characterize.step),
    }
}

/// Records tone `index` of the sweep on channel 0 of one link, after
/// serialization and deserialization. Returns the record (labelled with
/// the nominal frequency) and the link latency.
pub fn capture_tone(cfg: &RunConfig, index: usize, nominal: f64) -> Result<(SweepRecord, u64), StageError> {
    let c = &cfg.characterize;
    let p = &cfg.link.params;
    let seed = cfg.afe.seed.wrapping_add(cfg.seed);
    let phase = ChaCha8Rng::seed_from_u64(seed ^ (index as u64).rotate_left(32)).random::<f64>() * 2.0 * PI;
    let afe = AfeConfig { channels: p.converters, seed: seed.wrapping_add(index as u64), ..cfg.afe.clone() };
    let tone = SignalScenario::SweptSine { frequency: nominal + c.source_offset, amplitude: c.amplitude, phase };
    let start = p.data_start_frame(0);
    let flush = p.elastic_depth.div_ceil(p.octets_per_frame) + p.frames_per_multiframe;
    let raw = AfeGenerator::new(afe, tone)
        .and_then(|mut g| g.next_block(start as usize + c.record_len + flush))
        .map_err(at(Stage::Producer))?;
    let lanes = tx_link(&[raw], p, 0).map_err(at(Stage::Link))?;
    let (rx, status) = rx_link(&lanes, p).map_err(at(Stage::Link))?;
    let rec = rx
        .slice(start, c.record_len)
        .ok_or_else(|| StageError::new(Stage::Link, "link released fewer samples than a record"))?;
    let samples = rec.channel(0).to_vec();
    Ok((SweepRecord { tone_frequency: nominal, sample_rate: cfg.afe.sample_rate, samples }, status.latency_octets))
}

fn sweep(cfg: &RunConfig, tones: &[f64]) -> Result<Vec<(SweepRecord, u64)>, StageError> {
    let threads = match cfg.characterize.threads {
        0 => std::thread::available_parallelism().map_or(1, |n| n.get()),
        n => n,
    }
    .min(tones.len().max(1));
    let next = AtomicUsize::new(0);
    let out: Mutex<Vec<Option<Result<(SweepRecord, u64), StageError>>>> = Mutex::new(vec![None; tones.len()]);
    std::thread::scope(|s| {
        for _ in 0..threads {
            s.spawn(|| loop {
                let i = next.fetch_add(1, Ordering::Relaxed);
                if i >= tones.len() {
                    break;
                }
                let r = capture_tone(cfg, i, tones[i]);
                out.lock().expect("sweep lock")[i] = Some(r);
            });
        }
    });
    out.into_inner().expect("sweep lock").into_iter().map(|r| r.expect("every tone captured")).collect()
}

pub fn characterize(cfg: &RunConfig) -> Result<CharacterizeOutcome, StageError> {
    if cfg.mode != Mode::Characterize {
        return Err(StageError::new(Stage::Config, "characterize needs mode characterize"));
    }
    cfg.validate()?;
    prepare_output(&cfg.output)?;
    let tones = tone_grid(cfg);
    let captured = sweep(cfg, &tones)?;
    let latency = captured.first().map_or(0, |c| c.1);
    let records: Vec<SweepRecord> = captured.into_iter().map(|c| c.0).collect();
    let bandwidth = gain_curve(&records).map_err(at(Stage::Analysis))?;
    let snr = records
        .iter()
        .map(|r| {
            // bins follow the tone actually generated
            let actual = SweepRecord { tone_frequency: r.tone_frequency + cfg.characterize.source_offset, ..r.clone() };
            snr_estimate(&actual, &cfg.characterize.snr)
        })
        .collect::<Result<Vec<_>, _>>()
        .map_err(at(Stage::Analysis))?;
    write_gain_csv(create(cfg.output.join("csv").join("gain.csv"))?, &bandwidth).map_err(at(Stage::Output))?;
    write_snr_csv(create(cfg.output.join("csv").join("snr.csv"))?, &snr).map_err(at(Stage::Output))?;
    let snr_db = snr.iter().map(|s| s.snr_db);
    let report = CharacterizeReport {
        mode: cfg.mode,
        seed: cfg.seed,
        tones: records.len(),
        record_len: cfg.characterize.record_len,
        f_peak: bandwidth.f_peak,
        f_lo: bandwidth.f_lo,
        f_hi: bandwidth.f_hi,
        min_snr_db: snr_db.clone().fold(f64::INFINITY, f64::min),
        max_snr_db: snr_db.fold(f64::NEG_INFINITY, f64::max),
        link_latency_octets: latency,
    };
    write_report(&cfg.output, &report)?;
    Ok(CharacterizeOutcome { report, records, bandwidth, snr })
}
