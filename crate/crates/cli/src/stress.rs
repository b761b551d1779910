//! Transport stress test: goodput over a payload × batch grid with no
//! front-end in the loop.

use serde::Serialize;
use usdaq_core::rdma::{throughput_grid, write_bench_csv, BenchConfig, BenchResult, ChannelModel};

use crate::config::{Mode, RunConfig};
use crate::{at, create, prepare_output, write_report, Stage, StageError};

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GridPoint {
    pub payload: usize,
    pub batch: usize,
    pub mean_gbps: f64,
    pub spread_gbps: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct StressReport {
    pub mode: Mode,
    pub seed: u64,
    pub repeats: usize,
    pub bytes_per_run: usize,
    pub points: Vec<GridPoint>,
    /// Mean goodput never drops when the payload grows at fixed batch.
    pub monotone_in_payload: bool,
    /// Mean goodput never drops when the batch grows at fixed payload.
    pub monotone_in_batch: bool,
}

/// True when the means in `results` (payload-major grid) are
/// non-decreasing along both axes. Returns (payload, batch).
pub fn monotone(results: &[BenchResult], payloads: usize, batches: usize) -> (bool, bool) {
    let m = |i: usize, j: usize| results[i * batches + j].mean();
    let along_payload = (0..batches).all(|j| (1..payloads).all(|i| m(i, j) >= m(i - 1, j)));
    let along_batch = (0..payloads).all(|i| (1..batches).all(|j| m(i, j) >= m(i, j - 1)));
    (along_payload, along_batch)
}

pub fn stress(cfg: &RunConfig) -> Result<StressReport, StageError> {
    cfg.validate()?;
    prepare_output(&cfg.output)?;
    let s = &cfg.stress;
    let mut payloads = s.payloads.clone();
    let mut batches = s.batches.clone();
    payloads.sort_unstable();
    batches.sort_unstable();
    let channel = &cfg.transport.channel;
    let base = BenchConfig {
        repeats: s.repeats,
        bytes_per_run: s.bytes_per_run,
        channel: ChannelModel { seed: channel.seed.wrapping_add(cfg.seed), ..*channel },
        post_overhead: s.post_overhead,
        poll_overhead: s.poll_overhead,
        ..Default::default()
    };
    let results = throughput_grid(&base, &payloads, &batches).map_err(at(Stage::Transport))?;
    write_bench_csv(create(cfg.output.join("csv").join("throughput_runs.csv"))?, &results)
        .map_err(at(Stage::Output))?;
    let points: Vec<GridPoint> = results
        .iter()
        .map(|r| GridPoint { payload: r.payload, batch: r.batch, mean_gbps: r.mean(), spread_gbps: r.spread() })
        .collect();
    let mut w = csv::Writer::from_writer(create(cfg.output.join("csv").join("throughput.csv"))?);
    for p in &points {
        w.serialize(p).map_err(at(Stage::Output))?;
    }
    w.flush().map_err(at(Stage::Output))?;
    let (monotone_in_payload, monotone_in_batch) = monotone(&results, payloads.len(), batches.len());
    let report = StressReport {
        mode: cfg.mode,
        seed: cfg.seed,
        repeats: s.repeats,
        bytes_per_run: s.bytes_per_run,
        points,
        monotone_in_payload,
        monotone_in_batch,
    };
    write_report(&cfg.output, &report)?;
    Ok(report)
}
