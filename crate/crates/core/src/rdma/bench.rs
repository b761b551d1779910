use std::io::Write;

use bytes::Bytes;

use super::channel::ChannelModel;
use super::fabric::Fabric;
use super::{CompletionStatus, RdmaError, WorkRequest};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BenchConfig {
    pub payload: usize,
    pub batch: usize,
    pub repeats: usize,
    /// Bytes moved per run, rounded up to whole batches.
    pub bytes_per_run: usize,
    pub channel: ChannelModel,
    /// Host time to post one WR, seconds.
    pub post_overhead: f64,
    /// Host time from the last completion to noticing it on the CQ.
    pub poll_overhead: f64,
}

impl Default for BenchConfig {
    fn default() -> Self {
        Self {
            payload: 256 << 10,
            batch: 8,
            repeats: 10,
            bytes_per_run: 8 << 20,
            channel: ChannelModel::default(),
            post_overhead: 0.2e-6,
            poll_overhead: 5e-6,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BenchResult {
    pub payload: usize,
    pub batch: usize,
    /// Goodput of each run, Gb/s.
    pub runs: Vec<f64>,
}

impl BenchResult {
    pub fn mean(&self) -> f64 {
        self.runs.iter().sum::<f64>() / self.runs.len() as f64
    }

    /// Max minus min over the runs.
    pub fn spread(&self) -> f64 {
        let max = self.runs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let min = self.runs.iter().copied().fold(f64::INFINITY, f64::min);
        max - min
    }
}

/// Goodput of the post-batch / wait / poll / repost loop in simulated time.
pub fn throughput_bench(cfg: &BenchConfig) -> Result<BenchResult, RdmaError> {
    if cfg.payload == 0 || cfg.batch == 0 || cfg.repeats == 0 {
        return Err(RdmaError::WrLength(cfg.payload));
    }
    let span = cfg.payload * cfg.batch;
    let batches = cfg.bytes_per_run.div_ceil(span).max(1);
    let source: Bytes = (0..span).map(|i| (i * 7 + i / 4096) as u8).collect::<Vec<_>>().into();
    let mut runs = Vec::with_capacity(cfg.repeats);
    for run in 0..cfg.repeats {
        let channel = ChannelModel { seed: cfg.channel.seed.wrapping_add(run as u64), ..cfg.channel };
        let mut f = Fabric::with_channel(channel)?;
        let mr = f.connect(span)?;
        let t0 = f.now();
        let mut wr_id = 0u64;
        for _ in 0..batches {
            for k in 0..cfg.batch {
                f.advance_to(f.now() + cfg.post_overhead)?;
                let data = source.slice(k * cfg.payload..(k + 1) * cfg.payload);
                f.a.post_batch(vec![WorkRequest::write(wr_id, mr.rkey, (k * cfg.payload) as u64, data)])?;
                wr_id += 1;
            }
            let limit = f.now() + 1.0;
            for c in f.wait_completions(cfg.batch, limit)? {
                if c.status != CompletionStatus::Success {
                    return Err(RdmaError::Connect(format!("benchmark WR {} ended {:?}", c.wr_id, c.status)));
                }
            }
            f.advance_to(f.now() + cfg.poll_overhead)?;
        }
        let elapsed = f.now() - t0;
        runs.push((batches * span) as f64 * 8.0 / elapsed / 1e9);
    }
    Ok(BenchResult { payload: cfg.payload, batch: cfg.batch, runs })
}

/// Every (payload, batch) combination, payload-major.
pub fn throughput_grid(
    base: &BenchConfig,
    payloads: &[usize],
    batches: &[usize],
) -> Result<Vec<BenchResult>, RdmaError> {
    let mut out = Vec::new();
    for &payload in payloads {
        for &batch in batches {
            out.push(throughput_bench(&BenchConfig { payload, batch, ..*base })?);
        }
    }
    Ok(out)
}

pub fn write_bench_csv<W: Write>(w: W, results: &[BenchResult]) -> Result<(), RdmaError> {
    let mut csv = csv::Writer::from_writer(w);
    let io = |e: csv::Error| RdmaError::Io(e.into());
    csv.write_record(["payload", "batch", "run", "gbps"]).map_err(io)?;
    for r in results {
        for (i, g) in r.runs.iter().enumerate() {
            csv.write_record([r.payload.to_string(), r.batch.to_string(), i.to_string(), format!("{g:.4}")])
                .map_err(io)?;
        }
    }
    csv.flush()?;
    Ok(())
}
