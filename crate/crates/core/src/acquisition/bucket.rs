//! Ring buffer capacity: the closed-form leaky-bucket bound and an
//! event-driven occupancy simulation used to check it.

use std::cmp::{Ordering, Reverse};
use std::collections::BinaryHeap;
use std::io::Write;

use serde::Serialize;

use super::AcqError;

/// Read-start latency that reproduces 5639 samples/channel with a 4 MiB
/// buffer and the reference rates. Any value in (179.841, 179.871] µs does.
pub const REFERENCE_TAU_MIB: f64 = 179.856e-6;
/// Same, reading the buffer size as 4·10⁶ bytes: (163.581, 163.611] µs.
pub const REFERENCE_TAU_MB: f64 = 163.60e-6;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LeakyBucketModel {
    /// Write rate, bits/s.
    pub r_in: f64,
    /// Worst-case read rate, bits/s.
    pub r_out: f64,
    /// Usable capacity, bits.
    pub buffer_bits: f64,
    /// Worst-case read-start latency, seconds.
    pub tau: f64,
    pub channels: usize,
    pub bits_per_sample: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub enum FrameLength {
    /// Reads keep up with writes; any frame fits.
    Unbounded,
    /// Samples per channel.
    Limited(u64),
    /// Nothing fits; the reason says why.
    Infeasible(String),
}

impl LeakyBucketModel {
    pub fn new(
        r_in: f64,
        r_out: f64,
        buffer_bits: f64,
        tau: f64,
        channels: usize,
        bits_per_sample: usize,
    ) -> Result<Self, AcqError> {
        let m = Self { r_in, r_out, buffer_bits, tau, channels, bits_per_sample };
        m.validate()?;
        Ok(m)
    }

    pub fn validate(&self) -> Result<(), AcqError> {
        let pos = |v: f64| v > 0.0 && v.is_finite();
        if !(pos(self.r_in) && pos(self.r_out) && pos(self.buffer_bits)) {
            return Err(AcqError::Params("rates and buffer size must be positive".into()));
        }
        if !(self.tau >= 0.0 && self.tau.is_finite()) {
            return Err(AcqError::Params("read-start latency must be non-negative".into()));
        }
        if self.channels == 0 || self.bits_per_sample == 0 {
            return Err(AcqError::Params("channels and sample width must be positive".into()));
        }
        Ok(())
    }

    /// 256 channels × 16 bit at 80 MSPS into 4 MiB, read at 95.6 Gb/s.
    pub fn reference(tau: f64) -> Self {
        Self {
            r_in: 256.0 * 16.0 * 80e6,
            r_out: 95.6e9,
            buffer_bits: (4u64 * 1024 * 1024 * 8) as f64,
            tau,
            channels: 256,
            bits_per_sample: 16,
        }
    }

    /// As [`reference`](Self::reference) with a 4 MB (10⁶) buffer.
    pub fn reference_mb(tau: f64) -> Self {
        Self { buffer_bits: 4e6 * 8.0, ..Self::reference(tau) }
    }

    pub fn sample_bits(&self) -> f64 {
        (self.channels * self.bits_per_sample) as f64
    }

    /// Per-channel sample rate implied by the write rate.
    pub fn sample_rate(&self) -> f64 {
        self.r_in / self.sample_bits()
    }

    /// Largest frame in bits, before rounding to whole samples.
    pub fn max_frame_bits(&self) -> Option<f64> {
        if self.r_in <= self.r_out {
            return None;
        }
        // R_in(B − R_out·τ)/(R_in − R_out), arranged so R_out → 0 gives B exactly
        Some((self.buffer_bits - self.r_out * self.tau) / (1.0 - self.r_out / self.r_in))
    }

    /// Longest frame whose back-to-back repetition at [`max_fps`](Self::max_fps)
    /// never overfills the buffer. A single isolated frame may be longer.
    pub fn max_frame_length(&self) -> FrameLength {
        let drained = self.r_out * self.tau;
        if self.r_in <= self.r_out {
            return FrameLength::Unbounded;
        }
        if self.buffer_bits <= drained {
            return FrameLength::Infeasible(format!(
                "buffer of {} bits fills before the first read starts ({drained:.0} bits arrive in τ at R_out)",
                self.buffer_bits
            ));
        }
        let samples = self.max_frame_bits().expect("bounded") / self.sample_bits();
        FrameLength::Limited((samples * (1.0 + 1e-12)).floor() as u64)
    }

    /// Frames per second at `frame_len` samples/channel.
    pub fn max_fps(&self, frame_len: u64) -> Result<f64, AcqError> {
        if frame_len == 0 {
            return Err(AcqError::Params("frame length must be positive".into()));
        }
        match self.max_frame_length() {
            FrameLength::Limited(max) if frame_len > max => return Err(AcqError::Capacity { frame_len, max }),
            FrameLength::Infeasible(_) => return Err(AcqError::Capacity { frame_len, max: 0 }),
            _ => {}
        }
        Ok(self.r_out.min(self.r_in) / (frame_len as f64 * self.sample_bits()))
    }

    /// One budget table row. With `frame_len` unset the row is evaluated
    /// at the maximum frame length.
    pub fn budget_row(&self, frame_len: Option<u64>) -> BudgetRow {
        let limit = self.max_frame_length();
        let l_max = match limit {
            FrameLength::Limited(l) => Some(l),
            _ => None,
        };
        let at = frame_len.or(l_max);
        let fps = at.and_then(|l| self.max_fps(l).ok());
        let status = match (&limit, frame_len) {
            (FrameLength::Infeasible(_), _) => "infeasible",
            (FrameLength::Unbounded, _) => "unbounded",
            (FrameLength::Limited(m), Some(l)) if l > *m => "exceeds",
            _ => "ok",
        };
        BudgetRow {
            channels: self.channels,
            bits: self.bits_per_sample,
            fs: self.sample_rate(),
            b: self.buffer_bits,
            r_out: self.r_out,
            tau_s: self.tau,
            l_f_max: l_max,
            fps_max: fps,
            frame_len: at,
            status,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BudgetRow {
    pub channels: usize,
    pub bits: usize,
    pub fs: f64,
    #[serde(rename = "B")]
    pub b: f64,
    #[serde(rename = "R_out")]
    pub r_out: f64,
    pub tau_s: f64,
    #[serde(rename = "L_f_max")]
    pub l_f_max: Option<u64>,
    #[serde(rename = "FPS_max")]
    pub fps_max: Option<f64>,
    pub frame_len: Option<u64>,
    pub status: &'static str,
}

pub fn write_budget_csv<W: Write>(rows: &[BudgetRow], w: W) -> Result<(), AcqError> {
    let mut csv = csv::Writer::from_writer(w);
    for r in rows {
        csv.serialize(r)?;
    }
    csv.flush()?;
    Ok(())
}

#[derive(Debug, Clone, PartialEq)]
pub struct OccupancyReport {
    pub peak_bits: f64,
    pub overflow: bool,
    pub first_overflow: Option<f64>,
    pub frames: usize,
    pub blocks_read: u64,
    /// Time the last block finished reading.
    pub end_time: f64,
}

#[derive(Debug, Clone, Copy)]
struct Event {
    time: f64,
    /// Change in d(occupancy)/dt.
    slope: f64,
    read_done: bool,
}

impl PartialEq for Event {
    fn eq(&self, other: &Self) -> bool {
        self.cmp(other) == Ordering::Equal
    }
}
impl Eq for Event {}
impl PartialOrd for Event {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}
impl Ord for Event {
    fn cmp(&self, other: &Self) -> Ordering {
        self.time.total_cmp(&other.time)
    }
}

/// Simulates frames of `frame_len` samples/channel triggered at `triggers`
/// (seconds). The writer fills blocks at `r_in`; a block becomes readable
/// once complete; the reader takes blocks in order at `r_out`, starting no
/// earlier than `tau` after the frame's trigger. Occupancy is written
/// minus read bits, with reads freeing space as they progress.
pub fn simulate_frames(
    model: &LeakyBucketModel,
    frame_len: u64,
    block_size: usize,
    triggers: &[f64],
) -> OccupancyReport {
    let frame_bits = frame_len as f64 * model.sample_bits();
    let block_bits = (block_size * 8) as f64;
    let n_blocks = (frame_bits / block_bits).ceil() as u64;
    let mut heap = BinaryHeap::new();
    let mut read_end = f64::NEG_INFINITY;
    for &t0 in triggers {
        heap.push(Reverse(Event { time: t0, slope: model.r_in, read_done: false }));
        heap.push(Reverse(Event { time: t0 + frame_bits / model.r_in, slope: -model.r_in, read_done: false }));
        for b in 0..n_blocks {
            let lo = b as f64 * block_bits;
            let hi = (lo + block_bits).min(frame_bits);
            let written = t0 + hi / model.r_in;
            let start = (t0 + model.tau).max(read_end).max(written);
            read_end = start + (hi - lo) / model.r_out;
            heap.push(Reverse(Event { time: start, slope: -model.r_out, read_done: false }));
            heap.push(Reverse(Event { time: read_end, slope: model.r_out, read_done: true }));
        }
    }
    let limit = model.buffer_bits * (1.0 + 1e-9);
    let mut report = OccupancyReport {
        peak_bits: 0.0,
        overflow: false,
        first_overflow: None,
        frames: triggers.len(),
        blocks_read: 0,
        end_time: read_end.max(0.0),
    };
    let (mut now, mut occ, mut slope) = (f64::NEG_INFINITY, 0.0f64, 0.0f64);
    while let Some(Reverse(ev)) = heap.pop() {
        if now.is_finite() {
            occ += slope * (ev.time - now);
        }
        now = ev.time;
        slope += ev.slope;
        report.blocks_read += ev.read_done as u64;
        report.peak_bits = report.peak_bits.max(occ);
        if occ > limit && !report.overflow {
            report.overflow = true;
            report.first_overflow = Some(now);
        }
    }
    report
}

/// Back-to-back frames at the highest sustainable frame rate for
/// `duration` seconds (at least one frame).
pub fn simulate_occupancy(
    model: &LeakyBucketModel,
    frame_len: u64,
    block_size: usize,
    duration: f64,
) -> OccupancyReport {
    let frame_bits = frame_len as f64 * model.sample_bits();
    let period = frame_bits / model.r_in.min(model.r_out);
    let n = ((duration / period).floor() as usize).max(1);
    let triggers: Vec<f64> = (0..n).map(|k| k as f64 * period).collect();
    simulate_frames(model, frame_len, block_size, &triggers)
}

#[cfg(test)]
mod tests {
    use super::*;

    const BLOCK: usize = 256 * 1024;

    #[test]
    fn zero_latency_reference() {
        assert_eq!(LeakyBucketModel::reference(0.0).max_frame_length(), FrameLength::Limited(11_566));
    }

    #[test]
    fn back_solved_latency_reference() {
        let m = LeakyBucketModel::reference(REFERENCE_TAU_MIB);
        assert_eq!(m.max_frame_length(), FrameLength::Limited(5639));
        assert_eq!(LeakyBucketModel::reference_mb(REFERENCE_TAU_MB).max_frame_length(), FrameLength::Limited(5639));
        let fps = m.max_fps(5639).unwrap();
        assert!((fps / 4140.0 - 1.0).abs() < 0.005, "{fps}");
        let fps = m.max_fps(2000).unwrap();
        assert!((fps / 11_700.0 - 1.0).abs() < 0.005, "{fps}");
        assert!(matches!(m.max_fps(5640), Err(AcqError::Capacity { max: 5639, .. })));
    }

    #[test]
    fn buffer_bound_limit() {
        let m = LeakyBucketModel { r_out: 1e-300, ..LeakyBucketModel::reference(0.0) };
        assert_eq!(m.max_frame_length(), FrameLength::Limited(33_554_432 / 4096));
    }

    #[test]
    fn degenerate_cases() {
        let m = LeakyBucketModel { r_out: 400e9, ..LeakyBucketModel::reference(1e-3) };
        assert_eq!(m.max_frame_length(), FrameLength::Unbounded);
        let m = LeakyBucketModel::reference(1e-3);
        assert!(matches!(m.max_frame_length(), FrameLength::Infeasible(_)));
        assert_eq!(m.budget_row(None).status, "infeasible");
        assert!(LeakyBucketModel::new(1.0, 1.0, 0.0, 0.0, 1, 1).is_err());
    }

    #[test]
    fn fps_scales_with_read_rate() {
        let m = LeakyBucketModel::reference(REFERENCE_TAU_MIB);
        let half = LeakyBucketModel { r_out: m.r_out / 2.0, ..m };
        assert!((half.max_fps(1000).unwrap() * 2.0 - m.max_fps(1000).unwrap()).abs() < 1e-6);
    }

    #[test]
    fn oracle_brackets_reference() {
        let m = LeakyBucketModel::reference(REFERENCE_TAU_MIB);
        let ok = simulate_occupancy(&m, 5639, BLOCK, 1e-3);
        assert!(!ok.overflow);
        assert!(ok.peak_bits <= m.buffer_bits);
        assert!(ok.frames > 1);
        let block_samples = (BLOCK * 8) as u64 / 4096;
        assert!(simulate_occupancy(&m, 5639 + 2 * block_samples, BLOCK, 1e-3).overflow);
    }

    #[test]
    fn balanced_rates_plateau() {
        let m = LeakyBucketModel { r_out: 327.68e9, ..LeakyBucketModel::reference(50e-6) };
        for len in [20_000u64, 80_000] {
            let r = simulate_frames(&m, len, BLOCK, &[0.0]);
            assert!((r.peak_bits / (m.r_in * m.tau) - 1.0).abs() < 1e-9, "{}", r.peak_bits);
        }
    }

    #[test]
    fn budget_csv_columns() {
        let m = LeakyBucketModel::reference(REFERENCE_TAU_MIB);
        let mut out = Vec::new();
        write_budget_csv(&[m.budget_row(None), m.budget_row(Some(2000))], &mut out).unwrap();
        let text = String::from_utf8(out).unwrap();
        let mut lines = text.lines();
        assert_eq!(lines.next().unwrap(), "channels,bits,fs,B,R_out,tau_s,L_f_max,FPS_max,frame_len,status");
        assert!(lines.next().unwrap().starts_with("256,16,80000000.0,33554432.0,95600000000.0,"));
    }
}
