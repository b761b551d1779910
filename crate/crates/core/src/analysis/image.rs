use std::io::Write;

use super::AnalysisError;

/// Channels × depth envelope matrix scaled to [0, 1].
///
/// PGM export is binary `P5`, 8-bit, one column per channel and one row
/// per sample (shallowest first). CSV export has one row per sample:
/// `time_us,depth_mm,ch0,ch1,…`.
#[derive(Debug, Clone, PartialEq)]
pub struct RfImage {
    pub channels: usize,
    pub depth_samples: usize,
    /// Channel-major.
    pub data: Vec<f64>,
    pub sample_rate: f64,
    /// Samples between the trigger and the first row.
    pub start_offset: u64,
    pub sound_speed: f64,
    /// Pulse-echo (round trip) rather than one-way optoacoustic timing.
    pub two_way: bool,
}

/// Normalises by the image maximum. An all-zero input stays zero.
pub fn render_image(
    traces: &[Vec<f64>],
    sample_rate: f64,
    start_offset: u64,
    sound_speed: f64,
    two_way: bool,
) -> Result<RfImage, AnalysisError> {
    let depth = traces.first().map_or(0, Vec::len);
    if traces.iter().any(|t| t.len() != depth) {
        return Err(AnalysisError::Params("channel records differ in length".into()));
    }
    let max = traces.iter().flatten().map(|v| v.abs()).fold(0.0, f64::max);
    let scale = if max > 0.0 { 1.0 / max } else { 0.0 };
    let data = traces.iter().flatten().map(|v| v.abs() * scale).collect();
    Ok(RfImage { channels: traces.len(), depth_samples: depth, data, sample_rate, start_offset, sound_speed, two_way })
}

impl RfImage {
    pub fn get(&self, ch: usize, t: usize) -> f64 {
        self.data[ch * self.depth_samples + t]
    }

    pub fn channel(&self, ch: usize) -> &[f64] {
        &self.data[ch * self.depth_samples..(ch + 1) * self.depth_samples]
    }

    pub fn time_s(&self, t: usize) -> f64 {
        (self.start_offset + t as u64) as f64 / self.sample_rate
    }

    pub fn depth_m(&self, t: usize) -> f64 {
        let d = self.sound_speed * self.time_s(t);
        if self.two_way {
            d / 2.0
        } else {
            d
        }
    }

    /// (channel, sample) of the largest value.
    pub fn brightest(&self) -> (usize, usize) {
        let mut best = 0;
        for (i, &v) in self.data.iter().enumerate() {
            if v > self.data[best] {
                best = i;
            }
        }
        (best / self.depth_samples.max(1), best % self.depth_samples.max(1))
    }

    /// Sample index whose summed value across channels is largest.
    pub fn brightest_row(&self) -> usize {
        let row = |t: usize| (0..self.channels).map(|c| self.get(c, t)).sum::<f64>();
        (0..self.depth_samples).max_by(|&a, &b| row(a).total_cmp(&row(b))).unwrap_or(0)
    }

    /// Σ value² per channel.
    pub fn channel_energy(&self) -> Vec<f64> {
        (0..self.channels).map(|c| self.channel(c).iter().map(|v| v * v).sum()).collect()
    }

    pub fn write_pgm<W: Write>(&self, mut w: W) -> Result<(), AnalysisError> {
        write!(w, "P5\n{} {}\n255\n", self.channels, self.depth_samples)?;
        let mut row = vec![0u8; self.channels];
        for t in 0..self.depth_samples {
            for (c, px) in row.iter_mut().enumerate() {
                *px = (self.get(c, t) * 255.0).round() as u8;
            }
            w.write_all(&row)?;
        }
        Ok(())
    }

    pub fn write_csv<W: Write>(&self, w: W) -> Result<(), AnalysisError> {
        let mut csv = csv::Writer::from_writer(w);
        let mut header = vec!["time_us".to_string(), "depth_mm".to_string()];
        header.extend((0..self.channels).map(|c| format!("ch{c}")));
        csv.write_record(&header)?;
        for t in 0..self.depth_samples {
            let mut rec = vec![format!("{:.4}", self.time_s(t) * 1e6), format!("{:.4}", self.depth_m(t) * 1e3)];
            rec.extend((0..self.channels).map(|c| format!("{:.5}", self.get(c, t))));
            csv.write_record(&rec)?;
        }
        csv.flush()?;
        Ok(())
    }
}
