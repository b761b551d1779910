use std::io::Write;

use super::AnalysisError;

/// Samples per tone record.
pub const RECORD_LEN: usize = 32768;

#[derive(Debug, Clone, PartialEq)]
pub struct SweepRecord {
    pub tone_frequency: f64,
    pub sample_rate: f64,
    pub samples: Vec<i16>,
}

impl SweepRecord {
    /// Peak-to-peak code excursion.
    pub fn peak_to_peak(&self) -> f64 {
        let max = self.samples.iter().copied().max().unwrap_or(0);
        let min = self.samples.iter().copied().min().unwrap_or(0);
        max as f64 - min as f64
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GainPoint {
    pub frequency: f64,
    pub a_pp: f64,
    pub gain_db: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BandwidthResult {
    /// Sorted by frequency.
    pub points: Vec<GainPoint>,
    pub f_peak: f64,
    pub f_lo: Option<f64>,
    pub f_hi: Option<f64>,
}

/// Tone frequencies `step, 2·step, …` below Nyquist.
pub fn default_sweep_grid(sample_rate: f64, step: f64) -> Vec<f64> {
    let nyq = sample_rate / 2.0;
    (1..).map(|k| k as f64 * step).take_while(|&f| f < nyq - 1e-6 * step).collect()
}

/// Gain of each tone relative to the sweep's largest peak-to-peak
/// amplitude, with the −3 dB corners.
pub fn gain_curve(records: &[SweepRecord]) -> Result<BandwidthResult, AnalysisError> {
    if records.len() < 2 {
        return Err(AnalysisError::Params(format!("need at least 2 tones, got {}", records.len())));
    }
    let mut raw = Vec::with_capacity(records.len());
    for r in records {
        if r.samples.is_empty() {
            return Err(AnalysisError::Params(format!("empty record at {} Hz", r.tone_frequency)));
        }
        let a_pp = r.peak_to_peak();
        if a_pp == 0.0 {
            return Err(AnalysisError::UndefinedGain { frequency: r.tone_frequency });
        }
        raw.push((r.tone_frequency, a_pp));
    }
    raw.sort_by(|a, b| a.0.total_cmp(&b.0));
    let max = raw.iter().map(|p| p.1).fold(0.0, f64::max);
    let points: Vec<GainPoint> = raw
        .into_iter()
        .map(|(frequency, a_pp)| GainPoint { frequency, a_pp, gain_db: 20.0 * (a_pp / max).log10() })
        .collect();
    let (f_lo, f_hi) = corners_3db(&points);
    let f_peak = points[peak_index(&points)].frequency;
    Ok(BandwidthResult { points, f_peak, f_lo, f_hi })
}

fn peak_index(points: &[GainPoint]) -> usize {
    let mut best = 0;
    for (i, p) in points.iter().enumerate() {
        if p.gain_db > points[best].gain_db {
            best = i;
        }
    }
    best
}

fn crossing(a: &GainPoint, b: &GainPoint) -> f64 {
    a.frequency + (-3.0 - a.gain_db) * (b.frequency - a.frequency) / (b.gain_db - a.gain_db)
}

/// First −3 dB crossing on each side of the peak, linearly interpolated
/// between the bracketing points. `points` must be sorted by frequency.
pub fn corners_3db(points: &[GainPoint]) -> (Option<f64>, Option<f64>) {
    if points.is_empty() {
        return (None, None);
    }
    let peak = peak_index(points);
    let ref_db = points[peak].gain_db;
    let rel = |p: &GainPoint| GainPoint { gain_db: p.gain_db - ref_db, ..*p };
    let lo = (0..peak)
        .rev()
        .find(|&i| rel(&points[i]).gain_db <= -3.0)
        .map(|i| crossing(&rel(&points[i]), &rel(&points[i + 1])));
    let hi = (peak + 1..points.len())
        .find(|&i| rel(&points[i]).gain_db <= -3.0)
        .map(|i| crossing(&rel(&points[i - 1]), &rel(&points[i])));
    (lo, hi)
}

pub fn write_gain_csv<W: Write>(w: W, result: &BandwidthResult) -> Result<(), AnalysisError> {
    let mut csv = csv::Writer::from_writer(w);
    csv.write_record(["frequency_hz", "a_pp", "gain_db"])?;
    for p in &result.points {
        csv.write_record([format!("{}", p.frequency), format!("{}", p.a_pp), format!("{:.4}", p.gain_db)])?;
    }
    csv.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn pt(f: f64, g: f64) -> GainPoint {
        GainPoint { frequency: f, a_pp: 10f64.powf(g / 20.0), gain_db: g }
    }

    fn tone(f: f64, amp: f64) -> SweepRecord {
        let samples = (0..4096)
            .map(|t| (amp * (2.0 * std::f64::consts::PI * f * t as f64 / 80e6).sin()).round() as i16)
            .collect();
        SweepRecord { tone_frequency: f, sample_rate: 80e6, samples }
    }

    #[test]
    fn half_amplitude_is_minus_six() {
        let r = gain_curve(&[tone(1e6, 20000.0), tone(2e6, 10000.0)]).unwrap();
        assert_eq!(r.points[0].gain_db, 0.0);
        assert_eq!(r.f_peak, 1e6);
        assert!((r.points[1].gain_db + 6.0206).abs() < 1e-3);
    }

    #[test]
    fn midpoint_crossing() {
        let (lo, hi) = corners_3db(&[pt(1.0, 0.0), pt(2.0, -2.0), pt(3.0, -4.0)]);
        assert_eq!(lo, None);
        assert_eq!(hi, Some(2.5));
        let (lo, _) = corners_3db(&[pt(1.0, -4.0), pt(2.0, -2.0), pt(3.0, 0.0)]);
        assert_eq!(lo, Some(1.5));
    }

    #[test]
    fn rising_curve_has_no_upper_corner() {
        let pts: Vec<_> = (0..10).map(|i| pt(i as f64, -(9 - i) as f64)).collect();
        let (lo, hi) = corners_3db(&pts);
        assert_eq!(hi, None);
        assert_eq!(lo, Some(6.0));
    }

    #[test]
    fn errors() {
        assert!(matches!(gain_curve(&[tone(1e6, 1.0)]), Err(AnalysisError::Params(_))));
        let zero = SweepRecord { tone_frequency: 3e6, sample_rate: 80e6, samples: vec![0; 10] };
        assert!(
            matches!(gain_curve(&[tone(1e6, 100.0), zero]), Err(AnalysisError::UndefinedGain { frequency }) if frequency == 3e6)
        );
    }

    #[test]
    fn grid_stops_below_nyquist() {
        let g = default_sweep_grid(125e6, 0.2e6);
        assert_eq!(g.len(), 312);
        assert!((g[0] - 0.2e6).abs() < 1e-6);
        assert!(*g.last().unwrap() < 62.5e6);
    }
}
