//! Capacity budget: maximum frame length and frame rate across channel
//! counts and sample rates.

use serde::Serialize;
use usdaq_core::acquisition::{write_budget_csv, BudgetRow, LeakyBucketModel};

use crate::config::{BudgetSpec, Mode, RunConfig};
use crate::{at, create, prepare_output, write_report, Stage, StageError};

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BudgetReport {
    pub mode: Mode,
    pub rows: Vec<BudgetRow>,
}

fn row(cfg: &RunConfig, spec: &BudgetSpec) -> BudgetRow {
    let buffer = spec.buffer_bytes.or(cfg.bucket.buffer_bytes).unwrap_or(cfg.ring.capacity);
    let m = LeakyBucketModel {
        r_in: spec.channels as f64 * 16.0 * spec.sample_rate,
        r_out: spec.r_out.unwrap_or(cfg.bucket.r_out),
        buffer_bits: buffer as f64 * 8.0,
        tau: spec.tau.unwrap_or(cfg.bucket.tau),
        channels: spec.channels,
        bits_per_sample: 16,
    };
    // an invalid model still gets a row, flagged rather than dropped
    match m.validate() {
        Ok(()) => m.budget_row(spec.frame_len),
        Err(_) => BudgetRow { l_f_max: None, fps_max: None, status: "infeasible", ..m.budget_row(None) },
    }
}

/// Explicit rows first, then the channel × sample-rate grid.
pub fn budget_rows(cfg: &RunConfig) -> Vec<BudgetRow> {
    let b = &cfg.budget;
    let grid = b.channels.iter().flat_map(|&channels| {
        b.sample_rates.iter().map(move |&sample_rate| BudgetSpec {
            channels,
            sample_rate,
            frame_len: None,
            buffer_bytes: None,
            r_out: None,
            tau: None,
        })
    });
    b.rows.iter().cloned().chain(grid).map(|s| row(cfg, &s)).collect()
}

pub fn budget(cfg: &RunConfig) -> Result<BudgetReport, StageError> {
    cfg.validate()?;
    prepare_output(&cfg.output)?;
    let rows = budget_rows(cfg);
    write_budget_csv(&rows, create(cfg.output.join("csv").join("budget.csv"))?).map_err(at(Stage::Output))?;
    let report = BudgetReport { mode: cfg.mode, rows };
    write_report(&cfg.output, &report)?;
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_rows() {
        let rows = budget_rows(&RunConfig { mode: Mode::Budget, ..Default::default() });
        assert_eq!(rows[0].l_f_max, Some(5639));
        assert!((rows[0].fps_max.unwrap() - 4.14e3).abs() / 4.14e3 < 0.005);
        assert_eq!(rows[1].frame_len, Some(2000));
        assert!((rows[1].fps_max.unwrap() - 11.7e3).abs() / 11.7e3 < 0.005);
        assert_eq!(rows[2].status, "unbounded");
        assert_eq!(rows.len(), 3 + 5 * 4);
    }

    #[test]
    fn invalid_rows_are_kept() {
        let mut cfg = RunConfig { mode: Mode::Budget, ..Default::default() };
        cfg.budget.rows[0].r_out = Some(-1.0);
        assert_eq!(budget_rows(&cfg)[0].status, "infeasible");
    }
}
