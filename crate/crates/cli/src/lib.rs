//! Workflows behind the `usdaq` binary: end-to-end acquisition, transport
//! stress test, receive-chain characterization and capacity budgeting.
//!
//! Every run writes into one output directory:
//!
//! ```text
//! report.json      machine-readable run report
//! frames/          host-side frames (binary sample blocks)
//! csv/             frames, images and tables as CSV
//! images/          envelope images as binary PGM
//! ```

pub mod acquire;
pub mod budget;
pub mod characterize;
pub mod config;
pub mod stress;

use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};

use serde::Serialize;
use thiserror::Error;

pub use acquire::{acquire, AcquireOutcome, AcquireReport};
pub use budget::{budget, BudgetReport};
pub use characterize::{characterize, CharacterizeOutcome, CharacterizeReport};
pub use config::{Mode, RunConfig};
pub use stress::{stress, StressReport};

/// Pipeline stage a failure is attributed to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Stage {
    Config,
    Producer,
    Link,
    Acquisition,
    Transport,
    Host,
    Analysis,
    Output,
}

impl Stage {
    /// Process exit status for a run that failed in this stage.
    pub fn exit_code(self) -> i32 {
        match self {
            Stage::Config => 10,
            Stage::Producer => 11,
            Stage::Link => 12,
            Stage::Acquisition => 13,
            Stage::Transport => 14,
            Stage::Host => 15,
            Stage::Analysis => 16,
            Stage::Output => 17,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Stage::Config => "config",
            Stage::Producer => "producer",
            Stage::Link => "link",
            Stage::Acquisition => "acquisition",
            Stage::Transport => "transport",
            Stage::Host => "host",
            Stage::Analysis => "analysis",
            Stage::Output => "output",
        }
    }
}

impl fmt::Display for Stage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, Error)]
#[error("{stage} stage: {message}")]
pub struct StageError {
    pub stage: Stage,
    pub message: String,
}

impl StageError {
    pub fn new(stage: Stage, message: impl Into<String>) -> Self {
        Self { stage, message: message.into() }
    }
}

/// `map_err` helper: attributes any displayable error to `stage`.
pub(crate) fn at<E: fmt::Display>(stage: Stage) -> impl Fn(E) -> StageError {
    move |e| StageError::new(stage, e.to_string())
}

/// Creates the output directory and its fixed subdirectories.
pub fn prepare_output(dir: &Path) -> Result<(), StageError> {
    for sub in ["", "frames", "csv", "images"] {
        fs::create_dir_all(dir.join(sub))
            .map_err(|e| StageError::new(Stage::Output, format!("{}: {e}", dir.display())))?;
    }
    Ok(())
}

pub(crate) fn create(path: PathBuf) -> Result<std::io::BufWriter<fs::File>, StageError> {
    fs::File::create(&path)
        .map(std::io::BufWriter::new)
        .map_err(|e| StageError::new(Stage::Output, format!("{}: {e}", path.display())))
}

pub fn write_report<T: Serialize>(dir: &Path, report: &T) -> Result<(), StageError> {
    let mut text = serde_json::to_string_pretty(report).map_err(at(Stage::Output))?;
    text.push('\n');
    fs::write(dir.join("report.json"), text).map_err(at(Stage::Output))
}

/// Runs the workflow selected by `cfg.mode` and writes its outputs.
pub fn run(cfg: &RunConfig) -> Result<(), StageError> {
    match cfg.mode {
        Mode::AcquireUs | Mode::AcquireOa => acquire(cfg).map(|_| ()),
        Mode::Stress => stress(cfg).map(|_| ()),
        Mode::Characterize => characterize(cfg).map(|_| ()),
        Mode::Budget => budget(cfg).map(|_| ()),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn exit_codes_are_distinct_and_nonzero() {
        let all = [
            Stage::Config,
            Stage::Producer,
            Stage::Link,
            Stage::Acquisition,
            Stage::Transport,
            Stage::Host,
            Stage::Analysis,
            Stage::Output,
        ];
        let mut codes: Vec<i32> = all.iter().map(|s| s.exit_code()).collect();
        codes.sort();
        codes.dedup();
        assert_eq!(codes.len(), all.len());
        assert!(codes.iter().all(|&c| c != 0 && c != 1 && c != 2));
    }
}
