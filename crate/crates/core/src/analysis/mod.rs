//! Receive-chain characterisation (gain sweep, −3 dB corners, masked-FFT
//! SNR) and display processing (band-pass, envelope, image).

mod image;
mod rx;
mod snr;
mod sweep;

use thiserror::Error;

pub use image::{render_image, RfImage};
pub use rx::{bandpass, bandpass_trace, envelope, envelope_trace, BandpassDesign};
pub use snr::{snr_estimate, write_snr_csv, MaskKind, MaskRange, SnrParams, SnrResult, SnrWindow};
pub use sweep::{
    corners_3db, default_sweep_grid, gain_curve, write_gain_csv, BandwidthResult, GainPoint, SweepRecord, RECORD_LEN,
};

#[derive(Debug, Error)]
pub enum AnalysisError {
    #[error("invalid parameters: {0}")]
    Params(String),
    #[error("record at {frequency} Hz has zero peak-to-peak amplitude")]
    UndefinedGain { frequency: f64 },
    #[error(transparent)]
    Block(#[from] crate::block::BlockError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
}
