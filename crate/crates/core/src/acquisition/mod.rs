//! Trigger handling, frame windowing, the block ring buffer and the
//! buffer capacity model.

mod bucket;
mod notify;
mod ring;
mod trigger;

pub use bucket::{
    simulate_frames, simulate_occupancy, write_budget_csv, BudgetRow, FrameLength, LeakyBucketModel, OccupancyReport,
    REFERENCE_TAU_MB, REFERENCE_TAU_MIB,
};
pub use notify::{FrameNotifier, InterruptCounter};
pub use ring::{RingBuffer, RingOp, RingTrace, DEFAULT_BLOCK_SIZE, DEFAULT_CAPACITY};
pub use trigger::{
    blocks_to_frame, frame_to_blocks, latch_trigger, pad_channels, FrameEvent, FrameWindower, TriggerConfig,
    TriggerSource, WindowEvent,
};

use thiserror::Error;

use crate::block::BlockError;

#[derive(Debug, Error)]
pub enum AcqError {
    #[error("trigger at sample {trigger} rejected: frame window busy until sample {busy_until}")]
    Busy { trigger: u64, busy_until: u64 },
    #[error("ring buffer overflow writing block {seq}: slot still unread")]
    Overflow { seq: u64 },
    #[error("block {seq} cannot be read: {reason}")]
    Sequencing { seq: u64, reason: &'static str },
    #[error("frame of {frame_len} samples/channel exceeds the {max} sample limit")]
    Capacity { frame_len: u64, max: u64 },
    #[error("invalid acquisition parameter: {0}")]
    Params(String),
    #[error(transparent)]
    Block(#[from] BlockError),
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}
