pub mod acquisition;
pub mod afe;
pub mod analysis;
pub mod block;
pub mod dsp;
pub mod jesd;
pub mod rdma;
