use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use usdaq_cli::{config::Mode, RunConfig, StageError};

/// Simulated ultrasound/optoacoustic acquisition: front-end, serial links,
/// ring buffer, RDMA transport and host-side processing.
#[derive(Parser)]
#[command(name = "usdaq", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// TOML run configuration; every key is optional.
    #[arg(short, long)]
    config: Option<PathBuf>,
    /// Output directory [default: out]
    #[arg(short, long)]
    output: Option<PathBuf>,
    /// Run seed [default: 1]
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Clone, Copy, ValueEnum)]
enum AcqMode {
    /// Pulse-echo: the internal trigger fires the pulser, then acquisition.
    Us,
    /// Optoacoustic: an external trigger starts the source and the window.
    Oa,
}

#[derive(Subcommand)]
enum Command {
    /// Run the full pipeline and write frames, images and a report.
    Acquire {
        #[command(flatten)]
        common: Common,
        /// Acquisition mode; defaults to the config's mode, else us
        #[arg(long, value_enum)]
        mode: Option<AcqMode>,
        /// Frames to acquire [default: 1]
        #[arg(long)]
        frames: Option<usize>,
        /// Samples per channel per frame [default: 3072]
        #[arg(long)]
        window: Option<usize>,
        /// Trigger delay, sample clocks [default: 60]
        #[arg(long)]
        delay: Option<u64>,
        /// Ring block size, bytes [default: 262144]
        #[arg(long)]
        block_size: Option<usize>,
        /// Payload width, channels [default: 256]
        #[arg(long)]
        pad: Option<usize>,
        /// WRITEs per batch [default: 8]
        #[arg(long)]
        batch: Option<usize>,
        /// Packet loss probability on the transport channel [default: 0]
        #[arg(long)]
        loss: Option<f64>,
    },
    /// Sweep transport goodput over payload size and batch size.
    Stress {
        #[command(flatten)]
        common: Common,
        /// Runs per grid point [default: 10]
        #[arg(long)]
        repeats: Option<usize>,
        /// Packet loss probability [default: 0]
        #[arg(long)]
        loss: Option<f64>,
    },
    /// Tone sweep through the front-end and link: gain, corners, SNR.
    Characterize {
        #[command(flatten)]
        common: Common,
        /// Tone spacing, Hz [default: 200000]
        #[arg(long)]
        step: Option<f64>,
    },
    /// Maximum frame length and frame rate table.
    Budget {
        #[command(flatten)]
        common: Common,
    },
}

/// Loads the config and forces `mode`; `None` keeps an acquire mode from
/// the file.
fn load(common: &Common, mode: Option<Mode>) -> Result<RunConfig, StageError> {
    let mut cfg = match &common.config {
        Some(path) => RunConfig::load(path)?,
        None => RunConfig::default(),
    };
    cfg.mode = match mode {
        Some(m) => m,
        None if cfg.mode == Mode::AcquireOa => Mode::AcquireOa,
        None => Mode::AcquireUs,
    };
    if let Some(o) = &common.output {
        cfg.output = o.clone();
    }
    if let Some(s) = common.seed {
        cfg.seed = s;
    }
    Ok(cfg)
}

fn configure(command: Command) -> Result<RunConfig, StageError> {
    Ok(match command {
        Command::Acquire { common, mode, frames, window, delay, block_size, pad, batch, loss } => {
            let mode = mode.map(|m| match m {
                AcqMode::Us => Mode::AcquireUs,
                AcqMode::Oa => Mode::AcquireOa,
            });
            let mut cfg = load(&common, mode)?;
            let t = &mut cfg.trigger;
            t.frames = frames.unwrap_or(t.frames);
            t.window = window.unwrap_or(t.window);
            t.delay = delay.unwrap_or(t.delay);
            cfg.ring.block_size = block_size.unwrap_or(cfg.ring.block_size);
            cfg.ring.payload_channels = pad.unwrap_or(cfg.ring.payload_channels);
            cfg.transport.batch = batch.unwrap_or(cfg.transport.batch);
            let ch = &mut cfg.transport.channel;
            ch.loss_probability = loss.unwrap_or(ch.loss_probability);
            cfg
        }
        Command::Stress { common, repeats, loss } => {
            let mut cfg = load(&common, Some(Mode::Stress))?;
            cfg.stress.repeats = repeats.unwrap_or(cfg.stress.repeats);
            let ch = &mut cfg.transport.channel;
            ch.loss_probability = loss.unwrap_or(ch.loss_probability);
            cfg
        }
        Command::Characterize { common, step } => {
            let mut cfg = load(&common, Some(Mode::Characterize))?;
            cfg.characterize.step = step.unwrap_or(cfg.characterize.step);
            cfg
        }
        Command::Budget { common } => load(&common, Some(Mode::Budget))?,
    })
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match configure(cli.command).and_then(|cfg| usdaq_cli::run(&cfg).map(|()| cfg)) {
        Ok(cfg) => {
            println!("wrote {}", cfg.output.join("report.json").display());
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.stage.exit_code() as u8)
        }
    }
}
