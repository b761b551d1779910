//! End-to-end acquisition: front-end → serial links → trigger windowing →
//! ring buffer → RDMA WRITEs → host buffer → band-pass, envelope, image.
//!
//! Each stage runs on its own thread and hands data downstream through a
//! bounded queue. The first stage to fail aborts the run and its error is
//! the one reported; failures it causes further along are ignored.

use std::collections::VecDeque;
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::mpsc::{sync_channel, Receiver, SyncSender};
use std::sync::Mutex;
use std::time::Duration;

use bytes::Bytes;
use serde::Serialize;
use sha2::{Digest, Sha256};
use usdaq_core::acquisition::{
    blocks_to_frame, frame_to_blocks, pad_channels, simulate_frames, FrameEvent, FrameLength, FrameWindower,
    InterruptCounter, RingBuffer, TriggerSource, WindowEvent,
};
use usdaq_core::afe::{AfeConfig, AfeGenerator, SignalScenario};
use usdaq_core::analysis::{bandpass_trace, envelope_trace, render_image, BandpassDesign, RfImage};
use usdaq_core::block::SampleBlock;
use usdaq_core::jesd::{LinkError, LinkParams, LinkStatus, RxLink, TxLink};
use usdaq_core::rdma::{ChannelModel, CompletionStatus, Fabric, WorkRequest};

use crate::config::{Mode, RunConfig};
use crate::{at, create, prepare_output, write_report, Stage, StageError};

const QUEUE_DEPTH: usize = 4;
/// Samples per channel in each front-end block.
const CHUNK: usize = 1024;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct StageReport {
    pub stage: Stage,
    /// Blocks, frames or work requests, depending on the stage.
    pub items: u64,
    pub bytes: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LinkReport {
    pub links: usize,
    pub lanes_per_link: usize,
    /// Octet clocks from the data-start boundary to the first release;
    /// identical for every link.
    pub latency_octets: u64,
    pub lane_skew: Vec<u64>,
    pub data_start_sample: u64,
    pub symbols: u64,
    pub symbol_errors: u64,
    pub disparity_errors: u64,
    pub resync_events: u32,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CapacityReport {
    pub frame_len: u64,
    pub max_frame_len: Option<u64>,
    pub unbounded: bool,
    pub max_fps: Option<f64>,
    pub buffer_bits: f64,
    /// Peak ring occupancy predicted for this trigger schedule.
    pub peak_bits: f64,
    pub overflow: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TransportReport {
    pub work_requests: u64,
    pub data_packets: u64,
    pub retransmitted_packets: u64,
    pub timeouts: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FrameReport {
    pub frame_id: u64,
    pub trigger_sample_index: u64,
    pub first_sample_index: u64,
    pub blocks: u64,
    pub bytes: u64,
    pub completions: u64,
    pub tx_sha256: String,
    pub host_sha256: String,
    pub brightest_channel: usize,
    /// Time of the brightest image row after the trigger.
    pub brightest_time_s: f64,
    pub brightest_depth_m: f64,
    /// Share of envelope energy in each channel.
    pub channel_energy: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AcquireReport {
    pub mode: Mode,
    pub seed: u64,
    pub trigger_source: TriggerSource,
    pub stages: Vec<StageReport>,
    pub link: LinkReport,
    pub capacity: CapacityReport,
    pub transport: TransportReport,
    pub frames: Vec<FrameReport>,
    pub completions: u64,
    pub overflow_count: u64,
    pub interrupts: u64,
    pub saturated_samples: u64,
    /// Length of the generated sample stream.
    pub sample_clock_time_s: f64,
    /// Simulated network time, connection setup included.
    pub transport_time_s: f64,
}

#[derive(Debug, Clone)]
pub struct AcquireOutcome {
    pub report: AcquireReport,
    /// Real channels of each host-side frame.
    pub frames: Vec<SampleBlock>,
    pub images: Vec<RfImage>,
}

struct Shared {
    abort: AtomicBool,
    first_error: Mutex<Option<StageError>>,
}

impl Shared {
    fn fail(&self, e: StageError) {
        let mut first = self.first_error.lock().expect("error lock");
        if first.is_none() {
            *first = Some(e);
        }
        self.abort.store(true, Ordering::SeqCst);
    }

    fn aborted(&self) -> bool {
        self.abort.load(Ordering::SeqCst)
    }

    /// Records a stage result. Must run before the stage's queue ends are
    /// dropped, so that neighbours see the abort flag when they notice.
    fn record<T>(&self, r: Result<T, StageError>) -> Option<T> {
        match r {
            Ok(v) => Some(v),
            Err(e) => {
                self.fail(e);
                None
            }
        }
    }
}

fn send<T>(tx: &SyncSender<T>, v: T, stage: Stage) -> Result<(), StageError> {
    tx.send(v).map_err(|_| StageError::new(stage, "downstream stage stopped"))
}

fn sha256(parts: &[&[u8]]) -> String {
    let mut h = Sha256::new();
    for p in parts {
        h.update(p);
    }
    format!("{:x}", h.finalize())
}

/// The scenario with its transmit (US) or laser shot (OA) locked to the
/// latched trigger schedule.
fn scenario_for_run(cfg: &RunConfig, triggers: &[u64]) -> SignalScenario {
    let first = triggers[0];
    let period = (triggers.len() > 1).then(|| (cfg.trigger.interval * cfg.afe.sample_rate).round() as u64);
    match cfg.scenario() {
        SignalScenario::PulseEcho { echoes, center_frequency, cycles, sound_speed, amplitude, .. } => {
            SignalScenario::PulseEcho {
                echoes,
                center_frequency,
                cycles,
                sound_speed,
                amplitude,
                tx_index: first,
                period,
            }
        }
        SignalScenario::OaPulse { delay, width, amplitude, channels, .. } => {
            SignalScenario::OaPulse { delay, width, amplitude, channels, tx_index: first, period }
        }
        other => other,
    }
}

fn capacity(cfg: &RunConfig) -> Result<CapacityReport, StageError> {
    let m = cfg.bucket_model()?;
    let frame_len = cfg.trigger.window as u64;
    let limit = m.max_frame_length();
    let sim = simulate_frames(&m, frame_len, cfg.ring.block_size, &cfg.trigger_times());
    let report = CapacityReport {
        frame_len,
        max_frame_len: match limit {
            FrameLength::Limited(l) => Some(l),
            _ => None,
        },
        unbounded: limit == FrameLength::Unbounded,
        max_fps: m.max_fps(frame_len).ok(),
        buffer_bits: m.buffer_bits,
        peak_bits: sim.peak_bits,
        overflow: sim.overflow,
    };
    if sim.overflow {
        let max = report.max_frame_len.map_or("unbounded".into(), |l| l.to_string());
        let fps = report.max_fps.map_or("n/a".into(), |f| format!("{f:.1}"));
        return Err(StageError::new(
            Stage::Acquisition,
            format!(
                "ring overflow predicted at t = {:.3e} s: {} frames of {frame_len} samples/channel peak at {:.0} of {:.0} \
                 bits (L_f,max = {max} samples, FPS_max at this length = {fps}, R_in = {:.4e} b/s, R_out = {:.4e} b/s, \
                 tau = {:.3e} s)",
                sim.first_overflow.unwrap_or(0.0),
                cfg.trigger.frames,
                sim.peak_bits,
                m.buffer_bits,
                m.r_in,
                m.r_out,
                m.tau
            ),
        ));
    }
    Ok(report)
}

/// Runs an acquisition per `cfg` and writes its outputs under
/// `cfg.output`.
pub fn acquire(cfg: &RunConfig) -> Result<AcquireOutcome, StageError> {
    if !matches!(cfg.mode, Mode::AcquireUs | Mode::AcquireOa) {
        return Err(StageError::new(Stage::Config, "acquire needs mode acquire_us or acquire_oa"));
    }
    cfg.validate()?;
    prepare_output(&cfg.output)?;
    let capacity = capacity(cfg)?;
    let triggers = cfg.trigger_indices();
    let scenario = scenario_for_run(cfg, &triggers);
    let p = &cfg.link.params;
    let max_skew = cfg.link.skew.iter().copied().max().unwrap_or(0);
    // enough samples past the last window to flush it through the
    // elastic buffers
    let margin = (p.elastic_depth + max_skew).div_ceil(p.octets_per_frame) + 2 * p.frames_per_multiframe;
    let last = *triggers.last().expect("validated") + cfg.trigger.delay + cfg.trigger.window as u64;
    let end = last + margin as u64;

    let ring = RingBuffer::new(cfg.ring.capacity, cfg.ring.block_size).map_err(at(Stage::Config))?;
    let irq = InterruptCounter::default();
    let shared = Shared { abort: AtomicBool::new(false), first_error: Mutex::new(None) };
    let (gen_tx, gen_rx) = sync_channel(QUEUE_DEPTH);
    let (link_tx, link_rx) = sync_channel(QUEUE_DEPTH);
    let (acq_tx, acq_rx) = sync_channel(QUEUE_DEPTH);
    let (host_tx, host_rx) = sync_channel(QUEUE_DEPTH);

    let (prod, link, acq, transport, host) = std::thread::scope(|s| {
        let (shared, ring, irq, triggers) = (&shared, &ring, &irq, &triggers);
        let prod = s.spawn(move || {
            let r = producer(cfg, scenario, end, &gen_tx, shared);
            shared.record(r)
        });
        let link = s.spawn(move || {
            let r = link_stage(cfg, &gen_rx, &link_tx, shared);
            shared.record(r)
        });
        let acq = s.spawn(move || {
            let r = acquisition(cfg, triggers, &link_rx, &acq_tx, ring, irq, shared);
            shared.record(r)
        });
        let transport = s.spawn(move || {
            let r = transport(cfg, &acq_rx, &host_tx, ring, shared);
            shared.record(r)
        });
        let host = s.spawn(move || {
            let r = host(cfg, &host_rx);
            shared.record(r)
        });
        (
            join(prod, Stage::Producer, shared),
            join(link, Stage::Link, shared),
            join(acq, Stage::Acquisition, shared),
            join(transport, Stage::Transport, shared),
            join(host, Stage::Host, shared),
        )
    });
    if let Some(e) = shared.first_error.into_inner().expect("error lock") {
        return Err(e);
    }
    let (Some(prod), Some(link), Some(acq), Some(transport), Some(host)) = (prod, link, acq, transport, host) else {
        unreachable!("every stage succeeded");
    };

    let report = AcquireReport {
        mode: cfg.mode,
        seed: cfg.seed,
        trigger_source: cfg.trigger_source(),
        stages: vec![
            StageReport { stage: Stage::Producer, items: prod.blocks, bytes: prod.bytes },
            StageReport { stage: Stage::Link, items: link.blocks, bytes: link.bytes },
            StageReport { stage: Stage::Acquisition, items: acq.frames, bytes: acq.bytes },
            StageReport { stage: Stage::Transport, items: transport.report.work_requests, bytes: transport.bytes },
            StageReport { stage: Stage::Host, items: host.frames.len() as u64, bytes: host.bytes },
        ],
        link: link.report,
        capacity,
        completions: host.reports.iter().map(|f| f.completions).sum(),
        frames: host.reports,
        transport: transport.report,
        overflow_count: ring.overflow_count(),
        interrupts: irq.read(),
        saturated_samples: prod.saturated,
        sample_clock_time_s: end as f64 / cfg.afe.sample_rate,
        transport_time_s: transport.time,
    };
    write_report(&cfg.output, &report)?;
    Ok(AcquireOutcome { report, frames: host.frames, images: host.images })
}

fn join<T>(h: std::thread::ScopedJoinHandle<'_, Option<T>>, stage: Stage, shared: &Shared) -> Option<T> {
    h.join().unwrap_or_else(|_| {
        shared.fail(StageError::new(stage, "stage panicked"));
        None
    })
}

struct ProducerStats {
    blocks: u64,
    bytes: u64,
    saturated: u64,
}

fn producer(
    cfg: &RunConfig,
    scenario: SignalScenario,
    end: u64,
    tx: &SyncSender<SampleBlock>,
    shared: &Shared,
) -> Result<ProducerStats, StageError> {
    let afe = AfeConfig { seed: cfg.afe.seed.wrapping_add(cfg.seed), ..cfg.afe.clone() };
    let mut gen = AfeGenerator::new(afe, scenario).map_err(at(Stage::Producer))?;
    let mut stats = ProducerStats { blocks: 0, bytes: 0, saturated: 0 };
    while gen.position() < end && !shared.aborted() {
        let n = CHUNK.min((end - gen.position()) as usize);
        let block = gen.next_block(n).map_err(at(Stage::Producer))?;
        stats.blocks += 1;
        stats.bytes += 2 * block.samples().len() as u64;
        send(tx, block, Stage::Producer)?;
    }
    stats.saturated = gen.saturation_count();
    Ok(stats)
}

/// One transmitter/receiver pair with per-lane wire delay.
struct LinkChain {
    params: LinkParams,
    skew: Vec<usize>,
    tx: TxLink,
    rx: Option<RxLink>,
    wires: Vec<VecDeque<u16>>,
    cycle: u64,
}

impl LinkChain {
    fn new(params: &LinkParams, skew: Vec<usize>) -> Result<Self, LinkError> {
        Ok(Self {
            tx: TxLink::new(params.clone(), 0)?,
            wires: vec![VecDeque::new(); params.lanes],
            params: params.clone(),
            skew,
            rx: None,
            cycle: 0,
        })
    }

    /// Sends `block` and returns whatever the receiver has released.
    fn feed(&mut self, block: &SampleBlock) -> Result<SampleBlock, LinkError> {
        self.tx.push(block)?;
        let mut streams = self.tx.drain();
        if self.rx.is_none() {
            let start = streams[0].start_cycle;
            self.rx = Some(RxLink::new(self.params.clone(), start)?);
            self.cycle = start;
            streams = streams.iter().zip(&self.skew).map(|(s, &k)| s.delayed(k)).collect();
        }
        for (wire, s) in self.wires.iter_mut().zip(&streams) {
            wire.extend(&s.symbols);
        }
        let rx = self.rx.as_mut().expect("set above");
        let mut arrivals = vec![None; self.wires.len()];
        while self.wires.iter().all(|w| !w.is_empty()) {
            for (a, w) in arrivals.iter_mut().zip(&mut self.wires) {
                *a = w.pop_front();
            }
            rx.step(self.cycle, &arrivals)?;
            self.cycle += 1;
        }
        rx.take_samples()
    }

    fn status(&self) -> LinkStatus {
        self.rx.as_ref().map(RxLink::status).unwrap_or_default()
    }
}

struct LinkStats {
    blocks: u64,
    bytes: u64,
    report: LinkReport,
}

fn link_stage(
    cfg: &RunConfig,
    rx: &Receiver<SampleBlock>,
    tx: &SyncSender<SampleBlock>,
    shared: &Shared,
) -> Result<LinkStats, StageError> {
    let p = &cfg.link.params;
    let err = at(Stage::Link);
    let mut chains = (0..cfg.links())
        .map(|g| {
            let skew = (0..p.lanes).map(|l| cfg.link.skew.get(g * p.lanes + l).copied().unwrap_or(0)).collect();
            LinkChain::new(p, skew)
        })
        .collect::<Result<Vec<_>, _>>()
        .map_err(&err)?;
    let (mut blocks, mut bytes) = (0, 0);
    // a skewed lane holds its link back by a few frames; links are merged
    // only over the samples all of them have released
    let mut pending: Vec<Option<SampleBlock>> = vec![None; chains.len()];
    while let Ok(block) = rx.recv() {
        for (g, c) in chains.iter_mut().enumerate() {
            let part = c.feed(&block.select_channels(g * p.converters, p.converters)).map_err(&err)?;
            if part.is_empty() {
                continue;
            }
            pending[g] = Some(match pending[g].take() {
                Some(prev) => SampleBlock::concat(&[prev, part]).map_err(at(Stage::Link))?,
                None => part,
            });
        }
        let ready = pending.iter().map(|b| b.as_ref().map_or(0, SampleBlock::samples_per_channel)).min().unwrap_or(0);
        if ready == 0 {
            continue;
        }
        let mut parts = Vec::with_capacity(pending.len());
        for slot in &mut pending {
            let b = slot.take().expect("ready > 0");
            let start = b.start_index();
            parts.push(b.slice(start, ready).expect("within the block"));
            if b.samples_per_channel() > ready {
                *slot = b.slice(start + ready as u64, b.samples_per_channel() - ready);
            }
        }
        let out = SampleBlock::stack_channels(&parts).map_err(at(Stage::Link))?;
        blocks += 1;
        bytes += 2 * out.samples().len() as u64;
        send(tx, out, Stage::Link)?;
    }
    let statuses: Vec<LinkStatus> = chains.iter().map(LinkChain::status).collect();
    if !shared.aborted() {
        if let Some((g, s)) = statuses.iter().enumerate().find(|(_, s)| s.resync_events > 0) {
            return Err(StageError::new(
                Stage::Link,
                format!("link {g} lost synchronization ({} symbol errors)", s.symbol_errors),
            ));
        }
        if statuses.windows(2).any(|w| w[0].latency_octets != w[1].latency_octets) {
            return Err(StageError::new(Stage::Link, "links released with different latencies"));
        }
    }
    // both ends start at octet clock 0
    let symbols = chains.iter().map(|c| c.cycle).sum::<u64>() * p.lanes as u64;
    let first = statuses.first().cloned().unwrap_or_default();
    Ok(LinkStats {
        blocks,
        bytes,
        report: LinkReport {
            links: chains.len(),
            lanes_per_link: p.lanes,
            latency_octets: first.latency_octets,
            lane_skew: statuses.iter().flat_map(|s| s.lane_skew.iter().copied()).collect(),
            data_start_sample: first.data_start_frame,
            symbols,
            symbol_errors: statuses.iter().map(|s| s.symbol_errors).sum(),
            disparity_errors: statuses.iter().map(|s| s.disparity_errors).sum(),
            resync_events: statuses.iter().map(|s| s.resync_events).sum(),
        },
    })
}

struct AcquiredFrame {
    event: FrameEvent,
    digest: String,
}

struct AcqStats {
    frames: u64,
    bytes: u64,
}

fn acquisition(
    cfg: &RunConfig,
    triggers: &[u64],
    rx: &Receiver<SampleBlock>,
    tx: &SyncSender<AcquiredFrame>,
    ring: &RingBuffer,
    irq: &InterruptCounter,
    shared: &Shared,
) -> Result<AcqStats, StageError> {
    let err = at(Stage::Acquisition);
    let width = cfg.ring.payload_channels;
    let mut windower = FrameWindower::new(cfg.trigger_config(), width, cfg.ring.block_size).map_err(&err)?;
    for &t in triggers {
        windower.trigger(t).map_err(&err)?;
    }
    let mut stats = AcqStats { frames: 0, bytes: 0 };
    while let Ok(block) = rx.recv() {
        for ev in windower.push(&block).map_err(&err)? {
            let WindowEvent::Completed(event, frame) = ev else { continue };
            let blocks = frame_to_blocks(&pad_channels(&frame, width).map_err(&err)?, cfg.ring.block_size);
            let digest = sha256(&blocks.iter().map(|b| &b[..]).collect::<Vec<_>>());
            for b in blocks {
                // single writer: a free slot stays free until written
                while ring.occupancy() >= ring.slots() {
                    if shared.aborted() {
                        return Err(StageError::new(Stage::Acquisition, "aborted while waiting for ring space"));
                    }
                    std::thread::sleep(Duration::from_micros(20));
                }
                stats.bytes += b.len() as u64;
                ring.write(b).map_err(&err)?;
            }
            irq.raise();
            stats.frames += 1;
            send(tx, AcquiredFrame { event, digest }, Stage::Acquisition)?;
        }
    }
    if stats.frames < triggers.len() as u64 && !shared.aborted() {
        return Err(StageError::new(
            Stage::Acquisition,
            format!("sample stream ended after {} of {} frames", stats.frames, triggers.len()),
        ));
    }
    Ok(stats)
}

struct DeliveredFrame {
    event: FrameEvent,
    tx_digest: String,
    bytes: Vec<u8>,
    completions: u64,
}

struct TransportStats {
    bytes: u64,
    time: f64,
    report: TransportReport,
}

fn transport(
    cfg: &RunConfig,
    rx: &Receiver<AcquiredFrame>,
    tx: &SyncSender<DeliveredFrame>,
    ring: &RingBuffer,
    shared: &Shared,
) -> Result<TransportStats, StageError> {
    let err = at(Stage::Transport);
    let t = &cfg.transport;
    let channel = ChannelModel { seed: t.channel.seed.wrapping_add(cfg.seed), ..t.channel };
    let mut fabric = Fabric::with_channel(channel).map_err(&err)?;
    let bs = cfg.ring.block_size;
    let mr = fabric.connect(cfg.trigger.frames * cfg.blocks_per_frame() * bs).map_err(&err)?;
    let mut stats = TransportStats {
        bytes: 0,
        time: 0.0,
        report: TransportReport { work_requests: 0, data_packets: 0, retransmitted_packets: 0, timeouts: 0 },
    };
    while let Ok(f) = rx.recv() {
        let first = f.event.first_block_index;
        let seqs: Vec<u64> = (first..first + f.event.block_count).collect();
        let mut completions = 0;
        for batch in seqs.chunks(t.batch) {
            let wrs = batch
                .iter()
                .map(|&s| Ok(WorkRequest::write(s, mr.rkey, s * bs as u64, ring.read(s)?)))
                .collect::<Result<Vec<_>, usdaq_core::acquisition::AcqError>>()
                .map_err(at(Stage::Transport))?;
            stats.bytes += (batch.len() * bs) as u64;
            fabric.a.post_batch(wrs).map_err(&err)?;
            let limit = fabric.now() + t.batch_timeout;
            let done = fabric.wait_completions(batch.len(), limit).map_err(&err)?;
            for (c, &s) in done.iter().zip(batch) {
                if c.status != CompletionStatus::Success {
                    return Err(StageError::new(
                        Stage::Transport,
                        format!("WRITE of block {s} completed {:?}", c.status),
                    ));
                }
                if c.wr_id != s {
                    return Err(StageError::new(
                        Stage::Transport,
                        format!("completion for block {} arrived where {s} was expected", c.wr_id),
                    ));
                }
            }
            completions += done.len() as u64;
            stats.report.work_requests += batch.len() as u64;
        }
        let region = fabric.b.region(mr.rkey).expect("registered above");
        let span = first as usize * bs..(first + f.event.block_count) as usize * bs;
        let frame = DeliveredFrame { event: f.event, tx_digest: f.digest, bytes: region[span].to_vec(), completions };
        if shared.aborted() {
            break;
        }
        send(tx, frame, Stage::Transport)?;
    }
    let s = fabric.a.stats();
    stats.report.data_packets = s.data_packets_sent;
    stats.report.retransmitted_packets = s.retransmitted_packets;
    stats.report.timeouts = s.timeouts;
    stats.time = fabric.now();
    Ok(stats)
}

struct HostStats {
    bytes: u64,
    reports: Vec<FrameReport>,
    frames: Vec<SampleBlock>,
    images: Vec<RfImage>,
}

fn host(cfg: &RunConfig, rx: &Receiver<DeliveredFrame>) -> Result<HostStats, StageError> {
    let fs = cfg.afe.sample_rate;
    let design = BandpassDesign::new(fs, cfg.processing.band_lo, cfg.processing.band_hi).map_err(at(Stage::Host))?;
    let two_way = cfg.mode == Mode::AcquireUs;
    let out = &cfg.output;
    let mut stats = HostStats { bytes: 0, reports: Vec::new(), frames: Vec::new(), images: Vec::new() };
    while let Ok(d) = rx.recv() {
        let ev = d.event;
        let host_digest = sha256(&[&d.bytes]);
        if host_digest != d.tx_digest {
            return Err(StageError::new(
                Stage::Host,
                format!("frame {} differs from what was acquired ({} vs {})", ev.frame_id, host_digest, d.tx_digest),
            ));
        }
        stats.bytes += d.bytes.len() as u64;
        let frame = blocks_to_frame(
            &[Bytes::from(d.bytes)],
            cfg.ring.payload_channels,
            cfg.trigger.window,
            ev.first_sample_index,
            fs,
        )
        .map_err(at(Stage::Host))?
        .select_channels(0, cfg.afe.channels);
        let name = format!("frame_{:04}", ev.frame_id);
        frame.write_binary(create(out.join("frames").join(format!("{name}.bin")))?).map_err(at(Stage::Output))?;
        frame.write_csv(create(out.join("csv").join(format!("{name}.csv")))?).map_err(at(Stage::Output))?;

        let traces: Vec<Vec<f64>> = (0..frame.channels())
            .map(|c| {
                let x: Vec<f64> = frame.channel(c).iter().map(|&v| v as f64).collect();
                envelope_trace(&bandpass_trace(&x, &design))
            })
            .collect();
        let image =
            render_image(&traces, fs, cfg.trigger.delay, cfg.sound_speed(), two_way).map_err(at(Stage::Host))?;
        image.write_pgm(create(out.join("images").join(format!("{name}.pgm")))?).map_err(at(Stage::Output))?;
        image
            .write_csv(create(out.join("csv").join(format!("image_{:04}.csv", ev.frame_id)))?)
            .map_err(at(Stage::Output))?;

        let (channel, _) = image.brightest();
        let row = image.brightest_row();
        let energy: Vec<f64> = traces.iter().map(|t| t.iter().map(|v| v * v).sum()).collect();
        let total: f64 = energy.iter().sum();
        stats.reports.push(FrameReport {
            frame_id: ev.frame_id,
            trigger_sample_index: ev.trigger_sample_index,
            first_sample_index: ev.first_sample_index,
            blocks: ev.block_count,
            bytes: ev.block_count * cfg.ring.block_size as u64,
            completions: d.completions,
            tx_sha256: d.tx_digest,
            host_sha256: host_digest,
            brightest_channel: channel,
            brightest_time_s: image.time_s(row),
            brightest_depth_m: image.depth_m(row),
            channel_energy: energy.iter().map(|e| if total > 0.0 { e / total } else { 0.0 }).collect(),
        });
        stats.frames.push(frame);
        stats.images.push(image);
    }
    Ok(stats)
}

#[cfg(test)]
mod tests {
    use usdaq_core::jesd::{rx_link, tx_link};

    use super::*;

    #[test]
    fn streamed_link_matches_batch_link() {
        let p = LinkParams::default();
        let cfg = AfeConfig { channels: 8, noise_rms: 100.0, seed: 3, ..Default::default() };
        let mut gen = AfeGenerator::new(cfg, SignalScenario::Dc { level: 0.0 }).unwrap();
        let blocks: Vec<SampleBlock> = [700, 1, 333, 1024, 90].iter().map(|&n| gen.next_block(n).unwrap()).collect();
        let skews = [0usize, 37];
        for &skew in &skews {
            let mut chain = LinkChain::new(&p, vec![skew]).unwrap();
            let streamed: Vec<SampleBlock> = blocks.iter().map(|b| chain.feed(b).unwrap()).collect();
            let streamed =
                SampleBlock::concat(&streamed.into_iter().filter(|b| !b.is_empty()).collect::<Vec<_>>()).unwrap();
            let lanes = tx_link(&blocks, &p, 0).unwrap();
            let (batch, status) = rx_link(&usdaq_core::jesd::apply_skew(&lanes, &[skew]), &p).unwrap();
            let n = streamed.samples_per_channel().min(batch.samples_per_channel());
            assert!(n > 1500);
            assert_eq!(streamed.slice(streamed.start_index(), n), batch.slice(batch.start_index(), n));
            assert_eq!(chain.status().latency_octets, status.latency_octets);
            assert_eq!(chain.status().latency_octets, p.elastic_depth as u64);
            assert_eq!(chain.status().data_start_frame, 160);
            assert_eq!(chain.status().lane_skew, vec![skew as u64]);
        }
    }
}
