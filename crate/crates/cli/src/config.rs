//! Run configuration, loaded from TOML.
//!
//! Every section is optional; missing keys take the defaults of the
//! reference bench setup (16 channels at 80 MSPS padded to 256, trigger
//! delay 60 cycles, 256 KiB blocks in a 4 MiB ring, batches of 8 WRITEs).

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use usdaq_core::acquisition::{
    latch_trigger, LeakyBucketModel, TriggerConfig, TriggerSource, DEFAULT_BLOCK_SIZE, DEFAULT_CAPACITY,
    REFERENCE_TAU_MIB,
};
use usdaq_core::afe::{AfeConfig, Echo, OutputMode, SignalScenario};
use usdaq_core::analysis::SnrParams;
use usdaq_core::jesd::LinkParams;
use usdaq_core::rdma::ChannelModel;

use crate::{Stage, StageError};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    #[default]
    AcquireUs,
    AcquireOa,
    Stress,
    Characterize,
    Budget,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub mode: Mode,
    pub seed: u64,
    pub output: PathBuf,
    /// Scenario file, relative to the config file. An inline `[scenario]`
    /// table takes precedence.
    pub scenario_file: Option<PathBuf>,
    pub scenario: Option<SignalScenario>,
    pub afe: AfeConfig,
    pub link: LinkSection,
    pub trigger: TriggerSection,
    pub ring: RingSection,
    pub bucket: BucketSection,
    pub transport: TransportSection,
    pub processing: ProcessingSection,
    pub stress: StressSection,
    pub characterize: CharacterizeSection,
    pub budget: BudgetSection,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            mode: Mode::default(),
            seed: 1,
            output: PathBuf::from("out"),
            scenario_file: None,
            scenario: None,
            afe: AfeConfig { noise_rms: 2.0, ..Default::default() },
            link: LinkSection::default(),
            trigger: TriggerSection::default(),
            ring: RingSection::default(),
            bucket: BucketSection::default(),
            transport: TransportSection::default(),
            processing: ProcessingSection::default(),
            stress: StressSection::default(),
            characterize: CharacterizeSection::default(),
            budget: BudgetSection::default(),
        }
    }
}

/// Parameters of each serial link; the front-end channels are split over
/// `afe.channels / converters` identical links.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(default)]
pub struct LinkSection {
    #[serde(flatten)]
    pub params: LinkParams,
    /// Extra wire delay per lane in octet clocks, numbered across links.
    /// Missing entries are zero.
    pub skew: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TriggerSection {
    /// Defaults to the pulser for `acquire_us` and the external input for
    /// `acquire_oa`.
    pub source: Option<TriggerSource>,
    /// Sample clock cycles from trigger to the first captured sample.
    pub delay: u64,
    /// Samples per channel per frame.
    pub window: usize,
    pub frames: usize,
    /// Time of the first trigger event, seconds after the front-end starts.
    pub first: f64,
    /// Trigger repetition interval, seconds.
    pub interval: f64,
}

impl Default for TriggerSection {
    fn default() -> Self {
        // 256 channels × 3072 samples × 2 bytes = 6 blocks of 256 KiB
        Self { source: None, delay: 60, window: 3072, frames: 1, first: 5e-6, interval: 200e-6 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RingSection {
    pub capacity: usize,
    pub block_size: usize,
    /// Payload width in channels; the extra channels carry a filler pattern.
    pub payload_channels: usize,
}

impl Default for RingSection {
    fn default() -> Self {
        Self { capacity: DEFAULT_CAPACITY, block_size: DEFAULT_BLOCK_SIZE, payload_channels: 256 }
    }
}

/// Overrides for the capacity model. The write rate always follows from
/// the payload width and sample rate.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BucketSection {
    /// Worst-case read rate, bits/s.
    pub r_out: f64,
    /// Read-start latency, seconds.
    pub tau: f64,
    /// Defaults to the ring capacity.
    pub buffer_bytes: Option<usize>,
}

impl Default for BucketSection {
    fn default() -> Self {
        Self { r_out: 95.6e9, tau: REFERENCE_TAU_MIB, buffer_bytes: None }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TransportSection {
    pub channel: ChannelModel,
    /// WRITEs posted per batch.
    pub batch: usize,
    /// Simulated seconds to wait for one batch before giving up.
    pub batch_timeout: f64,
}

impl Default for TransportSection {
    fn default() -> Self {
        Self { channel: ChannelModel::default(), batch: 8, batch_timeout: 1.0 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ProcessingSection {
    pub band_lo: f64,
    pub band_hi: f64,
    /// Defaults to the scenario's sound speed, or 1540 m/s.
    pub sound_speed: Option<f64>,
}

impl Default for ProcessingSection {
    fn default() -> Self {
        Self { band_lo: 1e6, band_hi: 15e6, sound_speed: None }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct StressSection {
    pub payloads: Vec<usize>,
    pub batches: Vec<usize>,
    pub repeats: usize,
    pub bytes_per_run: usize,
    pub post_overhead: f64,
    pub poll_overhead: f64,
}

impl Default for StressSection {
    fn default() -> Self {
        Self {
            payloads: vec![64 << 10, 128 << 10, 256 << 10, 512 << 10, 1 << 20],
            batches: vec![1, 2, 4, 8, 16],
            repeats: 10,
            bytes_per_run: 8 << 20,
            post_overhead: 0.2e-6,
            poll_overhead: 5e-6,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CharacterizeSection {
    /// Tone spacing of the default grid, Hz.
    pub step: f64,
    /// Explicit tone list; replaces the grid when set.
    pub frequencies: Option<Vec<f64>>,
    pub record_len: usize,
    /// Tone amplitude at the input, LSB.
    pub amplitude: f64,
    /// The source runs this far off each nominal tone, like a bench
    /// generator on its own clock. Tones commensurate with the sample
    /// clock would otherwise be seen at only a few phases.
    pub source_offset: f64,
    pub snr: SnrParams,
    /// Worker threads for the sweep; 0 uses the available parallelism.
    pub threads: usize,
}

impl Default for CharacterizeSection {
    fn default() -> Self {
        Self {
            step: 0.2e6,
            frequencies: None,
            record_len: usdaq_core::analysis::RECORD_LEN,
            amplitude: 20000.0,
            source_offset: 3.217e3,
            snr: SnrParams::default(),
            threads: 0,
        }
    }
}

/// One budget row; unset fields come from the `[bucket]` and `[ring]`
/// sections.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BudgetSpec {
    pub channels: usize,
    pub sample_rate: f64,
    #[serde(default)]
    pub frame_len: Option<u64>,
    #[serde(default)]
    pub buffer_bytes: Option<usize>,
    #[serde(default)]
    pub r_out: Option<f64>,
    #[serde(default)]
    pub tau: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BudgetSection {
    pub rows: Vec<BudgetSpec>,
    /// Grid rows evaluated at their maximum frame length.
    pub channels: Vec<usize>,
    pub sample_rates: Vec<f64>,
}

impl Default for BudgetSection {
    fn default() -> Self {
        let row = |channels, frame_len| BudgetSpec {
            channels,
            sample_rate: 80e6,
            frame_len,
            buffer_bytes: None,
            r_out: None,
            tau: None,
        };
        Self {
            rows: vec![row(256, None), row(256, Some(2000)), row(16, None)],
            channels: vec![16, 32, 64, 128, 256],
            sample_rates: vec![20e6, 40e6, 65e6, 80e6],
        }
    }
}

fn err(message: impl Into<String>) -> StageError {
    StageError::new(Stage::Config, message)
}

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<Self, StageError> {
        toml::from_str(text).map_err(|e| err(e.to_string()))
    }

    /// Reads a config file, resolving `scenario_file` against its directory.
    pub fn load(path: &Path) -> Result<Self, StageError> {
        let text = std::fs::read_to_string(path).map_err(|e| err(format!("{}: {e}", path.display())))?;
        let mut cfg = Self::from_toml(&text)?;
        if let (None, Some(file)) = (&cfg.scenario, &cfg.scenario_file) {
            let file = path.parent().unwrap_or(Path::new(".")).join(file);
            cfg.scenario = Some(SignalScenario::load(&file).map_err(|e| err(e.to_string()))?);
        }
        Ok(cfg)
    }

    /// Scenario for the current mode: the configured one, or the built-in
    /// default (a 20 mm reflector, a pulse on channels 5–8, or a tone).
    pub fn scenario(&self) -> SignalScenario {
        if let Some(s) = &self.scenario {
            return s.clone();
        }
        match self.mode {
            Mode::AcquireOa => SignalScenario::OaPulse {
                delay: 10e-6,
                width: 50e-9,
                amplitude: 8000.0,
                channels: vec![4, 5, 6, 7],
                tx_index: 0,
                period: None,
            },
            Mode::Characterize => SignalScenario::SweptSine { frequency: 1e6, amplitude: 20000.0, phase: 0.0 },
            _ => SignalScenario::PulseEcho {
                echoes: vec![Echo { depth: 0.02, reflectivity: 1.0 }],
                center_frequency: 5e6,
                cycles: 3.0,
                sound_speed: 1540.0,
                amplitude: 8000.0,
                tx_index: 0,
                period: None,
            },
        }
    }

    pub fn trigger_source(&self) -> TriggerSource {
        self.trigger.source.unwrap_or(match self.mode {
            Mode::AcquireOa => TriggerSource::External,
            _ => TriggerSource::InternalPulser,
        })
    }

    pub fn trigger_config(&self) -> TriggerConfig {
        TriggerConfig { source: self.trigger_source(), delay: self.trigger.delay, window: self.trigger.window }
    }

    /// Event times of every trigger, seconds.
    pub fn trigger_times(&self) -> Vec<f64> {
        (0..self.trigger.frames).map(|k| self.trigger.first + k as f64 * self.trigger.interval).collect()
    }

    /// Latched sample index of every trigger.
    pub fn trigger_indices(&self) -> Vec<u64> {
        self.trigger_times().into_iter().map(|t| latch_trigger(t, self.afe.sample_rate)).collect()
    }

    pub fn links(&self) -> usize {
        self.afe.channels / self.link.params.converters.max(1)
    }

    pub fn blocks_per_frame(&self) -> usize {
        (self.trigger.window * self.ring.payload_channels * 2).div_ceil(self.ring.block_size.max(1))
    }

    pub fn bucket_model(&self) -> Result<LeakyBucketModel, StageError> {
        let width = self.ring.payload_channels;
        let buffer = self.bucket.buffer_bytes.unwrap_or(self.ring.capacity);
        LeakyBucketModel::new(
            width as f64 * 16.0 * self.afe.sample_rate,
            self.bucket.r_out,
            buffer as f64 * 8.0,
            self.bucket.tau,
            width,
            16,
        )
        .map_err(|e| err(e.to_string()))
    }

    pub fn sound_speed(&self) -> f64 {
        self.processing.sound_speed.unwrap_or(match self.scenario() {
            SignalScenario::PulseEcho { sound_speed, .. } => sound_speed,
            _ => 1540.0,
        })
    }

    /// Cross-field checks for the configured mode; nothing runs until
    /// this passes.
    pub fn validate(&self) -> Result<(), StageError> {
        let scenario = self.scenario();
        scenario.validate().map_err(|e| err(e.to_string()))?;
        match self.mode {
            Mode::AcquireUs | Mode::AcquireOa => self.validate_acquire(&scenario),
            Mode::Characterize => self.validate_characterize(&scenario),
            Mode::Stress => self.validate_stress(),
            Mode::Budget => self.validate_budget(),
        }
    }

    fn validate_front_end(&self) -> Result<(), StageError> {
        self.afe.validate().map_err(|e| err(e.to_string()))?;
        if self.afe.mode != OutputMode::Raw {
            return Err(err("the pipeline carries raw samples; set afe.mode = \"raw\""));
        }
        let p = &self.link.params;
        p.validate().map_err(|e| err(e.to_string()))?;
        if self.afe.channels % p.converters != 0 {
            return Err(err(format!(
                "{} front-end channels do not split evenly over links of {} converters",
                self.afe.channels, p.converters
            )));
        }
        if (p.frame_clock - self.afe.sample_rate).abs() > 1e-9 * self.afe.sample_rate {
            return Err(err(format!(
                "link frame clock {} Hz differs from the sample rate {} Hz",
                p.frame_clock, self.afe.sample_rate
            )));
        }
        let lanes = self.links() * p.lanes;
        if self.link.skew.len() > lanes {
            return Err(err(format!("{} skew entries for {lanes} lanes", self.link.skew.len())));
        }
        if let Some(s) = self.link.skew.iter().find(|&&s| s > p.elastic_depth) {
            return Err(err(format!("lane skew {s} exceeds the elastic depth {}", p.elastic_depth)));
        }
        Ok(())
    }

    fn validate_acquire(&self, scenario: &SignalScenario) -> Result<(), StageError> {
        self.validate_front_end()?;
        match (self.mode, scenario) {
            (Mode::AcquireUs, SignalScenario::PulseEcho { .. }) | (Mode::AcquireOa, SignalScenario::OaPulse { .. }) => {
            }
            (Mode::AcquireUs | Mode::AcquireOa, SignalScenario::PulseEcho { .. } | SignalScenario::OaPulse { .. }) => {
                return Err(err("pulse-echo scenarios need acquire_us and OA scenarios acquire_oa"))
            }
            _ => {}
        }
        let t = &self.trigger;
        if t.frames == 0 || t.window == 0 {
            return Err(err("need at least one frame of at least one sample"));
        }
        if !(t.first >= 0.0 && t.first.is_finite()) || (t.frames > 1 && !(t.interval > 0.0)) {
            return Err(err("trigger times must be non-negative and strictly increasing"));
        }
        let fs = self.afe.sample_rate;
        if t.frames > 1 {
            let period = t.interval * fs;
            if (period - period.round()).abs() > 1e-6 {
                return Err(err(format!("trigger interval is {period} sample clocks; it must be a whole number")));
            }
            if (period.round() as u64) < t.window as u64 {
                return Err(err(format!(
                    "trigger interval of {period} samples is shorter than the {} sample window",
                    t.window
                )));
            }
        }
        let p = &self.link.params;
        let data_start = p.data_start_frame(0);
        let first = self.trigger_indices()[0] + t.delay;
        if first < data_start {
            return Err(err(format!(
                "first window starts at sample {first}, before link data begins at sample {data_start}"
            )));
        }
        let r = &self.ring;
        if r.payload_channels < self.afe.channels {
            return Err(err(format!("payload width {} below {} channels", r.payload_channels, self.afe.channels)));
        }
        if r.block_size == 0 || r.block_size % 2 != 0 || r.capacity % r.block_size != 0 || r.capacity < r.block_size {
            return Err(err("ring capacity must be a whole number (≥ 1) of even-sized blocks"));
        }
        let slots = r.capacity / r.block_size;
        if self.blocks_per_frame() > slots {
            return Err(err(format!("a frame spans {} blocks but the ring holds {slots}", self.blocks_per_frame())));
        }
        self.bucket_model()?;
        let tr = &self.transport;
        tr.channel.validate().map_err(|e| err(e.to_string()))?;
        if tr.batch == 0 || tr.batch > 1024 {
            return Err(err("batch must be between 1 and the send queue depth (1024)"));
        }
        if !(tr.batch_timeout > 0.0) {
            return Err(err("batch timeout must be positive"));
        }
        let pr = &self.processing;
        if !(pr.band_lo > 0.0 && pr.band_lo < pr.band_hi && pr.band_hi < fs / 2.0) {
            return Err(err(format!("display band {}..{} Hz not inside (0, {})", pr.band_lo, pr.band_hi, fs / 2.0)));
        }
        if !(self.sound_speed() > 0.0) {
            return Err(err("sound speed must be positive"));
        }
        Ok(())
    }

    fn validate_characterize(&self, scenario: &SignalScenario) -> Result<(), StageError> {
        self.validate_front_end()?;
        if !matches!(scenario, SignalScenario::SweptSine { .. }) {
            return Err(err("characterize needs a swept_sine scenario"));
        }
        let c = &self.characterize;
        if c.frequencies.is_none() && !(c.step > 0.0) {
            return Err(err("sweep step must be positive"));
        }
        if let Some(f) = &c.frequencies {
            if f.iter().any(|&f| !(f > 0.0 && f < self.afe.sample_rate / 2.0)) {
                return Err(err("sweep tones must lie inside (0, Nyquist)"));
            }
        }
        if c.record_len < 16 || !(c.amplitude > 0.0) {
            return Err(err("records need at least 16 samples and a positive amplitude"));
        }
        Ok(())
    }

    fn validate_stress(&self) -> Result<(), StageError> {
        let s = &self.stress;
        if s.payloads.is_empty() || s.batches.is_empty() || s.repeats == 0 {
            return Err(err("stress grid needs payloads, batches and at least one repeat"));
        }
        if s.payloads.contains(&0) || s.batches.contains(&0) || s.batches.iter().any(|&b| b > 1024) {
            return Err(err("payloads must be positive and batches within 1..=1024"));
        }
        if !(s.post_overhead >= 0.0 && s.poll_overhead >= 0.0) {
            return Err(err("host overheads must be non-negative"));
        }
        self.transport.channel.validate().map_err(|e| err(e.to_string()))
    }

    fn validate_budget(&self) -> Result<(), StageError> {
        let b = &self.budget;
        if b.rows.iter().any(|r| r.channels == 0 || !(r.sample_rate > 0.0)) || b.channels.contains(&0) {
            return Err(err("budget rows need positive channel counts and sample rates"));
        }
        if b.sample_rates.iter().any(|&f| !(f > 0.0)) {
            return Err(err("budget sample rates must be positive"));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn acquire() -> RunConfig {
        RunConfig::default()
    }

    #[test]
    fn defaults_validate_in_every_mode() {
        for mode in [Mode::AcquireUs, Mode::AcquireOa, Mode::Stress, Mode::Characterize, Mode::Budget] {
            RunConfig { mode, ..Default::default() }.validate().unwrap();
        }
        assert_eq!(acquire().blocks_per_frame(), 6);
        assert_eq!(acquire().links(), 2);
    }

    #[test]
    fn reference_capacity_model() {
        let m = acquire().bucket_model().unwrap();
        assert!((m.r_in - 327.68e9).abs() < 1.0);
        assert_eq!(m.buffer_bits, (4u64 << 23) as f64);
    }

    #[test]
    fn parses_sections_and_rejects_unknown_keys() {
        let cfg = RunConfig::from_toml(
            r#"
            mode = "acquire_oa"
            [afe]
            channels = 8
            [link]
            converters = 8
            skew = [3]
            [transport.channel]
            loss_probability = 0.01
            "#,
        )
        .unwrap();
        assert_eq!(cfg.mode, Mode::AcquireOa);
        assert_eq!(cfg.link.skew, vec![3]);
        assert_eq!(cfg.transport.channel.loss_probability, 0.01);
        assert_eq!(cfg.trigger_source(), TriggerSource::External);
        assert!(RunConfig::from_toml("colour = 3").is_err());
        assert!(RunConfig::from_toml("[ring]\nslots = 3").is_err());
    }

    #[test]
    fn cross_field_errors() {
        let bad = [
            RunConfig { afe: AfeConfig { channels: 12, ..Default::default() }, ..acquire() },
            RunConfig { trigger: TriggerSection { window: 20_000, ..Default::default() }, ..acquire() },
            RunConfig { trigger: TriggerSection { first: 0.0, ..Default::default() }, ..acquire() },
            RunConfig { trigger: TriggerSection { frames: 3, interval: 12.34e-9, ..Default::default() }, ..acquire() },
            RunConfig { ring: RingSection { payload_channels: 8, ..Default::default() }, ..acquire() },
            RunConfig { processing: ProcessingSection { band_hi: 50e6, ..Default::default() }, ..acquire() },
            RunConfig { link: LinkSection { skew: vec![0, 5000], ..Default::default() }, ..acquire() },
            RunConfig { mode: Mode::AcquireOa, ..acquire() }.with_scenario(acquire().scenario()),
            RunConfig { mode: Mode::Characterize, ..acquire() }.with_scenario(acquire().scenario()),
        ];
        for (i, cfg) in bad.iter().enumerate() {
            let e = cfg.validate().expect_err(&format!("case {i}"));
            assert_eq!(e.stage, Stage::Config);
        }
    }

    impl RunConfig {
        fn with_scenario(mut self, s: SignalScenario) -> Self {
            self.scenario = Some(s);
            self
        }
    }
}
