//! Link configuration: one JSON document with unit-suffixed keys.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::channel::{FiberParams, FrontendParams};
use crate::equalizer::TrainSpec;
use crate::error::{Error, Result};
use crate::repro::sha256_hex;
use crate::transmitter::{build_alphabet, FrameSpec, PulseShape};

/// Frame sizes for one operating point.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FramePlan {
    pub payload_symbols: usize,
    /// `None` selects four times the estimated channel memory.
    pub guard_symbols: Option<usize>,
    pub train_frames: usize,
    pub eval_frames: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LinkConfig {
    pub order: usize,
    pub offset: f64,
    pub diff_precode: bool,
    pub symbol_rate_baud: f64,
    pub rolloff: f64,
    pub sps_sim: usize,
    pub sps_rx: usize,
    pub fiber: FiberParams,
    pub frontend: FrontendParams,
    pub stages: usize,
    pub frames: FramePlan,
    pub train: TrainSpec,
    pub seed: u64,
}

impl Default for LinkConfig {
    fn default() -> Self {
        Self::full_scale()
    }
}

impl LinkConfig {
    /// 8-ASK at 230 GBaud over 10 km O-band SSMF, -15 dBm, three SIC stages.
    pub fn full_scale() -> Self {
        Self {
            order: 8,
            offset: 0.6,
            diff_precode: false,
            symbol_rate_baud: 230e9,
            rolloff: 0.15,
            sps_sim: 16,
            sps_rx: 2,
            fiber: FiberParams::o_band_ssmf(),
            frontend: FrontendParams::pin_thermal(),
            stages: 3,
            frames: FramePlan {
                payload_symbols: 8192,
                guard_symbols: None,
                train_frames: 32,
                eval_frames: 8,
            },
            train: TrainSpec::default(),
            seed: 1,
        }
    }

    /// Time-frequency rescaling by `factor`.
    ///
    /// Symbol rate, receiver bandwidths and the noise reference bandwidth scale
    /// by `factor`; dispersion and the thermal constant are adjusted so that
    /// dispersion memory in symbols and the in-band SNR are unchanged.
    pub fn frequency_scaled(mut self, factor: f64) -> Self {
        self.symbol_rate_baud *= factor;
        self.frontend.rx_cutoff_hz *= factor;
        self.frontend.noise_bandwidth_hz *= factor;
        self.frontend.thermal_const_a2s /= factor;
        self.fiber.beta2_ps2_per_km /= factor * factor;
        self.fiber.beta3_ps3_per_km /= factor * factor * factor;
        self
    }

    /// 4-ASK analogue of the 230 GBaud operating point, scaled to 40 GBaud,
    /// with frame counts sized for a single workstation core.
    pub fn desk_scaled() -> Self {
        let mut c = Self::full_scale().frequency_scaled(40e9 / 230e9);
        c.order = 4;
        c.frames = FramePlan {
            payload_symbols: 4096,
            guard_symbols: None,
            train_frames: 12,
            eval_frames: 6,
        };
        c
    }

    pub fn pulse(&self) -> Result<PulseShape> {
        PulseShape::new(self.rolloff, self.sps_sim)
    }

    /// Channel memory estimate in symbols: dispersion delay spread over the
    /// signal band plus the receiver filter response length.
    pub fn channel_memory_symbols(&self) -> usize {
        let band = (1.0 + self.rolloff) * self.symbol_rate_baud;
        let cd = self.fiber.delay_spread(band);
        let rx = 1.5 / self.frontend.rx_cutoff_hz;
        ((cd + rx) * self.symbol_rate_baud).ceil() as usize
    }

    pub fn guard_symbols(&self) -> usize {
        self.frames
            .guard_symbols
            .unwrap_or_else(|| 4 * self.channel_memory_symbols())
    }

    pub fn frame_spec(&self, seed: u64) -> FrameSpec {
        FrameSpec {
            payload_symbols: self.frames.payload_symbols,
            guard_symbols: self.guard_symbols(),
            seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        build_alphabet(self.order)?;
        if !(self.offset >= 0.0 && self.offset.is_finite()) {
            return Err(Error::Config(format!("offset must be >= 0, got {}", self.offset)));
        }
        if !(self.symbol_rate_baud > 0.0 && self.symbol_rate_baud.is_finite()) {
            return Err(Error::Config("symbol_rate_baud must be positive".into()));
        }
        self.pulse()?;
        if self.sps_rx != 2 {
            return Err(Error::Config(format!(
                "receiver works at 2 samples per symbol, got {}",
                self.sps_rx
            )));
        }
        if self.sps_sim < self.sps_rx || !self.sps_sim.is_multiple_of(self.sps_rx) {
            return Err(Error::Config(format!(
                "sps_sim = {} must be a multiple of sps_rx = {}",
                self.sps_sim, self.sps_rx
            )));
        }
        self.fiber.validate()?;
        self.frontend.validate()?;
        if self.stages == 0 {
            return Err(Error::Config("at least one SIC stage is required".into()));
        }
        let f = &self.frames;
        if f.train_frames == 0 || f.eval_frames == 0 {
            return Err(Error::Config("train_frames and eval_frames must be positive".into()));
        }
        self.frame_spec(0).validate(self.channel_memory_symbols())?;
        self.train.validate()?;
        Ok(())
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let c: Self = serde_json::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        c.validate()?;
        Ok(c)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }

    /// First 16 hex digits of the SHA-256 over the compact JSON encoding.
    pub fn config_hash(&self) -> String {
        let compact = serde_json::to_vec(self).expect("config serializes");
        sha256_hex(&compact)[..16].to_string()
    }

    /// Overrides one dotted key, e.g. `fiber.length_km=0` or `train.epochs=5`.
    /// The value is parsed as JSON, falling back to a plain string.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let mut doc = serde_json::to_value(&*self)?;
        let mut slot = &mut doc;
        for part in key.split('.') {
            slot = slot
                .get_mut(part)
                .ok_or_else(|| Error::Config(format!("unknown configuration key `{key}`")))?;
        }
        *slot = serde_json::from_str(value)
            .unwrap_or_else(|_| serde_json::Value::String(value.to_string()));
        let updated: Self =
            serde_json::from_value(doc).map_err(|e| Error::Config(format!("{key}: {e}")))?;
        *self = updated;
        Ok(())
    }
}
