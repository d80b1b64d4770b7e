use std::path::Path;

use har_core::daqsim::{modalities, Align, GenConfig, Interp, SensorSpec, WindowConfig};
use har_core::engine::{CostModel, Schedule};
use har_core::netgraph::{BranchSpec, FusionMode, ModelSpec};
use har_core::trainer::TrainConfig;
use serde::{Deserialize, Serialize};

use crate::CmdError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataConfig {
    pub classes: usize,
    pub n_per_class: usize,
    pub segment_s: f64,
    /// Sensors carrying class signal; empty means every sensor does.
    pub informative: Vec<String>,
    pub noise: f64,
}

impl Default for DataConfig {
    fn default() -> Self {
        Self {
            classes: 10,
            n_per_class: 10,
            segment_s: 10.0,
            informative: Vec::new(),
            noise: 0.15,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct WindowSettings {
    pub window_ms: f64,
    pub step_ms: f64,
    pub align: Align,
    pub fifo_slack: f64,
}

impl Default for WindowSettings {
    fn default() -> Self {
        // 20 rows on the 6 Hz common grid
        let w = 20.0 / 6.0 * 1e3;
        Self {
            window_ms: w,
            step_ms: w,
            align: Align::Common {
                rate_hz: 6.0,
                method: Interp::Linear,
            },
            fifo_slack: 2.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    pub filters: usize,
    pub kernel: usize,
    /// Temporal max-pool folded after the first conv layer.
    pub pool: Option<usize>,
    pub hidden: usize,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            filters: 8,
            kernel: 3,
            pool: None,
            hidden: 16,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SelectConfig {
    /// Sensors kept after importance ranking.
    pub keep: usize,
    /// Run the commands after `select` on the pruned model.
    pub use_selected: bool,
}

impl Default for SelectConfig {
    fn default() -> Self {
        Self {
            keep: 4,
            use_selected: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct QuantSettings {
    /// Magnitude bits of the deployed model.
    pub n_bits: u32,
    /// Magnitude bits visited by the sweep.
    pub sweep_bits: Vec<u32>,
    /// Training frames used for calibration; 0 means all of them.
    pub calib_frames: usize,
    pub acc_bits: Option<u32>,
}

impl Default for QuantSettings {
    fn default() -> Self {
        Self {
            n_bits: 10,
            sweep_bits: (2..=16).collect(),
            calib_frames: 0,
            acc_bits: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct HardwareConfig {
    pub schedule: Schedule,
    pub clock_hz: f64,
    pub kappa: u64,
    pub dense_lanes: Option<usize>,
    /// Storage widths (sign bit included) listed in the report.
    pub report_widths: Vec<u32>,
}

impl Default for HardwareConfig {
    fn default() -> Self {
        let c = CostModel::default();
        Self {
            schedule: Schedule::Serial,
            clock_hz: c.clock_hz,
            kappa: c.kappa,
            dense_lanes: c.dense_lanes,
            report_widths: vec![9, 11],
        }
    }
}

/// Everything a run depends on besides file locations.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    pub seed: u64,
    pub sensors: Vec<SensorSpec>,
    pub data: DataConfig,
    pub window: WindowSettings,
    pub model: ModelConfig,
    /// The `seed` field here is ignored; training uses the run seed.
    pub train: TrainConfig,
    pub select: SelectConfig,
    pub quant: QuantSettings,
    pub hardware: HardwareConfig,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            sensors: modalities(),
            data: DataConfig::default(),
            window: WindowSettings::default(),
            model: ModelConfig::default(),
            train: TrainConfig::default(),
            select: SelectConfig::default(),
            quant: QuantSettings::default(),
            hardware: HardwareConfig::default(),
        }
    }
}

fn ms_to_ns(ms: f64) -> u64 {
    (ms * 1e6).round() as u64
}

fn bad(msg: impl Into<String>) -> CmdError {
    CmdError::Config(msg.into())
}

impl PipelineConfig {
    pub fn load(path: &Path) -> Result<Self, CmdError> {
        let text = std::fs::read_to_string(path).map_err(|e| CmdError::io(path, e))?;
        serde_json::from_str(&text).map_err(|e| bad(format!("{}: {e}", path.display())))
    }

    /// Copy the run seed into the parts that carry their own.
    pub fn resolved(mut self) -> Self {
        self.train.seed = self.seed;
        self
    }

    pub fn validate(&self) -> Result<(), CmdError> {
        if self.sensors.is_empty() {
            return Err(bad("no sensors selected"));
        }
        for (i, s) in self.sensors.iter().enumerate() {
            s.validate()?;
            if self.sensors[..i].iter().any(|o| o.name == s.name || o.slug() == s.slug()) {
                return Err(bad(format!("duplicate sensor '{}'", s.name)));
            }
        }
        for name in &self.data.informative {
            if !self.sensors.iter().any(|s| &s.name == name) {
                return Err(bad(format!("informative sensor '{name}' is not in the sensor list")));
            }
        }
        if !(self.data.segment_s.is_finite() && self.data.segment_s > 0.0) {
            return Err(bad(format!("segment_s = {}", self.data.segment_s)));
        }
        if !(self.window.window_ms > 0.0 && self.window.step_ms > 0.0) {
            return Err(bad("window_ms and step_ms must be positive"));
        }
        self.window_config().validate(&self.sensors)?;
        if self.window_config().window_ns > self.segment_ns() {
            return Err(bad("window is longer than an activity segment"));
        }
        self.model_spec()?;
        if self.select.keep == 0 || self.select.keep > self.sensors.len() {
            return Err(bad(format!(
                "keep = {} outside 1..={}",
                self.select.keep,
                self.sensors.len()
            )));
        }
        if self.quant.sweep_bits.is_empty() {
            return Err(bad("empty bit sweep"));
        }
        if !(self.hardware.clock_hz.is_finite() && self.hardware.clock_hz > 0.0) {
            return Err(bad(format!("clock_hz = {}", self.hardware.clock_hz)));
        }
        if self.hardware.report_widths.iter().any(|&w| w < 2) {
            return Err(bad("report widths must be at least 2 bits"));
        }
        Ok(())
    }

    pub fn segment_ns(&self) -> u64 {
        ms_to_ns(self.data.segment_s * 1e3)
    }

    pub fn window_config(&self) -> WindowConfig {
        WindowConfig {
            window_ns: ms_to_ns(self.window.window_ms),
            step_ns: ms_to_ns(self.window.step_ms),
            align: self.window.align,
            fifo_slack: self.window.fifo_slack,
        }
    }

    pub fn gen_config(&self) -> GenConfig {
        let all = self.data.informative.is_empty();
        GenConfig {
            classes: self.data.classes,
            n_per_class: self.data.n_per_class,
            segment_ns: self.segment_ns(),
            informative: self
                .sensors
                .iter()
                .map(|s| all || self.data.informative.contains(&s.name))
                .collect(),
            noise: self.data.noise,
            seed: self.seed,
        }
    }

    pub fn cost_model(&self) -> CostModel {
        CostModel {
            kappa: self.hardware.kappa,
            clock_hz: self.hardware.clock_hz,
            dense_lanes: self.hardware.dense_lanes,
        }
    }

    /// One branch per sensor, sized to its window rows.
    pub fn model_spec(&self) -> Result<ModelSpec, CmdError> {
        let w = self.window_config();
        let m = &self.model;
        let branches = self
            .sensors
            .iter()
            .map(|s| {
                let mut b = BranchSpec::uniform(&s.name, s.channels, w.rows_for(s.rate_hz), s.conv_dim, m.filters, m.kernel);
                b.layers[0].pool = m.pool;
                b
            })
            .collect();
        let spec = ModelSpec {
            branches,
            hidden: m.hidden,
            classes: self.data.classes,
            fusion: FusionMode::FeatureFusion,
            alpha: false,
        };
        spec.validate()?;
        Ok(spec)
    }
}
