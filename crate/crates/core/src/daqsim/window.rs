use serde::{Deserialize, Serialize};

use super::stream::{interp_hold, Interp};
use super::{DaqError, SensorSpec};
use crate::netgraph::Matrix;

/// How per-sensor windows are laid out in time.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "kebab-case")]
pub enum Align {
    /// Every sensor keeps its own rate; rows = `round(window × rate)`.
    Native,
    /// Every sensor is resampled onto a shared grid.
    Common { rate_hz: f64, method: Interp },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WindowConfig {
    pub window_ns: u64,
    pub step_ns: u64,
    pub align: Align,
    /// FIFO depth as a multiple of the sensor's window rows.
    #[serde(default = "default_slack")]
    pub fifo_slack: f64,
}

fn default_slack() -> f64 {
    2.0
}

/// `round(count · 1e9 / rate)` nanoseconds.
pub fn span_ns(count: usize, rate_hz: f64) -> u64 {
    (count as f64 * 1e9 / rate_hz).round() as u64
}

impl WindowConfig {
    /// Window long enough for `timesteps` samples at `rate_hz`, tumbling.
    pub fn from_timesteps(timesteps: usize, rate_hz: f64) -> Self {
        let w = span_ns(timesteps, rate_hz);
        Self {
            window_ns: w,
            step_ns: w,
            align: Align::Native,
            fifo_slack: default_slack(),
        }
    }

    /// Rows a sensor at `rate_hz` contributes to each frame.
    pub fn rows_for(&self, rate_hz: f64) -> usize {
        let r = match self.align {
            Align::Native => rate_hz,
            Align::Common { rate_hz, .. } => rate_hz,
        };
        (self.window_ns as f64 * r / 1e9).round() as usize
    }

    /// Native-rate samples a sensor produces per window.
    pub fn native_rows(&self, rate_hz: f64) -> usize {
        (self.window_ns as f64 * rate_hz / 1e9).round() as usize
    }

    pub fn fifo_depth(&self, rate_hz: f64) -> usize {
        ((self.native_rows(rate_hz) as f64 * self.fifo_slack).ceil() as usize).max(1)
    }

    pub fn validate(&self, sensors: &[SensorSpec]) -> Result<(), DaqError> {
        if self.window_ns == 0 || self.step_ns == 0 {
            return Err(DaqError::Window("window and step must be positive".into()));
        }
        if self.step_ns > self.window_ns {
            return Err(DaqError::Window(format!(
                "step {} ns exceeds window {} ns",
                self.step_ns, self.window_ns
            )));
        }
        if !(self.fifo_slack.is_finite() && self.fifo_slack > 0.0) {
            return Err(DaqError::Window(format!("fifo slack {}", self.fifo_slack)));
        }
        if let Align::Common { rate_hz, .. } = self.align {
            if !(rate_hz.is_finite() && rate_hz > 0.0) {
                return Err(DaqError::Window(format!("common rate {rate_hz} Hz")));
            }
        }
        for s in sensors {
            s.validate()?;
            if self.rows_for(s.rate_hz) == 0 {
                return Err(DaqError::Window(format!(
                    "window of {} ns holds no samples of '{}'",
                    self.window_ns, s.name
                )));
            }
        }
        Ok(())
    }

    /// Latency from the synchronized start to the first complete frame.
    pub fn first_frame_ns(&self) -> u64 {
        self.window_ns
    }

    /// Window rows per sensor, in sensor order.
    pub fn shapes(&self, sensors: &[SensorSpec]) -> Vec<(usize, usize)> {
        sensors.iter().map(|s| (self.rows_for(s.rate_hz), s.channels)).collect()
    }
}

/// One sensor's slice of a frame.
#[derive(Debug, Clone, PartialEq)]
pub struct AssembledWindow {
    pub data: Matrix,
    /// Source time of each row (grid time in common-rate mode).
    pub row_times: Vec<u64>,
    /// Rows filled by holding the last sample.
    pub missing: usize,
}

/// Build one sensor's window over `[start, end)` from samples sorted by
/// time. `prev` is the latest sample before `start`, if any, used when the
/// window holds no sample at all.
pub(crate) fn assemble(
    ts: &[u64],
    vals: &[f64],
    ch: usize,
    prev: Option<(u64, &[f64])>,
    start: u64,
    end: u64,
    cfg: &WindowConfig,
    rate_hz: f64,
) -> AssembledWindow {
    let rows = cfg.rows_for(rate_hz);
    let lo = ts.partition_point(|&t| t < start);
    let hi = ts.partition_point(|&t| t < end).max(lo);
    let (ts, vals) = (&ts[lo..hi], &vals[lo * ch..hi * ch]);
    let mut data = Matrix::zeros(rows, ch);
    let mut row_times = Vec::with_capacity(rows);
    if ts.is_empty() {
        let (t, v) = prev.unwrap_or((start, &[]));
        for r in 0..rows {
            if !v.is_empty() {
                data.data_mut()[r * ch..(r + 1) * ch].copy_from_slice(v);
            }
            row_times.push(t);
        }
        return AssembledWindow {
            data,
            row_times,
            missing: rows,
        };
    }
    match cfg.align {
        Align::Native => {
            let n = ts.len();
            let skip = n.saturating_sub(rows);
            let take = n - skip;
            for r in 0..rows {
                let i = skip + r.min(take - 1);
                data.data_mut()[r * ch..(r + 1) * ch].copy_from_slice(&vals[i * ch..(i + 1) * ch]);
                row_times.push(ts[i]);
            }
            AssembledWindow {
                data,
                row_times,
                missing: rows.saturating_sub(take),
            }
        }
        Align::Common { rate_hz: target, method } => {
            for r in 0..rows {
                let t = start + span_ns(r, target);
                interp_hold(ts, vals, ch, t, method, &mut data.data_mut()[r * ch..(r + 1) * ch]);
                row_times.push(t);
            }
            AssembledWindow {
                data,
                row_times,
                missing: 0,
            }
        }
    }
}
