use serde::{Deserialize, Serialize};

use super::DaqError;
use crate::netgraph::ConvDim;

/// One sensor stream: channel count, native rate and raw value range.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SensorSpec {
    pub name: String,
    pub channels: usize,
    pub rate_hz: f64,
    pub conv_dim: ConvDim,
    pub min: f64,
    pub max: f64,
}

impl SensorSpec {
    pub fn new(name: &str, channels: usize, rate_hz: f64, conv_dim: ConvDim, min: f64, max: f64) -> Self {
        Self {
            name: name.into(),
            channels,
            rate_hz,
            conv_dim,
            min,
            max,
        }
    }

    pub fn validate(&self) -> Result<(), DaqError> {
        if self.channels == 0 {
            return Err(DaqError::Sensor(format!("'{}' has no channels", self.name)));
        }
        if !(self.rate_hz.is_finite() && self.rate_hz > 0.0) {
            return Err(DaqError::Sensor(format!("'{}' has rate {} Hz", self.name, self.rate_hz)));
        }
        if !(self.max > self.min) {
            return Err(DaqError::Sensor(format!("'{}' has an empty value range", self.name)));
        }
        Ok(())
    }

    /// Nominal sample period in nanoseconds.
    pub fn period_ns(&self) -> f64 {
        1e9 / self.rate_hz
    }

    /// File-name friendly form of the sensor name.
    pub fn slug(&self) -> String {
        let s: String = self
            .name
            .chars()
            .map(|c| if c.is_ascii_alphanumeric() { c.to_ascii_lowercase() } else { '_' })
            .collect();
        s.trim_matches('_').to_string()
    }
}

/// The six physical sensors of the reference DAQ board. The IMU is a single
/// 9-channel device at its accelerometer/gyro rate.
pub fn physical_sensors() -> Vec<SensorSpec> {
    use ConvDim::*;
    vec![
        SensorSpec::new("Optical Spectrum", 10, 20.0, D1, 0.0, 65535.0),
        SensorSpec::new("Gas", 2, 4.0, D1, 0.0, 8192.0),
        SensorSpec::new("Thermal IR", 768, 32.0, D2, -40.0, 300.0),
        SensorSpec::new("Barometric", 1, 75.0, D1, 260.0, 1260.0),
        SensorSpec::new("IMU", 9, 119.0, D1, -2000.0, 2000.0),
        SensorSpec::new("ToF", 1, 50.0, D1, 0.0, 2000.0),
    ]
}

/// The seven modalities used as network branches: the IMU splits into
/// motion (accelerometer and gyroscope) and the slower magnetometer.
pub fn modalities() -> Vec<SensorSpec> {
    use ConvDim::*;
    vec![
        SensorSpec::new("Optical Spectrum", 10, 20.0, D1, 0.0, 65535.0),
        SensorSpec::new("Gas", 2, 4.0, D1, 0.0, 8192.0),
        SensorSpec::new("Thermal IR", 768, 32.0, D2, -40.0, 300.0),
        SensorSpec::new("Barometric", 1, 75.0, D1, 260.0, 1260.0),
        SensorSpec::new("Motion", 6, 119.0, D1, -2000.0, 2000.0),
        SensorSpec::new("Magnetic", 3, 20.0, D1, -400.0, 400.0),
        SensorSpec::new("ToF", 1, 50.0, D1, 0.0, 2000.0),
    ]
}
