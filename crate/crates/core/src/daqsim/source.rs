use rand::Rng;
use rand_chacha::ChaCha8Rng;

use super::{DaqError, SampleStream, SensorSpec};
use crate::rng::{indexed_substream, Stream};

/// Produces the value vector of sample `k`, taken at virtual time `t_ns`.
pub trait SignalSource {
    fn sample(&mut self, k: u64, t_ns: u64, out: &mut [f64]);
}

impl<F: FnMut(u64, u64, &mut [f64])> SignalSource for F {
    fn sample(&mut self, k: u64, t_ns: u64, out: &mut [f64]) {
        self(k, t_ns, out)
    }
}

/// Same vector at every sample.
#[derive(Debug, Clone)]
pub struct Constant(pub Vec<f64>);

impl SignalSource for Constant {
    fn sample(&mut self, _: u64, _: u64, out: &mut [f64]) {
        out.copy_from_slice(&self.0);
    }
}

/// Plays back a recorded stream sample by sample; past the end it holds the
/// last value.
#[derive(Debug, Clone)]
pub struct Replay {
    stream: SampleStream,
}

impl Replay {
    pub fn new(stream: SampleStream) -> Result<Self, DaqError> {
        if stream.is_empty() {
            return Err(DaqError::Sensor("cannot replay an empty stream".into()));
        }
        Ok(Self { stream })
    }
}

impl SignalSource for Replay {
    fn sample(&mut self, k: u64, _: u64, out: &mut [f64]) {
        let i = (k as usize).min(self.stream.len() - 1);
        out.copy_from_slice(self.stream.row(i));
    }
}

/// Sample timing of one sensor.
///
/// Without jitter sample `k` lands exactly on `round(k · 1e9 / rate)`. With
/// jitter each interval is scaled by `1 + ε · ppm · 1e-6`, `ε ~ U[-1, 1]`,
/// drawn from the seed's jitter substream for this sensor.
#[derive(Debug, Clone)]
pub struct SampleClock {
    rate_hz: f64,
    jitter_ppm: f64,
    k: u64,
    t: f64,
    rng: ChaCha8Rng,
}

impl SampleClock {
    pub fn new(rate_hz: f64, jitter_ppm: f64, seed: u64, sensor_index: u64) -> Result<Self, DaqError> {
        if !(jitter_ppm.is_finite() && jitter_ppm >= 0.0) {
            return Err(DaqError::Sensor(format!("jitter {jitter_ppm} ppm")));
        }
        if !(rate_hz.is_finite() && rate_hz > 0.0) {
            return Err(DaqError::Sensor(format!("rate {rate_hz} Hz")));
        }
        Ok(Self {
            rate_hz,
            jitter_ppm,
            k: 0,
            t: 0.0,
            rng: indexed_substream(seed, Stream::Jitter, sensor_index),
        })
    }

    /// Index and time of the next sample.
    pub fn peek(&self) -> (u64, u64) {
        let t = if self.jitter_ppm == 0.0 {
            (self.k as f64 * 1e9 / self.rate_hz).round()
        } else {
            self.t.round()
        };
        (self.k, t as u64)
    }

    pub fn advance(&mut self) {
        self.k += 1;
        if self.jitter_ppm > 0.0 {
            let eps: f64 = self.rng.random_range(-1.0..=1.0);
            self.t += 1e9 / self.rate_hz * (1.0 + eps * self.jitter_ppm * 1e-6);
        }
    }
}

/// A sensor plus the generator behind it.
pub struct SourceConfig {
    pub spec: SensorSpec,
    pub jitter_ppm: f64,
    pub signal: Box<dyn SignalSource>,
}

impl SourceConfig {
    pub fn new(spec: SensorSpec, signal: impl SignalSource + 'static) -> Self {
        Self {
            spec,
            jitter_ppm: 0.0,
            signal: Box::new(signal),
        }
    }

    /// Same source with perturbed sample intervals.
    pub fn with_jitter(mut self, ppm: f64) -> Self {
        self.jitter_ppm = ppm;
        self
    }
}

impl std::fmt::Debug for SourceConfig {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("SourceConfig")
            .field("spec", &self.spec)
            .field("jitter_ppm", &self.jitter_ppm)
            .finish_non_exhaustive()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn count_before(mut c: SampleClock, end: u64) -> u64 {
        let mut n = 0;
        while c.peek().1 < end {
            n += 1;
            c.advance();
        }
        n
    }

    #[test]
    fn zero_jitter_hits_the_nominal_grid() {
        let mut c = SampleClock::new(119.0, 0.0, 1, 0).unwrap();
        for k in 0..500u64 {
            assert_eq!(c.peek(), (k, (k as f64 * 1e9 / 119.0).round() as u64));
            c.advance();
        }
        assert_eq!(count_before(SampleClock::new(119.0, 0.0, 1, 0).unwrap(), 60_000_000_000), 7140);
    }

    #[test]
    fn jittered_count_stays_within_one() {
        for seed in 0..5 {
            let n = count_before(SampleClock::new(119.0, 100.0, seed, 4).unwrap(), 60_000_000_000);
            assert!(n.abs_diff(7140) <= 1, "{n}");
        }
    }

    #[test]
    fn jittered_intervals_stay_in_band() {
        let mut c = SampleClock::new(50.0, 100.0, 3, 1).unwrap();
        let mut last = c.peek().1;
        for _ in 0..1000 {
            c.advance();
            let t = c.peek().1;
            let d = (t - last) as f64;
            assert!((d - 2e7).abs() <= 2e7 * 100e-6 + 1.0, "{d}");
            last = t;
        }
        assert!(SampleClock::new(50.0, -1.0, 0, 0).is_err());
    }
}
