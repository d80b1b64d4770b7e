use serde::{Deserialize, Serialize};

use super::DaqError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Interp {
    Nearest,
    Linear,
}

/// Timestamped multichannel samples, values stored row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct SampleStream {
    pub channels: usize,
    pub timestamps: Vec<u64>,
    pub values: Vec<f64>,
}

impl SampleStream {
    pub fn new(channels: usize) -> Self {
        Self {
            channels,
            timestamps: Vec::new(),
            values: Vec::new(),
        }
    }

    pub fn push(&mut self, t: u64, v: &[f64]) {
        debug_assert_eq!(v.len(), self.channels);
        self.timestamps.push(t);
        self.values.extend_from_slice(v);
    }

    pub fn len(&self) -> usize {
        self.timestamps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.timestamps.is_empty()
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.values[i * self.channels..(i + 1) * self.channels]
    }

    /// Index range of samples with `start <= t < end`.
    pub fn range(&self, start: u64, end: u64) -> std::ops::Range<usize> {
        let lo = self.timestamps.partition_point(|&t| t < start);
        let hi = self.timestamps.partition_point(|&t| t < end);
        lo..hi.max(lo)
    }
}

/// Value of one channel vector at time `t` from sorted samples `ts`/`vals`.
/// Times outside the samples' span take the edge value.
pub(crate) fn interp_hold(ts: &[u64], vals: &[f64], ch: usize, t: u64, method: Interp, out: &mut [f64]) {
    let n = ts.len();
    debug_assert!(n > 0);
    let hi = ts.partition_point(|&x| x <= t);
    if hi == 0 {
        out.copy_from_slice(&vals[..ch]);
        return;
    }
    if hi == n {
        out.copy_from_slice(&vals[(n - 1) * ch..n * ch]);
        return;
    }
    let (i, j) = (hi - 1, hi);
    let (ta, tb) = (ts[i], ts[j]);
    let (a, b) = (&vals[i * ch..(i + 1) * ch], &vals[j * ch..(j + 1) * ch]);
    match method {
        Interp::Nearest => {
            // ties go to the earlier sample
            let src = if t - ta <= tb - t { a } else { b };
            out.copy_from_slice(src);
        }
        Interp::Linear => {
            let w = (t - ta) as f64 / (tb - ta) as f64;
            for ((o, &x), &y) in out.iter_mut().zip(a).zip(b) {
                *o = x + (y - x) * w;
            }
        }
    }
}

/// Evaluate `stream` at arbitrary `times`; every time must lie inside the
/// stream's span.
pub fn resample_at(stream: &SampleStream, times: &[u64], method: Interp) -> Result<SampleStream, DaqError> {
    let (first, last) = match (stream.timestamps.first(), stream.timestamps.last()) {
        (Some(&a), Some(&b)) => (a, b),
        _ => return Err(DaqError::Resample("empty stream".into())),
    };
    let mut out = SampleStream::new(stream.channels);
    let mut row = vec![0.0; stream.channels];
    for &t in times {
        if t < first || t > last {
            return Err(DaqError::Extrapolation { t, first, last });
        }
        interp_hold(&stream.timestamps, &stream.values, stream.channels, t, method, &mut row);
        out.push(t, &row);
    }
    Ok(out)
}

/// Resample onto the uniform grid `first + round(j · 1e9 / target_hz)`
/// covering the stream's span.
pub fn resample(stream: &SampleStream, target_hz: f64, method: Interp) -> Result<SampleStream, DaqError> {
    if !(target_hz.is_finite() && target_hz > 0.0) {
        return Err(DaqError::Resample(format!("target rate {target_hz} Hz")));
    }
    let (first, last) = match (stream.timestamps.first(), stream.timestamps.last()) {
        (Some(&a), Some(&b)) => (a, b),
        _ => return Err(DaqError::Resample("empty stream".into())),
    };
    let mut grid = Vec::new();
    for j in 0u64.. {
        let t = first + (j as f64 * 1e9 / target_hz).round() as u64;
        if t > last {
            break;
        }
        grid.push(t);
    }
    resample_at(stream, &grid, method)
}
