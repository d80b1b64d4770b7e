//! Bit-accurate integer inference.
//!
//! Conv layers step over output positions, accumulate in a checked register,
//! fold ReLU into requantization and fold max-pooling into the output
//! stream with a running comparator. Branch scheduling only changes the
//! cycle accounting, never the numbers.

mod cost;
mod resources;

pub use cost::{cycle_cost, model_cycles, schedule_latency, CostModel, CycleReport, LayerCost};
pub use resources::{estimate_resources, report_rows, table_csv, ResourceReport, TableRow};

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::fxp::{self, Accumulator, FxError, FxFormat};
use crate::netgraph::{argmax, ConvDim};
use crate::quantizer::{QConvWeights, QDenseWeights, QFrame, QMatrix, QuantizedModel, Requant};

#[derive(Debug, Error)]
pub enum EngineError {
    #[error(transparent)]
    Fx(#[from] FxError),
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("schedule needs at least one branch")]
    NoBranches,
    #[error("clock frequency must be positive, got {0}")]
    Clock(f64),
    #[error("unknown schedule '{0}' (expected serial or parallel)")]
    UnknownSchedule(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Schedule {
    Serial,
    Parallel,
}

impl Schedule {
    pub const ALL: [Schedule; 2] = [Schedule::Serial, Schedule::Parallel];
}

impl fmt::Display for Schedule {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Schedule::Serial => "serial",
            Schedule::Parallel => "parallel",
        })
    }
}

impl FromStr for Schedule {
    type Err = EngineError;
    fn from_str(s: &str) -> Result<Self, EngineError> {
        match s {
            "serial" => Ok(Schedule::Serial),
            "parallel" => Ok(Schedule::Parallel),
            _ => Err(EngineError::UnknownSchedule(s.into())),
        }
    }
}

/// Integer activation volume indexed `(time, space, channel)`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct IAct {
    pub t: usize,
    pub s: usize,
    pub c: usize,
    pub data: Vec<i64>,
}

impl IAct {
    #[inline]
    pub fn idx(&self, ti: usize, si: usize, ci: usize) -> usize {
        (ti * self.s + si) * self.c + ci
    }

    pub fn from_window(m: &QMatrix, dim: ConvDim) -> Self {
        let (s, c) = match dim {
            ConvDim::D1 => (1, m.cols),
            ConvDim::D2 => (m.cols, 1),
        };
        Self {
            t: m.rows,
            s,
            c,
            data: m.data.clone(),
        }
    }
}

/// Pooling folded into a conv layer's output stream.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct Pool {
    /// Non-overlapping temporal window; the trailing remainder is dropped.
    pub kernel: Option<usize>,
    /// Reduce the (pooled) map to one value per channel.
    pub global: bool,
}

/// Requantization and storage settings shared by a layer's lanes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct LaneConfig {
    pub requant: Requant,
    pub fmt: FxFormat,
    pub acc_bits: u32,
}

/// One stepped conv layer with ReLU and pooling folded in.
pub fn qconv_layer(input: &IAct, w: &QConvWeights, lane: LaneConfig, pool: Pool) -> Result<IAct, EngineError> {
    if input.c != w.cin || input.t < w.kt || input.s < w.ks {
        return Err(EngineError::Shape(format!(
            "conv {}x{}x{} over input {}x{}x{}",
            w.kt, w.ks, w.cin, input.t, input.s, input.c
        )));
    }
    let (ct, os) = (input.t - w.kt + 1, input.s - w.ks + 1);
    let p = pool.kernel.unwrap_or(1);
    if p == 0 || ct / p == 0 {
        return Err(EngineError::Shape(format!("pool {p} over {ct} positions")));
    }
    let ot = ct / p;
    let cout = w.cout;
    let (rt, rs) = if pool.global { (1, 1) } else { (ot, os) };
    let mut out = IAct {
        t: rt,
        s: rs,
        c: cout,
        data: vec![0; rt * rs * cout],
    };
    // Comparator registers start empty; the first value written wins.
    let mut seen = vec![false; out.data.len()];
    let mut lanes = vec![Accumulator::new(lane.acc_bits)?; cout];
    for t in 0..ot * p {
        for s in 0..os {
            lanes.iter_mut().for_each(|a| *a = Accumulator::new(lane.acc_bits).expect("validated width"));
            for a in 0..w.kt {
                for b in 0..w.ks {
                    let i0 = input.idx(t + a, s + b, 0);
                    for ci in 0..w.cin {
                        let x = input.data[i0 + ci];
                        let w0 = w.idx(a, b, ci, 0);
                        for (acc, &wv) in lanes.iter_mut().zip(&w.data[w0..w0 + cout]) {
                            *acc = fxp::mac(*acc, x, wv)?;
                        }
                    }
                }
            }
            let o0 = if pool.global { 0 } else { out.idx(t / p, s, 0) };
            for (co, acc) in lanes.iter().enumerate() {
                let v = fxp::requantize(*acc, lane.requant.mult, lane.requant.shift, lane.fmt, true);
                let slot = o0 + co;
                if !seen[slot] || v > out.data[slot] {
                    out.data[slot] = v;
                    seen[slot] = true;
                }
            }
        }
    }
    Ok(out)
}

fn dense_acc(input: &[i64], w: &QDenseWeights, acc_bits: u32) -> Result<Vec<Accumulator>, EngineError> {
    if input.len() != w.inputs {
        return Err(EngineError::Shape(format!(
            "dense expects {} inputs, got {}",
            w.inputs,
            input.len()
        )));
    }
    let mut acc = vec![Accumulator::new(acc_bits)?; w.outputs];
    for (i, &x) in input.iter().enumerate() {
        let row = &w.data[i * w.outputs..(i + 1) * w.outputs];
        for (a, &wv) in acc.iter_mut().zip(row) {
            *a = fxp::mac(*a, x, wv)?;
        }
    }
    Ok(acc)
}

/// Dense layer followed by requantization (and optional ReLU).
pub fn qdense_layer(input: &[i64], w: &QDenseWeights, lane: LaneConfig, relu: bool) -> Result<Vec<i64>, EngineError> {
    Ok(dense_acc(input, w, lane.acc_bits)?
        .into_iter()
        .map(|a| fxp::requantize(a, lane.requant.mult, lane.requant.shift, lane.fmt, relu))
        .collect())
}

/// Dense layer that exposes the raw accumulators, as used by the argmax head.
pub fn qdense_raw(input: &[i64], w: &QDenseWeights, acc_bits: u32) -> Result<Vec<i64>, EngineError> {
    Ok(dense_acc(input, w, acc_bits)?.iter().map(Accumulator::value).collect())
}

/// `sat(round(Σ m_i · f_i / 2^n))` elementwise.
pub fn qmix(features: &[Vec<i64>], mix: &[i64], n_bits: u32, fmt: FxFormat, acc_bits: u32) -> Result<Vec<i64>, EngineError> {
    if features.len() != mix.len() || features.is_empty() || features.iter().any(|f| f.len() != features[0].len()) {
        return Err(EngineError::Shape("mixing inputs disagree".into()));
    }
    (0..features[0].len())
        .map(|j| {
            let mut acc = Accumulator::new(acc_bits)?;
            for (f, &m) in features.iter().zip(mix) {
                acc = fxp::mac(acc, m, f[j])?;
            }
            Ok(fxp::saturate(fxp::shift_round(acc.value() as i128, n_bits), fmt))
        })
        .collect()
}

/// Every integer intermediate the head sees.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct QTrace {
    pub features: Vec<Vec<i64>>,
    pub dense_in: Vec<i64>,
    pub hidden: Vec<i64>,
    /// Raw dense2 accumulators.
    pub logits: Vec<i64>,
    pub class: usize,
}

/// Integer forward pass. Branch order is fixed, so the result does not
/// depend on the schedule.
pub fn qforward(qm: &QuantizedModel, frame: &QFrame) -> Result<QTrace, EngineError> {
    let spec = &qm.spec;
    if frame.inputs.len() != spec.branches.len() || qm.conv.len() != spec.branches.len() {
        return Err(EngineError::Shape(format!(
            "frame has {} inputs, model has {} branches",
            frame.inputs.len(),
            spec.branches.len()
        )));
    }
    let fmt = qm.storage();
    let mut features = Vec::with_capacity(spec.branches.len());
    for ((b, ws), m) in spec.branches.iter().zip(&qm.conv).zip(&frame.inputs) {
        if (m.rows, m.cols) != (b.timesteps, b.channels) || m.data.len() != m.rows * m.cols {
            return Err(EngineError::Shape(format!("branch '{}' input window", b.sensor)));
        }
        let mut x = IAct::from_window(m, b.conv_dim);
        let last = ws.len() - 1;
        for (l, (w, ls)) in ws.iter().zip(&b.layers).enumerate() {
            let lane = LaneConfig {
                requant: qm.conv_requant[l],
                fmt,
                acc_bits: qm.acc_bits,
            };
            let pool = Pool {
                kernel: ls.pool,
                global: l == last,
            };
            x = qconv_layer(&x, w, lane, pool)?;
        }
        features.push(x.data);
    }
    let dense_in = match &qm.mix {
        Some(m) => qmix(&features, m, qm.n_bits, fmt, qm.acc_bits)?,
        None => features.concat(),
    };
    let lane = LaneConfig {
        requant: qm.dense1_requant,
        fmt,
        acc_bits: qm.acc_bits,
    };
    let hidden = qdense_layer(&dense_in, &qm.dense1, lane, true)?;
    let logits = qdense_raw(&hidden, &qm.dense2, qm.acc_bits)?;
    let class = argmax(&logits);
    Ok(QTrace {
        features,
        dense_in,
        hidden,
        logits,
        class,
    })
}

/// Class index plus the analytic cycle report for `schedule` under the
/// default cost model.
pub fn qinfer(qm: &QuantizedModel, frame: &QFrame, schedule: Schedule) -> Result<(usize, CycleReport), EngineError> {
    qinfer_with(qm, frame, schedule, &CostModel::default())
}

pub fn qinfer_with(
    qm: &QuantizedModel,
    frame: &QFrame,
    schedule: Schedule,
    cost: &CostModel,
) -> Result<(usize, CycleReport), EngineError> {
    let tr = qforward(qm, frame)?;
    let report = model_cycles(&qm.spec, schedule, cost)?;
    Ok((tr.class, report))
}

#[cfg(test)]
mod tests;
