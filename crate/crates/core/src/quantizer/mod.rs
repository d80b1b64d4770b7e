//! Branch-aware symmetric post-training quantization.
//!
//! Every activation tensor is held as integers `q` standing for `q · S / 2^n`
//! where `n` is the magnitude precision and `S` a per-layer scale. Network
//! inputs use `S = 1`; conv layer `l` uses the rescale coefficient `R_l`
//! shared by all branches, so branch features meet the concatenation on a
//! common grid. Dense layers use plain max-abs scales.

mod model;

pub use model::{QConvWeights, QDenseWeights, QFrame, QMatrix, QuantizedModel, Requant, QMODEL_FORMAT, QMODEL_VERSION};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::engine::{qinfer, EngineError, Schedule};
use crate::fxp::{self, FxError, FxFormat, MAX_STORAGE_BITS};
use crate::netgraph::{forward_trace, ConvWeights, DenseWeights, Frame, GraphError, ModelParams, ModelSpec, CONV_LAYERS};
use crate::trainer::{accuracy, Sample};

/// Mantissa width of the requantization multiplier.
pub const REQUANT_MANTISSA_BITS: u32 = 15;

#[derive(Debug, Error)]
pub enum QuantError {
    #[error(transparent)]
    Graph(#[from] GraphError),
    #[error(transparent)]
    Fx(#[from] FxError),
    #[error(transparent)]
    Engine(#[from] EngineError),
    #[error("calibration set is empty")]
    EmptyCalibration,
    #[error("conv layer {layer} has rescale coefficient 0 (all weights and outputs are zero)")]
    DeadLayer { layer: usize },
    #[error("{which} has a zero scale")]
    DeadDense { which: &'static str },
    #[error("magnitude precision {0} out of range (allowed 2..={max})", max = MAX_STORAGE_BITS - 1)]
    Bits(u32),
    #[error("requantization factor {factor} for {layer} is not representable")]
    Factor { layer: String, factor: f64 },
    #[error("accumulator needs {required} bits, more than 64")]
    AccumulatorTooWide { required: u32 },
    #[error("FP accuracy on the test set is 0; ratio undefined")]
    ZeroAccuracy,
    #[error("test set is empty")]
    EmptyTestSet,
    #[error("calibration stats do not match the model ({0})")]
    Stats(String),
}

/// Maximum absolute weight and output observed for one layer.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct LayerStat {
    pub max_w: f64,
    pub max_o: f64,
}

impl LayerStat {
    fn merge(&mut self, other: LayerStat) {
        self.max_w = self.max_w.max(other.max_w);
        self.max_o = self.max_o.max(other.max_o);
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CalibStats {
    /// `[branch][layer]`.
    pub conv: Vec<Vec<LayerStat>>,
    pub dense1: LayerStat,
    pub dense2: LayerStat,
    pub samples: usize,
}

impl CalibStats {
    /// Commutative max-merge of two passes over disjoint calibration sets.
    pub fn merge(&mut self, other: &CalibStats) -> Result<(), QuantError> {
        if self.conv.len() != other.conv.len() || self.conv.iter().zip(&other.conv).any(|(a, b)| a.len() != b.len()) {
            return Err(QuantError::Stats("branch layout differs".into()));
        }
        for (a, b) in self.conv.iter_mut().zip(&other.conv) {
            for (x, y) in a.iter_mut().zip(b) {
                x.merge(*y);
            }
        }
        self.dense1.merge(other.dense1);
        self.dense2.merge(other.dense2);
        self.samples += other.samples;
        Ok(())
    }
}

fn max_abs(v: &[f64]) -> f64 {
    v.iter().fold(0.0, |m, x| m.max(x.abs()))
}

/// Record per-layer weight and output magnitudes over `frames`.
///
/// Outputs are taken after ReLU and pooling, i.e. the values the next layer
/// actually consumes.
pub fn calibrate<'a>(
    spec: &ModelSpec,
    params: &ModelParams,
    frames: impl IntoIterator<Item = &'a Frame>,
) -> Result<CalibStats, QuantError> {
    params.check(spec)?;
    let mut stats = CalibStats {
        conv: params
            .branches
            .iter()
            .map(|ws| {
                ws.iter()
                    .map(|w| LayerStat {
                        max_w: max_abs(&w.data),
                        max_o: 0.0,
                    })
                    .collect()
            })
            .collect(),
        dense1: LayerStat {
            max_w: max_abs(&params.dense1.data),
            max_o: 0.0,
        },
        dense2: LayerStat {
            max_w: max_abs(&params.dense2.data),
            max_o: 0.0,
        },
        samples: 0,
    };
    for frame in frames {
        let tr = forward_trace(spec, params, frame)?;
        for (st, bt) in stats.conv.iter_mut().zip(&tr.branches) {
            for (ls, lt) in st.iter_mut().zip(&bt.layers) {
                ls.max_o = ls.max_o.max(max_abs(&lt.post.data));
            }
        }
        stats.dense1.max_o = stats.dense1.max_o.max(max_abs(&tr.hidden));
        stats.dense2.max_o = stats.dense2.max_o.max(max_abs(&tr.logits));
        stats.samples += 1;
    }
    if stats.samples == 0 {
        return Err(QuantError::EmptyCalibration);
    }
    Ok(stats)
}

/// `R_l = max_i max(|W_{l,i}|, |O_{l,i}|)` for zero-based conv layer `layer`.
pub fn compute_rescale(stats: &CalibStats, layer: usize) -> Result<f64, QuantError> {
    let mut r: f64 = 0.0;
    for branch in &stats.conv {
        let st = branch
            .get(layer)
            .ok_or_else(|| QuantError::Stats(format!("no conv layer {layer}")))?;
        r = r.max(st.max_w).max(st.max_o);
    }
    if r > 0.0 {
        Ok(r)
    } else {
        Err(QuantError::DeadLayer { layer })
    }
}

/// `sat(round(w / r · 2^n))` into `n + 1` signed bits.
pub fn quantize_weight(w: f64, r: f64, n_bits: u32) -> Result<i64, QuantError> {
    let fmt = storage_format(n_bits)?;
    let v = fxp::round_nearest(w / r * (1u64 << n_bits) as f64)?;
    Ok(fxp::saturate(v as i128, fmt))
}

/// Signed storage for `n_bits` magnitude bits.
pub fn storage_format(n_bits: u32) -> Result<FxFormat, QuantError> {
    if n_bits < 2 {
        return Err(QuantError::Bits(n_bits));
    }
    FxFormat::signed_magnitude(n_bits).map_err(|_| QuantError::Bits(n_bits))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct QuantConfig {
    /// Magnitude bits `n`; storage is `n + 1` bits.
    pub n_bits: u32,
    /// Accumulator width override. When absent the width is derived from
    /// the worst-case fan-in so that no MAC stream can overflow.
    pub acc_bits: Option<u32>,
}

impl QuantConfig {
    pub fn bits(n_bits: u32) -> Self {
        Self { n_bits, acc_bits: None }
    }
}

fn quantize_conv(w: &ConvWeights, r: f64, n: u32) -> Result<QConvWeights, QuantError> {
    let data = w
        .data
        .iter()
        .map(|&v| quantize_weight(v, r, n))
        .collect::<Result<_, _>>()?;
    Ok(QConvWeights {
        kt: w.kt,
        ks: w.ks,
        cin: w.cin,
        cout: w.cout,
        data,
    })
}

fn quantize_dense(w: &DenseWeights, s: f64, n: u32) -> Result<QDenseWeights, QuantError> {
    let data = w
        .data
        .iter()
        .map(|&v| quantize_weight(v, s, n))
        .collect::<Result<_, _>>()?;
    Ok(QDenseWeights {
        inputs: w.inputs,
        outputs: w.outputs,
        data,
    })
}

fn requant(layer: String, factor: f64) -> Result<Requant, QuantError> {
    fxp::factor_to_mult_shift(factor, REQUANT_MANTISSA_BITS)
        .map(|(mult, shift)| Requant { mult, shift })
        .ok_or(QuantError::Factor { layer, factor })
}

fn bits_for(terms: usize) -> u32 {
    usize::BITS - terms.max(1).saturating_sub(1).leading_zeros()
}

/// Accumulator width that holds any sum of `fan_in` products of two
/// `n`-bit-magnitude operands.
pub fn required_acc_bits(n_bits: u32, fan_in: usize) -> u32 {
    2 * n_bits + bits_for(fan_in) + 1
}

/// Build the integer model from FP parameters and calibration stats.
pub fn quantize(
    spec: &ModelSpec,
    params: &ModelParams,
    stats: &CalibStats,
    cfg: &QuantConfig,
) -> Result<QuantizedModel, QuantError> {
    spec.validate()?;
    params.check(spec)?;
    let n = cfg.n_bits;
    storage_format(n)?;
    if stats.conv.len() != spec.branches.len() {
        return Err(QuantError::Stats(format!(
            "{} branches in stats, {} in model",
            stats.conv.len(),
            spec.branches.len()
        )));
    }
    let rescale = (0..CONV_LAYERS)
        .map(|l| compute_rescale(stats, l))
        .collect::<Result<Vec<_>, _>>()?;
    let two_n = (1u64 << n) as f64;

    let conv = params
        .branches
        .iter()
        .map(|ws| {
            ws.iter()
                .zip(&rescale)
                .map(|(w, &r)| quantize_conv(w, r, n))
                .collect::<Result<Vec<_>, _>>()
        })
        .collect::<Result<Vec<_>, _>>()?;
    let conv_requant = (0..CONV_LAYERS)
        .map(|l| {
            let s_in = if l == 0 { 1.0 } else { rescale[l - 1] };
            requant(format!("conv{}", l + 1), s_in / two_n)
        })
        .collect::<Result<Vec<_>, _>>()?;

    let (s_w1, s_o1, s_w2) = (stats.dense1.max_w, stats.dense1.max_o, stats.dense2.max_w);
    if s_w1 <= 0.0 {
        return Err(QuantError::DeadDense { which: "dense1 weights" });
    }
    if s_o1 <= 0.0 {
        return Err(QuantError::DeadDense { which: "dense1 output" });
    }
    if s_w2 <= 0.0 {
        return Err(QuantError::DeadDense { which: "dense2 weights" });
    }
    let dense1 = quantize_dense(&params.dense1, s_w1, n)?;
    let dense2 = quantize_dense(&params.dense2, s_w2, n)?;
    let r_last = rescale[CONV_LAYERS - 1];
    let dense1_requant = requant("dense1".into(), s_w1 * r_last / (s_o1 * two_n))?;

    let mix = match (&params.alpha, spec.alpha) {
        (Some(alpha), true) => Some(
            crate::netgraph::softmax(alpha)
                .iter()
                .map(|&p| fxp::round_nearest(p * two_n))
                .collect::<Result<Vec<_>, _>>()?,
        ),
        _ => None,
    };

    let mut fan_in = vec![spec.hidden, spec.dense_input(), spec.branches.len()];
    for b in &spec.branches {
        for g in b.geometry()? {
            fan_in.push(g.taps() * g.in_c);
        }
    }
    let required = required_acc_bits(n, fan_in.into_iter().max().unwrap_or(1));
    let acc_bits = match cfg.acc_bits {
        Some(w) => w,
        None if required <= 64 => required,
        None => return Err(QuantError::AccumulatorTooWide { required }),
    };
    fxp::Accumulator::new(acc_bits)?;

    Ok(QuantizedModel {
        format: QMODEL_FORMAT.into(),
        version: QMODEL_VERSION,
        spec: spec.clone(),
        n_bits: n,
        acc_bits,
        rescale,
        dense_scales: [s_w1, s_o1, s_w2],
        conv,
        conv_requant,
        dense1,
        dense1_requant,
        dense2,
        mix,
        norm: Vec::new(),
        provenance: serde_json::Value::Null,
    })
}

fn check_test_set(test_set: &[Sample]) -> Result<(), QuantError> {
    if test_set.is_empty() {
        Err(QuantError::EmptyTestSet)
    } else {
        Ok(())
    }
}

/// Argmax accuracy of the integer engine on `samples`.
pub fn quantized_accuracy(qmodel: &QuantizedModel, samples: &[Sample]) -> Result<f64, QuantError> {
    check_test_set(samples)?;
    let mut hits = 0usize;
    for s in samples {
        let qf = qmodel.quantize_frame(&s.frame)?;
        let (class, _) = qinfer(qmodel, &qf, Schedule::Serial)?;
        hits += usize::from(class == s.label);
    }
    Ok(hits as f64 / samples.len() as f64)
}

/// Quantized accuracy divided by FP accuracy on `test_set`.
pub fn quantized_accuracy_ratio(
    spec: &ModelSpec,
    params: &ModelParams,
    qmodel: &QuantizedModel,
    test_set: &[Sample],
) -> Result<f64, QuantError> {
    check_test_set(test_set)?;
    let fp = accuracy(spec, params, test_set)?;
    if fp == 0.0 {
        return Err(QuantError::ZeroAccuracy);
    }
    Ok(quantized_accuracy(qmodel, test_set)? / fp)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepPoint {
    pub n_bits: u32,
    pub fp_accuracy: f64,
    pub q_accuracy: f64,
    pub ratio: f64,
}

/// Accuracy ratio at each precision in `n_range`, from one shared
/// calibration pass over `calib`.
pub fn sweep_bits(
    spec: &ModelSpec,
    params: &ModelParams,
    calib: &[Sample],
    test_set: &[Sample],
    n_range: &[u32],
) -> Result<Vec<SweepPoint>, QuantError> {
    if n_range.is_empty() {
        return Err(QuantError::Bits(0));
    }
    check_test_set(test_set)?;
    let stats = calibrate(spec, params, calib.iter().map(|s| &s.frame))?;
    let fp = accuracy(spec, params, test_set)?;
    if fp == 0.0 {
        return Err(QuantError::ZeroAccuracy);
    }
    n_range
        .iter()
        .map(|&n| {
            let qm = quantize(spec, params, &stats, &QuantConfig::bits(n))?;
            let q = quantized_accuracy(&qm, test_set)?;
            Ok(SweepPoint {
                n_bits: n,
                fp_accuracy: fp,
                q_accuracy: q,
                ratio: q / fp,
            })
        })
        .collect()
}

/// CSV rendering of a sweep curve.
pub fn sweep_csv(points: &[SweepPoint]) -> String {
    let mut s = String::from("n_bits,fp_accuracy,q_accuracy,ratio\n");
    for p in points {
        s.push_str(&format!("{},{},{},{}\n", p.n_bits, p.fp_accuracy, p.q_accuracy, p.ratio));
    }
    s
}
