use serde::{Deserialize, Serialize};

use super::{storage_format, QuantError};
use crate::fxp;
use crate::netgraph::{Frame, GraphError, ModelSpec, NormStats, CONV_LAYERS};
use crate::schema::{self, SchemaError, Versioned};

pub const QMODEL_FORMAT: &str = "har-qmodel";
pub const QMODEL_VERSION: u32 = 1;

/// Requantization stage: `round(acc · mult / 2^shift)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Requant {
    pub mult: i64,
    pub shift: u32,
}

/// Integer conv kernel, `[kt][ks][cin][cout]` flattened.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct QConvWeights {
    pub kt: usize,
    pub ks: usize,
    pub cin: usize,
    pub cout: usize,
    pub data: Vec<i64>,
}

impl QConvWeights {
    #[inline]
    pub fn idx(&self, a: usize, b: usize, ci: usize, co: usize) -> usize {
        ((a * self.ks + b) * self.cin + ci) * self.cout + co
    }
}

/// Integer dense weights, `[in][out]` flattened.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct QDenseWeights {
    pub inputs: usize,
    pub outputs: usize,
    pub data: Vec<i64>,
}

/// Row-major integer window (rows are timesteps).
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct QMatrix {
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<i64>,
}

/// A quantized network input.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct QFrame {
    pub inputs: Vec<QMatrix>,
}

mod decimal {
    //! Scales are written as decimal strings. Rust's shortest round-trip
    //! formatting makes parse(format(x)) == x for every finite f64.
    use serde::{de::Error, Deserialize, Deserializer, Serializer};

    fn write<S: Serializer>(v: &[f64], s: S) -> Result<S::Ok, S::Error> {
        s.collect_seq(v.iter().map(|x| x.to_string()))
    }

    fn read<'de, D: Deserializer<'de>>(d: D) -> Result<Vec<f64>, D::Error> {
        Vec::<String>::deserialize(d)?
            .iter()
            .map(|t| match t.parse::<f64>() {
                Ok(v) if v.is_finite() && v > 0.0 => Ok(v),
                _ => Err(D::Error::custom(format!("scale must be a positive decimal, got '{t}'"))),
            })
            .collect()
    }

    pub mod vec {
        use super::*;

        pub fn serialize<S: Serializer>(v: &[f64], s: S) -> Result<S::Ok, S::Error> {
            write(v, s)
        }

        pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Vec<f64>, D::Error> {
            read(d)
        }
    }

    pub mod array3 {
        use super::*;

        pub fn serialize<S: Serializer>(v: &[f64; 3], s: S) -> Result<S::Ok, S::Error> {
            write(v, s)
        }

        pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<[f64; 3], D::Error> {
            read(d)?
                .try_into()
                .map_err(|v: Vec<f64>| D::Error::custom(format!("expected 3 scales, got {}", v.len())))
        }
    }
}

/// Integer network ready for the engine.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QuantizedModel {
    pub format: String,
    pub version: u32,
    pub spec: ModelSpec,
    /// Magnitude bits; storage is `n_bits + 1` signed bits.
    pub n_bits: u32,
    pub acc_bits: u32,
    /// `R_l` per conv layer.
    #[serde(with = "decimal::vec")]
    pub rescale: Vec<f64>,
    /// Max-abs scales of dense1 weights, dense1 output, dense2 weights.
    #[serde(with = "decimal::array3")]
    pub dense_scales: [f64; 3],
    /// `[branch][layer]`.
    pub conv: Vec<Vec<QConvWeights>>,
    /// Shared by all branches, one per conv layer.
    pub conv_requant: Vec<Requant>,
    pub dense1: QDenseWeights,
    pub dense1_requant: Requant,
    pub dense2: QDenseWeights,
    /// `round(softmax(α) · 2^n)` when importance mixing is enabled.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mix: Option<Vec<i64>>,
    #[serde(default)]
    pub norm: Vec<NormStats>,
    #[serde(default)]
    pub provenance: serde_json::Value,
}

impl Versioned for QuantizedModel {
    const FORMAT: &'static str = QMODEL_FORMAT;
    const VERSION: u32 = QMODEL_VERSION;
}

impl QuantizedModel {
    pub fn storage(&self) -> fxp::FxFormat {
        storage_format(self.n_bits).expect("validated precision")
    }

    /// Structural check: shapes agree with the model spec and every stored
    /// integer fits the storage format.
    pub fn check(&self) -> Result<(), QuantError> {
        self.spec.validate()?;
        let fmt = storage_format(self.n_bits)?;
        fxp::Accumulator::new(self.acc_bits)?;
        let bad = |m: String| QuantError::Graph(GraphError::Shape(m));
        if self.rescale.len() != CONV_LAYERS || self.conv_requant.len() != CONV_LAYERS {
            return Err(bad(format!("expected {CONV_LAYERS} rescale coefficients")));
        }
        if self.conv.len() != self.spec.branches.len() {
            return Err(bad("branch count disagrees with spec".into()));
        }
        for (b, ws) in self.spec.branches.iter().zip(&self.conv) {
            let geo = b.geometry()?;
            if ws.len() != geo.len() {
                return Err(bad(format!("branch '{}' layer count", b.sensor)));
            }
            for (g, w) in geo.iter().zip(ws) {
                if [w.kt, w.ks, w.cin, w.cout] != [g.kt, g.ks, g.in_c, g.filters] || w.data.len() != w.kt * w.ks * w.cin * w.cout {
                    return Err(bad(format!("branch '{}' kernel shape", b.sensor)));
                }
            }
        }
        let d_in = self.spec.dense_input();
        let d1 = &self.dense1;
        let d2 = &self.dense2;
        if (d1.inputs, d1.outputs) != (d_in, self.spec.hidden)
            || d1.data.len() != d1.inputs * d1.outputs
            || (d2.inputs, d2.outputs) != (self.spec.hidden, self.spec.classes)
            || d2.data.len() != d2.inputs * d2.outputs
        {
            return Err(bad("dense shape".into()));
        }
        match (&self.mix, self.spec.alpha) {
            (Some(m), true) if m.len() == self.spec.branches.len() => {}
            (None, false) => {}
            _ => return Err(bad("mixing weights disagree with spec".into())),
        }
        let all = self
            .conv
            .iter()
            .flatten()
            .flat_map(|w| &w.data)
            .chain(&self.dense1.data)
            .chain(&self.dense2.data);
        if let Some(v) = all.into_iter().find(|&&v| !fmt.contains(v)) {
            return Err(bad(format!("weight {v} exceeds {} storage bits", fmt.n_bits())));
        }
        Ok(())
    }

    pub fn to_json(&self) -> Result<String, SchemaError> {
        schema::to_json(self)
    }

    pub fn from_json(text: &str) -> Result<Self, SchemaError> {
        let m: Self = schema::from_json(text)?;
        m.check().map_err(|e| SchemaError::Invalid(e.to_string()))?;
        Ok(m)
    }

    /// `sat(round(x · 2^n))` for each normalized input value.
    pub fn quantize_frame(&self, frame: &Frame) -> Result<QFrame, QuantError> {
        frame.check(&self.spec)?;
        let fmt = self.storage();
        let scale = (1u64 << self.n_bits) as f64;
        let inputs = frame
            .inputs
            .iter()
            .map(|m| {
                let data = m
                    .data()
                    .iter()
                    .map(|&x| Ok(fxp::saturate(fxp::round_nearest(x * scale)? as i128, fmt)))
                    .collect::<Result<_, QuantError>>()?;
                Ok(QMatrix {
                    rows: m.rows(),
                    cols: m.cols(),
                    data,
                })
            })
            .collect::<Result<_, QuantError>>()?;
        Ok(QFrame { inputs })
    }
}
