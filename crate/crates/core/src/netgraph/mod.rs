//! Branched, bias-free feature-fusion CNN and its flat data-fusion baseline.
//!
//! Each branch owns one sensor window and runs three valid-padded, stride-1
//! convolutions (ReLU, optional temporal max-pool) followed by a global
//! max-pool. Branch features are concatenated, or mixed by softmax(α) when
//! importance weights are enabled, and fed to two dense layers. The output
//! head is an argmax with lowest-index tie-break.

mod ops;
mod persist;
mod tensor;

pub use ops::{
    argmax, conv_forward, forward, forward_trace, global_max_pool, mix_features, normalize_inputs,
    softmax, BranchTrace, ForwardTrace, LayerTrace,
};
pub use persist::{ModelFile, MODEL_FORMAT, MODEL_VERSION};
pub use tensor::{Act, ConvWeights, DenseWeights, Matrix};

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::rng::{substream, Stream};

pub const CONV_LAYERS: usize = 3;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum GraphError {
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("invalid model spec: {0}")]
    Spec(String),
    #[error("empty input: {0}")]
    Empty(String),
    #[error("degenerate normalization range for sensor '{sensor}': min {min} >= max {max}")]
    DegenerateStats { sensor: String, min: f64, max: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ConvDim {
    #[serde(rename = "1d")]
    D1,
    #[serde(rename = "2d")]
    D2,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConvLayerSpec {
    pub filters: usize,
    pub kernel: usize,
    /// Temporal max-pool size folded after the activation.
    pub pool: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BranchSpec {
    pub sensor: String,
    pub channels: usize,
    pub timesteps: usize,
    pub conv_dim: ConvDim,
    pub layers: Vec<ConvLayerSpec>,
}

/// Shape of one conv layer inside a branch, resolved from the input window.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct LayerGeometry {
    pub in_t: usize,
    pub in_s: usize,
    pub in_c: usize,
    pub kt: usize,
    pub ks: usize,
    pub filters: usize,
    /// Positions before pooling.
    pub conv_t: usize,
    pub out_t: usize,
    pub out_s: usize,
    pub pool: Option<usize>,
}

impl LayerGeometry {
    pub fn taps(&self) -> usize {
        self.kt * self.ks
    }

    pub fn conv_positions(&self) -> usize {
        self.conv_t * self.out_s
    }

    pub fn weight_count(&self) -> usize {
        self.kt * self.ks * self.in_c * self.filters
    }

    pub fn output_words(&self) -> usize {
        self.out_t * self.out_s * self.filters
    }
}

impl BranchSpec {
    pub fn new_1d(sensor: &str, channels: usize, timesteps: usize, filters: usize, kernel: usize) -> Self {
        Self::uniform(sensor, channels, timesteps, ConvDim::D1, filters, kernel)
    }

    pub fn uniform(
        sensor: &str,
        channels: usize,
        timesteps: usize,
        conv_dim: ConvDim,
        filters: usize,
        kernel: usize,
    ) -> Self {
        Self {
            sensor: sensor.to_string(),
            channels,
            timesteps,
            conv_dim,
            layers: vec![
                ConvLayerSpec {
                    filters,
                    kernel,
                    pool: None
                };
                CONV_LAYERS
            ],
        }
    }

    /// Head output length.
    pub fn features(&self) -> usize {
        self.layers.last().map_or(0, |l| l.filters)
    }

    pub fn geometry(&self) -> Result<Vec<LayerGeometry>, GraphError> {
        if self.layers.len() != CONV_LAYERS {
            return Err(GraphError::Spec(format!(
                "branch '{}' has {} conv layers, expected {CONV_LAYERS}",
                self.sensor,
                self.layers.len()
            )));
        }
        if self.channels == 0 || self.timesteps == 0 {
            return Err(GraphError::Spec(format!(
                "branch '{}' has an empty input window",
                self.sensor
            )));
        }
        let (mut t, mut s, mut c) = match self.conv_dim {
            ConvDim::D1 => (self.timesteps, 1, self.channels),
            ConvDim::D2 => (self.timesteps, self.channels, 1),
        };
        let mut out = Vec::with_capacity(CONV_LAYERS);
        for (i, l) in self.layers.iter().enumerate() {
            let ks = match self.conv_dim {
                ConvDim::D1 => 1,
                ConvDim::D2 => l.kernel,
            };
            if l.filters == 0 || l.kernel == 0 || l.pool == Some(0) {
                return Err(GraphError::Spec(format!(
                    "branch '{}' layer {i}: zero filters, kernel, or pool",
                    self.sensor
                )));
            }
            if t < l.kernel || s < ks {
                return Err(GraphError::Spec(format!(
                    "branch '{}' layer {i}: input {t}x{s} smaller than kernel {}x{ks}",
                    self.sensor, l.kernel
                )));
            }
            let conv_t = t - l.kernel + 1;
            let out_t = conv_t / l.pool.unwrap_or(1);
            if out_t == 0 {
                return Err(GraphError::Spec(format!(
                    "branch '{}' layer {i}: pooling empties the time axis",
                    self.sensor
                )));
            }
            let g = LayerGeometry {
                in_t: t,
                in_s: s,
                in_c: c,
                kt: l.kernel,
                ks,
                filters: l.filters,
                conv_t,
                out_t,
                out_s: s - ks + 1,
                pool: l.pool,
            };
            (t, s, c) = (g.out_t, g.out_s, g.filters);
            out.push(g);
        }
        Ok(out)
    }

    pub fn input_words(&self) -> usize {
        self.channels * self.timesteps
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum FusionMode {
    FeatureFusion,
    DataFusion,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelSpec {
    pub branches: Vec<BranchSpec>,
    pub hidden: usize,
    pub classes: usize,
    pub fusion: FusionMode,
    pub alpha: bool,
}

impl ModelSpec {
    pub fn validate(&self) -> Result<(), GraphError> {
        if self.classes < 2 {
            return Err(GraphError::Spec(format!("need at least 2 classes, got {}", self.classes)));
        }
        if self.hidden == 0 {
            return Err(GraphError::Spec("hidden width must be positive".into()));
        }
        if self.branches.is_empty() {
            return Err(GraphError::Spec("model has no branches".into()));
        }
        if self.fusion == FusionMode::DataFusion && self.branches.len() != 1 {
            return Err(GraphError::Spec(format!(
                "data fusion uses exactly one branch, got {}",
                self.branches.len()
            )));
        }
        for b in &self.branches {
            b.geometry()?;
        }
        if self.alpha {
            let f = self.branches[0].features();
            if self.branches.iter().any(|b| b.features() != f) {
                return Err(GraphError::Spec(
                    "importance mixing needs equal feature length on every branch".into(),
                ));
            }
        }
        Ok(())
    }

    /// Length of the vector entering the first dense layer.
    pub fn dense_input(&self) -> usize {
        if self.alpha {
            self.branches.first().map_or(0, BranchSpec::features)
        } else {
            self.branches.iter().map(BranchSpec::features).sum()
        }
    }

    /// Flat single-branch counterpart with all sensors concatenated along the
    /// channel axis. Kernel sizes and the dense head stay as they are, and
    /// every layer gets the total feature count as its width. Sensors must
    /// share a window length.
    pub fn data_fusion_counterpart(&self) -> Result<ModelSpec, GraphError> {
        self.validate()?;
        let t = self.branches[0].timesteps;
        if self.branches.iter().any(|b| b.timesteps != t) {
            return Err(GraphError::Spec(
                "data fusion needs a common window length across sensors".into(),
            ));
        }
        let channels = self.branches.iter().map(|b| b.channels).sum();
        let features = self.dense_input();
        let first = &self.branches[0].layers;
        let layers = first
            .iter()
            .map(|l| ConvLayerSpec {
                filters: features,
                kernel: l.kernel,
                pool: l.pool,
            })
            .collect();
        Ok(ModelSpec {
            branches: vec![BranchSpec {
                sensor: "fused".into(),
                channels,
                timesteps: t,
                conv_dim: ConvDim::D1,
                layers,
            }],
            hidden: self.hidden,
            classes: self.classes,
            fusion: FusionMode::DataFusion,
            alpha: false,
        })
    }

    /// Keep only the named branches, in their original order, without α.
    pub fn retain_branches(&self, keep: &[String]) -> ModelSpec {
        ModelSpec {
            branches: self
                .branches
                .iter()
                .filter(|b| keep.contains(&b.sensor))
                .cloned()
                .collect(),
            alpha: false,
            ..self.clone()
        }
    }
}

/// Total trainable weights; there are no biases. α entries count as
/// trainable parameters when enabled.
pub fn count_params(spec: &ModelSpec) -> Result<usize, GraphError> {
    spec.validate()?;
    let mut n = 0;
    for b in &spec.branches {
        n += b.geometry()?.iter().map(LayerGeometry::weight_count).sum::<usize>();
    }
    n += spec.dense_input() * spec.hidden + spec.hidden * spec.classes;
    if spec.alpha {
        n += spec.branches.len();
    }
    Ok(n)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelParams {
    /// `branches[i][l]` is conv layer `l` of branch `i`.
    pub branches: Vec<Vec<ConvWeights>>,
    pub dense1: DenseWeights,
    pub dense2: DenseWeights,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub alpha: Option<Vec<f64>>,
}

impl ModelParams {
    pub fn zeros(spec: &ModelSpec) -> Result<Self, GraphError> {
        spec.validate()?;
        let mut branches = Vec::with_capacity(spec.branches.len());
        for b in &spec.branches {
            branches.push(
                b.geometry()?
                    .iter()
                    .map(|g| ConvWeights::zeros(g.kt, g.ks, g.in_c, g.filters))
                    .collect(),
            );
        }
        Ok(Self {
            branches,
            dense1: DenseWeights::zeros(spec.dense_input(), spec.hidden),
            dense2: DenseWeights::zeros(spec.hidden, spec.classes),
            alpha: spec.alpha.then(|| vec![0.0; spec.branches.len()]),
        })
    }

    /// Uniform Glorot initialization from the `init` substream of `seed`;
    /// α starts at zero (uniform mixing).
    pub fn init(spec: &ModelSpec, seed: u64) -> Result<Self, GraphError> {
        let mut p = Self::zeros(spec)?;
        let mut rng = substream(seed, Stream::Init);
        for layers in &mut p.branches {
            for w in layers.iter_mut() {
                let fan_in = w.kt * w.ks * w.cin;
                let fan_out = w.kt * w.ks * w.cout;
                let s = (6.0 / (fan_in + fan_out) as f64).sqrt();
                w.data.iter_mut().for_each(|x| *x = rng.random_range(-s..=s));
            }
        }
        for d in [&mut p.dense1, &mut p.dense2] {
            let s = (6.0 / (d.inputs + d.outputs) as f64).sqrt();
            d.data.iter_mut().for_each(|x| *x = rng.random_range(-s..=s));
        }
        Ok(p)
    }

    pub fn check(&self, spec: &ModelSpec) -> Result<(), GraphError> {
        let want = Self::zeros(spec)?;
        let shape_err = |what: &str| Err(GraphError::Shape(format!("{what} disagrees with model spec")));
        if self.branches.len() != want.branches.len() {
            return shape_err("branch count");
        }
        for (i, (have, want)) in self.branches.iter().zip(&want.branches).enumerate() {
            if have.len() != want.len() {
                return shape_err(&format!("branch {i} layer count"));
            }
            for (l, (h, w)) in have.iter().zip(want).enumerate() {
                if h.shape() != w.shape() || h.data.len() != w.data.len() {
                    return shape_err(&format!("branch {i} layer {l} kernel"));
                }
            }
        }
        for (h, w, name) in [(&self.dense1, &want.dense1, "dense1"), (&self.dense2, &want.dense2, "dense2")] {
            if (h.inputs, h.outputs) != (w.inputs, w.outputs) || h.data.len() != w.data.len() {
                return shape_err(name);
            }
        }
        match (&self.alpha, &want.alpha) {
            (None, None) => {}
            (Some(a), Some(b)) if a.len() == b.len() => {}
            _ => return shape_err("alpha vector"),
        }
        Ok(())
    }

    /// Flat view of every trainable scalar in a fixed order.
    pub fn flat(&self) -> Vec<f64> {
        let mut v = Vec::new();
        self.visit(|x| v.push(*x));
        v
    }

    pub fn set_flat(&mut self, values: &[f64]) {
        let mut it = values.iter();
        self.visit_mut(|x| *x = *it.next().expect("flat parameter vector too short"));
    }

    fn visit(&self, mut f: impl FnMut(&f64)) {
        self.branches.iter().flatten().flat_map(|w| &w.data).for_each(&mut f);
        self.dense1.data.iter().for_each(&mut f);
        self.dense2.data.iter().for_each(&mut f);
        if let Some(a) = &self.alpha {
            a.iter().for_each(&mut f);
        }
    }

    fn visit_mut(&mut self, mut f: impl FnMut(&mut f64)) {
        self.branches
            .iter_mut()
            .flatten()
            .flat_map(|w| &mut w.data)
            .for_each(&mut f);
        self.dense1.data.iter_mut().for_each(&mut f);
        self.dense2.data.iter_mut().for_each(&mut f);
        if let Some(a) = &mut self.alpha {
            a.iter_mut().for_each(&mut f);
        }
    }
}

/// One network input: a normalized window per branch.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Frame {
    pub inputs: Vec<Matrix>,
}

impl Frame {
    pub fn zeros(spec: &ModelSpec) -> Self {
        Self {
            inputs: spec
                .branches
                .iter()
                .map(|b| Matrix::zeros(b.timesteps, b.channels))
                .collect(),
        }
    }

    pub fn check(&self, spec: &ModelSpec) -> Result<(), GraphError> {
        if self.inputs.len() != spec.branches.len() {
            return Err(GraphError::Shape(format!(
                "frame has {} inputs, model has {} branches",
                self.inputs.len(),
                spec.branches.len()
            )));
        }
        for (m, b) in self.inputs.iter().zip(&spec.branches) {
            if (m.rows(), m.cols()) != (b.timesteps, b.channels) {
                return Err(GraphError::Shape(format!(
                    "branch '{}' expects {}x{}, frame has {}x{}",
                    b.sensor,
                    b.timesteps,
                    b.channels,
                    m.rows(),
                    m.cols()
                )));
            }
        }
        Ok(())
    }

    /// Concatenate all windows along the channel axis (data-fusion input).
    pub fn concat_channels(&self) -> Result<Frame, GraphError> {
        let t = self.inputs.first().map_or(0, Matrix::rows);
        if self.inputs.iter().any(|m| m.rows() != t) {
            return Err(GraphError::Shape("windows differ in length".into()));
        }
        let cols: usize = self.inputs.iter().map(Matrix::cols).sum();
        let mut out = Matrix::zeros(t, cols);
        for r in 0..t {
            let mut c0 = 0;
            for m in &self.inputs {
                for c in 0..m.cols() {
                    out.set(r, c0 + c, m.get(r, c));
                }
                c0 += m.cols();
            }
        }
        Ok(Frame { inputs: vec![out] })
    }
}

/// Per-sensor affine range used to map raw values onto [-1, 1].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NormStats {
    pub sensor: String,
    pub min: f64,
    pub max: f64,
}

impl NormStats {
    /// Observed range over a set of raw windows for one sensor.
    pub fn observe<'a>(sensor: &str, windows: impl IntoIterator<Item = &'a Matrix>) -> Self {
        let (mut min, mut max) = (f64::INFINITY, f64::NEG_INFINITY);
        for w in windows {
            for &v in w.data() {
                min = min.min(v);
                max = max.max(v);
            }
        }
        Self {
            sensor: sensor.to_string(),
            min,
            max,
        }
    }
}
