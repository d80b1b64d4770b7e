use super::{Act, ConvDim, ConvWeights, DenseWeights, Frame, GraphError, Matrix, ModelParams, ModelSpec, NormStats};

/// Valid-padded, stride-1 convolution with optional ReLU and temporal
/// max-pool of size `pool` (non-overlapping, trailing remainder dropped).
pub fn conv_forward(input: &Act, w: &ConvWeights, relu: bool, pool: Option<usize>) -> Result<Act, GraphError> {
    let pre = conv_pre(input, w)?;
    let act = if relu { relu_act(&pre) } else { pre };
    Ok(match pool {
        Some(p) => temporal_pool(&act, p)?.0,
        None => act,
    })
}

fn conv_pre(input: &Act, w: &ConvWeights) -> Result<Act, GraphError> {
    if input.c != w.cin {
        return Err(GraphError::Shape(format!(
            "conv expects {} input channels, got {}",
            w.cin, input.c
        )));
    }
    if input.t < w.kt || input.s < w.ks {
        return Err(GraphError::Shape(format!(
            "input {}x{} shorter than kernel {}x{}",
            input.t, input.s, w.kt, w.ks
        )));
    }
    let (ot, os) = (input.t - w.kt + 1, input.s - w.ks + 1);
    let mut out = Act::zeros(ot, os, w.cout);
    let cout = w.cout;
    for t in 0..ot {
        for s in 0..os {
            let o0 = out.idx(t, s, 0);
            let acc = &mut out.data[o0..o0 + cout];
            for a in 0..w.kt {
                for b in 0..w.ks {
                    let i0 = input.idx(t + a, s + b, 0);
                    let xs = &input.data[i0..i0 + w.cin];
                    for (ci, &x) in xs.iter().enumerate() {
                        if x == 0.0 {
                            continue;
                        }
                        let w0 = w.idx(a, b, ci, 0);
                        for (o, &wv) in acc.iter_mut().zip(&w.data[w0..w0 + cout]) {
                            *o += x * wv;
                        }
                    }
                }
            }
        }
    }
    Ok(out)
}

fn relu_act(a: &Act) -> Act {
    Act {
        data: a.data.iter().map(|&v| v.max(0.0)).collect(),
        ..a.clone()
    }
}

/// Returns the pooled volume and, per output element, the flat index of the
/// first maximal source element.
fn temporal_pool(a: &Act, p: usize) -> Result<(Act, Vec<usize>), GraphError> {
    if p == 0 || a.t / p == 0 {
        return Err(GraphError::Shape(format!("cannot pool {} steps by {p}", a.t)));
    }
    let mut out = Act::zeros(a.t / p, a.s, a.c);
    let mut src = vec![0; out.data.len()];
    for t in 0..out.t {
        for s in 0..a.s {
            for c in 0..a.c {
                let mut best = a.idx(t * p, s, c);
                for k in 1..p {
                    let i = a.idx(t * p + k, s, c);
                    if a.data[i] > a.data[best] {
                        best = i;
                    }
                }
                let o = out.idx(t, s, c);
                out.data[o] = a.data[best];
                src[o] = best;
            }
        }
    }
    Ok((out, src))
}

/// Per-channel maximum over time (and space for 2D branches).
pub fn global_max_pool(input: &Act) -> Result<Vec<f64>, GraphError> {
    Ok(global_max_pool_src(input)?.0)
}

fn global_max_pool_src(input: &Act) -> Result<(Vec<f64>, Vec<usize>), GraphError> {
    if input.t == 0 || input.s == 0 || input.c == 0 {
        return Err(GraphError::Empty("global max-pool over an empty tensor".into()));
    }
    let mut best: Vec<usize> = (0..input.c).collect();
    for pos in 1..input.t * input.s {
        for (c, b) in best.iter_mut().enumerate() {
            let i = pos * input.c + c;
            if input.data[i] > input.data[*b] {
                *b = i;
            }
        }
    }
    Ok((best.iter().map(|&i| input.data[i]).collect(), best))
}

pub fn softmax(x: &[f64]) -> Vec<f64> {
    let m = x.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = x.iter().map(|&v| (v - m).exp()).collect();
    let z: f64 = e.iter().sum();
    e.into_iter().map(|v| v / z).collect()
}

/// Importance-weighted sum `Σ softmax(α)_i · F_i`.
pub fn mix_features(features: &[Vec<f64>], alpha: &[f64]) -> Result<Vec<f64>, GraphError> {
    if features.len() != alpha.len() || features.is_empty() {
        return Err(GraphError::Shape(format!(
            "{} feature vectors for {} importance weights",
            features.len(),
            alpha.len()
        )));
    }
    let f = features[0].len();
    if features.iter().any(|v| v.len() != f) {
        return Err(GraphError::Shape("feature vectors differ in length".into()));
    }
    let p = softmax(alpha);
    let mut out = vec![0.0; f];
    for (w, feat) in p.iter().zip(features) {
        for (o, &v) in out.iter_mut().zip(feat) {
            *o += w * v;
        }
    }
    Ok(out)
}

/// Index of the largest value; the lowest index wins ties.
pub fn argmax<T: PartialOrd + Copy>(v: &[T]) -> usize {
    let mut best = 0;
    for (i, &x) in v.iter().enumerate().skip(1) {
        if x > v[best] {
            best = i;
        }
    }
    best
}

fn dense(x: &[f64], w: &DenseWeights) -> Vec<f64> {
    let mut out = vec![0.0; w.outputs];
    for (i, &xi) in x.iter().enumerate() {
        if xi == 0.0 {
            continue;
        }
        let row = &w.data[i * w.outputs..(i + 1) * w.outputs];
        for (o, &wv) in out.iter_mut().zip(row) {
            *o += xi * wv;
        }
    }
    out
}

#[derive(Debug, Clone)]
pub struct LayerTrace {
    pub input: Act,
    /// Pre-activation conv output.
    pub pre: Act,
    /// Post-activation, post-pool output.
    pub post: Act,
    /// For pooled layers, flat index into `pre` that produced each `post`
    /// element; empty when the layer does not pool.
    pub pool_src: Vec<usize>,
}

#[derive(Debug, Clone)]
pub struct BranchTrace {
    pub layers: Vec<LayerTrace>,
    pub features: Vec<f64>,
    /// Flat index into the last layer's `post` for each feature.
    pub head_src: Vec<usize>,
}

#[derive(Debug, Clone)]
pub struct ForwardTrace {
    pub branches: Vec<BranchTrace>,
    /// softmax(α) when mixing is enabled.
    pub mix: Option<Vec<f64>>,
    pub dense_in: Vec<f64>,
    pub hidden_pre: Vec<f64>,
    pub hidden: Vec<f64>,
    pub logits: Vec<f64>,
}

impl ForwardTrace {
    pub fn class(&self) -> usize {
        argmax(&self.logits)
    }
}

/// Forward pass that keeps every intermediate, for backprop and calibration.
pub fn forward_trace(spec: &ModelSpec, params: &ModelParams, frame: &Frame) -> Result<ForwardTrace, GraphError> {
    frame.check(spec)?;
    params.check(spec)?;
    let mut branches = Vec::with_capacity(spec.branches.len());
    for ((b, weights), window) in spec.branches.iter().zip(&params.branches).zip(&frame.inputs) {
        let mut x = match b.conv_dim {
            ConvDim::D1 => Act::from_window_1d(window),
            ConvDim::D2 => Act::from_window_2d(window),
        };
        let mut layers = Vec::with_capacity(weights.len());
        for (w, l) in weights.iter().zip(&b.layers) {
            let pre = conv_pre(&x, w)?;
            let act = relu_act(&pre);
            let (post, pool_src) = match l.pool {
                Some(p) => temporal_pool(&act, p)?,
                None => (act, Vec::new()),
            };
            let input = std::mem::replace(&mut x, post.clone());
            layers.push(LayerTrace {
                input,
                pre,
                post,
                pool_src,
            });
        }
        let (features, head_src) = global_max_pool_src(&x)?;
        branches.push(BranchTrace {
            layers,
            features,
            head_src,
        });
    }
    let (mix, dense_in) = match &params.alpha {
        Some(alpha) if spec.alpha => {
            let feats: Vec<Vec<f64>> = branches.iter().map(|b| b.features.clone()).collect();
            (Some(softmax(alpha)), mix_features(&feats, alpha)?)
        }
        _ => (None, branches.iter().flat_map(|b| b.features.iter().copied()).collect()),
    };
    let hidden_pre = dense(&dense_in, &params.dense1);
    let hidden: Vec<f64> = hidden_pre.iter().map(|&v| v.max(0.0)).collect();
    let logits = dense(&hidden, &params.dense2);
    Ok(ForwardTrace {
        branches,
        mix,
        dense_in,
        hidden_pre,
        hidden,
        logits,
    })
}

/// FP forward pass; returns logits and the argmax class.
pub fn forward(spec: &ModelSpec, params: &ModelParams, frame: &Frame) -> Result<(Vec<f64>, usize), GraphError> {
    let tr = forward_trace(spec, params, frame)?;
    let class = tr.class();
    Ok((tr.logits, class))
}

/// Map each sensor's raw window onto [-1, 1] using its training range;
/// values outside the range are clipped.
pub fn normalize_inputs(raw: &[Matrix], stats: &[NormStats]) -> Result<Frame, GraphError> {
    if raw.len() != stats.len() {
        return Err(GraphError::Shape(format!(
            "{} windows for {} normalization ranges",
            raw.len(),
            stats.len()
        )));
    }
    let mut inputs = Vec::with_capacity(raw.len());
    for (m, st) in raw.iter().zip(stats) {
        if !(st.max > st.min) {
            return Err(GraphError::DegenerateStats {
                sensor: st.sensor.clone(),
                min: st.min,
                max: st.max,
            });
        }
        let span = st.max - st.min;
        let mut out = m.clone();
        for v in out.data_mut() {
            *v = (2.0 * (*v - st.min) / span - 1.0).clamp(-1.0, 1.0);
        }
        inputs.push(out);
    }
    Ok(Frame { inputs })
}
