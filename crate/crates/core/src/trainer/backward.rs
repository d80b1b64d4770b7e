use crate::netgraph::{forward_trace, Act, ConvWeights, Frame, GraphError, ModelParams, ModelSpec};

/// A normalized frame with its class label.
#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    pub frame: Frame,
    pub label: usize,
}

/// `-log softmax(logits)[label]`, computed stably.
pub fn loss_ce(logits: &[f64], label: usize) -> Result<f64, GraphError> {
    if label >= logits.len() {
        return Err(GraphError::Shape(format!(
            "label {label} out of range for {} classes",
            logits.len()
        )));
    }
    let m = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let lse = m + logits.iter().map(|&v| (v - m).exp()).sum::<f64>().ln();
    Ok(lse - logits[label])
}

/// Mean cross-entropy over `batch` and its exact gradient with respect to
/// every weight and, when enabled, α. Max-pools route gradient to the first
/// maximal element.
pub fn backward(spec: &ModelSpec, params: &ModelParams, batch: &[Sample]) -> Result<(f64, ModelParams), GraphError> {
    let (loss, _, grads) = backward_counting(spec, params, batch)?;
    Ok((loss, grads))
}

/// [`backward`] that also counts correct argmax predictions in the batch.
pub(crate) fn backward_counting(
    spec: &ModelSpec,
    params: &ModelParams,
    batch: &[Sample],
) -> Result<(f64, usize, ModelParams), GraphError> {
    let mut grads = ModelParams::zeros(spec)?;
    if batch.is_empty() {
        return Ok((0.0, 0, grads));
    }
    let (mut total, mut hits) = (0.0, 0);
    for s in batch {
        let (loss, hit) = accumulate(spec, params, s, &mut grads)?;
        total += loss;
        hits += usize::from(hit);
    }
    let scale = 1.0 / batch.len() as f64;
    let mut flat = grads.flat();
    flat.iter_mut().for_each(|g| *g *= scale);
    grads.set_flat(&flat);
    Ok((total * scale, hits, grads))
}

fn accumulate(spec: &ModelSpec, params: &ModelParams, sample: &Sample, g: &mut ModelParams) -> Result<(f64, bool), GraphError> {
    let tr = forward_trace(spec, params, &sample.frame)?;
    let loss = loss_ce(&tr.logits, sample.label)?;
    let hit = tr.class() == sample.label;

    let mut dlogits = crate::netgraph::softmax(&tr.logits);
    dlogits[sample.label] -= 1.0;

    let (h, c) = (params.dense2.inputs, params.dense2.outputs);
    let mut dhidden = vec![0.0; h];
    for i in 0..h {
        let row = &params.dense2.data[i * c..(i + 1) * c];
        let grow = &mut g.dense2.data[i * c..(i + 1) * c];
        for o in 0..c {
            grow[o] += tr.hidden[i] * dlogits[o];
            dhidden[i] += row[o] * dlogits[o];
        }
    }
    for (d, &pre) in dhidden.iter_mut().zip(&tr.hidden_pre) {
        if pre <= 0.0 {
            *d = 0.0;
        }
    }

    let n_in = params.dense1.inputs;
    let mut ddense_in = vec![0.0; n_in];
    for i in 0..n_in {
        let row = &params.dense1.data[i * h..(i + 1) * h];
        let grow = &mut g.dense1.data[i * h..(i + 1) * h];
        for o in 0..h {
            grow[o] += tr.dense_in[i] * dhidden[o];
            ddense_in[i] += row[o] * dhidden[o];
        }
    }

    let dfeatures: Vec<Vec<f64>> = match &tr.mix {
        Some(p) => {
            // F_mix = Σ p_i F_i with p = softmax(α)
            let dp: Vec<f64> = tr
                .branches
                .iter()
                .map(|b| b.features.iter().zip(&ddense_in).map(|(f, d)| f * d).sum())
                .collect();
            let mean: f64 = p.iter().zip(&dp).map(|(a, b)| a * b).sum();
            let ga = g.alpha.as_mut().expect("alpha gradient slot");
            for j in 0..p.len() {
                ga[j] += p[j] * (dp[j] - mean);
            }
            p.iter().map(|&pi| ddense_in.iter().map(|d| pi * d).collect()).collect()
        }
        None => {
            let mut off = 0;
            tr.branches
                .iter()
                .map(|b| {
                    let n = b.features.len();
                    let v = ddense_in[off..off + n].to_vec();
                    off += n;
                    v
                })
                .collect()
        }
    };

    for (bi, (bt, df)) in tr.branches.iter().zip(&dfeatures).enumerate() {
        let last = bt.layers.last().expect("branch has layers");
        let mut dpost = Act::zeros(last.post.t, last.post.s, last.post.c);
        for (&src, &d) in bt.head_src.iter().zip(df) {
            dpost.data[src] += d;
        }
        for (li, lt) in bt.layers.iter().enumerate().rev() {
            // undo pooling, then ReLU
            let mut dpre = Act::zeros(lt.pre.t, lt.pre.s, lt.pre.c);
            if lt.pool_src.is_empty() {
                dpre.data.copy_from_slice(&dpost.data);
            } else {
                for (&src, &d) in lt.pool_src.iter().zip(&dpost.data) {
                    dpre.data[src] += d;
                }
            }
            for (d, &z) in dpre.data.iter_mut().zip(&lt.pre.data) {
                if z <= 0.0 {
                    *d = 0.0;
                }
            }
            let w = &params.branches[bi][li];
            conv_weight_grad(&lt.input, &dpre, &mut g.branches[bi][li]);
            if li > 0 {
                dpost = conv_input_grad(w, &dpre, &lt.input);
            }
        }
    }
    Ok((loss, hit))
}

fn conv_weight_grad(input: &Act, dpre: &Act, gw: &mut ConvWeights) {
    let cout = gw.cout;
    for t in 0..dpre.t {
        for s in 0..dpre.s {
            let d0 = dpre.idx(t, s, 0);
            let dy = &dpre.data[d0..d0 + cout];
            if dy.iter().all(|&v| v == 0.0) {
                continue;
            }
            for a in 0..gw.kt {
                for b in 0..gw.ks {
                    let i0 = input.idx(t + a, s + b, 0);
                    for ci in 0..gw.cin {
                        let x = input.data[i0 + ci];
                        if x == 0.0 {
                            continue;
                        }
                        let w0 = gw.idx(a, b, ci, 0);
                        for (gv, &d) in gw.data[w0..w0 + cout].iter_mut().zip(dy) {
                            *gv += x * d;
                        }
                    }
                }
            }
        }
    }
}

fn conv_input_grad(w: &ConvWeights, dpre: &Act, input: &Act) -> Act {
    let mut din = Act::zeros(input.t, input.s, input.c);
    let cout = w.cout;
    for t in 0..dpre.t {
        for s in 0..dpre.s {
            let d0 = dpre.idx(t, s, 0);
            let dy = &dpre.data[d0..d0 + cout];
            if dy.iter().all(|&v| v == 0.0) {
                continue;
            }
            for a in 0..w.kt {
                for b in 0..w.ks {
                    let i0 = din.idx(t + a, s + b, 0);
                    for ci in 0..w.cin {
                        let w0 = w.idx(a, b, ci, 0);
                        let v: f64 = w.data[w0..w0 + cout].iter().zip(dy).map(|(wv, d)| wv * d).sum();
                        din.data[i0 + ci] += v;
                    }
                }
            }
        }
    }
    din
}
