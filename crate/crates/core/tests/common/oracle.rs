//! Straight-line integer reference for the quantized network.
//!
//! Written against the stored model format only: nested vectors, plain
//! `i128` arithmetic, division-based rounding. Shares no code with the
//! engine.

use har_core::netgraph::ConvDim;
use har_core::quantizer::{QFrame, QuantizedModel};

/// Why the reference refused to produce a result.
#[derive(Debug, PartialEq, Eq)]
pub struct Overflow;

type Volume = Vec<Vec<Vec<i128>>>; // [t][s][c]

struct Acc {
    lo: i128,
    hi: i128,
    v: i128,
}

impl Acc {
    fn new(bits: u32) -> Self {
        Acc {
            lo: -(1i128 << (bits - 1)),
            hi: (1i128 << (bits - 1)) - 1,
            v: 0,
        }
    }

    fn add(&mut self, a: i128, b: i128) -> Result<(), Overflow> {
        self.v += a * b;
        if self.v < self.lo || self.v > self.hi {
            return Err(Overflow);
        }
        Ok(())
    }
}

/// `v / 2^s`, nearest, halves away from zero.
fn div_pow2(v: i128, s: u32) -> i128 {
    let d = 1i128 << s;
    let (q, r) = (v.abs() / d, v.abs() % d);
    let m = if 2 * r >= d { q + 1 } else { q };
    if v < 0 {
        -m
    } else {
        m
    }
}

fn clamp(v: i128, n_bits: u32) -> i128 {
    let top = (1i128 << n_bits) - 1;
    v.max(-top - 1).min(top)
}

/// Returns `(raw logits, class)`.
pub fn reference(qm: &QuantizedModel, frame: &QFrame) -> Result<(Vec<i64>, usize), Overflow> {
    let n = qm.n_bits;
    let mut feats: Vec<Vec<i128>> = Vec::new();
    for (bi, branch) in qm.spec.branches.iter().enumerate() {
        let m = &frame.inputs[bi];
        let mut x: Volume = (0..m.rows)
            .map(|t| match branch.conv_dim {
                ConvDim::D1 => vec![(0..m.cols).map(|c| m.data[t * m.cols + c] as i128).collect()],
                ConvDim::D2 => (0..m.cols).map(|s| vec![m.data[t * m.cols + s] as i128]).collect(),
            })
            .collect();
        for (l, w) in qm.conv[bi].iter().enumerate() {
            let rq = qm.conv_requant[l];
            let (tn, sn) = (x.len(), x[0].len());
            let (ct, cs) = (tn - w.kt + 1, sn - w.ks + 1);
            let mut y: Volume = vec![vec![vec![0; w.cout]; cs]; ct];
            for t in 0..ct {
                for s in 0..cs {
                    for co in 0..w.cout {
                        let mut acc = Acc::new(qm.acc_bits);
                        for a in 0..w.kt {
                            for b in 0..w.ks {
                                for ci in 0..w.cin {
                                    let wv = w.data[((a * w.ks + b) * w.cin + ci) * w.cout + co];
                                    acc.add(x[t + a][s + b][ci], wv as i128)?;
                                }
                            }
                        }
                        let v = div_pow2(acc.v * rq.mult as i128, rq.shift).max(0);
                        y[t][s][co] = clamp(v, n);
                    }
                }
            }
            let p = branch.layers[l].pool.unwrap_or(1);
            let pooled: Volume = (0..ct / p)
                .map(|u| {
                    (0..cs)
                        .map(|s| (0..w.cout).map(|c| (0..p).map(|k| y[u * p + k][s][c]).max().unwrap()).collect())
                        .collect()
                })
                .collect();
            x = pooled;
        }
        let c = x[0][0].len();
        feats.push(
            (0..c)
                .map(|ch| x.iter().flat_map(|row| row.iter().map(move |v| v[ch])).max().unwrap())
                .collect(),
        );
    }
    let dense_in: Vec<i128> = match &qm.mix {
        None => feats.concat(),
        Some(mix) => {
            let mut out = Vec::new();
            for j in 0..feats[0].len() {
                let mut acc = Acc::new(qm.acc_bits);
                for (f, &m) in feats.iter().zip(mix) {
                    acc.add(m as i128, f[j])?;
                }
                out.push(clamp(div_pow2(acc.v, n), n));
            }
            out
        }
    };
    let d1 = &qm.dense1;
    let mut hidden = Vec::new();
    for o in 0..d1.outputs {
        let mut acc = Acc::new(qm.acc_bits);
        for (i, &x) in dense_in.iter().enumerate() {
            acc.add(x, d1.data[i * d1.outputs + o] as i128)?;
        }
        let v = div_pow2(acc.v * qm.dense1_requant.mult as i128, qm.dense1_requant.shift).max(0);
        hidden.push(clamp(v, n));
    }
    let d2 = &qm.dense2;
    let mut logits = Vec::new();
    for o in 0..d2.outputs {
        let mut acc = Acc::new(qm.acc_bits);
        for (i, &x) in hidden.iter().enumerate() {
            acc.add(x, d2.data[i * d2.outputs + o] as i128)?;
        }
        logits.push(acc.v as i64);
    }
    let mut class = 0;
    for (i, &v) in logits.iter().enumerate() {
        if v > logits[class] {
            class = i;
        }
    }
    Ok((logits, class))
}
