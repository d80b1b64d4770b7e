//! Desk-scale FP training for the branched CNN.
//!
//! Hand-derived backprop over the fixed layer vocabulary with Adam and seeded
//! batching. Modality selection trains with α first, then retrains the kept
//! branches without it.

mod backward;

pub use backward::{backward, loss_ce, Sample};

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::netgraph::{forward, softmax, Frame, GraphError, ModelParams, ModelSpec};
use crate::rng::{substream, Stream};

#[derive(Debug, Error)]
pub enum TrainError {
    #[error(transparent)]
    Graph(#[from] GraphError),
    #[error("training diverged (non-finite loss) in epoch {epoch}")]
    Diverged { epoch: usize },
    #[error("label {label} out of range for {classes} classes")]
    Label { label: usize, classes: usize },
    #[error("importance training needs a model with alpha enabled")]
    AlphaDisabled,
    #[error("keep must be in 1..={n}, got {keep}")]
    Keep { keep: usize, n: usize },
    #[error("empty training set")]
    EmptyData,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    /// Multiplier on the learning rate for α only.
    pub alpha_lr_scale: f64,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 30,
            batch_size: 16,
            learning_rate: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            alpha_lr_scale: 1.0,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub train_acc: f64,
    pub val_loss: Option<f64>,
    pub val_acc: Option<f64>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct History {
    pub epochs: Vec<EpochRecord>,
}

impl History {
    pub fn to_csv(&self) -> String {
        let opt = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
        let mut s = String::from("epoch,train_loss,train_acc,val_loss,val_acc\n");
        for r in &self.epochs {
            s.push_str(&format!(
                "{},{},{},{},{}\n",
                r.epoch,
                r.train_loss,
                r.train_acc,
                opt(r.val_loss),
                opt(r.val_acc)
            ));
        }
        s
    }
}

/// Mean loss and argmax accuracy of `params` on `samples`.
pub fn evaluate(spec: &ModelSpec, params: &ModelParams, samples: &[Sample]) -> Result<(f64, f64), GraphError> {
    if samples.is_empty() {
        return Ok((f64::NAN, f64::NAN));
    }
    let (mut loss, mut hits) = (0.0, 0usize);
    for s in samples {
        let (logits, class) = forward(spec, params, &s.frame)?;
        loss += loss_ce(&logits, s.label)?;
        hits += usize::from(class == s.label);
    }
    let n = samples.len() as f64;
    Ok((loss / n, hits as f64 / n))
}

/// Argmax accuracy only.
pub fn accuracy(spec: &ModelSpec, params: &ModelParams, samples: &[Sample]) -> Result<f64, GraphError> {
    let mut hits = 0usize;
    for s in samples {
        hits += usize::from(forward(spec, params, &s.frame)?.1 == s.label);
    }
    Ok(hits as f64 / samples.len().max(1) as f64)
}

struct Adam {
    m: Vec<f64>,
    v: Vec<f64>,
    t: i32,
}

impl Adam {
    fn new(n: usize) -> Self {
        Self {
            m: vec![0.0; n],
            v: vec![0.0; n],
            t: 0,
        }
    }

    fn step(&mut self, theta: &mut [f64], grad: &[f64], lr: &[f64], cfg: &TrainConfig) {
        self.t += 1;
        let bc1 = 1.0 - cfg.beta1.powi(self.t);
        let bc2 = 1.0 - cfg.beta2.powi(self.t);
        for i in 0..theta.len() {
            self.m[i] = cfg.beta1 * self.m[i] + (1.0 - cfg.beta1) * grad[i];
            self.v[i] = cfg.beta2 * self.v[i] + (1.0 - cfg.beta2) * grad[i] * grad[i];
            let mh = self.m[i] / bc1;
            let vh = self.v[i] / bc2;
            theta[i] -= lr[i] * mh / (vh.sqrt() + cfg.epsilon);
        }
    }
}

/// Train from a seeded Glorot initialization.
pub fn train(
    spec: &ModelSpec,
    train_set: &[Sample],
    val_set: &[Sample],
    cfg: &TrainConfig,
) -> Result<(ModelParams, History), TrainError> {
    let init = ModelParams::init(spec, cfg.seed)?;
    train_from(spec, init, train_set, val_set, cfg)
}

/// Train starting from `params`. Fully determined by the inputs and
/// `cfg.seed`; zero epochs returns `params` unchanged.
pub fn train_from(
    spec: &ModelSpec,
    mut params: ModelParams,
    train_set: &[Sample],
    val_set: &[Sample],
    cfg: &TrainConfig,
) -> Result<(ModelParams, History), TrainError> {
    spec.validate()?;
    params.check(spec)?;
    for s in train_set.iter().chain(val_set) {
        if s.label >= spec.classes {
            return Err(TrainError::Label {
                label: s.label,
                classes: spec.classes,
            });
        }
    }
    let mut history = History::default();
    if cfg.epochs == 0 {
        return Ok((params, history));
    }
    if train_set.is_empty() {
        return Err(TrainError::EmptyData);
    }

    let mut theta = params.flat();
    let n_alpha = params.alpha.as_ref().map_or(0, Vec::len);
    let mut lr = vec![cfg.learning_rate; theta.len()];
    let n = lr.len();
    lr[n - n_alpha..].iter_mut().for_each(|x| *x *= cfg.alpha_lr_scale);

    let mut adam = Adam::new(theta.len());
    let mut rng = substream(cfg.seed, Stream::Batching);
    let mut order: Vec<usize> = (0..train_set.len()).collect();
    let bs = cfg.batch_size.max(1);

    for epoch in 0..cfg.epochs {
        order.shuffle(&mut rng);
        let (mut loss_sum, mut hits) = (0.0, 0usize);
        for chunk in order.chunks(bs) {
            let batch: Vec<Sample> = chunk.iter().map(|&i| train_set[i].clone()).collect();
            let (loss, batch_hits, grads) = backward::backward_counting(spec, &params, &batch)?;
            hits += batch_hits;
            if !loss.is_finite() {
                return Err(TrainError::Diverged { epoch });
            }
            loss_sum += loss * batch.len() as f64;
            adam.step(&mut theta, &grads.flat(), &lr, cfg);
            params.set_flat(&theta);
        }
        let train_loss = loss_sum / train_set.len() as f64;
        if !train_loss.is_finite() || theta.iter().any(|v| !v.is_finite()) {
            return Err(TrainError::Diverged { epoch });
        }
        let (val_loss, val_acc) = if val_set.is_empty() {
            (None, None)
        } else {
            let (l, a) = evaluate(spec, &params, val_set)?;
            (Some(l), Some(a))
        };
        history.epochs.push(EpochRecord {
            epoch,
            train_loss,
            train_acc: hits as f64 / train_set.len() as f64,
            val_loss,
            val_acc,
        });
    }
    Ok((params, history))
}

/// Learned per-sensor importance.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ImportanceReport {
    pub sensors: Vec<String>,
    pub alpha: Vec<f64>,
    pub softmax: Vec<f64>,
    /// Sensor indices by descending α; ties keep the lower index first.
    pub ranking: Vec<usize>,
}

impl ImportanceReport {
    pub fn from_alpha(sensors: Vec<String>, alpha: Vec<f64>) -> Self {
        let mut ranking: Vec<usize> = (0..alpha.len()).collect();
        ranking.sort_by(|&a, &b| alpha[b].total_cmp(&alpha[a]).then(a.cmp(&b)));
        Self {
            softmax: softmax(&alpha),
            sensors,
            alpha,
            ranking,
        }
    }

    pub fn ranked_names(&self) -> Vec<&str> {
        self.ranking.iter().map(|&i| self.sensors[i].as_str()).collect()
    }
}

/// Joint training of weights and α; returns the importance ranking and the
/// trained α-model.
pub fn train_importance(
    spec: &ModelSpec,
    train_set: &[Sample],
    val_set: &[Sample],
    cfg: &TrainConfig,
) -> Result<(ImportanceReport, ModelParams, History), TrainError> {
    if !spec.alpha {
        return Err(TrainError::AlphaDisabled);
    }
    let (params, history) = train(spec, train_set, val_set, cfg)?;
    let alpha = params.alpha.clone().ok_or(TrainError::AlphaDisabled)?;
    let sensors = spec.branches.iter().map(|b| b.sensor.clone()).collect();
    Ok((ImportanceReport::from_alpha(sensors, alpha), params, history))
}

/// The `keep` highest-ranked sensor names, best first.
pub fn select_modalities(report: &ImportanceReport, keep: usize) -> Result<Vec<String>, TrainError> {
    let n = report.sensors.len();
    if keep == 0 || keep > n {
        return Err(TrainError::Keep { keep, n });
    }
    Ok(report.ranking[..keep]
        .iter()
        .map(|&i| report.sensors[i].clone())
        .collect())
}

/// Restrict every frame to the branches named in `keep`, preserving the
/// original branch order.
pub fn restrict_samples(spec: &ModelSpec, samples: &[Sample], keep: &[String]) -> Vec<Sample> {
    let idx: Vec<usize> = spec
        .branches
        .iter()
        .enumerate()
        .filter(|(_, b)| keep.contains(&b.sensor))
        .map(|(i, _)| i)
        .collect();
    samples
        .iter()
        .map(|s| Sample {
            frame: Frame {
                inputs: idx.iter().map(|&i| s.frame.inputs[i].clone()).collect(),
            },
            label: s.label,
        })
        .collect()
}

#[derive(Debug, Clone)]
pub struct SelectionOutcome {
    pub report: ImportanceReport,
    pub kept: Vec<String>,
    pub spec: ModelSpec,
    pub params: ModelParams,
    pub history: History,
}

/// Two-phase modality selection: α-augmented training, rank, keep the top
/// `keep` sensors, then retrain from scratch without α.
pub fn select_and_retrain(
    spec: &ModelSpec,
    train_set: &[Sample],
    val_set: &[Sample],
    cfg: &TrainConfig,
    keep: usize,
) -> Result<SelectionOutcome, TrainError> {
    let alpha_spec = ModelSpec {
        alpha: true,
        ..spec.clone()
    };
    let (report, _, _) = train_importance(&alpha_spec, train_set, val_set, cfg)?;
    let kept = select_modalities(&report, keep)?;
    let pruned = alpha_spec.retain_branches(&kept);
    let tr = restrict_samples(&alpha_spec, train_set, &kept);
    let va = restrict_samples(&alpha_spec, val_set, &kept);
    let (params, history) = train(&pruned, &tr, &va, cfg)?;
    Ok(SelectionOutcome {
        report,
        kept,
        spec: pruned,
        params,
        history,
    })
}
