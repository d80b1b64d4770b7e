//! Random model and frame generators shared by integration tests.
#![allow(dead_code)]

pub mod oracle;

use har_core::netgraph::{BranchSpec, ConvDim, ConvLayerSpec, Frame, FusionMode, Matrix, ModelParams, ModelSpec};
use rand::Rng;
use rand_chacha::ChaCha8Rng;

fn random_branch(rng: &mut ChaCha8Rng, name: String, last_filters: usize) -> BranchSpec {
    loop {
        let conv_dim = if rng.random_bool(0.3) { ConvDim::D2 } else { ConvDim::D1 };
        let mut layers: Vec<ConvLayerSpec> = (0..3)
            .map(|_| ConvLayerSpec {
                filters: rng.random_range(1..=4),
                kernel: rng.random_range(1..=3),
                pool: rng.random_bool(0.25).then_some(2),
            })
            .collect();
        layers[2].filters = last_filters;
        let b = BranchSpec {
            sensor: name.clone(),
            channels: rng.random_range(1..=5),
            timesteps: rng.random_range(6..=14),
            conv_dim,
            layers,
        };
        if b.geometry().is_ok() {
            return b;
        }
    }
}

/// A small valid feature-fusion spec, with or without importance mixing.
pub fn random_spec(rng: &mut ChaCha8Rng) -> ModelSpec {
    let alpha = rng.random_bool(0.4);
    let n = if alpha { rng.random_range(2..=3) } else { rng.random_range(1..=3) };
    let shared = rng.random_range(1..=4);
    let branches = (0..n)
        .map(|i| {
            let f = if alpha { shared } else { rng.random_range(1..=4) };
            random_branch(rng, format!("s{i}"), f)
        })
        .collect();
    let spec = ModelSpec {
        branches,
        hidden: rng.random_range(2..=6),
        classes: rng.random_range(2..=4),
        fusion: FusionMode::FeatureFusion,
        alpha,
    };
    spec.validate().expect("generator builds valid specs");
    spec
}

/// Glorot weights with α drawn away from zero so mixing is non-uniform.
pub fn random_params(spec: &ModelSpec, rng: &mut ChaCha8Rng) -> ModelParams {
    let mut p = ModelParams::init(spec, rng.random()).unwrap();
    if let Some(a) = &mut p.alpha {
        a.iter_mut().for_each(|x| *x = rng.random_range(-1.5..1.5));
    }
    p
}

pub fn random_frame(spec: &ModelSpec, rng: &mut ChaCha8Rng) -> Frame {
    Frame {
        inputs: spec
            .branches
            .iter()
            .map(|b| {
                let data = (0..b.timesteps * b.channels).map(|_| rng.random_range(-1.0..1.0)).collect();
                Matrix::from_vec(b.timesteps, b.channels, data).unwrap()
            })
            .collect(),
    }
}
