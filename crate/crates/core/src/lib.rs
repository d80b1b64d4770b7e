//! Software model of a multi-sensor human-activity-recognition pipeline:
//! multi-rate acquisition, a branched feature-fusion CNN, branch-aware
//! post-training quantization, and bit-accurate integer inference with
//! cycle and resource accounting.

pub mod daqsim;
pub mod engine;
pub mod fxp;
pub mod netgraph;
pub mod quantizer;
pub mod rng;
pub mod schema;
pub mod trainer;
