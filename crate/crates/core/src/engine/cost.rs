use serde::{Deserialize, Serialize};

use super::{EngineError, Schedule};
use crate::netgraph::{GraphError, ModelSpec};

/// Parameters of the analytic cycle model.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CostModel {
    /// Pipeline fill/drain cycles added per layer.
    pub kappa: u64,
    pub clock_hz: f64,
    /// MAC lanes of the dense unit; defaults to the hidden width.
    #[serde(default)]
    pub dense_lanes: Option<usize>,
}

impl Default for CostModel {
    fn default() -> Self {
        Self {
            kappa: 2,
            clock_hz: 100e6,
            dense_lanes: None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LayerCost {
    /// Output channels run in parallel lanes; input channels and kernel taps
    /// are stepped.
    Conv {
        in_channels: usize,
        positions: usize,
        kernel_size: usize,
    },
    Dense { inputs: usize, outputs: usize, lanes: usize },
}

pub fn cycle_cost(layer: LayerCost, kappa: u64) -> u64 {
    let work = match layer {
        LayerCost::Conv {
            in_channels,
            positions,
            kernel_size,
        } => (in_channels * positions * kernel_size) as u64,
        LayerCost::Dense { inputs, outputs, lanes } => ((inputs * outputs) as u64).div_ceil(lanes.max(1) as u64),
    };
    work + kappa
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CycleReport {
    pub schedule: Schedule,
    pub clock_hz: f64,
    /// Per-branch per-layer cycles; empty when built from totals only.
    pub layer_cycles: Vec<Vec<u64>>,
    pub branch_cycles: Vec<u64>,
    pub dense_cycles: u64,
    pub total_cycles: u64,
    pub latency_s: f64,
    pub throughput: f64,
}

/// Compose branch and dense cycles: serial sums the branches, parallel
/// takes the slowest.
pub fn schedule_latency(
    branch_cycles: &[u64],
    dense_cycles: u64,
    schedule: Schedule,
    clock_hz: f64,
) -> Result<CycleReport, EngineError> {
    if branch_cycles.is_empty() {
        return Err(EngineError::NoBranches);
    }
    if !(clock_hz.is_finite() && clock_hz > 0.0) {
        return Err(EngineError::Clock(clock_hz));
    }
    let branches = match schedule {
        Schedule::Serial => branch_cycles.iter().sum::<u64>(),
        Schedule::Parallel => branch_cycles.iter().copied().max().unwrap_or(0),
    };
    let total = branches + dense_cycles;
    Ok(CycleReport {
        schedule,
        clock_hz,
        layer_cycles: Vec::new(),
        branch_cycles: branch_cycles.to_vec(),
        dense_cycles,
        total_cycles: total,
        latency_s: total as f64 / clock_hz,
        throughput: if total == 0 { f64::INFINITY } else { clock_hz / total as f64 },
    })
}

/// Cycle report for a whole model.
pub fn model_cycles(spec: &ModelSpec, schedule: Schedule, cost: &CostModel) -> Result<CycleReport, EngineError> {
    let graph = |e: GraphError| EngineError::Shape(e.to_string());
    let mut layer_cycles = Vec::with_capacity(spec.branches.len());
    for b in &spec.branches {
        let geo = b.geometry().map_err(graph)?;
        layer_cycles.push(
            geo.iter()
                .map(|g| {
                    cycle_cost(
                        LayerCost::Conv {
                            in_channels: g.in_c,
                            positions: g.conv_positions(),
                            kernel_size: g.taps(),
                        },
                        cost.kappa,
                    )
                })
                .collect::<Vec<_>>(),
        );
    }
    let lanes = cost.dense_lanes.unwrap_or(spec.hidden);
    let dense = cycle_cost(
        LayerCost::Dense {
            inputs: spec.dense_input(),
            outputs: spec.hidden,
            lanes,
        },
        cost.kappa,
    ) + cycle_cost(
        LayerCost::Dense {
            inputs: spec.hidden,
            outputs: spec.classes,
            lanes,
        },
        cost.kappa,
    );
    let totals: Vec<u64> = layer_cycles.iter().map(|l| l.iter().sum()).collect();
    let mut report = schedule_latency(&totals, dense, schedule, cost.clock_hz)?;
    report.layer_cycles = layer_cycles;
    Ok(report)
}
