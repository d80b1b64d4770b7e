use serde::{Deserialize, Serialize};

use super::{model_cycles, CostModel, EngineError, Schedule};
use crate::netgraph::{count_params, ModelSpec};

/// Width of one embedded hardware multiplier input.
pub const MULTIPLIER_BITS: u32 = 9;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ResourceReport {
    pub schedule: Schedule,
    pub stored_width: u32,
    pub weight_words: usize,
    pub buffer_words: usize,
    pub memory_bits: u64,
    pub mac_lanes: usize,
    pub multiplier_units: usize,
}

/// Memory and multiplier estimate for `spec` at `stored_width` bits.
///
/// Every branch keeps its sensor window. Feature maps get their own buffers
/// in parallel mode and share the largest branch's buffer in serial mode.
/// Lanes follow the same rule, and the dense unit reuses the conv lanes.
pub fn estimate_resources(
    spec: &ModelSpec,
    schedule: Schedule,
    stored_width: u32,
    cost: &CostModel,
) -> Result<ResourceReport, EngineError> {
    if stored_width < 2 {
        return Err(EngineError::Shape(format!("stored width {stored_width} below 2")));
    }
    let graph = |e: crate::netgraph::GraphError| EngineError::Shape(e.to_string());
    let weight_words = count_params(spec).map_err(graph)?;
    let mut inputs = 0;
    let mut maps = Vec::with_capacity(spec.branches.len());
    let mut lanes = Vec::with_capacity(spec.branches.len());
    for b in &spec.branches {
        let geo = b.geometry().map_err(graph)?;
        inputs += b.input_words();
        maps.push(geo.iter().map(|g| g.output_words()).sum::<usize>());
        lanes.push(geo.iter().map(|g| g.filters).max().unwrap_or(0));
    }
    let combine = |v: &[usize]| match schedule {
        Schedule::Serial => v.iter().copied().max().unwrap_or(0),
        Schedule::Parallel => v.iter().sum(),
    };
    let head = spec.dense_input() + spec.hidden + spec.classes;
    let buffer_words = inputs + combine(&maps) + head;
    let mac_lanes = combine(&lanes).max(cost.dense_lanes.unwrap_or(spec.hidden));
    Ok(ResourceReport {
        schedule,
        stored_width,
        weight_words,
        buffer_words,
        memory_bits: (weight_words + buffer_words) as u64 * stored_width as u64,
        mac_lanes,
        multiplier_units: mac_lanes * stored_width.div_ceil(MULTIPLIER_BITS) as usize,
    })
}

/// One row of the precision × schedule comparison table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TableRow {
    pub n_bits: u32,
    pub stored_width: u32,
    pub schedule: Schedule,
    pub total_cycles: u64,
    pub latency_ms: f64,
    pub throughput: f64,
    pub memory_bits: u64,
    pub multiplier_units: usize,
}

/// Rows for every `(stored width, schedule)` pair, width-major. Widths
/// include the sign bit, so width `w` holds `w - 1` magnitude bits.
pub fn report_rows(
    spec: &ModelSpec,
    widths: &[u32],
    schedules: &[Schedule],
    cost: &CostModel,
) -> Result<Vec<TableRow>, EngineError> {
    let mut rows = Vec::new();
    for &w in widths {
        for &schedule in schedules {
            let cyc = model_cycles(spec, schedule, cost)?;
            let res = estimate_resources(spec, schedule, w, cost)?;
            rows.push(TableRow {
                n_bits: w - 1,
                stored_width: w,
                schedule,
                total_cycles: cyc.total_cycles,
                latency_ms: cyc.latency_s * 1e3,
                throughput: cyc.throughput,
                memory_bits: res.memory_bits,
                multiplier_units: res.multiplier_units,
            });
        }
    }
    Ok(rows)
}

pub fn table_csv(rows: &[TableRow]) -> String {
    let mut s = String::from("n_bits,stored_width,schedule,total_cycles,latency_ms,throughput_labels_per_s,memory_bits,multiplier_units\n");
    for r in rows {
        s.push_str(&format!(
            "{},{},{},{},{},{},{},{}\n",
            r.n_bits, r.stored_width, r.schedule, r.total_cycles, r.latency_ms, r.throughput, r.memory_bits, r.multiplier_units
        ));
    }
    s
}
