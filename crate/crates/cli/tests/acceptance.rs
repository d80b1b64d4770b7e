//! Acceptance criteria for the whole pipeline. Prints one PASS/FAIL line per
//! criterion and exits non-zero if any fails.

#[path = "../../core/tests/common/mod.rs"]
mod common;

use std::collections::BTreeMap;
use std::fs;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::{Duration, Instant};

use common::oracle::reference;
use common::{random_frame, random_params, random_spec};
use har_cli::{cmd_gen_data, cmd_select, cmd_sweep, cmd_train, run_pipeline, PipelineConfig};
use har_core::daqsim::{physical_sensors, start_sync, Constant, SourceConfig, WindowConfig};
use har_core::engine::{estimate_resources, model_cycles, qforward, qinfer, schedule_latency, CostModel, Schedule};
use har_core::netgraph::{count_params, forward_trace, BranchSpec, ConvDim, FusionMode, ModelParams, ModelSpec};
use har_core::quantizer::{calibrate, quantize, QuantConfig, QuantizedModel};
use har_core::rng::{substream, Stream};
use har_core::trainer::{backward, loss_ce, Sample};
use rand::Rng;
use rand_chacha::ChaCha8Rng;

type Outcome = Result<String, String>;

fn smoke() -> PipelineConfig {
    let path = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs/smoke.json");
    PipelineConfig::load(&path).expect("smoke config loads").resolved()
}

fn check(ok: bool, detail: String) -> Outcome {
    if ok {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn within(start: Instant, limit: Duration, detail: String) -> Outcome {
    let took = start.elapsed();
    check(took < limit, format!("{detail}; {:.1} s of {} s allowed", took.as_secs_f64(), limit.as_secs()))
}

fn mean_loss(spec: &ModelSpec, p: &ModelParams, batch: &[Sample]) -> f64 {
    batch
        .iter()
        .map(|s| loss_ce(&forward_trace(spec, p, &s.frame).unwrap().logits, s.label).unwrap())
        .sum::<f64>()
        / batch.len() as f64
}

fn gradient_check() -> Outcome {
    let start = Instant::now();
    let mut rng = substream(11, Stream::Sampling);
    let h = 1e-5;
    let mut worst: f64 = 0.0;
    let mut checked = 0;
    for _ in 0..20 {
        let spec = random_spec(&mut rng);
        let p = random_params(&spec, &mut rng);
        let batch: Vec<Sample> = (0..2)
            .map(|_| Sample {
                frame: random_frame(&spec, &mut rng),
                label: rng.random_range(0..spec.classes),
            })
            .collect();
        let (_, g) = backward(&spec, &p, &batch).map_err(|e| e.to_string())?;
        let (theta, grad) = (p.flat(), g.flat());
        let mut q = p.clone();
        for i in 0..theta.len() {
            let mut t = theta.clone();
            t[i] += h;
            q.set_flat(&t);
            let up = mean_loss(&spec, &q, &batch);
            t[i] -= 2.0 * h;
            q.set_flat(&t);
            let down = mean_loss(&spec, &q, &batch);
            let fd = (up - down) / (2.0 * h);
            let denom = fd.abs().max(grad[i].abs()).max(1e-6);
            worst = worst.max((fd - grad[i]).abs() / denom);
            checked += 1;
        }
    }
    let detail = format!("20 models, {checked} partials, worst relative error {worst:.2e} (limit 1e-4)");
    if worst >= 1e-4 {
        return Err(detail);
    }
    within(start, Duration::from_secs(60), detail)
}

fn random_qmodel(rng: &mut ChaCha8Rng, n_bits: u32) -> QuantizedModel {
    loop {
        let spec = random_spec(rng);
        let params = random_params(&spec, rng);
        let calib: Vec<_> = (0..4).map(|_| random_frame(&spec, rng)).collect();
        let Ok(stats) = calibrate(&spec, &params, &calib) else { continue };
        if let Ok(qm) = quantize(&spec, &params, &stats, &QuantConfig { n_bits, acc_bits: None }) {
            return qm;
        }
    }
}

fn oracle_equivalence() -> Outcome {
    let start = Instant::now();
    let mut rng = substream(99, Stream::Sampling);
    let mut mismatches = 0;
    for _ in 0..1000 {
        let n = rng.random_range(4..=14);
        let qm = random_qmodel(&mut rng, n);
        let frame = qm.quantize_frame(&random_frame(&qm.spec, &mut rng)).unwrap();
        let agree = match (reference(&qm, &frame), qforward(&qm, &frame)) {
            (Ok((logits, class)), Ok(tr)) => {
                tr.logits == logits
                    && tr.class == class
                    && Schedule::ALL
                        .iter()
                        .all(|&s| qinfer(&qm, &frame, s).map(|r| r.0).ok() == Some(class))
            }
            _ => false,
        };
        mismatches += usize::from(!agree);
    }
    let detail = format!("1000 random (model, weights, frame) triples, n in 4..=14, {mismatches} mismatches");
    if mismatches > 0 {
        return Err(detail);
    }
    within(start, Duration::from_secs(120), detail)
}

fn precision_sweep(out: &Path) -> Outcome {
    let start = Instant::now();
    let cfg = smoke();
    run_pipeline(&cfg, out).map_err(|e| e.to_string())?;
    let pts = cmd_sweep(&cfg, out).map_err(|e| e.to_string())?;
    let curve = pts
        .iter()
        .map(|p| format!("{}:{:.3}", p.n_bits, p.ratio))
        .collect::<Vec<_>>()
        .join(" ");
    let high: Vec<_> = pts.iter().filter(|p| p.n_bits >= 12).collect();
    let flat = !high.is_empty() && high.iter().all(|p| (p.ratio - 1.0).abs() <= 0.01);
    let degrades = pts.iter().any(|p| p.n_bits < 8 && p.ratio <= 0.97);
    let detail = format!("ratio by n: {curve}");
    if !(flat && degrades) {
        return Err(format!("{detail}; flat above 12 bits: {flat}, degrades below 8: {degrades}"));
    }
    within(start, Duration::from_secs(600), detail)
}

fn modality_selection() -> Outcome {
    let noise = ["Gas", "Barometric"];
    let mut bottom_hits = 0;
    let mut worst_gap: f64 = f64::NEG_INFINITY;
    for seed in 0..10 {
        let dir = tempfile::tempdir().unwrap();
        let cfg = PipelineConfig { seed, ..smoke() }.resolved();
        cmd_gen_data(&cfg, dir.path()).map_err(|e| e.to_string())?;
        let full = cmd_train(&cfg, dir.path()).map_err(|e| e.to_string())?;
        let sel = cmd_select(&cfg, dir.path()).map_err(|e| e.to_string())?;
        let tail = &sel.ranking[sel.ranking.len() - 2..];
        if noise.iter().all(|n| tail.iter().any(|t| t == n)) {
            bottom_hits += 1;
        }
        worst_gap = worst_gap.max(full.test_accuracy - sel.test_accuracy);
    }
    check(
        bottom_hits >= 9 && worst_gap <= 0.02,
        format!(
            "noise sensors ranked last in {bottom_hits}/10 seeds (need 9); largest accuracy drop after selection {worst_gap:.3} (limit 0.02)"
        ),
    )
}

fn uniform_spec(branches: Vec<BranchSpec>) -> ModelSpec {
    ModelSpec {
        branches,
        hidden: 16,
        classes: 10,
        fusion: FusionMode::FeatureFusion,
        alpha: false,
    }
}

fn schedule_composition() -> Outcome {
    let mut rng = substream(5, Stream::Sampling);
    let mut bad = 0;
    for _ in 0..100 {
        let k = rng.random_range(1..=8);
        let cycles: Vec<u64> = (0..k).map(|_| rng.random_range(1..1_000_000)).collect();
        let dense = rng.random_range(0..10_000);
        let clock = rng.random_range(1e6..1e9);
        let s = schedule_latency(&cycles, dense, Schedule::Serial, clock).unwrap();
        let p = schedule_latency(&cycles, dense, Schedule::Parallel, clock).unwrap();
        let sum = cycles.iter().sum::<u64>() + dense;
        let max = cycles.iter().max().unwrap() + dense;
        if s.total_cycles != sum || p.total_cycles != max || s.latency_s != sum as f64 / clock {
            bad += 1;
        }
    }
    let spec = uniform_spec((0..4).map(|i| BranchSpec::uniform(&format!("s{i}"), 6, 20, ConvDim::D1, 8, 3)).collect());
    let cost = CostModel::default();
    let serial = model_cycles(&spec, Schedule::Serial, &cost).unwrap().total_cycles;
    let parallel = model_cycles(&spec, Schedule::Parallel, &cost).unwrap().total_cycles;
    let ratio = serial as f64 / parallel as f64;
    check(
        bad == 0 && ratio > 2.0 && ratio < 4.0,
        format!("{bad}/100 random compositions disagree with sum/max; four equal branches serial/parallel = {ratio:.3}"),
    )
}

fn resource_scaling() -> Outcome {
    let cfg = smoke();
    let spec = cfg.model_spec().map_err(|e| e.to_string())?;
    let cost = cfg.cost_model();
    let mut notes = Vec::new();
    let mut ok = true;
    for s in Schedule::ALL {
        let units = |w| estimate_resources(&spec, s, w, &cost).unwrap().multiplier_units;
        let base = units(2);
        let flat = (2..=9).all(|w| units(w) == base);
        let doubled = (10..=18).all(|w| units(w) == 2 * base);
        let mem = |w| estimate_resources(&spec, s, w, &cost).unwrap().memory_bits;
        let (m9, m11) = (mem(9), mem(11));
        let linear = m11 * 9 == m9 * 11;
        let rel = (m11 as f64 / m9 as f64) / (11440.0 / 9306.0) - 1.0;
        ok &= flat && doubled && linear && rel.abs() <= 0.02;
        notes.push(format!(
            "{s:?}: {base} multipliers up to 9 bits, doubled to 18: {doubled}; memory 11/9 = {:.4} ({:+.2}% from reference)",
            m11 as f64 / m9 as f64,
            rel * 100.0
        ));
    }
    check(ok, notes.join("; "))
}

fn acquisition_timing() -> Outcome {
    let sources = || {
        physical_sensors()
            .into_iter()
            .map(|s| {
                let v = vec![s.min; s.channels];
                SourceConfig::new(s, Constant(v))
            })
            .collect::<Vec<_>>()
    };
    let first_frame = |cfg: &WindowConfig| -> Option<u64> {
        let mut session = start_sync(sources(), 1).ok()?;
        let mut first = None;
        session
            .run(cfg, cfg.first_frame_ns(), |f| {
                first.get_or_insert(f.end_ns);
            })
            .ok()?;
        first
    };
    let imu = WindowConfig::from_timesteps(20, 119.0);
    let common = smoke().window_config();
    let fast = first_frame(&imu);
    let slow = first_frame(&WindowConfig::from_timesteps(20, 6.0));
    let mut session = start_sync(sources(), 1).map_err(|e| e.to_string())?;
    let sum = session.run(&common, 600_000_000_000, |_| {}).map_err(|e| e.to_string())?;
    let conserved = sum.stats.iter().all(|s| s.conserved());
    check(
        fast == Some(168_067_227) && slow == Some(3_333_333_333) && conserved,
        format!(
            "first frame at {:?} ns for 20 rows at 119 Hz, {:?} ns for 20 rows at 6 Hz; sample conservation over 10 min: {conserved}",
            fast, slow
        ),
    )
}

fn fusion_parameters() -> Outcome {
    let spec = uniform_spec(vec![
        BranchSpec::uniform("Thermal IR", 768, 20, ConvDim::D2, 8, 3),
        BranchSpec::uniform("Motion", 6, 20, ConvDim::D1, 8, 3),
        BranchSpec::uniform("Gas", 2, 20, ConvDim::D1, 8, 3),
        BranchSpec::uniform("ToF", 1, 20, ConvDim::D1, 8, 3),
    ]);
    let counterpart = spec.data_fusion_counterpart().map_err(|e| e.to_string())?;
    let feature = count_params(&spec).map_err(|e| e.to_string())?;
    let data = count_params(&counterpart).map_err(|e| e.to_string())?;
    let ratio = data as f64 / feature as f64;
    check(
        ratio > 5.0,
        format!("data fusion {data} weights vs feature fusion {feature}: {ratio:.2}x (need > 5)"),
    )
}

fn tree(root: &Path) -> BTreeMap<PathBuf, Vec<u8>> {
    let mut out = BTreeMap::new();
    let mut stack = vec![root.to_path_buf()];
    while let Some(dir) = stack.pop() {
        for e in fs::read_dir(&dir).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else {
                out.insert(p.strip_prefix(root).unwrap().to_path_buf(), fs::read(&p).unwrap());
            }
        }
    }
    out
}

fn reproducibility(first: &Path) -> Outcome {
    let again = tempfile::tempdir().unwrap();
    run_pipeline(&smoke(), again.path()).map_err(|e| e.to_string())?;
    let (a, b) = (tree(first), tree(again.path()));
    let differing: Vec<_> = a
        .keys()
        .chain(b.keys())
        .filter(|k| a.get(*k) != b.get(*k))
        .map(|k| k.display().to_string())
        .collect();
    check(
        differing.is_empty() && !a.is_empty(),
        format!("{} artifacts compared, differing: {differing:?}", a.len()),
    )
}

fn main() -> ExitCode {
    let run_dir = tempfile::tempdir().unwrap();
    let first = run_dir.path().to_path_buf();
    let criteria: Vec<(&str, Box<dyn Fn() -> Outcome>)> = vec![
        ("analytic gradients match central differences", Box::new(gradient_check)),
        ("integer engine matches the reference evaluator", Box::new(oracle_equivalence)),
        ("accuracy ratio across precisions", Box::new({
            let d = first.clone();
            move || precision_sweep(&d)
        })),
        ("importance ranking and retrained accuracy", Box::new(modality_selection)),
        ("serial and parallel latency composition", Box::new(schedule_composition)),
        ("multiplier and memory scaling with width", Box::new(resource_scaling)),
        ("acquisition frame timing and conservation", Box::new(acquisition_timing)),
        ("feature fusion parameter savings", Box::new(fusion_parameters)),
        ("byte-identical reruns", Box::new({
            let d = first.clone();
            move || reproducibility(&d)
        })),
    ];
    let mut failed = 0;
    for (i, (name, f)) in criteria.iter().enumerate() {
        let outcome = catch_unwind(AssertUnwindSafe(f)).unwrap_or_else(|_| Err("panicked".into()));
        let (tag, detail) = match outcome {
            Ok(d) => ("PASS", d),
            Err(d) => {
                failed += 1;
                ("FAIL", d)
            }
        };
        println!("{tag} criterion {}: {name}: {detail}", i + 1);
    }
    println!("{} of {} criteria passed", criteria.len() - failed, criteria.len());
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
