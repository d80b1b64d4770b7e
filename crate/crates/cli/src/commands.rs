use std::fmt;
use std::path::{Path, PathBuf};

use har_core::daqsim::{gen_dataset, start_sync, DaqEvent, LabeledWindow, Recording, Replay, SensorSpec, SourceConfig};
use har_core::engine::{qinfer_with, report_rows, table_csv, CycleReport, Schedule};
use har_core::netgraph::{forward, normalize_inputs, ModelFile, ModelSpec, NormStats};
use har_core::quantizer::{calibrate, quantize, sweep_bits, sweep_csv, QuantConfig};
use har_core::trainer::{accuracy, select_and_retrain, train, Sample};
use serde_json::{json, Value};

use crate::artifacts::{
    csv_header, load_model, load_qmodel, load_recording, names, provenance, save_recording, to_json_bytes, write_atomic,
};
use crate::{CmdError, PipelineConfig};

/// Labelled windows of the recording, split by activity segment so that no
/// segment contributes to two splits.
struct Splits {
    train: Vec<LabeledWindow>,
    val: Vec<LabeledWindow>,
    test: Vec<LabeledWindow>,
}

fn load_data(cfg: &PipelineConfig, out: &Path) -> Result<(Recording, Splits), CmdError> {
    let dir = out.join(names::DATASET);
    let rec = load_recording(&dir)?;
    if rec.config != cfg.gen_config() || rec.sensors != cfg.sensors {
        return Err(CmdError::Stale {
            path: dir,
            msg: "dataset was generated from a different configuration; rerun gen-data".into(),
        });
    }
    let mut s = Splits {
        train: Vec::new(),
        val: Vec::new(),
        test: Vec::new(),
    };
    for w in rec.windows(&cfg.window_config())? {
        match (w.start_ns / rec.config.segment_ns) % 5 {
            0 => s.test.push(w),
            1 => s.val.push(w),
            _ => s.train.push(w),
        }
    }
    if s.train.is_empty() || s.test.is_empty() {
        return Err(CmdError::Config("dataset too small to split into train and test windows".into()));
    }
    Ok((rec, s))
}

fn observe_norm(sensors: &[SensorSpec], train: &[LabeledWindow]) -> Vec<NormStats> {
    sensors
        .iter()
        .enumerate()
        .map(|(i, s)| NormStats::observe(&s.name, train.iter().map(|w| &w.windows[i])))
        .collect()
}

/// Normalized frames for `spec`, picking each branch's sensor by name.
fn samples(spec: &ModelSpec, norm: &[NormStats], sensors: &[SensorSpec], windows: &[LabeledWindow]) -> Result<Vec<Sample>, CmdError> {
    let idx = branch_sensors(spec, sensors)?;
    windows
        .iter()
        .map(|w| {
            let raw: Vec<_> = idx.iter().map(|&i| w.windows[i].clone()).collect();
            Ok(Sample {
                frame: normalize_inputs(&raw, norm)?,
                label: w.label,
            })
        })
        .collect()
}

fn branch_sensors(spec: &ModelSpec, sensors: &[SensorSpec]) -> Result<Vec<usize>, CmdError> {
    spec.branches
        .iter()
        .map(|b| {
            sensors
                .iter()
                .position(|s| s.name == b.sensor)
                .ok_or_else(|| CmdError::Config(format!("model branch '{}' has no sensor in the dataset", b.sensor)))
        })
        .collect()
}

fn with_metrics(mut prov: Value, metrics: Value) -> Value {
    prov["metrics"] = metrics;
    prov
}

fn active_model(cfg: &PipelineConfig, out: &Path) -> PathBuf {
    out.join(if cfg.select.use_selected {
        names::MODEL_SELECTED
    } else {
        names::MODEL
    })
}

fn history_csv(cfg: &PipelineConfig, command: &str, h: &har_core::trainer::History) -> String {
    csv_header(cfg, command) + &h.to_csv()
}

/// Synthesize the labelled recording into `<out>/dataset`.
pub fn cmd_gen_data(cfg: &PipelineConfig, out: &Path) -> Result<PathBuf, CmdError> {
    cfg.validate()?;
    let mut rec = gen_dataset(&cfg.sensors, &cfg.gen_config())?;
    rec.provenance = provenance(cfg, "gen-data");
    let dir = out.join(names::DATASET);
    save_recording(&rec, &dir)?;
    Ok(dir)
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainOutcome {
    pub train_windows: usize,
    pub test_windows: usize,
    pub test_accuracy: f64,
}

impl fmt::Display for TrainOutcome {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "trained on {} windows; test accuracy {:.4} over {} windows",
            self.train_windows, self.test_accuracy, self.test_windows
        )
    }
}

/// Train the full feature-fusion model.
pub fn cmd_train(cfg: &PipelineConfig, out: &Path) -> Result<TrainOutcome, CmdError> {
    cfg.validate()?;
    let spec = cfg.model_spec()?;
    let (rec, sp) = load_data(cfg, out)?;
    let norm = observe_norm(&rec.sensors, &sp.train);
    let tr = samples(&spec, &norm, &rec.sensors, &sp.train)?;
    let va = samples(&spec, &norm, &rec.sensors, &sp.val)?;
    let te = samples(&spec, &norm, &rec.sensors, &sp.test)?;
    let (params, history) = train(&spec, &tr, &va, &cfg.train)?;
    let test_accuracy = accuracy(&spec, &params, &te)?;
    let prov = with_metrics(provenance(cfg, "train"), json!({ "test_accuracy": test_accuracy }));
    let file = ModelFile::new(spec, params, norm, prov);
    let text = file.to_json().map_err(|source| CmdError::Schema {
        path: out.join(names::MODEL),
        source,
    })?;
    write_atomic(&out.join(names::TRAIN_HISTORY), history_csv(cfg, "train", &history).as_bytes())?;
    write_atomic(&out.join(names::MODEL), text.as_bytes())?;
    Ok(TrainOutcome {
        train_windows: tr.len(),
        test_windows: te.len(),
        test_accuracy,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct SelectOutcome {
    /// Sensor names by descending importance.
    pub ranking: Vec<String>,
    pub kept: Vec<String>,
    pub test_accuracy: f64,
}

impl fmt::Display for SelectOutcome {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "ranking {}; kept {}; retrained test accuracy {:.4}",
            self.ranking.join(" > "),
            self.kept.join(", "),
            self.test_accuracy
        )
    }
}

/// Rank sensors by learned importance, keep the top `select.keep`, retrain.
pub fn cmd_select(cfg: &PipelineConfig, out: &Path) -> Result<SelectOutcome, CmdError> {
    cfg.validate()?;
    let spec = cfg.model_spec()?;
    let (rec, sp) = load_data(cfg, out)?;
    let norm = observe_norm(&rec.sensors, &sp.train);
    let tr = samples(&spec, &norm, &rec.sensors, &sp.train)?;
    let va = samples(&spec, &norm, &rec.sensors, &sp.val)?;
    let o = select_and_retrain(&spec, &tr, &va, &cfg.train, cfg.select.keep)?;
    let kept_norm: Vec<NormStats> = norm.iter().filter(|n| o.kept.contains(&n.sensor)).cloned().collect();
    let te = samples(&o.spec, &kept_norm, &rec.sensors, &sp.test)?;
    let test_accuracy = accuracy(&o.spec, &o.params, &te)?;
    let ranking: Vec<String> = o.report.ranked_names().into_iter().map(String::from).collect();
    let report = json!({
        "provenance": provenance(cfg, "select"),
        "importance": o.report,
        "ranked_sensors": ranking,
        "kept": o.kept,
        "test_accuracy": test_accuracy,
    });
    let prov = with_metrics(provenance(cfg, "select"), json!({ "test_accuracy": test_accuracy }));
    let file = ModelFile::new(o.spec, o.params, kept_norm, prov);
    let text = file.to_json().map_err(|source| CmdError::Schema {
        path: out.join(names::MODEL_SELECTED),
        source,
    })?;
    write_atomic(&out.join(names::SELECT_HISTORY), history_csv(cfg, "select", &o.history).as_bytes())?;
    write_atomic(&out.join(names::IMPORTANCE), &to_json_bytes(&report))?;
    write_atomic(&out.join(names::MODEL_SELECTED), text.as_bytes())?;
    Ok(SelectOutcome {
        ranking,
        kept: o.kept,
        test_accuracy,
    })
}

fn calibration_set(cfg: &PipelineConfig, model: &ModelFile, rec: &Recording, sp: &Splits) -> Result<Vec<Sample>, CmdError> {
    let n = match cfg.quant.calib_frames {
        0 => sp.train.len(),
        n => n.min(sp.train.len()),
    };
    samples(&model.spec, &model.norm, &rec.sensors, &sp.train[..n])
}

/// Quantize the active model at `quant.n_bits`.
pub fn cmd_quantize(cfg: &PipelineConfig, out: &Path) -> Result<PathBuf, CmdError> {
    cfg.validate()?;
    let model = load_model(&active_model(cfg, out))?;
    let (rec, sp) = load_data(cfg, out)?;
    let calib = calibration_set(cfg, &model, &rec, &sp)?;
    let stats = calibrate(&model.spec, &model.params, calib.iter().map(|s| &s.frame))?;
    let qcfg = QuantConfig {
        n_bits: cfg.quant.n_bits,
        acc_bits: cfg.quant.acc_bits,
    };
    let mut qm = quantize(&model.spec, &model.params, &stats, &qcfg)?;
    qm.norm = model.norm.clone();
    qm.provenance = provenance(cfg, "quantize");
    let path = out.join(names::QMODEL);
    let text = qm.to_json().map_err(|source| CmdError::Schema {
        path: path.clone(),
        source,
    })?;
    write_atomic(&path, text.as_bytes())?;
    Ok(path)
}

/// Quantized/FP accuracy ratio over `quant.sweep_bits`.
pub fn cmd_sweep(cfg: &PipelineConfig, out: &Path) -> Result<Vec<har_core::quantizer::SweepPoint>, CmdError> {
    cfg.validate()?;
    let model = load_model(&active_model(cfg, out))?;
    let (rec, sp) = load_data(cfg, out)?;
    let calib = calibration_set(cfg, &model, &rec, &sp)?;
    let test = samples(&model.spec, &model.norm, &rec.sensors, &sp.test)?;
    let points = sweep_bits(&model.spec, &model.params, &calib, &test, &cfg.quant.sweep_bits)?;
    let csv = csv_header(cfg, "sweep") + &sweep_csv(&points);
    write_atomic(&out.join(names::SWEEP), csv.as_bytes())?;
    Ok(points)
}

#[derive(Debug, Clone, PartialEq)]
pub struct InferOutcome {
    pub windows: usize,
    pub fp_accuracy: f64,
    pub q_accuracy: f64,
}

impl fmt::Display for InferOutcome {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{} test windows; FP accuracy {:.4}, integer accuracy {:.4}",
            self.windows, self.fp_accuracy, self.q_accuracy
        )
    }
}

/// Classify the test split with both the FP model and the integer engine.
pub fn cmd_infer(cfg: &PipelineConfig, out: &Path) -> Result<InferOutcome, CmdError> {
    cfg.validate()?;
    let model = load_model(&active_model(cfg, out))?;
    let qm = load_qmodel(&out.join(names::QMODEL))?;
    if qm.spec != model.spec {
        return Err(CmdError::Stale {
            path: out.join(names::QMODEL),
            msg: "quantized model was built from a different model; rerun quantize".into(),
        });
    }
    let (rec, sp) = load_data(cfg, out)?;
    let test = samples(&model.spec, &model.norm, &rec.sensors, &sp.test)?;
    let cost = cfg.cost_model();
    let mut csv = csv_header(cfg, "infer") + "start_ns,label,fp_class,q_class\n";
    let (mut fp_hits, mut q_hits) = (0usize, 0usize);
    for (w, s) in sp.test.iter().zip(&test) {
        let (_, fp) = forward(&model.spec, &model.params, &s.frame)?;
        let (q, _) = qinfer_with(&qm, &qm.quantize_frame(&s.frame)?, cfg.hardware.schedule, &cost)?;
        fp_hits += usize::from(fp == s.label);
        q_hits += usize::from(q == s.label);
        csv.push_str(&format!("{},{},{},{}\n", w.start_ns, s.label, fp, q));
    }
    write_atomic(&out.join(names::PREDICTIONS), csv.as_bytes())?;
    let n = test.len() as f64;
    Ok(InferOutcome {
        windows: test.len(),
        fp_accuracy: fp_hits as f64 / n,
        q_accuracy: q_hits as f64 / n,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimulateOutcome {
    /// `(frame end in virtual ns, class)` per emitted frame.
    pub labels: Vec<(u64, usize)>,
    pub cycles: CycleReport,
    pub overflows: usize,
    pub underfills: usize,
}

impl fmt::Display for SimulateOutcome {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{} labels; {} schedule: {} cycles, {:.4} ms per frame, {:.1} labels/s",
            self.labels.len(),
            self.cycles.schedule,
            self.cycles.total_cycles,
            self.cycles.latency_s * 1e3,
            self.cycles.throughput
        )
    }
}

/// Replay the recording through the acquisition model and label every
/// frame with the integer engine.
pub fn cmd_simulate(cfg: &PipelineConfig, out: &Path) -> Result<SimulateOutcome, CmdError> {
    cfg.validate()?;
    let qm = load_qmodel(&out.join(names::QMODEL))?;
    let rec = load_recording(&out.join(names::DATASET))?;
    let idx = branch_sensors(&qm.spec, &rec.sensors)?;
    let wcfg = cfg.window_config();
    for (b, &i) in qm.spec.branches.iter().zip(&idx) {
        if wcfg.rows_for(rec.sensors[i].rate_hz) != b.timesteps {
            return Err(CmdError::Config(format!(
                "window gives {} rows for '{}' but the model expects {}",
                wcfg.rows_for(rec.sensors[i].rate_hz),
                b.sensor,
                b.timesteps
            )));
        }
    }
    let sources = idx
        .iter()
        .map(|&i| Ok(SourceConfig::new(rec.sensors[i].clone(), Replay::new(rec.streams[i].clone())?)))
        .collect::<Result<Vec<_>, CmdError>>()?;
    let mut session = start_sync(sources, cfg.seed)?;
    let cost = cfg.cost_model();
    let schedule: Schedule = cfg.hardware.schedule;
    let mut labels = Vec::new();
    let mut failure = None;
    let summary = session.run(&wcfg, rec.duration_ns(), |frame| {
        if failure.is_some() {
            return;
        }
        let step = || -> Result<usize, CmdError> {
            let f = normalize_inputs(&frame.windows, &qm.norm)?;
            Ok(qinfer_with(&qm, &qm.quantize_frame(&f)?, schedule, &cost)?.0)
        };
        match step() {
            Ok(c) => labels.push((frame.end_ns, c)),
            Err(e) => failure = Some(e),
        }
    })?;
    if let Some(e) = failure {
        return Err(e);
    }
    let cycles = har_core::engine::model_cycles(&qm.spec, schedule, &cost)?;
    let overflows = summary.events.iter().filter(|e| matches!(e, DaqEvent::Overflow { .. })).count();
    let underfills = summary.events.len() - overflows;
    let mut csv = csv_header(cfg, "simulate") + "t_ns,class\n";
    for (t, c) in &labels {
        csv.push_str(&format!("{t},{c}\n"));
    }
    let doc = json!({
        "provenance": provenance(cfg, "simulate"),
        "frames": labels.len(),
        "cycles": cycles,
        "sensor_stats": summary.stats,
        "overflow_events": overflows,
        "underfill_events": underfills,
    });
    write_atomic(&out.join(names::LABELS), csv.as_bytes())?;
    write_atomic(&out.join(names::CYCLES), &to_json_bytes(&doc))?;
    Ok(SimulateOutcome {
        labels,
        cycles,
        overflows,
        underfills,
    })
}

/// Hardware cost rows for every storage
/// width in `hardware.report_widths` under both schedules.
pub fn cmd_report(cfg: &PipelineConfig, out: &Path) -> Result<Vec<har_core::engine::TableRow>, CmdError> {
    cfg.validate()?;
    let model = load_model(&active_model(cfg, out))?;
    let rows = report_rows(&model.spec, &cfg.hardware.report_widths, &Schedule::ALL, &cfg.cost_model())?;
    let csv = csv_header(cfg, "report") + &table_csv(&rows);
    write_atomic(&out.join(names::REPORT), csv.as_bytes())?;
    Ok(rows)
}

/// Every command in order: gen-data, train, select, quantize, sweep, infer,
/// simulate, report.
pub fn run_pipeline(cfg: &PipelineConfig, out: &Path) -> Result<(), CmdError> {
    cmd_gen_data(cfg, out)?;
    cmd_train(cfg, out)?;
    cmd_select(cfg, out)?;
    cmd_quantize(cfg, out)?;
    cmd_sweep(cfg, out)?;
    cmd_infer(cfg, out)?;
    cmd_simulate(cfg, out)?;
    cmd_report(cfg, out)?;
    Ok(())
}
