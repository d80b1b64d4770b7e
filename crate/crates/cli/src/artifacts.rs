use std::fs;
use std::path::{Path, PathBuf};

use har_core::daqsim::Recording;
use har_core::netgraph::ModelFile;
use har_core::quantizer::QuantizedModel;
use har_core::schema::SchemaError;
use serde_json::{json, Value};

use crate::{CmdError, PipelineConfig};

/// File and directory names inside a run's output directory.
pub mod names {
    pub const DATASET: &str = "dataset";
    pub const MODEL: &str = "model.json";
    pub const TRAIN_HISTORY: &str = "train_history.csv";
    pub const IMPORTANCE: &str = "importance.json";
    pub const MODEL_SELECTED: &str = "model_selected.json";
    pub const SELECT_HISTORY: &str = "select_history.csv";
    pub const QMODEL: &str = "qmodel.json";
    pub const SWEEP: &str = "sweep.csv";
    pub const PREDICTIONS: &str = "predictions.csv";
    pub const LABELS: &str = "labels.csv";
    pub const CYCLES: &str = "cycles.json";
    pub const REPORT: &str = "report.csv";
}

fn tmp_path(path: &Path) -> PathBuf {
    let name = path.file_name().map_or_else(|| "out".into(), |n| n.to_string_lossy().into_owned());
    path.with_file_name(format!(".{name}.tmp"))
}

/// Write through a sibling temporary file and rename into place, so a
/// failed run never leaves a truncated artifact behind.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<(), CmdError> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir).map_err(|e| CmdError::io(dir, e))?;
    }
    let tmp = tmp_path(path);
    fs::write(&tmp, bytes).map_err(|e| CmdError::io(&tmp, e))?;
    fs::rename(&tmp, path).map_err(|e| CmdError::io(path, e))
}

pub(crate) fn save_recording(rec: &Recording, dir: &Path) -> Result<(), CmdError> {
    let tmp = tmp_path(dir);
    if tmp.exists() {
        fs::remove_dir_all(&tmp).map_err(|e| CmdError::io(&tmp, e))?;
    }
    rec.save(&tmp)?;
    if dir.exists() {
        fs::remove_dir_all(dir).map_err(|e| CmdError::io(dir, e))?;
    }
    fs::rename(&tmp, dir).map_err(|e| CmdError::io(dir, e))
}

pub(crate) fn provenance(cfg: &PipelineConfig, command: &str) -> Value {
    json!({
        "tool": "har",
        "tool_version": env!("CARGO_PKG_VERSION"),
        "command": command,
        "seed": cfg.seed,
        "config": cfg,
    })
}

/// Comment lines that open every CSV artifact.
pub(crate) fn csv_header(cfg: &PipelineConfig, command: &str) -> String {
    format!(
        "# har {command} seed={}\n# config={}\n",
        cfg.seed,
        serde_json::to_string(cfg).expect("config serializes")
    )
}

fn read(path: &Path) -> Result<String, CmdError> {
    if !path.exists() {
        return Err(CmdError::Missing(path.to_path_buf()));
    }
    fs::read_to_string(path).map_err(|e| CmdError::io(path, e))
}

fn schema_err(path: &Path) -> impl FnOnce(SchemaError) -> CmdError + '_ {
    move |source| CmdError::Schema {
        path: path.to_path_buf(),
        source,
    }
}

pub(crate) fn load_model(path: &Path) -> Result<ModelFile, CmdError> {
    ModelFile::from_json(&read(path)?).map_err(schema_err(path))
}

pub(crate) fn load_qmodel(path: &Path) -> Result<QuantizedModel, CmdError> {
    QuantizedModel::from_json(&read(path)?).map_err(schema_err(path))
}

pub(crate) fn load_recording(dir: &Path) -> Result<Recording, CmdError> {
    if !dir.join(har_core::daqsim::MANIFEST_FILE).exists() {
        return Err(CmdError::Missing(dir.to_path_buf()));
    }
    Ok(Recording::load(dir)?)
}

pub(crate) fn to_json_bytes<T: serde::Serialize>(v: &T) -> Vec<u8> {
    let mut s = serde_json::to_string_pretty(v).expect("artifact serializes");
    s.push('\n');
    s.into_bytes()
}
