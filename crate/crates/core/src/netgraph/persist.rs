use serde::{Deserialize, Serialize};

use super::{ModelParams, ModelSpec, NormStats};
use crate::schema::{self, SchemaError, Versioned};

pub const MODEL_FORMAT: &str = "har-model";
pub const MODEL_VERSION: u32 = 1;

/// On-disk FP model: architecture, weights as nested arrays, the input
/// normalization ranges, and free-form provenance.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelFile {
    pub format: String,
    pub version: u32,
    pub spec: ModelSpec,
    pub params: ModelParams,
    pub norm: Vec<NormStats>,
    #[serde(default)]
    pub provenance: serde_json::Value,
}

impl Versioned for ModelFile {
    const FORMAT: &'static str = MODEL_FORMAT;
    const VERSION: u32 = MODEL_VERSION;
}

impl ModelFile {
    pub fn new(spec: ModelSpec, params: ModelParams, norm: Vec<NormStats>, provenance: serde_json::Value) -> Self {
        Self {
            format: MODEL_FORMAT.into(),
            version: MODEL_VERSION,
            spec,
            params,
            norm,
            provenance,
        }
    }

    pub fn to_json(&self) -> Result<String, SchemaError> {
        schema::to_json(self)
    }

    pub fn from_json(text: &str) -> Result<Self, SchemaError> {
        let m: Self = schema::from_json(text)?;
        m.spec.validate().map_err(|e| SchemaError::Invalid(e.to_string()))?;
        m.params.check(&m.spec).map_err(|e| SchemaError::Invalid(e.to_string()))?;
        Ok(m)
    }
}
