//! Versioned JSON documents shared by every persisted artifact.

use serde::de::DeserializeOwned;
use serde::Serialize;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum SchemaError {
    #[error("expected a '{expected}' document, found '{found}'")]
    Format { expected: String, found: String },
    #[error("'{format}' schema version mismatch: expected {expected}, found {found}")]
    Version { format: String, expected: u32, found: u32 },
    #[error("malformed document: {0}")]
    Json(#[from] serde_json::Error),
    #[error("document is inconsistent: {0}")]
    Invalid(String),
}

/// Header fields every document starts with.
pub trait Versioned {
    const FORMAT: &'static str;
    const VERSION: u32;
}

pub fn to_json<T: Serialize>(doc: &T) -> Result<String, SchemaError> {
    let mut s = serde_json::to_string_pretty(doc)?;
    s.push('\n');
    Ok(s)
}

/// Parse a document, checking the header before the body so that version
/// mismatches are reported as such rather than as field errors.
pub fn from_json<T: DeserializeOwned + Versioned>(text: &str) -> Result<T, SchemaError> {
    #[derive(serde::Deserialize)]
    struct Header {
        format: String,
        version: u32,
    }
    let h: Header = serde_json::from_str(text)?;
    if h.format != T::FORMAT {
        return Err(SchemaError::Format {
            expected: T::FORMAT.into(),
            found: h.format,
        });
    }
    if h.version != T::VERSION {
        return Err(SchemaError::Version {
            format: T::FORMAT.into(),
            expected: T::VERSION,
            found: h.version,
        });
    }
    Ok(serde_json::from_str(text)?)
}
