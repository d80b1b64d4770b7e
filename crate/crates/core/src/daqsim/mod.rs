//! Event-driven model of the acquisition path: sensors sampling at their
//! native rates into bounded FIFOs, a synchronized start, a stream
//! controller that assembles sliding-window frames, and a synthetic
//! labelled-activity generator.
//!
//! Time is virtual and measured in integer nanoseconds.

mod dataset;
mod sensor;
mod session;
mod source;
mod stream;
mod window;

use thiserror::Error;

pub use dataset::{gen_dataset, GenConfig, LabeledWindow, Recording, Segment, MANIFEST_FILE, UNINFORMATIVE_STD};
pub use sensor::{modalities, physical_sensors, SensorSpec};
pub use session::{start_sync, stream_frames, DaqEvent, RunSummary, SensorFifo, SensorStats, Session, TimedFrame};
pub use source::{Constant, Replay, SampleClock, SignalSource, SourceConfig};
pub use stream::{resample, resample_at, Interp, SampleStream};
pub use window::{span_ns, Align, AssembledWindow, WindowConfig};

use crate::schema::SchemaError;

#[derive(Debug, Error)]
pub enum DaqError {
    #[error("invalid sensor: {0}")]
    Sensor(String),
    #[error("invalid window configuration: {0}")]
    Window(String),
    #[error("resampling failed: {0}")]
    Resample(String),
    #[error("time {t} ns lies outside the stream span [{first}, {last}] ns")]
    Extrapolation { t: u64, first: u64, last: u64 },
    #[error("a session needs at least one source")]
    NoSources,
    #[error("session already started")]
    AlreadyStarted,
    #[error("session has not been started")]
    NotStarted,
    #[error("dataset generation: {0}")]
    Gen(String),
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("csv: {0}")]
    Csv(String),
    #[error(transparent)]
    Schema(#[from] SchemaError),
}
