//! Pipeline glue behind the `har` binary, with one function per subcommand.

mod artifacts;
mod commands;
pub mod config;

use std::path::{Path, PathBuf};

use har_core::daqsim::DaqError;
use har_core::engine::EngineError;
use har_core::netgraph::GraphError;
use har_core::quantizer::QuantError;
use har_core::schema::SchemaError;
use har_core::trainer::TrainError;
use thiserror::Error;

pub use artifacts::{names, write_atomic};
pub use commands::{
    cmd_gen_data, cmd_infer, cmd_quantize, cmd_report, cmd_select, cmd_simulate, cmd_sweep, cmd_train, run_pipeline,
    InferOutcome, SelectOutcome, SimulateOutcome, TrainOutcome,
};
pub use config::PipelineConfig;

#[derive(Debug, Error)]
pub enum CmdError {
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("missing artifact {}; run the command that produces it first", .0.display())]
    Missing(PathBuf),
    #[error("{}: {source}", path.display())]
    Schema {
        path: PathBuf,
        #[source]
        source: SchemaError,
    },
    #[error("{}: {msg}", path.display())]
    Stale { path: PathBuf, msg: String },
    #[error(transparent)]
    Daq(#[from] DaqError),
    #[error(transparent)]
    Graph(#[from] GraphError),
    #[error(transparent)]
    Train(#[from] TrainError),
    #[error(transparent)]
    Quant(#[from] QuantError),
    #[error(transparent)]
    Engine(#[from] EngineError),
}

impl CmdError {
    pub(crate) fn io(path: &Path, source: std::io::Error) -> Self {
        CmdError::Io {
            path: path.to_path_buf(),
            source,
        }
    }

    /// Process exit status: 2 for bad input, 3 for failures while running.
    pub fn exit_code(&self) -> u8 {
        match self {
            CmdError::Config(_)
            | CmdError::Missing(_)
            | CmdError::Schema { .. }
            | CmdError::Stale { .. }
            | CmdError::Graph(_) => 2,
            CmdError::Daq(e) => match e {
                DaqError::Sensor(_) | DaqError::Window(_) | DaqError::Gen(_) | DaqError::NoSources | DaqError::Schema(_) => 2,
                _ => 3,
            },
            _ => 3,
        }
    }
}
