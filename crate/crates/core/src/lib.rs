//! Simulator and cost model of a queue-based spiking neural network
//! accelerator for FPGAs.
//!
//! Spikes are kept as address events in interlaced queues, membrane
//! potentials in interlaced double-buffered memories, and a network is
//! executed layer by layer, channel by channel, for `T` timesteps. Next to
//! the cycle-level simulation the crate estimates BRAM/LUTRAM usage, power,
//! energy and FPS/W.

pub mod dataset;
pub mod engine;
pub mod experiment;
pub mod harness;
pub mod model;
pub mod neuron;
pub mod power;
pub mod queueing;
pub mod resources;

use std::path::Path;

use thiserror::Error;

pub use engine::{run_dense_oracle, run_sample, EngineConfig, RunResult};
pub use model::{load_model, load_model_file, NetworkModel, SpikePlane, SpikeTrain};
pub use neuron::NeuronMode;
pub use queueing::EncodingScheme;

#[derive(Debug, Error)]
pub enum Error {
    #[error(transparent)]
    Model(#[from] model::ModelError),
    #[error(transparent)]
    Engine(#[from] engine::EngineError),
    #[error(transparent)]
    Queue(#[from] queueing::QueueError),
    #[error(transparent)]
    Resource(#[from] resources::ResourceError),
    #[error(transparent)]
    Power(#[from] power::PowerError),
    #[error(transparent)]
    Dataset(#[from] dataset::DatasetError),
    #[error("I/O error on {path}: {source}")]
    Io { path: String, source: std::io::Error },
    #[error("CSV error on {path}: {source}")]
    Csv { path: String, source: csv::Error },
    #[error("{0}")]
    Input(String),
    #[error("internal error: {0}")]
    Internal(String),
}

impl Error {
    pub fn io(path: &Path, source: std::io::Error) -> Self {
        Error::Io {
            path: path.display().to_string(),
            source,
        }
    }

    pub fn csv(path: &Path, source: csv::Error) -> Self {
        Error::Csv {
            path: path.display().to_string(),
            source,
        }
    }

    /// True for problems with the user's inputs, false for faults while
    /// running or writing results.
    pub fn is_input_error(&self) -> bool {
        !matches!(
            self,
            Error::Engine(engine::EngineError::BufferHazard { .. })
                | Error::Io { .. }
                | Error::Csv { .. }
                | Error::Internal(_)
        )
    }
}
