//! Associative memories built from frequency-synchronized vortex spin-torque
//! oscillators coupled through complex-valued weights.
//!
//! * [`oscillator`]: single-oscillator dynamics, steady state, calibration.
//! * [`synapse`]: weight training, energy, feedback currents, corruption.
//! * [`codec`]: color-wheel images, noise, decoding, the RMS phase error.
//! * [`engine`]: the coupled network integrator and retrieval protocol.
//! * [`experiment`]: batch experiments behind the command-line tool.

// `!(x > 0.0)` is used on purpose so NaN lands on the error path
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod codec;
pub mod engine;
pub mod experiment;
pub mod oscillator;
pub mod synapse;

pub use codec::{CodecError, PhaseImage, PhaseVector};
pub use engine::{EngineError, NetworkConfig, NetworkState, Trace};
pub use oscillator::{OscillatorError, OscillatorParams, OscillatorState};
pub use synapse::{StoredPatternSet, SynapseError, WeightMatrix};

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error(transparent)]
    Oscillator(#[from] OscillatorError),
    #[error(transparent)]
    Synapse(#[from] SynapseError),
    #[error(transparent)]
    Codec(#[from] CodecError),
    #[error(transparent)]
    Engine(#[from] EngineError),
    #[error(transparent)]
    Experiment(#[from] experiment::ExperimentError),
}
