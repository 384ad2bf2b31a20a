//! Integrate-and-fire spiking CNN.
//!
//! Discrete-time dynamics per layer: `v ← v + W·x_t`; where `v ≥ v_th` the
//! neuron spikes and `v ← v_reset`. No leak, no bias. The network input at each
//! step is the event-count frame of a [`SpikeVolume`](crate::SpikeVolume);
//! its prediction is the output neuron with the most spikes over the window.

mod forward;
mod iaf;
mod spec;
mod train;
mod weights;

use std::path::PathBuf;

use thiserror::Error;

use crate::label::SlipState;

pub use forward::{forward, forward_counts, Forward, Neuron, SpikeInput, SpikeRecord};
pub use iaf::iaf_step;
pub use spec::{fans, weight_len, IafParams, Layer, LayerKind, NetworkSpec, Shape};
pub use train::{
    calibrate_rates, evaluate, gradient, loss_and_gradient, train, Evaluation, Hyperparams,
    TrainLog, TrainRecord, Trained,
};
pub use weights::{decode_weights, encode_weights, load_weights, save_weights, Weights};

#[derive(Debug, Error)]
pub enum SnnError {
    #[error("shape mismatch: expected {expected}, got {got}")]
    ShapeMismatch { expected: usize, got: usize },
    #[error("non-finite input at index {0}")]
    NonFiniteInput(usize),
    #[error("invalid network: {0}")]
    InvalidSpec(String),
    #[error("empty {0} split")]
    EmptySplit(&'static str),
    #[error("loss diverged at epoch {epoch}")]
    DivergedLoss { epoch: usize },
    #[error("malformed weights file: {0}")]
    MalformedWeights(String),
    #[error("weights were saved for a different network (digest {found:016x}, expected {expected:016x})")]
    SpecMismatch { expected: u64, found: u64 },
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
}

/// Output spikes per class over one sample.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash)]
pub struct ClassCounts(pub [u32; 3]);

impl ClassCounts {
    pub fn from_slice(counts: &[u32]) -> Result<Self, SnnError> {
        let a: [u32; 3] = counts.try_into().map_err(|_| SnnError::ShapeMismatch {
            expected: 3,
            got: counts.len(),
        })?;
        Ok(Self(a))
    }

    pub fn total(&self) -> u32 {
        self.0.iter().sum()
    }
}

/// Argmax of the counts; ties go to the lowest class index.
pub fn classify(counts: &ClassCounts) -> SlipState {
    let mut best = 0;
    for i in 1..3 {
        if counts.0[i] > counts.0[best] {
            best = i;
        }
    }
    SlipState::from_index(best).unwrap()
}

/// Boxcar surrogate derivative of the spike function, width 1.
pub fn surrogate_grad(v_minus_th: f64) -> f64 {
    const WIDTH: f64 = 1.0;
    if v_minus_th.abs() <= WIDTH / 2.0 {
        1.0 / WIDTH
    } else {
        0.0
    }
}
