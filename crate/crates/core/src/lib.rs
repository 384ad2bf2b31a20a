//! Neuromorphic incipient-slip detection.
//!
//! The pipeline runs from a stick-slip simulator of a papillae tactile skin
//! ([`sim`]) through event preprocessing ([`preprocess`]) into an
//! integrate-and-fire spiking CNN ([`snn`]), whose output spike counts are
//! smoothed and margin-gated into slip-state onsets ([`detect`]). [`harness`]
//! strings the stages together behind the `slipnet` command line.

pub mod detect;
pub mod events;
pub mod harness;
pub mod label;
pub mod preprocess;
pub mod scalar;
pub mod seed;
pub mod sim;
pub mod snn;

pub use events::{Event, EventStream, Trial};
pub use label::SlipState;
pub use preprocess::{LabeledSample, SpikeVolume};
pub use scalar::Scalar;

pub type NetworkSpec32 = snn::NetworkSpec<f32>;
pub type NetworkSpec64 = snn::NetworkSpec<f64>;
pub type Weights32 = snn::Weights<f32>;
pub type Weights64 = snn::Weights<f64>;
pub type SpikeInput32 = snn::SpikeInput<f32>;
pub type SpikeInput64 = snn::SpikeInput<f64>;
pub type SmootherConfig32 = detect::SmootherConfig<f32>;
pub type SmootherConfig64 = detect::SmootherConfig<f64>;
pub type DetectionReport32 = detect::DetectionReport<f32>;
pub type DetectionReport64 = detect::DetectionReport<f64>;
