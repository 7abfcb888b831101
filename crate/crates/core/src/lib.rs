//! Spatial spiking neural networks: synaptic delays derived from learnable
//! neuron positions, trained with event-aware exact gradients.

pub mod checkpoint;
pub mod config;
pub mod datasets;
pub mod error;
pub mod geometry;
pub mod gradcheck;
pub mod gradcore;
pub mod network;
pub mod neurons;
pub mod objectives;
pub mod reference;
pub mod simulator;
pub mod trainer;

pub use error::{Error, Result};
