//! Temporal-PONITA: message passing over the sign graph with kernels that
//! depend only on SE(2)-invariant pair attributes, interleaved with temporal
//! convolutions. A baseline variant feeds raw displacements instead.

pub mod attributes;
pub mod checkpoint;
pub mod config;
pub mod error;
pub mod input;
pub mod network;
pub mod params;

pub use attributes::{pair_attributes, polynomial_features, PairAttributes};
pub use config::{InputFeatureMode, ModelConfig, Variant};
pub use error::{ModelError, Result};
pub use input::{ModelInput, NodeTrack};
pub use network::{forward, kernel_basis, ponita_spatial_block, temporal_block, Model};
pub use params::{param_count, ParamIndex, ParamSpec};
