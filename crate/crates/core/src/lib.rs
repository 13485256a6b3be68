//! Data side of the geomsign engine: clip and manifest types, pose-file IO and
//! keypoint diagnostics, the 27-node sign graph, fold planning for the
//! multi-view protocol, and a procedural multi-view skeleton generator.

pub mod error;
pub mod folds;
pub mod graph;
pub mod ingest;
pub mod synth;
pub mod types;

pub use error::{Error, Result};
pub use types::{
    clip_id, DatasetManifest, GlossEntry, Handedness, ManifestEntry, PoseSequence, SignerId,
    ViewAngle, Violation, NUM_LANDMARKS,
};
