//! Clips reduced to the sign graph and resampled to a fixed length, keyed by
//! clip id.

use std::collections::BTreeMap;

use geomsign_core::graph::{default_edges, default_node_map, reduce};
use geomsign_core::ingest::load_clip;
use geomsign_core::{DatasetManifest, PoseSequence};
use geomsign_model::NodeTrack;

use crate::error::{HarnessError, Result};

#[derive(Debug, Clone)]
pub struct Sample {
    pub clip_id: String,
    pub label: usize,
    pub track: NodeTrack,
}

/// Every clip of a dataset in model-ready form. Class labels are positions
/// in the sorted gloss id list.
#[derive(Debug, Clone)]
pub struct ClipStore {
    frames: usize,
    glosses: Vec<u32>,
    samples: BTreeMap<String, Sample>,
}

impl ClipStore {
    /// Loads every manifest entry from disk.
    pub fn load(manifest: &DatasetManifest, frames: usize) -> Result<Self> {
        let mut seqs = Vec::with_capacity(manifest.entries.len());
        for entry in &manifest.entries {
            seqs.push(load_clip(manifest, entry)?);
        }
        Self::from_sequences(manifest, &seqs, frames)
    }

    /// Builds the store from clips already in memory.
    pub fn from_sequences(
        manifest: &DatasetManifest,
        clips: &[PoseSequence],
        frames: usize,
    ) -> Result<Self> {
        if frames == 0 {
            return Err(HarnessError::InvalidArgument("frames must be >= 1".into()));
        }
        let glosses = manifest.gloss_ids();
        let (map, edges) = (default_node_map(), default_edges());
        let mut samples = BTreeMap::new();
        for seq in clips {
            let label = glosses.binary_search(&seq.gloss_id).map_err(|_| {
                HarnessError::InvalidArgument(format!(
                    "clip {} has gloss outside the vocabulary",
                    seq.clip_id()
                ))
            })?;
            let reduced = reduce(seq, &map, &edges)?.resample_time(frames)?;
            let clip_id = seq.clip_id();
            samples.insert(
                clip_id.clone(),
                Sample {
                    clip_id,
                    label,
                    track: NodeTrack::from_reduced(&reduced),
                },
            );
        }
        Ok(Self {
            frames,
            glosses,
            samples,
        })
    }

    pub fn frames(&self) -> usize {
        self.frames
    }

    pub fn num_classes(&self) -> usize {
        self.glosses.len()
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn all(&self) -> Vec<&Sample> {
        self.samples.values().collect()
    }

    pub fn get(&self, clip_id: &str) -> Result<&Sample> {
        self.samples
            .get(clip_id)
            .ok_or_else(|| HarnessError::MissingClip(clip_id.to_string()))
    }

    pub fn select(&self, ids: &[String]) -> Result<Vec<&Sample>> {
        ids.iter().map(|id| self.get(id)).collect()
    }
}
