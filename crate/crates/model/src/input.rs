//! Batched model inputs: node features, polynomial pair attributes and the
//! gather/scatter index lists that drive message passing.

use std::sync::Arc;

use geomsign_autodiff::{Real, Tensor};
use geomsign_core::graph::{ReducedGraphSequence, SkeletonEdges};

use crate::attributes::{pair_attributes, polynomial_features};
use crate::config::{InputFeatureMode, ModelConfig};
use crate::error::{ModelError, Result};

/// Node positions of one clip in double precision, frame-major.
#[derive(Debug, Clone, PartialEq)]
pub struct NodeTrack {
    pub num_frames: usize,
    pub num_nodes: usize,
    pub positions: Vec<[f64; 3]>,
}

impl NodeTrack {
    pub fn from_reduced(seq: &ReducedGraphSequence) -> Self {
        let positions = seq
            .raw()
            .chunks_exact(3)
            .map(|p| [p[0] as f64, p[1] as f64, p[2] as f64])
            .collect();
        Self {
            num_frames: seq.num_frames(),
            num_nodes: seq.num_nodes(),
            positions,
        }
    }

    /// Rotates every (x, y) by `angle` radians about the origin, then
    /// translates. Depth is untouched.
    pub fn rigid_motion(&self, angle: f64, translation: [f64; 2]) -> Self {
        let (s, c) = angle.sin_cos();
        let positions = self
            .positions
            .iter()
            .map(|p| {
                [
                    c * p[0] - s * p[1] + translation[0],
                    s * p[0] + c * p[1] + translation[1],
                    p[2],
                ]
            })
            .collect();
        Self {
            positions,
            ..self.clone()
        }
    }
}

#[derive(Debug, Clone)]
pub struct ModelInput<F> {
    pub batch: usize,
    pub frames: usize,
    /// Graph rows per frame: nodes times orientations.
    pub rows_per_frame: usize,
    /// `[batch, frames, rows_per_frame, input_dim]`.
    pub features: Tensor<F>,
    /// `[pairs, basis_input_dim]` polynomial attribute features.
    pub attributes: Tensor<F>,
    /// Flat row index of each pair's sender.
    pub senders: Arc<[usize]>,
    /// Flat row index of each pair's receiver.
    pub receivers: Arc<[usize]>,
}

impl<F: Real> ModelInput<F> {
    pub fn total_rows(&self) -> usize {
        self.batch * self.frames * self.rows_per_frame
    }

    pub fn from_reduced(
        clips: &[&ReducedGraphSequence],
        cfg: &ModelConfig,
        edges: &SkeletonEdges,
    ) -> Result<Self> {
        let tracks: Vec<NodeTrack> = clips.iter().map(|c| NodeTrack::from_reduced(c)).collect();
        Self::from_tracks(&tracks, cfg, edges)
    }

    pub fn from_tracks(
        tracks: &[NodeTrack],
        cfg: &ModelConfig,
        edges: &SkeletonEdges,
    ) -> Result<Self> {
        let Some(first) = tracks.first() else {
            return Err(ModelError::InvalidInput("empty batch".into()));
        };
        let (n, t, m) = (cfg.num_nodes, first.num_frames, cfg.num_orientations);
        for (b, tr) in tracks.iter().enumerate() {
            if tr.num_nodes != n {
                return Err(ModelError::InvalidInput(format!(
                    "clip {b} has {} nodes, model expects {n}",
                    tr.num_nodes
                )));
            }
            if tr.num_frames != t || tr.positions.len() != t * n || t == 0 {
                return Err(ModelError::InvalidInput(format!(
                    "clip {b} has {} frames, batch expects {t} (resample first)",
                    tr.num_frames
                )));
            }
        }
        let directed = edges.directed(n);
        let din = cfg.input_dim();
        let rows_per_frame = n * m;
        let batch = tracks.len();

        let mut features = Tensor::zeros(&[batch, t, rows_per_frame, din]);
        {
            let fd = features.data_mut();
            for (b, tr) in tracks.iter().enumerate() {
                for f in 0..t {
                    for node in 0..n {
                        for o in 0..m {
                            let row = ((b * t + f) * n + node) * m + o;
                            let at = row * din;
                            fd[at + node] = F::one();
                            if cfg.input_feature_mode == InputFeatureMode::NodeIdPlusDepth {
                                fd[at + n] = F::from_f64(tr.positions[f * n + node][2]);
                            }
                        }
                    }
                }
            }
        }

        let mut poly = Vec::new();
        let mut width = 0;
        let pairs_per_frame = directed.len() * m * m;
        let mut senders = Vec::with_capacity(batch * t * pairs_per_frame);
        let mut receivers = Vec::with_capacity(batch * t * pairs_per_frame);
        for (b, tr) in tracks.iter().enumerate() {
            let xy: Vec<[f64; 2]> = tr
                .positions
                .iter()
                .map(|p| [p[0] * cfg.position_scale, p[1] * cfg.position_scale])
                .collect();
            let attrs = pair_attributes(&xy, n, &directed, cfg.variant, m)?;
            let (w, feats) = polynomial_features(&attrs, cfg.poly_degree);
            width = w;
            poly.extend(feats.into_iter().map(F::from_f64));
            for f in 0..t {
                let base = (b * t + f) * rows_per_frame;
                for &(r, s) in &directed {
                    for a in 0..m {
                        for o in 0..m {
                            receivers.push(base + r * m + a);
                            senders.push(base + s * m + o);
                        }
                    }
                }
            }
        }
        let pairs = senders.len();
        let attributes = Tensor::new(vec![pairs, width], poly)?;
        Ok(Self {
            batch,
            frames: t,
            rows_per_frame,
            features,
            attributes,
            senders: senders.into(),
            receivers: receivers.into(),
        })
    }
}
