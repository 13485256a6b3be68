//! The 27-node sign graph: which of the 75 landmarks become graph nodes, the
//! bone-like edge tree between them, and per-frame reduction.
//!
//! Source layout (75 slots): `0..33` holistic pose (`0..11` face, `11..25`
//! upper body, `25..33` lower body), `33..54` left hand, `54..75` right hand.

use std::collections::VecDeque;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ingest::resample_index;
use crate::types::{PoseSequence, SignerId, ViewAngle, NUM_LANDMARKS};

pub const NUM_NODES: usize = 27;
pub const NUM_BODY_NODES: usize = 7;
pub const NUM_HAND_NODES: usize = 10;
pub const NUM_EDGES: usize = 26;

pub const LEFT_HAND_OFFSET: usize = 33;
pub const RIGHT_HAND_OFFSET: usize = 54;

const BODY: [(usize, &str); NUM_BODY_NODES] = [
    (0, "nose"),
    (11, "left_shoulder"),
    (12, "right_shoulder"),
    (13, "left_elbow"),
    (14, "right_elbow"),
    (15, "left_wrist"),
    (16, "right_wrist"),
];

/// Hand landmark index within a 21-point hand, and its node name suffix.
const HAND: [(usize, &str); NUM_HAND_NODES] = [
    (0, "wrist"),
    (4, "thumb_tip"),
    (5, "index_base"),
    (8, "index_tip"),
    (9, "middle_base"),
    (12, "middle_tip"),
    (13, "ring_base"),
    (16, "ring_tip"),
    (17, "pinky_base"),
    (20, "pinky_tip"),
];

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct NodeMap {
    pub indices: Vec<usize>,
    pub names: Vec<String>,
}

impl NodeMap {
    /// Maps a graph onto itself; used to re-select already reduced data.
    pub fn identity(n: usize) -> Self {
        Self {
            indices: (0..n).collect(),
            names: (0..n).map(|i| format!("node_{i}")).collect(),
        }
    }

    pub fn len(&self) -> usize {
        self.indices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.indices.is_empty()
    }

    /// Checks uniqueness and range against a source with `source_nodes` slots.
    pub fn check(&self, source_nodes: usize) -> Result<()> {
        if self.indices.len() != self.names.len() {
            return Err(Error::InvalidArgument(
                "node map names/indices length differ".into(),
            ));
        }
        let mut seen = vec![false; source_nodes];
        for &i in &self.indices {
            if i >= source_nodes || std::mem::replace(&mut seen[i], true) {
                return Err(Error::InvalidArgument(format!(
                    "node map index {i} is duplicated or outside [0, {source_nodes})"
                )));
            }
        }
        Ok(())
    }
}

/// Body nodes first, then the left hand, then the right hand.
pub fn default_node_map() -> NodeMap {
    let mut indices = Vec::with_capacity(NUM_NODES);
    let mut names = Vec::with_capacity(NUM_NODES);
    for (i, name) in BODY {
        indices.push(i);
        names.push(name.to_string());
    }
    for (offset, side) in [(LEFT_HAND_OFFSET, "left"), (RIGHT_HAND_OFFSET, "right")] {
        for (i, name) in HAND {
            indices.push(offset + i);
            names.push(format!("{side}_hand_{name}"));
        }
    }
    NodeMap { indices, names }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SkeletonEdges {
    pub edges: Vec<(usize, usize)>,
    pub self_loops: bool,
}

impl SkeletonEdges {
    /// Both directions of every edge, then self pairs when enabled, as
    /// `(receiver, sender)` pairs.
    pub fn directed(&self, num_nodes: usize) -> Vec<(usize, usize)> {
        let mut out: Vec<(usize, usize)> = self
            .edges
            .iter()
            .flat_map(|&(a, b)| [(a, b), (b, a)])
            .collect();
        if self.self_loops {
            out.extend((0..num_nodes).map(|i| (i, i)));
        }
        out
    }

    pub fn with_self_loops(mut self, on: bool) -> Self {
        self.self_loops = on;
        self
    }
}

pub fn default_edges() -> SkeletonEdges {
    // Body node ids follow BODY order.
    let (nose, lsh, rsh, lel, rel, lwr, rwr) = (0, 1, 2, 3, 4, 5, 6);
    let mut edges = vec![
        (nose, lsh),
        (nose, rsh),
        (lsh, lel),
        (lel, lwr),
        (rsh, rel),
        (rel, rwr),
    ];
    for (hand, body_wrist) in [
        (NUM_BODY_NODES, lwr),
        (NUM_BODY_NODES + NUM_HAND_NODES, rwr),
    ] {
        let wrist = hand;
        edges.push((body_wrist, wrist));
        edges.push((wrist, hand + 1));
        for finger in 0..4 {
            let base = hand + 2 + 2 * finger;
            edges.push((wrist, base));
            edges.push((base, base + 1));
        }
    }
    SkeletonEdges {
        edges,
        self_loops: true,
    }
}

/// Breadth-first reachability from node 0.
pub fn is_connected(num_nodes: usize, edges: &[(usize, usize)]) -> bool {
    if num_nodes == 0 {
        return true;
    }
    let mut adj = vec![Vec::new(); num_nodes];
    for &(a, b) in edges {
        adj[a].push(b);
        adj[b].push(a);
    }
    let mut seen = vec![false; num_nodes];
    let mut queue = VecDeque::from([0]);
    seen[0] = true;
    while let Some(n) = queue.pop_front() {
        for &m in &adj[n] {
            if !std::mem::replace(&mut seen[m], true) {
                queue.push_back(m);
            }
        }
    }
    seen.into_iter().all(|s| s)
}

/// Row-major `n x n` matrix `D^-1/2 A D^-1/2` of the symmetric adjacency.
pub fn normalized_adjacency(num_nodes: usize, edges: &SkeletonEdges) -> Vec<f64> {
    let n = num_nodes;
    let mut a = vec![0.0; n * n];
    for &(i, j) in &edges.edges {
        a[i * n + j] = 1.0;
        a[j * n + i] = 1.0;
    }
    if edges.self_loops {
        for i in 0..n {
            a[i * n + i] = 1.0;
        }
    }
    let inv_sqrt: Vec<f64> = (0..n)
        .map(|i| {
            let d: f64 = a[i * n..(i + 1) * n].iter().sum();
            if d > 0.0 {
                1.0 / d.sqrt()
            } else {
                0.0
            }
        })
        .collect();
    for i in 0..n {
        for j in 0..n {
            a[i * n + j] *= inv_sqrt[i] * inv_sqrt[j];
        }
    }
    a
}

/// A clip reduced to graph nodes: `frames x nodes x 3`.
#[derive(Debug, Clone, PartialEq)]
pub struct ReducedGraphSequence {
    frames: Vec<f32>,
    num_frames: usize,
    pub node_map: NodeMap,
    pub edges: SkeletonEdges,
    pub signer: SignerId,
    pub view: ViewAngle,
    pub gloss_id: u32,
}

fn gather(raster: &[f32], source_nodes: usize, indices: &[usize]) -> Vec<f32> {
    let frames = raster.len() / (source_nodes * 3);
    let mut out = Vec::with_capacity(frames * indices.len() * 3);
    for t in 0..frames {
        let frame = &raster[t * source_nodes * 3..(t + 1) * source_nodes * 3];
        for &k in indices {
            out.extend_from_slice(&frame[k * 3..k * 3 + 3]);
        }
    }
    out
}

/// Gathers the mapped landmarks of every frame; values are copied unchanged.
pub fn reduce(
    seq: &PoseSequence,
    map: &NodeMap,
    edges: &SkeletonEdges,
) -> Result<ReducedGraphSequence> {
    map.check(NUM_LANDMARKS)?;
    Ok(ReducedGraphSequence {
        frames: gather(seq.raw(), NUM_LANDMARKS, &map.indices),
        num_frames: seq.num_frames(),
        node_map: map.clone(),
        edges: edges.clone(),
        signer: seq.signer,
        view: seq.view,
        gloss_id: seq.gloss_id,
    })
}

impl ReducedGraphSequence {
    pub fn from_raw(
        frames: Vec<f32>,
        node_map: NodeMap,
        edges: SkeletonEdges,
        signer: SignerId,
        view: ViewAngle,
        gloss_id: u32,
    ) -> Result<Self> {
        let frame_len = node_map.len() * 3;
        if frame_len == 0 || frames.is_empty() || frames.len() % frame_len != 0 {
            return Err(Error::InvalidSequence(format!(
                "{} values do not form whole frames of {} nodes",
                frames.len(),
                node_map.len()
            )));
        }
        Ok(Self {
            num_frames: frames.len() / frame_len,
            frames,
            node_map,
            edges,
            signer,
            view,
            gloss_id,
        })
    }

    pub fn num_frames(&self) -> usize {
        self.num_frames
    }

    pub fn num_nodes(&self) -> usize {
        self.node_map.len()
    }

    pub fn raw(&self) -> &[f32] {
        &self.frames
    }

    pub fn node(&self, t: usize, k: usize) -> [f32; 3] {
        let o = (t * self.num_nodes() + k) * 3;
        [self.frames[o], self.frames[o + 1], self.frames[o + 2]]
    }

    /// Re-selects nodes of already reduced data, e.g. with [`NodeMap::identity`].
    pub fn select(&self, map: &NodeMap) -> Result<Self> {
        map.check(self.num_nodes())?;
        let mut names = Vec::with_capacity(map.len());
        for &i in &map.indices {
            names.push(self.node_map.names[i].clone());
        }
        Ok(Self {
            frames: gather(&self.frames, self.num_nodes(), &map.indices),
            num_frames: self.num_frames,
            node_map: NodeMap {
                indices: map
                    .indices
                    .iter()
                    .map(|&i| self.node_map.indices[i])
                    .collect(),
                names,
            },
            edges: self.edges.clone(),
            signer: self.signer,
            view: self.view,
            gloss_id: self.gloss_id,
        })
    }

    /// Same index rule as [`crate::ingest::resample_time`].
    pub fn resample_time(&self, target: usize) -> Result<Self> {
        if target == 0 {
            return Err(Error::InvalidArgument(
                "target frame count must be >= 1".into(),
            ));
        }
        let frame_len = self.num_nodes() * 3;
        let mut frames = Vec::with_capacity(target * frame_len);
        for i in 0..target {
            let t = resample_index(i, self.num_frames, target);
            frames.extend_from_slice(&self.frames[t * frame_len..(t + 1) * frame_len]);
        }
        Ok(Self {
            frames,
            num_frames: target,
            ..self.clone()
        })
    }
}
