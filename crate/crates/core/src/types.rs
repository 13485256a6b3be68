//! Shared vocabulary: signers, views, glosses, pose clips and the dataset
//! manifest that ties pose files to labels.

use std::collections::{BTreeSet, HashSet};
use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Landmarks per frame in the upstream layout: 11 face, 14 body, 21 per hand.
pub const NUM_LANDMARKS: usize = 75;
pub const NUM_FACE: usize = 11;
pub const NUM_BODY: usize = 14;
pub const NUM_HAND: usize = 21;

pub const MANIFEST_VERSION: u32 = 1;
pub const MAX_GLOSS_ID: u32 = 199;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum SignerId {
    S1,
    S2,
    S3,
    /// Avatar renderings.
    A,
    /// Lexicon reference video, front view only in practice.
    Sb,
}

impl SignerId {
    pub const ALL: [SignerId; 5] = [
        SignerId::S1,
        SignerId::S2,
        SignerId::S3,
        SignerId::A,
        SignerId::Sb,
    ];
    pub const HUMAN_TEST: [SignerId; 3] = [SignerId::S1, SignerId::S2, SignerId::S3];

    pub fn is_human(self) -> bool {
        !matches!(self, SignerId::A)
    }

    /// Only the three recorded signers may ever be placed in a test set.
    pub fn is_test_eligible(self) -> bool {
        matches!(self, SignerId::S1 | SignerId::S2 | SignerId::S3)
    }

    pub fn as_str(self) -> &'static str {
        match self {
            SignerId::S1 => "S1",
            SignerId::S2 => "S2",
            SignerId::S3 => "S3",
            SignerId::A => "A",
            SignerId::Sb => "Sb",
        }
    }
}

impl fmt::Display for SignerId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for SignerId {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        SignerId::ALL
            .into_iter()
            .find(|id| id.as_str().eq_ignore_ascii_case(s))
            .ok_or_else(|| Error::InvalidArgument(format!("unknown signer '{s}'")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ViewAngle {
    Left,
    Front,
    Right,
}

impl ViewAngle {
    pub const ALL: [ViewAngle; 3] = [ViewAngle::Left, ViewAngle::Front, ViewAngle::Right];

    /// Camera azimuth relative to the frontal camera, in degrees.
    pub fn azimuth_deg(self) -> f64 {
        match self {
            ViewAngle::Left => -25.0,
            ViewAngle::Front => 0.0,
            ViewAngle::Right => 25.0,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            ViewAngle::Left => "left",
            ViewAngle::Front => "front",
            ViewAngle::Right => "right",
        }
    }

    pub fn letter(self) -> char {
        match self {
            ViewAngle::Left => 'l',
            ViewAngle::Front => 'f',
            ViewAngle::Right => 'r',
        }
    }

    /// Parses compact view sets such as `lfr` or `f`.
    pub fn parse_set(s: &str) -> Result<BTreeSet<ViewAngle>> {
        let mut set = BTreeSet::new();
        for c in s.chars() {
            let view = match c.to_ascii_lowercase() {
                'l' => ViewAngle::Left,
                'f' => ViewAngle::Front,
                'r' => ViewAngle::Right,
                _ => return Err(Error::InvalidArgument(format!("unknown view letter '{c}'"))),
            };
            set.insert(view);
        }
        if set.is_empty() {
            return Err(Error::InvalidArgument("empty view set".into()));
        }
        Ok(set)
    }

    pub fn set_label(views: &BTreeSet<ViewAngle>) -> String {
        views.iter().map(|v| v.letter()).collect()
    }
}

impl fmt::Display for ViewAngle {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for ViewAngle {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        ViewAngle::ALL
            .into_iter()
            .find(|v| {
                v.as_str().eq_ignore_ascii_case(s) || s.len() == 1 && s.starts_with(v.letter())
            })
            .ok_or_else(|| Error::InvalidArgument(format!("unknown view '{s}'")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Handedness {
    One,
    TwoSym,
    TwoAsym,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GlossEntry {
    pub gloss_id: u32,
    pub label: String,
    pub handedness: Handedness,
    pub strong_handshape: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub weak_handshape: Option<String>,
}

/// `{gloss_id}_{signer}_{view}`, e.g. `7_S1_front`.
pub fn clip_id(gloss_id: u32, signer: SignerId, view: ViewAngle) -> String {
    format!("{gloss_id}_{signer}_{view}")
}

/// One sign clip: a `frames x 75 x 3` landmark raster in normalized image
/// coordinates. A failed keypoint is stored as the exact triple `(0, 0, 0)`.
#[derive(Debug, Clone, PartialEq)]
pub struct PoseSequence {
    frames: Vec<f32>,
    num_frames: usize,
    pub signer: SignerId,
    pub view: ViewAngle,
    pub gloss_id: u32,
    pub fps: f32,
}

impl PoseSequence {
    pub const FRAME_LEN: usize = NUM_LANDMARKS * 3;

    pub fn new(
        frames: Vec<f32>,
        signer: SignerId,
        view: ViewAngle,
        gloss_id: u32,
        fps: f32,
    ) -> Result<Self> {
        if frames.is_empty() || frames.len() % Self::FRAME_LEN != 0 {
            return Err(Error::InvalidSequence(format!(
                "raster of {} values is not a positive multiple of {}",
                frames.len(),
                Self::FRAME_LEN
            )));
        }
        if let Some(i) = frames.iter().position(|v| !v.is_finite()) {
            return Err(Error::InvalidSequence(format!(
                "non-finite value at offset {i}"
            )));
        }
        let num_frames = frames.len() / Self::FRAME_LEN;
        Ok(Self {
            frames,
            num_frames,
            signer,
            view,
            gloss_id,
            fps,
        })
    }

    pub fn num_frames(&self) -> usize {
        self.num_frames
    }

    /// Flat row-major `(frame, landmark, coordinate)` values.
    pub fn raw(&self) -> &[f32] {
        &self.frames
    }

    pub fn frame(&self, t: usize) -> &[f32] {
        &self.frames[t * Self::FRAME_LEN..(t + 1) * Self::FRAME_LEN]
    }

    pub fn landmark(&self, t: usize, k: usize) -> [f32; 3] {
        let o = t * Self::FRAME_LEN + k * 3;
        [self.frames[o], self.frames[o + 1], self.frames[o + 2]]
    }

    pub fn clip_id(&self) -> String {
        clip_id(self.gloss_id, self.signer, self.view)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub clip_id: String,
    /// Relative paths resolve against the manifest's directory.
    pub path: PathBuf,
    pub signer: SignerId,
    pub view: ViewAngle,
    pub gloss_id: u32,
}

impl ManifestEntry {
    pub fn new(gloss_id: u32, signer: SignerId, view: ViewAngle, path: impl Into<PathBuf>) -> Self {
        Self {
            clip_id: clip_id(gloss_id, signer, view),
            path: path.into(),
            signer,
            view,
            gloss_id,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub version: u32,
    pub vocabulary: Vec<GlossEntry>,
    pub entries: Vec<ManifestEntry>,
    /// Directory relative entry paths are resolved against. Not serialized.
    #[serde(skip)]
    pub root: PathBuf,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum ViolationRule {
    UnsupportedVersion,
    DuplicateTriple,
    UnknownGloss,
    DuplicateGlossId,
    GlossIdOutOfRange,
    WeakHandshape,
    ClipIdMismatch,
    DuplicateClipId,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Violation {
    pub rule: ViolationRule,
    /// Clip identifier or `gloss:<id>` of the offending item.
    pub subject: String,
    pub message: String,
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}: {}", self.subject, self.message)
    }
}

impl DatasetManifest {
    pub fn new(vocabulary: Vec<GlossEntry>, entries: Vec<ManifestEntry>) -> Self {
        Self {
            version: MANIFEST_VERSION,
            vocabulary,
            entries,
            root: PathBuf::new(),
        }
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut manifest: DatasetManifest =
            serde_json::from_str(&text).map_err(|source| Error::ManifestParse {
                path: path.to_path_buf(),
                source,
            })?;
        manifest.root = path.parent().map(Path::to_path_buf).unwrap_or_default();
        Ok(manifest)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let text = serde_json::to_string_pretty(self).expect("manifest serializes");
        std::fs::write(path, text + "\n").map_err(|e| Error::io(path, e))
    }

    pub fn resolve(&self, entry: &ManifestEntry) -> PathBuf {
        if entry.path.is_absolute() {
            entry.path.clone()
        } else {
            self.root.join(&entry.path)
        }
    }

    pub fn gloss(&self, gloss_id: u32) -> Option<&GlossEntry> {
        self.vocabulary.iter().find(|g| g.gloss_id == gloss_id)
    }

    pub fn find(&self, gloss_id: u32, signer: SignerId, view: ViewAngle) -> Option<&ManifestEntry> {
        self.entries
            .iter()
            .find(|e| e.gloss_id == gloss_id && e.signer == signer && e.view == view)
    }

    pub fn entry_by_clip(&self, clip_id: &str) -> Option<&ManifestEntry> {
        self.entries.iter().find(|e| e.clip_id == clip_id)
    }

    /// Sorted, deduplicated gloss ids that have at least one clip.
    pub fn gloss_ids(&self) -> Vec<u32> {
        let set: BTreeSet<u32> = self.entries.iter().map(|e| e.gloss_id).collect();
        set.into_iter().collect()
    }

    /// Empty iff every manifest invariant holds.
    pub fn validate(&self) -> Vec<Violation> {
        let mut out = Vec::new();
        if self.version != MANIFEST_VERSION {
            out.push(Violation {
                rule: ViolationRule::UnsupportedVersion,
                subject: "manifest".into(),
                message: format!("version {} (expected {MANIFEST_VERSION})", self.version),
            });
        }

        let mut known = HashSet::new();
        for g in &self.vocabulary {
            let subject = format!("gloss:{}", g.gloss_id);
            if !known.insert(g.gloss_id) {
                out.push(Violation {
                    rule: ViolationRule::DuplicateGlossId,
                    subject: subject.clone(),
                    message: "gloss_id appears more than once in the vocabulary".into(),
                });
            }
            if g.gloss_id > MAX_GLOSS_ID {
                out.push(Violation {
                    rule: ViolationRule::GlossIdOutOfRange,
                    subject: subject.clone(),
                    message: format!("gloss_id outside [0, {MAX_GLOSS_ID}]"),
                });
            }
            let two_handed = g.handedness != Handedness::One;
            if two_handed != g.weak_handshape.is_some() {
                out.push(Violation {
                    rule: ViolationRule::WeakHandshape,
                    subject,
                    message: "weak_handshape must be present iff the sign is two-handed".into(),
                });
            }
        }

        let mut triples = HashSet::new();
        let mut ids = HashSet::new();
        for e in &self.entries {
            if !triples.insert((e.signer, e.view, e.gloss_id)) {
                out.push(Violation {
                    rule: ViolationRule::DuplicateTriple,
                    subject: e.clip_id.clone(),
                    message: format!(
                        "duplicate triple ({}, {}, gloss {})",
                        e.signer, e.view, e.gloss_id
                    ),
                });
            } else if !ids.insert(e.clip_id.as_str()) {
                out.push(Violation {
                    rule: ViolationRule::DuplicateClipId,
                    subject: e.clip_id.clone(),
                    message: "clip identifier used twice".into(),
                });
            }
            if !known.contains(&e.gloss_id) {
                out.push(Violation {
                    rule: ViolationRule::UnknownGloss,
                    subject: e.clip_id.clone(),
                    message: format!("unknown gloss {}", e.gloss_id),
                });
            }
            let expected = clip_id(e.gloss_id, e.signer, e.view);
            if e.clip_id != expected {
                out.push(Violation {
                    rule: ViolationRule::ClipIdMismatch,
                    subject: e.clip_id.clone(),
                    message: format!("clip identifier should be '{expected}'"),
                });
            }
        }
        out
    }
}
