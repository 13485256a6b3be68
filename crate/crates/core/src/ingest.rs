//! Pose-file IO (`.ngtp`), keypoint-success diagnostics, dataset statistics and
//! fixed-length temporal resampling.
//!
//! `.ngtp` layout, all little-endian:
//!
//! | bytes | content                                   |
//! |-------|-------------------------------------------|
//! | 4     | magic `NGTP`                              |
//! | 4     | format version (`u32`, currently 1)       |
//! | 12    | dims `T_c`, `N_lm`, `C` (`u32` each)      |
//! | 4·n   | `T_c·N_lm·C` binary32 values, row-major   |

use std::collections::BTreeMap;
use std::io::Write;
use std::path::Path;

use crate::error::{Error, Result};
use crate::types::{
    DatasetManifest, Handedness, ManifestEntry, PoseSequence, SignerId, ViewAngle, NUM_LANDMARKS,
};

pub const POSE_MAGIC: &[u8; 4] = b"NGTP";
pub const POSE_VERSION: u32 = 1;
const HEADER_LEN: usize = 20;

pub const DEFAULT_FPS: f32 = 25.0;
/// Clip length used when batching.
pub const DEFAULT_TARGET_FRAMES: usize = 64;

/// Encodes a `frames x 75 x 3` raster into the `.ngtp` byte layout.
pub fn encode_pose(raster: &[f32], num_frames: usize) -> Vec<u8> {
    debug_assert_eq!(raster.len(), num_frames * PoseSequence::FRAME_LEN);
    let mut buf = Vec::with_capacity(HEADER_LEN + raster.len() * 4);
    buf.extend_from_slice(POSE_MAGIC);
    buf.extend_from_slice(&POSE_VERSION.to_le_bytes());
    for d in [num_frames, NUM_LANDMARKS, 3] {
        buf.extend_from_slice(&(d as u32).to_le_bytes());
    }
    for v in raster {
        buf.extend_from_slice(&v.to_le_bytes());
    }
    buf
}

pub fn write_pose_file(path: impl AsRef<Path>, seq: &PoseSequence) -> Result<()> {
    let path = path.as_ref();
    let bytes = encode_pose(seq.raw(), seq.num_frames());
    let mut f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    f.write_all(&bytes).map_err(|e| Error::io(path, e))
}

/// Decodes an `.ngtp` buffer into `(frames, raster)`.
pub fn decode_pose(bytes: &[u8], path: &Path) -> Result<(usize, Vec<f32>)> {
    if bytes.len() < 4 || &bytes[..4] != POSE_MAGIC {
        return Err(Error::NotPoseFile(path.to_path_buf()));
    }
    if bytes.len() < HEADER_LEN {
        return Err(Error::Truncated {
            path: path.to_path_buf(),
            expected: HEADER_LEN,
            found: bytes.len(),
        });
    }
    let word = |i: usize| u32::from_le_bytes(bytes[i..i + 4].try_into().unwrap());
    let version = word(4);
    if version != POSE_VERSION {
        return Err(Error::UnsupportedVersion(version));
    }
    let (frames, landmarks, channels) = (word(8) as usize, word(12) as usize, word(16) as usize);
    if landmarks != NUM_LANDMARKS || channels != 3 {
        return Err(Error::UnsupportedLandmarks {
            path: path.to_path_buf(),
            landmarks,
            channels,
        });
    }
    let payload = &bytes[HEADER_LEN..];
    let expected = frames * landmarks * channels;
    if payload.len() != expected * 4 {
        return Err(Error::Truncated {
            path: path.to_path_buf(),
            expected,
            found: payload.len() / 4,
        });
    }
    let raster = payload
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
        .collect();
    Ok((frames, raster))
}

/// Reads a pose file and attaches the clip metadata.
pub fn load_pose_file(
    path: impl AsRef<Path>,
    signer: SignerId,
    view: ViewAngle,
    gloss_id: u32,
) -> Result<PoseSequence> {
    let path = path.as_ref();
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    let (_, raster) = decode_pose(&bytes, path)?;
    PoseSequence::new(raster, signer, view, gloss_id, DEFAULT_FPS)
}

/// Loads a manifest entry, wrapping any failure with the offending path.
pub fn load_clip(manifest: &DatasetManifest, entry: &ManifestEntry) -> Result<PoseSequence> {
    let path = manifest.resolve(entry);
    load_pose_file(&path, entry.signer, entry.view, entry.gloss_id).map_err(|e| Error::Load {
        path,
        source: Box::new(e),
    })
}

fn failed_cells(seq: &PoseSequence) -> usize {
    seq.raw()
        .chunks_exact(3)
        .filter(|p| p[0] == 0.0 && p[1] == 0.0 && p[2] == 0.0)
        .count()
}

/// Fraction of `(frame, landmark)` cells whose triple is not exactly `(0,0,0)`.
pub fn keypoint_success_ratio(seq: &PoseSequence) -> f64 {
    let total = seq.num_frames() * NUM_LANDMARKS;
    1.0 - failed_cells(seq) as f64 / total as f64
}

#[derive(Debug, Clone, PartialEq)]
pub struct ClipQuality {
    pub clip_id: String,
    pub gloss_id: u32,
    pub signer: SignerId,
    pub view: ViewAngle,
    pub frames: usize,
    pub failed: usize,
    pub success_ratio: f64,
}

#[derive(Debug, Clone, Copy, Default, PartialEq)]
struct Tally {
    cells: u64,
    failed: u64,
}

impl Tally {
    fn add(&mut self, q: &ClipQuality) {
        self.cells += (q.frames * NUM_LANDMARKS) as u64;
        self.failed += q.failed as u64;
    }

    fn ratio(&self) -> f64 {
        1.0 - self.failed as f64 / self.cells as f64
    }
}

/// Keypoint-extraction diagnostics over a manifest. All means are weighted by
/// clip frame counts, which makes every aggregate a ratio of cell counts.
#[derive(Debug, Clone, PartialEq)]
pub struct QualityReport {
    pub per_sign_success: BTreeMap<u32, f64>,
    pub per_sign_view_success: BTreeMap<(u32, ViewAngle), f64>,
    pub per_view_success: BTreeMap<ViewAngle, f64>,
    pub dataset_success: f64,
    pub failed_counts: BTreeMap<u32, u64>,
    pub human_success: Option<f64>,
    pub synthetic_success: Option<f64>,
    /// Landmark slots that are zero in every frame of every clip. Synthetic
    /// clips only populate the 27 graph nodes, giving a floor of 48.
    pub never_detected_slots: usize,
    /// Per clip, sorted by clip identifier.
    pub clips: Vec<ClipQuality>,
}

pub fn clip_quality(seq: &PoseSequence) -> ClipQuality {
    let failed = failed_cells(seq);
    ClipQuality {
        clip_id: seq.clip_id(),
        gloss_id: seq.gloss_id,
        signer: seq.signer,
        view: seq.view,
        frames: seq.num_frames(),
        failed,
        success_ratio: 1.0 - failed as f64 / (seq.num_frames() * NUM_LANDMARKS) as f64,
    }
}

/// Aggregates per-clip quality rows. Rows are merged in clip-identifier order.
pub fn aggregate_quality(
    mut clips: Vec<ClipQuality>,
    populated: &[bool; NUM_LANDMARKS],
) -> Result<QualityReport> {
    if clips.is_empty() {
        return Err(Error::NoClips);
    }
    clips.sort_by(|a, b| a.clip_id.cmp(&b.clip_id));

    let mut per_sign: BTreeMap<u32, Tally> = BTreeMap::new();
    let mut per_sign_view: BTreeMap<(u32, ViewAngle), Tally> = BTreeMap::new();
    let mut per_view: BTreeMap<ViewAngle, Tally> = BTreeMap::new();
    let (mut all, mut human, mut synthetic) =
        (Tally::default(), Tally::default(), Tally::default());
    for q in &clips {
        per_sign.entry(q.gloss_id).or_default().add(q);
        per_sign_view
            .entry((q.gloss_id, q.view))
            .or_default()
            .add(q);
        per_view.entry(q.view).or_default().add(q);
        all.add(q);
        if q.signer.is_human() {
            human.add(q);
        } else {
            synthetic.add(q);
        }
    }
    let nonempty = |t: Tally| (t.cells > 0).then(|| t.ratio());
    Ok(QualityReport {
        per_sign_success: per_sign.iter().map(|(k, t)| (*k, t.ratio())).collect(),
        per_sign_view_success: per_sign_view.iter().map(|(k, t)| (*k, t.ratio())).collect(),
        per_view_success: per_view.iter().map(|(k, t)| (*k, t.ratio())).collect(),
        dataset_success: all.ratio(),
        failed_counts: per_sign.iter().map(|(k, t)| (*k, t.failed)).collect(),
        human_success: nonempty(human),
        synthetic_success: nonempty(synthetic),
        never_detected_slots: populated.iter().filter(|p| !**p).count(),
        clips,
    })
}

fn mark_populated(seq: &PoseSequence, populated: &mut [bool; NUM_LANDMARKS]) {
    for t in 0..seq.num_frames() {
        for (k, slot) in populated.iter_mut().enumerate() {
            if !*slot && seq.landmark(t, k) != [0.0; 3] {
                *slot = true;
            }
        }
    }
}

pub fn quality_of_sequences<'a>(
    seqs: impl IntoIterator<Item = &'a PoseSequence>,
) -> Result<QualityReport> {
    let mut populated = [false; NUM_LANDMARKS];
    let clips = seqs
        .into_iter()
        .map(|s| {
            mark_populated(s, &mut populated);
            clip_quality(s)
        })
        .collect();
    aggregate_quality(clips, &populated)
}

/// Loads every clip in the manifest and computes the quality report.
pub fn dataset_quality(manifest: &DatasetManifest) -> Result<QualityReport> {
    if manifest.entries.is_empty() {
        return Err(Error::NoClips);
    }
    let mut entries: Vec<&ManifestEntry> = manifest.entries.iter().collect();
    entries.sort_by(|a, b| a.clip_id.cmp(&b.clip_id));
    let mut populated = [false; NUM_LANDMARKS];
    let mut clips = Vec::with_capacity(entries.len());
    for e in entries {
        let seq = load_clip(manifest, e)?;
        mark_populated(&seq, &mut populated);
        clips.push(clip_quality(&seq));
    }
    aggregate_quality(clips, &populated)
}

#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct StatsReport {
    pub clips_per_signer: BTreeMap<SignerId, usize>,
    pub clips_per_view: BTreeMap<ViewAngle, usize>,
    pub clips_per_signer_view: BTreeMap<(SignerId, ViewAngle), usize>,
    pub handedness: BTreeMap<Handedness, usize>,
    pub strong_handshapes: BTreeMap<String, usize>,
    pub weak_handshapes: BTreeMap<String, usize>,
}

/// Clip counts and vocabulary histograms. Reads only the manifest.
pub fn dataset_stats(manifest: &DatasetManifest) -> StatsReport {
    let mut r = StatsReport::default();
    for e in &manifest.entries {
        *r.clips_per_signer.entry(e.signer).or_default() += 1;
        *r.clips_per_view.entry(e.view).or_default() += 1;
        *r.clips_per_signer_view
            .entry((e.signer, e.view))
            .or_default() += 1;
    }
    for g in &manifest.vocabulary {
        *r.handedness.entry(g.handedness).or_default() += 1;
        *r.strong_handshapes
            .entry(g.strong_handshape.clone())
            .or_default() += 1;
        if let Some(w) = &g.weak_handshape {
            *r.weak_handshapes.entry(w.clone()).or_default() += 1;
        }
    }
    r
}

/// Source frame copied into output slot `i` when resampling `source` frames to `target`.
#[inline]
pub fn resample_index(i: usize, source: usize, target: usize) -> usize {
    i * source / target
}

/// Nearest-prior uniform resampling to exactly `target` frames.
pub fn resample_time(seq: &PoseSequence, target: usize) -> Result<PoseSequence> {
    if target == 0 {
        return Err(Error::InvalidArgument(
            "target frame count must be >= 1".into(),
        ));
    }
    let source = seq.num_frames();
    let mut out = Vec::with_capacity(target * PoseSequence::FRAME_LEN);
    for i in 0..target {
        out.extend_from_slice(seq.frame(resample_index(i, source, target)));
    }
    PoseSequence::new(out, seq.signer, seq.view, seq.gloss_id, seq.fps)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn seq_from(raster: Vec<f32>) -> PoseSequence {
        PoseSequence::new(raster, SignerId::S1, ViewAngle::Front, 3, DEFAULT_FPS).unwrap()
    }

    fn random_raster(frames: usize, seed: u64) -> Vec<f32> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..frames * PoseSequence::FRAME_LEN)
            .map(|_| rng.gen_range(0.01..1.0))
            .collect()
    }

    /// Frame index of every output slot, by tagging each input frame with its index.
    fn picked_frames(source: usize, target: usize) -> Vec<usize> {
        let mut raster = Vec::new();
        for t in 0..source {
            raster.extend(std::iter::repeat(t as f32 + 1.0).take(PoseSequence::FRAME_LEN));
        }
        let out = resample_time(&seq_from(raster), target).unwrap();
        (0..target).map(|i| out.frame(i)[0] as usize - 1).collect()
    }

    #[test]
    fn round_trip_is_bit_identical() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("clip.ngtp");
        let seq = seq_from(random_raster(3, 1));
        write_pose_file(&path, &seq).unwrap();
        let back = load_pose_file(&path, SignerId::S1, ViewAngle::Front, 3).unwrap();
        let bits = |s: &PoseSequence| s.raw().iter().map(|v| v.to_bits()).collect::<Vec<_>>();
        assert_eq!(bits(&seq), bits(&back));
    }

    #[test]
    fn wrong_magic() {
        let mut bytes = encode_pose(&random_raster(2, 2), 2);
        bytes[..4].copy_from_slice(b"XXXX");
        assert!(matches!(
            decode_pose(&bytes, Path::new("x")),
            Err(Error::NotPoseFile(_))
        ));
    }

    #[test]
    fn truncated_payload() {
        let mut bytes = encode_pose(&random_raster(10, 3), 10);
        bytes.truncate(bytes.len() - PoseSequence::FRAME_LEN * 4);
        assert!(matches!(
            decode_pose(&bytes, Path::new("x")),
            Err(Error::Truncated {
                expected: 2250,
                found: 2025,
                ..
            })
        ));
    }

    #[test]
    fn unsupported_landmarks() {
        let mut bytes = encode_pose(&random_raster(1, 4), 1);
        bytes[12..16].copy_from_slice(&74u32.to_le_bytes());
        assert!(matches!(
            decode_pose(&bytes, Path::new("x")),
            Err(Error::UnsupportedLandmarks { landmarks: 74, .. })
        ));
    }

    #[test]
    fn success_ratio_extremes() {
        assert_eq!(keypoint_success_ratio(&seq_from(vec![0.0; 2 * 225])), 0.0);
        assert_eq!(keypoint_success_ratio(&seq_from(random_raster(4, 5))), 1.0);
    }

    #[test]
    fn one_failed_keypoint_in_ten_frames() {
        let mut r = random_raster(10, 6);
        let o = 7 * PoseSequence::FRAME_LEN + 40 * 3;
        r[o..o + 3].fill(0.0);
        // A partial zero is not a failure.
        r[0] = 0.0;
        assert_eq!(keypoint_success_ratio(&seq_from(r)), 1.0 - 1.0 / 750.0);
    }

    #[test]
    fn weighted_dataset_mean() {
        let a = seq_from(random_raster(4, 7));
        let mut half = random_raster(4, 8);
        for cell in half.chunks_exact_mut(3).step_by(2) {
            cell.fill(0.0);
        }
        // 300 cells, every second one zeroed: 150 failed.
        let mut b = seq_from(half);
        b.gloss_id = 4;
        let report = quality_of_sequences([&a, &b]).unwrap();
        assert_eq!(report.per_sign_success[&3], 1.0);
        assert_eq!(report.per_sign_success[&4], 0.5);
        assert_eq!(report.dataset_success, 0.75);
        assert_eq!(report.failed_counts[&4], 150);
        assert_eq!(report.human_success, Some(0.75));
        assert_eq!(report.synthetic_success, None);
    }

    #[test]
    fn empty_manifest_has_no_clips() {
        let m = DatasetManifest::new(vec![], vec![]);
        assert!(matches!(dataset_quality(&m), Err(Error::NoClips)));
    }

    #[test]
    fn toy_stats() {
        let entries = vec![
            ManifestEntry::new(0, SignerId::S1, ViewAngle::Front, "a"),
            ManifestEntry::new(1, SignerId::S1, ViewAngle::Front, "b"),
            ManifestEntry::new(0, SignerId::S2, ViewAngle::Left, "c"),
        ];
        let stats = dataset_stats(&DatasetManifest::new(vec![], entries));
        assert_eq!(
            stats.clips_per_signer,
            BTreeMap::from([(SignerId::S1, 2), (SignerId::S2, 1)])
        );
        assert_eq!(stats.clips_per_view[&ViewAngle::Front], 2);
    }

    #[test]
    fn resample_examples() {
        assert_eq!(picked_frames(5, 5), vec![0, 1, 2, 3, 4]);
        assert_eq!(picked_frames(4, 2), vec![0, 2]);
        assert_eq!(picked_frames(1, 3), vec![0, 0, 0]);
        assert!(resample_time(&seq_from(random_raster(1, 9)), 0).is_err());
    }

    #[test]
    fn resample_preserves_metadata() {
        let mut s = seq_from(random_raster(6, 10));
        s.signer = SignerId::A;
        let r = resample_time(&s, 9).unwrap();
        assert_eq!(
            (r.signer, r.view, r.gloss_id, r.num_frames()),
            (SignerId::A, s.view, 3, 9)
        );
    }
}
