//! Procedural multi-view skeleton data. Each class is a set of harmonic node
//! trajectories around a rest pose; every signer applies a style jitter; each
//! clip is rendered through a three-camera pinhole rig into 75-slot pose
//! rasters with only the 27 graph landmarks populated.

use std::f64::consts::PI;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::{default_node_map, NUM_BODY_NODES, NUM_HAND_NODES, NUM_NODES};
use crate::ingest::{write_pose_file, DEFAULT_FPS};
use crate::types::{
    DatasetManifest, GlossEntry, Handedness, ManifestEntry, PoseSequence, SignerId, ViewAngle,
    NUM_LANDMARKS,
};

pub const MAX_AMPLITUDE_M: f64 = 0.5;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CameraRig {
    pub azimuths_deg: Vec<f64>,
    pub distance_m: f64,
    pub focal: f64,
    pub image_center: (f64, f64),
}

impl Default for CameraRig {
    fn default() -> Self {
        Self {
            azimuths_deg: ViewAngle::ALL.iter().map(|v| v.azimuth_deg()).collect(),
            distance_m: 4.0,
            focal: 1.6,
            image_center: (0.5, 0.5),
        }
    }
}

/// Pinhole projection of world points (meters, `y` vertical, signer at the
/// origin) seen from a camera at `azimuth_deg` on the horizontal arc.
///
/// Returns normalized `(x, y)` image coordinates and camera-frame depth.
pub fn project(points: &[[f64; 3]], azimuth_deg: f64, rig: &CameraRig) -> Result<Vec<[f64; 3]>> {
    let (s, c) = (-azimuth_deg.to_radians()).sin_cos();
    points
        .iter()
        .enumerate()
        .map(|(i, &[x, y, z])| {
            // Rotation about the vertical axis by -azimuth.
            let xr = c * x + s * z;
            let zr = -s * x + c * z;
            let depth = rig.distance_m + zr;
            if depth <= 0.0 {
                return Err(Error::BehindCamera { index: i, depth });
            }
            Ok([
                rig.image_center.0 + rig.focal * xr / depth,
                rig.image_center.1 + rig.focal * y / depth,
                depth,
            ])
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Harmonic {
    pub amplitude: f64,
    pub frequency: f64,
    pub phase: f64,
}

impl Harmonic {
    fn eval(&self, t: f64, amp_scale: f64, phase_offset: f64) -> f64 {
        amp_scale
            * self.amplitude
            * (2.0 * PI * self.frequency * t + self.phase + phase_offset).sin()
    }
}

/// Class motion: per node and axis, a list of harmonics around `base_pose`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MotionTemplate {
    pub gloss_id: u32,
    pub harmonics: Vec<[Vec<Harmonic>; 3]>,
    pub base_pose: Vec<[f64; 3]>,
}

impl MotionTemplate {
    pub fn max_amplitude(&self) -> f64 {
        self.harmonics
            .iter()
            .flat_map(|axes| axes.iter().flatten())
            .map(|h| h.amplitude.abs())
            .fold(0.0, f64::max)
    }
}

/// Per-signer variation applied to every class.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SignerStyle {
    pub amplitude_scale: f64,
    pub phase_offset: f64,
    pub translation: [f64; 3],
    /// Body tilt about the depth axis, radians.
    pub roll: f64,
}

impl SignerStyle {
    pub const NEUTRAL: SignerStyle = SignerStyle {
        amplitude_scale: 1.0,
        phase_offset: 0.0,
        translation: [0.0; 3],
        roll: 0.0,
    };
}

/// Rest pose in meters (`y` points down, negative `z` toward the front camera).
pub fn rest_pose() -> Vec<[f64; 3]> {
    let mut p = vec![
        [0.0, -0.45, -0.08], // nose
        [0.19, -0.25, 0.0],  // left shoulder
        [-0.19, -0.25, 0.0], // right shoulder
        [0.27, 0.0, -0.02],  // left elbow
        [-0.27, 0.0, -0.02], // right elbow
        [0.18, 0.18, -0.15], // left wrist
        [-0.18, 0.18, -0.15],
    ];
    for side in [1.0, -1.0] {
        let wrist = if side > 0.0 { p[5] } else { p[6] };
        let at = |dx: f64, dy: f64| [wrist[0] + side * dx, wrist[1] + dy, wrist[2] - 0.01];
        p.push(at(0.0, 0.02)); // hand wrist
        p.push(at(-0.05, -0.05)); // thumb tip
        for (i, spread) in [-0.025, -0.008, 0.008, 0.025].into_iter().enumerate() {
            let len = [0.07, 0.08, 0.075, 0.06][i];
            p.push(at(spread, -0.06));
            p.push(at(spread * 1.4, -0.06 - len));
        }
    }
    debug_assert_eq!(p.len(), NUM_NODES);
    p
}

fn harmonic(rng: &mut ChaCha8Rng, max_amp: f64) -> Harmonic {
    Harmonic {
        amplitude: rng.gen_range(0.2 * max_amp..max_amp),
        frequency: rng.gen_range(0.4..1.8),
        phase: rng.gen_range(0.0..2.0 * PI),
    }
}

/// Draws a class template: shoulders and nose nearly still, arms moving, each
/// hand following its wrist plus a finger articulation term. The weak hand of
/// a one-handed sign barely moves.
pub fn random_template(
    gloss_id: u32,
    handedness: Handedness,
    rng: &mut ChaCha8Rng,
) -> MotionTemplate {
    let base_pose = rest_pose();
    let mut harmonics: Vec<[Vec<Harmonic>; 3]> = vec![Default::default(); NUM_NODES];
    let node_amp = |k: usize| match k {
        0..=2 => 0.02,
        3 | 4 => 0.08,
        _ => 0.0,
    };
    for (k, axes) in harmonics.iter_mut().enumerate().take(5) {
        for axis in axes.iter_mut() {
            axis.push(harmonic(rng, node_amp(k)));
        }
    }
    // Right hand is dominant; left follows the handedness class.
    for (body_wrist, hand_start, weak) in [
        (5, NUM_BODY_NODES, true),
        (6, NUM_BODY_NODES + NUM_HAND_NODES, false),
    ] {
        let wrist_amp = if !weak || handedness != Handedness::One {
            0.25
        } else {
            0.03
        };
        let finger_amp = if !weak || handedness != Handedness::One {
            0.03
        } else {
            0.005
        };
        let wrist: [Vec<Harmonic>; 3] =
            std::array::from_fn(|_| (0..2).map(|_| harmonic(rng, wrist_amp)).collect());
        harmonics[body_wrist] = wrist.clone();
        for k in hand_start..hand_start + NUM_HAND_NODES {
            let mut axes = wrist.clone();
            if k > hand_start {
                for axis in axes.iter_mut() {
                    axis.push(harmonic(rng, finger_amp));
                }
            }
            harmonics[k] = axes;
        }
    }
    // Symmetric two-handed signs mirror the dominant hand's wrist in x.
    if handedness == Handedness::TwoSym {
        for offset in 0..NUM_HAND_NODES {
            let mut mirrored = harmonics[NUM_BODY_NODES + NUM_HAND_NODES + offset].clone();
            for h in mirrored[0].iter_mut() {
                h.phase += PI;
            }
            harmonics[NUM_BODY_NODES + offset] = mirrored;
        }
        harmonics[5] = harmonics[NUM_BODY_NODES].clone();
    }
    MotionTemplate {
        gloss_id,
        harmonics,
        base_pose,
    }
}

/// 3D node positions at time `t` seconds.
pub fn pose_at(template: &MotionTemplate, style: &SignerStyle, t: f64) -> Vec<[f64; 3]> {
    let (sr, cr) = style.roll.sin_cos();
    template
        .base_pose
        .iter()
        .zip(&template.harmonics)
        .map(|(base, axes)| {
            let mut p = [0.0; 3];
            for a in 0..3 {
                p[a] = base[a]
                    + axes[a]
                        .iter()
                        .map(|h| h.eval(t, style.amplitude_scale, style.phase_offset))
                        .sum::<f64>();
            }
            // Tilt about the chest-centred depth axis, then translate.
            let (x, y) = (cr * p[0] - sr * p[1], sr * p[0] + cr * p[1]);
            [
                x + style.translation[0],
                y + style.translation[1],
                p[2] + style.translation[2],
            ]
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthConfig {
    pub n_classes: usize,
    pub n_signers: usize,
    pub frames_per_clip: usize,
    pub seed: u64,
    pub fps: f64,
    /// Standard deviation of per-frame 2D keypoint noise, normalized units.
    pub keypoint_noise: f64,
    /// Maximum signer tilt, degrees.
    pub max_roll_deg: f64,
    pub rig: CameraRig,
}

impl SynthConfig {
    pub fn new(n_classes: usize, n_signers: usize, frames_per_clip: usize, seed: u64) -> Self {
        Self {
            n_classes,
            n_signers,
            frames_per_clip,
            seed,
            fps: DEFAULT_FPS as f64,
            keypoint_noise: 0.002,
            max_roll_deg: 20.0,
            rig: CameraRig::default(),
        }
    }
}

pub struct SyntheticDataset {
    pub manifest: DatasetManifest,
    pub templates: Vec<MotionTemplate>,
    pub styles: Vec<(SignerId, SignerStyle)>,
    /// One clip per manifest entry, in manifest order.
    pub clips: Vec<PoseSequence>,
}

const HANDSHAPES: [&str; 8] = ["B", "5", "1", "A", "S", "C", "O", "V"];

/// Independent random stream for a `(domain, index)` pair of one seed.
fn stream(seed: u64, domain: u64, index: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream((domain << 48) | index);
    rng
}

fn signer_style(rng: &mut ChaCha8Rng, max_roll_deg: f64) -> SignerStyle {
    let roll = max_roll_deg.to_radians();
    SignerStyle {
        amplitude_scale: rng.gen_range(0.8..1.2),
        phase_offset: rng.gen_range(-0.6..0.6),
        translation: [
            rng.gen_range(-0.1..0.1),
            rng.gen_range(-0.1..0.1),
            rng.gen_range(-0.1..0.1),
        ],
        roll: if roll > 0.0 {
            rng.gen_range(-roll..roll)
        } else {
            0.0
        },
    }
}

fn gaussian(rng: &mut ChaCha8Rng) -> f64 {
    // Box-Muller; one draw per call keeps the stream layout simple.
    let u1: f64 = rng.gen_range(f64::EPSILON..1.0);
    let u2: f64 = rng.gen();
    (-2.0 * u1.ln()).sqrt() * (2.0 * PI * u2).cos()
}

/// Renders one clip of `template` for `style` through camera `view`.
pub fn render_clip(
    template: &MotionTemplate,
    style: &SignerStyle,
    view: ViewAngle,
    cfg: &SynthConfig,
    noise: &mut ChaCha8Rng,
) -> Result<Vec<f32>> {
    let map = default_node_map();
    let mut raster = vec![0.0f32; cfg.frames_per_clip * NUM_LANDMARKS * 3];
    for t in 0..cfg.frames_per_clip {
        let pts = pose_at(template, style, t as f64 / cfg.fps);
        let img = project(&pts, view.azimuth_deg(), &cfg.rig)?;
        let frame = &mut raster[t * NUM_LANDMARKS * 3..(t + 1) * NUM_LANDMARKS * 3];
        for (k, p) in img.iter().enumerate() {
            let o = map.indices[k] * 3;
            frame[o] = (p[0] + cfg.keypoint_noise * gaussian(noise)) as f32;
            frame[o + 1] = (p[1] + cfg.keypoint_noise * gaussian(noise)) as f32;
            frame[o + 2] = p[2] as f32;
        }
    }
    Ok(raster)
}

/// Builds the whole dataset in memory. Every `(class, signer)` pair draws from
/// its own stream, so the output does not depend on generation order.
pub fn synthesize(cfg: &SynthConfig) -> Result<SyntheticDataset> {
    if cfg.n_classes < 2 || cfg.n_classes > 200 {
        return Err(Error::InvalidArgument(
            "n_classes must be in [2, 200]".into(),
        ));
    }
    if cfg.n_signers < 2 || cfg.n_signers > SignerId::ALL.len() {
        return Err(Error::InvalidArgument("n_signers must be in [2, 5]".into()));
    }
    if cfg.frames_per_clip == 0 {
        return Err(Error::InvalidArgument(
            "frames_per_clip must be >= 1".into(),
        ));
    }

    let mut vocabulary = Vec::with_capacity(cfg.n_classes);
    let mut templates = Vec::with_capacity(cfg.n_classes);
    for g in 0..cfg.n_classes as u32 {
        let mut rng = stream(cfg.seed, 1, g as u64);
        let handedness = match rng.gen_range(0..200) {
            0..=121 => Handedness::One,
            122..=184 => Handedness::TwoSym,
            _ => Handedness::TwoAsym,
        };
        let strong = HANDSHAPES[rng.gen_range(0..HANDSHAPES.len())].to_string();
        let weak = (handedness != Handedness::One)
            .then(|| HANDSHAPES[rng.gen_range(0..HANDSHAPES.len())].to_string());
        templates.push(random_template(g, handedness, &mut rng));
        vocabulary.push(GlossEntry {
            gloss_id: g,
            label: format!("SYN{g:03}"),
            handedness,
            strong_handshape: strong,
            weak_handshape: weak,
        });
    }

    let styles: Vec<(SignerId, SignerStyle)> = SignerId::ALL[..cfg.n_signers]
        .iter()
        .enumerate()
        .map(|(i, &s)| {
            (
                s,
                signer_style(&mut stream(cfg.seed, 2, i as u64), cfg.max_roll_deg),
            )
        })
        .collect();

    let mut entries = Vec::new();
    let mut clips = Vec::new();
    for template in &templates {
        for (i, (signer, style)) in styles.iter().enumerate() {
            let mut rng = stream(cfg.seed, 3, ((template.gloss_id as u64) << 8) | i as u64);
            for view in ViewAngle::ALL {
                let raster = render_clip(template, style, view, cfg, &mut rng)?;
                let seq =
                    PoseSequence::new(raster, *signer, view, template.gloss_id, cfg.fps as f32)?;
                entries.push(ManifestEntry::new(
                    template.gloss_id,
                    *signer,
                    view,
                    format!("poses/{}.ngtp", seq.clip_id()),
                ));
                clips.push(seq);
            }
        }
    }
    Ok(SyntheticDataset {
        manifest: DatasetManifest::new(vocabulary, entries),
        templates,
        styles,
        clips,
    })
}

/// Writes `manifest.json` and `poses/*.ngtp` under `out_dir`.
pub fn write_dataset(ds: &SyntheticDataset, out_dir: &Path) -> Result<DatasetManifest> {
    let poses = out_dir.join("poses");
    std::fs::create_dir_all(&poses).map_err(|e| Error::io(&poses, e))?;
    for (entry, clip) in ds.manifest.entries.iter().zip(&ds.clips) {
        write_pose_file(out_dir.join(&entry.path), clip)?;
    }
    let mut manifest = ds.manifest.clone();
    manifest.root = out_dir.to_path_buf();
    manifest.save(out_dir.join("manifest.json"))?;
    Ok(manifest)
}

pub fn generate_dataset(cfg: &SynthConfig, out_dir: &Path) -> Result<DatasetManifest> {
    write_dataset(&synthesize(cfg)?, out_dir)
}
