//! Train/validation/test planning for the multi-view protocol.
//!
//! Three blocks, one per human test signer. Within a block the test clip of
//! every gloss is fixed and the validation clips rotate through the pool of
//! remaining clips: 3 folds for a single training view, 6 otherwise.

use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::types::{clip_id, DatasetManifest, SignerId, ViewAngle};

/// Seed recorded in plans whose construction involves no randomness.
pub const DEFAULT_PLAN_SEED: u64 = 0x5eed_0f01d;

/// Signers whose clips make up the per-gloss train/val pool.
const POOL_SIGNERS: [SignerId; 4] = [SignerId::S1, SignerId::S2, SignerId::S3, SignerId::A];

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct GlossSplit {
    pub train: Vec<String>,
    pub val: Vec<String>,
    pub test: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FoldPlan {
    pub test_signer: SignerId,
    /// Nominal test view; evaluation can target any view of the test signer.
    pub test_view: ViewAngle,
    pub block_index: usize,
    pub fold_index: usize,
    pub include_sb: bool,
    pub include_avatar: bool,
    pub views_in_training: BTreeSet<ViewAngle>,
    pub seed: u64,
    pub assignments: BTreeMap<u32, GlossSplit>,
}

impl FoldPlan {
    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let text = serde_json::to_string_pretty(self).expect("plan serializes");
        std::fs::write(path, text + "\n").map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        serde_json::from_str(&text).map_err(|source| Error::ManifestParse {
            path: path.to_path_buf(),
            source,
        })
    }

    /// `block{b}_fold{i}.json`
    pub fn file_name(&self) -> String {
        format!("block{}_fold{}.json", self.block_index, self.fold_index)
    }

    pub fn train_clips(&self) -> Vec<String> {
        self.assignments
            .values()
            .flat_map(|s| s.train.iter().cloned())
            .collect()
    }

    pub fn val_clips(&self) -> Vec<String> {
        self.assignments
            .values()
            .flat_map(|s| s.val.iter().cloned())
            .collect()
    }

    /// The test signer's clip of every gloss at `view`.
    pub fn test_clips(&self, view: ViewAngle) -> Vec<String> {
        self.assignments
            .keys()
            .map(|&g| clip_id(g, self.test_signer, view))
            .collect()
    }

    /// Drops avatar clips from train and validation lists.
    pub fn without_avatar(mut self) -> Self {
        let keep = |c: &String| c.split('_').nth(1) != Some(SignerId::A.as_str());
        for split in self.assignments.values_mut() {
            split.train.retain(keep);
            split.val.retain(keep);
        }
        self.include_avatar = false;
        self
    }

    /// Training-set label in table notation, e.g. `lfr^{12A}` or `f^{123}+Sb`.
    pub fn train_label(&self) -> String {
        let mut signers: BTreeSet<SignerId> = BTreeSet::new();
        for s in self.assignments.values() {
            for c in &s.train {
                if let Some(sig) = c.split('_').nth(1).and_then(|t| t.parse().ok()) {
                    signers.insert(sig);
                }
            }
        }
        signers_label(&self.views_in_training, &signers)
    }
}

/// `lfr^{12A}` style label; `Sb` is appended as `+Sb` since it is front-only.
pub fn signers_label(views: &BTreeSet<ViewAngle>, signers: &BTreeSet<SignerId>) -> String {
    let mut sup = String::new();
    for s in signers {
        match s {
            SignerId::S1 => sup.push('1'),
            SignerId::S2 => sup.push('2'),
            SignerId::S3 => sup.push('3'),
            SignerId::A => sup.push('A'),
            SignerId::Sb => {}
        }
    }
    let mut label = format!("{}^{{{sup}}}", ViewAngle::set_label(views));
    if signers.contains(&SignerId::Sb) {
        label.push_str("+Sb");
    }
    label
}

fn require(
    manifest: &DatasetManifest,
    gloss_id: u32,
    signer: SignerId,
    view: ViewAngle,
) -> Result<String> {
    manifest
        .find(gloss_id, signer, view)
        .map(|e| e.clip_id.clone())
        .ok_or(Error::MissingClip {
            gloss_id,
            signer,
            view,
        })
}

/// Number of folds per block for a training-view count.
pub fn folds_per_block(num_views: usize) -> Result<usize> {
    match num_views {
        1 => Ok(3),
        2 | 3 => Ok(6),
        n => Err(Error::InvalidArgument(format!(
            "{n} training views; expected 1, 2 or 3"
        ))),
    }
}

/// Pool positions held out for validation in fold `fold` of a pool of `pool_len`.
fn val_positions(num_views: usize, fold: usize, pool_len: usize) -> Vec<usize> {
    if num_views == 3 {
        vec![(2 * fold) % pool_len, (2 * fold + 1) % pool_len]
    } else {
        vec![fold % pool_len]
    }
}

/// All blocks and folds for one training-view configuration: 9 plans for a
/// single view, 18 for two or three views.
pub fn make_blocks(
    manifest: &DatasetManifest,
    views: &BTreeSet<ViewAngle>,
    include_sb: bool,
) -> Result<Vec<FoldPlan>> {
    let k = folds_per_block(views.len())?;
    let glosses = manifest.gloss_ids();
    if glosses.is_empty() {
        return Err(Error::NoClips);
    }
    let test_view = if views.contains(&ViewAngle::Front) {
        ViewAngle::Front
    } else {
        *views.iter().next().expect("non-empty")
    };

    let mut plans = Vec::with_capacity(3 * k);
    for (block, &test_signer) in SignerId::HUMAN_TEST.iter().enumerate() {
        // Per gloss: sorted pool, fixed test clip, optional Sb clip.
        let mut per_gloss = Vec::with_capacity(glosses.len());
        for &g in &glosses {
            let mut pool = Vec::with_capacity(9);
            for signer in POOL_SIGNERS.into_iter().filter(|&s| s != test_signer) {
                for &view in views {
                    pool.push(require(manifest, g, signer, view)?);
                }
            }
            pool.sort();
            let test = require(manifest, g, test_signer, test_view)?;
            let sb = if include_sb {
                Some(require(manifest, g, SignerId::Sb, ViewAngle::Front)?)
            } else {
                None
            };
            per_gloss.push((g, pool, test, sb));
        }

        for fold in 0..k {
            let mut assignments = BTreeMap::new();
            for (g, pool, test, sb) in &per_gloss {
                let held = val_positions(views.len(), fold, pool.len());
                let mut split = GlossSplit {
                    test: vec![test.clone()],
                    ..Default::default()
                };
                for (i, clip) in pool.iter().enumerate() {
                    if held.contains(&i) {
                        split.val.push(clip.clone());
                    } else {
                        split.train.push(clip.clone());
                    }
                }
                split.train.extend(sb.iter().cloned());
                assignments.insert(*g, split);
            }
            plans.push(FoldPlan {
                test_signer,
                test_view,
                block_index: block,
                fold_index: fold,
                include_sb,
                include_avatar: true,
                views_in_training: views.clone(),
                seed: DEFAULT_PLAN_SEED,
                assignments,
            });
        }
    }
    Ok(plans)
}

/// Novel-signer protocol: every view of S3 is held out for testing; S1, S2 and
/// optionally the avatar (all views) and Sb (front) form the training pool, of
/// which a seeded 10% is held out for validation.
pub fn make_novel_signer_split(
    manifest: &DatasetManifest,
    include_sb: bool,
    include_avatar: bool,
    seed: u64,
) -> Result<FoldPlan> {
    let glosses = manifest.gloss_ids();
    if glosses.is_empty() {
        return Err(Error::NoClips);
    }
    let mut train_signers = vec![SignerId::S1, SignerId::S2];
    if include_avatar {
        train_signers.push(SignerId::A);
    }

    let mut assignments = BTreeMap::new();
    let mut pool: Vec<(u32, String)> = Vec::new();
    for &g in &glosses {
        let mut split = GlossSplit::default();
        for view in ViewAngle::ALL {
            split.test.push(require(manifest, g, SignerId::S3, view)?);
            for &s in &train_signers {
                pool.push((g, require(manifest, g, s, view)?));
            }
        }
        if include_sb {
            pool.push((g, require(manifest, g, SignerId::Sb, ViewAngle::Front)?));
        }
        assignments.insert(g, split);
    }

    pool.sort();
    let mut order: Vec<usize> = (0..pool.len()).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let n_val = ((pool.len() as f64) * 0.1).round() as usize;
    let n_val = if pool.len() >= 2 { n_val.max(1) } else { 0 };
    let held: BTreeSet<usize> = order[..n_val].iter().copied().collect();
    for (i, (g, clip)) in pool.into_iter().enumerate() {
        let split = assignments.get_mut(&g).expect("gloss present");
        if held.contains(&i) {
            split.val.push(clip);
        } else {
            split.train.push(clip);
        }
    }

    Ok(FoldPlan {
        test_signer: SignerId::S3,
        test_view: ViewAngle::Front,
        block_index: 0,
        fold_index: 0,
        include_sb,
        include_avatar,
        views_in_training: ViewAngle::ALL.into_iter().collect(),
        seed,
        assignments,
    })
}
