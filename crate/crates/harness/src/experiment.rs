//! Fold-level experiments: train per fold (and seed), evaluate per test view,
//! aggregate into table rows.

use std::collections::{BTreeMap, BTreeSet};

use geomsign_autodiff::Real;
use geomsign_core::folds::{make_blocks, signers_label, FoldPlan};
use geomsign_core::graph::default_edges;
use geomsign_core::{DatasetManifest, SignerId, ViewAngle};
use geomsign_model::Model;
use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::ClipStore;
use crate::error::{HarnessError, Result};
use crate::metrics::{mean_std, MetricsRow};
use crate::train::{evaluate, train, RunConfig};

#[derive(Debug, Clone)]
pub struct ExperimentSpec {
    pub views: BTreeSet<ViewAngle>,
    pub include_sb: bool,
    pub include_avatar: bool,
    pub seeds: Vec<u64>,
    /// Plan indices (into the block/fold list) to run; `None` runs them all.
    pub folds: Option<Vec<usize>>,
    pub test_views: Vec<ViewAngle>,
    pub run: RunConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FoldResult {
    pub block: usize,
    pub fold: usize,
    pub seed: u64,
    pub test_view: ViewAngle,
    pub top1: f64,
    pub top3: f64,
    pub best_epoch: usize,
    pub epochs_run: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentResult {
    pub folds: Vec<FoldResult>,
    /// Mean and std across folds (seeds averaged within a fold first).
    pub table: Vec<MetricsRow>,
    /// Mean and std across seeds (folds averaged within a seed first).
    pub by_seed: Vec<MetricsRow>,
}

/// Independent 64-bit seed for `(experiment seed, index)`.
pub fn derive_seed(seed: u64, index: u64) -> u64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index);
    rng.next_u64()
}

/// Fold plans for `spec`, with avatar clips removed when excluded.
pub fn plans_for(manifest: &DatasetManifest, spec: &ExperimentSpec) -> Result<Vec<FoldPlan>> {
    let mut plans = make_blocks(manifest, &spec.views, spec.include_sb)?;
    if !spec.include_avatar {
        plans = plans.into_iter().map(FoldPlan::without_avatar).collect();
    }
    Ok(plans)
}

pub fn run_experiment<F: Real>(
    store: &ClipStore,
    manifest: &DatasetManifest,
    spec: &ExperimentSpec,
    mut log: impl FnMut(&str),
) -> Result<ExperimentResult> {
    if spec.seeds.is_empty() || spec.test_views.is_empty() {
        return Err(HarnessError::InvalidArgument(
            "need at least one seed and one test view".into(),
        ));
    }
    let plans = plans_for(manifest, spec)?;
    let selected: Vec<usize> = match &spec.folds {
        Some(list) => {
            if let Some(&bad) = list.iter().find(|&&i| i >= plans.len()) {
                return Err(HarnessError::InvalidArgument(format!(
                    "fold index {bad} >= {}",
                    plans.len()
                )));
            }
            list.clone()
        }
        None => (0..plans.len()).collect(),
    };
    let mut model_cfg = spec.run.model.clone();
    model_cfg.num_classes = store.num_classes();
    let edges = default_edges();

    let mut results = Vec::new();
    for &pi in &selected {
        let plan = &plans[pi];
        let train_set = store.select(&plan.train_clips())?;
        let val_set = store.select(&plan.val_clips())?;
        for &seed in &spec.seeds {
            let run_seed = derive_seed(seed, pi as u64);
            let model = Model::<F>::init(model_cfg.clone(), run_seed)?;
            let trained = train(
                model,
                &train_set,
                &val_set,
                &spec.run.train,
                run_seed,
                |_| {},
            )?;
            for &view in &spec.test_views {
                let test = store.select(&plan.test_clips(view))?;
                let r = evaluate(&trained.best, &test, spec.run.train.batch_size, &edges)?;
                log(&format!(
                    "block {} fold {} seed {seed} test {}: top1 {:.4} top3 {:.4} (best epoch {})",
                    plan.block_index,
                    plan.fold_index,
                    view.as_str(),
                    r.top1,
                    r.top3,
                    trained.run.best_epoch
                ));
                results.push(FoldResult {
                    block: plan.block_index,
                    fold: plan.fold_index,
                    seed,
                    test_view: view,
                    top1: r.top1,
                    top3: r.top3,
                    best_epoch: trained.run.best_epoch,
                    epochs_run: trained.run.epochs.len(),
                });
            }
        }
    }

    let mut signers = BTreeSet::new();
    for &pi in &selected {
        for c in plans[pi].train_clips() {
            if let Some(s) = c.split('_').nth(1).and_then(|t| t.parse::<SignerId>().ok()) {
                signers.insert(s);
            }
        }
    }
    let header = RowHeader {
        train_views: ViewAngle::set_label(&spec.views),
        signers: signers_label(&spec.views, &signers),
        variant: model_cfg.variant.as_str().to_string(),
    };
    Ok(ExperimentResult {
        table: aggregate_by_fold(&results, &spec.test_views, &header),
        by_seed: aggregate_by_seed(&results, &spec.test_views, &header),
        folds: results,
    })
}

#[derive(Debug, Clone)]
pub struct RowHeader {
    pub train_views: String,
    pub signers: String,
    pub variant: String,
}

fn row(h: &RowHeader, view: ViewAngle, top1: &[f64], top3: &[f64]) -> MetricsRow {
    let (top1_mean, top1_std) = mean_std(top1);
    let (top3_mean, top3_std) = mean_std(top3);
    MetricsRow {
        train_views: h.train_views.clone(),
        signers: h.signers.clone(),
        test_view: view.as_str().to_string(),
        variant: h.variant.clone(),
        top1_mean,
        top1_std,
        top3_mean,
        top3_std,
        n_folds: top1.len(),
    }
}

/// Groups results by `key` within each test view and averages each group.
fn group_means(
    results: &[FoldResult],
    view: ViewAngle,
    key: impl Fn(&FoldResult) -> (usize, usize, u64),
) -> (Vec<f64>, Vec<f64>) {
    let mut groups: BTreeMap<(usize, usize, u64), (Vec<f64>, Vec<f64>)> = BTreeMap::new();
    for r in results.iter().filter(|r| r.test_view == view) {
        let g = groups.entry(key(r)).or_default();
        g.0.push(r.top1);
        g.1.push(r.top3);
    }
    groups
        .values()
        .map(|(a, b)| (mean_std(a).0, mean_std(b).0))
        .unzip()
}

/// Headline aggregation: one value per fold (mean over seeds), then mean and
/// std across folds.
pub fn aggregate_by_fold(
    results: &[FoldResult],
    views: &[ViewAngle],
    h: &RowHeader,
) -> Vec<MetricsRow> {
    views
        .iter()
        .map(|&v| {
            let (t1, t3) = group_means(results, v, |r| (r.block, r.fold, 0));
            row(h, v, &t1, &t3)
        })
        .collect()
}

/// One value per seed (mean over folds), then mean and std across seeds.
/// `n_folds` then counts seeds.
pub fn aggregate_by_seed(
    results: &[FoldResult],
    views: &[ViewAngle],
    h: &RowHeader,
) -> Vec<MetricsRow> {
    views
        .iter()
        .map(|&v| {
            let (t1, t3) = group_means(results, v, |r| (0, 0, r.seed));
            row(h, v, &t1, &t3)
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RelativeDrop {
    pub train_views: String,
    pub signers: String,
    pub variant: String,
    pub test_view: String,
    pub front_top1: f64,
    pub view_top1: f64,
    /// `(front - view) / front`.
    pub drop: f64,
}

/// For every table group with a front row, the relative Top-1 drop of each
/// side view against front.
pub fn relative_drops(rows: &[MetricsRow]) -> Vec<RelativeDrop> {
    let front = ViewAngle::Front.as_str();
    let mut out = Vec::new();
    for f in rows.iter().filter(|r| r.test_view == front) {
        for r in rows.iter().filter(|r| {
            r.test_view != front
                && r.train_views == f.train_views
                && r.signers == f.signers
                && r.variant == f.variant
        }) {
            out.push(RelativeDrop {
                train_views: f.train_views.clone(),
                signers: f.signers.clone(),
                variant: f.variant.clone(),
                test_view: r.test_view.clone(),
                front_top1: f.top1_mean,
                view_top1: r.top1_mean,
                drop: (f.top1_mean - r.top1_mean) / f.top1_mean,
            });
        }
    }
    out
}
