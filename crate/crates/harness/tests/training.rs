use std::collections::BTreeSet;

use geomsign_core::folds::make_blocks;
use geomsign_core::graph::default_edges;
use geomsign_core::synth::{synthesize, SynthConfig};
use geomsign_core::ViewAngle;
use geomsign_harness::report::write_metrics_csv;
use geomsign_harness::train::{epoch_order, StopReason};
use geomsign_harness::{
    evaluate, mean_std, train, ClipStore, HarnessError, MetricsRow, TrainConfig,
};
use geomsign_model::{checkpoint, Model, ModelConfig};
use proptest::prelude::*;

fn tiny_model(classes: usize) -> ModelConfig {
    ModelConfig {
        hidden_dim: 8,
        num_layers: 1,
        temporal_kernel: 3,
        basis_dim: 8,
        num_classes: classes,
        ..ModelConfig::default()
    }
}

fn tiny_train() -> TrainConfig {
    TrainConfig {
        batch_size: 8,
        warmup_steps: 2,
        max_epochs: 3,
        frames: 8,
        ..TrainConfig::default()
    }
}

fn store(classes: usize, seed: u64) -> ClipStore {
    let ds = synthesize(&SynthConfig::new(classes, 4, 8, seed)).unwrap();
    ClipStore::from_sequences(&ds.manifest, &ds.clips, 8).unwrap()
}

#[test]
fn same_seed_gives_identical_files() {
    let s = store(3, 1);
    let all = s.all();
    let (train_set, val_set) = all.split_at(all.len() - 6);
    let dir = tempfile::tempdir().unwrap();
    let mut outputs = Vec::new();
    for run in 0..2 {
        let model = Model::<f32>::init(tiny_model(3), 5).unwrap();
        let t = train(model, train_set, val_set, &tiny_train(), 5, |_| {}).unwrap();
        let d = dir.path().join(format!("run{run}"));
        std::fs::create_dir_all(&d).unwrap();
        t.run.write_curves(&d.join("curves.csv")).unwrap();
        checkpoint::save(&t.best, t.run.steps, &d.join("ckpt")).unwrap();
        let mut files = Vec::new();
        for entry in walk(&d) {
            files.push((
                entry.strip_prefix(&d).unwrap().to_path_buf(),
                std::fs::read(&entry).unwrap(),
            ));
        }
        files.sort();
        outputs.push(files);
    }
    assert!(outputs[0].len() > 3);
    assert_eq!(outputs[0], outputs[1]);
}

fn walk(dir: &std::path::Path) -> Vec<std::path::PathBuf> {
    let mut out = Vec::new();
    for e in std::fs::read_dir(dir).unwrap() {
        let p = e.unwrap().path();
        if p.is_dir() {
            out.extend(walk(&p));
        } else {
            out.push(p);
        }
    }
    out
}

#[test]
fn patience_zero_stops_at_first_non_improving_epoch() {
    let s = store(3, 2);
    let all = s.all();
    let (train_set, val_set) = all.split_at(all.len() - 6);
    let cfg = TrainConfig {
        patience: 0,
        max_epochs: 30,
        ..tiny_train()
    };
    let model = Model::<f32>::init(tiny_model(3), 3).unwrap();
    let t = train(model, train_set, val_set, &cfg, 3, |_| {}).unwrap();
    let vals: Vec<f64> = t.run.epochs.iter().map(|e| e.val_top1.unwrap()).collect();
    let last = vals.len() - 1;
    if t.run.stop_reason == StopReason::Patience {
        let best_before = vals[..last]
            .iter()
            .cloned()
            .fold(f64::NEG_INFINITY, f64::max);
        assert!(vals[last] <= best_before);
        // every earlier epoch improved
        for w in vals[..last].windows(2) {
            assert!(w[1] > w[0], "{vals:?}");
        }
    } else {
        assert_eq!(t.run.epochs.len(), 30);
    }
}

#[test]
fn empty_train_split_is_an_error() {
    let model = Model::<f32>::init(tiny_model(3), 0).unwrap();
    let r = train(model, &[], &[], &tiny_train(), 0, |_| {});
    assert!(matches!(r, Err(HarnessError::EmptyTrainSplit)));
}

#[test]
fn missing_clip_is_an_error() {
    let s = store(3, 1);
    assert!(matches!(
        s.select(&["99_S1_front".to_string()]),
        Err(HarnessError::MissingClip(_))
    ));
}

#[test]
fn early_stopping_keeps_the_best_earliest_epoch() {
    let s = store(4, 3);
    let all = s.all();
    let (train_set, val_set) = all.split_at(all.len() - 8);
    let cfg = TrainConfig {
        patience: 2,
        max_epochs: 8,
        ..tiny_train()
    };
    let model = Model::<f32>::init(tiny_model(4), 9).unwrap();
    let t = train(model, train_set, val_set, &cfg, 9, |_| {}).unwrap();
    let vals: Vec<f64> = t.run.epochs.iter().map(|e| e.val_top1.unwrap()).collect();
    let best = t.run.best_val_top1.unwrap();
    let best_idx = t.run.best_epoch - 1;
    assert_eq!(vals[best_idx], best);
    assert!(vals[..best_idx].iter().all(|&v| v < best));
    assert!(vals.iter().all(|&v| v <= best));
    // the kept model reproduces the recorded validation score
    let r = evaluate(&t.best, val_set, 8, &default_edges()).unwrap();
    assert_eq!(r.top1, best);
}

#[test]
fn running_top1_records_every_clip_each_epoch() {
    let s = store(3, 4);
    let all = s.all();
    let cfg = TrainConfig {
        max_epochs: 2,
        ..tiny_train()
    };
    let model = Model::<f32>::init(tiny_model(3), 1).unwrap();
    let t = train(model, &all, &[], &cfg, 1, |_| {}).unwrap();
    let per_epoch = all.len().div_ceil(cfg.batch_size) as u64;
    for e in &t.run.epochs {
        assert_eq!(e.step, per_epoch * e.epoch as u64);
        let scaled = e.train_top1 * all.len() as f64;
        assert!((scaled - scaled.round()).abs() < 1e-9);
    }
    assert_eq!(t.run.best_epoch, 2);
}

#[test]
fn top3_never_below_top1() {
    let s = store(6, 5);
    let all = s.all();
    for seed in 0..3 {
        let model = Model::<f32>::init(tiny_model(6), seed).unwrap();
        let r = evaluate(&model, &all, 16, &default_edges()).unwrap();
        assert!(r.top3 >= r.top1);
    }
}

#[test]
fn random_models_score_near_chance() {
    // 10 balanced classes: a random initialization scores about 0.1.
    let s = store(10, 6);
    let all = s.all();
    let mut scores = Vec::new();
    for seed in 0..20 {
        let model = Model::<f32>::init(tiny_model(10), 1000 + seed).unwrap();
        scores.push(evaluate(&model, &all, 40, &default_edges()).unwrap().top1);
    }
    let (mean, _) = mean_std(&scores);
    assert!((mean - 0.1).abs() <= 0.1, "mean {mean} over {scores:?}");
}

#[test]
fn fold_plans_feed_the_store() {
    let ds = synthesize(&SynthConfig::new(3, 4, 8, 1)).unwrap();
    let s = ClipStore::from_sequences(&ds.manifest, &ds.clips, 8).unwrap();
    let views: BTreeSet<ViewAngle> = ViewAngle::ALL.into_iter().collect();
    for plan in make_blocks(&ds.manifest, &views, false).unwrap() {
        assert_eq!(s.select(&plan.train_clips()).unwrap().len(), 3 * 7);
        assert_eq!(s.select(&plan.val_clips()).unwrap().len(), 3 * 2);
        for v in ViewAngle::ALL {
            assert_eq!(s.select(&plan.test_clips(v)).unwrap().len(), 3);
        }
    }
}

#[test]
fn metrics_csv_has_pinned_columns() {
    let dir = tempfile::tempdir().unwrap();
    let row = MetricsRow {
        train_views: "f".into(),
        signers: "f^{12A}".into(),
        test_view: "left".into(),
        variant: "baseline".into(),
        top1_mean: 0.25,
        top1_std: 0.0,
        top3_mean: 0.5,
        top3_std: 0.0,
        n_folds: 1,
    };
    let p = dir.path().join("m.csv");
    write_metrics_csv(&[row], &p).unwrap();
    let text = std::fs::read_to_string(&p).unwrap();
    assert_eq!(
        text.lines().next().unwrap(),
        "train_views,signers,test_view,variant,top1_mean,top1_std,top3_mean,top3_std,n_folds"
    );
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn fold_mean_std_matches_brute_force(values in prop::collection::vec(0.0f64..1.0, 1..20)) {
        let (m, s) = mean_std(&values);
        let n = values.len() as f64;
        let mut sum = 0.0;
        for v in &values {
            sum += v;
        }
        let mean = sum / n;
        let mut sq = 0.0;
        for v in &values {
            sq += (v - mean).powi(2);
        }
        prop_assert!((m - mean).abs() <= 1e-12);
        prop_assert!((s - (sq / n).sqrt()).abs() <= 1e-12);
    }

    #[test]
    fn shuffling_preserves_the_clip_set(seed in 0u64..1000, epoch in 1usize..50, n in 1usize..80) {
        let order = epoch_order(n, seed, epoch);
        let seen: BTreeSet<usize> = order.chunks(32).flatten().cloned().collect();
        prop_assert_eq!(seen.len(), n);
        prop_assert!(seen.iter().copied().eq(0..n));
    }
}
