//! Mini-batch training with Adam, warmup, decoupled decay and early stopping
//! on validation Top-1.

use std::io::Write;
use std::path::Path;

use geomsign_autodiff::{adam_step, AdamConfig, AdamState, DiffError, Real, Tensor};
use geomsign_core::graph::{default_edges, SkeletonEdges};
use geomsign_model::{Model, ModelConfig, ModelError, ModelInput, NodeTrack};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::Sample;
use crate::error::{HarnessError, Result};
use crate::metrics::topk_accuracy;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub learning_rate: f64,
    /// Linear warmup length in optimizer steps.
    pub warmup_steps: u64,
    /// Decoupled decay, applied to temporal convolution weights only.
    pub weight_decay: f64,
    /// Non-improving epochs tolerated before stopping.
    pub patience: usize,
    pub max_epochs: usize,
    /// Fixed clip length after resampling.
    pub frames: usize,
    /// Stop as soon as an evaluation pass over the training split reaches
    /// this Top-1.
    pub target_train_top1: Option<f64>,
    /// Wall-clock limit in seconds, checked after each epoch.
    pub time_budget_secs: Option<f64>,
    /// Global gradient-norm ceiling applied before each update.
    pub grad_clip_norm: Option<f64>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            batch_size: 32,
            learning_rate: 5e-3,
            warmup_steps: 100,
            weight_decay: 1e-3,
            patience: 25,
            max_epochs: 500,
            frames: 64,
            target_train_top1: None,
            time_budget_secs: None,
            grad_clip_norm: Some(1.0),
        }
    }
}

impl TrainConfig {
    pub fn adam(&self) -> AdamConfig {
        AdamConfig {
            base_lr: self.learning_rate,
            warmup_steps: self.warmup_steps,
            weight_decay: self.weight_decay,
            max_grad_norm: self.grad_clip_norm,
            ..AdamConfig::default()
        }
    }
}

/// Model and optimizer settings as one JSON document (`--config`).
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    #[serde(default)]
    pub model: ModelConfig,
    #[serde(default)]
    pub train: TrainConfig,
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| HarnessError::io(path, e))?;
        serde_json::from_str(&text)
            .map_err(|e| HarnessError::InvalidArgument(format!("{}: {e}", path.display())))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub step: u64,
    pub lr: f64,
    pub train_loss: f64,
    /// Running Top-1 over the epoch's batches, before each update.
    pub train_top1: f64,
    pub val_loss: Option<f64>,
    pub val_top1: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StopReason {
    Patience,
    MaxEpochs,
    TargetReached,
    TimeBudget,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainRun {
    pub seed: u64,
    pub epochs: Vec<EpochRecord>,
    /// 1-based epoch whose parameters were kept.
    pub best_epoch: usize,
    pub best_val_top1: Option<f64>,
    pub stop_reason: StopReason,
    pub steps: u64,
    /// Top-1 of the kept model on the training split, when measured.
    pub train_eval_top1: Option<f64>,
}

impl TrainRun {
    pub fn write_curves(&self, path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_path(path).map_err(|e| HarnessError::csv(path, e))?;
        w.write_record([
            "epoch",
            "step",
            "lr",
            "train_loss",
            "train_top1",
            "val_loss",
            "val_top1",
        ])
        .map_err(|e| HarnessError::csv(path, e))?;
        let opt = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
        for e in &self.epochs {
            w.write_record([
                e.epoch.to_string(),
                e.step.to_string(),
                e.lr.to_string(),
                e.train_loss.to_string(),
                e.train_top1.to_string(),
                opt(e.val_loss),
                opt(e.val_top1),
            ])
            .map_err(|e| HarnessError::csv(path, e))?;
        }
        w.flush().map_err(|e| HarnessError::io(path, e))
    }
}

pub struct Trained<F> {
    pub run: TrainRun,
    /// Parameters from `run.best_epoch`.
    pub best: Model<F>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalResult {
    pub n: usize,
    pub loss: f64,
    pub top1: f64,
    pub top3: f64,
    pub logits: Tensor<f64>,
    pub labels: Vec<usize>,
}

fn tracks(batch: &[&Sample]) -> Vec<NodeTrack> {
    batch.iter().map(|s| s.track.clone()).collect()
}

fn non_finite(epoch: usize, batch: usize, err: ModelError) -> HarnessError {
    match err {
        ModelError::Diff(DiffError::NonFinite { op, node }) => HarnessError::NonFinite {
            epoch,
            batch,
            op: op.to_string(),
            node,
        },
        other => other.into(),
    }
}

/// Visiting order of `n` training clips in `epoch`: a permutation drawn from
/// the stream `epoch` of `seed`.
pub fn epoch_order(n: usize, seed: u64, epoch: usize) -> Vec<usize> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(epoch as u64);
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut rng);
    order
}

/// Deterministic forward pass over `samples` in order.
pub fn evaluate<F: Real>(
    model: &Model<F>,
    samples: &[&Sample],
    batch_size: usize,
    edges: &SkeletonEdges,
) -> Result<EvalResult> {
    let c = model.config().num_classes;
    let mut logits = Vec::with_capacity(samples.len() * c);
    let mut labels = Vec::with_capacity(samples.len());
    for batch in samples.chunks(batch_size.max(1)) {
        let input = ModelInput::<F>::from_tracks(&tracks(batch), model.config(), edges)?;
        let out = model.logits(&input)?;
        logits.extend(out.data().iter().map(|v| v.as_f64()));
        labels.extend(batch.iter().map(|s| s.label));
    }
    let logits = Tensor::new(vec![labels.len(), c], logits)?;
    if labels.is_empty() {
        return Ok(EvalResult {
            n: 0,
            loss: f64::NAN,
            top1: f64::NAN,
            top3: f64::NAN,
            logits,
            labels,
        });
    }
    let mut loss = 0.0;
    for (row, &l) in logits.data().chunks_exact(c).zip(&labels) {
        let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let lse = max + row.iter().map(|v| (v - max).exp()).sum::<f64>().ln();
        loss += lse - row[l];
    }
    Ok(EvalResult {
        n: labels.len(),
        loss: loss / labels.len() as f64,
        top1: topk_accuracy(&logits, &labels, 1)?,
        top3: topk_accuracy(&logits, &labels, 3.min(c))?,
        logits,
        labels,
    })
}

/// Trains `model` on `train_set`, selecting the epoch with the highest
/// validation Top-1 (earliest on ties). Without a validation split the last
/// epoch is kept and only `max_epochs` or the train target stop the run.
/// `log` receives each finished epoch.
pub fn train<F: Real>(
    mut model: Model<F>,
    train_set: &[&Sample],
    val_set: &[&Sample],
    cfg: &TrainConfig,
    seed: u64,
    mut log: impl FnMut(&EpochRecord),
) -> Result<Trained<F>> {
    if train_set.is_empty() {
        return Err(HarnessError::EmptyTrainSplit);
    }
    if cfg.batch_size == 0 || cfg.max_epochs == 0 {
        return Err(HarnessError::InvalidArgument(
            "batch_size and max_epochs must be positive".into(),
        ));
    }
    let classes = model.config().num_classes;
    if let Some(s) = train_set.iter().chain(val_set).find(|s| s.label >= classes) {
        return Err(HarnessError::InvalidArgument(format!(
            "clip {} has label {} but the model has {classes} classes",
            s.clip_id, s.label
        )));
    }
    let edges = default_edges();
    let adam = cfg.adam();
    let decay = model.decay_mask();
    let mut state = AdamState::new(model.params());

    let mut epochs = Vec::new();
    let mut best: Option<(usize, f64, Model<F>)> = None;
    let mut stale = 0usize;
    let mut stop_reason = StopReason::MaxEpochs;
    let mut train_eval_top1 = None;

    let started = std::time::Instant::now();
    for epoch in 1..=cfg.max_epochs {
        let order = epoch_order(train_set.len(), seed, epoch);

        let (mut loss_sum, mut hits) = (0.0, 0usize);
        let mut lr = 0.0;
        for (bi, chunk) in order.chunks(cfg.batch_size).enumerate() {
            let batch: Vec<&Sample> = chunk.iter().map(|&i| train_set[i]).collect();
            let labels: Vec<usize> = batch.iter().map(|s| s.label).collect();
            let input = ModelInput::<F>::from_tracks(&tracks(&batch), model.config(), &edges)?;
            let (loss, logits, grads) = model
                .loss_and_grads(&input, &labels)
                .map_err(|e| non_finite(epoch, bi, e))?;
            if !loss.is_finite() {
                return Err(HarnessError::NonFinite {
                    epoch,
                    batch: bi,
                    op: "softmax_cross_entropy".into(),
                    node: 0,
                });
            }
            loss_sum += loss * batch.len() as f64;
            hits += (topk_accuracy(&logits, &labels, 1)? * batch.len() as f64).round() as usize;
            let refs: Vec<Option<&Tensor<F>>> = grads.iter().map(Option::as_ref).collect();
            lr = adam_step(model.params_mut(), &refs, &mut state, &decay, &adam)?;
            if let Some(i) = model.params().iter().position(|p| !p.is_finite()) {
                return Err(HarnessError::NonFinite {
                    epoch,
                    batch: bi,
                    op: format!("adam_step ({})", model.specs()[i].name),
                    node: i,
                });
            }
        }

        let n = train_set.len() as f64;
        let (val_loss, val_top1) = if val_set.is_empty() {
            (None, None)
        } else {
            let r = evaluate(&model, val_set, cfg.batch_size, &edges)?;
            (Some(r.loss), Some(r.top1))
        };
        let record = EpochRecord {
            epoch,
            step: state.step,
            lr,
            train_loss: loss_sum / n,
            train_top1: hits as f64 / n,
            val_loss,
            val_top1,
        };
        log(&record);
        epochs.push(record.clone());

        match val_top1 {
            Some(v) if best.as_ref().is_none_or(|(_, b, _)| v > *b) => {
                best = Some((epoch, v, model.clone()));
                stale = 0;
            }
            Some(_) => stale += 1,
            None => best = Some((epoch, f64::NAN, model.clone())),
        }

        if let Some(target) = cfg.target_train_top1 {
            // The running figure lags the weights; confirm with a clean pass.
            if record.train_top1 >= target {
                let r = evaluate(&model, train_set, cfg.batch_size, &edges)?;
                train_eval_top1 = Some(r.top1);
                if r.top1 >= target {
                    if val_set.is_empty() {
                        best = Some((epoch, f64::NAN, model.clone()));
                    }
                    stop_reason = StopReason::TargetReached;
                    break;
                }
            }
        }
        if val_top1.is_some() && stale > cfg.patience {
            stop_reason = StopReason::Patience;
            break;
        }
        if cfg
            .time_budget_secs
            .is_some_and(|b| started.elapsed().as_secs_f64() > b)
        {
            stop_reason = StopReason::TimeBudget;
            break;
        }
    }

    let (best_epoch, best_val, best_model) = best.expect("at least one epoch ran");
    Ok(Trained {
        run: TrainRun {
            seed,
            epochs,
            best_epoch,
            best_val_top1: (!best_val.is_nan()).then_some(best_val),
            stop_reason,
            steps: state.step,
            train_eval_top1,
        },
        best: best_model,
    })
}

/// Writes one epoch line to `out` in a fixed human-readable format.
pub fn log_epoch(out: &mut impl Write, e: &EpochRecord) {
    let opt = |v: Option<f64>| v.map_or("-".to_string(), |x| format!("{x:.4}"));
    let _ = writeln!(
        out,
        "epoch {:>4}  step {:>6}  lr {:.2e}  loss {:.4}  top1 {:.4}  val_loss {}  val_top1 {}",
        e.epoch,
        e.step,
        e.lr,
        e.train_loss,
        e.train_top1,
        opt(e.val_loss),
        opt(e.val_top1)
    );
}
