//! `geomsign` command-line entry point.

use std::collections::BTreeSet;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::Context;
use clap::{Args, Parser, Subcommand};
use geomsign_core::folds::{make_blocks, make_novel_signer_split, FoldPlan};
use geomsign_core::graph::{default_edges, default_node_map};
use geomsign_core::ingest::{
    dataset_quality, dataset_stats, load_clip, resample_time, write_pose_file,
};
use geomsign_core::synth::{generate_dataset, SynthConfig};
use geomsign_core::{DatasetManifest, ManifestEntry, ViewAngle};
use geomsign_harness::experiment::{relative_drops, ExperimentResult};
use geomsign_harness::report::{read_metrics_csv, write_metrics_csv, write_report};
use geomsign_harness::train::log_epoch;
use geomsign_harness::{
    evaluate, run_experiment, train, ClipStore, ExperimentSpec, MetricsRow, RunConfig,
};
use geomsign_model::{checkpoint, Model, Variant};
use serde::Serialize;

// Large short-lived tensors make the system allocator fault pages on every step.
#[global_allocator]
static ALLOC: mimalloc::MiMalloc = mimalloc::MiMalloc;

#[derive(Parser)]
#[command(
    name = "geomsign",
    version,
    about = "Multi-view isolated sign recognition toolkit"
)]
struct Cli {
    /// JSON file with `model` and `train` sections.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Experiment seed.
    #[arg(long, global = true, default_value_t = 0)]
    seed: u64,
    /// Output file or directory, depending on the command.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Validate a manifest, resample every clip to a fixed length and write a
    /// self-contained copy under `--out`.
    Ingest {
        manifest: PathBuf,
        #[arg(long, default_value_t = geomsign_core::ingest::DEFAULT_TARGET_FRAMES)]
        frames: usize,
    },
    /// Check manifest rules and decode every pose file.
    Validate { manifest: PathBuf },
    /// Keypoint quality and clip counts; per-clip CSV to `--out`.
    Stats { manifest: PathBuf },
    /// Write one fold plan JSON per fold into `--out`.
    Split {
        manifest: PathBuf,
        #[command(flatten)]
        data: DataArgs,
        /// Hold out S3 entirely instead of the block/fold protocol.
        #[arg(long)]
        novel_signer: bool,
    },
    /// Generate a synthetic multi-view dataset into `--out`.
    Synth {
        #[arg(long, default_value_t = 10)]
        classes: usize,
        #[arg(long, default_value_t = 4)]
        signers: usize,
        #[arg(long, default_value_t = 64)]
        frames: usize,
    },
    /// Train on one fold plan; writes curves, metrics and the best checkpoint.
    Train {
        manifest: PathBuf,
        #[arg(long)]
        plan: PathBuf,
        #[arg(long)]
        variant: Option<Variant>,
    },
    /// Evaluate a checkpoint on a plan's test clips.
    Eval {
        manifest: PathBuf,
        #[arg(long)]
        plan: PathBuf,
        #[arg(long)]
        checkpoint: PathBuf,
        /// Test view (`left`, `front`, `right`); all views when omitted.
        #[arg(long)]
        test_view: Option<ViewAngle>,
    },
    /// Train and evaluate over every fold of a view configuration.
    Experiment {
        manifest: PathBuf,
        #[command(flatten)]
        data: DataArgs,
        #[arg(long)]
        variant: Option<Variant>,
        /// Comma-separated seeds; defaults to `--seed`.
        #[arg(long, value_delimiter = ',')]
        seeds: Vec<u64>,
        /// Comma-separated plan indices to run; all when omitted.
        #[arg(long, value_delimiter = ',')]
        folds: Vec<usize>,
    },
    /// Merge metrics CSVs into CSV and markdown tables with a gain column.
    Report {
        #[arg(required = true)]
        metrics: Vec<PathBuf>,
    },
    /// Print the node map and edge list as JSON.
    Graph {
        #[arg(long)]
        dump_map: bool,
    },
}

#[derive(Args)]
struct DataArgs {
    /// Training views, e.g. `f` or `lfr`.
    #[arg(long, default_value = "lfr")]
    views: String,
    /// Add the SignBank front clip of every gloss to training.
    #[arg(long)]
    sb: bool,
    /// Drop avatar clips from training and validation.
    #[arg(long)]
    no_avatar: bool,
}

/// Failure kinds mapped to process exit codes.
enum Failure {
    Invalid(String),
    Runtime(anyhow::Error),
}

impl From<anyhow::Error> for Failure {
    fn from(e: anyhow::Error) -> Self {
        Failure::Runtime(e)
    }
}

type CmdResult = Result<(), Failure>;

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Invalid(msg)) => {
            eprintln!("validation failed: {msg}");
            ExitCode::from(2)
        }
        Err(Failure::Runtime(e)) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}

fn run(cli: &Cli) -> CmdResult {
    match &cli.command {
        Command::Ingest { manifest, frames } => ingest(manifest, *frames, require_out(cli)?),
        Command::Validate { manifest } => validate(manifest),
        Command::Stats { manifest } => stats(manifest, cli.out.as_deref()),
        Command::Split {
            manifest,
            data,
            novel_signer,
        } => split(manifest, data, *novel_signer, cli.seed, require_out(cli)?),
        Command::Synth {
            classes,
            signers,
            frames,
        } => {
            let out = require_out(cli)?;
            let m = generate_dataset(
                &SynthConfig::new(*classes, *signers, *frames, cli.seed),
                out,
            )
            .context("synthesizing dataset")?;
            println!("wrote {} clips to {}", m.entries.len(), out.display());
            Ok(())
        }
        Command::Train {
            manifest,
            plan,
            variant,
        } => train_cmd(cli, manifest, plan, *variant),
        Command::Eval {
            manifest,
            plan,
            checkpoint,
            test_view,
        } => eval_cmd(cli, manifest, plan, checkpoint, *test_view),
        Command::Experiment {
            manifest,
            data,
            variant,
            seeds,
            folds,
        } => experiment_cmd(cli, manifest, data, *variant, seeds, folds),
        Command::Report { metrics } => report_cmd(metrics, require_out(cli)?),
        Command::Graph { dump_map } => {
            if !dump_map {
                return Err(Failure::Invalid("graph needs --dump-map".into()));
            }
            #[derive(Serialize)]
            struct Dump {
                node_map: geomsign_core::graph::NodeMap,
                edges: geomsign_core::graph::SkeletonEdges,
            }
            let dump = Dump {
                node_map: default_node_map(),
                edges: default_edges(),
            };
            println!(
                "{}",
                serde_json::to_string_pretty(&dump).context("serializing graph")?
            );
            Ok(())
        }
    }
}

fn require_out(cli: &Cli) -> Result<&Path, Failure> {
    cli.out
        .as_deref()
        .ok_or_else(|| Failure::Invalid("this command needs --out".into()))
}

fn load_manifest(path: &Path) -> Result<DatasetManifest, Failure> {
    let manifest = DatasetManifest::load(path).map_err(|e| Failure::Invalid(e.to_string()))?;
    let violations = manifest.validate();
    if !violations.is_empty() {
        for v in &violations {
            eprintln!("{v}");
        }
        return Err(Failure::Invalid(format!(
            "{} manifest violation(s)",
            violations.len()
        )));
    }
    Ok(manifest)
}

fn load_run_config(cli: &Cli, variant: Option<Variant>) -> Result<RunConfig, Failure> {
    let mut cfg = match &cli.config {
        Some(p) => RunConfig::load(p).map_err(|e| Failure::Invalid(e.to_string()))?,
        None => RunConfig::default(),
    };
    if let Some(v) = variant {
        cfg.model.variant = v;
    }
    Ok(cfg)
}

fn ingest(path: &Path, frames: usize, out: &Path) -> CmdResult {
    let manifest = load_manifest(path)?;
    let poses = out.join("poses");
    std::fs::create_dir_all(&poses).with_context(|| format!("creating {}", poses.display()))?;
    let mut entries = Vec::with_capacity(manifest.entries.len());
    for e in &manifest.entries {
        let seq = load_clip(&manifest, e).map_err(|e| Failure::Invalid(e.to_string()))?;
        let seq = resample_time(&seq, frames).context("resampling")?;
        let rel = PathBuf::from("poses").join(format!("{}.ngtp", e.clip_id));
        write_pose_file(out.join(&rel), &seq).context("writing pose file")?;
        entries.push(ManifestEntry::new(e.gloss_id, e.signer, e.view, rel));
    }
    let copy = DatasetManifest::new(manifest.vocabulary.clone(), entries);
    copy.save(out.join("manifest.json"))
        .context("writing manifest")?;
    println!(
        "ingested {} clips at {frames} frames into {}",
        copy.entries.len(),
        out.display()
    );
    Ok(())
}

fn validate(path: &Path) -> CmdResult {
    let manifest = load_manifest(path)?;
    let mut bad = 0usize;
    for e in &manifest.entries {
        if let Err(err) = load_clip(&manifest, e) {
            eprintln!("{}: {err}", e.clip_id);
            bad += 1;
        }
    }
    if bad > 0 {
        return Err(Failure::Invalid(format!("{bad} unreadable clip(s)")));
    }
    println!(
        "ok: {} clips, {} glosses",
        manifest.entries.len(),
        manifest.vocabulary.len()
    );
    Ok(())
}

fn stats(path: &Path, out: Option<&Path>) -> CmdResult {
    let manifest = load_manifest(path)?;
    let counts = dataset_stats(&manifest);
    let q = dataset_quality(&manifest).context("computing keypoint quality")?;
    let mut so = std::io::stdout().lock();
    let _ = writeln!(so, "dataset success {:.4}", q.dataset_success);
    if let Some(h) = q.human_success {
        let _ = writeln!(so, "human success {h:.4}");
    }
    if let Some(s) = q.synthetic_success {
        let _ = writeln!(so, "synthetic success {s:.4}");
    }
    for (v, r) in &q.per_view_success {
        let _ = writeln!(so, "view {v} success {r:.4}");
    }
    for (s, n) in &counts.clips_per_signer {
        let _ = writeln!(so, "signer {s} clips {n}");
    }
    for (h, n) in &counts.handedness {
        let _ = writeln!(so, "handedness {h:?} glosses {n}");
    }
    if let Some(out) = out {
        let mut w =
            csv::Writer::from_path(out).with_context(|| format!("creating {}", out.display()))?;
        w.write_record(["gloss_id", "signer", "view", "frames", "success_ratio"])
            .context("writing stats")?;
        for c in &q.clips {
            w.write_record([
                c.gloss_id.to_string(),
                c.signer.to_string(),
                c.view.to_string(),
                c.frames.to_string(),
                c.success_ratio.to_string(),
            ])
            .context("writing stats")?;
        }
        w.flush().context("writing stats")?;
    }
    Ok(())
}

fn parse_views(s: &str) -> Result<BTreeSet<ViewAngle>, Failure> {
    ViewAngle::parse_set(s).map_err(|e| Failure::Invalid(e.to_string()))
}

fn plans(manifest: &DatasetManifest, data: &DataArgs) -> Result<Vec<FoldPlan>, Failure> {
    let views = parse_views(&data.views)?;
    let mut plans =
        make_blocks(manifest, &views, data.sb).map_err(|e| Failure::Invalid(e.to_string()))?;
    if data.no_avatar {
        plans = plans.into_iter().map(FoldPlan::without_avatar).collect();
    }
    Ok(plans)
}

fn split(path: &Path, data: &DataArgs, novel_signer: bool, seed: u64, out: &Path) -> CmdResult {
    let manifest = load_manifest(path)?;
    let plans = if novel_signer {
        vec![
            make_novel_signer_split(&manifest, data.sb, !data.no_avatar, seed)
                .map_err(|e| Failure::Invalid(e.to_string()))?,
        ]
    } else {
        plans(&manifest, data)?
    };
    std::fs::create_dir_all(out).with_context(|| format!("creating {}", out.display()))?;
    for p in &plans {
        p.save(out.join(p.file_name())).context("writing plan")?;
    }
    println!("wrote {} plan(s) to {}", plans.len(), out.display());
    Ok(())
}

fn load_plan(path: &Path) -> Result<FoldPlan, Failure> {
    FoldPlan::load(path).map_err(|e| Failure::Invalid(e.to_string()))
}

/// Views the test signer has clips for in this manifest.
fn available_test_views(manifest: &DatasetManifest, plan: &FoldPlan) -> Vec<ViewAngle> {
    ViewAngle::ALL
        .into_iter()
        .filter(|&v| {
            plan.test_clips(v)
                .iter()
                .all(|c| manifest.entry_by_clip(c).is_some())
        })
        .collect()
}

fn single_run_row(
    plan: &FoldPlan,
    variant: Variant,
    view: ViewAngle,
    top1: f64,
    top3: f64,
) -> MetricsRow {
    MetricsRow {
        train_views: ViewAngle::set_label(&plan.views_in_training),
        signers: plan.train_label(),
        test_view: view.as_str().to_string(),
        variant: variant.as_str().to_string(),
        top1_mean: top1,
        top1_std: 0.0,
        top3_mean: top3,
        top3_std: 0.0,
        n_folds: 1,
    }
}

fn train_cmd(
    cli: &Cli,
    manifest_path: &Path,
    plan_path: &Path,
    variant: Option<Variant>,
) -> CmdResult {
    let out = require_out(cli)?;
    let manifest = load_manifest(manifest_path)?;
    let plan = load_plan(plan_path)?;
    let mut cfg = load_run_config(cli, variant)?;
    let store = ClipStore::load(&manifest, cfg.train.frames).context("loading clips")?;
    cfg.model.num_classes = store.num_classes();
    let train_set = store
        .select(&plan.train_clips())
        .context("selecting train clips")?;
    let val_set = store
        .select(&plan.val_clips())
        .context("selecting validation clips")?;
    let model = Model::<f32>::init(cfg.model.clone(), cli.seed).context("initializing model")?;
    println!(
        "training {} ({} parameters) on {} clips, validating on {}",
        cfg.model.variant.as_str(),
        model.num_params(),
        train_set.len(),
        val_set.len()
    );
    let trained = train(model, &train_set, &val_set, &cfg.train, cli.seed, |e| {
        log_epoch(&mut std::io::stdout(), e)
    })
    .context("training")?;

    std::fs::create_dir_all(out).with_context(|| format!("creating {}", out.display()))?;
    trained
        .run
        .write_curves(&out.join("curves.csv"))
        .context("writing curves")?;
    checkpoint::save(&trained.best, trained.run.steps, &out.join("checkpoint"))
        .context("writing checkpoint")?;
    let run_json = serde_json::to_string_pretty(&trained.run).context("serializing run")?;
    std::fs::write(out.join("run.json"), run_json).context("writing run.json")?;
    std::fs::write(
        out.join("config.json"),
        serde_json::to_string_pretty(&cfg).context("serializing config")?,
    )
    .context("writing config.json")?;

    let edges = default_edges();
    let mut rows = Vec::new();
    for view in available_test_views(&manifest, &plan) {
        let test = store
            .select(&plan.test_clips(view))
            .context("selecting test clips")?;
        let r =
            evaluate(&trained.best, &test, cfg.train.batch_size, &edges).context("evaluating")?;
        println!("test {view}: top1 {:.4} top3 {:.4}", r.top1, r.top3);
        rows.push(single_run_row(
            &plan,
            cfg.model.variant,
            view,
            r.top1,
            r.top3,
        ));
    }
    write_metrics_csv(&rows, &out.join("metrics.csv")).context("writing metrics")?;
    println!(
        "best epoch {} ({:?}), outputs in {}",
        trained.run.best_epoch,
        trained.run.stop_reason,
        out.display()
    );
    Ok(())
}

fn eval_cmd(
    cli: &Cli,
    manifest_path: &Path,
    plan_path: &Path,
    ckpt: &Path,
    view: Option<ViewAngle>,
) -> CmdResult {
    let manifest = load_manifest(manifest_path)?;
    let plan = load_plan(plan_path)?;
    let (model, _) = checkpoint::load::<f32>(ckpt).context("loading checkpoint")?;
    let frames = match &cli.config {
        Some(_) => load_run_config(cli, None)?.train.frames,
        None => RunConfig::default().train.frames,
    };
    let store = ClipStore::load(&manifest, frames).context("loading clips")?;
    if store.num_classes() != model.config().num_classes {
        return Err(Failure::Invalid(format!(
            "checkpoint has {} classes, dataset has {}",
            model.config().num_classes,
            store.num_classes()
        )));
    }
    let views = match view {
        Some(v) => vec![v],
        None => available_test_views(&manifest, &plan),
    };
    let edges = default_edges();
    let mut rows = Vec::new();
    for v in views {
        let test = store
            .select(&plan.test_clips(v))
            .context("selecting test clips")?;
        let r = evaluate(&model, &test, RunConfig::default().train.batch_size, &edges)
            .context("evaluating")?;
        println!(
            "test {v}: top1 {:.4} top3 {:.4} ({} clips)",
            r.top1, r.top3, r.n
        );
        rows.push(single_run_row(
            &plan,
            model.config().variant,
            v,
            r.top1,
            r.top3,
        ));
    }
    if let Some(out) = &cli.out {
        write_metrics_csv(&rows, out).context("writing metrics")?;
    }
    Ok(())
}

fn experiment_cmd(
    cli: &Cli,
    manifest_path: &Path,
    data: &DataArgs,
    variant: Option<Variant>,
    seeds: &[u64],
    folds: &[usize],
) -> CmdResult {
    let out = require_out(cli)?;
    let manifest = load_manifest(manifest_path)?;
    let run = load_run_config(cli, variant)?;
    let store = ClipStore::load(&manifest, run.train.frames).context("loading clips")?;
    let spec = ExperimentSpec {
        views: parse_views(&data.views)?,
        include_sb: data.sb,
        include_avatar: !data.no_avatar,
        seeds: if seeds.is_empty() {
            vec![cli.seed]
        } else {
            seeds.to_vec()
        },
        folds: (!folds.is_empty()).then(|| folds.to_vec()),
        test_views: ViewAngle::ALL.to_vec(),
        run,
    };
    let result = run_experiment::<f32>(&store, &manifest, &spec, |line| println!("{line}"))
        .context("experiment")?;
    write_experiment(&result, out)?;
    Ok(())
}

fn write_experiment(result: &ExperimentResult, out: &Path) -> CmdResult {
    std::fs::create_dir_all(out).with_context(|| format!("creating {}", out.display()))?;
    write_metrics_csv(&result.table, &out.join("metrics.csv")).context("writing metrics")?;
    write_metrics_csv(&result.by_seed, &out.join("metrics_by_seed.csv"))
        .context("writing metrics")?;
    write_serialized(&out.join("folds.csv"), &result.folds)?;
    let drops = relative_drops(&result.table);
    if !drops.is_empty() {
        write_serialized(&out.join("relative_drop.csv"), &drops)?;
    }
    Ok(())
}

fn report_cmd(inputs: &[PathBuf], out: &Path) -> CmdResult {
    let mut rows = Vec::new();
    for p in inputs {
        rows.extend(read_metrics_csv(p).map_err(|e| Failure::Invalid(e.to_string()))?);
    }
    if rows.is_empty() {
        bail_invalid("no metrics rows")?;
    }
    write_report(&rows, out, "report").context("writing report")?;
    println!("{}", geomsign_harness::report::render_markdown(&rows));
    Ok(())
}

fn bail_invalid(msg: &str) -> CmdResult {
    Err(Failure::Invalid(msg.to_string()))
}

fn write_serialized<T: Serialize>(path: &Path, rows: &[T]) -> anyhow::Result<()> {
    let mut w =
        csv::Writer::from_path(path).with_context(|| format!("creating {}", path.display()))?;
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}
