//! Subcommand implementations.

use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use hetfl_core::client::{LocalMode, LocalTrainConfig};
use hetfl_core::data::{dirichlet_partition, label_entropy, BlobModel, Dataset, PartitionSpec};
use hetfl_core::seed::SeedTree;
use hetfl_core::server::{DistillConfig, Executor, Method, RoundConfig};
use hetfl_core::sim::{build_server, run, split_experiment_data, BudgetSpec, ExperimentData, RunSummary, SimulationPlan, SplitFractions};
use hetfl_core::supernet::{flops, train_supernet, SearchIndex, SearchSpace, SupernetTrainConfig, SupernetWeights};
use serde_json::json;

use crate::checkpoint;
use crate::config::{method_name, BudgetKind, DataSource, ExperimentConfig};
use crate::dataset_csv::load_csv;
use crate::metrics::{MetricsRow, MetricsSink};
use crate::report::{build_report, render_csv, render_text, ReportRow};

/// Output directory: `--out` if given, else the configured one. It must exist.
pub fn output_dir(cfg: &ExperimentConfig, out: Option<&Path>) -> Result<PathBuf> {
    let dir = out.map_or_else(|| cfg.output.dir.clone(), Path::to_path_buf);
    if !dir.is_dir() {
        bail!("output directory {} does not exist", dir.display());
    }
    Ok(dir)
}

fn blob_model(cfg: &ExperimentConfig) -> Result<Option<BlobModel>> {
    Ok(match &cfg.dataset {
        DataSource::Synthetic(s) => Some(BlobModel::new(
            s.dims,
            s.classes,
            s.center_scale,
            SeedTree::new(cfg.seed).named("data").value(),
        )?),
        DataSource::Csv(_) => None,
    })
}

/// The full dataset named by the configuration.
pub fn load_dataset(cfg: &ExperimentConfig) -> Result<Dataset> {
    match &cfg.dataset {
        DataSource::Synthetic(s) => {
            let model = blob_model(cfg)?.expect("synthetic source");
            Ok(model.sample(s.n_samples, s.cluster_spread, SeedTree::new(cfg.seed).named("data").value())?)
        }
        DataSource::Csv(path) => Ok(load_csv(path)?),
    }
}

/// Test / validation / supernet / public / private parts of the experiment data.
pub fn prepare_data(cfg: &ExperimentConfig) -> Result<ExperimentData> {
    let dataset = load_dataset(cfg)?;
    let shifted = cfg.splits.public > 0.0 && cfg.splits.public_shift > 0.0;
    let fractions = SplitFractions {
        test: cfg.splits.test,
        val: cfg.splits.val,
        supernet: cfg.splits.supernet,
        public: if shifted { 0.0 } else { cfg.splits.public },
    };
    let seeds = SeedTree::new(cfg.seed);
    let mut data = split_experiment_data(&dataset, &fractions, seeds).context("splitting the dataset")?;
    if shifted {
        let DataSource::Synthetic(s) = &cfg.dataset else {
            bail!("a shifted public set needs synthetic data");
        };
        let model = blob_model(cfg)?.expect("synthetic source");
        let n = (cfg.splits.public * s.n_samples as f64).round() as usize;
        let public_seed = seeds.named("public").value();
        let public = model.shifted(cfg.splits.public_shift, public_seed).sample(n, s.cluster_spread, public_seed)?;
        data.public = Some(public.into_unlabeled());
    }
    Ok(data)
}

pub fn search_space(cfg: &ExperimentConfig, data: &ExperimentData) -> Result<SearchSpace> {
    Ok(SearchSpace::new(
        data.private.dims(),
        data.private.class_count(),
        cfg.space.depths.clone(),
        cfg.space.widths.clone(),
    )?)
}

fn checkpoint_path(cfg: &ExperimentConfig, out: &Path) -> PathBuf {
    out.join(&cfg.supernet.checkpoint)
}

/// What `train-supernet` produced.
#[derive(Debug)]
pub struct TrainOutcome {
    pub checkpoint: PathBuf,
    pub summary: PathBuf,
    pub theta: SupernetWeights,
}

/// Trains the supernet on the server-side split and writes the checkpoint and
/// a JSON summary next to it.
pub fn cmd_train_supernet(cfg: &ExperimentConfig, out: Option<&Path>) -> Result<TrainOutcome> {
    let dir = output_dir(cfg, out)?;
    let data = prepare_data(cfg)?;
    let space = search_space(cfg, &data)?;
    let seeds = SeedTree::new(cfg.seed).named("supernet");
    let mut theta = SupernetWeights::random(space, &mut seeds.named("init").rng());
    let train_cfg = SupernetTrainConfig {
        steps: cfg.supernet.steps,
        archs_per_step: cfg.supernet.archs_per_step,
        lr: cfg.supernet.lr,
        batch_size: cfg.supernet.batch_size,
    };
    let log = train_supernet(&mut theta, &data.supernet_train, &data.val, &train_cfg, &mut seeds.named("train").rng())?;

    let checkpoint = checkpoint_path(cfg, &dir);
    checkpoint::save(&theta, &checkpoint)?;
    let index = SearchIndex::build(&theta, &data.val)?;
    let space = theta.space();
    let summary = json!({
        "checkpoint": checkpoint.display().to_string(),
        "search_space": {
            "input_dim": space.input_dim(),
            "output_dim": space.output_dim(),
            "depth_options": space.depth_options(),
            "width_options": space.width_options(),
            "architectures": space.len(),
        },
        "training": {
            "steps": train_cfg.steps,
            "archs_per_step": train_cfg.archs_per_step,
            "lr": train_cfg.lr,
            "batch_size": train_cfg.batch_size,
            "train_samples": data.supernet_train.len(),
            "val_samples": data.val.len(),
        },
        "initial_mean_val_loss": log.initial_mean_val_loss,
        "final_mean_val_loss": log.final_mean_val_loss,
        "final_val_losses": log.final_val_losses.iter().map(|(a, l)| json!({"arch": a, "val_loss": l})).collect::<Vec<_>>(),
        "ranking": index.ranked().iter().map(|s| json!({
            "arch": s.arch.describe(),
            "flops": s.flops,
            "val_accuracy": s.accuracy(),
        })).collect::<Vec<_>>(),
    });
    let summary_path = dir.join("supernet.json");
    write_json(&summary_path, &summary)?;
    Ok(TrainOutcome {
        checkpoint,
        summary: summary_path,
        theta,
    })
}

fn write_json(path: &Path, value: &impl serde::Serialize) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    std::fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}

/// Translates the configuration into a simulation plan.
pub fn simulation_plan(cfg: &ExperimentConfig, public_len: usize) -> SimulationPlan {
    let distill = (cfg.method == Method::RaflDistill).then(|| DistillConfig {
        steps: cfg
            .round
            .distill_steps
            .unwrap_or_else(|| public_len.div_ceil(cfg.round.distill_batch_size).max(1)),
        lr: cfg.round.distill_lr,
        batch_size: cfg.round.distill_batch_size,
    });
    SimulationPlan {
        method: cfg.method,
        n_clients: cfg.partition.n_clients,
        pool_shards: cfg.pool_shards(),
        dirichlet_alpha: cfg.partition.dirichlet_alpha,
        min_samples_per_client: cfg.partition.min_samples,
        budgets: match &cfg.budgets.kind {
            BudgetKind::List(v) => BudgetSpec::List(v.clone()),
            BudgetKind::Uniform { min, max } => BudgetSpec::Uniform { min: *min, max: *max },
        },
        kn_budget: cfg.budgets.kn_budget,
        baseline_model: cfg.local.baseline_model,
        inherit_weights: cfg.local.inherit_weights,
        rounds: cfg.rounds,
        round: RoundConfig {
            participation_rate: cfg.round.participation_rate,
            churn_rate: cfg.round.churn_rate,
            distill,
        },
        local: LocalTrainConfig {
            local_epochs: cfg.local.epochs,
            batch_size: cfg.local.batch_size,
            lr: cfg.local.lr,
            weight_decay: cfg.local.weight_decay,
            mode: LocalMode::Plain,
            seed: 0,
            max_steps: cfg.local.max_steps,
        },
        target_accuracy: cfg.target_accuracy,
        seed: cfg.seed,
    }
}

/// What `run` produced.
#[derive(Debug)]
pub struct RunOutcome {
    pub metrics: PathBuf,
    pub utilization: PathBuf,
    pub target: PathBuf,
    pub summary: RunSummary,
}

/// Runs the federated experiment. Specialised methods need the supernet
/// checkpoint; baselines fall back to an untrained supernet when it is absent.
pub fn cmd_run<E: Executor>(cfg: &ExperimentConfig, out: Option<&Path>, exec: &E) -> Result<RunOutcome> {
    let dir = output_dir(cfg, out)?;
    let data = prepare_data(cfg)?;
    let space = search_space(cfg, &data)?;
    let ckpt = checkpoint_path(cfg, &dir);
    let theta = if ckpt.exists() || cfg.method.uses_knowledge() {
        let theta = checkpoint::load(&ckpt).with_context(|| {
            format!("loading supernet checkpoint {} (run train-supernet first)", ckpt.display())
        })?;
        if theta.space() != &space {
            bail!("checkpoint {} was trained for a different search space or dataset", ckpt.display());
        }
        theta
    } else {
        SupernetWeights::random(space, &mut SeedTree::new(cfg.seed).named("supernet").named("init").rng())
    };
    let plan = simulation_plan(cfg, data.public.as_ref().map_or(0, |p| p.len()));
    let mut server = build_server(&plan, data, theta)?;

    let metrics = dir.join(&cfg.output.metrics);
    let mut sink = MetricsSink::create(&metrics)?;
    let summary = run(&mut server, &plan, exec, |report| {
        sink.append(&MetricsRow::from(report))
            .map_err(|e| hetfl_core::Error::InvalidArgument(e.to_string()))
    })?;

    let utilization = dir.join("utilization.json");
    write_json(&utilization, &server.utilization()?)?;
    let target = dir.join("target.json");
    let tracker = summary.target.clone();
    write_json(
        &target,
        &json!({
            "method": method_name(cfg.method),
            "target_accuracy": tracker.as_ref().map(|t| t.target_accuracy),
            "rounds_to_target": tracker.as_ref().and_then(|t| t.rounds_to_target),
            "cost_to_target": tracker.as_ref().and_then(|t| t.cost_to_target),
            "rounds": cfg.rounds,
            "total_bytes": server.ledger.cumulative(),
        }),
    )?;
    Ok(RunOutcome {
        metrics,
        utilization,
        target,
        summary,
    })
}

/// Builds the comparison table and writes `report.csv` / `report.txt` into `out` if given.
pub fn cmd_report(paths: &[PathBuf], target: Option<f64>, out: Option<&Path>) -> Result<(Vec<ReportRow>, String)> {
    if paths.is_empty() {
        bail!("report needs at least one metrics file");
    }
    let refs: Vec<&Path> = paths.iter().map(PathBuf::as_path).collect();
    let rows = build_report(&refs, target)?;
    let text = render_text(&rows);
    if let Some(dir) = out {
        if !dir.is_dir() {
            bail!("output directory {} does not exist", dir.display());
        }
        std::fs::write(dir.join("report.csv"), render_csv(&rows))?;
        std::fs::write(dir.join("report.txt"), &text)?;
    }
    Ok((rows, text))
}

/// Per-client label histograms of the initial partition.
pub fn cmd_partition_preview(cfg: &ExperimentConfig) -> Result<String> {
    let data = prepare_data(cfg)?;
    let private = &data.private;
    let shards = dirichlet_partition(
        private,
        &PartitionSpec {
            n_clients: cfg.pool_shards(),
            dirichlet_alpha: cfg.partition.dirichlet_alpha,
            min_samples_per_client: cfg.partition.min_samples,
            seed: SeedTree::new(cfg.seed).named("partition").value(),
        },
    )?;
    let space = search_space(cfg, &data)?;
    let max_arch = hetfl_core::supernet::ArchitectureConfig::new(vec![space.max_width(); space.max_depth()]);
    let mut out = format!(
        "{} samples in the private pool, {} classes, alpha {}, largest architecture {} FLOPs\n",
        private.len(),
        private.class_count(),
        cfg.partition.dirichlet_alpha,
        flops(&space, &max_arch)?
    );
    out.push_str("client  samples  entropy  histogram\n");
    for shard in &shards {
        let mut hist = vec![0usize; private.class_count()];
        for &i in &shard.indices {
            hist[private.labels()[i]] += 1;
        }
        let reserve = if shard.client_id as usize >= cfg.partition.n_clients { "  (reserve)" } else { "" };
        out.push_str(&format!(
            "{:>6}  {:>7}  {:>7.3}  {:?}{reserve}\n",
            shard.client_id,
            shard.len(),
            label_entropy(private, shard),
            hist
        ));
    }
    Ok(out)
}
