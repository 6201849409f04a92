//! Experiment assembly: data splits, partition, budgets, client construction
//! and the round loop.

use alloc::vec::Vec;

use rand::Rng;

use crate::accounting::TargetTracker;
use crate::client::LocalTrainConfig;
use crate::data::{dirichlet_partition, split_indices, Dataset, PartitionSpec, UnlabeledDataset};
use crate::error::InfeasibleClient;
use crate::numerics::NetworkParams;
use crate::seed::SeedTree;
use crate::server::{
    BudgetSampler, ClientFactory, ClientStream, Deployment, Executor, Method, RoundConfig, RoundReport,
    ServerState,
};
use crate::supernet::{flops, ResourceBudget, SearchIndex, SupernetWeights};
use crate::{Error, Result};

/// Held-out fractions carved from the full dataset, in this order; the
/// remainder is the private pool partitioned among clients.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct SplitFractions {
    pub test: f64,
    /// Scores architectures during search.
    pub val: f64,
    /// Server-side supernet training data.
    pub supernet: f64,
    /// Unlabeled public set for distillation; zero disables it.
    pub public: f64,
}

/// The disjoint parts of an experiment's data.
#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentData {
    pub private: Dataset,
    pub test: Dataset,
    pub val: Dataset,
    pub supernet_train: Dataset,
    pub public: Option<UnlabeledDataset>,
}

/// Splits `dataset` into test, validation, supernet-training, public and private parts.
pub fn split_experiment_data(dataset: &Dataset, fractions: &SplitFractions, seed: SeedTree) -> Result<ExperimentData> {
    let seeds = seed.named("splits");
    let n = dataset.len() as f64;
    let mut rest: Vec<usize> = (0..dataset.len()).collect();
    let mut carve = |fraction: f64, tag: u64| -> Result<Vec<usize>> {
        // fractions are relative to the full dataset
        let rel = fraction * n / rest.len() as f64;
        let (keep, taken) = split_indices(rest.len(), rel, seeds.child(tag).value())?;
        let taken = taken.into_iter().map(|i| rest[i]).collect();
        rest = keep.into_iter().map(|i| rest[i]).collect();
        Ok(taken)
    };
    let test = carve(fractions.test, 0)?;
    let val = carve(fractions.val, 1)?;
    let supernet = carve(fractions.supernet, 2)?;
    let public = if fractions.public > 0.0 {
        Some(carve(fractions.public, 3)?)
    } else {
        None
    };
    Ok(ExperimentData {
        test: dataset.subset(&test)?,
        val: dataset.subset(&val)?,
        supernet_train: dataset.subset(&supernet)?,
        public: match public {
            Some(idx) => Some(dataset.subset(&idx)?.into_unlabeled()),
            None => None,
        },
        private: dataset.subset(&rest)?,
    })
}

/// How initial client budgets are assigned.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub enum BudgetSpec {
    /// One budget per initial client; churned-in clients cycle through it.
    List(Vec<u64>),
    /// Uniform integer FLOPs in `[min, max]`.
    Uniform { min: u64, max: u64 },
}

/// Architecture every baseline client runs.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub enum BaselineModel {
    /// Largest architecture the weakest client can afford.
    Uniform,
    /// The knowledge-network architecture.
    Knowledge,
}

/// Complete description of one federated run.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct SimulationPlan {
    pub method: Method,
    pub n_clients: usize,
    /// Shards cut from the private pool; those beyond `n_clients` feed churn.
    pub pool_shards: usize,
    pub dirichlet_alpha: f64,
    pub min_samples_per_client: usize,
    pub budgets: BudgetSpec,
    pub kn_budget: u64,
    pub baseline_model: BaselineModel,
    pub inherit_weights: bool,
    pub rounds: u32,
    pub round: RoundConfig,
    /// `mode` and `seed` are set per client and round.
    pub local: LocalTrainConfig,
    pub target_accuracy: Option<f64>,
    pub seed: u64,
}

fn check_plan(plan: &SimulationPlan) -> Result<()> {
    if plan.n_clients == 0 {
        return Err(Error::Empty("client registry"));
    }
    if plan.pool_shards < plan.n_clients {
        return Err(Error::InvalidArgument(alloc::format!(
            "pool_shards ({}) must be at least n_clients ({})",
            plan.pool_shards,
            plan.n_clients
        )));
    }
    match &plan.budgets {
        BudgetSpec::List(list) if list.len() != plan.n_clients => Err(Error::InvalidArgument(alloc::format!(
            "{} budgets listed for {} clients",
            list.len(),
            plan.n_clients
        ))),
        BudgetSpec::Uniform { min, max } if min > max => {
            Err(Error::InvalidArgument(alloc::format!("budget range [{min}, {max}] is empty")))
        }
        _ => Ok(()),
    }
}

/// Builds the server with every initial client. All clients whose budget
/// cannot be served are reported together.
pub fn build_server(plan: &SimulationPlan, data: ExperimentData, theta: SupernetWeights) -> Result<ServerState> {
    check_plan(plan)?;
    let seeds = SeedTree::new(plan.seed);
    let space = theta.space().clone();
    let index = SearchIndex::build(&theta, &data.val)?;
    let kn = index.best_under(ResourceBudget { max_flops: plan.kn_budget })?.clone();

    let (budgets, sampler) = match &plan.budgets {
        BudgetSpec::List(list) => (list.clone(), BudgetSampler::Cycle { budgets: list.clone(), next: 0 }),
        BudgetSpec::Uniform { min, max } => {
            let mut rng = seeds.named("budgets").rng();
            let drawn = (0..plan.n_clients).map(|_| rng.random_range(*min..=*max)).collect();
            (drawn, BudgetSampler::Uniform { min: *min, max: *max })
        }
    };

    let deployment = if plan.method.uses_knowledge() {
        Deployment::Specialized {
            kn_arch: kn.arch.clone(),
            kn_flops: kn.flops,
        }
    } else {
        let arch = match plan.baseline_model {
            BaselineModel::Knowledge => kn.arch.clone(),
            BaselineModel::Uniform => {
                let weakest = budgets.iter().copied().chain([sampler.floor()]).min().unwrap_or(0);
                index.largest_under(ResourceBudget { max_flops: weakest })?.arch.clone()
            }
        };
        Deployment::Uniform {
            flops: flops(&space, &arch)?,
            arch,
        }
    };
    let global_arch = match &deployment {
        Deployment::Specialized { kn_arch, .. } => kn_arch.clone(),
        Deployment::Uniform { arch, .. } => arch.clone(),
    };
    let global = if plan.inherit_weights {
        theta.extract(&global_arch)?
    } else {
        NetworkParams::random(&space.layer_dims(&global_arch), &mut seeds.named("global").rng())
    };

    let factory = ClientFactory {
        theta,
        index,
        deployment,
        inherit_weights: plan.inherit_weights,
        private: data.private,
        seeds,
    };
    let min_budget = factory.min_budget();
    let infeasible: Vec<InfeasibleClient> = budgets
        .iter()
        .enumerate()
        .filter(|(_, &b)| b < min_budget)
        .map(|(i, &b)| InfeasibleClient {
            client_id: i as u64,
            budget: b,
            min_flops: min_budget,
        })
        .collect();
    if !infeasible.is_empty() {
        return Err(Error::InfeasibleClients(infeasible));
    }
    if sampler.floor() < min_budget {
        return Err(Error::InfeasibleBudget {
            budget: sampler.floor(),
            min_flops: min_budget,
        });
    }

    let mut shards = dirichlet_partition(
        &factory.private,
        &PartitionSpec {
            n_clients: plan.pool_shards,
            dirichlet_alpha: plan.dirichlet_alpha,
            min_samples_per_client: plan.min_samples_per_client,
            seed: seeds.named("partition").value(),
        },
    )?;
    let reservoir = shards.split_off(plan.n_clients);
    let registry = shards
        .into_iter()
        .zip(&budgets)
        .map(|(shard, &b)| factory.mint(shard, ResourceBudget { max_flops: b }))
        .collect::<Result<Vec<_>>>()?;
    let stream = ClientStream::new(reservoir, sampler, plan.n_clients as u64);
    ServerState::new(plan.method, global, registry, factory, stream, data.public, data.test, seeds)
}

/// Result of a complete run.
#[derive(Debug, Clone, PartialEq)]
pub struct RunSummary {
    pub reports: Vec<RoundReport>,
    pub target: Option<TargetTracker>,
}

/// Runs `plan.rounds` rounds, handing each report to `on_round` as it is produced.
pub fn run<E, F>(server: &mut ServerState, plan: &SimulationPlan, exec: &E, mut on_round: F) -> Result<RunSummary>
where
    E: Executor,
    F: FnMut(&RoundReport) -> Result<()>,
{
    let mut tracker = plan.target_accuracy.map(TargetTracker::new);
    let mut reports = Vec::with_capacity(plan.rounds as usize);
    for _ in 0..plan.rounds {
        let report = server.run_round(&plan.round, &plan.local, exec)?;
        if let Some(t) = tracker.as_mut() {
            t.track(report.round, report.global_accuracy, &server.ledger);
        }
        on_round(&report)?;
        reports.push(report);
    }
    Ok(RunSummary {
        reports,
        target: tracker,
    })
}
