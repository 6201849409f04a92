//! Round orchestration: selection, churn, knowledge aggregation, optional
//! ensemble distillation and broadcast.

use alloc::vec::Vec;

use rand::seq::index;
use rand::Rng;

use crate::accounting::{bytes_of, ClientUtilization, CommLedger, UtilizationReport};
use crate::client::{
    dml_local_update, init_client, init_uniform_client, plain_local_update, receive_knowledge,
    receive_model, upload_knowledge, upload_model, ClientState, LocalMode, LocalTrainConfig,
    TrainingLog, Upload,
};
use crate::data::{Dataset, Shard, UnlabeledDataset};
use crate::numerics::{backward, count_correct, forward, kl_divergence, sgd_step, LossSpec, Matrix, NetworkParams, Real};
use crate::seed::SeedTree;
use crate::supernet::{ArchitectureConfig, ResourceBudget, SearchIndex, SupernetWeights};
use crate::{Error, Result};

/// Federated training algorithm.
#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub enum Method {
    /// Specialised local models, knowledge networks averaged.
    Rafl,
    /// As `Rafl`, plus ensemble distillation on public data after averaging.
    RaflDistill,
    FedAvg,
    FedProx { mu: f32 },
}

impl Method {
    pub fn local_mode(self) -> LocalMode {
        match self {
            Method::Rafl | Method::RaflDistill => LocalMode::Dml,
            Method::FedAvg => LocalMode::Plain,
            Method::FedProx { mu } => LocalMode::Prox { mu },
        }
    }

    pub fn uses_knowledge(self) -> bool {
        matches!(self, Method::Rafl | Method::RaflDistill)
    }
}

/// Runs per-client work, possibly in parallel. Results come back in input order.
pub trait Executor: Sync {
    fn map_mut<T, R, F>(&self, items: &mut [T], f: F) -> Vec<R>
    where
        T: Send,
        R: Send,
        F: Fn(&mut T) -> R + Sync + Send;
}

/// Runs everything on the calling thread.
#[derive(Debug, Clone, Copy, Default)]
pub struct Sequential;

impl Executor for Sequential {
    fn map_mut<T, R, F>(&self, items: &mut [T], f: F) -> Vec<R>
    where
        T: Send,
        R: Send,
        F: Fn(&mut T) -> R + Sync + Send,
    {
        items.iter_mut().map(f).collect()
    }
}

/// Uniform sample without replacement of `max(1, round(rate * n))` registry
/// positions, returned in ascending order.
pub fn select_clients<R: Rng + ?Sized>(n: usize, rate: f64, rng: &mut R) -> Result<Vec<usize>> {
    if n == 0 {
        return Err(Error::Empty("registry"));
    }
    if !(rate > 0.0 && rate <= 1.0) {
        return Err(Error::InvalidArgument(alloc::format!(
            "participation rate must lie in (0, 1], got {rate}"
        )));
    }
    let k = (libm::round(rate * n as f64) as usize).clamp(1, n);
    let mut picks = index::sample(rng, n, k).into_vec();
    picks.sort_unstable();
    Ok(picks)
}

/// Sample-weighted mean `Σ (n_l / N_S) θ_l`, summed in ascending client-id order.
pub fn aggregate<T: Real>(uploads: &[Upload<T>]) -> Result<NetworkParams<T>> {
    let first = uploads.first().ok_or(Error::Empty("upload list"))?;
    if let Some(bad) = uploads.iter().find(|u| !u.net.same_shape(&first.net)) {
        return Err(Error::ArchitectureMismatch {
            expected: crate::numerics::dims_str(&first.net.dims()),
            found: crate::numerics::dims_str(&bad.net.dims()),
        });
    }
    let total: usize = uploads.iter().map(|u| u.samples).sum();
    if total == 0 {
        return Err(Error::ZeroDivisor("aggregate sample total"));
    }
    let mut order: Vec<&Upload<T>> = uploads.iter().collect();
    order.sort_by_key(|u| u.client_id);
    let mut out = NetworkParams::<T>::zeros(&first.net.dims());
    let total = T::from_usize(total);
    for u in order {
        let w = T::from_usize(u.samples) / total;
        for (o, p) in out.params_mut().zip(u.net.params()) {
            *o += w * *p;
        }
    }
    Ok(out)
}

/// Server-side distillation settings.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct DistillConfig {
    pub steps: usize,
    pub lr: f32,
    pub batch_size: usize,
}

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct DistillLog {
    pub steps: usize,
    /// Distillation loss over the whole public set before and after.
    pub loss_before: f64,
    pub loss_after: f64,
}

/// Element-wise mean of the client networks' logits.
pub fn ensemble_logits<T: Real>(client_kns: &[NetworkParams<T>], inputs: &Matrix<T>) -> Result<Matrix<T>> {
    let first = client_kns.first().ok_or(Error::Empty("ensemble"))?;
    let mut sum = forward(first, inputs)?;
    for net in &client_kns[1..] {
        let z = forward(net, inputs)?;
        if z.shape() != sum.shape() {
            return Err(crate::error::shape_err("ensemble logits", sum.cols(), z.cols()));
        }
        for (s, v) in sum.as_mut_slice().iter_mut().zip(z.as_slice()) {
            *s += *v;
        }
    }
    let k = T::from_usize(client_kns.len());
    for s in sum.as_mut_slice() {
        *s = *s / k;
    }
    Ok(sum)
}

/// `KL(softmax(mean client logits) || softmax(global logits))` over `inputs`.
pub fn distillation_loss<T: Real>(global: &NetworkParams<T>, client_kns: &[NetworkParams<T>], inputs: &Matrix<T>) -> Result<T> {
    let target = ensemble_logits(client_kns, inputs)?;
    kl_divergence(&target, &forward(global, inputs)?)
}

/// Refines `global` toward the ensemble of `client_kns` on unlabeled inputs.
/// Batches walk the public set cyclically; client networks are not touched.
pub fn ensemble_distill<T: Real>(
    global: &mut NetworkParams<T>,
    client_kns: &[NetworkParams<T>],
    public: &Matrix<T>,
    cfg: &DistillConfig,
) -> Result<DistillLog> {
    let n = public.rows();
    if n == 0 {
        return Err(Error::Empty("public set"));
    }
    if cfg.batch_size == 0 {
        return Err(Error::InvalidArgument("distill batch size must be positive".into()));
    }
    let targets = ensemble_logits(client_kns, public)?;
    let loss_before = kl_divergence(&targets, &forward(global, public)?)?.to_f64();
    let lr = T::from_f64(f64::from(cfg.lr));
    let mut cursor = 0;
    for _ in 0..cfg.steps {
        let idx: Vec<usize> = (0..cfg.batch_size.min(n)).map(|i| (cursor + i) % n).collect();
        cursor = (cursor + idx.len()) % n;
        let batch = crate::numerics::Batch::unlabeled(public.select_rows(&idx));
        let target = targets.select_rows(&idx);
        let grads = backward(global, &batch, &LossSpec::kl(&target))?;
        sgd_step(global, &grads, lr, T::ZERO)?;
    }
    let loss_after = kl_divergence(&targets, &forward(global, public)?)?.to_f64();
    Ok(DistillLog {
        steps: cfg.steps,
        loss_before,
        loss_after,
    })
}

/// Budgets handed to clients minted during churn.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub enum BudgetSampler {
    /// Cycles through a fixed list.
    Cycle { budgets: Vec<u64>, next: usize },
    /// Uniform integer FLOPs in `[min, max]`.
    Uniform { min: u64, max: u64 },
}

impl BudgetSampler {
    pub fn draw<R: Rng + ?Sized>(&mut self, rng: &mut R) -> ResourceBudget {
        let max_flops = match self {
            BudgetSampler::Cycle { budgets, next } => {
                let b = budgets[*next % budgets.len()];
                *next = (*next + 1) % budgets.len();
                b
            }
            BudgetSampler::Uniform { min, max } => rng.random_range(*min..=*max),
        };
        ResourceBudget { max_flops }
    }

    /// Smallest budget the sampler can produce.
    pub fn floor(&self) -> u64 {
        match self {
            BudgetSampler::Cycle { budgets, .. } => budgets.iter().copied().min().unwrap_or(0),
            BudgetSampler::Uniform { min, .. } => *min,
        }
    }
}

/// Source of replacement clients: shards not held by any active client, and
/// a budget sampler.
#[derive(Debug, Clone, PartialEq)]
pub struct ClientStream {
    reservoir: Vec<Shard>,
    budgets: BudgetSampler,
    next_id: u64,
}

impl ClientStream {
    pub fn new(reservoir: Vec<Shard>, budgets: BudgetSampler, next_id: u64) -> Self {
        ClientStream {
            reservoir,
            budgets,
            next_id,
        }
    }

    pub fn available(&self) -> usize {
        self.reservoir.len()
    }

    pub fn budgets(&self) -> &BudgetSampler {
        &self.budgets
    }

    fn take_shard<R: Rng + ?Sized>(&mut self, rng: &mut R) -> Shard {
        let i = rng.random_range(0..self.reservoir.len());
        let mut shard = self.reservoir.swap_remove(i);
        shard.client_id = self.next_id;
        self.next_id += 1;
        shard
    }
}

/// How clients are equipped.
#[derive(Debug, Clone, PartialEq)]
pub enum Deployment {
    /// Searched local model plus the shared knowledge architecture.
    Specialized { kn_arch: ArchitectureConfig, kn_flops: u64 },
    /// One architecture everywhere (baselines).
    Uniform { arch: ArchitectureConfig, flops: u64 },
}

/// Builds clients from shards and budgets.
#[derive(Debug, Clone)]
pub struct ClientFactory {
    pub theta: SupernetWeights,
    pub index: SearchIndex,
    pub deployment: Deployment,
    pub inherit_weights: bool,
    /// Parent dataset the shards index into.
    pub private: Dataset,
    pub seeds: SeedTree,
}

impl ClientFactory {
    pub fn mint(&self, shard: Shard, budget: ResourceBudget) -> Result<ClientState> {
        let data = self.private.subset(&shard.indices)?;
        match &self.deployment {
            Deployment::Specialized { kn_arch, .. } => {
                let seed = self.seeds.named("client").child(shard.client_id).named("init").value();
                init_client(
                    &self.theta,
                    &self.index,
                    budget,
                    kn_arch,
                    shard,
                    data,
                    self.inherit_weights,
                    seed,
                )
            }
            Deployment::Uniform { arch, flops } => {
                let dims = self.theta.space().layer_dims(arch);
                init_uniform_client(arch.clone(), *flops, NetworkParams::zeros(&dims), budget, shard, data)
            }
        }
    }

    /// Smallest budget that can be served.
    pub fn min_budget(&self) -> u64 {
        match &self.deployment {
            Deployment::Specialized { kn_flops, .. } => kn_flops + self.index.min_flops(),
            Deployment::Uniform { flops, .. } => *flops,
        }
    }

    pub fn knowledge_flops(&self) -> u64 {
        match &self.deployment {
            Deployment::Specialized { kn_flops, .. } => *kn_flops,
            Deployment::Uniform { .. } => 0,
        }
    }
}

/// Replaces `floor(churn_rate * N)` uniformly chosen clients with freshly
/// minted ones at the same registry positions. Departed shards return to the
/// stream only after the newcomers have drawn theirs. Returns the departed ids.
pub fn churn<R: Rng + ?Sized>(
    registry: &mut [ClientState],
    stream: &mut ClientStream,
    factory: &ClientFactory,
    churn_rate: f64,
    rng: &mut R,
) -> Result<Vec<u64>> {
    if !(0.0..1.0).contains(&churn_rate) {
        return Err(Error::InvalidArgument(alloc::format!(
            "churn rate must lie in [0, 1), got {churn_rate}"
        )));
    }
    let n = registry.len();
    let k = libm::floor(churn_rate * n as f64 + 1e-9) as usize;
    if k == 0 {
        return Ok(Vec::new());
    }
    if stream.available() < k {
        return Err(Error::StreamExhausted {
            requested: k,
            available: stream.available(),
        });
    }
    let mut victims = index::sample(rng, n, k).into_vec();
    victims.sort_unstable();
    let mut fresh = Vec::with_capacity(k);
    for _ in 0..k {
        let shard = stream.take_shard(rng);
        let budget = stream.budgets.draw(rng);
        fresh.push(factory.mint(shard, budget)?);
    }
    let mut departed = Vec::with_capacity(k);
    for (pos, newcomer) in victims.into_iter().zip(fresh) {
        let old = core::mem::replace(&mut registry[pos], newcomer);
        departed.push(old.id);
        stream.reservoir.push(old.shard);
    }
    Ok(departed)
}

/// Per-round protocol settings.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct RoundConfig {
    pub participation_rate: f64,
    pub churn_rate: f64,
    /// Used only by [`Method::RaflDistill`].
    pub distill: Option<DistillConfig>,
}

/// Everything observed in one round.
#[derive(Debug, Clone, PartialEq)]
pub struct RoundReport {
    pub round: u32,
    pub selected: Vec<u64>,
    pub departed: Vec<u64>,
    pub bytes_up: u64,
    pub bytes_down: u64,
    pub cumulative_bytes: u64,
    /// Global (knowledge) network on the test set.
    pub global_accuracy: f64,
    /// Mean over participants of their local model's test accuracy.
    pub mean_local_accuracy: f64,
    /// Mean over participants of their local model's accuracy on their own data.
    pub mean_local_train_accuracy: f64,
    pub distinct_clients: u64,
    pub training_flops: u64,
    pub mean_local_loss: f64,
    pub distill: Option<DistillLog>,
}

/// Top-1 accuracy of `net` on a labeled dataset.
pub fn accuracy(net: &NetworkParams, data: &Dataset) -> Result<f64> {
    Ok(count_correct(net, data.inputs(), data.labels())? as f64 / data.len() as f64)
}

struct ClientOutcome {
    upload: Upload,
    log: TrainingLog,
    test_accuracy: f64,
    train_accuracy: f64,
}

/// Server state: the global network, the client registry and the books.
#[derive(Debug, Clone)]
pub struct ServerState {
    pub method: Method,
    /// The global knowledge network, or the uniform global model for baselines.
    pub global: NetworkParams,
    pub registry: Vec<ClientState>,
    pub round: u32,
    pub ledger: CommLedger,
    pub factory: ClientFactory,
    pub stream: ClientStream,
    pub public: Option<UnlabeledDataset>,
    pub test: Dataset,
    seeds: SeedTree,
    distinct: u64,
}

impl ServerState {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        method: Method,
        global: NetworkParams,
        registry: Vec<ClientState>,
        factory: ClientFactory,
        stream: ClientStream,
        public: Option<UnlabeledDataset>,
        test: Dataset,
        seeds: SeedTree,
    ) -> Result<Self> {
        if registry.is_empty() {
            return Err(Error::Empty("registry"));
        }
        let expected = match &factory.deployment {
            Deployment::Specialized { kn_arch, .. } => kn_arch,
            Deployment::Uniform { arch, .. } => arch,
        };
        crate::supernet::check_arch(factory.theta.space(), expected, &global)?;
        if method.uses_knowledge() != matches!(factory.deployment, Deployment::Specialized { .. }) {
            return Err(Error::InvalidArgument(
                "deployment kind does not match the method".into(),
            ));
        }
        if method == Method::RaflDistill && public.is_none() {
            return Err(Error::Empty("public set"));
        }
        Ok(ServerState {
            method,
            global,
            distinct: registry.len() as u64,
            registry,
            round: 0,
            ledger: CommLedger::new(),
            factory,
            stream,
            public,
            test,
            seeds,
        })
    }

    /// Clients that have ever been registered.
    pub fn distinct_clients(&self) -> u64 {
        self.distinct
    }

    /// One full round: churn, select, broadcast, local updates, upload,
    /// aggregate, optional distillation, evaluation and accounting.
    pub fn run_round<E: Executor>(&mut self, cfg: &RoundConfig, train: &LocalTrainConfig, exec: &E) -> Result<RoundReport> {
        let round = self.round + 1;

        let departed = if cfg.churn_rate > 0.0 {
            let mut rng = self.seeds.named("churn").child(u64::from(round)).rng();
            churn(&mut self.registry, &mut self.stream, &self.factory, cfg.churn_rate, &mut rng)?
        } else {
            Vec::new()
        };
        self.distinct += departed.len() as u64;

        let mut rng = self.seeds.named("select").child(u64::from(round)).rng();
        let selected = select_clients(self.registry.len(), cfg.participation_rate, &mut rng)?;

        let method = self.method;
        let mode = method.local_mode();
        let global = &self.global;
        let space = self.factory.theta.space();
        let test = &self.test;
        let client_seeds = self.seeds.named("client");
        let mut picked: Vec<&mut ClientState> = Vec::with_capacity(selected.len());
        let mut wanted = selected.iter().peekable();
        for (pos, c) in self.registry.iter_mut().enumerate() {
            if wanted.peek() == Some(&&pos) {
                wanted.next();
                picked.push(c);
            }
        }
        let outcomes = exec.map_mut(&mut picked, |c: &mut &mut ClientState| -> Result<ClientOutcome> {
            let c: &mut ClientState = c;
            let cfg = LocalTrainConfig {
                mode,
                seed: client_seeds.child(c.id).child(u64::from(round)).value(),
                ..train.clone()
            };
            let (log, upload) = if method.uses_knowledge() {
                receive_knowledge(c, global, space)?;
                let log = dml_local_update(c, &cfg)?;
                (log, upload_knowledge(c)?)
            } else {
                receive_model(c, global)?;
                let log = plain_local_update(c, &cfg)?;
                (log, upload_model(c))
            };
            Ok(ClientOutcome {
                upload,
                log,
                test_accuracy: accuracy(&c.local_model, test)?,
                train_accuracy: accuracy(&c.local_model, &c.data)?,
            })
        });
        let outcomes: Vec<ClientOutcome> = outcomes.into_iter().collect::<Result<_>>()?;

        let down_size = bytes_of(&self.global);
        let up_size = bytes_of(&outcomes[0].upload.net);
        let uploads: Vec<Upload> = outcomes.iter().map(|o| o.upload.clone()).collect();
        let mut next_global = aggregate(&uploads)?;

        let distill = match (method, &cfg.distill, &self.public) {
            (Method::RaflDistill, Some(dcfg), Some(public)) => {
                let mut sorted: Vec<&Upload> = uploads.iter().collect();
                sorted.sort_by_key(|u| u.client_id);
                let kns: Vec<NetworkParams> = sorted.into_iter().map(|u| u.net.clone()).collect();
                Some(ensemble_distill(&mut next_global, &kns, public.inputs(), dcfg)?)
            }
            (Method::RaflDistill, None, _) => {
                return Err(Error::InvalidArgument("distillation enabled without settings".into()))
            }
            _ => None,
        };
        self.global = next_global;
        self.round = round;

        let record = self.ledger.record_round(round, selected.len(), up_size, down_size);
        let k = outcomes.len() as f64;
        Ok(RoundReport {
            round,
            selected: outcomes.iter().map(|o| o.upload.client_id).collect(),
            departed,
            bytes_up: record.bytes_up,
            bytes_down: record.bytes_down,
            cumulative_bytes: record.cumulative_bytes,
            global_accuracy: accuracy(&self.global, &self.test)?,
            mean_local_accuracy: outcomes.iter().map(|o| o.test_accuracy).sum::<f64>() / k,
            mean_local_train_accuracy: outcomes.iter().map(|o| o.train_accuracy).sum::<f64>() / k,
            distinct_clients: self.distinct,
            training_flops: outcomes.iter().map(|o| o.log.total_training_flops()).sum(),
            mean_local_loss: outcomes.iter().map(|o| o.log.mean_local_loss).sum::<f64>() / k,
            distill,
        })
    }

    /// Budget use of the current registry and the uniform counterfactual
    /// (largest architecture the weakest client can afford, everywhere).
    pub fn utilization(&self) -> Result<UtilizationReport> {
        let kn = self.factory.knowledge_flops();
        let entries: Vec<ClientUtilization> = self
            .registry
            .iter()
            .map(|c| ClientUtilization {
                client_id: c.id,
                budget_flops: c.budget.max_flops,
                deployed_flops: c.deployed_flops(kn),
            })
            .collect();
        let weakest = entries.iter().map(|e| e.budget_flops).min().unwrap_or(0);
        let uniform = self
            .factory
            .index
            .largest_under(ResourceBudget { max_flops: weakest })?
            .flops;
        crate::accounting::utilization(&entries, uniform)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::Dense;
    use alloc::vec;

    fn scalar_net(w: f64) -> NetworkParams<f64> {
        NetworkParams::new(vec![Dense {
            weight: Matrix::from_vec(1, 1, vec![w]).unwrap(),
            bias: vec![0.0],
        }])
        .unwrap()
    }

    fn up(id: u64, w: f64, n: usize) -> Upload<f64> {
        Upload {
            client_id: id,
            net: scalar_net(w),
            samples: n,
        }
    }

    #[test]
    fn select_examples() {
        let mut rng = SeedTree::new(1).rng();
        assert_eq!(select_clients(7, 1.0, &mut rng).unwrap(), (0..7).collect::<Vec<_>>());
        assert_eq!(select_clients(100, 0.1, &mut rng).unwrap().len(), 10);
        assert_eq!(select_clients(5, 0.01, &mut rng).unwrap().len(), 1);
        assert!(select_clients(5, 0.0, &mut rng).is_err());
        assert!(select_clients(5, 1.5, &mut rng).is_err());
    }

    #[test]
    fn selection_frequency_is_uniform() {
        let mut counts = [0usize; 10];
        for draw in 0..1000 {
            let mut rng = SeedTree::new(77).child(draw).rng();
            for i in select_clients(10, 0.5, &mut rng).unwrap() {
                counts[i] += 1;
            }
        }
        for c in counts {
            let f = c as f64 / 1000.0;
            assert!((0.4..=0.6).contains(&f), "{counts:?}");
        }
    }

    #[test]
    fn aggregate_examples() {
        let single = aggregate(&[up(4, 2.5, 9)]).unwrap();
        assert_eq!(single, scalar_net(2.5));
        let zero = aggregate(&[up(0, 1.7, 3), up(1, -1.7, 3)]).unwrap();
        assert_eq!(zero.params().copied().collect::<Vec<_>>(), vec![0.0, 0.0]);
        let three = aggregate(&[up(0, 6.0, 1), up(1, 3.0, 2), up(2, 2.0, 3)]).unwrap();
        assert!((three.layers()[0].weight.get(0, 0) - 3.0).abs() < 1e-15);
    }

    #[test]
    fn aggregate_errors() {
        assert_eq!(aggregate::<f64>(&[]), Err(Error::Empty("upload list")));
        let mut other = up(1, 1.0, 1);
        other.net = NetworkParams::zeros(&[2, 1]);
        assert!(matches!(
            aggregate(&[up(0, 1.0, 1), other]),
            Err(Error::ArchitectureMismatch { .. })
        ));
    }

    #[test]
    fn aggregate_is_order_invariant() {
        let ups = vec![up(3, 0.1, 5), up(1, 0.7, 2), up(2, -0.3, 11)];
        let a = aggregate(&ups).unwrap();
        let rev: Vec<_> = ups.iter().rev().cloned().collect();
        assert_eq!(a, aggregate(&rev).unwrap());
    }

    #[test]
    fn distill_is_noop_at_the_minimum() {
        let mut rng = SeedTree::new(3).rng();
        let kn = NetworkParams::<f64>::random(&[3, 4, 2], &mut rng);
        let public = Matrix::from_vec(5, 3, (0..15).map(|i| (i as f64 * 0.37).sin()).collect()).unwrap();
        let mut global = kn.clone();
        let log = ensemble_distill(
            &mut global,
            &[kn.clone(), kn.clone()],
            &public,
            &DistillConfig {
                steps: 3,
                lr: 0.5,
                batch_size: 2,
            },
        )
        .unwrap();
        assert_eq!(log.loss_before, 0.0);
        for (a, b) in global.params().zip(kn.params()) {
            assert!((a - b).abs() < 1e-15);
        }
    }

    #[test]
    fn opposite_logits_average_to_uniform() {
        let a = scalar_two_class(1.5);
        let b = scalar_two_class(-1.5);
        let x = Matrix::from_vec(1, 1, vec![2.0]).unwrap();
        let ens = ensemble_logits(&[a, b], &x).unwrap();
        let p = crate::numerics::softmax(&ens).unwrap();
        assert_eq!(p.as_slice(), &[0.5, 0.5]);
    }

    fn scalar_two_class(w: f64) -> NetworkParams<f64> {
        NetworkParams::new(vec![Dense {
            weight: Matrix::from_vec(2, 1, vec![w, -w]).unwrap(),
            bias: vec![0.0, 0.0],
        }])
        .unwrap()
    }

    #[test]
    fn one_distill_step_matches_scalar_oracle() {
        // global: logits (a x, -a x) with weights [a, -a]; ensemble of two
        // clients with weights (u1, -u1), (u2, -u2).
        let (a, u1, u2, x, lr) = (0.4f64, 1.2f64, -0.2f64, 1.5f64, 0.3f64);
        let mut global = scalar_two_class(a);
        let kns = [scalar_two_class(u1), scalar_two_class(u2)];
        let public = Matrix::from_vec(1, 1, vec![x]).unwrap();
        ensemble_distill(&mut global, &kns, &public, &DistillConfig { steps: 1, lr: lr as f32, batch_size: 1 }).unwrap();

        let m = (u1 + u2) / 2.0;
        let p0 = 1.0 / (1.0 + (-2.0 * m * x).exp());
        let q0 = 1.0 / (1.0 + (-2.0 * a * x).exp());
        // dL/dz = q - p, z0 = w0 x, z1 = w1 x
        let g_w0 = (q0 - p0) * x;
        let g_w1 = ((1.0 - q0) - (1.0 - p0)) * x;
        let g_b0 = q0 - p0;
        let w = global.layers()[0].clone();
        assert!((w.weight.get(0, 0) - (a - lr * g_w0)).abs() < 1e-6);
        assert!((w.weight.get(1, 0) - (-a - lr * g_w1)).abs() < 1e-6);
        assert!((w.bias[0] - (0.0 - lr * g_b0)).abs() < 1e-6);
        assert_eq!(global.dims(), vec![1, 2]);
    }

    #[test]
    fn distill_requires_public_data() {
        let mut g = scalar_two_class(0.1);
        let empty = Matrix::<f64>::zeros(0, 1);
        assert_eq!(
            ensemble_distill(&mut g, &[scalar_two_class(1.0)], &empty, &DistillConfig { steps: 1, lr: 0.1, batch_size: 1 }),
            Err(Error::Empty("public set"))
        );
    }

    #[test]
    fn budget_sampler_cycles_and_bounds() {
        let mut rng = SeedTree::new(1).rng();
        let mut c = BudgetSampler::Cycle { budgets: vec![5, 7], next: 0 };
        let got: Vec<u64> = (0..4).map(|_| c.draw(&mut rng).max_flops).collect();
        assert_eq!(got, vec![5, 7, 5, 7]);
        let mut u = BudgetSampler::Uniform { min: 10, max: 20 };
        for _ in 0..100 {
            let b = u.draw(&mut rng).max_flops;
            assert!((10..=20).contains(&b));
        }
        assert_eq!(u.floor(), 10);
    }
}
