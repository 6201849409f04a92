//! One federated participant and its local update rules.

use alloc::vec::Vec;

use rand::seq::SliceRandom;

use crate::data::{Dataset, Shard};
use crate::numerics::{backward, forward, loss, sgd_step, LossSpec, NetworkParams};
use crate::seed::SeedTree;
use crate::supernet::{check_arch, flops, ArchitectureConfig, ResourceBudget, SearchIndex, SupernetWeights};
use crate::{Error, Result};

/// Training FLOPs per sample are this multiple of inference FLOPs
/// (one forward pass plus a backward pass costing two).
pub const TRAINING_FLOPS_FACTOR: u64 = 3;

/// The shared-architecture network co-trained with the local model.
#[derive(Debug, Clone, PartialEq)]
pub struct KnowledgeNet {
    pub arch: ArchitectureConfig,
    pub net: NetworkParams,
}

/// A participant: its data, budget, specialised model and knowledge network.
///
/// Baseline clients (uniform deployment) carry no knowledge network.
#[derive(Debug, Clone, PartialEq)]
pub struct ClientState {
    pub id: u64,
    pub shard: Shard,
    /// Materialised rows of `shard`.
    pub data: Dataset,
    pub budget: ResourceBudget,
    pub arch: ArchitectureConfig,
    pub arch_flops: u64,
    pub local_model: NetworkParams,
    pub knowledge: Option<KnowledgeNet>,
    /// Weights as received this round, anchor of the proximal term.
    pub round_start: Option<NetworkParams>,
}

impl ClientState {
    /// Number of local samples.
    pub fn n_samples(&self) -> usize {
        self.shard.len()
    }

    /// Inference FLOPs of everything deployed on the device.
    pub fn deployed_flops(&self, kn_flops: u64) -> u64 {
        self.arch_flops + if self.knowledge.is_some() { kn_flops } else { 0 }
    }
}

/// Local update rule.
#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub enum LocalMode {
    Dml,
    Plain,
    Prox { mu: f32 },
}

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct LocalTrainConfig {
    pub local_epochs: usize,
    pub batch_size: usize,
    pub lr: f32,
    pub weight_decay: f32,
    pub mode: LocalMode,
    /// Seeds batch shuffling.
    pub seed: u64,
    /// Stop after this many SGD steps in total, if set.
    pub max_steps: Option<usize>,
}

impl LocalTrainConfig {
    fn validate(&self) -> Result<()> {
        if self.local_epochs == 0 || self.batch_size == 0 {
            return Err(Error::InvalidArgument(
                "local epochs and batch size must be positive".into(),
            ));
        }
        if let LocalMode::Prox { mu } = self.mode {
            if !(mu >= 0.0) {
                return Err(Error::InvalidArgument(alloc::format!("proximal mu {mu}")));
            }
        }
        Ok(())
    }

    /// Shuffled minibatch index lists for every epoch, capped at `max_steps`.
    fn schedule(&self, n: usize) -> Vec<Vec<usize>> {
        let mut rng = SeedTree::new(self.seed).rng();
        let mut order: Vec<usize> = (0..n).collect();
        let mut batches = Vec::new();
        'epochs: for _ in 0..self.local_epochs {
            order.shuffle(&mut rng);
            for chunk in order.chunks(self.batch_size) {
                if self.max_steps.is_some_and(|m| batches.len() >= m) {
                    break 'epochs;
                }
                batches.push(chunk.to_vec());
            }
        }
        batches
    }
}

/// Per-update summary.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct TrainingLog {
    pub steps: usize,
    pub samples: usize,
    /// Mean pre-step loss of the local model.
    pub mean_local_loss: f64,
    /// Mean pre-step loss of the knowledge network (mutual learning only).
    pub mean_knowledge_loss: Option<f64>,
    pub local_training_flops: u64,
    pub knowledge_training_flops: u64,
}

impl TrainingLog {
    pub fn total_training_flops(&self) -> u64 {
        self.local_training_flops + self.knowledge_training_flops
    }
}

/// Builds a participant whose local model is the best architecture that fits
/// beside the knowledge network.
///
/// The residual budget `budget - flops(kn_arch)` funds the local search. With
/// `inherit_weights` the local model keeps its supernet slice, otherwise it is
/// re-initialised from `seed`. The knowledge network is always sliced from the
/// supernet.
#[allow(clippy::too_many_arguments)]
pub fn init_client(
    theta: &SupernetWeights,
    index: &SearchIndex,
    budget: ResourceBudget,
    kn_arch: &ArchitectureConfig,
    shard: Shard,
    data: Dataset,
    inherit_weights: bool,
    seed: u64,
) -> Result<ClientState> {
    let space = theta.space();
    let kn_flops = flops(space, kn_arch)?;
    let residual = budget
        .max_flops
        .checked_sub(kn_flops)
        .filter(|&r| r >= index.min_flops())
        .ok_or(Error::InfeasibleBudget {
            budget: budget.max_flops,
            min_flops: kn_flops + index.min_flops(),
        })?;
    let choice = index.best_under(ResourceBudget { max_flops: residual })?;
    let local_model = if inherit_weights {
        theta.extract(&choice.arch)?
    } else {
        NetworkParams::random(&space.layer_dims(&choice.arch), &mut SeedTree::new(seed).rng())
    };
    Ok(ClientState {
        id: shard.client_id,
        shard,
        data,
        budget,
        arch: choice.arch.clone(),
        arch_flops: choice.flops,
        local_model,
        knowledge: Some(KnowledgeNet {
            arch: kn_arch.clone(),
            net: theta.extract(kn_arch)?,
        }),
        round_start: None,
    })
}

/// Baseline participant running the system-wide uniform model.
pub fn init_uniform_client(
    arch: ArchitectureConfig,
    arch_flops: u64,
    model: NetworkParams,
    budget: ResourceBudget,
    shard: Shard,
    data: Dataset,
) -> Result<ClientState> {
    if arch_flops > budget.max_flops {
        return Err(Error::InfeasibleBudget {
            budget: budget.max_flops,
            min_flops: arch_flops,
        });
    }
    Ok(ClientState {
        id: shard.client_id,
        shard,
        data,
        budget,
        arch,
        arch_flops,
        local_model: model,
        knowledge: None,
        round_start: None,
    })
}

/// Deep mutual learning over the local shard.
///
/// Per minibatch, both networks are evaluated first; the local model then takes
/// an SGD step on `CE + KL(knowledge || local)` and the knowledge network on
/// `CE + KL(local || knowledge)`, each against the peer's pre-step logits held
/// constant.
pub fn dml_local_update(client: &mut ClientState, cfg: &LocalTrainConfig) -> Result<TrainingLog> {
    cfg.validate()?;
    if cfg.mode != LocalMode::Dml {
        return Err(Error::InvalidArgument("dml update needs mode = dml".into()));
    }
    if client.data.is_empty() {
        return Err(Error::Empty("shard"));
    }
    let kn_flops = {
        let kn = client.knowledge.as_ref().ok_or(Error::NoKnowledgeNet(client.id))?;
        crate::supernet::flops_of_dims(&kn.net.dims())
    };
    let local_flops = crate::supernet::flops_of_dims(&client.local_model.dims());
    let kn = &mut client.knowledge.as_mut().expect("checked above").net;
    let mut log = TrainingLog::default();
    let (mut local_sum, mut kn_sum) = (0.0f64, 0.0f64);
    for idx in cfg.schedule(client.data.len()) {
        let batch = client.data.batch(&idx);
        let local_logits = forward(&client.local_model, &batch.inputs)?;
        let kn_logits = forward(kn, &batch.inputs)?;
        let local_spec = LossSpec::mutual(&kn_logits);
        let kn_spec = LossSpec::mutual(&local_logits);
        local_sum += f64::from(loss(&client.local_model, &batch, &local_spec)?);
        kn_sum += f64::from(loss(kn, &batch, &kn_spec)?);
        let g_local = backward(&client.local_model, &batch, &local_spec)?;
        let g_kn = backward(kn, &batch, &kn_spec)?;
        sgd_step(&mut client.local_model, &g_local, cfg.lr, cfg.weight_decay)?;
        sgd_step(kn, &g_kn, cfg.lr, cfg.weight_decay)?;
        log.steps += 1;
        log.samples += idx.len();
    }
    let n = log.steps.max(1) as f64;
    log.mean_local_loss = local_sum / n;
    log.mean_knowledge_loss = Some(kn_sum / n);
    log.local_training_flops = TRAINING_FLOPS_FACTOR * local_flops * log.samples as u64;
    log.knowledge_training_flops = TRAINING_FLOPS_FACTOR * kn_flops * log.samples as u64;
    Ok(log)
}

/// Minibatch SGD on cross-entropy, plus `(mu/2)||w - w_round_start||^2` under prox.
/// Only the local model moves.
pub fn plain_local_update(client: &mut ClientState, cfg: &LocalTrainConfig) -> Result<TrainingLog> {
    cfg.validate()?;
    let mu = match cfg.mode {
        LocalMode::Plain => None,
        LocalMode::Prox { mu } => Some(mu),
        LocalMode::Dml => {
            return Err(Error::InvalidArgument("plain update needs mode = plain or prox".into()))
        }
    };
    if client.data.is_empty() {
        return Err(Error::Empty("shard"));
    }
    let anchor = match mu {
        Some(_) => Some(
            client
                .round_start
                .clone()
                .ok_or(Error::MissingRoundStart(client.id))?,
        ),
        None => None,
    };
    let local_flops = crate::supernet::flops_of_dims(&client.local_model.dims());
    let mut log = TrainingLog::default();
    let mut sum = 0.0f64;
    for idx in cfg.schedule(client.data.len()) {
        let batch = client.data.batch(&idx);
        let spec = match (&anchor, mu) {
            (Some(a), Some(mu)) => LossSpec::cross_entropy().with_proximal(mu, a),
            _ => LossSpec::cross_entropy(),
        };
        sum += f64::from(loss(&client.local_model, &batch, &spec)?);
        let g = backward(&client.local_model, &batch, &spec)?;
        sgd_step(&mut client.local_model, &g, cfg.lr, cfg.weight_decay)?;
        log.steps += 1;
        log.samples += idx.len();
    }
    log.mean_local_loss = sum / log.steps.max(1) as f64;
    log.local_training_flops = TRAINING_FLOPS_FACTOR * local_flops * log.samples as u64;
    Ok(log)
}

/// What a client sends to the server.
#[derive(Debug, Clone, PartialEq)]
pub struct Upload<T = f32> {
    pub client_id: u64,
    pub net: NetworkParams<T>,
    pub samples: usize,
}

/// Copy of the knowledge network with the local sample count.
pub fn upload_knowledge(client: &ClientState) -> Result<Upload> {
    let kn = client.knowledge.as_ref().ok_or(Error::NoKnowledgeNet(client.id))?;
    Ok(Upload {
        client_id: client.id,
        net: kn.net.clone(),
        samples: client.n_samples(),
    })
}

/// Copy of the full local model (baselines).
pub fn upload_model(client: &ClientState) -> Upload {
    Upload {
        client_id: client.id,
        net: client.local_model.clone(),
        samples: client.n_samples(),
    }
}

/// Replaces the knowledge network with the global one.
pub fn receive_knowledge(client: &mut ClientState, global: &NetworkParams, space: &crate::supernet::SearchSpace) -> Result<()> {
    let kn = client.knowledge.as_mut().ok_or(Error::NoKnowledgeNet(client.id))?;
    check_arch(space, &kn.arch, global)?;
    kn.net = global.clone();
    Ok(())
}

/// Replaces the local model with the global one and records it as the
/// round-start anchor (baselines).
pub fn receive_model(client: &mut ClientState, global: &NetworkParams) -> Result<()> {
    if !client.local_model.same_shape(global) {
        return Err(Error::ArchitectureMismatch {
            expected: crate::numerics::dims_str(&client.local_model.dims()),
            found: crate::numerics::dims_str(&global.dims()),
        });
    }
    client.local_model = global.clone();
    client.round_start = Some(global.clone());
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::synth_blobs;
    use crate::numerics::{cross_entropy, kl_divergence, Batch, Dense, Matrix};
    use crate::supernet::SearchSpace;
    use alloc::vec;

    fn setup() -> (SupernetWeights, SearchIndex, Dataset) {
        let space = SearchSpace::new(3, 2, vec![0, 1], vec![2, 4, 8]).unwrap();
        let theta = SupernetWeights::random(space, &mut SeedTree::new(1).rng());
        let val = synth_blobs(40, 3, 2, 1.0, 2).unwrap();
        let index = SearchIndex::build(&theta, &val).unwrap();
        (theta, index, val)
    }

    fn shard(id: u64, n: usize) -> (Shard, Dataset) {
        let data = synth_blobs(n, 3, 2, 1.0, 3).unwrap();
        (
            Shard {
                client_id: id,
                indices: (0..n).collect(),
            },
            data,
        )
    }

    fn cfg(mode: LocalMode) -> LocalTrainConfig {
        LocalTrainConfig {
            local_epochs: 2,
            batch_size: 4,
            lr: 0.1,
            weight_decay: 0.0,
            mode,
            seed: 9,
            max_steps: None,
        }
    }

    #[test]
    fn minimal_residual_picks_minimal_arch() {
        let (theta, index, _) = setup();
        let kn = ArchitectureConfig::new(vec![]);
        let kn_flops = flops(theta.space(), &kn).unwrap();
        let (s, d) = shard(0, 10);
        let budget = ResourceBudget {
            max_flops: index.min_flops() + kn_flops,
        };
        let c = init_client(&theta, &index, budget, &kn, s, d, true, 0).unwrap();
        assert_eq!(c.arch, ArchitectureConfig::new(vec![]));
        let (s, d) = shard(0, 10);
        let short = ResourceBudget {
            max_flops: index.min_flops() + kn_flops - 1,
        };
        assert!(matches!(
            init_client(&theta, &index, short, &kn, s, d, true, 0),
            Err(Error::InfeasibleBudget { .. })
        ));
    }

    #[test]
    fn same_budget_same_arch() {
        let (theta, index, _) = setup();
        let kn = ArchitectureConfig::new(vec![2]);
        let budget = ResourceBudget { max_flops: 400 };
        let (s1, d1) = shard(0, 10);
        let (s2, d2) = shard(1, 10);
        let a = init_client(&theta, &index, budget, &kn, s1, d1, true, 0).unwrap();
        let b = init_client(&theta, &index, budget, &kn, s2, d2, false, 5).unwrap();
        assert_eq!(a.arch, b.arch);
        assert_eq!(a.local_model, theta.extract(&a.arch).unwrap());
        assert_ne!(b.local_model, theta.extract(&b.arch).unwrap());
    }

    #[test]
    fn budget_invariant_over_random_budgets() {
        use rand::Rng;
        let (theta, index, _) = setup();
        let kn = ArchitectureConfig::new(vec![2]);
        let kn_flops = flops(theta.space(), &kn).unwrap();
        let mut rng = SeedTree::new(4).rng();
        for i in 0..200 {
            let budget = ResourceBudget {
                max_flops: rng.random_range(0..300),
            };
            let (s, d) = shard(i, 5);
            match init_client(&theta, &index, budget, &kn, s, d, true, i) {
                Ok(c) => assert!(c.arch_flops + kn_flops <= budget.max_flops),
                Err(Error::InfeasibleBudget { min_flops, .. }) => {
                    assert!(budget.max_flops < min_flops)
                }
                Err(e) => panic!("{e}"),
            }
        }
    }

    fn dml_client(local: NetworkParams, kn: NetworkParams, n: usize) -> ClientState {
        let (s, d) = shard(0, n);
        let space = SearchSpace::new(3, 2, vec![0, 1], vec![2, 4, 8]).unwrap();
        let arch = space.arch_of(&local).unwrap();
        let kn_arch = space.arch_of(&kn).unwrap();
        ClientState {
            id: 0,
            shard: s,
            data: d,
            budget: ResourceBudget::UNLIMITED,
            arch_flops: flops(&space, &arch).unwrap(),
            arch,
            local_model: local,
            knowledge: Some(KnowledgeNet { arch: kn_arch, net: kn }),
            round_start: None,
        }
    }

    #[test]
    fn identical_pair_reduces_to_plain_steps() {
        let net = NetworkParams::random(&[3, 4, 2], &mut SeedTree::new(5).rng());
        let mut c = dml_client(net.clone(), net.clone(), 12);
        dml_local_update(&mut c, &cfg(LocalMode::Dml)).unwrap();
        let mut plain = dml_client(net.clone(), net, 12);
        plain_local_update(&mut plain, &cfg(LocalMode::Plain)).unwrap();
        let kn = &c.knowledge.as_ref().unwrap().net;
        for ((a, b), k) in c.local_model.params().zip(plain.local_model.params()).zip(kn.params()) {
            assert!((a - b).abs() < 1e-6);
            assert_eq!(a, k);
        }
    }

    /// Independent 64-bit re-derivation of one mutual-learning step for
    /// `d = 2`, `C = 2`, one hidden layer of width 2.
    #[test]
    fn one_step_matches_scalar_oracle() {
        let mk = |w1: [f32; 4], b1: [f32; 2], w2: [f32; 4], b2: [f32; 2]| {
            NetworkParams::new(vec![
                Dense {
                    weight: Matrix::from_vec(2, 2, w1.to_vec()).unwrap(),
                    bias: b1.to_vec(),
                },
                Dense {
                    weight: Matrix::from_vec(2, 2, w2.to_vec()).unwrap(),
                    bias: b2.to_vec(),
                },
            ])
            .unwrap()
        };
        let local = mk([0.5, -0.3, 0.8, 0.2], [0.1, -0.1], [0.7, -0.4, 0.2, 0.9], [0.05, 0.0]);
        let kn = mk([-0.2, 0.6, 0.4, 0.4], [0.0, 0.2], [0.3, 0.5, -0.6, 0.1], [0.0, 0.1]);
        let x = [[1.0f32, 0.5], [-0.5, 2.0], [0.3, -1.2]];
        let y = [0usize, 1, 1];
        let data = Dataset::new(
            Matrix::from_rows(&x.iter().map(|r| r.to_vec()).collect::<Vec<_>>()).unwrap(),
            y.to_vec(),
            2,
        )
        .unwrap();
        let mut c = ClientState {
            id: 0,
            shard: Shard {
                client_id: 0,
                indices: vec![0, 1, 2],
            },
            data,
            budget: ResourceBudget::UNLIMITED,
            arch: ArchitectureConfig::new(vec![2]),
            arch_flops: 16,
            local_model: local.clone(),
            knowledge: Some(KnowledgeNet {
                arch: ArchitectureConfig::new(vec![2]),
                net: kn.clone(),
            }),
            round_start: None,
        };
        let lr = 0.3f64;
        let cfg = LocalTrainConfig {
            local_epochs: 1,
            batch_size: 3,
            lr: lr as f32,
            weight_decay: 0.0,
            mode: LocalMode::Dml,
            seed: 0,
            max_steps: None,
        };
        dml_local_update(&mut c, &cfg).unwrap();

        // scalar oracle
        type P = ([[f64; 2]; 2], [f64; 2], [[f64; 2]; 2], [f64; 2]);
        let unpack = |n: &NetworkParams| -> P {
            let l = n.layers();
            let m = |d: &Dense| [[d.weight.get(0, 0) as f64, d.weight.get(0, 1) as f64], [d.weight.get(1, 0) as f64, d.weight.get(1, 1) as f64]];
            (m(&l[0]), [l[0].bias[0] as f64, l[0].bias[1] as f64], m(&l[1]), [l[1].bias[0] as f64, l[1].bias[1] as f64])
        };
        let fwd = |p: &P, x: [f64; 2]| {
            let mut h = [0.0; 2];
            for o in 0..2 {
                let z = p.0[o][0] * x[0] + p.0[o][1] * x[1] + p.1[o];
                h[o] = if z > 0.0 { z } else { 0.0 };
            }
            let mut out = [0.0; 2];
            for o in 0..2 {
                out[o] = p.2[o][0] * h[0] + p.2[o][1] * h[1] + p.3[o];
            }
            (h, out)
        };
        let sm = |z: [f64; 2]| {
            let m = z[0].max(z[1]);
            let e = [(z[0] - m).exp(), (z[1] - m).exp()];
            [e[0] / (e[0] + e[1]), e[1] / (e[0] + e[1])]
        };
        let step = |me: &P, peer: &P| -> P {
            let mut g: P = Default::default();
            for (xi, &yi) in x.iter().zip(&y) {
                let xd = [xi[0] as f64, xi[1] as f64];
                let (h, z) = fwd(me, xd);
                let (_, zp) = fwd(peer, xd);
                let q = sm(z);
                let p = sm(zp);
                let mut dz = [0.0; 2];
                for c in 0..2 {
                    let onehot = if c == yi { 1.0 } else { 0.0 };
                    dz[c] = ((q[c] - onehot) + (q[c] - p[c])) / 3.0;
                }
                for o in 0..2 {
                    g.3[o] += dz[o];
                    for i in 0..2 {
                        g.2[o][i] += dz[o] * h[i];
                    }
                }
                let mut dh = [0.0; 2];
                for i in 0..2 {
                    dh[i] = if h[i] > 0.0 { dz[0] * me.2[0][i] + dz[1] * me.2[1][i] } else { 0.0 };
                }
                for o in 0..2 {
                    g.1[o] += dh[o];
                    for i in 0..2 {
                        g.0[o][i] += dh[o] * xd[i];
                    }
                }
            }
            let mut out = *me;
            for o in 0..2 {
                out.1[o] -= lr * g.1[o];
                out.3[o] -= lr * g.3[o];
                for i in 0..2 {
                    out.0[o][i] -= lr * g.0[o][i];
                    out.2[o][i] -= lr * g.2[o][i];
                }
            }
            out
        };
        let pl = unpack(&local);
        let pk = unpack(&kn);
        let want_local = step(&pl, &pk);
        let want_kn = step(&pk, &pl);
        let close = |got: P, want: P| {
            for o in 0..2 {
                assert!((got.1[o] - want.1[o]).abs() < 1e-6);
                assert!((got.3[o] - want.3[o]).abs() < 1e-6);
                for i in 0..2 {
                    assert!((got.0[o][i] - want.0[o][i]).abs() < 1e-6);
                    assert!((got.2[o][i] - want.2[o][i]).abs() < 1e-6);
                }
            }
        };
        close(unpack(&c.local_model), want_local);
        close(unpack(&c.knowledge.as_ref().unwrap().net), want_kn);
    }

    #[test]
    fn mutual_loss_decomposes_into_ce_plus_kl() {
        let mut rng = SeedTree::new(7).rng();
        let local = NetworkParams::<f64>::random(&[3, 4, 2], &mut rng);
        let peer = NetworkParams::<f64>::random(&[3, 2, 2], &mut rng);
        let batch: Batch<f64> = synth_blobs(8, 3, 2, 1.0, 1).unwrap().full_batch().cast();
        let peer_logits = forward(&peer, &batch.inputs).unwrap();
        let own = forward(&local, &batch.inputs).unwrap();
        let total = loss(&local, &batch, &LossSpec::mutual(&peer_logits)).unwrap();
        let kl = kl_divergence(&peer_logits, &own).unwrap();
        assert!(kl >= 0.0);
        assert!((total - cross_entropy(&local, &batch).unwrap() - kl).abs() < 1e-12);
    }

    #[test]
    fn prox_with_zero_mu_is_plain() {
        let net = NetworkParams::random(&[3, 4, 2], &mut SeedTree::new(8).rng());
        let mut a = dml_client(net.clone(), net.clone(), 12);
        let mut b = a.clone();
        receive_model(&mut a, &net).unwrap();
        receive_model(&mut b, &net).unwrap();
        plain_local_update(&mut a, &cfg(LocalMode::Plain)).unwrap();
        plain_local_update(&mut b, &cfg(LocalMode::Prox { mu: 0.0 })).unwrap();
        assert_eq!(a.local_model, b.local_model);
        assert_eq!(a.knowledge, b.knowledge);
        assert_eq!(a.knowledge.unwrap().net, net);
    }

    #[test]
    fn prox_one_step_matches_hand_computation() {
        // single linear layer, one sample: logits = W x + b
        let w0 = [0.2f32, -0.1, 0.4, 0.3, 0.0, -0.5];
        let net = NetworkParams::new(vec![Dense {
            weight: Matrix::from_vec(2, 3, w0.to_vec()).unwrap(),
            bias: vec![0.1, -0.2],
        }])
        .unwrap();
        let mut anchor = net.clone();
        anchor.params_mut().for_each(|p| *p += 0.5);
        let data = Dataset::new(Matrix::from_vec(1, 3, vec![1.0, 2.0, -1.0]).unwrap(), vec![1], 2).unwrap();
        let mut c = init_uniform_client(
            ArchitectureConfig::new(vec![]),
            12,
            net.clone(),
            ResourceBudget::UNLIMITED,
            Shard { client_id: 3, indices: vec![0] },
            data,
        )
        .unwrap();
        c.round_start = Some(anchor);
        let (lr, mu) = (0.5f64, 0.2f64);
        let cfg = LocalTrainConfig {
            local_epochs: 1,
            batch_size: 1,
            lr: lr as f32,
            weight_decay: 0.0,
            mode: LocalMode::Prox { mu: mu as f32 },
            seed: 0,
            max_steps: None,
        };
        plain_local_update(&mut c, &cfg).unwrap();
        let x = [1.0f64, 2.0, -1.0];
        let z0 = 0.2 * 1.0 - 0.1 * 2.0 - 0.4 + 0.1;
        let z1: f64 = 0.3 + 0.0 + 0.5 - 0.2;
        let q1 = 1.0 / (1.0 + (z0 - z1).exp());
        let dz = [1.0 - q1, q1 - 1.0];
        let got = &c.local_model.layers()[0];
        for o in 0..2 {
            for i in 0..3 {
                let g = dz[o] * x[i] + mu * (-0.5);
                let want = w0[o * 3 + i] as f64 - lr * g;
                assert!((got.weight.get(o, i) as f64 - want).abs() < 1e-6);
            }
        }
    }

    #[test]
    fn prox_without_anchor_errors() {
        let net = NetworkParams::random(&[3, 2], &mut SeedTree::new(8).rng());
        let mut c = dml_client(net.clone(), net, 4);
        assert_eq!(
            plain_local_update(&mut c, &cfg(LocalMode::Prox { mu: 0.1 })),
            Err(Error::MissingRoundStart(0))
        );
    }

    #[test]
    fn upload_is_a_deep_copy() {
        let net = NetworkParams::random(&[3, 2, 2], &mut SeedTree::new(8).rng());
        let c = dml_client(net.clone(), net.clone(), 7);
        let mut up = upload_knowledge(&c).unwrap();
        assert_eq!(up.samples, 7);
        up.net.params_mut().for_each(|p| *p = 0.0);
        assert_eq!(c.knowledge.as_ref().unwrap().net, net);
        assert_eq!(crate::accounting::bytes_of(&up.net), 4 * up.net.param_count() as u64);
    }

    #[test]
    fn receive_replaces_only_the_knowledge_net() {
        let space = SearchSpace::new(3, 2, vec![0, 1], vec![2, 4, 8]).unwrap();
        let mut rng = SeedTree::new(9).rng();
        let local = NetworkParams::random(&[3, 8, 2], &mut rng);
        let kn = NetworkParams::random(&[3, 2, 2], &mut rng);
        let global = NetworkParams::random(&[3, 2, 2], &mut rng);
        let mut c = dml_client(local.clone(), kn, 5);
        receive_knowledge(&mut c, &global, &space).unwrap();
        assert_eq!(upload_knowledge(&c).unwrap().net, global);
        assert_eq!(c.local_model, local);

        let before = c.clone();
        let wrong = NetworkParams::random(&[3, 4, 2], &mut rng);
        assert!(matches!(
            receive_knowledge(&mut c, &wrong, &space),
            Err(Error::ArchitectureMismatch { .. })
        ));
        assert_eq!(c, before);
    }

    #[test]
    fn training_flops_add_up() {
        let mut rng = SeedTree::new(10).rng();
        let local = NetworkParams::random(&[3, 8, 2], &mut rng);
        let kn = NetworkParams::random(&[3, 2, 2], &mut rng);
        let mut c = dml_client(local, kn, 10);
        let log = dml_local_update(&mut c, &cfg(LocalMode::Dml)).unwrap();
        assert_eq!(log.samples, 20);
        assert_eq!(log.local_training_flops, 3 * 2 * (3 * 8 + 8 * 2) * 20);
        assert_eq!(log.knowledge_training_flops, 3 * 2 * (3 * 2 + 2 * 2) * 20);
        // one combined graph of both nets costs the same
        assert_eq!(
            log.total_training_flops(),
            3 * (2 * (3 * 8 + 8 * 2) + 2 * (3 * 2 + 2 * 2)) * 20
        );
    }

    #[test]
    fn max_steps_caps_the_schedule() {
        let mut c = cfg(LocalMode::Plain);
        c.max_steps = Some(1);
        assert_eq!(c.schedule(50).len(), 1);
        c.max_steps = None;
        assert_eq!(c.schedule(10).len(), 2 * 3);
    }
}
