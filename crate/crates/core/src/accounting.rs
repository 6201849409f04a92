//! Communication ledger, cost-to-target tracking, speedups and resource
//! utilization.
//!
//! Conventions: 4 bytes per parameter, no compression; both directions
//! (upload and broadcast) are charged; the supernet query at initialisation is
//! not charged.

use alloc::vec::Vec;

use crate::numerics::{NetworkParams, Real};
use crate::{Error, Result};

pub const BYTES_PER_PARAMETER: u64 = 4;

/// Payload size of a network.
pub fn bytes_of<T: Real>(net: &NetworkParams<T>) -> u64 {
    net.param_count() as u64 * BYTES_PER_PARAMETER
}

/// Little-endian `f32` payload in canonical parameter order.
pub fn serialize_weights(net: &NetworkParams) -> Vec<u8> {
    let mut out = Vec::with_capacity(net.param_count() * 4);
    for p in net.params() {
        out.extend_from_slice(&p.to_le_bytes());
    }
    out
}

/// Traffic of one round.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct RoundRecord {
    pub round: u32,
    pub clients: usize,
    pub bytes_up: u64,
    pub bytes_down: u64,
    pub cumulative_bytes: u64,
}

impl RoundRecord {
    /// Upload bytes of one participating client.
    pub fn per_client_up(&self) -> u64 {
        self.bytes_up.checked_div(self.clients as u64).unwrap_or(0)
    }

    pub fn per_client_down(&self) -> u64 {
        self.bytes_down.checked_div(self.clients as u64).unwrap_or(0)
    }

    pub fn round_bytes(&self) -> u64 {
        self.bytes_up + self.bytes_down
    }
}

/// Append-only per-round traffic log.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct CommLedger {
    records: Vec<RoundRecord>,
}

impl CommLedger {
    pub fn new() -> Self {
        Self::default()
    }

    /// Charges `clients` uploads of `up_net_size` bytes and as many broadcasts
    /// of `down_net_size` bytes.
    pub fn record_round(&mut self, round: u32, clients: usize, up_net_size: u64, down_net_size: u64) -> RoundRecord {
        let bytes_up = clients as u64 * up_net_size;
        let bytes_down = clients as u64 * down_net_size;
        let record = RoundRecord {
            round,
            clients,
            bytes_up,
            bytes_down,
            cumulative_bytes: self.cumulative() + bytes_up + bytes_down,
        };
        self.records.push(record);
        record
    }

    pub fn cumulative(&self) -> u64 {
        self.records.last().map_or(0, |r| r.cumulative_bytes)
    }

    pub fn records(&self) -> &[RoundRecord] {
        &self.records
    }

    pub fn get(&self, round: u32) -> Option<&RoundRecord> {
        self.records.iter().find(|r| r.round == round)
    }
}

/// First round at which a tracked accuracy reaches a target.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct TargetTracker {
    pub target_accuracy: f64,
    pub rounds_to_target: Option<u32>,
    pub cost_to_target: Option<u64>,
}

impl TargetTracker {
    pub fn new(target_accuracy: f64) -> Self {
        TargetTracker {
            target_accuracy,
            rounds_to_target: None,
            cost_to_target: None,
        }
    }

    /// Records the first crossing; later rounds never reset it.
    pub fn track(&mut self, round: u32, accuracy: f64, ledger: &CommLedger) {
        if self.rounds_to_target.is_none() && accuracy >= self.target_accuracy {
            self.rounds_to_target = Some(round);
            self.cost_to_target = ledger.get(round).map(|r| r.cumulative_bytes);
        }
    }
}

/// `baseline / method`; above 1 means the method is cheaper.
pub fn speedup(baseline_total: f64, method_total: f64) -> Result<f64> {
    if method_total == 0.0 {
        return Err(Error::ZeroDivisor("speedup"));
    }
    Ok(baseline_total / method_total)
}

/// `method - baseline`; negative means the method is cheaper.
pub fn delta_cost(baseline_total: f64, method_total: f64) -> f64 {
    method_total - baseline_total
}

/// Budget and deployment of one client.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct ClientUtilization {
    pub client_id: u64,
    pub budget_flops: u64,
    pub deployed_flops: u64,
}

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct UtilizationReport {
    pub clients: Vec<ClientUtilization>,
    pub total_budget: u64,
    pub total_deployed: u64,
    pub utilization_percent: f64,
    /// Counterfactual: every client runs the one architecture the weakest can afford.
    pub uniform_arch_flops: u64,
    pub uniform_deployed: u64,
    pub uniform_utilization_percent: f64,
}

/// Σ deployed / Σ budget, plus the uniform-deployment counterfactual.
pub fn utilization(clients: &[ClientUtilization], uniform_arch_flops: u64) -> Result<UtilizationReport> {
    if clients.is_empty() {
        return Err(Error::Empty("client list"));
    }
    if let Some(c) = clients.iter().find(|c| c.deployed_flops > c.budget_flops) {
        return Err(Error::InfeasibleBudget {
            budget: c.budget_flops,
            min_flops: c.deployed_flops,
        });
    }
    let total_budget: u64 = clients.iter().map(|c| c.budget_flops).sum();
    let total_deployed: u64 = clients.iter().map(|c| c.deployed_flops).sum();
    let uniform_deployed = uniform_arch_flops * clients.len() as u64;
    let pct = |x: u64| 100.0 * x as f64 / total_budget as f64;
    Ok(UtilizationReport {
        clients: clients.to_vec(),
        total_budget,
        total_deployed,
        utilization_percent: pct(total_deployed),
        uniform_arch_flops,
        uniform_deployed,
        uniform_utilization_percent: pct(uniform_deployed),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::Dense;
    use alloc::vec;

    #[test]
    fn bytes_of_counts_weights_and_biases() {
        let net = NetworkParams::new(vec![Dense::<f32>::zeros(2, 3)]).unwrap();
        assert_eq!(bytes_of(&net), 36);
        assert_eq!(serialize_weights(&net).len() as u64, bytes_of(&net));
        let big = NetworkParams::<f32>::zeros(&[2, 5, 3]);
        assert!(bytes_of(&net) < bytes_of(&big));
    }

    #[test]
    fn ledger_examples() {
        let mut ledger = CommLedger::new();
        let r = ledger.record_round(1, 10, 4000, 4000);
        assert_eq!((r.bytes_up, r.bytes_down), (40_000, 40_000));
        assert_eq!(r.per_client_up(), 4000);
        let r2 = ledger.record_round(2, 5, 100, 200);
        assert_eq!(r2.cumulative_bytes, 80_000 + 1500);
    }

    #[test]
    fn quarter_size_knowledge_net_is_four_times_cheaper() {
        let mut rafl = CommLedger::new();
        let mut fedavg = CommLedger::new();
        let kn = rafl.record_round(1, 10, 109 * 4, 109 * 4);
        let full = fedavg.record_round(1, 10, 436 * 4, 436 * 4);
        assert_eq!(full.round_bytes(), 4 * kn.round_bytes());
    }

    #[test]
    fn speedup_examples() {
        assert!((speedup(388.0, 13.2).unwrap() - 29.4).abs() < 0.01);
        assert_eq!(speedup(5.0, 5.0).unwrap(), 1.0);
        assert!((speedup(323.0, 1126.0).unwrap() - 0.29).abs() < 0.005);
        assert_eq!(speedup(1.0, 0.0), Err(Error::ZeroDivisor("speedup")));
        assert_eq!(delta_cost(388.0, 13.2), 13.2 - 388.0);
    }

    #[test]
    fn utilization_examples() {
        let full = [ClientUtilization {
            client_id: 0,
            budget_flops: 100,
            deployed_flops: 100,
        }; 3];
        assert_eq!(utilization(&full, 100).unwrap().utilization_percent, 100.0);

        let r = utilization(
            &[ClientUtilization {
                client_id: 0,
                budget_flops: 5000,
                deployed_flops: 4630,
            }],
            4630,
        )
        .unwrap();
        assert_eq!(libm::round(r.utilization_percent), 93.0);

        // budgets {x, 2x}, uniform deployment pinned to the x arch: 2x / 3x
        let two = [
            ClientUtilization {
                client_id: 0,
                budget_flops: 10,
                deployed_flops: 10,
            },
            ClientUtilization {
                client_id: 1,
                budget_flops: 20,
                deployed_flops: 20,
            },
        ];
        let r = utilization(&two, 10).unwrap();
        assert!((r.uniform_utilization_percent - 200.0 / 3.0).abs() < 1e-12);
    }

    #[test]
    fn over_budget_deployment_is_rejected() {
        let bad = [ClientUtilization {
            client_id: 0,
            budget_flops: 10,
            deployed_flops: 11,
        }];
        assert!(utilization(&bad, 1).is_err());
    }

    #[test]
    fn target_tracking() {
        let mut ledger = CommLedger::new();
        let mut t = TargetTracker::new(0.45);
        for (round, acc) in [(1u32, 0.3), (2, 0.5), (3, 0.4)] {
            ledger.record_round(round, 2, 10, 10);
            t.track(round, acc, &ledger);
        }
        assert_eq!(t.rounds_to_target, Some(2));
        assert_eq!(t.cost_to_target, Some(80));

        let mut never = TargetTracker::new(0.9);
        never.track(1, 0.5, &ledger);
        assert_eq!(never.rounds_to_target, None);
        assert_eq!(never.cost_to_target, None);
    }
}
