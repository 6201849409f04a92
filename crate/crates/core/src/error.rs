use alloc::string::String;
use alloc::vec::Vec;

/// Errors raised by the simulation core.
#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum Error {
    #[error("shape mismatch in {context}: expected {expected}, found {found}")]
    Shape {
        context: &'static str,
        expected: String,
        found: String,
    },
    #[error("non-finite value in {0}")]
    NonFinite(&'static str),
    #[error("{0} requires a labeled batch")]
    MissingLabels(&'static str),
    #[error("label {label} out of range for {classes} classes")]
    LabelOutOfRange { label: usize, classes: usize },
    #[error("empty {0}")]
    Empty(&'static str),
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("architecture {arch} is not a member of the search space")]
    InvalidArchitecture { arch: String },
    #[error("no architecture fits a budget of {budget} FLOPs (minimum feasible is {min_flops} FLOPs)")]
    InfeasibleBudget { budget: u64, min_flops: u64 },
    #[error("infeasible budgets for {} client(s): {}", .0.len(), format_infeasible(.0))]
    InfeasibleClients(Vec<InfeasibleClient>),
    #[error("partition infeasible: no draw gave every client at least {min_samples} samples after {attempts} attempts")]
    PartitionInfeasible { min_samples: usize, attempts: usize },
    #[error("knowledge network architecture mismatch: expected {expected}, received {found}")]
    ArchitectureMismatch { expected: String, found: String },
    #[error("client {0} has no knowledge network")]
    NoKnowledgeNet(u64),
    #[error("client {0} has no round-start weights for the proximal term")]
    MissingRoundStart(u64),
    #[error("client stream exhausted: {requested} shard(s) requested, {available} available")]
    StreamExhausted { requested: usize, available: usize },
    #[error("division by zero in {0}")]
    ZeroDivisor(&'static str),
}

/// A client whose budget cannot fund any deployment.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct InfeasibleClient {
    pub client_id: u64,
    pub budget: u64,
    pub min_flops: u64,
}

fn format_infeasible(clients: &[InfeasibleClient]) -> String {
    use core::fmt::Write;
    let mut out = String::new();
    for (i, c) in clients.iter().enumerate() {
        if i > 0 {
            out.push_str("; ");
        }
        let _ = write!(
            out,
            "client {} budget {} < {}",
            c.client_id, c.budget, c.min_flops
        );
    }
    out
}

pub type Result<T, E = Error> = core::result::Result<T, E>;

pub(crate) fn shape_err(
    context: &'static str,
    expected: impl core::fmt::Display,
    found: impl core::fmt::Display,
) -> Error {
    use alloc::string::ToString;
    Error::Shape {
        context,
        expected: expected.to_string(),
        found: found.to_string(),
    }
}
