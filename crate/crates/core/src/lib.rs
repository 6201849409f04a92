//! Simulation core for resource-aware heterogeneous federated learning.
//!
//! Clients receive FLOPs-budgeted subnets sliced from a weight-sharing
//! supernet, co-train them with a small shared-architecture knowledge network
//! by deep mutual learning, and a server aggregates the knowledge networks
//! (optionally refining them by ensemble distillation on unlabeled public
//! data). Every round is accounted for in bytes and every deployment in FLOPs.
//!
//! The crate is `no_std` and only needs `alloc`; file formats, the CLI and the
//! thread pool live in the `hetfl` companion crate.
//!
//! Module map:
//!
//! - [`numerics`]: dense feed-forward kernel, losses and analytic gradients.
//! - [`data`]: synthetic datasets, Dirichlet label-skew partitioning, splits.
//! - [`supernet`]: elastic search space, FLOPs model, slicing, training, search.
//! - [`client`]: one participant and its local update rules.
//! - [`server`]: selection, aggregation, distillation, churn and rounds.
//! - [`accounting`]: communication ledger, targets, speedups, utilization.
//! - [`sim`]: wiring of all of the above into a reproducible experiment.
#![cfg_attr(not(test), no_std)]
#![forbid(unsafe_code)]

extern crate alloc;

pub mod accounting;
pub mod client;
pub mod data;
mod error;
pub mod numerics;
pub mod seed;
pub mod server;
pub mod sim;
pub mod supernet;

pub use error::{Error, Result};
