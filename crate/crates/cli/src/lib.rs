//! File formats, configuration and subcommands of the `hetfl` simulator.

pub mod checkpoint;
pub mod commands;
pub mod config;
pub mod dataset_csv;
pub mod metrics;
pub mod report;

use hetfl_core::server::Executor;
use rayon::prelude::*;

/// Trains the selected clients of a round on the rayon thread pool.
#[derive(Debug, Clone, Copy, Default)]
pub struct RayonExecutor;

impl Executor for RayonExecutor {
    fn map_mut<T, R, F>(&self, items: &mut [T], f: F) -> Vec<R>
    where
        T: Send,
        R: Send,
        F: Fn(&mut T) -> R + Sync + Send,
    {
        items.par_iter_mut().map(f).collect()
    }
}
