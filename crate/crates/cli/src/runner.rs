//! Parallel benchmark execution on common random numbers.

use mixlqc::harness::{compute_metrics, episode_seed, realize, simulate_with, ExperimentConfig, Method, MethodRun};
use rayon::prelude::*;

/// Same results as [`mixlqc::harness::run_benchmark`], with episodes spread
/// over the rayon pool.
pub fn run_parallel(cfg: &ExperimentConfig, methods: &[Method]) -> mixlqc::Result<Vec<MethodRun>> {
    cfg.validate()?;
    let draws: Vec<_> = (0..cfg.runs)
        .into_par_iter()
        .map(|e| {
            let seed = episode_seed(cfg.seed, e);
            (seed, realize(cfg, seed))
        })
        .collect();
    let jobs: Vec<(Method, usize)> = methods
        .iter()
        .flat_map(|&m| (0..cfg.runs).map(move |e| (m, e)))
        .collect();
    let mut episodes = jobs
        .par_iter()
        .map(|&(m, e)| simulate_with(cfg, m, e, draws[e].0, &draws[e].1))
        .collect::<mixlqc::Result<Vec<_>>>()?
        .into_iter();
    methods
        .iter()
        .map(|_| {
            let chunk: Vec<_> = episodes.by_ref().take(cfg.runs).collect();
            Ok(MethodRun {
                metrics: compute_metrics(&chunk)?,
                episodes: chunk,
            })
        })
        .collect()
}
