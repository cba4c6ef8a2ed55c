use std::collections::BTreeMap;
use std::time::Instant;

use partialfl_core::data::Dataset;
use partialfl_core::federation::{
    run_experiment, ClientExecutor, ClientJob, ClientOutcome, FederatedData, NoObserver, RoundObserver,
};
use partialfl_core::rng::SeedStreams;
use rayon::prelude::*;

use crate::config::ExperimentConfig;
use crate::grid::GridPoint;
use crate::report::{mark_best, MetricMap, ReportDocument, VERSION};
use crate::Result;

/// Trains a round's participants on a rayon pool. Outcomes come back in job
/// order, so results match sequential execution exactly.
pub struct RayonExecutor {
    pool: rayon::ThreadPool,
}

impl RayonExecutor {
    /// `threads == 0` lets rayon pick the number of threads.
    pub fn new(threads: usize) -> Self {
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build()
            .expect("thread pool");
        Self { pool }
    }
}

impl ClientExecutor for RayonExecutor {
    fn execute(&self, jobs: Vec<ClientJob<'_>>) -> Vec<partialfl_core::Result<ClientOutcome>> {
        self.pool.install(|| jobs.into_par_iter().map(ClientJob::run).collect())
    }
}

/// Builds the federated data for a config: either synthesized from the
/// config's seed or partitioned from an imported `(train, test)` pair.
pub fn prepare_data(cfg: &ExperimentConfig, imported: Option<&(Dataset, Dataset)>) -> Result<FederatedData> {
    let streams = SeedStreams::new(cfg.seed);
    let clients = cfg.federation.clients;
    Ok(match imported {
        Some((train, test)) => {
            FederatedData::from_split(train.clone(), test.clone(), &cfg.partition, clients, &streams)?
        }
        None => FederatedData::synthesize(&cfg.data, &cfg.partition, clients, &streams)?,
    })
}

pub fn run_config(
    cfg: &ExperimentConfig,
    executor: &dyn ClientExecutor,
    imported: Option<&(Dataset, Dataset)>,
) -> Result<ReportDocument> {
    run_observed(cfg, executor, imported, &mut NoObserver)
}

pub fn run_observed(
    cfg: &ExperimentConfig,
    executor: &dyn ClientExecutor,
    imported: Option<&(Dataset, Dataset)>,
    observer: &mut dyn RoundObserver,
) -> Result<ReportDocument> {
    cfg.validate()?;
    let start = Instant::now();
    let data = prepare_data(cfg, imported)?;
    let outcome = run_experiment(
        &cfg.federation,
        &cfg.model,
        &data,
        &cfg.eval_plan(),
        &SeedStreams::new(cfg.seed),
        executor,
        observer,
    )?;
    Ok(ReportDocument {
        config: cfg.clone(),
        version: VERSION.to_string(),
        grid: BTreeMap::new(),
        best: None,
        rounds: outcome.rounds.into_iter().map(Into::into).collect(),
        final_metrics: MetricMap(outcome.final_metrics),
        wall_clock_secs: start.elapsed().as_secs_f64(),
    })
}

/// Runs every grid point in order and marks the best one. With a single
/// point and no overrides, `best` stays unset.
pub fn run_grid(
    points: &[GridPoint],
    executor: &dyn ClientExecutor,
    imported: Option<&(Dataset, Dataset)>,
    mut on_done: impl FnMut(usize, &ReportDocument),
) -> Result<Vec<ReportDocument>> {
    let mut reports = Vec::with_capacity(points.len());
    for (i, point) in points.iter().enumerate() {
        let mut doc = run_config(&point.config, executor, imported)?;
        doc.grid = point.assignments.iter().cloned().collect();
        on_done(i, &doc);
        reports.push(doc);
    }
    if points.len() > 1 || points.iter().any(|p| !p.assignments.is_empty()) {
        mark_best(&mut reports);
    }
    Ok(reports)
}
