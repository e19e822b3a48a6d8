//! Fan-out of an experiment into (sweep value, algorithm, seed) cells.

use std::time::Instant;

use log::{info, warn};
use svi_core::{baselines, fbf_minibatch, mlmc_km, vr_halpern, RunRecord, StochasticOracle, Vector};

use crate::spec::{build_problem, AlgorithmSpec, ExperimentSpec, SpecError};

/// Environment variable whose value is added to every seed.
pub const SEED_BASE_VAR: &str = "SVI_SEED_BASE";

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RunOptions {
    /// Number of cells executed concurrently.
    pub workers: usize,
    pub seed_base: u64,
}

impl Default for RunOptions {
    fn default() -> Self {
        Self { workers: std::thread::available_parallelism().map_or(1, |n| n.get()), seed_base: 0 }
    }
}

/// Reads [`SEED_BASE_VAR`]; unset means 0.
pub fn seed_base_from_env() -> Result<u64, SpecError> {
    match std::env::var(SEED_BASE_VAR) {
        Ok(v) => {
            v.trim().parse().map_err(|e| SpecError::Invalid(vec![format!("{SEED_BASE_VAR}: cannot parse {v:?}: {e}")]))
        }
        Err(_) => Ok(0),
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Cell {
    pub algorithm_index: usize,
    pub algorithm: String,
    pub sweep_value: f64,
    /// Effective seed, offset by the seed base.
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Outcome {
    Finished(RunRecord),
    /// The solver refused the configuration, e.g. outside its regime.
    Rejected(String),
}

#[derive(Debug, Clone, PartialEq)]
pub struct CellResult {
    pub cell: Cell,
    pub outcome: Outcome,
}

impl CellResult {
    pub fn record(&self) -> Option<&RunRecord> {
        match &self.outcome {
            Outcome::Finished(r) => Some(r),
            Outcome::Rejected(_) => None,
        }
    }
}

#[derive(Debug, Clone)]
pub struct ExperimentResult {
    pub spec: ExperimentSpec,
    pub options: RunOptions,
    pub results: Vec<CellResult>,
    pub wall_seconds: f64,
}

/// Cells in canonical order: sweep value, then algorithm, then seed.
pub fn cells(spec: &ExperimentSpec, seed_base: u64) -> Vec<Cell> {
    let mut out = Vec::new();
    for value in spec.sweep_values() {
        for (i, a) in spec.algorithms.iter().enumerate() {
            for &seed in &spec.seeds {
                out.push(Cell {
                    algorithm_index: i,
                    algorithm: a.name().to_string(),
                    sweep_value: value,
                    seed: seed.wrapping_add(seed_base),
                });
            }
        }
    }
    out
}

/// Runs one cell. Configuration errors raised by the solver become
/// [`Outcome::Rejected`].
pub fn run_cell(spec: &ExperimentSpec, cell: &Cell) -> Outcome {
    let (problem, noise) = spec.cell_oracle_parts(cell.sweep_value);
    let oracle = match build_problem(&problem).and_then(|p| Ok(StochasticOracle::new(p, noise)?)) {
        Ok(o) => o,
        Err(e) => return Outcome::Rejected(e.to_string()),
    };
    let z0 = Vector::from_column_slice(&spec.initial_point);
    let algorithm = spec.cell_algorithm(&spec.algorithms[cell.algorithm_index], cell.sweep_value, cell.seed);
    let result = match &algorithm {
        AlgorithmSpec::Eg(c) => baselines::run(&oracle, &z0, c),
        AlgorithmSpec::FbfMinibatch(c) => fbf_minibatch::run(&oracle, &z0, c),
        AlgorithmSpec::MlmcKm(c) => mlmc_km::km_run(&oracle, &z0, c),
        AlgorithmSpec::VrHalpern(c) => vr_halpern::run(&oracle, &z0, c),
    };
    match result {
        Ok(r) => Outcome::Finished(r),
        Err(e) => {
            warn!(
                "{} {} value={} seed={} rejected: {e}",
                spec.experiment_id, cell.algorithm, cell.sweep_value, cell.seed
            );
            Outcome::Rejected(e.to_string())
        }
    }
}

/// Validates the experiment and executes every cell. Results come back in
/// canonical cell order regardless of the worker count.
pub fn run_experiment(spec: &ExperimentSpec, options: RunOptions) -> Result<ExperimentResult, SpecError> {
    spec.validate()?;
    let start = Instant::now();
    let cells = cells(spec, options.seed_base);
    info!("{}: {} cells on {} workers", spec.experiment_id, cells.len(), options.workers.max(1));
    let results = execute(spec, cells, options.workers.max(1))?;
    Ok(ExperimentResult { spec: spec.clone(), options, results, wall_seconds: start.elapsed().as_secs_f64() })
}

#[cfg(feature = "parallel")]
fn execute(spec: &ExperimentSpec, cells: Vec<Cell>, workers: usize) -> Result<Vec<CellResult>, SpecError> {
    use rayon::prelude::*;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(workers)
        .build()
        .map_err(|e| SpecError::Invalid(vec![format!("workers: {e}")]))?;
    Ok(pool.install(|| {
        cells
            .into_par_iter()
            .map(|cell| {
                let outcome = run_cell(spec, &cell);
                CellResult { cell, outcome }
            })
            .collect()
    }))
}

#[cfg(not(feature = "parallel"))]
fn execute(spec: &ExperimentSpec, cells: Vec<Cell>, _workers: usize) -> Result<Vec<CellResult>, SpecError> {
    Ok(cells
        .into_iter()
        .map(|cell| {
            let outcome = run_cell(spec, &cell);
            CellResult { cell, outcome }
        })
        .collect())
}
