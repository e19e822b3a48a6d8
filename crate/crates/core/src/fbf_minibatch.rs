//! Stochastic forward-backward-forward with increasing mini-batches.

use log::warn;
use serde::{Deserialize, Serialize};

use crate::error::{check_dim, check_positive, Result, SviError};
use crate::exec::Execution;
use crate::oracle::{CountingOracle, StochasticOracle};
use crate::record::{config_digest, OutputReservoir, Recorder, RunLimits, RunRecord};
use crate::rng::{role, SeedStream};
use crate::Vector;

const SQRT6: f64 = 2.449_489_742_783_178;

/// Default step `1/(√6 L)`.
pub fn default_eta(lipschitz: f64) -> f64 {
    1.0 / (SQRT6 * lipschitz)
}

/// `δ = 1 - (2 + 2/√6)ρ/η - (30/29) η L² (η + 31(1+√6)ρ/15)`.
pub fn delta(lipschitz: f64, rho: f64, eta: f64) -> f64 {
    let l2 = lipschitz * lipschitz;
    1.0 - (2.0 + 2.0 / SQRT6) * rho / eta - (30.0 / 29.0) * eta * l2 * (eta + 31.0 * (1.0 + SQRT6) * rho / 15.0)
}

/// Largest admissible `ρ` at the default step: `72 / ((360 + 205√6) L)`.
pub fn rho_bound(lipschitz: f64) -> f64 {
    72.0 / ((360.0 + 205.0 * SQRT6) * lipschitz)
}

/// `b_k = ⌈b̄ (k+1) ln²(k+3)⌉`, at least 1.
pub fn batch_size(bbar: f64, k: u64) -> u64 {
    let l = ((k + 3) as f64).ln();
    let b = (bbar * (k + 1) as f64 * l * l).ceil();
    if b >= u64::MAX as f64 {
        u64::MAX
    } else {
        (b as u64).max(1)
    }
}

/// `b̄ = (306 + 31√6) B² / (2 L² δ)`, floored to 1 when `B = 0`.
pub fn bbar_default(bound_b: f64, lipschitz: f64, delta: f64) -> Result<f64> {
    if !(delta > 0.0) {
        return Err(SviError::Regime(format!("delta must be positive, got {delta}")));
    }
    if bound_b == 0.0 {
        return Ok(1.0);
    }
    Ok((306.0 + 31.0 * SQRT6) * bound_b * bound_b / (2.0 * lipschitz * lipschitz * delta))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MinibatchFbfConfig {
    /// Step size; `1/(√6 L)` when unset.
    pub eta: Option<f64>,
    /// Batch constant; derived from `B`, `L` and `δ` when unset.
    pub bbar: Option<f64>,
    pub iterations: u64,
    pub seed: u64,
    /// Upper cap on `b_k`.
    pub max_batch: u64,
    /// Reject configurations with `δ <= 0`.
    pub enforce_regime: bool,
    pub execution: Execution,
    pub limits: RunLimits,
}

impl Default for MinibatchFbfConfig {
    fn default() -> Self {
        Self {
            eta: None,
            bbar: None,
            iterations: 100,
            seed: 0,
            max_batch: 1_000_000,
            enforce_regime: true,
            execution: Execution::default(),
            limits: RunLimits::default(),
        }
    }
}

/// Parameters after defaults and regime checks.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ResolvedFbf {
    pub eta: f64,
    pub bbar: f64,
    pub delta: f64,
}

impl MinibatchFbfConfig {
    pub fn resolve(&self, oracle: &StochasticOracle) -> Result<ResolvedFbf> {
        let p = oracle.problem();
        let (l, rho) = (p.lipschitz(), p.rho());
        let eta = self.eta.unwrap_or_else(|| default_eta(l));
        check_positive("eta", eta)?;
        let d = delta(l, rho.max(0.0), eta);
        if self.enforce_regime && d <= 0.0 {
            return Err(SviError::Regime(format!(
                "delta = {d} <= 0 for L = {l}, rho = {rho}, eta = {eta}; rho must stay below {}",
                rho_bound(l)
            )));
        }
        let bbar = match self.bbar {
            Some(b) => {
                check_positive("bbar", b)?;
                b
            }
            None if d > 0.0 => bbar_default(oracle.bound_b(), l, d)?,
            None => 1.0,
        };
        if d <= 0.0 {
            warn!("mini-batch FBF outside its admissible regime (delta = {d})");
        }
        Ok(ResolvedFbf { eta, bbar, delta: d })
    }

    fn batch(&self, bbar: f64, k: u64) -> u64 {
        batch_size(bbar, k).min(self.max_batch.max(1))
    }
}

/// Work buffers for one step.
#[derive(Debug, Clone)]
pub struct FbfBuffers {
    pub g_base: Vec<f64>,
    pub g_half: Vec<f64>,
    pub half: Vec<f64>,
}

impl FbfBuffers {
    pub fn new(dim: usize) -> Self {
        Self { g_base: vec![0.0; dim], g_half: vec![0.0; dim], half: vec![0.0; dim] }
    }
}

/// One step from `z` (updated in place); the half-point is left in `buf.half`.
/// Consumes `2 * batch` oracle calls.
pub fn step_in_place(
    oracle: &mut CountingOracle<'_>,
    z: &mut [f64],
    k: u64,
    eta: f64,
    batch: u64,
    seed: u64,
    exec: Execution,
    buf: &mut FbfBuffers,
) {
    let reg = oracle.oracle().problem().regularizer();
    let mut base_stream = SeedStream::from_path(seed, &[role::BASE_POINT, k]);
    oracle.minibatch_into(z, batch, &mut base_stream, exec, &mut buf.g_base);
    for ((h, &zi), &g) in buf.half.iter_mut().zip(z.iter()).zip(&buf.g_base) {
        *h = zi - eta * g;
    }
    reg.prox_in_place(eta, &mut buf.half);
    let mut half_stream = SeedStream::from_path(seed, &[role::HALF_POINT, k]);
    oracle.minibatch_into(&buf.half, batch, &mut half_stream, exec, &mut buf.g_half);
    for i in 0..z.len() {
        z[i] = buf.half[i] - eta * (buf.g_half[i] - buf.g_base[i]);
    }
}

/// One step from `z_k`; returns `(z_{k+1}, z_{k+1/2})`.
pub fn step(
    oracle: &StochasticOracle,
    z: &Vector,
    k: u64,
    eta: f64,
    batch: u64,
    seed: u64,
    exec: Execution,
) -> Result<(Vector, Vector)> {
    check_dim(oracle.dim(), z.len())?;
    check_positive("eta", eta)?;
    if batch == 0 {
        return Err(SviError::InvalidArgument("batch must be at least 1".into()));
    }
    let mut counting = CountingOracle::new(oracle);
    let mut next = z.clone();
    let mut buf = FbfBuffers::new(z.len());
    step_in_place(&mut counting, next.as_mut_slice(), k, eta, batch, seed, exec, &mut buf);
    Ok((next, Vector::from_vec(buf.half)))
}

/// Runs `K` steps and returns `z_{k̂+1/2}` with `k̂` uniform over the steps run.
///
/// Log row `k` carries the residual of `z_{k-1/2}` and the norm of `z_k`.
pub fn run(oracle: &StochasticOracle, z0: &Vector, config: &MinibatchFbfConfig) -> Result<RunRecord> {
    check_dim(oracle.dim(), z0.len())?;
    let params = config.resolve(oracle)?;
    if config.iterations == 0 {
        return Err(SviError::InvalidArgument("iterations must be at least 1".into()));
    }
    let digest = config_digest("fbf_minibatch", &(config, params), oracle);
    let mut rec =
        Recorder::new(oracle, "fbf_minibatch", config.seed, digest, &config.limits, config.iterations, z0.as_slice());
    let mut counting = CountingOracle::new(oracle);
    let mut z = z0.as_slice().to_vec();
    let mut buf = FbfBuffers::new(z.len());
    let mut reservoir = OutputReservoir::new(config.seed, z.len());
    let mut warned = false;
    let mut stop = None;
    for k in 0..config.iterations {
        let b = config.batch(params.bbar, k);
        if !warned && b < batch_size(params.bbar, k) {
            warn!("batch size capped at {} from iteration {k}", config.max_batch);
            warned = true;
        }
        step_in_place(&mut counting, &mut z, k, params.eta, b, config.seed, config.execution, &mut buf);
        reservoir.offer(k, 1.0, &buf.half);
        stop = rec.step(k + 1, &buf.half, &z, counting.calls(), None);
        if stop.is_some() {
            break;
        }
    }
    Ok(rec.finish(&z, reservoir.point(), reservoir.index(), counting.calls(), stop))
}
