//! Extragradient.

use serde::{Deserialize, Serialize};

use crate::error::{check_dim, check_positive, Result, SviError};
use crate::oracle::{CountingOracle, StochasticOracle};
use crate::record::{config_digest, Recorder, RunLimits, RunRecord};
use crate::rng::{derive, role};
use crate::Vector;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EgConfig {
    /// Step size; `1/L` when unset.
    pub gamma: Option<f64>,
    pub iterations: u64,
    /// Use oracle samples instead of exact operator values.
    pub stochastic: bool,
    pub seed: u64,
    pub limits: RunLimits,
}

impl Default for EgConfig {
    fn default() -> Self {
        Self { gamma: None, iterations: 100, stochastic: false, seed: 0, limits: RunLimits::default() }
    }
}

#[derive(Debug, Clone)]
struct EgBuffers {
    g: Vec<f64>,
    half: Vec<f64>,
}

fn eval(oracle: &mut CountingOracle<'_>, stochastic: bool, z: &[f64], seed: u64, out: &mut [f64]) {
    if stochastic {
        oracle.sample_into(z, seed, out);
    } else {
        oracle.exact_into(z, out);
    }
}

fn step_in_place(
    oracle: &mut CountingOracle<'_>,
    z: &mut [f64],
    k: u64,
    gamma: f64,
    stochastic: bool,
    seed: u64,
    buf: &mut EgBuffers,
) {
    let reg = oracle.oracle().problem().regularizer();
    eval(oracle, stochastic, z, derive(seed, &[role::EXTRAGRADIENT, k, 0]), &mut buf.g);
    for ((h, &zi), &gi) in buf.half.iter_mut().zip(z.iter()).zip(&buf.g) {
        *h = zi - gamma * gi;
    }
    reg.prox_in_place(gamma, &mut buf.half);
    eval(oracle, stochastic, &buf.half, derive(seed, &[role::EXTRAGRADIENT, k, 1]), &mut buf.g);
    for (zi, &gi) in z.iter_mut().zip(&buf.g) {
        *zi -= gamma * gi;
    }
    reg.prox_in_place(gamma, z);
}

/// `z_{k+1/2} = prox(z_k - γ G(z_k))`, `z_{k+1} = prox(z_k - γ G(z_{k+1/2}))`.
pub fn eg_step(
    oracle: &StochasticOracle,
    z: &Vector,
    gamma: f64,
    stochastic: bool,
    k: u64,
    seed: u64,
) -> Result<Vector> {
    check_dim(oracle.dim(), z.len())?;
    check_positive("gamma", gamma)?;
    let mut counting = CountingOracle::new(oracle);
    let mut next = z.clone();
    let mut buf = EgBuffers { g: vec![0.0; z.len()], half: vec![0.0; z.len()] };
    step_in_place(&mut counting, next.as_mut_slice(), k, gamma, stochastic, seed, &mut buf);
    Ok(next)
}

/// Runs extragradient; the output is the last iterate.
pub fn run(oracle: &StochasticOracle, z0: &Vector, config: &EgConfig) -> Result<RunRecord> {
    check_dim(oracle.dim(), z0.len())?;
    if config.iterations == 0 {
        return Err(SviError::InvalidArgument("iterations must be at least 1".into()));
    }
    let gamma = config.gamma.unwrap_or(1.0 / oracle.problem().lipschitz());
    check_positive("gamma", gamma)?;
    let name = if config.stochastic { "eg_stochastic" } else { "eg" };
    let digest = config_digest(name, config, oracle);
    let mut rec = Recorder::new(oracle, name, config.seed, digest, &config.limits, config.iterations, z0.as_slice());
    let mut counting = CountingOracle::new(oracle);
    let mut z = z0.as_slice().to_vec();
    let mut buf = EgBuffers { g: vec![0.0; z.len()], half: vec![0.0; z.len()] };
    let mut stop = None;
    let mut done = 0;
    for k in 0..config.iterations {
        step_in_place(&mut counting, &mut z, k, gamma, config.stochastic, config.seed, &mut buf);
        done = k + 1;
        stop = rec.step(k + 1, &z, &z, counting.calls(), None);
        if stop.is_some() {
            break;
        }
    }
    Ok(rec.finish(&z, &z, done, counting.calls(), stop))
}
