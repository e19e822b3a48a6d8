//! Run records, stopping rules and output selection.

use std::fmt::{Debug, Write as _};
use std::time::Instant;

use rand::Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::oracle::StochasticOracle;
use crate::residual::{norm, ResidualProbe};
use crate::rng::{derive, draw_rng, role};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StopReason {
    Completed,
    MaxOracleCalls,
    Diverged,
}

impl StopReason {
    pub fn as_str(self) -> &'static str {
        match self {
            StopReason::Completed => "completed",
            StopReason::MaxOracleCalls => "max_oracle_calls",
            StopReason::Diverged => "diverged",
        }
    }
}

/// Budget and bookkeeping limits shared by all solvers.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RunLimits {
    /// Stop once the cumulative oracle count reaches this value.
    pub max_oracle_calls: Option<u64>,
    /// Abort when `||z_k||` exceeds this value or becomes non-finite.
    pub divergence_threshold: f64,
    /// Log every n-th iteration; the last iteration is always logged.
    pub log_every: u64,
    /// Keep every iterate `z_k` in the record.
    pub record_points: bool,
}

impl Default for RunLimits {
    fn default() -> Self {
        Self { max_oracle_calls: None, divergence_threshold: 1e12, log_every: 1, record_points: false }
    }
}

/// One logged iteration. `residual` refers to the point the solver reports at
/// that iteration and `norm_z` to the main iterate `z_k`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LogEntry {
    pub iteration: u64,
    pub residual: f64,
    pub oracle_calls: u64,
    pub norm_z: f64,
    /// Solver-specific secondary metric.
    pub aux: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub algorithm: String,
    pub seed: u64,
    pub config_digest: String,
    pub initial_residual: f64,
    pub initial_norm: f64,
    pub log: Vec<LogEntry>,
    /// Iterates `z_0, z_1, ...` when requested through [`RunLimits`].
    pub points: Vec<Vec<f64>>,
    pub final_point: Vec<f64>,
    pub output_point: Vec<f64>,
    pub output_index: u64,
    pub output_residual: f64,
    pub oracle_calls: u64,
    pub iterations: u64,
    pub stop_reason: StopReason,
    pub elapsed_seconds: f64,
}

impl RunRecord {
    pub fn final_residual(&self) -> f64 {
        self.log.last().map_or(self.initial_residual, |e| e.residual)
    }

    pub fn final_norm(&self) -> f64 {
        self.log.last().map_or(self.initial_norm, |e| e.norm_z)
    }

    pub fn diverged(&self) -> bool {
        self.stop_reason == StopReason::Diverged
    }
}

/// Short SHA-256 digest of a solver configuration and the oracle it runs on.
pub fn config_digest<C: Debug>(algorithm: &str, config: &C, oracle: &StochasticOracle) -> String {
    let p = oracle.problem();
    let text = format!(
        "{algorithm}|{config:?}|{}|{}|{:?}|{:?}|{:?}",
        p.name(),
        p.dim(),
        p.lipschitz().to_bits(),
        p.rho().to_bits(),
        oracle.spec()
    );
    let hash = Sha256::digest(text.as_bytes());
    let mut out = String::with_capacity(16);
    for byte in &hash[..8] {
        let _ = write!(out, "{byte:02x}");
    }
    out
}

/// Streaming draw of one logged point with probability proportional to its
/// weight, over however many points were offered before the run stopped.
#[derive(Debug, Clone)]
pub struct OutputReservoir {
    seed: u64,
    total: f64,
    index: u64,
    point: Vec<f64>,
}

impl OutputReservoir {
    pub fn new(seed: u64, dim: usize) -> Self {
        Self { seed: derive(seed, &[role::OUTPUT]), total: 0.0, index: 0, point: vec![0.0; dim] }
    }

    pub fn offer(&mut self, index: u64, weight: f64, point: &[f64]) {
        let first = self.total == 0.0;
        self.total += weight;
        let keep = if first {
            true
        } else {
            let u: f64 = draw_rng(derive(self.seed, &[index])).random();
            u * self.total < weight
        };
        if keep {
            self.index = index;
            self.point.copy_from_slice(point);
        }
    }

    pub fn is_empty(&self) -> bool {
        self.total == 0.0
    }

    pub fn index(&self) -> u64 {
        self.index
    }

    pub fn point(&self) -> &[f64] {
        &self.point
    }
}

/// Collects log entries and applies stopping rules.
pub(crate) struct Recorder<'a> {
    probe: ResidualProbe<'a>,
    limits: RunLimits,
    planned: u64,
    record: RunRecord,
    start: Instant,
}

impl<'a> Recorder<'a> {
    pub(crate) fn new(
        oracle: &'a StochasticOracle,
        algorithm: &str,
        seed: u64,
        digest: String,
        limits: &RunLimits,
        planned: u64,
        z0: &[f64],
    ) -> Self {
        let problem = oracle.problem();
        let mut probe = ResidualProbe::new(problem, problem.default_residual_gamma());
        let initial_residual = probe.eval(z0);
        let mut points = Vec::new();
        if limits.record_points {
            points.push(z0.to_vec());
        }
        let cap = if limits.log_every == 0 { 0 } else { planned / limits.log_every.max(1) + 1 };
        Self {
            probe,
            limits: limits.clone(),
            planned,
            record: RunRecord {
                algorithm: algorithm.to_string(),
                seed,
                config_digest: digest,
                initial_residual,
                initial_norm: norm(z0),
                log: Vec::with_capacity(cap.min(1 << 20) as usize),
                points,
                final_point: z0.to_vec(),
                output_point: z0.to_vec(),
                output_index: 0,
                output_residual: initial_residual,
                oracle_calls: 0,
                iterations: 0,
                stop_reason: StopReason::Completed,
                elapsed_seconds: 0.0,
            },
            start: Instant::now(),
        }
    }

    /// Records the state after `iteration` completed steps. `reported` is the
    /// point whose residual is logged, `z` the main iterate.
    pub(crate) fn step(
        &mut self,
        iteration: u64,
        reported: &[f64],
        z: &[f64],
        calls: u64,
        aux: Option<f64>,
    ) -> Option<StopReason> {
        let nz = norm(z);
        let stop = if !nz.is_finite() || nz > self.limits.divergence_threshold {
            Some(StopReason::Diverged)
        } else if self.limits.max_oracle_calls.is_some_and(|m| calls >= m) && iteration < self.planned {
            Some(StopReason::MaxOracleCalls)
        } else {
            None
        };
        let every = self.limits.log_every.max(1);
        if iteration % every == 0 || iteration == self.planned || stop.is_some() {
            let residual = self.probe.eval(reported);
            self.record.log.push(LogEntry { iteration, residual, oracle_calls: calls, norm_z: nz, aux });
        }
        if self.limits.record_points {
            self.record.points.push(z.to_vec());
        }
        self.record.iterations = iteration;
        self.record.oracle_calls = calls;
        stop
    }

    pub(crate) fn finish(
        mut self,
        final_point: &[f64],
        output_point: &[f64],
        output_index: u64,
        calls: u64,
        stop: Option<StopReason>,
    ) -> RunRecord {
        self.record.final_point = final_point.to_vec();
        self.record.output_point = output_point.to_vec();
        self.record.output_index = output_index;
        self.record.output_residual = self.probe.eval(output_point);
        self.record.oracle_calls = calls;
        self.record.stop_reason = stop.unwrap_or(StopReason::Completed);
        self.record.elapsed_seconds = self.start.elapsed().as_secs_f64();
        self.record
    }
}
