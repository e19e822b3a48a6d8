//! Inexact Krasnoselskii-Mann iteration on the resolvent `J_{η(G+∂r)}`, with
//! each resolvent evaluation estimated by multilevel Monte Carlo over a
//! stochastic FBF inner solver.

use std::cell::RefCell;

use serde::{Deserialize, Serialize};

use crate::error::{check_dim, check_positive, Result, SviError};
use crate::exec::{chunked_sum, Execution};
use crate::oracle::StochasticOracle;
use crate::record::{config_digest, OutputReservoir, Recorder, RunLimits, RunRecord};
use crate::residual::norm;
use crate::rng::{derive, mix64, role};
use crate::Vector;

/// The strongly monotone subproblem `0 ∈ A(x) + B(x)` with
/// `B(x) = x + η G(x) - z_k` and `A = η ∂r`, whose solution is `J(z_k)`.
#[derive(Debug, Clone)]
pub struct ResolventSubproblem<'a> {
    oracle: &'a StochasticOracle,
    anchor: Vec<f64>,
    eta: f64,
    mu: f64,
    lipschitz_b: f64,
    m_const: f64,
}

impl<'a> ResolventSubproblem<'a> {
    pub fn new(oracle: &'a StochasticOracle, anchor: &[f64], eta: f64) -> Result<Self> {
        check_dim(oracle.dim(), anchor.len())?;
        check_positive("eta", eta)?;
        let l = oracle.problem().lipschitz();
        let mu = 1.0 - eta * l;
        if !(mu > 0.0) {
            return Err(SviError::Regime(format!(
                "resolvent subproblem needs eta < 1/L, got eta = {eta}, 1/L = {}",
                1.0 / l
            )));
        }
        let lipschitz_b = 1.0 + eta * l;
        let m_const = lipschitz_b.max(eta * oracle.bound_b());
        Ok(Self { oracle, anchor: anchor.to_vec(), eta, mu, lipschitz_b, m_const })
    }

    pub fn anchor(&self) -> &[f64] {
        &self.anchor
    }

    pub fn eta(&self) -> f64 {
        self.eta
    }

    /// Strong monotonicity modulus `1 - ηL`.
    pub fn mu(&self) -> f64 {
        self.mu
    }

    /// Lipschitz constant `1 + ηL` of `B`.
    pub fn lipschitz_b(&self) -> f64 {
        self.lipschitz_b
    }

    /// `M = max(1 + ηL, η B)`.
    pub fn m_const(&self) -> f64 {
        self.m_const
    }

    /// `κ = 144 M² / μ²`.
    pub fn kappa(&self) -> f64 {
        144.0 * self.m_const * self.m_const / (self.mu * self.mu)
    }

    /// Additive noise constant of the transformed oracle, `η σ`.
    pub fn sigma(&self) -> f64 {
        self.eta * self.oracle.sigma()
    }

    /// `C1 = 3κ`.
    pub fn c1(&self) -> f64 {
        3.0 * self.kappa()
    }

    /// `C2 = 282 / μ²`.
    pub fn c2(&self) -> f64 {
        282.0 / (self.mu * self.mu)
    }

    /// `τ_t = 4 / ((t+1)μ + 144 M²/μ)`.
    pub fn step_size(&self, t: u64) -> f64 {
        4.0 / ((t + 1) as f64 * self.mu + 144.0 * self.m_const * self.m_const / self.mu)
    }

    /// `(3κ ||x* - x0||² + 282 σ²/μ²) / (T + κ)` for the transformed σ.
    pub fn rate_bound(&self, dist0_sq: f64, steps: u64) -> f64 {
        let s = self.sigma();
        (self.c1() * dist0_sq + self.c2() * s * s) / (steps as f64 + self.kappa())
    }

    /// `C = C1 ||x* - x0||² + C2 σ²`, so that the rate bound is at most `C / T`.
    pub fn rate_constant(&self, dist0_sq: f64) -> f64 {
        let s = self.sigma();
        self.c1() * dist0_sq + self.c2() * s * s
    }

    /// `B̃(x, ξ_seed) = x + η G̃(x, ξ_seed) - z_k`.
    #[inline]
    pub fn sample_b_into(&self, x: &[f64], seed: u64, out: &mut [f64]) {
        self.oracle.sample_into(x, seed, out);
        for ((o, &xi), &ai) in out.iter_mut().zip(x).zip(&self.anchor) {
            *o = xi + self.eta * *o - ai;
        }
    }

    /// Exact `J(z_k)` for linear operators with `r ≡ 0`, by solving `(I + ηG) x = z_k`.
    pub fn exact_solution(&self) -> Option<Vector> {
        let p = self.oracle.problem();
        if !p.regularizer().is_zero() {
            return None;
        }
        let g = p.operator().matrix()?;
        let m = nalgebra::DMatrix::<f64>::identity(g.nrows(), g.ncols()) + g * self.eta;
        m.lu().solve(&Vector::from_column_slice(&self.anchor))
    }
}

/// Scratch space for the inner solver.
#[derive(Debug, Clone)]
pub struct InnerWork {
    x: Vec<f64>,
    half: Vec<f64>,
    bx: Vec<f64>,
    bh: Vec<f64>,
    y0: Vec<f64>,
    prev: Vec<f64>,
}

impl InnerWork {
    pub fn new(dim: usize) -> Self {
        Self {
            x: vec![0.0; dim],
            half: vec![0.0; dim],
            bx: vec![0.0; dim],
            bh: vec![0.0; dim],
            y0: vec![0.0; dim],
            prev: vec![0.0; dim],
        }
    }
}

/// Runs `steps` stochastic FBF steps on the subproblem from `work.x`,
/// calling `visit(t, x_t)` after every step. Returns the oracle calls used.
fn inner_steps(
    sub: &ResolventSubproblem<'_>,
    steps: u64,
    seed: u64,
    work: &mut InnerWork,
    mut visit: impl FnMut(u64, &[f64]),
) -> u64 {
    let reg = sub.oracle.problem().regularizer();
    let noiseless = sub.oracle.is_noiseless();
    let seed_of = |t: u64, half: u64| if noiseless { 0 } else { derive(seed, &[role::INNER, t, half]) };
    let InnerWork { x, half, bx, bh, .. } = work;
    for t in 0..steps {
        let tau = sub.step_size(t);
        sub.sample_b_into(x, seed_of(t, 0), bx);
        for ((h, &xi), &b) in half.iter_mut().zip(x.iter()).zip(bx.iter()) {
            *h = xi - tau * b;
        }
        reg.prox_in_place(tau * sub.eta, half);
        sub.sample_b_into(half, seed_of(t, 1), bh);
        for i in 0..x.len() {
            x[i] = half[i] + tau * (bx[i] - bh[i]);
        }
        visit(t + 1, x);
    }
    2 * steps
}

/// `x_T` of the inner stochastic FBF solver started at `x0`. Uses `2T` calls.
pub fn inner_fbf(sub: &ResolventSubproblem<'_>, x0: &Vector, steps: u64, seed: u64) -> Result<Vector> {
    check_dim(sub.anchor.len(), x0.len())?;
    if steps == 0 {
        return Err(SviError::InvalidArgument("inner solver needs at least one step".into()));
    }
    let mut work = InnerWork::new(x0.len());
    work.x.copy_from_slice(x0.as_slice());
    inner_steps(sub, steps, seed, &mut work, |_, _| {});
    Ok(Vector::from_vec(work.x))
}

/// Iterates `x_t` of one inner trajectory at the requested step counts.
pub fn inner_fbf_trajectory(
    sub: &ResolventSubproblem<'_>,
    x0: &Vector,
    checkpoints: &[u64],
    seed: u64,
) -> Result<Vec<Vector>> {
    check_dim(sub.anchor.len(), x0.len())?;
    let steps = checkpoints.iter().copied().max().unwrap_or(0);
    let mut work = InnerWork::new(x0.len());
    work.x.copy_from_slice(x0.as_slice());
    let mut out = vec![x0.clone(); checkpoints.len()];
    inner_steps(sub, steps, seed, &mut work, |t, x| {
        for (slot, &c) in out.iter_mut().zip(checkpoints) {
            if c == t {
                slot.copy_from_slice(x);
            }
        }
    });
    Ok(out)
}

/// Level `I >= 1` with `P(I = i) = 2^{-i}`.
pub fn geometric_level(seed: u64) -> u32 {
    (1 + mix64(derive(seed, &[role::GEOMETRIC])).trailing_zeros()).min(63)
}

fn level_fits(level: u32, n: u64) -> bool {
    level < 64 && (1u64 << level) <= n
}

/// Oracle calls of one estimator draw at level `level` with truncation `n`.
pub fn mlmc_draw_cost(level: u32, n: u64) -> u64 {
    if level_fits(level, n) {
        2 << level
    } else {
        2
    }
}

/// `E[calls] = 2 ⌊log₂ N⌋ + 2 · 2^{-⌊log₂ N⌋}`.
pub fn expected_mlmc_calls(n: u64) -> f64 {
    let j = 63 - n.max(1).leading_zeros() as i32;
    2.0 * j as f64 + 2.0 * 2f64.powi(-j)
}

/// One estimator draw written to `out`, starting the inner solver at `x0`.
/// Returns `(level, calls)`.
pub fn mlmc_estimate_into(
    sub: &ResolventSubproblem<'_>,
    x0: &[f64],
    n: u64,
    seed: u64,
    work: &mut InnerWork,
    out: &mut [f64],
) -> (u32, u64) {
    let level = geometric_level(seed);
    work.x.copy_from_slice(x0);
    if !level_fits(level, n) {
        let calls = inner_steps(sub, 1, seed, work, |_, _| {});
        out.copy_from_slice(&work.x);
        return (level, calls);
    }
    let top = 1u64 << level;
    let below = top >> 1;
    let mut y0 = std::mem::take(&mut work.y0);
    let mut prev = std::mem::take(&mut work.prev);
    let calls = inner_steps(sub, top, seed, work, |t, x| {
        if t == 1 {
            y0.copy_from_slice(x);
        }
        if t == below {
            prev.copy_from_slice(x);
        }
    });
    let scale = top as f64;
    for i in 0..out.len() {
        out[i] = y0[i] + scale * (work.x[i] - prev[i]);
    }
    work.y0 = y0;
    work.prev = prev;
    (level, calls)
}

#[derive(Debug, Clone, PartialEq)]
pub struct MlmcDraw {
    pub estimate: Vector,
    pub level: u32,
    pub calls: u64,
}

/// One draw of the MLMC resolvent estimator with the inner solver started at
/// the subproblem anchor `z_k`.
pub fn mlmc_estimate(sub: &ResolventSubproblem<'_>, n: u64, seed: u64) -> Result<MlmcDraw> {
    if n == 0 {
        return Err(SviError::InvalidArgument("N must be at least 1".into()));
    }
    let dim = sub.anchor.len();
    let mut work = InnerWork::new(dim);
    let mut out = vec![0.0; dim];
    let x0 = sub.anchor.clone();
    let (level, calls) = mlmc_estimate_into(sub, &x0, n, seed, &mut work, &mut out);
    Ok(MlmcDraw { estimate: Vector::from_vec(out), level, calls })
}

/// Per-iteration budgets of the outer loop.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MlmcBudget {
    pub n: u64,
    pub m: u64,
    pub b_sq: f64,
    pub v_sq: f64,
    pub c1: f64,
    pub c2: f64,
}

pub const V_SQ: f64 = 1.0 / 60.0;

/// `α_k = c α / (√(k+2) ln(k+3))`.
pub fn km_weight(k: u64, alpha: f64, multiplier: f64) -> f64 {
    multiplier * alpha / (((k + 2) as f64).sqrt() * ((k + 3) as f64).ln())
}

fn ceil_count(x: f64) -> u64 {
    if x >= u64::MAX as f64 {
        u64::MAX
    } else {
        (x.ceil() as u64).max(1)
    }
}

/// `N_k = ⌈max(2C1, 2C2) / min(b_k², v²/2)⌉` and
/// `M_k = ⌈28 max(C1, C2) log₂ N_k / v²⌉` with `b_k² = α_k / (120 α (k+1))`.
pub fn budgets(k: u64, alpha: f64, c1: f64, c2: f64) -> MlmcBudget {
    let ak = km_weight(k, alpha, 1.0);
    let b_sq = ak / (120.0 * alpha * (k + 1) as f64);
    let n = ceil_count(2.0 * c1.max(c2) / b_sq.min(V_SQ / 2.0));
    let m = ceil_count(28.0 * c1.max(c2) * (n as f64).log2() / V_SQ);
    MlmcBudget { n, m, b_sq, v_sq: V_SQ, c1, c2 }
}

/// How `(N_k, M_k)` are chosen.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "policy", rename_all = "snake_case")]
pub enum BudgetPolicy {
    /// Theoretical budgets multiplied by `scale`.
    Theory { scale: f64 },
    /// Constant budgets.
    Fixed { n: u64, m: u64 },
}

impl Default for BudgetPolicy {
    fn default() -> Self {
        BudgetPolicy::Theory { scale: 1.0 }
    }
}

impl BudgetPolicy {
    pub fn resolve(&self, k: u64, alpha: f64, c1: f64, c2: f64) -> (u64, u64) {
        match *self {
            BudgetPolicy::Theory { scale } => {
                let b = budgets(k, alpha, c1, c2);
                (ceil_count(b.n as f64 * scale), ceil_count(b.m as f64 * scale))
            }
            BudgetPolicy::Fixed { n, m } => (n.max(1), m.max(1)),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct KmConfig {
    /// Resolvent parameter; `(ρ + 1/L)/2` for `ρ > 0`, `0.9/L` otherwise.
    pub eta: Option<f64>,
    /// Overrides `α = 1 - ρ/η`.
    pub alpha: Option<f64>,
    /// Multiplier `c` in the weights `α_k`.
    pub alpha_multiplier: f64,
    pub iterations: u64,
    pub seed: u64,
    pub budget: BudgetPolicy,
    /// Reject `η <= ρ`.
    pub enforce_regime: bool,
    /// Step of the final output extraction; `1/(2(1 + ηL))` when unset.
    pub output_step: Option<f64>,
    /// Start the inner solver at the previous resolvent estimate instead of `z_k`.
    pub warm_start: bool,
    pub execution: Execution,
    pub limits: RunLimits,
}

impl Default for KmConfig {
    fn default() -> Self {
        Self {
            eta: None,
            alpha: None,
            alpha_multiplier: 1.0,
            iterations: 100,
            seed: 0,
            budget: BudgetPolicy::default(),
            enforce_regime: true,
            output_step: None,
            warm_start: false,
            execution: Execution::default(),
            limits: RunLimits::default(),
        }
    }
}

pub fn default_eta(lipschitz: f64, rho: f64) -> f64 {
    if rho > 0.0 {
        0.5 * (rho + 1.0 / lipschitz)
    } else {
        0.9 / lipschitz
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ResolvedKm {
    pub eta: f64,
    pub alpha: f64,
    pub c1: f64,
    pub c2: f64,
}

impl KmConfig {
    pub fn resolve(&self, oracle: &StochasticOracle) -> Result<ResolvedKm> {
        let p = oracle.problem();
        let (l, rho) = (p.lipschitz(), p.rho());
        if self.enforce_regime && rho >= 1.0 / l {
            return Err(SviError::Regime(format!(
                "no admissible eta: need rho < eta < 1/L, got rho = {rho}, 1/L = {}",
                1.0 / l
            )));
        }
        let eta = self.eta.unwrap_or_else(|| default_eta(l, rho));
        check_positive("eta", eta)?;
        if self.enforce_regime && eta <= rho {
            return Err(SviError::Regime(format!("eta = {eta} must exceed rho = {rho}")));
        }
        let sub = ResolventSubproblem::new(oracle, &vec![0.0; p.dim()], eta)?;
        let alpha = match self.alpha {
            Some(a) => a,
            None => 1.0 - rho / eta,
        };
        if !(alpha > 0.0 && alpha <= 1.0) {
            return Err(SviError::Regime(format!("alpha = {alpha} must lie in (0, 1]")));
        }
        check_positive("alpha multiplier", self.alpha_multiplier)?;
        let a0 = km_weight(0, alpha, self.alpha_multiplier);
        if a0 >= 1.0 {
            return Err(SviError::InvalidArgument(format!("alpha_0 = {a0} must stay below 1")));
        }
        if let BudgetPolicy::Theory { scale } = self.budget {
            check_positive("budget scale", scale)?;
        }
        Ok(ResolvedKm { eta, alpha, c1: sub.c1(), c2: sub.c2() })
    }
}

/// One stochastic FBF step on the subproblem anchored at `z`, started at `z`;
/// returns the half-point. Uses 2 oracle calls.
fn output_step(sub: &ResolventSubproblem<'_>, step: f64, seed: u64) -> Vec<f64> {
    let dim = sub.anchor.len();
    let reg = sub.oracle.problem().regularizer();
    let mut bx = vec![0.0; dim];
    sub.sample_b_into(&sub.anchor, derive(seed, &[role::OUTPUT, 0]), &mut bx);
    let mut half: Vec<f64> = sub.anchor.iter().zip(&bx).map(|(z, b)| z - step * b).collect();
    reg.prox_in_place(step * sub.eta, &mut half);
    half
}

/// Picks `k̂` uniformly over `trajectory` and applies one FBF step to the
/// subproblem anchored at `z_{k̂}`, starting from `z_{k̂}`. Returns the half-point.
pub fn extract_output(
    oracle: &StochasticOracle,
    trajectory: &[Vector],
    eta: f64,
    step: f64,
    seed: u64,
) -> Result<(usize, Vector)> {
    if trajectory.is_empty() {
        return Err(SviError::InvalidArgument("trajectory is empty".into()));
    }
    check_positive("output step", step)?;
    let mut reservoir = OutputReservoir::new(seed, oracle.dim());
    for (k, z) in trajectory.iter().enumerate() {
        check_dim(oracle.dim(), z.len())?;
        reservoir.offer(k as u64, 1.0, z.as_slice());
    }
    let sub = ResolventSubproblem::new(oracle, reservoir.point(), eta)?;
    Ok((reservoir.index() as usize, Vector::from_vec(output_step(&sub, step, seed))))
}

thread_local! {
    static WORK: RefCell<(InnerWork, Vec<f64>)> = RefCell::new((InnerWork::new(0), Vec::new()));
}

/// Mean of `m` estimator draws at outer iteration `k`, and the calls used.
fn averaged_resolvent(
    sub: &ResolventSubproblem<'_>,
    x0: &[f64],
    n: u64,
    m: u64,
    k: u64,
    seed: u64,
    exec: Execution,
) -> (Vec<f64>, u64) {
    let dim = sub.anchor.len();
    let draw_seed = |j: u64| derive(seed, &[role::MLMC_DRAW, k, j]);
    if sub.oracle.is_noiseless() {
        return shared_trajectory_mean(sub, x0, n, m, draw_seed);
    }
    let mut sum = chunked_sum(exec, m as usize, dim, |j, acc| {
        WORK.with(|cell| {
            let mut guard = cell.borrow_mut();
            let (work, out) = &mut *guard;
            if work.x.len() != dim {
                *work = InnerWork::new(dim);
                *out = vec![0.0; dim];
            }
            mlmc_estimate_into(sub, x0, n, draw_seed(j as u64), work, out);
            for (a, o) in acc.iter_mut().zip(out.iter()) {
                *a += o;
            }
        })
    });
    let calls = (0..m).map(|j| mlmc_draw_cost(geometric_level(draw_seed(j)), n)).sum();
    let inv = 1.0 / m as f64;
    sum.iter_mut().for_each(|s| *s *= inv);
    (sum, calls)
}

/// Noise-free variant of [`averaged_resolvent`]: every draw then follows the
/// same deterministic inner trajectory and differs only in its level, so one
/// trajectory serves all `m` draws. Calls are still counted per draw.
fn shared_trajectory_mean(
    sub: &ResolventSubproblem<'_>,
    x0: &[f64],
    n: u64,
    m: u64,
    draw_seed: impl Fn(u64) -> u64,
) -> (Vec<f64>, u64) {
    let dim = x0.len();
    let mut counts = [0u64; 64];
    let mut calls = 0;
    for j in 0..m {
        let level = geometric_level(draw_seed(j));
        calls += mlmc_draw_cost(level, n);
        counts[if level_fits(level, n) { level as usize } else { 0 }] += 1;
    }
    let top = (1..64).rev().find(|&i| counts[i] > 0).unwrap_or(0);
    let mut snaps = vec![vec![0.0; dim]; top + 1];
    let mut work = InnerWork::new(dim);
    work.x.copy_from_slice(x0);
    inner_steps(sub, (1u64 << top).max(1), 0, &mut work, |t, x| {
        if t.is_power_of_two() {
            snaps[t.trailing_zeros() as usize].copy_from_slice(x);
        }
    });
    let mut mean = vec![0.0; dim];
    for (level, &c) in counts.iter().enumerate().take(top + 1) {
        if c == 0 {
            continue;
        }
        let w = c as f64 / m as f64;
        for i in 0..dim {
            let est = if level == 0 {
                snaps[0][i]
            } else {
                snaps[0][i] + (1u64 << level) as f64 * (snaps[level][i] - snaps[level - 1][i])
            };
            mean[i] += w * est;
        }
    }
    (mean, calls)
}

/// Runs the inexact KM iteration.
///
/// Log row `k` carries the residual and norm of `z_k`, with the fixed-point
/// proxy `||z_{k-1} - J̃(z_{k-1})||` as `aux`.
pub fn km_run(oracle: &StochasticOracle, z0: &Vector, config: &KmConfig) -> Result<RunRecord> {
    check_dim(oracle.dim(), z0.len())?;
    let params = config.resolve(oracle)?;
    if config.iterations == 0 {
        return Err(SviError::InvalidArgument("iterations must be at least 1".into()));
    }
    let step = config.output_step.unwrap_or(0.5 / (1.0 + params.eta * oracle.problem().lipschitz()));
    check_positive("output step", step)?;
    let digest = config_digest("mlmc_km", &(config, params), oracle);
    let mut rec =
        Recorder::new(oracle, "mlmc_km", config.seed, digest, &config.limits, config.iterations, z0.as_slice());
    let mut z = z0.as_slice().to_vec();
    let mut start = z.clone();
    let mut reservoir = OutputReservoir::new(config.seed, z.len());
    let mut calls = 0u64;
    let mut stop = None;
    for k in 0..config.iterations {
        let (n, m) = config.budget.resolve(k, params.alpha, params.c1, params.c2);
        let sub = ResolventSubproblem::new(oracle, &z, params.eta)?;
        if !config.warm_start {
            start.copy_from_slice(&z);
        }
        let (j, used) = averaged_resolvent(&sub, &start, n, m, k, config.seed, config.execution);
        calls += used;
        reservoir.offer(k, 1.0, &z);
        let a = km_weight(k, params.alpha, config.alpha_multiplier);
        let mut gap = 0.0;
        for (zi, ji) in z.iter_mut().zip(&j) {
            gap += (*zi - ji) * (*zi - ji);
            *zi = (1.0 - a) * *zi + a * ji;
        }
        if norm(&j).is_finite() {
            start.copy_from_slice(&j);
        }
        stop = rec.step(k + 1, &z, &z, calls, Some(gap.sqrt()));
        if stop.is_some() {
            break;
        }
    }
    let out = if norm(reservoir.point()).is_finite() {
        let sub = ResolventSubproblem::new(oracle, reservoir.point(), params.eta)?;
        calls += 2;
        output_step(&sub, step, config.seed)
    } else {
        reservoir.point().to_vec()
    };
    Ok(rec.finish(&z, &out, reservoir.index(), calls, stop))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::oracle::NoiseSpec;
    use crate::problems::{make_quadratic, make_rotation};
    use approx::assert_relative_eq;
    use nalgebra::dvector;
    use std::f64::consts::PI;
    use std::sync::Arc;

    fn rotation(theta: f64) -> Arc<crate::ProblemInstance> {
        Arc::new(make_rotation(1.0, theta).unwrap())
    }

    #[test]
    fn step_size_value() {
        // L = 0 is not allowed, so reach μ = 1, M = 1 through a tiny η
        let o = StochasticOracle::exact(rotation(PI / 2.0));
        let sub = ResolventSubproblem::new(&o, &[0.0, 0.0], 1e-300).unwrap();
        assert_relative_eq!(sub.step_size(0), 4.0 / 145.0, max_relative = 1e-12);
        let sub = ResolventSubproblem::new(&o, &[0.0, 0.0], 0.5).unwrap();
        assert_relative_eq!(sub.mu(), 0.5);
        assert_relative_eq!(sub.kappa(), 144.0 * 2.25 / 0.25);
        assert!(ResolventSubproblem::new(&o, &[0.0, 0.0], 1.0).is_err());
    }

    #[test]
    fn budget_values() {
        let b = budgets(0, 0.5, 1.0, 1.0);
        assert_relative_eq!(km_weight(0, 0.5, 1.0), 0.5 / (2f64.sqrt() * 3f64.ln()), max_relative = 1e-12);
        assert!((km_weight(0, 0.5, 1.0) - 0.32182).abs() < 1e-5);
        assert!((b.b_sq - 5.363e-3).abs() < 1e-6);
        assert_eq!(b.n, 373);
        assert_eq!(b.m, 14353);
        assert_eq!(b.v_sq, 1.0 / 60.0);
        for k in [10, 100, 1000] {
            assert!(budgets(k, 0.5, 1.0, 1.0).b_sq < V_SQ / 2.0);
            assert!(budgets(k, 0.5, 1.0, 1.0).n > budgets(k - 1, 0.5, 1.0, 1.0).n);
        }
        assert!((1..100).all(|k| km_weight(k, 0.5, 1.0) < km_weight(k - 1, 0.5, 1.0)));
    }

    #[test]
    fn inner_solver_keeps_exact_solution() {
        let o = StochasticOracle::exact(rotation(2.0 * PI / 3.0));
        let sub = ResolventSubproblem::new(&o, &[1.0, -0.5], 0.6).unwrap();
        let x = sub.exact_solution().unwrap();
        for t in [1, 7, 64] {
            assert!((inner_fbf(&sub, &x, t, 3).unwrap() - &x).norm() < 1e-13);
        }
    }

    #[test]
    fn inner_solver_converges_noise_free() {
        let o = StochasticOracle::exact(rotation(PI / 2.0));
        let sub = ResolventSubproblem::new(&o, &[1.0, 2.0], 0.5).unwrap();
        let xs = sub.exact_solution().unwrap();
        let x0 = Vector::zeros(2);
        let d0 = (&x0 - &xs).norm_squared();
        for t in [64, 256, 1024, 4096] {
            let err = (inner_fbf(&sub, &x0, t, 0).unwrap() - &xs).norm_squared();
            assert!(err <= sub.rate_bound(d0, t));
        }
    }

    #[test]
    fn estimator_truncation_and_coupling() {
        let o = StochasticOracle::new(rotation(PI / 2.0), NoiseSpec::Gaussian { scale: 0.1 }).unwrap();
        let sub = ResolventSubproblem::new(&o, &[1.0, 2.0], 0.5).unwrap();
        let y0 = inner_fbf(&sub, &dvector![1.0, 2.0], 1, 11).unwrap();
        for seed in 0..20 {
            let d = mlmc_estimate(&sub, 1, seed).unwrap();
            assert_eq!(d.calls, 2);
            if seed == 11 {
                assert_eq!(d.estimate, y0);
            }
        }
        // the draw is reproducible and uses a single trajectory for both levels
        for seed in 0..50 {
            let d = mlmc_estimate(&sub, 1 << 20, seed).unwrap();
            assert_eq!(d, mlmc_estimate(&sub, 1 << 20, seed).unwrap());
            let top = 1u64 << d.level;
            let ys = inner_fbf_trajectory(&sub, &dvector![1.0, 2.0], &[1, top / 2, top], seed).unwrap();
            let expected = &ys[0] + (&ys[2] - &ys[1]) * top as f64;
            assert!((&d.estimate - &expected).norm() <= 1e-9 * expected.norm().max(1.0));
            assert_eq!(d.calls, 2 * top);
        }
    }

    #[test]
    fn geometric_frequencies() {
        let n = 200_000u64;
        let mut counts = [0u64; 12];
        for s in 0..n {
            let l = geometric_level(s) as usize;
            assert!(l >= 1);
            if l < 12 {
                counts[l] += 1;
            }
        }
        for i in 1..=10 {
            let p = 0.5f64.powi(i as i32);
            let se = (p * (1.0 - p) / n as f64).sqrt();
            assert!((counts[i] as f64 / n as f64 - p).abs() < 3.0 * se + 1e-12, "level {i}");
        }
    }

    #[test]
    fn expected_cost_formula() {
        for n in [1u64, 2, 3, 16, 100, 256] {
            let direct: f64 = (1..64).map(|i| 0.5f64.powi(i) * mlmc_draw_cost(i as u32, n) as f64).sum();
            assert_relative_eq!(expected_mlmc_calls(n), direct, max_relative = 1e-12);
        }
    }

    #[test]
    fn regime_checks() {
        let boundary = StochasticOracle::exact(rotation(PI));
        assert!(matches!(KmConfig::default().resolve(&boundary), Err(SviError::Regime(_))));
        let o = StochasticOracle::exact(rotation(2.0 * PI / 3.0));
        let cfg = KmConfig::default().resolve(&o).unwrap();
        assert_relative_eq!(cfg.eta, 0.75);
        assert_relative_eq!(cfg.alpha, 1.0 - 0.5 / 0.75);
        let bad = KmConfig { eta: Some(0.4), ..KmConfig::default() };
        assert!(matches!(bad.resolve(&o), Err(SviError::Regime(_))));
        let q = StochasticOracle::exact(Arc::new(make_quadratic(1.0, 0.0).unwrap()));
        assert_relative_eq!(KmConfig::default().resolve(&q).unwrap().eta, 0.9);
    }

    #[test]
    fn origin_stays_put() {
        let o = StochasticOracle::exact(rotation(2.0 * PI / 3.0));
        let cfg = KmConfig {
            iterations: 5,
            eta: Some(0.95),
            budget: BudgetPolicy::Fixed { n: 64, m: 8 },
            ..Default::default()
        };
        let rec = km_run(&o, &Vector::zeros(2), &cfg).unwrap();
        assert!(rec.log.iter().all(|e| e.residual == 0.0 && e.norm_z == 0.0));
        assert_eq!(rec.output_point, vec![0.0, 0.0]);
    }

    #[test]
    fn output_extraction() {
        let o = StochasticOracle::exact(rotation(2.0 * PI / 3.0));
        let z = dvector![1.0, 0.5];
        let (k, out) = extract_output(&o, &[z.clone()], 0.9, 0.2, 4).unwrap();
        assert_eq!(k, 0);
        // B(z) = η G(z) at the anchor, so the half-point is z - step η G z
        let g = o.problem().eval(&z).unwrap();
        assert!((out - (&z - g * (0.2 * 0.9))).norm() < 1e-12);
        let zero = Vector::zeros(2);
        assert_eq!(extract_output(&o, &[zero.clone()], 0.9, 0.2, 1).unwrap().1, zero);
        assert!(extract_output(&o, &[], 0.9, 0.2, 1).is_err());
    }

    #[test]
    fn call_accounting_matches_draws() {
        let o = StochasticOracle::new(rotation(2.0 * PI / 3.0), NoiseSpec::Gaussian { scale: 0.01 }).unwrap();
        let cfg = KmConfig {
            iterations: 4,
            eta: Some(0.9),
            seed: 5,
            budget: BudgetPolicy::Fixed { n: 32, m: 20 },
            ..Default::default()
        };
        let rec = km_run(&o, &dvector![1.0, 0.0], &cfg).unwrap();
        let mut expected = 0;
        for k in 0..4u64 {
            for j in 0..20u64 {
                expected += mlmc_draw_cost(geometric_level(derive(5, &[role::MLMC_DRAW, k, j])), 32);
            }
        }
        assert_eq!(rec.log.last().unwrap().oracle_calls, expected);
        assert_eq!(rec.oracle_calls, expected + 2);
    }

    #[test]
    fn shared_trajectory_matches_individual_draws() {
        let o = StochasticOracle::exact(rotation(2.0 * PI / 3.0));
        let sub = ResolventSubproblem::new(&o, &[1.0, -0.5], 0.95).unwrap();
        let (n, m, k, seed) = (1 << 12, 3000u64, 2u64, 9u64);
        let draw_seed = |j: u64| derive(seed, &[role::MLMC_DRAW, k, j]);
        let (shared, calls) = averaged_resolvent(&sub, sub.anchor(), n, m, k, seed, Execution::Sequential);
        let mut mean = Vector::zeros(2);
        let mut direct_calls = 0;
        for j in 0..m {
            let d = mlmc_estimate(&sub, n, draw_seed(j)).unwrap();
            mean += d.estimate;
            direct_calls += d.calls;
        }
        mean /= m as f64;
        assert_eq!(calls, direct_calls);
        assert!((Vector::from_vec(shared) - &mean).norm() < 1e-9 * mean.norm());
    }

    #[test]
    fn sequential_and_parallel_agree() {
        let o = StochasticOracle::new(rotation(2.0 * PI / 3.0), NoiseSpec::Gaussian { scale: 0.1 }).unwrap();
        let mut cfg = KmConfig {
            iterations: 3,
            eta: Some(0.9),
            budget: BudgetPolicy::Fixed { n: 64, m: 9000 },
            ..Default::default()
        };
        let a = km_run(&o, &dvector![1.0, 0.0], &cfg).unwrap();
        cfg.execution = Execution::Sequential;
        let b = km_run(&o, &dvector![1.0, 0.0], &cfg).unwrap();
        assert_eq!(a.log, b.log);
    }
}
