//! Variance-reduced FBF with Halpern anchoring and a STORM operator estimate.

use log::warn;
use serde::{Deserialize, Serialize};

use crate::error::{check_dim, check_positive, Result, SviError};
use crate::oracle::{CountingOracle, StochasticOracle};
use crate::record::{config_digest, OutputReservoir, Recorder, RunLimits, RunRecord};
use crate::rng::{derive, role};
use crate::Vector;

const SQRT3: f64 = 1.732_050_807_568_877_2;

/// Step parameters of iteration `k`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepParams {
    pub beta: f64,
    pub alpha: f64,
    pub gamma: f64,
    pub tau: f64,
}

/// `(β_k, α_k, γ_k, τ_k) = (1/(k+3), 2/√(k+3), 1/(4L), τ̄/√(k+3))`, unclamped.
pub fn schedules(k: u64, tau_bar: f64, lipschitz: f64) -> StepParams {
    let s = ((k + 3) as f64).sqrt();
    StepParams { beta: 1.0 / (k + 3) as f64, alpha: 2.0 / s, gamma: 1.0 / (4.0 * lipschitz), tau: tau_bar / s }
}

/// Largest `ρ` covered for a given `τ̄`:
/// `min{(L/55)(83/(24L²) - 9τ̄/(√3L²)), 1/(12L), 1/(16L(1+τ̄)) - (2τ̄/(17√3L))(9B²/L² + 3)}`.
pub fn rho_max(lipschitz: f64, bound_b: f64, tau_bar: f64) -> f64 {
    let l = lipschitz;
    let l2 = l * l;
    let t1 = (l / 55.0) * (83.0 / (24.0 * l2) - 9.0 * tau_bar / (SQRT3 * l2));
    let t2 = 1.0 / (12.0 * l);
    let t3 = 1.0 / (16.0 * l * (1.0 + tau_bar))
        - (2.0 * tau_bar / (17.0 * SQRT3 * l)) * (9.0 * bound_b * bound_b / l2 + 3.0);
    t1.min(t2).min(t3)
}

/// `min{L²/(219B²), L²/(20B² + 7L²)}`.
pub fn tau_bar_cap(lipschitz: f64, bound_b: f64) -> f64 {
    let l2 = lipschitz * lipschitz;
    let b2 = bound_b * bound_b;
    let first = if b2 > 0.0 { l2 / (219.0 * b2) } else { f64::INFINITY };
    first.min(l2 / (20.0 * b2 + 7.0 * l2))
}

/// Weight sequence of the STORM estimator.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, Default)]
#[serde(tag = "form", rename_all = "snake_case")]
pub enum AlphaSchedule {
    /// `2/√(k+3)`.
    #[default]
    Theory,
    /// `α_0 / √(k/c + 1)`.
    Tuned { alpha0: f64, c: f64 },
}

impl AlphaSchedule {
    pub fn value(&self, k: u64, theory: f64) -> f64 {
        match *self {
            AlphaSchedule::Theory => theory,
            AlphaSchedule::Tuned { alpha0, c } => alpha0 / (k as f64 / c + 1.0).sqrt(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct VrHalpernConfig {
    /// `τ̄`; 0.9 times its cap when unset.
    pub tau_bar: Option<f64>,
    pub iterations: u64,
    /// `false` gives the `β_k ≡ 0` baseline.
    pub use_anchoring: bool,
    /// Constant `γ` replacing `1/(4L)`; switches off the regime checks.
    pub gamma_override: Option<f64>,
    pub alpha_schedule: AlphaSchedule,
    pub seed: u64,
    pub limits: RunLimits,
}

impl Default for VrHalpernConfig {
    fn default() -> Self {
        Self {
            tau_bar: None,
            iterations: 100,
            use_anchoring: true,
            gamma_override: None,
            alpha_schedule: AlphaSchedule::Theory,
            seed: 0,
            limits: RunLimits::default(),
        }
    }
}

impl VrHalpernConfig {
    /// Resolved `τ̄` after regime checks.
    pub fn resolve(&self, oracle: &StochasticOracle) -> Result<f64> {
        let p = oracle.problem();
        let (l, b) = (p.lipschitz(), oracle.bound_b());
        let cap = tau_bar_cap(l, b);
        let tau_bar = self.tau_bar.unwrap_or(0.9 * cap);
        check_positive("tau_bar", tau_bar)?;
        if let Some(g) = self.gamma_override {
            check_positive("gamma", g)?;
            warn!("sweep mode with gamma = {g}: regime checks skipped");
            return Ok(tau_bar);
        }
        if b > 0.0 && tau_bar > cap {
            return Err(SviError::Regime(format!("tau_bar = {tau_bar} exceeds its cap {cap}")));
        }
        let bound = rho_max(l, b, tau_bar);
        if p.rho() > bound {
            return Err(SviError::Regime(format!(
                "rho = {} exceeds the admissible {bound} for tau_bar = {tau_bar}",
                p.rho()
            )));
        }
        Ok(tau_bar)
    }

    pub fn params(&self, k: u64, tau_bar: f64, lipschitz: f64) -> StepParams {
        let s = schedules(k, tau_bar, lipschitz);
        StepParams {
            beta: if self.use_anchoring { s.beta } else { 0.0 },
            alpha: self.alpha_schedule.value(k, s.alpha).clamp(0.0, 1.0),
            gamma: self.gamma_override.unwrap_or(s.gamma),
            tau: s.tau,
        }
    }
}

/// `g_{k+1} = G̃(z_{k+1}, ξ) + (1 - α)(g_k - G̃(z_k, ξ))` with one shared `ξ`.
pub fn storm_update(
    oracle: &StochasticOracle,
    g: &Vector,
    z: &Vector,
    z_next: &Vector,
    alpha: f64,
    seed: u64,
) -> Result<Vector> {
    let (s_next, s_cur) = oracle.sample_pair(z_next, z, seed)?;
    check_dim(oracle.dim(), g.len())?;
    Ok(s_next + (g - s_cur) * (1.0 - alpha))
}

/// Iterate, operator estimate, counter and anchor.
#[derive(Debug, Clone, PartialEq)]
pub struct VrState {
    pub z: Vector,
    pub g: Vector,
    pub k: u64,
    pub z0: Vector,
}

impl VrState {
    /// Starts at `z0` with `g_0 = G̃(z0, ξ_0)`. Uses 1 oracle call.
    pub fn init(oracle: &mut CountingOracle<'_>, z0: &Vector, seed: u64) -> Result<Self> {
        check_dim(oracle.oracle().dim(), z0.len())?;
        let mut g = Vector::zeros(z0.len());
        oracle.sample_into(z0.as_slice(), derive(seed, &[role::INIT]), g.as_mut_slice());
        Ok(Self { z: z0.clone(), g, k: 0, z0: z0.clone() })
    }
}

/// Scratch space for [`step`].
#[derive(Debug, Clone)]
pub struct VrBuffers {
    pub bar: Vec<f64>,
    pub half: Vec<f64>,
    pub g_half: Vec<f64>,
    pub next: Vec<f64>,
    pub s_next: Vec<f64>,
    pub s_cur: Vec<f64>,
}

impl VrBuffers {
    pub fn new(dim: usize) -> Self {
        let v = vec![0.0; dim];
        Self { bar: v.clone(), half: v.clone(), g_half: v.clone(), next: v.clone(), s_next: v.clone(), s_cur: v }
    }
}

/// Advances the state by one iteration using 3 oracle calls. The half-point
/// is left in `buf.half`.
pub fn step(
    state: &mut VrState,
    oracle: &mut CountingOracle<'_>,
    params: StepParams,
    seed: u64,
    buf: &mut VrBuffers,
) -> Result<()> {
    let reg = oracle.oracle().problem().regularizer();
    let StepParams { beta, alpha, gamma, tau } = params;
    let k = state.k;
    let z = state.z.as_mut_slice();
    let g = state.g.as_mut_slice();
    let z0 = state.z0.as_slice();
    for i in 0..z.len() {
        buf.bar[i] = beta * z0[i] + (1.0 - beta) * z[i];
        buf.half[i] = buf.bar[i] - gamma * g[i];
    }
    reg.prox_in_place(gamma, &mut buf.half);
    oracle.sample_into(&buf.half, derive(seed, &[role::HALF_POINT, k]), &mut buf.g_half);
    for i in 0..z.len() {
        buf.next[i] = buf.bar[i] - tau * (buf.bar[i] - buf.half[i] - gamma * g[i] + gamma * buf.g_half[i]);
    }
    oracle.pair_into(&buf.next, z, derive(seed, &[role::STORM, k]), &mut buf.s_next, &mut buf.s_cur)?;
    for i in 0..z.len() {
        g[i] = buf.s_next[i] + (1.0 - alpha) * (g[i] - buf.s_cur[i]);
        z[i] = buf.next[i];
    }
    state.k += 1;
    Ok(())
}

/// Runs the method and returns `z_{k̂+1/2}` with `P(k̂ = k) ∝ τ_k (k+3)`.
///
/// Log row `k` carries the residual of `z_{k-1/2}` and the norm of `z_k`.
pub fn run(oracle: &StochasticOracle, z0: &Vector, config: &VrHalpernConfig) -> Result<RunRecord> {
    check_dim(oracle.dim(), z0.len())?;
    oracle.require_multi_point()?;
    if config.iterations == 0 {
        return Err(SviError::InvalidArgument("iterations must be at least 1".into()));
    }
    let tau_bar = config.resolve(oracle)?;
    let name = if config.use_anchoring { "vr_halpern" } else { "vr_halpern_no_anchor" };
    let digest = config_digest(name, &(config, tau_bar), oracle);
    let l = oracle.problem().lipschitz();
    let mut rec = Recorder::new(oracle, name, config.seed, digest, &config.limits, config.iterations, z0.as_slice());
    let mut counting = CountingOracle::new(oracle);
    let mut state = VrState::init(&mut counting, z0, config.seed)?;
    let mut buf = VrBuffers::new(z0.len());
    let mut reservoir = OutputReservoir::new(config.seed, z0.len());
    let mut stop = None;
    for k in 0..config.iterations {
        let params = config.params(k, tau_bar, l);
        step(&mut state, &mut counting, params, config.seed, &mut buf)?;
        reservoir.offer(k, params.tau * (k + 3) as f64, &buf.half);
        stop = rec.step(k + 1, &buf.half, state.z.as_slice(), counting.calls(), None);
        if stop.is_some() {
            break;
        }
    }
    Ok(rec.finish(state.z.as_slice(), reservoir.point(), reservoir.index(), counting.calls(), stop))
}

/// Output distribution `τ_k (k+3) / Σ_i τ_i (i+3)` over `k < K`.
pub fn output_weights(iterations: u64, tau_bar: f64) -> Vec<f64> {
    let w: Vec<f64> = (0..iterations).map(|k| tau_bar / ((k + 3) as f64).sqrt() * (k + 3) as f64).collect();
    let total: f64 = w.iter().sum();
    w.into_iter().map(|x| x / total).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fbf_minibatch;
    use crate::oracle::NoiseSpec;
    use crate::problems::{make_bilinear_box, make_quadratic};
    use crate::Execution;
    use approx::assert_relative_eq;
    use nalgebra::{dmatrix, dvector};
    use std::sync::Arc;

    fn quad(rho: f64) -> Arc<crate::ProblemInstance> {
        Arc::new(make_quadratic(1.0, rho).unwrap())
    }

    #[test]
    fn schedule_values() {
        let s = schedules(0, 0.1, 1.0);
        assert_relative_eq!(s.beta, 1.0 / 3.0, max_relative = 1e-15);
        assert_relative_eq!(s.alpha, 2.0 / 3f64.sqrt(), max_relative = 1e-15);
        assert_relative_eq!(s.gamma, 0.25);
        assert_relative_eq!(s.tau, 0.1 / 3f64.sqrt(), max_relative = 1e-15);
        assert!(s.alpha > 1.0);
        let cfg = VrHalpernConfig::default();
        assert_eq!(cfg.params(0, 0.1, 1.0).alpha, 1.0);
        let late = schedules(1_000_000, 0.1, 1.0);
        assert!(late.beta < 1e-5 && late.alpha < 3e-3 && late.tau < 1e-4 && late.gamma == 0.25);
    }

    #[test]
    fn rho_max_values() {
        assert!((rho_max(1.0, 0.0, 1e-12) - 1.0 / 16.0).abs() < 1e-10);
        assert!((rho_max(1.0, 0.0, 0.1) - 0.03644).abs() < 5e-5);
        let t1 = (1.0 / 55.0) * (83.0 / 24.0 - 0.9 / 3f64.sqrt());
        assert!((t1 - 0.05343).abs() < 5e-5);
        let cap = tau_bar_cap(1.0, 1.0);
        assert_relative_eq!(cap, 1.0 / 219.0);
        assert!(rho_max(1.0, 1.0, cap) > 0.0);
        let mut prev = f64::INFINITY;
        for i in 0..100 {
            let v = rho_max(1.0, 0.5, i as f64 * 0.01);
            assert!(v <= prev);
            prev = v;
        }
        assert_relative_eq!(tau_bar_cap(1.0, 0.0), 1.0 / 7.0);
    }

    #[test]
    fn regime_and_sweep_mode() {
        let o = StochasticOracle::exact(quad(0.1));
        let cfg = VrHalpernConfig::default();
        assert!(matches!(cfg.resolve(&o), Err(SviError::Regime(_))));
        let sweep = VrHalpernConfig { gamma_override: Some(0.25), ..cfg.clone() };
        assert!(sweep.resolve(&o).is_ok());
        let ok = StochasticOracle::exact(quad(0.02));
        assert_relative_eq!(cfg.resolve(&ok).unwrap(), 0.9 / 7.0);
        let m =
            StochasticOracle::new(quad(0.0), NoiseSpec::Multiplicative { b: 1.0, sigma: 0.0, anchor: None }).unwrap();
        let too_big = VrHalpernConfig { tau_bar: Some(0.1), ..cfg };
        assert!(matches!(too_big.resolve(&m), Err(SviError::Regime(_))));
    }

    #[test]
    fn storm_identities() {
        let o = StochasticOracle::new(quad(0.1), NoiseSpec::Gaussian { scale: 1.0 }).unwrap();
        let (z, zn, g) = (dvector![1.0, 2.0], dvector![0.5, -1.0], dvector![3.0, 3.0]);
        assert_eq!(storm_update(&o, &g, &z, &zn, 1.0, 7).unwrap(), o.sample(&zn, 7).unwrap());
        let same = storm_update(&o, &g, &z, &z, 0.3, 7).unwrap();
        let expected = o.sample(&z, 7).unwrap() * 0.3 + &g * 0.7;
        assert!((same - expected).norm() < 1e-12);
        let exact = StochasticOracle::exact(quad(0.1));
        let g0 = exact.problem().eval(&z).unwrap();
        let g1 = storm_update(&exact, &g0, &z, &zn, 0.4, 1).unwrap();
        assert!((g1 - exact.problem().eval(&zn).unwrap()).norm() < 1e-15);
        let single = StochasticOracle::exact(quad(0.1)).single_point();
        assert!(matches!(storm_update(&single, &g, &z, &zn, 0.5, 0), Err(SviError::Capability(_))));
    }

    #[test]
    fn storm_tracks_operator_without_noise() {
        let o = StochasticOracle::exact(quad(0.1));
        let cfg = VrHalpernConfig { gamma_override: Some(0.25), ..Default::default() };
        let mut counting = CountingOracle::new(&o);
        let mut state = VrState::init(&mut counting, &dvector![1.0, -2.0], 0).unwrap();
        let mut buf = VrBuffers::new(2);
        for k in 0..1000 {
            step(&mut state, &mut counting, cfg.params(k, 0.3, 1.0), 0, &mut buf).unwrap();
            let exact = o.problem().eval(&state.z).unwrap();
            assert!((&state.g - exact).norm() <= 1e-12 * state.z.norm().max(1.0));
        }
        assert_eq!(counting.calls(), 1 + 3 * 1000);
    }

    #[test]
    fn unanchored_unit_step_is_tseng() {
        let o = StochasticOracle::exact(quad(0.05));
        let z = dvector![0.7, -0.3];
        let mut counting = CountingOracle::new(&o);
        let mut state = VrState { z: z.clone(), g: o.problem().eval(&z).unwrap(), k: 4, z0: dvector![9.0, 9.0] };
        let mut buf = VrBuffers::new(2);
        let gamma = 0.3;
        step(&mut state, &mut counting, StepParams { beta: 0.0, alpha: 0.5, gamma, tau: 1.0 }, 0, &mut buf).unwrap();
        let (next, half) = fbf_minibatch::step(&o, &z, 0, gamma, 1, 0, Execution::Sequential).unwrap();
        assert!((Vector::from_column_slice(&buf.half) - half).norm() < 1e-15);
        assert!((state.z - next).norm() < 1e-15);
        assert_eq!(counting.calls(), 3);
    }

    #[test]
    fn fixed_point_is_preserved() {
        let p = Arc::new(make_bilinear_box(&dmatrix![1.0], 1.0).unwrap());
        let o = StochasticOracle::exact(p);
        let cfg = VrHalpernConfig { iterations: 20, ..Default::default() };
        let rec = run(&o, &Vector::zeros(2), &cfg).unwrap();
        assert_eq!(rec.final_point, vec![0.0, 0.0]);
        assert!(rec.log.iter().all(|e| e.residual == 0.0));
    }

    #[test]
    fn weights_and_accounting() {
        let w = output_weights(50, 0.2);
        assert!((w.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        assert_eq!(output_weights(1, 0.2), vec![1.0]);
        let o = StochasticOracle::new(quad(0.1), NoiseSpec::Gaussian { scale: 0.1 }).unwrap();
        let cfg = VrHalpernConfig { iterations: 1, gamma_override: Some(0.25), seed: 3, ..Default::default() };
        let rec = run(&o, &dvector![1.0, 1.0], &cfg).unwrap();
        assert_eq!(rec.output_index, 0);
        assert_eq!(rec.oracle_calls, 4);
        let cfg = VrHalpernConfig { iterations: 40, ..cfg };
        let a = run(&o, &dvector![1.0, 1.0], &cfg).unwrap();
        assert_eq!(a.oracle_calls, 1 + 3 * 40);
        let b = run(&o, &dvector![1.0, 1.0], &cfg).unwrap();
        assert_eq!(a.log, b.log);
        assert_eq!(a.output_point, b.output_point);
    }
}
