//! Named experiments.

use svi_core::baselines::EgConfig;
use svi_core::mlmc_km::{BudgetPolicy, KmConfig};
use svi_core::vr_halpern::VrHalpernConfig;
use svi_core::NoiseSpec;

use crate::spec::{default_seeds, AlgorithmSpec, Budget, ExperimentSpec, ProblemSpec, SpecError, Sweep, SweepParam};

pub const PRESET_NAMES: [&str; 6] = [
    "counterexample_residual",
    "counterexample_trajectory",
    "rho_boundary_sweep",
    "gamma_sweep_student_t",
    "gamma_sweep_laplace",
    "gamma_sweep_gaussian",
];

/// Ten log-spaced points from `1e-3` to `1`.
pub fn gamma_grid() -> Vec<f64> {
    (0..10).map(|i| 10f64.powf(-3.0 + 3.0 * i as f64 / 9.0)).collect()
}

pub fn preset(name: &str) -> Result<ExperimentSpec, SpecError> {
    match name {
        "counterexample_residual" => Ok(counterexample(name, false)),
        "counterexample_trajectory" => Ok(counterexample(name, true)),
        "rho_boundary_sweep" => Ok(rho_boundary_sweep()),
        "gamma_sweep_student_t" => Ok(gamma_sweep(name, NoiseSpec::StudentT { dof: 2.0, scale: 1.0 })),
        "gamma_sweep_laplace" => Ok(gamma_sweep(name, NoiseSpec::Laplace { scale: 1.0 })),
        "gamma_sweep_gaussian" => Ok(gamma_sweep(name, NoiseSpec::Gaussian { scale: 1.0 })),
        _ => Err(SpecError::UnknownPreset {
            name: name.to_string(),
            valid: PRESET_NAMES.iter().map(|s| s.to_string()).collect(),
        }),
    }
}

fn base(id: &str, problem: ProblemSpec, noise: NoiseSpec, algorithms: Vec<AlgorithmSpec>) -> ExperimentSpec {
    ExperimentSpec {
        experiment_id: id.to_string(),
        problem,
        noise,
        algorithms,
        seeds: default_seeds(),
        sweep: None,
        budget: Budget::default(),
        initial_point: vec![1.0, 0.0],
        log_every: 1,
        record_points: false,
        output: None,
    }
}

/// Rotation with `L = 1`, `θ = 2π/3` (`ρ = 1/2`): deterministic EG with
/// `γ = 1/L` against noise-free MLMC-KM with `η = 0.95`.
fn counterexample(id: &str, trajectory: bool) -> ExperimentSpec {
    let eg = EgConfig { gamma: Some(1.0), iterations: 200, ..Default::default() };
    let km = KmConfig {
        eta: Some(0.95),
        alpha_multiplier: 3.0,
        iterations: 300,
        budget: BudgetPolicy::Fixed { n: 16_384, m: 10_000 },
        ..Default::default()
    };
    let problem = ProblemSpec::Rotation { lipschitz: 1.0, theta: Some(2.0 * std::f64::consts::PI / 3.0), rho: None };
    let mut s = base(id, problem, NoiseSpec::None, vec![AlgorithmSpec::Eg(eg), AlgorithmSpec::MlmcKm(km)]);
    if trajectory {
        s.seeds = vec![0];
        s.record_points = true;
    }
    s
}

/// MLMC-KM on rotations with `ρ ∈ {0.2, 0.5, 0.8, 0.95, 1}/L`; the last cell
/// has no admissible `η` and is recorded as rejected.
fn rho_boundary_sweep() -> ExperimentSpec {
    let km = KmConfig {
        alpha_multiplier: 2.0,
        iterations: 300,
        budget: BudgetPolicy::Fixed { n: 1 << 20, m: 200_000 },
        ..Default::default()
    };
    let problem = ProblemSpec::Rotation { lipschitz: 1.0, theta: None, rho: Some(0.5) };
    let mut s = base("rho_boundary_sweep", problem, NoiseSpec::None, vec![AlgorithmSpec::MlmcKm(km)]);
    s.sweep = Some(Sweep { param: SweepParam::Rho, values: vec![0.2, 0.5, 0.8, 0.95, 1.0] });
    s
}

/// Quadratic with `L = 1`, `ρ = 0.1`: VR-Halpern with and without anchoring
/// over a constant-`γ` grid.
fn gamma_sweep(id: &str, noise: NoiseSpec) -> ExperimentSpec {
    let anchored = VrHalpernConfig { iterations: 2000, ..Default::default() };
    let plain = VrHalpernConfig { use_anchoring: false, ..anchored.clone() };
    let problem = ProblemSpec::Quadratic { lipschitz: 1.0, rho: 0.1 };
    let mut s = base(id, problem, noise, vec![AlgorithmSpec::VrHalpern(anchored), AlgorithmSpec::VrHalpern(plain)]);
    s.sweep = Some(Sweep { param: SweepParam::Gamma, values: gamma_grid() });
    s
}
