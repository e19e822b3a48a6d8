//! Experiment descriptions and their validation.

use std::path::PathBuf;
use std::sync::Arc;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};
use svi_core::baselines::EgConfig;
use svi_core::fbf_minibatch::MinibatchFbfConfig;
use svi_core::mlmc_km::KmConfig;
use svi_core::problems::{make_bilinear_box, make_quadratic, make_rotation};
use svi_core::vr_halpern::VrHalpernConfig;
use svi_core::{NoiseSpec, ProblemInstance};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum SpecError {
    #[error("invalid experiment spec: {}", .0.join("; "))]
    Invalid(Vec<String>),
    #[error("unknown preset {name:?}; valid names: {}", .valid.join(", "))]
    UnknownPreset { name: String, valid: Vec<String> },
    #[error(transparent)]
    Core(#[from] svi_core::SviError),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum ProblemSpec {
    /// Planar rotation scaled by `L`. Give either `theta` or `rho`, where
    /// `theta = acos(-ρL)`.
    Rotation {
        lipschitz: f64,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        theta: Option<f64>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        rho: Option<f64>,
    },
    Quadratic {
        lipschitz: f64,
        rho: f64,
    },
    /// `coupling` is a square matrix given row by row.
    BilinearBox {
        coupling: Vec<Vec<f64>>,
        halfwidth: f64,
    },
}

impl ProblemSpec {
    pub fn build(&self) -> Result<ProblemInstance, SpecError> {
        Ok(match self {
            ProblemSpec::Rotation { lipschitz, theta, rho } => {
                let theta = match (theta, rho) {
                    (Some(t), None) => *t,
                    (None, Some(r)) => rotation_theta(*lipschitz, *r),
                    _ => return Err(SpecError::Invalid(vec!["problem: give exactly one of theta, rho".into()])),
                };
                make_rotation(*lipschitz, theta)?
            }
            ProblemSpec::Quadratic { lipschitz, rho } => make_quadratic(*lipschitz, *rho)?,
            ProblemSpec::BilinearBox { coupling, halfwidth } => {
                let p = coupling.len();
                if p == 0 || coupling.iter().any(|r| r.len() != p) {
                    return Err(SpecError::Invalid(vec!["problem.coupling: must be a non-empty square matrix".into()]));
                }
                let m = DMatrix::from_fn(p, p, |i, j| coupling[i][j]);
                make_bilinear_box(&m, *halfwidth)?
            }
        })
    }

    fn validate(&self, errs: &mut Vec<String>) {
        match self {
            ProblemSpec::Rotation { lipschitz, theta, rho } => {
                positive(errs, "problem.lipschitz", *lipschitz);
                match (theta, rho) {
                    (Some(t), None) if !(*t > 0.0 && *t <= std::f64::consts::PI) => {
                        errs.push(format!("problem.theta: must lie in (0, pi], got {t}"))
                    }
                    (None, Some(r)) if !(r.abs() * lipschitz <= 1.0) => {
                        errs.push(format!("problem.rho: |rho L| must be at most 1, got {r}"))
                    }
                    (Some(_), Some(_)) | (None, None) => errs.push("problem: give exactly one of theta, rho".into()),
                    _ => {}
                }
            }
            ProblemSpec::Quadratic { lipschitz, rho } => {
                positive(errs, "problem.lipschitz", *lipschitz);
                if !(*rho >= 0.0 && *rho * lipschitz < 1.0) {
                    errs.push(format!("problem.rho: must satisfy 0 <= rho < 1/L, got {rho}"));
                }
            }
            ProblemSpec::BilinearBox { coupling, halfwidth } => {
                let p = coupling.len();
                if p == 0 || coupling.iter().any(|r| r.len() != p) {
                    errs.push("problem.coupling: must be a non-empty square matrix".into());
                }
                positive(errs, "problem.halfwidth", *halfwidth);
            }
        }
    }

    fn dim(&self) -> usize {
        match self {
            ProblemSpec::BilinearBox { coupling, .. } => 2 * coupling.len(),
            _ => 2,
        }
    }
}

/// Rotation angle with weak Minty constant `rho` for scale `L`.
pub fn rotation_theta(lipschitz: f64, rho: f64) -> f64 {
    (-rho * lipschitz).clamp(-1.0, 1.0).acos()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum AlgorithmSpec {
    Eg(EgConfig),
    FbfMinibatch(MinibatchFbfConfig),
    MlmcKm(KmConfig),
    VrHalpern(VrHalpernConfig),
}

impl AlgorithmSpec {
    /// Name written to the output files.
    pub fn name(&self) -> &'static str {
        match self {
            AlgorithmSpec::Eg(c) if c.stochastic => "eg_stochastic",
            AlgorithmSpec::Eg(_) => "eg",
            AlgorithmSpec::FbfMinibatch(_) => "fbf_minibatch",
            AlgorithmSpec::MlmcKm(_) => "mlmc_km",
            AlgorithmSpec::VrHalpern(c) if c.use_anchoring => "vr_halpern",
            AlgorithmSpec::VrHalpern(_) => "vr_halpern_no_anchor",
        }
    }

    pub fn iterations(&self) -> u64 {
        match self {
            AlgorithmSpec::Eg(c) => c.iterations,
            AlgorithmSpec::FbfMinibatch(c) => c.iterations,
            AlgorithmSpec::MlmcKm(c) => c.iterations,
            AlgorithmSpec::VrHalpern(c) => c.iterations,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SweepParam {
    /// Step size of every algorithm: EG `γ`, VR-Halpern `γ` (sweep mode),
    /// mini-batch FBF `η`, MLMC-KM `η`.
    Gamma,
    /// Weak Minty constant of the rotation or quadratic problem.
    Rho,
    /// Rotation angle.
    Theta,
    /// Scale of the additive noise, or `σ` of the multiplicative model.
    NoiseScale,
    /// Iteration count `K`.
    Iterations,
}

impl SweepParam {
    pub fn as_str(self) -> &'static str {
        match self {
            SweepParam::Gamma => "gamma",
            SweepParam::Rho => "rho",
            SweepParam::Theta => "theta",
            SweepParam::NoiseScale => "noise_scale",
            SweepParam::Iterations => "iterations",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Sweep {
    pub param: SweepParam,
    pub values: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Budget {
    /// Overrides the iteration count of every algorithm.
    pub max_iterations: Option<u64>,
    pub max_oracle_calls: Option<u64>,
    pub divergence_threshold: f64,
}

impl Default for Budget {
    fn default() -> Self {
        Self { max_iterations: None, max_oracle_calls: None, divergence_threshold: 1e12 }
    }
}

pub fn default_seeds() -> Vec<u64> {
    (0..7).collect()
}

fn default_initial_point() -> Vec<f64> {
    vec![1.0, 0.0]
}

fn default_log_every() -> u64 {
    1
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentSpec {
    pub experiment_id: String,
    pub problem: ProblemSpec,
    #[serde(default)]
    pub noise: NoiseSpec,
    pub algorithms: Vec<AlgorithmSpec>,
    #[serde(default = "default_seeds")]
    pub seeds: Vec<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sweep: Option<Sweep>,
    #[serde(default)]
    pub budget: Budget,
    #[serde(default = "default_initial_point")]
    pub initial_point: Vec<f64>,
    #[serde(default = "default_log_every")]
    pub log_every: u64,
    /// Write every iterate to `points.csv`.
    #[serde(default)]
    pub record_points: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub output: Option<PathBuf>,
}

impl ExperimentSpec {
    pub fn from_json(text: &str) -> Result<Self, SpecError> {
        serde_json::from_str(text).map_err(|e| SpecError::Invalid(vec![format!("parse: {e}")]))
    }

    /// Checks every field and reports all violations at once.
    pub fn validate(&self) -> Result<(), SpecError> {
        let mut errs = Vec::new();
        if self.experiment_id.trim().is_empty() {
            errs.push("experiment_id: must be non-empty".into());
        }
        if self.experiment_id.contains(['/', '\\']) {
            errs.push("experiment_id: must not contain path separators".into());
        }
        self.problem.validate(&mut errs);
        validate_noise(&self.noise, &mut errs);
        if self.algorithms.is_empty() {
            errs.push("algorithms: must be non-empty".into());
        }
        for (i, a) in self.algorithms.iter().enumerate() {
            if a.iterations() == 0 && self.budget.max_iterations.is_none() {
                errs.push(format!("algorithms[{i}].iterations: must be at least 1"));
            }
        }
        if self.seeds.is_empty() {
            errs.push("seeds: must be non-empty".into());
        }
        if let Some(s) = &self.sweep {
            if s.values.is_empty() {
                errs.push("sweep.values: must be non-empty when a sweep is present".into());
            }
            if s.values.iter().any(|v| !v.is_finite()) {
                errs.push("sweep.values: must be finite".into());
            }
            match s.param {
                SweepParam::Gamma | SweepParam::NoiseScale if s.values.iter().any(|v| *v <= 0.0) => {
                    errs.push(format!("sweep.values: {} values must be positive", s.param.as_str()))
                }
                SweepParam::Iterations if s.values.iter().any(|v| *v < 1.0 || v.fract() != 0.0) => {
                    errs.push("sweep.values: iterations must be positive integers".into())
                }
                SweepParam::Rho | SweepParam::Theta if matches!(self.problem, ProblemSpec::BilinearBox { .. }) => {
                    errs.push(format!("sweep.param: {} does not apply to bilinear_box", s.param.as_str()))
                }
                SweepParam::Theta if matches!(self.problem, ProblemSpec::Quadratic { .. }) => {
                    errs.push("sweep.param: theta does not apply to quadratic".into())
                }
                SweepParam::NoiseScale if matches!(self.noise, NoiseSpec::None) => {
                    errs.push("sweep.param: noise_scale needs a noise model".into())
                }
                _ => {}
            }
        }
        if self.budget.max_iterations == Some(0) {
            errs.push("budget.max_iterations: must be at least 1".into());
        }
        if self.budget.max_oracle_calls == Some(0) {
            errs.push("budget.max_oracle_calls: must be at least 1".into());
        }
        positive(&mut errs, "budget.divergence_threshold", self.budget.divergence_threshold);
        if self.initial_point.len() != self.problem.dim() {
            errs.push(format!(
                "initial_point: dimension {} does not match the problem dimension {}",
                self.initial_point.len(),
                self.problem.dim()
            ));
        }
        if self.initial_point.iter().any(|v| !v.is_finite()) {
            errs.push("initial_point: must be finite".into());
        }
        if self.log_every == 0 {
            errs.push("log_every: must be at least 1".into());
        }
        if errs.is_empty() {
            Ok(())
        } else {
            Err(SpecError::Invalid(errs))
        }
    }

    /// Sweep values, or a single `NaN` placeholder without a sweep.
    pub fn sweep_values(&self) -> Vec<f64> {
        match &self.sweep {
            Some(s) => s.values.clone(),
            None => vec![f64::NAN],
        }
    }

    pub fn sweep_param_name(&self) -> &'static str {
        self.sweep.as_ref().map_or("", |s| s.param.as_str())
    }

    /// Problem and noise for one sweep value.
    pub fn cell_oracle_parts(&self, value: f64) -> (ProblemSpec, NoiseSpec) {
        let mut problem = self.problem.clone();
        let mut noise = self.noise.clone();
        let Some(s) = &self.sweep else { return (problem, noise) };
        match (s.param, &mut problem) {
            (SweepParam::Rho, ProblemSpec::Rotation { theta, rho, .. }) => {
                *theta = None;
                *rho = Some(value);
            }
            (SweepParam::Rho, ProblemSpec::Quadratic { rho, .. }) => *rho = value,
            (SweepParam::Theta, ProblemSpec::Rotation { theta, rho, .. }) => {
                *theta = Some(value);
                *rho = None;
            }
            _ => {}
        }
        if s.param == SweepParam::NoiseScale {
            match &mut noise {
                NoiseSpec::Gaussian { scale } | NoiseSpec::StudentT { scale, .. } | NoiseSpec::Laplace { scale } => {
                    *scale = value
                }
                NoiseSpec::Multiplicative { sigma, .. } => *sigma = value,
                NoiseSpec::None => {}
            }
        }
        (problem, noise)
    }

    /// Algorithm configuration for one cell.
    pub fn cell_algorithm(&self, algorithm: &AlgorithmSpec, value: f64, seed: u64) -> AlgorithmSpec {
        let mut a = algorithm.clone();
        let sweep = self.sweep.as_ref().map(|s| s.param);
        let iterations = match sweep {
            Some(SweepParam::Iterations) => Some(value as u64),
            _ => self.budget.max_iterations,
        };
        let gamma = (sweep == Some(SweepParam::Gamma)).then_some(value);
        let apply = |limits: &mut svi_core::RunLimits| {
            limits.max_oracle_calls = self.budget.max_oracle_calls;
            limits.divergence_threshold = self.budget.divergence_threshold;
            limits.log_every = self.log_every;
            limits.record_points = self.record_points;
        };
        match &mut a {
            AlgorithmSpec::Eg(c) => {
                c.seed = seed;
                c.iterations = iterations.unwrap_or(c.iterations);
                c.gamma = gamma.or(c.gamma);
                apply(&mut c.limits);
            }
            AlgorithmSpec::FbfMinibatch(c) => {
                c.seed = seed;
                c.iterations = iterations.unwrap_or(c.iterations);
                c.eta = gamma.or(c.eta);
                apply(&mut c.limits);
            }
            AlgorithmSpec::MlmcKm(c) => {
                c.seed = seed;
                c.iterations = iterations.unwrap_or(c.iterations);
                c.eta = gamma.or(c.eta);
                apply(&mut c.limits);
            }
            AlgorithmSpec::VrHalpern(c) => {
                c.seed = seed;
                c.iterations = iterations.unwrap_or(c.iterations);
                c.gamma_override = gamma.or(c.gamma_override);
                apply(&mut c.limits);
            }
        }
        a
    }
}

pub(crate) fn build_problem(spec: &ProblemSpec) -> Result<Arc<ProblemInstance>, SpecError> {
    spec.build().map(Arc::new)
}

fn validate_noise(noise: &NoiseSpec, errs: &mut Vec<String>) {
    match noise {
        NoiseSpec::None => {}
        NoiseSpec::Gaussian { scale } | NoiseSpec::Laplace { scale } => nonneg(errs, "noise.scale", *scale),
        NoiseSpec::StudentT { dof, scale } => {
            positive(errs, "noise.dof", *dof);
            nonneg(errs, "noise.scale", *scale);
        }
        NoiseSpec::Multiplicative { b, sigma, .. } => {
            nonneg(errs, "noise.b", *b);
            nonneg(errs, "noise.sigma", *sigma);
        }
    }
}

fn positive(errs: &mut Vec<String>, field: &str, v: f64) {
    if !(v.is_finite() && v > 0.0) {
        errs.push(format!("{field}: must be positive and finite, got {v}"));
    }
}

fn nonneg(errs: &mut Vec<String>, field: &str, v: f64) {
    if !(v.is_finite() && v >= 0.0) {
        errs.push(format!("{field}: must be nonnegative and finite, got {v}"));
    }
}
