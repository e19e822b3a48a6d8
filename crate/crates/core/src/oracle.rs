//! Stochastic oracles `G̃(z, ξ)` with seed-addressable realizations.

use std::sync::Arc;

use rand::distr::Open01;
use rand::Rng;
use rand_distr::{StandardNormal, StudentT};
use serde::{Deserialize, Serialize};

use crate::error::{check_dim, check_nonnegative, check_positive, Result, SviError};
use crate::exec::{chunked_sum, Execution};
use crate::problem::ProblemInstance;
use crate::rng::{draw_rng, SeedStream};
use crate::Vector;

/// Noise model attached to a deterministic problem.
///
/// Additive models (`gaussian`, `student_t`, `laplace`) draw i.i.d.
/// per-component noise with the given `scale`. The multiplicative model draws
/// `B η (z - z0) + ζ` with a scalar standard normal `η` and isotropic `ζ`
/// with `E||ζ||² = σ²`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(tag = "model", rename_all = "snake_case")]
pub enum NoiseSpec {
    #[default]
    None,
    Gaussian {
        scale: f64,
    },
    StudentT {
        #[serde(default = "default_dof")]
        dof: f64,
        scale: f64,
    },
    Laplace {
        scale: f64,
    },
    Multiplicative {
        b: f64,
        sigma: f64,
        #[serde(default)]
        anchor: Option<Vec<f64>>,
    },
}

fn default_dof() -> f64 {
    2.0
}

impl NoiseSpec {
    pub fn name(&self) -> &'static str {
        match self {
            NoiseSpec::None => "none",
            NoiseSpec::Gaussian { .. } => "gaussian",
            NoiseSpec::StudentT { .. } => "student_t",
            NoiseSpec::Laplace { .. } => "laplace",
            NoiseSpec::Multiplicative { .. } => "multiplicative",
        }
    }
}

#[derive(Debug, Clone)]
enum Draw {
    None,
    Gaussian { std: f64 },
    StudentT { dist: StudentT<f64>, scale: f64 },
    Laplace { scale: f64 },
    Multiplicative { b: f64, component_std: f64 },
}

/// Unbiased oracle for `G` with declared variance constants
/// `E||G̃(z) - G(z)||² <= B²||z - z0||² + σ²`.
#[derive(Debug, Clone)]
pub struct StochasticOracle {
    problem: Arc<ProblemInstance>,
    spec: NoiseSpec,
    draw: Draw,
    sigma: f64,
    bound_b: f64,
    anchor: Vector,
    expected_lipschitz: Option<f64>,
    multi_point: bool,
    variance_certified: bool,
}

impl StochasticOracle {
    pub fn new(problem: Arc<ProblemInstance>, spec: NoiseSpec) -> Result<Self> {
        let m = problem.dim();
        let l2 = problem.lipschitz().powi(2);
        let mut anchor = Vector::zeros(m);
        let (draw, sigma, bound_b, variance_certified, lexp) = match &spec {
            NoiseSpec::None => (Draw::None, 0.0, 0.0, true, l2),
            NoiseSpec::Gaussian { scale } => {
                check_nonnegative("gaussian scale", *scale)?;
                let draw = if *scale == 0.0 { Draw::None } else { Draw::Gaussian { std: *scale } };
                (draw, scale * (m as f64).sqrt(), 0.0, true, l2)
            }
            NoiseSpec::StudentT { dof, scale } => {
                check_positive("student_t degrees of freedom", *dof)?;
                check_nonnegative("student_t scale", *scale)?;
                let dist = StudentT::new(*dof).map_err(|e| SviError::InvalidArgument(format!("student_t: {e}")))?;
                let certified = *dof > 2.0 || *scale == 0.0;
                let sigma = if *scale == 0.0 {
                    0.0
                } else if *dof > 2.0 {
                    scale * (m as f64 * dof / (dof - 2.0)).sqrt()
                } else {
                    f64::INFINITY
                };
                (Draw::StudentT { dist, scale: *scale }, sigma, 0.0, certified, l2)
            }
            NoiseSpec::Laplace { scale } => {
                check_nonnegative("laplace scale", *scale)?;
                let draw = if *scale == 0.0 { Draw::None } else { Draw::Laplace { scale: *scale } };
                (draw, scale * (2.0 * m as f64).sqrt(), 0.0, true, l2)
            }
            NoiseSpec::Multiplicative { b, sigma, anchor: z0 } => {
                check_nonnegative("multiplicative B", *b)?;
                check_nonnegative("multiplicative sigma", *sigma)?;
                if let Some(z0) = z0 {
                    check_dim(m, z0.len())?;
                    anchor = Vector::from_column_slice(z0);
                }
                let draw = Draw::Multiplicative { b: *b, component_std: sigma / (m as f64).sqrt() };
                (draw, *sigma, *b, true, l2 + b * b)
            }
        };
        Ok(Self {
            problem,
            spec,
            draw,
            sigma,
            bound_b,
            anchor,
            expected_lipschitz: Some(lexp),
            multi_point: true,
            variance_certified,
        })
    }

    /// Noise-free oracle returning `G(z)`.
    pub fn exact(problem: Arc<ProblemInstance>) -> Self {
        Self::new(problem, NoiseSpec::None).expect("noise-free oracle is always valid")
    }

    /// Marks the oracle as unable to evaluate two points with one realization.
    pub fn single_point(mut self) -> Self {
        self.multi_point = false;
        self.expected_lipschitz = None;
        self
    }

    pub fn problem(&self) -> &Arc<ProblemInstance> {
        &self.problem
    }

    pub fn spec(&self) -> &NoiseSpec {
        &self.spec
    }

    pub fn dim(&self) -> usize {
        self.problem.dim()
    }

    /// Additive constant σ of the variance bound (`inf` for heavy tails).
    pub fn sigma(&self) -> f64 {
        self.sigma
    }

    /// State-dependent constant B of the variance bound.
    pub fn bound_b(&self) -> f64 {
        self.bound_b
    }

    pub fn anchor(&self) -> &Vector {
        &self.anchor
    }

    /// `L_exp` with `E||G̃(x,ξ) - G̃(y,ξ)||² <= L_exp ||x - y||²`.
    pub fn expected_lipschitz(&self) -> Option<f64> {
        self.expected_lipschitz
    }

    pub fn supports_multi_point(&self) -> bool {
        self.multi_point
    }

    pub fn variance_certified(&self) -> bool {
        self.variance_certified
    }

    pub fn is_noiseless(&self) -> bool {
        match self.draw {
            Draw::None => true,
            Draw::Multiplicative { b, component_std } => b == 0.0 && component_std == 0.0,
            Draw::StudentT { scale, .. } => scale == 0.0,
            _ => false,
        }
    }

    /// Adds one noise realization, addressed by `seed`, at point `z`.
    #[inline]
    pub fn add_noise(&self, z: &[f64], seed: u64, acc: &mut [f64]) {
        match &self.draw {
            Draw::None => {}
            Draw::Gaussian { std } => {
                let mut rng = draw_rng(seed);
                for a in acc.iter_mut() {
                    let n: f64 = rng.sample(StandardNormal);
                    *a += std * n;
                }
            }
            Draw::StudentT { dist, scale } => {
                let mut rng = draw_rng(seed);
                for a in acc.iter_mut() {
                    *a += scale * rng.sample(dist);
                }
            }
            Draw::Laplace { scale } => {
                let mut rng = draw_rng(seed);
                for a in acc.iter_mut() {
                    let u: f64 = rng.sample::<f64, _>(Open01) - 0.5;
                    *a += -scale * u.signum() * (-2.0 * u.abs()).ln_1p();
                }
            }
            Draw::Multiplicative { b, component_std } => {
                let mut rng = draw_rng(seed);
                let eta: f64 = rng.sample(StandardNormal);
                for (i, a) in acc.iter_mut().enumerate() {
                    let zeta: f64 = rng.sample(StandardNormal);
                    *a += b * eta * (z[i] - self.anchor[i]) + component_std * zeta;
                }
            }
        }
    }

    /// Writes `G̃(z, ξ_seed)` into `out`.
    #[inline]
    pub fn sample_into(&self, z: &[f64], seed: u64, out: &mut [f64]) {
        self.problem.eval_into(z, out);
        self.add_noise(z, seed, out);
    }

    /// `G̃(z, ξ_seed)`; a pure function of `(z, seed)`.
    pub fn sample(&self, z: &Vector, seed: u64) -> Result<Vector> {
        check_dim(self.dim(), z.len())?;
        let mut out = Vector::zeros(self.dim());
        self.sample_into(z.as_slice(), seed, out.as_mut_slice());
        Ok(out)
    }

    /// `(G̃(z1, ξ), G̃(z2, ξ))` with one shared realization.
    pub fn sample_pair(&self, z1: &Vector, z2: &Vector, seed: u64) -> Result<(Vector, Vector)> {
        self.require_multi_point()?;
        Ok((self.sample(z1, seed)?, self.sample(z2, seed)?))
    }

    pub(crate) fn require_multi_point(&self) -> Result<()> {
        if self.multi_point {
            Ok(())
        } else {
            Err(SviError::Capability("oracle does not support shared-seed multi-point evaluation".into()))
        }
    }

    /// Mean of `batch` samples at `z` using the next `batch` seeds of `stream`.
    pub fn minibatch(&self, z: &Vector, batch: u64, stream: &mut SeedStream, exec: Execution) -> Result<Vector> {
        check_dim(self.dim(), z.len())?;
        if batch == 0 {
            return Err(SviError::InvalidArgument("mini-batch size must be at least 1".into()));
        }
        let mut out = Vector::zeros(self.dim());
        self.minibatch_into(z.as_slice(), batch, stream, exec, out.as_mut_slice());
        Ok(out)
    }

    /// Unchecked mini-batch mean. `G` is deterministic, so the mean of the
    /// samples is `G(z)` plus the mean of the noise realizations.
    pub fn minibatch_into(&self, z: &[f64], batch: u64, stream: &mut SeedStream, exec: Execution, out: &mut [f64]) {
        let start = stream.reserve(batch);
        self.problem.eval_into(z, out);
        if self.is_noiseless() {
            return;
        }
        let stream = &*stream;
        let noise = chunked_sum(exec, batch as usize, z.len(), |i, acc| {
            self.add_noise(z, stream.seed_at(start + i as u64), acc)
        });
        let inv = 1.0 / batch as f64;
        for (o, n) in out.iter_mut().zip(noise) {
            *o += n * inv;
        }
    }
}

/// Borrowed oracle that counts every evaluation of `G̃`.
#[derive(Debug)]
pub struct CountingOracle<'a> {
    oracle: &'a StochasticOracle,
    calls: u64,
}

impl<'a> CountingOracle<'a> {
    pub fn new(oracle: &'a StochasticOracle) -> Self {
        Self { oracle, calls: 0 }
    }

    pub fn oracle(&self) -> &'a StochasticOracle {
        self.oracle
    }

    pub fn calls(&self) -> u64 {
        self.calls
    }

    #[inline]
    pub fn sample_into(&mut self, z: &[f64], seed: u64, out: &mut [f64]) {
        self.calls += 1;
        self.oracle.sample_into(z, seed, out);
    }

    /// Exact `G(z)`, counted as one call.
    #[inline]
    pub fn exact_into(&mut self, z: &[f64], out: &mut [f64]) {
        self.calls += 1;
        self.oracle.problem().eval_into(z, out);
    }

    pub fn pair_into(&mut self, z1: &[f64], z2: &[f64], seed: u64, out1: &mut [f64], out2: &mut [f64]) -> Result<()> {
        self.oracle.require_multi_point()?;
        self.calls += 2;
        self.oracle.sample_into(z1, seed, out1);
        self.oracle.sample_into(z2, seed, out2);
        Ok(())
    }

    pub fn minibatch_into(&mut self, z: &[f64], batch: u64, stream: &mut SeedStream, exec: Execution, out: &mut [f64]) {
        self.calls += batch;
        self.oracle.minibatch_into(z, batch, stream, exec, out);
    }
}
