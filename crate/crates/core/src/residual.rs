//! Residuals of approximate solutions.

use crate::error::{check_dim, check_positive, Result, SviError};
use crate::problem::ProblemInstance;
use crate::Vector;

/// Residual of `z`: `||G(z)||` when `r ≡ 0`, otherwise the natural residual
/// `||z - prox_{γr}(z - γ G(z))|| / γ`.
pub fn residual(problem: &ProblemInstance, z: &Vector, gamma: f64) -> Result<f64> {
    check_dim(problem.dim(), z.len())?;
    check_positive("residual gamma", gamma)?;
    Ok(ResidualProbe::new(problem, gamma).eval(z.as_slice()))
}

/// Reusable residual evaluator for hot loops.
#[derive(Debug)]
pub struct ResidualProbe<'a> {
    problem: &'a ProblemInstance,
    gamma: f64,
    g: Vec<f64>,
    p: Vec<f64>,
}

impl<'a> ResidualProbe<'a> {
    pub fn new(problem: &'a ProblemInstance, gamma: f64) -> Self {
        let m = problem.dim();
        Self { problem, gamma, g: vec![0.0; m], p: vec![0.0; m] }
    }

    pub fn gamma(&self) -> f64 {
        self.gamma
    }

    pub fn eval(&mut self, z: &[f64]) -> f64 {
        self.problem.eval_into(z, &mut self.g);
        let reg = self.problem.regularizer();
        if reg.is_zero() {
            return norm(&self.g);
        }
        let gamma = self.gamma;
        for ((p, &zi), &gi) in self.p.iter_mut().zip(z).zip(&self.g) {
            *p = zi - gamma * gi;
        }
        reg.prox_in_place(gamma, &mut self.p);
        let mut s = 0.0;
        for (&zi, &pi) in z.iter().zip(&self.p) {
            s += (zi - pi) * (zi - pi);
        }
        s.sqrt() / gamma
    }
}

/// Norm of the explicit element `(z_base - z_half)/γ - g_used + G(z_half)` of
/// `(G + ∂r)(z_half)`, valid when `z_half = prox_{γr}(z_base - γ g_used)`.
pub fn fbf_certificate(
    problem: &ProblemInstance,
    z_base: &Vector,
    z_half: &Vector,
    gamma: f64,
    g_used: &Vector,
) -> Result<f64> {
    let m = problem.dim();
    check_dim(m, z_base.len())?;
    check_dim(m, z_half.len())?;
    check_dim(m, g_used.len())?;
    check_positive("certificate gamma", gamma)?;
    let expected = problem.regularizer().prox(gamma, &(z_base - g_used * gamma))?;
    let gap = (&expected - z_half).norm();
    if gap > 1e-9 * z_half.norm().max(1.0) {
        return Err(SviError::Contract(format!("z_half is not the prox step from z_base (gap {gap:e})")));
    }
    let g_half = problem.eval(z_half)?;
    Ok(((z_base - z_half) / gamma - g_used + g_half).norm())
}

#[inline]
pub(crate) fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}
