//! Benchmark instances with their constants `L` and `ρ`.

use std::sync::Arc;

use nalgebra::DMatrix;

use crate::error::{check_positive, Result, SviError};
use crate::oracle::{NoiseSpec, StochasticOracle};
use crate::problem::{LinearOperator, ProblemInstance};
use crate::regularizers::Regularizer;
use crate::Vector;

/// `F(x) = L A(θ) x` on `R²`, with `ρ = -cos θ / L`.
///
/// `⟨F(z), z⟩ = -ρ ||F(z)||²` holds with equality, so the weak Minty
/// condition is tight for every `z`.
pub fn make_rotation(lipschitz: f64, theta: f64) -> Result<ProblemInstance> {
    check_positive("L", lipschitz)?;
    if !(theta > 0.0 && theta <= std::f64::consts::PI) {
        return Err(SviError::InvalidArgument(format!("theta must lie in (0, pi], got {theta}")));
    }
    let (s, c) = theta.sin_cos();
    let m = DMatrix::from_row_slice(2, 2, &[c, -s, s, c]) * lipschitz;
    let op = LinearOperator::new(m)?;
    ProblemInstance::new("rotation", Arc::new(op), Regularizer::zero(2), lipschitz, -c / lipschitz)?
        .with_known_solution(Vector::zeros(2))
}

/// Coefficients `(a, b) = (sqrt(L² - L⁴ρ²), L²ρ)` of the quadratic min-max
/// instance `φ(x, y) = a x y + (b/2) x² - (b/2) y²`.
pub fn quadratic_coefficients(lipschitz: f64, rho: f64) -> (f64, f64) {
    let l2 = lipschitz * lipschitz;
    ((l2 - l2 * l2 * rho * rho).sqrt(), l2 * rho)
}

/// `G(x, y) = (∇_x φ, -∇_y φ) = (b x + a y, -a x + b y)`.
pub fn make_quadratic(lipschitz: f64, rho: f64) -> Result<ProblemInstance> {
    check_positive("L", lipschitz)?;
    if !(0.0..1.0 / lipschitz).contains(&rho) {
        return Err(SviError::InvalidArgument(format!(
            "rho must lie in [0, 1/L) = [0, {}), got {rho}",
            1.0 / lipschitz
        )));
    }
    let (a, b) = quadratic_coefficients(lipschitz, rho);
    let op = LinearOperator::new(DMatrix::from_row_slice(2, 2, &[b, a, -a, b]))?;
    ProblemInstance::new("quadratic", Arc::new(op), Regularizer::zero(2), lipschitz, rho)?
        .with_known_solution(Vector::zeros(2))
}

/// `G(x, y) = (C y, -Cᵀ x)` with both blocks in `[-h, h]^p`, `C` square `p × p`.
pub fn make_bilinear_box(coupling: &DMatrix<f64>, halfwidth: f64) -> Result<ProblemInstance> {
    check_positive("box halfwidth", halfwidth)?;
    let p = coupling.nrows();
    if p == 0 || coupling.ncols() != p {
        return Err(SviError::InvalidArgument(format!(
            "coupling must be square and nonempty, got {}x{}",
            coupling.nrows(),
            coupling.ncols()
        )));
    }
    let mut m = DMatrix::zeros(2 * p, 2 * p);
    m.view_mut((0, p), (p, p)).copy_from(coupling);
    m.view_mut((p, 0), (p, p)).copy_from(&(-coupling.transpose()));
    let op = LinearOperator::new(m)?;
    let l = op.spectral_norm();
    if l <= 0.0 {
        return Err(SviError::InvalidArgument("coupling must be nonzero".into()));
    }
    ProblemInstance::new("bilinear_box", Arc::new(op), Regularizer::symmetric_box(2 * p, halfwidth)?, l, 0.0)?
        .with_known_solution(Vector::zeros(2 * p))
}

pub fn attach_noise(problem: Arc<ProblemInstance>, spec: NoiseSpec) -> Result<StochasticOracle> {
    StochasticOracle::new(problem, spec)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::draw_rng;
    use nalgebra::{dmatrix, dvector};
    use rand::Rng;
    use std::f64::consts::PI;

    #[test]
    fn rotation_rho_values() {
        assert!(make_rotation(1.0, PI / 2.0).unwrap().rho().abs() < 1e-16);
        assert!((make_rotation(1.0, 2.0 * PI / 3.0).unwrap().rho() - 0.5).abs() < 1e-15);
        assert!((make_rotation(1.0, PI).unwrap().rho() - 1.0).abs() < 1e-15);
        assert!((make_rotation(2.0, PI).unwrap().rho() - 0.5).abs() < 1e-15);
        assert!(make_rotation(0.0, 1.0).is_err());
        assert!(make_rotation(-1.0, 1.0).is_err());
        assert!(make_rotation(1.0, 0.0).is_err());
        assert!(make_rotation(1.0, 4.0).is_err());
    }

    #[test]
    fn rotation_isometry_and_tight_minty() {
        let p = make_rotation(1.7, 2.2).unwrap();
        let mut rng = draw_rng(3);
        for _ in 0..1000 {
            let z = dvector![rng.random_range(-5.0..5.0), rng.random_range(-5.0..5.0)];
            let g = p.eval(&z).unwrap();
            assert!((g.norm() - 1.7 * z.norm()).abs() < 1e-12 * z.norm().max(1.0));
            let lhs = g.dot(&z);
            let rhs = -p.rho() * g.norm_squared();
            assert!((lhs - rhs).abs() < 1e-10 * z.norm_squared().max(1.0));
        }
    }

    #[test]
    fn quadratic_coefficients_and_value() {
        let (a, b) = quadratic_coefficients(1.0, 0.1);
        assert!((a - 0.99f64.sqrt()).abs() < 1e-15);
        assert!((b - 0.1).abs() < 1e-15);
        let p = make_quadratic(1.0, 0.0).unwrap();
        assert_eq!(p.eval(&dvector![1.0, 0.0]).unwrap(), dvector![0.0, -1.0]);
        assert!(make_quadratic(1.0, 1.0).is_err());
        assert!(make_quadratic(2.0, 0.5).is_err());
        assert!(make_quadratic(1.0, -0.1).is_err());
    }

    #[test]
    fn quadratic_matches_finite_differences_of_phi() {
        let (l, rho) = (1.0, 0.1);
        let (a, b) = quadratic_coefficients(l, rho);
        let phi = |x: f64, y: f64| a * x * y + 0.5 * b * x * x - 0.5 * b * y * y;
        let p = make_quadratic(l, rho).unwrap();
        let h = 1e-5;
        for &(x, y) in &[(1.0, 0.0), (0.3, -2.0), (-1.2, 0.7)] {
            let gx = (phi(x + h, y) - phi(x - h, y)) / (2.0 * h);
            let gy = (phi(x, y + h) - phi(x, y - h)) / (2.0 * h);
            let g = p.eval(&dvector![x, y]).unwrap();
            assert!((g[0] - gx).abs() < 1e-6);
            assert!((g[1] + gy).abs() < 1e-6);
        }
        let g = p.eval(&dvector![1.0, 0.0]).unwrap();
        assert!((g[0] - 0.1).abs() < 1e-15 && (g[1] + 0.99f64.sqrt()).abs() < 1e-15);
    }

    #[test]
    fn quadratic_operator_norm_is_l() {
        for &l in &[0.5, 1.0, 2.0, 3.0] {
            for frac in [0.0, 0.2, 0.4, 0.6, 0.9] {
                let p = make_quadratic(l, frac / l).unwrap();
                let m = p.operator().matrix().unwrap().clone();
                let s = m.singular_values().max();
                assert!((s - l).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn quadratic_weak_minty() {
        let p = make_quadratic(1.0, 0.1).unwrap();
        let mut rng = draw_rng(8);
        for _ in 0..10_000 {
            let z = dvector![rng.random_range(-10.0..10.0), rng.random_range(-10.0..10.0)];
            let g = p.eval(&z).unwrap();
            assert!(g.dot(&z) >= -p.rho() * g.norm_squared() - 1e-12);
        }
    }

    #[test]
    fn bilinear_box_constants() {
        let p = make_bilinear_box(&dmatrix![2.0], 1.0).unwrap();
        assert!((p.lipschitz() - 2.0).abs() < 1e-12);
        assert_eq!(p.rho(), 0.0);
        assert_eq!(p.eval(&Vector::zeros(2)).unwrap(), Vector::zeros(2));
        assert_eq!(p.eval(&dvector![1.0, 3.0]).unwrap(), dvector![6.0, -2.0]);
        let big = make_bilinear_box(&dmatrix![1.0, 2.0; 0.0, 1.0], 0.5).unwrap();
        assert_eq!(big.dim(), 4);
        assert!((big.lipschitz() - (1.0 + 2f64.sqrt())).abs() < 1e-12);
        assert!(make_bilinear_box(&dmatrix![1.0], 0.0).is_err());
        assert!(make_bilinear_box(&DMatrix::zeros(1, 2), 1.0).is_err());
    }

    #[test]
    fn bilinear_box_interior_residual_is_operator_norm() {
        let p = make_bilinear_box(&dmatrix![1.0], 1.0).unwrap();
        let z = dvector![0.2, -0.3];
        let r = crate::residual::residual(&p, &z, p.default_residual_gamma()).unwrap();
        assert!((r - p.eval(&z).unwrap().norm()).abs() < 1e-12);
    }
}
