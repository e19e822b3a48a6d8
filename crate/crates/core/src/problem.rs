//! Problem instances: find `z*` with `0 ∈ G(z*) + ∂r(z*)`.

use std::fmt;
use std::sync::Arc;

use nalgebra::DMatrix;

use crate::error::{check_dim, check_positive, Result, SviError};
use crate::regularizers::Regularizer;
use crate::Vector;

/// A deterministic operator `G: R^m -> R^m`.
pub trait Operator: Send + Sync + fmt::Debug {
    fn dim(&self) -> usize;

    /// Writes `G(z)` into `out`. Both slices have length `dim()`.
    fn apply_into(&self, z: &[f64], out: &mut [f64]);

    fn apply(&self, z: &Vector) -> Vector {
        let mut out = Vector::zeros(self.dim());
        self.apply_into(z.as_slice(), out.as_mut_slice());
        out
    }

    /// The matrix of the operator when it is linear.
    fn matrix(&self) -> Option<&DMatrix<f64>> {
        None
    }
}

/// `G(z) = M z`.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearOperator {
    matrix: DMatrix<f64>,
}

impl LinearOperator {
    pub fn new(matrix: DMatrix<f64>) -> Result<Self> {
        if matrix.nrows() != matrix.ncols() || matrix.nrows() == 0 {
            return Err(SviError::InvalidArgument(format!(
                "operator matrix must be square and nonempty, got {}x{}",
                matrix.nrows(),
                matrix.ncols()
            )));
        }
        Ok(Self { matrix })
    }

    /// Largest singular value.
    pub fn spectral_norm(&self) -> f64 {
        self.matrix.clone().singular_values().iter().cloned().fold(0.0, f64::max)
    }
}

impl Operator for LinearOperator {
    fn dim(&self) -> usize {
        self.matrix.nrows()
    }

    #[inline]
    fn apply_into(&self, z: &[f64], out: &mut [f64]) {
        let n = self.matrix.nrows();
        out.iter_mut().for_each(|v| *v = 0.0);
        for j in 0..n {
            let zj = z[j];
            let col = self.matrix.column(j);
            for i in 0..n {
                out[i] += col[i] * zj;
            }
        }
    }

    fn matrix(&self) -> Option<&DMatrix<f64>> {
        Some(&self.matrix)
    }
}

/// Operator backed by a closure.
pub struct FnOperator<F> {
    dim: usize,
    f: F,
}

impl<F> FnOperator<F>
where
    F: Fn(&[f64], &mut [f64]) + Send + Sync,
{
    pub fn new(dim: usize, f: F) -> Self {
        Self { dim, f }
    }
}

impl<F> fmt::Debug for FnOperator<F> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("FnOperator").field("dim", &self.dim).finish()
    }
}

impl<F> Operator for FnOperator<F>
where
    F: Fn(&[f64], &mut [f64]) + Send + Sync,
{
    fn dim(&self) -> usize {
        self.dim
    }

    fn apply_into(&self, z: &[f64], out: &mut [f64]) {
        (self.f)(z, out)
    }
}

/// Operator `G`, regularizer `r`, Lipschitz constant `L` and weak-Minty
/// parameter `rho`.
///
/// A negative `rho` is accepted and means `G + ∂r` is strongly monotone
/// around the solution (rotations by less than a right angle).
#[derive(Debug, Clone)]
pub struct ProblemInstance {
    name: String,
    operator: Arc<dyn Operator>,
    regularizer: Regularizer,
    lipschitz: f64,
    rho: f64,
    known_solution: Option<Vector>,
}

impl ProblemInstance {
    pub fn new(
        name: impl Into<String>,
        operator: Arc<dyn Operator>,
        regularizer: Regularizer,
        lipschitz: f64,
        rho: f64,
    ) -> Result<Self> {
        let dim = operator.dim();
        if dim == 0 {
            return Err(SviError::InvalidArgument("dimension must be at least 1".into()));
        }
        check_dim(dim, regularizer.dim())?;
        check_positive("Lipschitz constant", lipschitz)?;
        if !rho.is_finite() {
            return Err(SviError::InvalidArgument(format!("rho must be finite, got {rho}")));
        }
        Ok(Self { name: name.into(), operator, regularizer, lipschitz, rho, known_solution: None })
    }

    /// Attaches a known solution. When `r ≡ 0` the solution must satisfy
    /// `||G(z*)|| <= 1e-9 max(1, ||z*||)`.
    pub fn with_known_solution(mut self, z: Vector) -> Result<Self> {
        check_dim(self.dim(), z.len())?;
        if self.regularizer.is_zero() {
            let g = self.operator.apply(&z).norm();
            if g > 1e-9 * z.norm().max(1.0) {
                return Err(SviError::InvalidArgument(format!("known solution has ||G(z*)|| = {g:e}")));
            }
        }
        self.known_solution = Some(z);
        Ok(self)
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn dim(&self) -> usize {
        self.operator.dim()
    }

    pub fn operator(&self) -> &Arc<dyn Operator> {
        &self.operator
    }

    pub fn regularizer(&self) -> &Regularizer {
        &self.regularizer
    }

    pub fn lipschitz(&self) -> f64 {
        self.lipschitz
    }

    pub fn rho(&self) -> f64 {
        self.rho
    }

    pub fn known_solution(&self) -> Option<&Vector> {
        self.known_solution.as_ref()
    }

    /// `G(z)` with a dimension check.
    pub fn eval(&self, z: &Vector) -> Result<Vector> {
        check_dim(self.dim(), z.len())?;
        Ok(self.operator.apply(z))
    }

    #[inline]
    pub fn eval_into(&self, z: &[f64], out: &mut [f64]) {
        self.operator.apply_into(z, out)
    }

    /// Step used for the logged residual of constrained problems.
    pub fn default_residual_gamma(&self) -> f64 {
        1.0 / (4.0 * self.lipschitz)
    }
}
