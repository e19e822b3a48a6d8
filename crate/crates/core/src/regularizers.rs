//! Convex regularizers with closed-form proximal maps.

use crate::error::{check_dim, check_nonnegative, check_positive, Result, SviError};
use crate::Vector;

#[derive(Debug, Clone, PartialEq)]
pub enum RegularizerKind {
    Zero,
    /// Indicator of `lower <= u <= upper`; bounds may be infinite.
    Box {
        lower: Vector,
        upper: Vector,
    },
    NonnegativeOrthant,
    /// `weight * ||u||_1`.
    L1 {
        weight: f64,
    },
    /// Indicator of the Euclidean ball `||u|| <= radius`.
    Ball {
        radius: f64,
    },
}

/// A proper closed convex function `r` on `R^dim` with an exact prox.
#[derive(Debug, Clone, PartialEq)]
pub struct Regularizer {
    kind: RegularizerKind,
    dim: usize,
}

impl Regularizer {
    pub fn zero(dim: usize) -> Self {
        Self { kind: RegularizerKind::Zero, dim }
    }

    pub fn boxed(lower: Vector, upper: Vector) -> Result<Self> {
        check_dim(lower.len(), upper.len())?;
        if let Some(i) = (0..lower.len()).find(|&i| !(lower[i] <= upper[i]) || lower[i].is_nan()) {
            return Err(SviError::InvalidArgument(format!(
                "box bounds violate lower <= upper at component {i}: {} > {}",
                lower[i], upper[i]
            )));
        }
        let dim = lower.len();
        Ok(Self { kind: RegularizerKind::Box { lower, upper }, dim })
    }

    /// Box `[-halfwidth, halfwidth]^dim`.
    pub fn symmetric_box(dim: usize, halfwidth: f64) -> Result<Self> {
        check_positive("box halfwidth", halfwidth)?;
        Self::boxed(Vector::from_element(dim, -halfwidth), Vector::from_element(dim, halfwidth))
    }

    pub fn nonnegative_orthant(dim: usize) -> Self {
        Self { kind: RegularizerKind::NonnegativeOrthant, dim }
    }

    pub fn l1(dim: usize, weight: f64) -> Result<Self> {
        check_nonnegative("l1 weight", weight)?;
        Ok(Self { kind: RegularizerKind::L1 { weight }, dim })
    }

    pub fn ball(dim: usize, radius: f64) -> Result<Self> {
        check_positive("ball radius", radius)?;
        Ok(Self { kind: RegularizerKind::Ball { radius }, dim })
    }

    pub fn kind(&self) -> &RegularizerKind {
        &self.kind
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn is_zero(&self) -> bool {
        matches!(self.kind, RegularizerKind::Zero)
            || matches!(self.kind, RegularizerKind::L1 { weight } if weight == 0.0)
    }

    /// True for indicator functions, whose prox is a projection.
    pub fn is_indicator(&self) -> bool {
        matches!(
            self.kind,
            RegularizerKind::Box { .. } | RegularizerKind::NonnegativeOrthant | RegularizerKind::Ball { .. }
        )
    }

    /// Domain membership test.
    pub fn contains(&self, x: &Vector) -> bool {
        if x.len() != self.dim {
            return false;
        }
        match &self.kind {
            RegularizerKind::Zero | RegularizerKind::L1 { .. } => x.iter().all(|v| v.is_finite()),
            RegularizerKind::Box { lower, upper } => (0..self.dim).all(|i| lower[i] <= x[i] && x[i] <= upper[i]),
            RegularizerKind::NonnegativeOrthant => x.iter().all(|&v| v >= 0.0),
            RegularizerKind::Ball { radius } => x.norm() <= radius * (1.0 + 4.0 * f64::EPSILON),
        }
    }

    /// Value of `r(x)`, `+inf` outside the domain.
    pub fn value(&self, x: &Vector) -> f64 {
        match &self.kind {
            RegularizerKind::L1 { weight } => weight * x.lp_norm(1),
            _ if self.contains(x) => 0.0,
            _ => f64::INFINITY,
        }
    }

    /// `prox_{gamma r}(x) = argmin_u r(u) + ||u - x||^2 / (2 gamma)`.
    pub fn prox(&self, gamma: f64, x: &Vector) -> Result<Vector> {
        check_positive("prox step gamma", gamma)?;
        check_dim(self.dim, x.len())?;
        let mut out = x.clone();
        self.prox_in_place(gamma, out.as_mut_slice());
        Ok(out)
    }

    /// Unchecked in-place prox used on solver hot paths.
    #[inline]
    pub fn prox_in_place(&self, gamma: f64, x: &mut [f64]) {
        match &self.kind {
            RegularizerKind::Zero => {}
            RegularizerKind::Box { lower, upper } => {
                for (i, v) in x.iter_mut().enumerate() {
                    *v = v.max(lower[i]).min(upper[i]);
                }
            }
            RegularizerKind::NonnegativeOrthant => {
                for v in x.iter_mut() {
                    *v = v.max(0.0);
                }
            }
            RegularizerKind::L1 { weight } => {
                let t = gamma * weight;
                for v in x.iter_mut() {
                    let a = v.abs() - t;
                    // ties at the kink map to exactly zero
                    *v = if a > 0.0 { v.signum() * a } else { 0.0 };
                }
            }
            RegularizerKind::Ball { radius } => {
                let n = x.iter().map(|v| v * v).sum::<f64>().sqrt();
                if n > *radius {
                    let s = radius / n;
                    for v in x.iter_mut() {
                        *v *= s;
                    }
                }
            }
        }
    }
}
