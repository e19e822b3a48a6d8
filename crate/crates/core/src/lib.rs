//! Solvers for stochastic variational inequalities `0 ∈ G(z) + ∂r(z)` under
//! the weak Minty condition and state-dependent noise.

pub mod baselines;
pub mod error;
pub mod exec;
pub mod fbf_minibatch;
pub mod mlmc_km;
pub mod oracle;
pub mod problem;
pub mod problems;
pub mod record;
pub mod regularizers;
pub mod residual;
pub mod rng;
pub mod vr_halpern;

pub use error::{Result, SviError};
pub use exec::Execution;
pub use oracle::{CountingOracle, NoiseSpec, StochasticOracle};
pub use problem::{LinearOperator, Operator, ProblemInstance};
pub use record::{LogEntry, RunLimits, RunRecord, StopReason};
pub use regularizers::{Regularizer, RegularizerKind};
pub use residual::{fbf_certificate, residual};

pub type Vector = nalgebra::DVector<f64>;
