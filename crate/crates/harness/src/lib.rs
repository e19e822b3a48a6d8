//! Experiment orchestration for the `svi-core` solvers: specs, presets,
//! seed fan-out and CSV/JSON output.

pub mod output;
pub mod presets;
pub mod runner;
pub mod spec;

pub use output::{aggregates, write_all, Aggregate, OutputFiles};
pub use presets::{preset, PRESET_NAMES};
pub use runner::{run_experiment, seed_base_from_env, CellResult, ExperimentResult, Outcome, RunOptions};
pub use spec::{AlgorithmSpec, Budget, ExperimentSpec, ProblemSpec, SpecError, Sweep, SweepParam};
