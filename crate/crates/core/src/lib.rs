//! Solvers for three-operator monotone inclusions `0 ∈ Ax + Bx + Cx` with a
//! maximally monotone `A` (touched only through resolvents), a monotone
//! Lipschitz `B` and a cocoercive `C`.
//!
//! The crate ships three momentum algorithms built on warped-resolvent
//! backward steps, their classical one-resolvent reductions, four-operator
//! variants for `A = A₁ + A₂` with a Lipschitz `A₂`, step-size condition
//! checkers with linear-rate constants, Lyapunov-style runtime certificates,
//! and two benchmark problem families (random constrained QPs in saddle
//! form and mean-variance portfolio selection). The `opsplit` binary wraps
//! the benchmark harness; see the README for usage.

pub mod certificates;
pub mod cli;
pub mod conditions;
pub mod metric;
pub mod operators;
pub mod problems;
pub mod solvers;

pub use metric::{Metric, Vector};
pub use operators::{
    ClassicKernel, CustomKernel, GammaSchedule, Kernel, LipschitzSplitKernel, OperatorTriple,
    Resolvent, SingleValuedOp,
};
pub use solvers::{run, Algorithm, SolverConfig, StopRule, Trace};
