//! MAP inference in higher-order Markov random fields by smoothed dual
//! decomposition.
//!
//! The solvers minimize `f(δ) = -g(δ)`, where `g` is the soft-min smoothed
//! Lagrangian dual of the local-polytope relaxation at temperature `τ`.
//! [`trn::solve`] uses exact structured Hessians with truncated conjugate
//! gradients, [`qn::qn_solve`] a limited-memory BFGS model suited to chain
//! decompositions, and [`baseline::fista_solve`] an accelerated first-order
//! method.

// Negated comparisons reject NaN along with out-of-range values.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod baseline;
pub mod compare;
pub mod error;
pub mod hessian;
pub mod krylov;
pub mod model;
pub mod qn;
pub mod smooth_dual;
pub mod sum_product;
pub mod trace;
pub mod trn;

mod driver;

pub use compare::Solver;
pub use error::{Error, Result};
pub use model::{
    brute_force_map, build_chain_decomposition, build_clique_decomposition, Clique, Decomposition, Labeling, MrfModel,
    PatternPotential, Potential, Subgraph,
};
pub use smooth_dual::{DualLayout, SmoothObjective};
pub use trace::{ExitReason, SolveReport, SolveResult, StepRecord, Trace, TraceEvent, TraceRow};
pub use trn::TrnConfig;
