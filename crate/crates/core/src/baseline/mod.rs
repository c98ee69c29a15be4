//! First-order baseline, primal recovery and gap computations.

mod fista;
mod primal;

pub use fista::{fista_solve, Fista, FistaStep};
pub use primal::{
    pd_gap, recover_feasible_primal, round_primal, PdGap, PrimalPoint, FEASIBILITY_TOL, PRIMAL_DOMAIN_CAP,
};
