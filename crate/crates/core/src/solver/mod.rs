//! Augmented Lagrangian solver with Gauss-Newton inner iterations over the
//! banded trajectory structure.

mod al;
mod config;

pub use al::{
    gauss_newton_step, kkt_residuals, kkt_residuals_at, solve, solve_nlp, AlState, Diagnostics, KktResiduals,
    Nlp, NlpSolution, SkeletonNlp, SolveStatus, TraceRecord,
};
pub use config::SolverConfig;
