//! Discrete path representation: problems, skeletons, features and their
//! stacked evaluation.

mod feature;
mod problem;
mod skeleton;
mod stack;

pub use feature::{
    feature_jacobian_error, finite_diff_accel, AffineFeature, DynamicsFeature, Feature, FeatureEval,
    FnFeature, SharedFeature,
};
pub use problem::{CostClass, CostTerm, PathProblem, StepRange};
pub use skeleton::{
    structural_violations, validate_skeleton, Mode, Skeleton, SkeletonViolation, SuccessorTable, Switch,
};
pub use stack::{assemble, check_jacobians, BlockJacobian, FeatureStack, JacobianBlock};

use nalgebra::DVector;

use crate::error::Result;
use crate::scalar::Real;

/// Dynamics residual of the window ending at `step` on path `x`.
pub fn dynamics_feature<T: Real>(problem: &PathProblem<T>, x: &DVector<T>, step: usize) -> Result<DVector<T>> {
    let n = step as isize;
    let configs = [problem.config(x, n - 2), problem.config(x, n - 1), problem.config(x, n)];
    match problem.dynamics() {
        Some(f) => f.evaluate(step, &configs).map(|e| e.value).map_err(|reason| {
            crate::error::Error::Feature {
                step: n,
                feature: "dynamics".into(),
                reason,
            }
        }),
        None => Ok(DVector::zeros(0)),
    }
}
