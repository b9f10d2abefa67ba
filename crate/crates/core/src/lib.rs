//! Planning and control with skeleton-conditioned path distributions.
//!
//! The pipeline is: build a [`PathProblem`] plus candidate [`Skeleton`]s,
//! solve each constrained path problem with [`solver::solve`], turn each
//! solution into a degenerate Gaussian [`LaplaceComponent`], weight the
//! components into a [`PathMixture`], derive per-skeleton feedback policies
//! with [`kodp::backward_pass`], and execute them with a
//! [`CompositeController`].
//!
//! All numerics are generic over [`Real`]; `f64` aliases are provided below.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod error;
pub mod exec;
pub mod kodp;
pub mod linalg;
pub mod laplace;
pub mod oracles;
pub mod path;
pub mod plan;
pub mod scenarios;
pub mod selftest;
pub mod solver;
pub mod scalar;

pub use error::{Error, Result};
pub use exec::CompositeController;
pub use kodp::KodpPolicy;
pub use laplace::{LaplaceComponent, PathMixture};
pub use path::{PathProblem, Skeleton};
pub use plan::Plan;
pub use scalar::Real;
pub use scenarios::Scenario;
pub use solver::NlpSolution;

pub type Problem = PathProblem<f64>;
pub type SkeletonF64 = Skeleton<f64>;
pub type Solution = NlpSolution<f64>;
pub type Component = LaplaceComponent<f64>;
pub type Mixture = PathMixture<f64>;
pub type Policy = KodpPolicy<f64>;
pub type Controller = CompositeController<f64>;
pub type ScenarioF64 = Scenario<f64>;
pub type PlanF64 = Plan<f64>;
