//! Degenerate Gaussian components, entropy-ratio mixture weights and the
//! multimodal cost estimate.

use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{min_eigenvalue, nullspace_basis, spd_logdet, symmetrize, SymBanded};
use crate::path::{assemble, CostClass, FeatureStack, PathProblem, Skeleton};
use crate::scalar::{lit, to_f64_vec, Real};
use crate::solver::NlpSolution;

/// Tolerances used when building components.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase", default)]
pub struct LaplaceConfig {
    /// Relative singular-value cutoff for the nullspace basis.
    pub nullspace_tol: f64,
    /// Projected Hessians with `lambda_min < singular_tol * trace / rank`
    /// are rejected.
    pub singular_tol: f64,
}

impl Default for LaplaceConfig {
    fn default() -> Self {
        Self {
            nullspace_tol: 1e-8,
            singular_tol: 1e-10,
        }
    }
}

/// How the skeleton prior enters the multimodal cost.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub enum PriorMode {
    /// Uniform prior `1 / N_a` over skeletons.
    UniformWithNa,
    /// No prior factor.
    #[default]
    Unnormalized,
}

/// Which distribution to sample from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub enum SampleSource {
    /// The optimally controlled distribution, covariance from `projHess`.
    Controlled,
    /// The uncontrolled distribution, covariance from `projHess0`.
    Uncontrolled,
}

/// Degenerate Gaussian around one skeleton's optimum.
#[derive(Debug, Clone)]
pub struct LaplaceComponent<T: Real> {
    pub skeleton_id: String,
    pub x_star: DVector<T>,
    /// Orthonormal nullspace basis of the active constraint Jacobian.
    pub w: DMatrix<T>,
    pub proj_hess: DMatrix<T>,
    pub proj_hess0: DMatrix<T>,
    pub rank: usize,
    pub f_star: T,
    pub log_ratio: T,
    /// Number of independent active constraint rows.
    pub constraint_rank: usize,
}

impl<T: Real> LaplaceComponent<T> {
    /// Builds a component from Hessians and the active constraint Jacobian.
    pub fn from_parts(
        skeleton_id: impl Into<String>,
        x_star: DVector<T>,
        f_star: T,
        hess: &DMatrix<T>,
        hess0: &DMatrix<T>,
        active_jacobian: &DMatrix<T>,
        config: &LaplaceConfig,
    ) -> Result<Self> {
        let n = x_star.len();
        if hess.shape() != (n, n) || hess0.shape() != (n, n) || active_jacobian.ncols() != n {
            return Err(Error::Shape(format!(
                "component inputs do not match a path of {n} variables"
            )));
        }
        let null = nullspace_basis(active_jacobian, lit(config.nullspace_tol));
        let w = null.basis;
        let proj_hess = symmetrize(&(w.transpose() * hess * &w));
        let proj_hess0 = symmetrize(&(w.transpose() * hess0 * &w));
        let mut c = Self {
            skeleton_id: skeleton_id.into(),
            x_star,
            rank: w.ncols(),
            w,
            proj_hess,
            proj_hess0,
            f_star,
            log_ratio: T::zero(),
            constraint_rank: null.rank,
        };
        c.log_ratio = logdet_ratio_with(&c, config)?;
        Ok(c)
    }

    /// `true` when the active constraints leave no free direction.
    pub fn fully_constrained(&self) -> bool {
        self.rank == 0
    }

    /// Dense covariance `W projHess^{-1} W^T`.
    pub fn covariance(&self) -> Result<DMatrix<T>> {
        let n = self.x_star.len();
        if self.rank == 0 {
            return Ok(DMatrix::zeros(n, n));
        }
        let inv = self
            .proj_hess
            .clone()
            .cholesky()
            .ok_or_else(|| singular(&self.proj_hess, T::zero()))?
            .inverse();
        Ok(&self.w * inv * self.w.transpose())
    }

    /// Per-coordinate marginal standard deviations.
    pub fn marginal_std(&self) -> Result<DVector<T>> {
        Ok(self.covariance()?.diagonal().map(|v| v.max(T::zero()).sqrt()))
    }

    pub fn record(&self, include_covariance: bool) -> Result<ComponentRecord> {
        let covariance = if include_covariance {
            let cov = self.covariance()?;
            Some(cov.row_iter().map(|r| r.iter().map(|v| v.to_f64_lossy()).collect()).collect())
        } else {
            None
        };
        Ok(ComponentRecord {
            skeleton_id: self.skeleton_id.clone(),
            rank: self.rank,
            constraint_rank: self.constraint_rank,
            f_star: self.f_star.to_f64_lossy(),
            log_ratio: self.log_ratio.to_f64_lossy(),
            x_star: to_f64_vec(self.x_star.as_slice()),
            covariance,
        })
    }
}

fn singular<T: Real>(m: &DMatrix<T>, threshold: T) -> Error {
    Error::Singular {
        min_eigenvalue: min_eigenvalue(m).to_f64_lossy(),
        threshold: threshold.to_f64_lossy(),
    }
}

/// Rejects matrices whose smallest eigenvalue is tiny relative to the mean
/// eigenvalue.
fn check_spd<T: Real>(m: &DMatrix<T>, tol: T) -> Result<()> {
    let r = m.nrows();
    if r == 0 {
        return Ok(());
    }
    let threshold = tol * m.trace() / lit::<T>(r as f64);
    let min = min_eigenvalue(m);
    if !(min >= threshold) || !(threshold > T::zero()) {
        return Err(Error::Singular {
            min_eigenvalue: min.to_f64_lossy(),
            threshold: threshold.to_f64_lossy(),
        });
    }
    Ok(())
}

/// Dense active constraint Jacobian: all equality rows, then the active
/// inequality rows. Also returns the step of every row.
pub fn active_jacobian<T: Real>(stack: &FeatureStack<T>, active: &[bool]) -> (DMatrix<T>, Vec<usize>) {
    let eq = stack.eq_jacobian.to_dense();
    let keep: Vec<usize> = (0..stack.ineq_values.len()).filter(|&j| active.get(j).copied().unwrap_or(false)).collect();
    let ineq = stack.ineq_jacobian.dense_rows(&keep);
    let mut j = DMatrix::zeros(eq.nrows() + ineq.nrows(), eq.ncols());
    j.rows_mut(0, eq.nrows()).copy_from(&eq);
    j.rows_mut(eq.nrows(), ineq.nrows()).copy_from(&ineq);
    let mut steps: Vec<usize> = (0..eq.nrows())
        .map(|r| stack.eq_jacobian.origin(r).map_or(0, |o| o.0))
        .collect();
    steps.extend(keep.iter().map(|&r| stack.ineq_jacobian.origin(r).map_or(0, |o| o.0)));
    (j, steps)
}

/// Gauss-Newton Hessians of the full cost and of the control cost.
pub fn cost_hessians<T: Real>(stack: &FeatureStack<T>) -> (SymBanded<T>, SymBanded<T>) {
    (
        stack.gauss_newton_hessian(None),
        stack.gauss_newton_hessian(Some(CostClass::Control)),
    )
}

/// Builds the Laplace component of a converged skeleton solution.
pub fn build_component<T: Real>(
    problem: &PathProblem<T>,
    skeleton: &Skeleton<T>,
    solution: &NlpSolution<T>,
    config: &LaplaceConfig,
) -> Result<LaplaceComponent<T>> {
    if !solution.converged() {
        return Err(Error::NotConverged {
            skeleton: skeleton.id.clone(),
            status: format!("{:?}", solution.diagnostics.status),
        });
    }
    let stack = assemble(problem, skeleton, &solution.x_star)?;
    let (h, h0) = cost_hessians(&stack);
    let (j, _) = active_jacobian(&stack, &solution.active_set);
    LaplaceComponent::from_parts(
        skeleton.id.clone(),
        solution.x_star.clone(),
        stack.cost(),
        &h.to_dense(),
        &h0.to_dense(),
        &j,
        config,
    )
}

fn logdet_ratio_with<T: Real>(c: &LaplaceComponent<T>, config: &LaplaceConfig) -> Result<T> {
    let tol = lit::<T>(config.singular_tol);
    check_spd(&c.proj_hess, tol)?;
    check_spd(&c.proj_hess0, tol)?;
    Ok(lit::<T>(0.5) * (spd_logdet(&c.proj_hess0)? - spd_logdet(&c.proj_hess)?))
}

/// `1/2 (logdet projHess0 - logdet projHess)`, the log of the entropy ratio.
pub fn logdet_ratio<T: Real>(component: &LaplaceComponent<T>) -> Result<T> {
    logdet_ratio_with(component, &LaplaceConfig::default())
}

/// Normalizes log-scores onto the simplex with max-subtraction.
pub fn normalize_log_weights<T: Real>(scores: &[T]) -> Result<Vec<T>> {
    if scores.is_empty() {
        return Err(Error::Numeric("no scores to normalize".into()));
    }
    if scores.iter().any(|&s| s != s) {
        return Err(Error::Numeric("NaN log-weight".into()));
    }
    let max = scores.iter().fold(T::min_value().unwrap_or(-T::one()), |a, &b| a.max(b));
    if !max.is_finite() {
        return Err(Error::Numeric("no finite log-weight".into()));
    }
    let exp: Vec<T> = scores.iter().map(|&s| (s - max).exp()).collect();
    let total = exp.iter().fold(T::zero(), |a, &b| a + b);
    Ok(exp.into_iter().map(|e| e / total).collect())
}

/// `log sum exp` of `scores`.
pub fn log_sum_exp<T: Real>(scores: &[T]) -> T {
    let max = scores.iter().fold(T::min_value().unwrap_or(-T::one()), |a, &b| a.max(b));
    max + scores.iter().fold(T::zero(), |a, &s| a + (s - max).exp()).ln()
}

/// Weights from raw `(fStar, logRatio)` pairs.
pub fn weights_from_scores<T: Real>(f_star: &[T], log_ratio: &[T]) -> Result<Vec<T>> {
    if f_star.len() != log_ratio.len() {
        return Err(Error::Shape("fStar and logRatio lengths differ".into()));
    }
    let scores: Vec<T> = f_star.iter().zip(log_ratio).map(|(&f, &r)| r - f).collect();
    normalize_log_weights(&scores)
}

/// Weights proportional to `exp(-fStar) * ratio`.
pub fn mixture_weights<T: Real>(components: &[LaplaceComponent<T>]) -> Result<Vec<T>> {
    let f: Vec<T> = components.iter().map(|c| c.f_star).collect();
    let r: Vec<T> = components.iter().map(|c| c.log_ratio).collect();
    weights_from_scores(&f, &r)
}

/// `-log sum_i p_i exp(-fStar_i) ratio_i` from raw scores.
pub fn multimodal_cost_from_scores<T: Real>(f_star: &[T], log_ratio: &[T], mode: PriorMode) -> Result<T> {
    if f_star.is_empty() || f_star.len() != log_ratio.len() {
        return Err(Error::Shape("need matching, nonempty fStar and logRatio".into()));
    }
    let scores: Vec<T> = f_star.iter().zip(log_ratio).map(|(&f, &r)| r - f).collect();
    let base = -log_sum_exp(&scores);
    Ok(match mode {
        PriorMode::Unnormalized => base,
        PriorMode::UniformWithNa => base + lit::<T>(f_star.len() as f64).ln(),
    })
}

pub fn multimodal_cost<T: Real>(components: &[LaplaceComponent<T>], mode: PriorMode) -> Result<T> {
    let f: Vec<T> = components.iter().map(|c| c.f_star).collect();
    let r: Vec<T> = components.iter().map(|c| c.log_ratio).collect();
    multimodal_cost_from_scores(&f, &r, mode)
}

/// Draws `count` paths `x* + W L^{-T} z`, `z ~ N(0, I)`.
pub fn sample_paths<T: Real>(
    component: &LaplaceComponent<T>,
    count: usize,
    seed: u64,
    source: SampleSource,
) -> Result<Vec<DVector<T>>> {
    if component.rank == 0 {
        return Ok(vec![component.x_star.clone(); count]);
    }
    let hess = match source {
        SampleSource::Controlled => &component.proj_hess,
        SampleSource::Uncontrolled => &component.proj_hess0,
    };
    let chol = hess.clone().cholesky().ok_or_else(|| singular(hess, T::zero()))?;
    let lt = chol.l().transpose();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::with_capacity(count);
    for _ in 0..count {
        let z = DVector::from_fn(component.rank, |_, _| {
            let v: f64 = StandardNormal.sample(&mut rng);
            lit::<T>(v)
        });
        let y = lt
            .solve_upper_triangular(&z)
            .ok_or_else(|| Error::Numeric("triangular solve failed".into()))?;
        out.push(&component.x_star + &component.w * y);
    }
    Ok(out)
}

/// Mixture of per-skeleton components.
#[derive(Debug, Clone)]
pub struct PathMixture<T: Real> {
    pub components: Vec<LaplaceComponent<T>>,
    pub weights: Vec<T>,
    pub multimodal_cost: T,
    pub prior_mode: PriorMode,
}

impl<T: Real> PathMixture<T> {
    pub fn new(components: Vec<LaplaceComponent<T>>, prior_mode: PriorMode) -> Result<Self> {
        let weights = mixture_weights(&components)?;
        let multimodal_cost = multimodal_cost(&components, prior_mode)?;
        Ok(Self {
            components,
            weights,
            multimodal_cost,
            prior_mode,
        })
    }

    pub fn record(&self, include_covariance: bool) -> Result<MixtureRecord> {
        let mut components = Vec::with_capacity(self.components.len());
        for (c, w) in self.components.iter().zip(&self.weights) {
            components.push(WeightedComponent {
                weight: w.to_f64_lossy(),
                component: c.record(include_covariance)?,
            });
        }
        Ok(MixtureRecord {
            schema: MIXTURE_SCHEMA.to_owned(),
            prior_mode: self.prior_mode,
            multimodal_cost_unnormalized: multimodal_cost(&self.components, PriorMode::Unnormalized)?.to_f64_lossy(),
            multimodal_cost_uniform_with_na: multimodal_cost(&self.components, PriorMode::UniformWithNa)?
                .to_f64_lossy(),
            components,
        })
    }
}

pub const MIXTURE_SCHEMA: &str = "slgp.mixture/1";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct ComponentRecord {
    pub skeleton_id: String,
    pub rank: usize,
    pub constraint_rank: usize,
    pub f_star: f64,
    pub log_ratio: f64,
    pub x_star: Vec<f64>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub covariance: Option<Vec<Vec<f64>>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct WeightedComponent {
    pub weight: f64,
    #[serde(flatten)]
    pub component: ComponentRecord,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct MixtureRecord {
    pub schema: String,
    pub prior_mode: PriorMode,
    pub multimodal_cost_unnormalized: f64,
    pub multimodal_cost_uniform_with_na: f64,
    pub components: Vec<WeightedComponent>,
}

#[cfg(test)]
mod tests;
