use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use super::config::SolverConfig;
use crate::error::{Error, Result};
use crate::linalg::{amax, SymBanded};
use crate::path::{assemble, FeatureStack, PathProblem, Skeleton};
use crate::scalar::{lit, Real};

/// Anything that can be evaluated into a [`FeatureStack`].
pub trait Nlp<T: Real> {
    fn num_vars(&self) -> usize;
    fn evaluate(&self, x: &DVector<T>) -> Result<FeatureStack<T>>;
}

/// The constrained path problem induced by one skeleton.
pub struct SkeletonNlp<'a, T: Real> {
    pub problem: &'a PathProblem<T>,
    pub skeleton: &'a Skeleton<T>,
}

impl<T: Real> Nlp<T> for SkeletonNlp<'_, T> {
    fn num_vars(&self) -> usize {
        self.problem.num_vars()
    }

    fn evaluate(&self, x: &DVector<T>) -> Result<FeatureStack<T>> {
        assemble(self.problem, self.skeleton, x)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub enum SolveStatus {
    Converged,
    MaxIterations,
    LineSearchFailure,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TraceRecord {
    pub outer: usize,
    pub inner: usize,
    pub merit: f64,
    pub violation: f64,
    pub step_norm: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct KktResiduals {
    pub stationarity: f64,
    pub eq_violation: f64,
    pub ineq_violation: f64,
    pub complementarity: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct Diagnostics {
    pub status: SolveStatus,
    pub outer_iterations: usize,
    pub inner_iterations: usize,
    /// Max constraint violation after each outer loop.
    pub violation_history: Vec<f64>,
    pub final_step_norm: f64,
    pub mu: f64,
    pub kkt: KktResiduals,
    pub trace: Vec<TraceRecord>,
}

/// Result of one constrained solve.
#[derive(Debug, Clone)]
pub struct NlpSolution<T: Real> {
    pub x_star: DVector<T>,
    /// Inequality duals, nonnegative.
    pub lambda: DVector<T>,
    /// Equality duals.
    pub nu: DVector<T>,
    /// `f(x*)`: half squared norm of all cost residuals.
    pub f_star: T,
    /// Inequality rows treated as active downstream.
    pub active_set: Vec<bool>,
    pub diagnostics: Diagnostics,
}

impl<T: Real> NlpSolution<T> {
    pub fn converged(&self) -> bool {
        self.diagnostics.status == SolveStatus::Converged
    }
}

/// Multipliers and penalty of the augmented Lagrangian.
#[derive(Debug, Clone)]
pub struct AlState<T: Real> {
    pub mu: T,
    pub nu: DVector<T>,
    pub lambda: DVector<T>,
}

impl<T: Real> AlState<T> {
    pub fn new(mu: T, n_eq: usize, n_ineq: usize) -> Self {
        Self {
            mu,
            nu: DVector::zeros(n_eq),
            lambda: DVector::zeros(n_ineq),
        }
    }

    /// Inequality rows carried by the merit: violated or holding a dual.
    fn merit_active(&self, g: T, j: usize) -> bool {
        g > T::zero() || self.lambda[j] > T::zero()
    }

    /// `f + nu.h + mu |h|^2 + sum_active (lambda g + mu g^2)`.
    pub fn merit(&self, stack: &FeatureStack<T>) -> T {
        let mut m = stack.cost();
        for (i, &h) in stack.eq_values.iter().enumerate() {
            m += self.nu[i] * h + self.mu * h * h;
        }
        for (j, &g) in stack.ineq_values.iter().enumerate() {
            if self.merit_active(g, j) {
                m += self.lambda[j] * g + self.mu * g * g;
            }
        }
        m
    }

    pub fn merit_gradient(&self, stack: &FeatureStack<T>) -> DVector<T> {
        let two = lit::<T>(2.0);
        let mut grad = stack.gradient();
        if !stack.eq_values.is_empty() {
            let w = DVector::from_fn(stack.eq_values.len(), |i, _| {
                self.nu[i] + two * self.mu * stack.eq_values[i]
            });
            grad += stack.eq_jacobian.tr_mul(&w);
        }
        if !stack.ineq_values.is_empty() {
            let w = DVector::from_fn(stack.ineq_values.len(), |j, _| {
                let g = stack.ineq_values[j];
                if self.merit_active(g, j) {
                    self.lambda[j] + two * self.mu * g
                } else {
                    T::zero()
                }
            });
            grad += stack.ineq_jacobian.tr_mul(&w);
        }
        grad
    }

    /// Gauss-Newton approximation of the merit Hessian.
    pub fn merit_hessian(&self, stack: &FeatureStack<T>) -> SymBanded<T> {
        let two_mu = lit::<T>(2.0) * self.mu;
        let mut h = stack.gauss_newton_hessian(None);
        stack.eq_jacobian.accumulate_gram(&mut h, |_| two_mu, |_| true);
        stack.ineq_jacobian.accumulate_gram(
            &mut h,
            |j| {
                if self.merit_active(stack.ineq_values[j], j) {
                    two_mu
                } else {
                    T::zero()
                }
            },
            |_| true,
        );
        h
    }

    /// `nu += 2 mu h`, `lambda = max(0, lambda + 2 mu g)`.
    pub fn update_duals(&mut self, stack: &FeatureStack<T>) {
        let two_mu = lit::<T>(2.0) * self.mu;
        for (i, &h) in stack.eq_values.iter().enumerate() {
            self.nu[i] += two_mu * h;
        }
        for (j, &g) in stack.ineq_values.iter().enumerate() {
            self.lambda[j] = (self.lambda[j] + two_mu * g).max(T::zero());
        }
    }
}

/// Damped Gauss-Newton step on the augmented Lagrangian merit.
///
/// Solves `(H + damping I) dx = -grad` with the banded Cholesky solver. When
/// the factorization fails the damping grows tenfold until `max_damping`.
/// Returns the step and the damping that was used.
pub fn gauss_newton_step<T: Real>(
    stack: &FeatureStack<T>,
    state: &AlState<T>,
    damping: T,
    max_damping: T,
) -> Result<(DVector<T>, T)> {
    let grad = state.merit_gradient(stack);
    if amax(&grad) == T::zero() {
        return Ok((DVector::zeros(grad.len()), damping));
    }
    let h = state.merit_hessian(stack);
    let mut lambda = damping;
    loop {
        let mut reg = h.clone();
        reg.add_diagonal(lambda);
        match reg.cholesky() {
            Ok(chol) => return Ok((-chol.solve(&grad), lambda)),
            Err(e) => {
                if lambda >= max_damping {
                    return Err(Error::Numeric(format!(
                        "Gauss-Newton system not positive definite up to damping {:e}: {e}",
                        lambda.to_f64_lossy()
                    )));
                }
                lambda = (lambda * lit::<T>(10.0)).min(max_damping);
            }
        }
    }
}

/// Solves the constrained path problem of `skeleton` from `x_init` (defaults
/// to the constant path at `x_0`).
pub fn solve<T: Real>(
    problem: &PathProblem<T>,
    skeleton: &Skeleton<T>,
    x_init: Option<&DVector<T>>,
    config: &SolverConfig,
) -> Result<NlpSolution<T>> {
    let init = match x_init {
        Some(x) => x.clone(),
        None => problem.constant_path(),
    };
    solve_nlp(&SkeletonNlp { problem, skeleton }, init, config)
}

struct Inner<T: Real> {
    x: DVector<T>,
    stack: FeatureStack<T>,
    iterations: usize,
    step_norm: T,
    converged: bool,
    line_search_failed: bool,
}

fn minimize_merit<T: Real, P: Nlp<T>>(
    nlp: &P,
    mut x: DVector<T>,
    mut stack: FeatureStack<T>,
    state: &AlState<T>,
    config: &SolverConfig,
    outer: usize,
    trace: &mut Vec<TraceRecord>,
) -> Result<Inner<T>> {
    let c = lit::<T>(config.armijo_c);
    let shrink = lit::<T>(config.armijo_shrink);
    let tol_step = lit::<T>(config.tol_step);
    let min_alpha = lit::<T>(config.min_step_length);
    let slack = lit::<T>(64.0) * T::machine_eps();
    let mut step_norm = T::zero();
    for inner in 0..config.max_inner {
        let merit = state.merit(&stack);
        let grad = state.merit_gradient(&stack);
        let (step, _) = gauss_newton_step(
            &stack,
            state,
            lit(config.hessian_reg),
            lit(config.max_hessian_reg),
        )?;
        step_norm = amax(&step);
        if config.trace {
            trace.push(TraceRecord {
                outer,
                inner,
                merit: merit.to_f64_lossy(),
                violation: stack.max_violation().to_f64_lossy(),
                step_norm: step_norm.to_f64_lossy(),
            });
        }
        if step_norm < tol_step {
            return Ok(Inner {
                x,
                stack,
                iterations: inner,
                step_norm,
                converged: true,
                line_search_failed: false,
            });
        }
        let slope = grad.dot(&step);
        let mut alpha = T::one();
        loop {
            let trial = &x + &step * alpha;
            let accepted = match nlp.evaluate(&trial) {
                Ok(s) => {
                    let m = state.merit(&s);
                    let ok = m.is_finite() && m <= merit + c * alpha * slope + slack * merit.abs();
                    ok.then_some((trial, s))
                }
                Err(Error::NonFinite { .. }) => None,
                Err(e) => return Err(e),
            };
            if let Some((xt, st)) = accepted {
                x = xt;
                stack = st;
                break;
            }
            alpha *= shrink;
            if alpha < min_alpha {
                return Ok(Inner {
                    x,
                    stack,
                    iterations: inner + 1,
                    step_norm,
                    converged: false,
                    line_search_failed: true,
                });
            }
        }
    }
    Ok(Inner {
        x,
        stack,
        iterations: config.max_inner,
        step_norm,
        converged: false,
        line_search_failed: false,
    })
}

/// Augmented Lagrangian outer loop around Gauss-Newton inner minimization.
pub fn solve_nlp<T: Real, P: Nlp<T>>(nlp: &P, x_init: DVector<T>, config: &SolverConfig) -> Result<NlpSolution<T>> {
    config.validate()?;
    if x_init.len() != nlp.num_vars() {
        return Err(Error::Shape(format!(
            "initial path has {} entries, expected {}",
            x_init.len(),
            nlp.num_vars()
        )));
    }
    let tol_c = lit::<T>(config.tol_constraint);
    let growth = lit::<T>(config.mu_growth);
    let quarter = lit::<T>(0.25);

    let mut stack = nlp.evaluate(&x_init)?;
    let mut x = x_init;
    let mut state = AlState::new(lit(config.mu_init), stack.eq_values.len(), stack.ineq_values.len());
    let mut trace = Vec::new();
    let mut history = Vec::new();
    let mut inner_total = 0;
    let mut status = SolveStatus::MaxIterations;
    let mut prev_violation = stack.max_violation();
    let mut outer_done = 0;
    let mut final_step = T::zero();

    for outer in 0..config.max_outer {
        let inner = minimize_merit(nlp, x, stack, &state, config, outer, &mut trace)?;
        x = inner.x;
        stack = inner.stack;
        inner_total += inner.iterations;
        final_step = inner.step_norm;
        outer_done = outer + 1;
        let violation = stack.max_violation();
        history.push(violation.to_f64_lossy());
        state.update_duals(&stack);
        if inner.line_search_failed {
            status = SolveStatus::LineSearchFailure;
            break;
        }
        if inner.converged && violation <= tol_c {
            status = SolveStatus::Converged;
            break;
        }
        if violation > quarter * prev_violation {
            state.mu *= growth;
        }
        prev_violation = violation;
    }

    let active_set = active_rows(&stack, &state.lambda, config);
    let kkt = kkt_residuals_at(&stack, &state.nu, &state.lambda);
    let f_star = stack.cost();
    Ok(NlpSolution {
        x_star: x,
        lambda: state.lambda,
        nu: state.nu,
        f_star,
        active_set,
        diagnostics: Diagnostics {
            status,
            outer_iterations: outer_done,
            inner_iterations: inner_total,
            violation_history: history,
            final_step_norm: final_step.to_f64_lossy(),
            mu: state.mu.to_f64_lossy(),
            kkt,
            trace,
        },
    })
}

/// Inequality `j` is active iff `g_j >= -eps` and `lambda_j > min_dual`.
fn active_rows<T: Real>(stack: &FeatureStack<T>, lambda: &DVector<T>, config: &SolverConfig) -> Vec<bool> {
    let eps = lit::<T>(config.active_eps);
    let min_dual = lit::<T>(config.active_dual_min);
    stack
        .ineq_values
        .iter()
        .zip(lambda.iter())
        .map(|(&g, &l)| g >= -eps && l > min_dual)
        .collect()
}

/// KKT residuals of a stack evaluated at `x*` with the given duals.
pub fn kkt_residuals_at<T: Real>(stack: &FeatureStack<T>, nu: &DVector<T>, lambda: &DVector<T>) -> KktResiduals {
    let mut grad = stack.gradient();
    if !nu.is_empty() {
        grad += stack.eq_jacobian.tr_mul(nu);
    }
    if !lambda.is_empty() {
        grad += stack.ineq_jacobian.tr_mul(lambda);
    }
    let eq = amax(&stack.eq_values);
    let ineq = stack.ineq_values.iter().fold(T::zero(), |a, &g| a.max(g));
    let comp = stack
        .ineq_values
        .iter()
        .zip(lambda.iter())
        .fold(T::zero(), |a, (&g, &l)| a.max((g * l).abs()));
    KktResiduals {
        stationarity: amax(&grad).to_f64_lossy(),
        eq_violation: eq.to_f64_lossy(),
        ineq_violation: ineq.to_f64_lossy(),
        complementarity: comp.to_f64_lossy(),
    }
}

pub fn kkt_residuals<T: Real>(
    problem: &PathProblem<T>,
    skeleton: &Skeleton<T>,
    solution: &NlpSolution<T>,
) -> Result<KktResiduals> {
    let stack = assemble(problem, skeleton, &solution.x_star)?;
    Ok(kkt_residuals_at(&stack, &solution.nu, &solution.lambda))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::path::{AffineFeature, CostClass, CostTerm, Mode, StepRange};
    use nalgebra::DMatrix;

    /// min 1/2 x^2 s.t. x >= 1, posed on two independent scalar steps.
    fn bound_problem() -> (PathProblem<f64>, Skeleton<f64>) {
        let p = PathProblem::at_rest(2, 1, 1.0, 1.0, DVector::from_element(1, 0.0))
            .unwrap()
            .with_actuated(vec![])
            .unwrap()
            .with_cost(CostTerm::new(
                AffineFeature::target("x", DVector::from_element(1, 0.0), 1.0),
                StepRange::new(1, 2),
                CostClass::State,
            ))
            .unwrap();
        let bound = AffineFeature::new(
            "x>=1",
            1,
            DMatrix::from_element(1, 1, -1.0),
            DVector::from_element(1, 1.0),
        )
        .unwrap();
        let s = Skeleton::new("bound").with_mode(Mode::new("m", StepRange::new(1, 2)).with_ineq(bound));
        (p, s)
    }

    fn tight() -> SolverConfig {
        SolverConfig {
            tol_step: 1e-10,
            tol_constraint: 1e-10,
            ..SolverConfig::default()
        }
    }

    #[test]
    fn hand_kkt_bound_example() {
        let (p, s) = bound_problem();
        let sol = solve(&p, &s, None, &tight()).unwrap();
        assert!(sol.converged());
        for i in 0..2 {
            assert!((sol.x_star[i] - 1.0).abs() < 1e-8, "x = {}", sol.x_star[i]);
            assert!((sol.lambda[i] - 1.0).abs() < 1e-8, "lambda = {}", sol.lambda[i]);
        }
        assert_eq!(sol.active_set, vec![true, true]);
        let kkt = kkt_residuals(&p, &s, &sol).unwrap();
        assert!(kkt.stationarity < 1e-8);
        assert!(kkt.eq_violation == 0.0);
        assert!(kkt.ineq_violation < 1e-8);
        assert!(kkt.complementarity < 1e-8);
    }

    #[test]
    fn perturbation_increases_stationarity() {
        let (p, s) = bound_problem();
        let sol = solve(&p, &s, None, &SolverConfig::default()).unwrap();
        let base = kkt_residuals(&p, &s, &sol).unwrap().stationarity;
        for dir in [1.0, -1.0] {
            let mut moved = sol.clone();
            moved.x_star[0] += dir * 1e-3;
            let r = kkt_residuals(&p, &s, &moved).unwrap().stationarity;
            assert!(r > base);
        }
    }

    #[test]
    fn linear_residuals_converge_in_one_step() {
        let p = PathProblem::at_rest(5, 2, 0.2, 0.5, DVector::from_vec(vec![0.0, 1.0]))
            .unwrap()
            .with_cost(CostTerm::new(
                AffineFeature::target("goal", DVector::from_vec(vec![1.0, -1.0]), 4.0),
                StepRange::single(5),
                CostClass::State,
            ))
            .unwrap();
        let s = Skeleton::free("free", 5);
        let sol = solve(&p, &s, None, &SolverConfig::default()).unwrap();
        assert!(sol.converged());
        assert_eq!(sol.diagnostics.inner_iterations, 1);
        let st = assemble(&p, &s, &p.constant_path()).unwrap();
        let j = st.jacobian.to_dense();
        // r(x) = J x + r0 with r0 = r(0 - shift); solve normal equations densely.
        let x0 = p.constant_path();
        let r0 = &st.residuals - &j * &x0;
        let closed = (j.transpose() * &j).lu().solve(&(-j.transpose() * r0)).unwrap();
        assert!((&sol.x_star - closed).amax() < 1e-8);
        assert_eq!(kkt_residuals(&p, &s, &sol).unwrap().eq_violation, 0.0);
    }

    #[test]
    fn zero_gradient_gives_zero_step() {
        let (p, _) = bound_problem();
        let s = Skeleton::free("free", 2);
        let st = assemble(&p, &s, &DVector::zeros(2)).unwrap();
        let state = AlState::new(1.0, 0, 0);
        let (step, _) = gauss_newton_step(&st, &state, 1e-8, 1e2).unwrap();
        assert_eq!(step, DVector::zeros(2));
    }

    #[test]
    fn duals_stay_nonnegative() {
        let (p, s) = bound_problem();
        let st = assemble(&p, &s, &DVector::from_element(2, 5.0)).unwrap();
        let mut state = AlState::new(10.0, 0, 2);
        state.update_duals(&st);
        assert!(state.lambda.iter().all(|&l| l == 0.0));
    }

    #[test]
    fn bad_initial_path_is_a_shape_error() {
        let (p, s) = bound_problem();
        let r = solve(&p, &s, Some(&DVector::zeros(5)), &SolverConfig::default());
        assert!(matches!(r, Err(Error::Shape(_))));
    }

    #[test]
    fn trace_records_iterations() {
        let (p, s) = bound_problem();
        let cfg = SolverConfig {
            trace: true,
            ..SolverConfig::default()
        };
        let sol = solve(&p, &s, None, &cfg).unwrap();
        assert!(!sol.diagnostics.trace.is_empty());
        assert_eq!(sol.diagnostics.trace[0].outer, 0);
    }
}
