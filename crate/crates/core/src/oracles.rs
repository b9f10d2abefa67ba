//! Independent reference computations used to validate the solver, the
//! Laplace components and the feedback recursion.
//!
//! Everything here works on `f64` and dense matrices and deliberately avoids
//! the banded and recursive code paths it checks.

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::kodp::KodpPolicy;
use crate::path::{
    assemble, AffineFeature, CostClass, CostTerm, FeatureStack, Mode, PathProblem, Skeleton, StepRange, Switch,
};

/// Reaching comparison used as the arithmetic reference: `fStar` per
/// skeleton.
pub const REACHING_F_STAR: [f64; 4] = [0.1930, 0.7682, 0.6204, 1.4827];
/// Entropy ratios (not logs) per skeleton.
pub const REACHING_RATIO: [f64; 4] = [0.0041, 0.0099, 0.0584, 0.0646];
pub const REACHING_WEIGHTS: [f64; 4] = [0.0626, 0.0850, 0.5810, 0.2713];
pub const REACHING_COST: f64 = 2.918;

/// First-order LQ chain `x_n = A x_{n-1} + w_n` with step cost
/// `1/2 w^T R w + 1/2 x_n^T Q x_n`.
#[derive(Debug, Clone)]
pub struct LqInstance {
    pub a: DMatrix<f64>,
    pub r: DMatrix<f64>,
    pub q: DMatrix<f64>,
    pub x0: DVector<f64>,
    pub horizon: usize,
}

fn random_matrix(rng: &mut ChaCha8Rng, rows: usize, cols: usize, scale: f64) -> DMatrix<f64> {
    DMatrix::from_fn(rows, cols, |_, _| rng.random_range(-scale..scale))
}

fn random_spd(rng: &mut ChaCha8Rng, n: usize, floor: f64) -> DMatrix<f64> {
    let a = random_matrix(rng, n, n, 1.0);
    &a * a.transpose() + DMatrix::identity(n, n) * floor
}

/// Upper factor `S` with `S^T S = m`.
fn sqrt_factor(m: &DMatrix<f64>) -> DMatrix<f64> {
    m.clone()
        .cholesky()
        .expect("generated matrices are positive definite")
        .l()
        .transpose()
}

impl LqInstance {
    pub fn random(seed: u64, horizon: usize, dim: usize) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let a = DMatrix::identity(dim, dim) + random_matrix(&mut rng, dim, dim, 0.3);
        let r = random_spd(&mut rng, dim, 0.5);
        let q = random_spd(&mut rng, dim, 0.1);
        let x0 = DVector::from_fn(dim, |_, _| rng.random_range(-1.0..1.0));
        Self { a, r, q, x0, horizon }
    }

    pub fn dim(&self) -> usize {
        self.a.nrows()
    }

    /// The chain as a path problem with affine residuals and no stochastic
    /// dynamics term.
    pub fn problem(&self) -> Result<PathProblem<f64>> {
        let d = self.dim();
        let sr = sqrt_factor(&self.r);
        let sq = sqrt_factor(&self.q);
        let mut trans = DMatrix::zeros(d, 2 * d);
        trans.view_mut((0, 0), (d, d)).copy_from(&(-&sr * &self.a));
        trans.view_mut((0, d), (d, d)).copy_from(&sr);
        let all = StepRange::new(1, self.horizon);
        PathProblem::at_rest(self.horizon, d, 1.0, 1.0, self.x0.clone())?
            .with_actuated(vec![])?
            .with_cost(CostTerm::new(
                AffineFeature::new("transition", 2, trans, DVector::zeros(d))?,
                all,
                CostClass::Control,
            ))?
            .with_cost(CostTerm::new(
                AffineFeature::new("state", 1, sq, DVector::zeros(d))?,
                all,
                CostClass::State,
            ))
    }

    /// Standard backward Riccati iteration. Entry `n - 1` holds the LQR gain
    /// `K_n` (`w_n = K_n x_{n-1}`) and the value matrix `P_n` of the cost
    /// from step `n` onward as a function of `x_{n-1}`.
    pub fn riccati(&self) -> Vec<(DMatrix<f64>, DMatrix<f64>)> {
        let d = self.dim();
        let mut p_next = DMatrix::zeros(d, d);
        let mut out = Vec::with_capacity(self.horizon);
        for _ in 0..self.horizon {
            let s = &self.q + &p_next;
            let inv = (&self.r + &s).try_inverse().expect("R + S is positive definite");
            let k = -&inv * &s * &self.a;
            let p = self.a.transpose() * &s * &self.a - self.a.transpose() * &s * &inv * &s * &self.a;
            let p = (&p + p.transpose()) * 0.5;
            out.push((k, p.clone()));
            p_next = p;
        }
        out.reverse();
        out
    }
}

/// Largest deviation between a policy for an [`LqInstance`] and the Riccati
/// solution: the gain on `x_{n-1}` must be `A + K_n`, the gain on `x_{n-2}`
/// zero, and the value Hessian must be `blockdiag(0, P_n)`.
pub fn riccati_deviation(policy: &KodpPolicy<f64>, inst: &LqInstance) -> f64 {
    let d = inst.dim();
    let mut worst: f64 = 0.0;
    for (n, (k, p)) in inst.riccati().iter().enumerate() {
        let s = &policy.steps[n];
        let mut expected_k = DMatrix::zeros(d, 2 * d);
        expected_k.view_mut((0, d), (d, d)).copy_from(&(&inst.a + k));
        let mut expected_v = DMatrix::zeros(2 * d, 2 * d);
        expected_v.view_mut((d, d), (d, d)).copy_from(p);
        worst = worst.max((&s.k - expected_k).amax()).max((&s.v - expected_v).amax());
    }
    worst
}

/// Random second-order quadratic problem with equality constraints at a few
/// steps. Costs are dense affine residuals over full windows.
pub fn random_constrained_instance(seed: u64, horizon: usize, dim: usize) -> Result<(PathProblem<f64>, Skeleton<f64>)> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let d = dim;
    let x0 = DVector::from_fn(d, |_, _| rng.random_range(-1.0..1.0));
    let mut problem = PathProblem::at_rest(horizon, d, 0.5, 0.7, x0)?;
    for n in 1..=horizon {
        let a = random_matrix(&mut rng, d + 1, 3 * d, 1.0);
        let b = DVector::from_fn(d + 1, |_, _| rng.random_range(-1.0..1.0));
        problem.add_cost(CostTerm::new(
            AffineFeature::new(format!("cost{n}"), 3, a, b)?,
            StepRange::single(n),
            if n % 2 == 0 { CostClass::State } else { CostClass::Control },
        ))?;
    }
    let mut skeleton = Skeleton::new(format!("random{seed}"));
    let mut start = 1;
    let windows = [(2usize, 1usize), (4, 3), (horizon, 1)];
    for (i, &(step, window)) in windows.iter().enumerate() {
        let step = step.min(horizon);
        if step < start {
            continue;
        }
        if step > start {
            skeleton = skeleton.with_mode(Mode::new(format!("free{i}"), StepRange::new(start, step - 1)));
        }
        let a = random_matrix(&mut rng, 1, window * d, 1.0);
        let b = DVector::from_element(1, rng.random_range(-0.5..0.5));
        skeleton = skeleton.with_mode(
            Mode::new(format!("touch{i}"), StepRange::single(step))
                .with_eq(AffineFeature::new(format!("touch{i}"), window, a, b)?),
        );
        start = step + 1;
    }
    if start <= horizon {
        skeleton = skeleton.with_mode(Mode::new("tail", StepRange::new(start, horizon)));
    }
    let starts: Vec<usize> = skeleton.modes.iter().skip(1).map(|m| m.window.start).collect();
    for (i, at) in starts.into_iter().enumerate() {
        skeleton = skeleton.with_switch(Switch::new(format!("s{i}"), at));
    }
    Ok((problem, skeleton))
}

/// Optimum of the quadratic tail problem from step `n` on: configurations
/// before `n` are pinned at `x + [delta_past]` and the remaining ones are
/// free, costs and equality constraints of steps `>= n` are linearized about
/// `x`. Returns the optimal value and the optimal deviation of all free
/// configurations `n..=N`.
pub fn dense_tail_qp(
    problem: &PathProblem<f64>,
    skeleton: &Skeleton<f64>,
    x: &DVector<f64>,
    n: usize,
    delta_past: &DVector<f64>,
) -> Result<(f64, DVector<f64>)> {
    let stack = assemble(problem, skeleton, x)?;
    if !stack.ineq_values.is_empty() {
        return Err(Error::Shape("dense tail oracle supports equality constraints only".into()));
    }
    let d = problem.dim();
    let big_n = problem.horizon();
    let total = (big_n + 2) * d;
    let full_rows = |jac: &crate::path::BlockJacobian<f64>| -> (DMatrix<f64>, Vec<usize>) {
        let count: usize = jac.blocks().iter().filter(|b| b.step >= n).map(|b| b.nrows()).sum();
        let mut out = DMatrix::zeros(count, total);
        let mut idx = Vec::with_capacity(count);
        let mut k = 0;
        for b in jac.blocks().iter().filter(|b| b.step >= n) {
            let col = ((b.first + 1) as usize) * d;
            for i in 0..b.nrows() {
                out.view_mut((k, col), (1, b.values.ncols())).copy_from(&b.values.row(i));
                idx.push(b.row + i);
                k += 1;
            }
        }
        (out, idx)
    };
    let (jc, cost_rows) = full_rows(&stack.jacobian);
    let (jh, _) = full_rows(&stack.eq_jacobian);
    let r0 = DVector::from_fn(cost_rows.len(), |i, _| stack.residuals[cost_rows[i]]);
    let past_col = (n - 1) * d; // column of x_{n-2}
    let free_col = (n + 1) * d; // column of x_n
    let nf = total - free_col;
    let jf = jc.columns(free_col, nf).clone_owned();
    let jp = jc.columns(past_col, 2 * d).clone_owned();
    let hf = jh.columns(free_col, nf).clone_owned();
    let hp = jh.columns(past_col, 2 * d).clone_owned();
    let rr = &r0 + &jp * delta_past;
    let nh = hf.nrows();
    let mut kkt = DMatrix::zeros(nf + nh, nf + nh);
    kkt.view_mut((0, 0), (nf, nf)).copy_from(&(jf.transpose() * &jf));
    kkt.view_mut((0, nf), (nf, nh)).copy_from(&hf.transpose());
    kkt.view_mut((nf, 0), (nh, nf)).copy_from(&hf);
    let mut rhs = DVector::zeros(nf + nh);
    rhs.rows_mut(0, nf).copy_from(&(-jf.transpose() * &rr));
    rhs.rows_mut(nf, nh).copy_from(&(-&hp * delta_past));
    let sol = kkt
        .lu()
        .solve(&rhs)
        .ok_or_else(|| Error::Numeric("dense tail KKT system is singular".into()))?;
    let dx = sol.rows(0, nf).clone_owned();
    let res = &rr + &jf * &dx;
    Ok((0.5 * res.norm_squared(), dx))
}

/// Dense Gaussian posterior of an unconstrained path problem with affine
/// residuals: mean `H^{-1} J^T (J x - r(x))`-style normal equations and
/// covariance `H^{-1}` with `H = J^T J`.
pub fn dense_gaussian_posterior(stack: &FeatureStack<f64>, x: &DVector<f64>) -> Result<(DVector<f64>, DMatrix<f64>)> {
    let j = stack.jacobian.to_dense();
    let h = j.transpose() * &j;
    let inv = h
        .clone()
        .try_inverse()
        .ok_or_else(|| Error::Numeric("posterior Hessian is singular".into()))?;
    // r(y) = r(x) + J (y - x); the minimizer solves H y = J^T (J x - r(x)).
    let lin = j.transpose() * (&j * x - &stack.residuals);
    Ok((&inv * lin, inv))
}

/// Random unconstrained second-order quadratic problem, small enough for
/// dense posterior checks.
pub fn random_lq_path_problem(seed: u64, horizon: usize, dim: usize) -> Result<PathProblem<f64>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let x0 = DVector::from_fn(dim, |_, _| rng.random_range(-1.0..1.0));
    let target = DVector::from_fn(dim, |_, _| rng.random_range(-1.0..1.0));
    let a = random_matrix(&mut rng, dim, 2 * dim, 1.0);
    PathProblem::at_rest(horizon, dim, 0.25, 0.5, x0)?
        .with_cost(CostTerm::new(
            AffineFeature::target("goal", target, 2.0),
            StepRange::single(horizon),
            CostClass::State,
        ))?
        .with_cost(CostTerm::new(
            AffineFeature::new("coupling", 2, a * 0.3, DVector::zeros(dim))?,
            StepRange::new(1, horizon),
            CostClass::State,
        ))
}
