//! Constrained dynamic programming over second-order path features: local
//! quadratic expansions, the backward recursion and the resulting linear
//! feedback policies.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::path::{assemble, CostClass, FeatureStack, PathProblem, Skeleton};
use crate::scalar::{lit, to_f64_vec, Real};
use crate::solver::NlpSolution;


/// Multipliers applied to each cost class before the backward pass.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase", default)]
pub struct CostWeights {
    pub control: f64,
    pub state: f64,
}

impl Default for CostWeights {
    fn default() -> Self {
        Self { control: 1.0, state: 1.0 }
    }
}

impl CostWeights {
    pub fn is_identity(&self) -> bool {
        self.control == 1.0 && self.state == 1.0
    }

    fn of(&self, class: Option<CostClass>) -> f64 {
        match class {
            Some(CostClass::Control) => self.control,
            Some(CostClass::State) => self.state,
            None => 1.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase", default)]
pub struct KodpConfig {
    pub cost_weights: CostWeights,
    /// Weight `rho` of the proximal term `rho |x - x*|^2`.
    pub proximal: f64,
    /// First regularization tried on a singular step KKT matrix, relative
    /// to the largest entry of the step Hessian (at least 1).
    pub kkt_reg_init: f64,
    pub kkt_reg_max: f64,
    /// KKT matrices with reciprocal condition number below this are
    /// treated as singular.
    pub rcond_min: f64,
    /// Relative tolerance for dropping dependent constraint rows.
    pub rank_tol: f64,
}

impl Default for KodpConfig {
    fn default() -> Self {
        Self {
            cost_weights: CostWeights::default(),
            proximal: 0.0,
            kkt_reg_init: 1e-9,
            kkt_reg_max: 1e-3,
            rcond_min: 1e-13,
            rank_tol: 1e-9,
        }
    }
}

/// Local expansion of one step's cost and constraints over
/// `z = [x_{n-2}; x_{n-1}; x_n]`.
#[derive(Debug, Clone)]
pub struct StepQuadratic<T: Real> {
    /// `3d x 3d` Hessian of the step cost.
    pub hessian: DMatrix<T>,
    pub gradient: DVector<T>,
    pub constant: T,
    /// Constraint rows over the past configurations, `r x 2d`.
    pub l: DMatrix<T>,
    /// Constraint rows over the current configuration, `r x d`.
    pub m: DMatrix<T>,
}

impl<T: Real> StepQuadratic<T> {
    pub fn zeros(dim: usize) -> Self {
        Self {
            hessian: DMatrix::zeros(3 * dim, 3 * dim),
            gradient: DVector::zeros(3 * dim),
            constant: T::zero(),
            l: DMatrix::zeros(0, 2 * dim),
            m: DMatrix::zeros(0, dim),
        }
    }

    pub fn dim(&self) -> usize {
        self.m.ncols()
    }

    pub fn constraint_rows(&self) -> usize {
        self.m.nrows()
    }
}

/// Per-step expansions plus the expansion point.
#[derive(Debug, Clone)]
pub struct Quadratics<T: Real> {
    pub skeleton_id: String,
    pub dim: usize,
    /// `[x_{-1}; x_0; x_1; ...; x_N]` flattened.
    pub configs: DVector<T>,
    pub steps: Vec<StepQuadratic<T>>,
    pub active_rows: Vec<bool>,
}

impl<T: Real> Quadratics<T> {
    pub fn horizon(&self) -> usize {
        self.steps.len()
    }
}

fn embed_offset(window: usize, dim: usize) -> usize {
    (3 - window) * dim
}

/// Expands costs and constraints of `skeleton` about `x`. Inequality rows
/// flagged in `active` are kept as equalities, the rest are dropped.
pub fn quadratize_at<T: Real>(
    problem: &PathProblem<T>,
    skeleton: &Skeleton<T>,
    x: &DVector<T>,
    active: &[bool],
    config: &KodpConfig,
) -> Result<Quadratics<T>> {
    let stack = assemble(problem, skeleton, x)?;
    let d = problem.dim();
    let n_steps = problem.horizon();
    let mut steps: Vec<StepQuadratic<T>> = (0..n_steps).map(|_| StepQuadratic::zeros(d)).collect();
    add_cost_blocks(&stack, d, &mut steps, &config.cost_weights);
    let rho = lit::<T>(config.proximal);
    if rho != T::zero() {
        for s in &mut steps {
            for i in 2 * d..3 * d {
                s.hessian[(i, i)] += lit::<T>(2.0) * rho;
            }
        }
    }
    let mut rows: Vec<Vec<DVector<T>>> = vec![Vec::new(); n_steps];
    collect_rows(&stack, d, false, active, &mut rows);
    collect_rows(&stack, d, true, active, &mut rows);
    for (s, r) in steps.iter_mut().zip(rows) {
        s.l = DMatrix::from_fn(r.len(), 2 * d, |i, j| r[i][j]);
        s.m = DMatrix::from_fn(r.len(), d, |i, j| r[i][2 * d + j]);
    }
    let mut configs = Vec::with_capacity((n_steps + 2) * d);
    configs.extend(problem.prefix()[0].iter().copied());
    configs.extend(problem.prefix()[1].iter().copied());
    configs.extend(x.iter().copied());
    Ok(Quadratics {
        skeleton_id: skeleton.id.clone(),
        dim: d,
        configs: DVector::from_vec(configs),
        steps,
        active_rows: active.to_vec(),
    })
}

/// [`quadratize_at`] at a converged solution with its active set.
pub fn quadratize<T: Real>(
    problem: &PathProblem<T>,
    skeleton: &Skeleton<T>,
    solution: &NlpSolution<T>,
    config: &KodpConfig,
) -> Result<Quadratics<T>> {
    if !solution.converged() {
        return Err(Error::NotConverged {
            skeleton: skeleton.id.clone(),
            status: format!("{:?}", solution.diagnostics.status),
        });
    }
    quadratize_at(problem, skeleton, &solution.x_star, &solution.active_set, config)
}

fn add_cost_blocks<T: Real>(stack: &FeatureStack<T>, d: usize, steps: &mut [StepQuadratic<T>], w: &CostWeights) {
    let half = lit::<T>(0.5);
    for b in stack.jacobian.blocks() {
        let weight = lit::<T>(w.of(b.class));
        let win = b.window(d);
        let off = embed_offset(win, d);
        let r = stack.residuals.rows(b.row, b.nrows());
        let s = &mut steps[b.step - 1];
        let gram = b.values.tr_mul(&b.values) * weight;
        let mut hv = s.hessian.view_mut((off, off), (win * d, win * d));
        hv += gram;
        let mut gv = s.gradient.rows_mut(off, win * d);
        gv += b.values.tr_mul(&r) * weight;
        s.constant += half * weight * r.norm_squared();
    }
}

fn collect_rows<T: Real>(
    stack: &FeatureStack<T>,
    d: usize,
    inequality: bool,
    active: &[bool],
    rows: &mut [Vec<DVector<T>>],
) {
    let jac = if inequality { &stack.ineq_jacobian } else { &stack.eq_jacobian };
    for b in jac.blocks() {
        let win = b.window(d);
        let off = embed_offset(win, d);
        for i in 0..b.nrows() {
            if inequality && !active.get(b.row + i).copied().unwrap_or(false) {
                continue;
            }
            let mut row = DVector::zeros(3 * d);
            row.rows_mut(off, win * d).copy_from(&b.values.row(i).transpose());
            rows[b.step - 1].push(row);
        }
    }
}

/// Feedback law and cost-to-go of one step.
#[derive(Debug, Clone)]
pub struct StepPolicy<T: Real> {
    /// Cost-to-go Hessian over `[dx_{n-2}; dx_{n-1}]`.
    pub v: DMatrix<T>,
    pub v_lin: DVector<T>,
    pub v_bar: T,
    pub u_ff: DVector<T>,
    /// `d x 2d` gain on the past deviation.
    pub k: DMatrix<T>,
    /// Dual sensitivity `mu = mu_ff + mu_k p` over all constraint rows;
    /// dropped rows stay zero.
    pub mu_ff: DVector<T>,
    pub mu_k: DMatrix<T>,
    /// Constraint rows at this step, before dropping dependent ones.
    pub constraint_rows: usize,
    pub dropped_rows: Vec<usize>,
    /// Regularization added to the current-step Hessian, zero if none.
    pub regularization: T,
}

impl<T: Real> StepPolicy<T> {
    pub fn flagged(&self) -> bool {
        !self.dropped_rows.is_empty() || self.regularization != T::zero()
    }
}

/// Time-varying affine feedback around one skeleton's optimum.
#[derive(Debug, Clone)]
pub struct KodpPolicy<T: Real> {
    pub skeleton_id: String,
    pub dim: usize,
    /// `[x_{-1}; x_0; x_1; ...; x_N]` flattened.
    pub configs: DVector<T>,
    pub steps: Vec<StepPolicy<T>>,
    pub active_rows: Vec<bool>,
}

impl<T: Real> KodpPolicy<T> {
    pub fn horizon(&self) -> usize {
        self.steps.len()
    }

    /// Reference configuration `n`, `n >= -1`.
    pub fn reference(&self, n: isize) -> DVector<T> {
        let s = (n + 1) as usize * self.dim;
        DVector::from_column_slice(&self.configs.as_slice()[s..s + self.dim])
    }

    /// `[x*_{n-2}; x*_{n-1}]`.
    pub fn past_reference(&self, n: usize) -> DVector<T> {
        let s = (n - 1) * self.dim;
        DVector::from_column_slice(&self.configs.as_slice()[s..s + 2 * self.dim])
    }

    pub fn record(&self) -> PolicyRecord {
        let mat = |m: &DMatrix<T>| -> Vec<Vec<f64>> {
            m.row_iter().map(|r| r.iter().map(|v| v.to_f64_lossy()).collect()).collect()
        };
        PolicyRecord {
            schema: POLICY_SCHEMA.to_owned(),
            skeleton_id: self.skeleton_id.clone(),
            dim: self.dim,
            reference: to_f64_vec(self.configs.as_slice()),
            active_rows: self.active_rows.clone(),
            steps: self
                .steps
                .iter()
                .enumerate()
                .map(|(i, s)| StepRecord {
                    n: i + 1,
                    v: mat(&s.v),
                    v_lin: to_f64_vec(s.v_lin.as_slice()),
                    v_bar: s.v_bar.to_f64_lossy(),
                    u_ff: to_f64_vec(s.u_ff.as_slice()),
                    k: mat(&s.k),
                    constraint_rows: s.constraint_rows,
                    dropped_rows: s.dropped_rows.clone(),
                    regularization: s.regularization.to_f64_lossy(),
                })
                .collect(),
        }
    }
}

pub const POLICY_SCHEMA: &str = "slgp.policy/1";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct StepRecord {
    pub n: usize,
    pub v: Vec<Vec<f64>>,
    pub v_lin: Vec<f64>,
    pub v_bar: f64,
    pub u_ff: Vec<f64>,
    pub k: Vec<Vec<f64>>,
    pub constraint_rows: usize,
    pub dropped_rows: Vec<usize>,
    pub regularization: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct PolicyRecord {
    pub schema: String,
    pub skeleton_id: String,
    pub dim: usize,
    pub reference: Vec<f64>,
    pub active_rows: Vec<bool>,
    pub steps: Vec<StepRecord>,
}

/// Indices of a maximal linearly independent subset of the rows of `m`,
/// chosen greedily in order.
fn independent_rows<T: Real>(m: &DMatrix<T>, tol: T) -> Vec<usize> {
    let scale = m.row_iter().fold(T::zero(), |a, r| a.max(r.norm()));
    let mut basis: Vec<DVector<T>> = Vec::new();
    let mut keep = Vec::new();
    if scale == T::zero() {
        return keep;
    }
    for (i, row) in m.row_iter().enumerate() {
        let mut v = row.transpose();
        for b in &basis {
            let c = b.dot(&v);
            v -= b * c;
        }
        let norm = v.norm();
        if norm > tol * scale {
            basis.push(v / norm);
            keep.push(i);
        }
    }
    keep
}

/// Reciprocal condition number after symmetric row-norm equilibration, so
/// that badly scaled but well-posed systems are not mistaken for singular.
fn rcond<T: Real>(m: &DMatrix<T>) -> T {
    let scale: Vec<T> = m
        .row_iter()
        .map(|r| {
            let a = r.iter().fold(T::zero(), |a, &b| a.max(b.abs()));
            if a > T::zero() {
                T::one() / a.sqrt()
            } else {
                T::one()
            }
        })
        .collect();
    let eq = DMatrix::from_fn(m.nrows(), m.ncols(), |i, j| m[(i, j)] * scale[i] * scale[j]);
    let s = eq.singular_values();
    let max = s.iter().fold(T::zero(), |a, &b| a.max(b));
    let min = s.iter().fold(max, |a, &b| a.min(b));
    if max == T::zero() {
        T::zero()
    } else {
        min / max
    }
}

/// Runs the backward recursion from `J_{N+1} = 0`.
pub fn backward_pass<T: Real>(q: &Quadratics<T>, config: &KodpConfig) -> Result<KodpPolicy<T>> {
    let d = q.dim;
    let n_steps = q.horizon();
    let mut steps: Vec<StepPolicy<T>> = Vec::with_capacity(n_steps);
    let mut v_next = DMatrix::<T>::zeros(2 * d, 2 * d);
    let mut v_lin_next = DVector::<T>::zeros(2 * d);
    let mut v_bar_next = T::zero();
    for n in (1..=n_steps).rev() {
        let sq = &q.steps[n - 1];
        let mut h = sq.hessian.clone();
        let mut g = sq.gradient.clone();
        {
            let mut hv = h.view_mut((d, d), (2 * d, 2 * d));
            hv += &v_next;
            let mut gv = g.rows_mut(d, 2 * d);
            gv += &v_lin_next;
        }
        let c0 = sq.constant + v_bar_next;
        let dd = h.view((0, 0), (2 * d, 2 * d)).clone_owned();
        let cc = h.view((0, 2 * d), (2 * d, d)).clone_owned();
        let mut e = h.view((2 * d, 2 * d), (d, d)).clone_owned();
        let d_lin = g.rows(0, 2 * d).clone_owned();
        let e_lin = g.rows(2 * d, d).clone_owned();

        let keep = independent_rows(&sq.m, lit(config.rank_tol));
        let dropped: Vec<usize> = (0..sq.constraint_rows()).filter(|i| !keep.contains(i)).collect();
        let r = keep.len();
        let m = DMatrix::from_fn(r, d, |i, j| sq.m[(keep[i], j)]);
        let l = DMatrix::from_fn(r, 2 * d, |i, j| sq.l[(keep[i], j)]);

        let build = |e: &DMatrix<T>| {
            let mut kkt = DMatrix::zeros(d + r, d + r);
            kkt.view_mut((0, 0), (d, d)).copy_from(e);
            kkt.view_mut((0, d), (d, r)).copy_from(&m.transpose());
            kkt.view_mut((d, 0), (r, d)).copy_from(&m);
            kkt
        };
        let rcond_min = lit::<T>(config.rcond_min);
        let mut kkt = build(&e);
        let mut reg = T::zero();
        let e_scale = e.amax().max(T::one());
        if rcond(&kkt) < rcond_min {
            reg = lit(config.kkt_reg_init);
            loop {
                let mut er = e.clone();
                for i in 0..d {
                    er[(i, i)] += reg * e_scale;
                }
                kkt = build(&er);
                if rcond(&kkt) >= rcond_min {
                    e = er;
                    break;
                }
                if reg >= lit(config.kkt_reg_max) {
                    return Err(Error::Policy {
                        step: n,
                        reason: format!(
                            "step KKT matrix singular after regularization {:e}",
                            reg.to_f64_lossy()
                        ),
                    });
                }
                reg *= lit::<T>(10.0);
            }
        }
        let inv = kkt.try_inverse().ok_or_else(|| Error::Policy {
            step: n,
            reason: "step KKT matrix could not be inverted".into(),
        })?;
        let m_uu = inv.view((0, 0), (d, d));
        let m_um = inv.view((0, d), (d, r));
        let m_mu = inv.view((d, 0), (r, d));
        let m_mm = inv.view((d, d), (r, r));

        // [u; mu] = inv * [-(C^T p + e); -l p]
        let ct = cc.transpose();
        let k = -(m_uu * &ct) - m_um * &l;
        let u_ff = -(m_uu * &e_lin);
        let mu_k_kept = -(m_mu * &ct) - m_mm * &l;
        let mu_ff_kept = -(m_mu * &e_lin);
        let mut mu_k = DMatrix::zeros(sq.constraint_rows(), 2 * d);
        let mut mu_ff = DVector::zeros(sq.constraint_rows());
        for (i, &row) in keep.iter().enumerate() {
            mu_k.set_row(row, &mu_k_kept.row(i));
            mu_ff[row] = mu_ff_kept[i];
        }

        let ck = &cc * &k;
        let ek = &e * &k;
        let v = {
            let raw = &dd + &ck + ck.transpose() + k.transpose() * &ek;
            (&raw + raw.transpose()) * lit::<T>(0.5)
        };
        let eu = &e * &u_ff;
        let v_lin = &d_lin + &cc * &u_ff + k.transpose() * &eu + k.transpose() * &e_lin;
        let v_bar = c0 + lit::<T>(0.5) * u_ff.dot(&eu) + e_lin.dot(&u_ff);

        v_next = v.clone();
        v_lin_next = v_lin.clone();
        v_bar_next = v_bar;
        steps.push(StepPolicy {
            v,
            v_lin,
            v_bar,
            u_ff,
            k,
            mu_ff,
            mu_k,
            constraint_rows: sq.constraint_rows(),
            dropped_rows: dropped,
            regularization: reg,
        });
    }
    steps.reverse();
    Ok(KodpPolicy {
        skeleton_id: q.skeleton_id.clone(),
        dim: d,
        configs: q.configs.clone(),
        steps,
        active_rows: q.active_rows.clone(),
    })
}

/// `(dx_n, dmu_n)` for the past deviation `[dx_{n-2}; dx_{n-1}]`.
pub fn step_policy<T: Real>(policy: &KodpPolicy<T>, n: usize, delta_past: &DVector<T>) -> (DVector<T>, DVector<T>) {
    let s = &policy.steps[n - 1];
    (&s.u_ff + &s.k * delta_past, &s.mu_ff + &s.mu_k * delta_past)
}

/// `J_n(p) = 1/2 p^T V_n p + v_n^T p + vbar_n`, zero for `n = N + 1`.
pub fn cost_to_go<T: Real>(policy: &KodpPolicy<T>, n: usize, delta_past: &DVector<T>) -> T {
    if n > policy.horizon() {
        return T::zero();
    }
    let s = &policy.steps[n - 1];
    lit::<T>(0.5) * delta_past.dot(&(&s.v * delta_past)) + s.v_lin.dot(delta_past) + s.v_bar
}

/// Quadratize and run the backward pass in one go.
pub fn build_policy<T: Real>(
    problem: &PathProblem<T>,
    skeleton: &Skeleton<T>,
    solution: &NlpSolution<T>,
    config: &KodpConfig,
) -> Result<KodpPolicy<T>> {
    backward_pass(&quadratize(problem, skeleton, solution, config)?, config)
}
