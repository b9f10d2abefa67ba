//! Stacked residuals, constraints and their block-banded Jacobians.

use std::sync::Arc;

use nalgebra::{DMatrix, DVector};

use super::feature::Feature;
use super::problem::{CostClass, PathProblem};
use super::skeleton::{structural_violations, Skeleton};
use crate::error::{Error, Result};
use crate::linalg::SymBanded;
use crate::scalar::{lit, Real};

/// Jacobian rows of one feature evaluated at one step.
#[derive(Debug, Clone)]
pub struct JacobianBlock<T: Real> {
    /// First row of this block in the stacked vector.
    pub row: usize,
    pub step: usize,
    pub feature: Arc<str>,
    /// Cost class for residual blocks, `None` for constraints.
    pub class: Option<CostClass>,
    /// Index of the oldest configuration in the window; `0` and `-1` are the
    /// prefix.
    pub first: isize,
    /// `rows x (window * dim)`, prefix columns included.
    pub values: DMatrix<T>,
}

impl<T: Real> JacobianBlock<T> {
    pub fn nrows(&self) -> usize {
        self.values.nrows()
    }

    pub fn window(&self, dim: usize) -> usize {
        self.values.ncols() / dim
    }

    /// Number of leading columns that belong to prefix configurations.
    fn prefix_cols(&self, dim: usize) -> usize {
        ((1 - self.first).max(0) as usize).min(self.window(dim)) * dim
    }

    /// Offset of the first decision variable touched by this block.
    fn var_offset(&self, dim: usize) -> usize {
        (self.first.max(1) as usize - 1) * dim
    }
}

/// Sparse Jacobian made of row blocks that each span at most three
/// consecutive configurations.
#[derive(Debug, Clone)]
pub struct BlockJacobian<T: Real> {
    rows: usize,
    dim: usize,
    horizon: usize,
    blocks: Vec<JacobianBlock<T>>,
}

impl<T: Real> BlockJacobian<T> {
    fn new(dim: usize, horizon: usize) -> Self {
        Self {
            rows: 0,
            dim,
            horizon,
            blocks: Vec::new(),
        }
    }

    fn push(&mut self, mut block: JacobianBlock<T>) {
        block.row = self.rows;
        self.rows += block.nrows();
        self.blocks.push(block);
    }

    pub fn nrows(&self) -> usize {
        self.rows
    }

    pub fn ncols(&self) -> usize {
        self.dim * self.horizon
    }

    pub fn blocks(&self) -> &[JacobianBlock<T>] {
        &self.blocks
    }

    /// `(step, feature, component)` that produced `row`.
    pub fn origin(&self, row: usize) -> Option<(usize, &str, usize)> {
        self.blocks
            .iter()
            .find(|b| b.row <= row && row < b.row + b.nrows())
            .map(|b| (b.step, &*b.feature, row - b.row))
    }

    /// `J x` where `x` covers the decision variables only.
    pub fn mul_vec(&self, x: &DVector<T>) -> DVector<T> {
        let mut out = DVector::zeros(self.rows);
        for b in &self.blocks {
            let skip = b.prefix_cols(self.dim);
            let width = b.values.ncols() - skip;
            let xs = x.rows(b.var_offset(self.dim), width);
            let y = b.values.columns(skip, width) * xs;
            out.rows_mut(b.row, b.nrows()).copy_from(&y);
        }
        out
    }

    /// `J^T r` restricted to decision variables.
    pub fn tr_mul(&self, r: &DVector<T>) -> DVector<T> {
        let mut out = DVector::zeros(self.ncols());
        for b in &self.blocks {
            let skip = b.prefix_cols(self.dim);
            let width = b.values.ncols() - skip;
            let rs = r.rows(b.row, b.nrows());
            let g = b.values.columns(skip, width).tr_mul(&rs);
            let mut dst = out.rows_mut(b.var_offset(self.dim), width);
            dst += g;
        }
        out
    }

    /// Dense copy over decision variables (prefix columns dropped).
    pub fn to_dense(&self) -> DMatrix<T> {
        let mut out = DMatrix::zeros(self.rows, self.ncols());
        for b in &self.blocks {
            let skip = b.prefix_cols(self.dim);
            let width = b.values.ncols() - skip;
            out.view_mut((b.row, b.var_offset(self.dim)), (b.nrows(), width))
                .copy_from(&b.values.columns(skip, width));
        }
        out
    }

    /// Dense rows selected by `keep`, in order.
    pub fn dense_rows(&self, keep: &[usize]) -> DMatrix<T> {
        let full = self.to_dense();
        DMatrix::from_fn(keep.len(), full.ncols(), |i, j| full[(keep[i], j)])
    }

    /// Adds `sum_r w_r j_r^T j_r` into `h`, skipping blocks rejected by
    /// `select` and rows with zero weight.
    pub fn accumulate_gram<W, S>(&self, h: &mut SymBanded<T>, weight: W, select: S)
    where
        W: Fn(usize) -> T,
        S: Fn(&JacobianBlock<T>) -> bool,
    {
        for b in self.blocks.iter().filter(|b| select(b)) {
            let skip = b.prefix_cols(self.dim);
            let width = b.values.ncols() - skip;
            if width == 0 {
                continue;
            }
            let sub = b.values.columns(skip, width);
            let mut weighted = sub.clone_owned();
            let mut any = false;
            for r in 0..b.nrows() {
                let w = weight(b.row + r);
                if w != T::zero() {
                    any = true;
                }
                weighted.row_mut(r).scale_mut(w);
            }
            if !any {
                continue;
            }
            let gram = sub.tr_mul(&weighted);
            h.add_block(b.var_offset(self.dim), &gram);
        }
    }
}

/// Everything the solver and the downstream stages need at one path.
#[derive(Debug, Clone)]
pub struct FeatureStack<T: Real> {
    pub residuals: DVector<T>,
    pub jacobian: BlockJacobian<T>,
    pub eq_values: DVector<T>,
    pub eq_jacobian: BlockJacobian<T>,
    pub ineq_values: DVector<T>,
    pub ineq_jacobian: BlockJacobian<T>,
}

impl<T: Real> FeatureStack<T> {
    /// Scalar half-bandwidth of Hessians built from this stack.
    pub fn bandwidth(&self) -> usize {
        3 * self.jacobian.dim - 1
    }

    /// `f(x) = 1/2 |r|^2`.
    pub fn cost(&self) -> T {
        lit::<T>(0.5) * self.residuals.norm_squared()
    }

    /// Half squared norm over the residual blocks of one class.
    pub fn class_cost(&self, class: CostClass) -> T {
        let half = lit::<T>(0.5);
        self.jacobian
            .blocks
            .iter()
            .filter(|b| b.class == Some(class))
            .map(|b| half * self.residuals.rows(b.row, b.nrows()).norm_squared())
            .fold(T::zero(), |a, b| a + b)
    }

    pub fn gradient(&self) -> DVector<T> {
        self.jacobian.tr_mul(&self.residuals)
    }

    /// Gauss-Newton Hessian `J^T J`, optionally restricted to one cost class.
    pub fn gauss_newton_hessian(&self, class: Option<CostClass>) -> SymBanded<T> {
        let mut h = SymBanded::zeros(self.jacobian.ncols(), self.bandwidth());
        self.jacobian
            .accumulate_gram(&mut h, |_| T::one(), |b| class.is_none() || b.class == class);
        h
    }

    /// Largest equality magnitude or positive inequality value.
    pub fn max_violation(&self) -> T {
        let eq = self.eq_values.iter().fold(T::zero(), |a, &v| a.max(v.abs()));
        self.ineq_values.iter().fold(eq, |a, &v| a.max(v))
    }
}

fn evaluate_at<T: Real>(
    problem: &PathProblem<T>,
    feature: &dyn Feature<T>,
    step: usize,
    x: &DVector<T>,
) -> Result<(isize, DVector<T>, DMatrix<T>)> {
    let w = feature.window();
    let first = step as isize + 1 - w as isize;
    let err = |reason: String| Error::Feature {
        step: step as isize,
        feature: feature.name().to_owned(),
        reason,
    };
    if first < -1 {
        return Err(err(format!("window of {w} reaches before the prefix")));
    }
    let configs: Vec<&[T]> = (first..=step as isize).map(|n| problem.config(x, n)).collect();
    let out = feature.evaluate(step, &configs).map_err(err)?;
    if out.jacobian.ncols() != w * problem.dim() || out.jacobian.nrows() != out.value.len() {
        return Err(err(format!(
            "jacobian is {}x{}, expected {}x{}",
            out.jacobian.nrows(),
            out.jacobian.ncols(),
            out.value.len(),
            w * problem.dim()
        )));
    }
    if out.value.iter().chain(out.jacobian.iter()).any(|v| !v.is_finite()) {
        return Err(Error::NonFinite {
            step: step as isize,
            feature: feature.name().to_owned(),
        });
    }
    Ok((first, out.value, out.jacobian))
}

struct Builder<T: Real> {
    values: Vec<T>,
    jac: BlockJacobian<T>,
}

impl<T: Real> Builder<T> {
    fn new(dim: usize, horizon: usize) -> Self {
        Self {
            values: Vec::new(),
            jac: BlockJacobian::new(dim, horizon),
        }
    }

    fn push(
        &mut self,
        step: usize,
        feature: &dyn Feature<T>,
        class: Option<CostClass>,
        (first, value, jacobian): (isize, DVector<T>, DMatrix<T>),
    ) {
        self.values.extend(value.iter().copied());
        self.jac.push(JacobianBlock {
            row: 0,
            step,
            feature: Arc::from(feature.name()),
            class,
            first,
            values: jacobian,
        });
    }

    fn finish(self) -> (DVector<T>, BlockJacobian<T>) {
        (DVector::from_vec(self.values), self.jac)
    }
}

/// Evaluates all cost features of `problem` and all constraints imposed by
/// `skeleton` on the path `x`, step by step.
pub fn assemble<T: Real>(
    problem: &PathProblem<T>,
    skeleton: &Skeleton<T>,
    x: &DVector<T>,
) -> Result<FeatureStack<T>> {
    if x.len() != problem.num_vars() {
        return Err(Error::Shape(format!(
            "path has {} entries, expected {}",
            x.len(),
            problem.num_vars()
        )));
    }
    let violations = structural_violations(skeleton, problem.horizon());
    if !violations.is_empty() {
        let msg: Vec<String> = violations.iter().map(ToString::to_string).collect();
        return Err(Error::InvalidSkeleton(msg.join("; ")));
    }
    let (d, n_steps) = (problem.dim(), problem.horizon());
    let mut cost = Builder::new(d, n_steps);
    let mut eq = Builder::new(d, n_steps);
    let mut ineq = Builder::new(d, n_steps);

    for n in 1..=n_steps {
        if let Some(dynamics) = problem.dynamics() {
            let f: &dyn Feature<T> = dynamics.as_ref();
            cost.push(n, f, Some(CostClass::Control), evaluate_at(problem, f, n, x)?);
        }
        for term in problem.costs().iter().filter(|t| t.steps.contains(n)) {
            let f = term.feature.as_ref();
            cost.push(n, f, Some(term.class), evaluate_at(problem, f, n, x)?);
        }
        for mode in skeleton.modes.iter().filter(|m| m.window.contains(n)) {
            for f in &mode.eq {
                eq.push(n, f.as_ref(), None, evaluate_at(problem, f.as_ref(), n, x)?);
            }
            for f in &mode.ineq {
                ineq.push(n, f.as_ref(), None, evaluate_at(problem, f.as_ref(), n, x)?);
            }
        }
        for sw in skeleton.switches.iter().filter(|s| s.at_step == n) {
            for f in &sw.eq {
                eq.push(n, f.as_ref(), None, evaluate_at(problem, f.as_ref(), n, x)?);
            }
            for f in &sw.ineq {
                ineq.push(n, f.as_ref(), None, evaluate_at(problem, f.as_ref(), n, x)?);
            }
        }
    }

    let (residuals, jacobian) = cost.finish();
    let (eq_values, eq_jacobian) = eq.finish();
    let (ineq_values, ineq_jacobian) = ineq.finish();
    Ok(FeatureStack {
        residuals,
        jacobian,
        eq_values,
        eq_jacobian,
        ineq_values,
        ineq_jacobian,
    })
}

/// Worst relative Jacobian error over every feature instance of the stack,
/// checked by central differences.
pub fn check_jacobians<T: Real>(
    problem: &PathProblem<T>,
    skeleton: &Skeleton<T>,
    x: &DVector<T>,
    h: T,
) -> Result<T> {
    let mut worst = T::zero();
    let mut check = |f: &dyn Feature<T>, n: usize| -> Result<()> {
        let first = n as isize + 1 - f.window() as isize;
        let configs: Vec<&[T]> = (first..=n as isize).map(|k| problem.config(x, k)).collect();
        let e = super::feature::feature_jacobian_error(f, n, &configs, h).map_err(|reason| {
            Error::Feature {
                step: n as isize,
                feature: f.name().to_owned(),
                reason,
            }
        })?;
        worst = worst.max(e);
        Ok(())
    };
    for n in 1..=problem.horizon() {
        if let Some(dynamics) = problem.dynamics() {
            check(dynamics.as_ref(), n)?;
        }
        for term in problem.costs().iter().filter(|t| t.steps.contains(n)) {
            check(term.feature.as_ref(), n)?;
        }
        for mode in skeleton.modes.iter().filter(|m| m.window.contains(n)) {
            for f in mode.eq.iter().chain(&mode.ineq) {
                check(f.as_ref(), n)?;
            }
        }
        for sw in skeleton.switches.iter().filter(|s| s.at_step == n) {
            for f in sw.eq.iter().chain(&sw.ineq) {
                check(f.as_ref(), n)?;
            }
        }
    }
    Ok(worst)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::path::{AffineFeature, CostTerm, FnFeature, Mode, StepRange, Switch};
    use crate::path::FeatureEval;

    fn toy_problem() -> PathProblem<f64> {
        let x0 = DVector::from_vec(vec![0.2, -0.1]);
        PathProblem::at_rest(6, 2, 0.5, 0.8, x0)
            .unwrap()
            .with_cost(CostTerm::new(
                AffineFeature::target("goal", DVector::from_vec(vec![1.0, 1.0]), 3.0),
                StepRange::single(6),
                CostClass::State,
            ))
            .unwrap()
    }

    fn circle_feature() -> FnFeature<f64> {
        FnFeature::new("circle", 1, 1, |_, c| FeatureEval {
            value: DVector::from_element(1, c[0][0] * c[0][0] + c[0][1] * c[0][1] - 1.0),
            jacobian: DMatrix::from_row_slice(1, 2, &[2.0 * c[0][0], 2.0 * c[0][1]]),
        })
    }

    #[test]
    fn free_skeleton_has_no_constraint_rows() {
        let p = toy_problem();
        let s = Skeleton::free("free", 6);
        let st = assemble(&p, &s, &p.constant_path()).unwrap();
        assert_eq!(st.eq_values.len(), 0);
        assert_eq!(st.ineq_values.len(), 0);
        assert_eq!(st.residuals.len(), 6 * 2 + 2);
    }

    #[test]
    fn control_cost_is_half_sum_of_squared_dynamics_residuals() {
        let p = toy_problem();
        let x = DVector::from_fn(12, |i, _| (i as f64 * 0.37).sin());
        let st = assemble(&p, &Skeleton::free("free", 6), &x).unwrap();
        let dynamics = p.dynamics().unwrap();
        let mut total = 0.0;
        for n in 1..=6isize {
            let w = [p.config(&x, n - 2), p.config(&x, n - 1), p.config(&x, n)];
            total += 0.5 * dynamics.evaluate(n as usize, &w).unwrap().value.norm_squared();
        }
        assert_eq!(st.class_cost(CostClass::Control), total);
    }

    #[test]
    fn equality_rows_follow_mode_windows() {
        let p = toy_problem();
        let s = Skeleton::new("on-circle")
            .with_mode(Mode::new("free", StepRange::new(1, 3)))
            .with_mode(Mode::new("circle", StepRange::new(4, 6)).with_eq(circle_feature()))
            .with_switch(Switch::new("touch", 4).with_eq(circle_feature()));
        let st = assemble(&p, &s, &p.constant_path()).unwrap();
        assert_eq!(st.eq_values.len(), s.eq_row_count());
        assert_eq!(st.eq_values.len(), 4);
        let steps: Vec<usize> = st.eq_jacobian.blocks().iter().map(|b| b.step).collect();
        assert_eq!(steps, vec![4, 4, 5, 6]);
        assert_eq!(st.eq_jacobian.origin(3), Some((6, "circle", 0)));
    }

    #[test]
    fn dense_jacobian_matches_finite_differences() {
        let p = toy_problem();
        let s = Skeleton::free("c", 6).with_mode(Mode::new("x", StepRange::new(1, 6)));
        let s = Skeleton {
            modes: vec![Mode::new("c", StepRange::new(1, 6)).with_eq(circle_feature())],
            ..s
        };
        let x = DVector::from_fn(12, |i, _| 0.3 + 0.1 * i as f64);
        let st = assemble(&p, &s, &x).unwrap();
        let h = 1e-6;
        let dense = st.jacobian.to_dense();
        let dense_eq = st.eq_jacobian.to_dense();
        for j in 0..12 {
            let mut xp = x.clone();
            xp[j] += h;
            let mut xm = x.clone();
            xm[j] -= h;
            let sp = assemble(&p, &s, &xp).unwrap();
            let sm = assemble(&p, &s, &xm).unwrap();
            let col = (&sp.residuals - &sm.residuals) / (2.0 * h);
            let col_eq = (&sp.eq_values - &sm.eq_values) / (2.0 * h);
            let scale = dense.amax().max(1.0);
            assert!((col - dense.column(j)).amax() / scale < 1e-4);
            assert!((col_eq - dense_eq.column(j)).amax() / dense_eq.amax().max(1.0) < 1e-4);
        }
        assert!(check_jacobians(&p, &s, &x, 1e-6).unwrap() < 1e-4);
    }

    #[test]
    fn gram_and_products_agree_with_dense() {
        let p = toy_problem();
        let x = DVector::from_fn(12, |i, _| (i as f64).cos());
        let st = assemble(&p, &Skeleton::free("free", 6), &x).unwrap();
        let dense = st.jacobian.to_dense();
        let h = st.gauss_newton_hessian(None).to_dense();
        assert!((h - dense.transpose() * &dense).amax() < 1e-9);
        assert!((st.gradient() - dense.transpose() * &st.residuals).amax() < 1e-9);
        let v = DVector::from_fn(12, |i, _| i as f64);
        assert!((st.jacobian.mul_vec(&v) - &dense * &v).amax() < 1e-9);
    }

    #[test]
    fn assembly_is_deterministic() {
        let p = toy_problem();
        let x = DVector::from_fn(12, |i, _| (i as f64 * 1.3).sin());
        let s = Skeleton::free("free", 6);
        let a = assemble(&p, &s, &x).unwrap();
        let b = assemble(&p, &s, &x).unwrap();
        assert_eq!(a.residuals, b.residuals);
        assert_eq!(a.jacobian.to_dense(), b.jacobian.to_dense());
    }

    #[test]
    fn invalid_skeleton_and_bad_shapes_are_rejected() {
        let p = toy_problem();
        let s = Skeleton::<f64>::new("gap").with_mode(Mode::new("a", StepRange::new(1, 3)));
        assert!(matches!(
            assemble(&p, &s, &p.constant_path()),
            Err(Error::InvalidSkeleton(_))
        ));
        assert!(matches!(
            assemble(&p, &Skeleton::free("f", 6), &DVector::zeros(3)),
            Err(Error::Shape(_))
        ));
    }

    #[test]
    fn nonfinite_feature_names_step_and_feature() {
        let p = toy_problem();
        let bad = FnFeature::new("blowup", 1, 1, |_, c: &[&[f64]]| FeatureEval {
            value: DVector::from_element(1, 1.0 / (c[0][0] - c[0][0])),
            jacobian: DMatrix::zeros(1, 2),
        });
        let s = Skeleton::new("s").with_mode(Mode::new("m", StepRange::new(1, 6)).with_eq(bad));
        match assemble(&p, &s, &p.constant_path()) {
            Err(Error::NonFinite { step, feature }) => {
                assert_eq!(step, 1);
                assert_eq!(feature, "blowup");
            }
            other => panic!("unexpected {other:?}"),
        }
    }
}
