//! Feature providers: residual vectors with analytic Jacobians over a window
//! of consecutive configurations.

use std::fmt;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::scalar::{lit, Real};

/// Residual value and Jacobian of a feature.
///
/// `jacobian` has `value.len()` rows and `dim * window` columns, ordered
/// oldest configuration first.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureEval<T: Real> {
    pub value: DVector<T>,
    pub jacobian: DMatrix<T>,
}

/// A k-order feature reading `window()` consecutive configurations ending at
/// the step it is attached to.
pub trait Feature<T: Real>: Send + Sync {
    fn name(&self) -> &str;

    /// Number of configurations read, between 1 and 3.
    fn window(&self) -> usize;

    /// Number of residual rows.
    fn dim(&self) -> usize;

    /// `configs[k]` is configuration `step + 1 - window + k`.
    fn evaluate(&self, step: usize, configs: &[&[T]]) -> Result<FeatureEval<T>, String>;
}

impl<T: Real> fmt::Debug for dyn Feature<T> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Feature({}, window={}, dim={})", self.name(), self.window(), self.dim())
    }
}

pub type SharedFeature<T> = Arc<dyn Feature<T>>;

/// Second finite difference `(x_n - 2 x_{n-1} + x_{n-2}) / dt^2`.
pub fn finite_diff_accel<T: Real>(window: &[&[T]], dt: T) -> Result<DVector<T>> {
    if window.len() != 3 {
        return Err(Error::Shape(format!(
            "acceleration needs 3 configurations, got {}",
            window.len()
        )));
    }
    let d = window[0].len();
    if window.iter().any(|c| c.len() != d) {
        return Err(Error::Shape("configurations differ in dimension".into()));
    }
    if !(dt > T::zero()) {
        return Err(Error::Shape("dt must be positive".into()));
    }
    let two = lit::<T>(2.0);
    Ok(DVector::from_fn(d, |i, _| {
        (window[2][i] - two * window[1][i] + window[0][i]) / (dt * dt)
    }))
}

/// Euler-Maruyama negative log-likelihood residual of a double integrator
/// driven by white acceleration noise of intensity `sigma`.
///
/// Only the actuated coordinates contribute. The residual is
/// `(x_n - 2 x_{n-1} + x_{n-2}) / (sigma dt^{3/2})`, so that half its squared
/// norm is the per-step negative log-density up to a constant.
#[derive(Debug, Clone)]
pub struct DynamicsFeature<T: Real> {
    dim: usize,
    actuated: Vec<usize>,
    scale: T,
}

impl<T: Real> DynamicsFeature<T> {
    pub fn new(dim: usize, actuated: Vec<usize>, dt: T, sigma: T) -> Self {
        let scale = T::one() / (sigma * dt * dt.sqrt());
        Self {
            dim,
            actuated,
            scale,
        }
    }

    pub fn scale(&self) -> T {
        self.scale
    }

    pub fn actuated(&self) -> &[usize] {
        &self.actuated
    }
}

impl<T: Real> Feature<T> for DynamicsFeature<T> {
    fn name(&self) -> &str {
        "dynamics"
    }

    fn window(&self) -> usize {
        3
    }

    fn dim(&self) -> usize {
        self.actuated.len()
    }

    fn evaluate(&self, _step: usize, configs: &[&[T]]) -> Result<FeatureEval<T>, String> {
        let d = self.dim;
        let two = lit::<T>(2.0);
        let mut value = DVector::zeros(self.actuated.len());
        let mut jacobian = DMatrix::zeros(self.actuated.len(), 3 * d);
        for (r, &i) in self.actuated.iter().enumerate() {
            value[r] = (configs[2][i] - two * configs[1][i] + configs[0][i]) * self.scale;
            jacobian[(r, i)] = self.scale;
            jacobian[(r, d + i)] = -two * self.scale;
            jacobian[(r, 2 * d + i)] = self.scale;
        }
        Ok(FeatureEval { value, jacobian })
    }
}

/// Affine feature `A [x_{n-w+1}; ...; x_n] + b`.
#[derive(Debug, Clone)]
pub struct AffineFeature<T: Real> {
    name: String,
    window: usize,
    a: DMatrix<T>,
    b: DVector<T>,
}

impl<T: Real> AffineFeature<T> {
    pub fn new(name: impl Into<String>, window: usize, a: DMatrix<T>, b: DVector<T>) -> Result<Self> {
        if !(1..=3).contains(&window) {
            return Err(Error::Shape(format!("window {window} outside 1..=3")));
        }
        if a.nrows() != b.len() || !a.ncols().is_multiple_of(window) {
            return Err(Error::Shape(format!(
                "affine feature: A is {}x{}, b has {} rows, window {}",
                a.nrows(),
                a.ncols(),
                b.len(),
                window
            )));
        }
        Ok(Self {
            name: name.into(),
            window,
            a,
            b,
        })
    }

    /// Weighted offset from a target on one configuration: `w (x_n - target)`.
    pub fn target(name: impl Into<String>, target: DVector<T>, weight: T) -> Self {
        let d = target.len();
        Self {
            name: name.into(),
            window: 1,
            a: DMatrix::identity(d, d) * weight,
            b: -target * weight,
        }
    }

    /// Weighted finite-difference velocity `w (x_n - x_{n-1})`.
    pub fn velocity(name: impl Into<String>, dim: usize, weight: T) -> Self {
        let mut a = DMatrix::zeros(dim, 2 * dim);
        for i in 0..dim {
            a[(i, i)] = -weight;
            a[(i, dim + i)] = weight;
        }
        Self {
            name: name.into(),
            window: 2,
            a,
            b: DVector::zeros(dim),
        }
    }
}

impl<T: Real> Feature<T> for AffineFeature<T> {
    fn name(&self) -> &str {
        &self.name
    }

    fn window(&self) -> usize {
        self.window
    }

    fn dim(&self) -> usize {
        self.b.len()
    }

    fn evaluate(&self, _step: usize, configs: &[&[T]]) -> Result<FeatureEval<T>, String> {
        let stacked: Vec<T> = configs.iter().flat_map(|c| c.iter().copied()).collect();
        if stacked.len() != self.a.ncols() {
            return Err(format!(
                "expected {} stacked entries, got {}",
                self.a.ncols(),
                stacked.len()
            ));
        }
        let x = DVector::from_vec(stacked);
        Ok(FeatureEval {
            value: &self.a * x + &self.b,
            jacobian: self.a.clone(),
        })
    }
}

type EvalFn<T> = dyn Fn(usize, &[&[T]]) -> FeatureEval<T> + Send + Sync;

/// Feature backed by a closure, for scenario-specific geometry.
pub struct FnFeature<T: Real> {
    name: String,
    window: usize,
    dim: usize,
    eval: Box<EvalFn<T>>,
}

impl<T: Real> FnFeature<T> {
    pub fn new<F>(name: impl Into<String>, window: usize, dim: usize, eval: F) -> Self
    where
        F: Fn(usize, &[&[T]]) -> FeatureEval<T> + Send + Sync + 'static,
    {
        Self {
            name: name.into(),
            window,
            dim,
            eval: Box::new(eval),
        }
    }
}

impl<T: Real> Feature<T> for FnFeature<T> {
    fn name(&self) -> &str {
        &self.name
    }

    fn window(&self) -> usize {
        self.window
    }

    fn dim(&self) -> usize {
        self.dim
    }

    fn evaluate(&self, step: usize, configs: &[&[T]]) -> Result<FeatureEval<T>, String> {
        let out = (self.eval)(step, configs);
        if out.value.len() != self.dim || out.jacobian.nrows() != self.dim {
            return Err(format!(
                "declared {} rows, produced value {} / jacobian {}",
                self.dim,
                out.value.len(),
                out.jacobian.nrows()
            ));
        }
        Ok(out)
    }
}

/// Largest mismatch between the analytic Jacobian of `feature` and central
/// differences with step `h`, relative to `max(|J|_max, 1)`.
pub fn feature_jacobian_error<T: Real>(
    feature: &dyn Feature<T>,
    step: usize,
    configs: &[&[T]],
    h: T,
) -> Result<T, String> {
    let analytic = feature.evaluate(step, configs)?.jacobian;
    let d = configs.first().map_or(0, |c| c.len());
    let mut work: Vec<Vec<T>> = configs.iter().map(|c| c.to_vec()).collect();
    let two = lit::<T>(2.0);
    let mut worst = T::zero();
    for (k, cfg) in configs.iter().enumerate() {
        for i in 0..cfg.len() {
            let orig = work[k][i];
            work[k][i] = orig + h;
            let plus = {
                let view: Vec<&[T]> = work.iter().map(|v| v.as_slice()).collect();
                feature.evaluate(step, &view)?.value
            };
            work[k][i] = orig - h;
            let minus = {
                let view: Vec<&[T]> = work.iter().map(|v| v.as_slice()).collect();
                feature.evaluate(step, &view)?.value
            };
            work[k][i] = orig;
            let col = (plus - minus) / (two * h);
            for r in 0..col.len() {
                let diff = (col[r] - analytic[(r, k * d + i)]).abs();
                worst = worst.max(diff);
            }
        }
    }
    let scale = analytic.iter().fold(T::one(), |a, &b| a.max(b.abs()));
    Ok(worst / scale)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn acceleration_of_constant_and_ramp() {
        let c = [0.3, -1.0];
        let acc = finite_diff_accel::<f64>(&[&c, &c, &c], 0.1).unwrap();
        assert_eq!(acc, DVector::zeros(2));
        let ramp = finite_diff_accel::<f64>(&[&[0.0], &[1.0], &[2.0]], 1.0).unwrap();
        assert_eq!(ramp[0], 0.0);
        let quad = finite_diff_accel::<f64>(&[&[0.0], &[1.0], &[4.0]], 1.0).unwrap();
        assert_eq!(quad[0], 2.0);
    }

    #[test]
    fn acceleration_rejects_bad_shapes() {
        assert!(finite_diff_accel::<f64>(&[&[0.0], &[1.0, 2.0], &[4.0]], 1.0).is_err());
        assert!(finite_diff_accel::<f64>(&[&[0.0], &[1.0]], 1.0).is_err());
    }

    #[test]
    fn dynamics_residual_unit_example() {
        let f = DynamicsFeature::<f64>::new(1, vec![0], 1.0, 1.0);
        let out = f.evaluate(1, &[&[0.0], &[0.0], &[1.0]]).unwrap();
        assert_eq!(out.value[0], 1.0);
        assert_eq!(0.5 * out.value.norm_squared(), 0.5);
    }

    #[test]
    fn doubling_sigma_halves_residual() {
        let w: [&[f64]; 3] = [&[0.1, 0.0], &[0.4, 0.2], &[0.2, 0.9]];
        let a = DynamicsFeature::new(2, vec![0, 1], 0.2, 0.3).evaluate(3, &w).unwrap();
        let b = DynamicsFeature::new(2, vec![0, 1], 0.2, 0.6).evaluate(3, &w).unwrap();
        assert!((&a.value - &b.value * 2.0).amax() < 1e-12);
    }

    #[test]
    fn dynamics_ignores_unactuated_coordinates() {
        let f = DynamicsFeature::<f64>::new(3, vec![0, 2], 1.0, 1.0);
        let out = f
            .evaluate(2, &[&[0.0, 5.0, 0.0], &[0.0, -3.0, 0.0], &[1.0, 9.0, 2.0]])
            .unwrap();
        assert_eq!(out.value.as_slice(), &[1.0, 2.0]);
        assert_eq!(out.jacobian.column(1).amax(), 0.0);
    }

    #[test]
    fn affine_jacobian_matches_differences() {
        let a = DMatrix::from_row_slice(2, 4, &[1.0, 2.0, -1.0, 0.5, 0.0, 3.0, 1.0, -2.0]);
        let f = AffineFeature::new("aff", 2, a, DVector::from_vec(vec![0.1, -0.2])).unwrap();
        let err = feature_jacobian_error(&f, 2, &[&[0.3, 0.1], &[-0.5, 0.7]], 1e-6).unwrap();
        assert!(err < 1e-8);
    }

    #[test]
    fn fn_feature_dimension_is_checked() {
        let f = FnFeature::<f64>::new("bad", 1, 2, |_, c| FeatureEval {
            value: DVector::from_element(1, c[0][0]),
            jacobian: DMatrix::zeros(1, 1),
        });
        assert!(f.evaluate(1, &[&[1.0]]).is_err());
    }
}
