use std::sync::Arc;

use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use super::feature::{DynamicsFeature, Feature, SharedFeature};
use crate::error::{Error, Result};
use crate::scalar::Real;

/// Which part of the objective a cost term belongs to.
///
/// `Control` terms make up the uncontrolled path prior `f_0`; `State` terms
/// make up the trajectory cost `f_V` (including terminal costs).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CostClass {
    Control,
    State,
}

/// Inclusive range of steps.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct StepRange {
    pub start: usize,
    pub end: usize,
}

impl StepRange {
    pub fn new(start: usize, end: usize) -> Self {
        Self { start, end }
    }

    pub fn single(step: usize) -> Self {
        Self::new(step, step)
    }

    pub fn contains(&self, step: usize) -> bool {
        self.start <= step && step <= self.end
    }

    pub fn len(&self) -> usize {
        if self.end < self.start {
            0
        } else {
            self.end - self.start + 1
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn steps(&self) -> impl Iterator<Item = usize> {
        self.start..=self.end
    }
}

#[derive(Clone, Debug)]
pub struct CostTerm<T: Real> {
    pub feature: SharedFeature<T>,
    pub steps: StepRange,
    pub class: CostClass,
}

impl<T: Real> CostTerm<T> {
    pub fn new(feature: impl Feature<T> + 'static, steps: StepRange, class: CostClass) -> Self {
        Self {
            feature: Arc::new(feature),
            steps,
            class,
        }
    }
}

/// Discrete path optimization problem over `horizon` configurations of
/// dimension `dim`, with a fixed two-configuration prefix.
#[derive(Clone, Debug)]
pub struct PathProblem<T: Real> {
    horizon: usize,
    dim: usize,
    dt: T,
    sigma: T,
    prefix: [DVector<T>; 2],
    actuated: Vec<usize>,
    dynamics: Option<Arc<DynamicsFeature<T>>>,
    costs: Vec<CostTerm<T>>,
}

impl<T: Real> PathProblem<T> {
    /// `prefix` is `[x_{-1}, x_0]`. All coordinates start out actuated.
    pub fn new(horizon: usize, dim: usize, dt: T, sigma: T, prefix: [DVector<T>; 2]) -> Result<Self> {
        if horizon < 2 {
            return Err(Error::Shape(format!("horizon must be >= 2, got {horizon}")));
        }
        if dim == 0 {
            return Err(Error::Shape("configuration dimension must be positive".into()));
        }
        if !(dt > T::zero()) || !(sigma > T::zero()) {
            return Err(Error::Shape("dt and sigma must be positive".into()));
        }
        if prefix.iter().any(|p| p.len() != dim) {
            return Err(Error::Shape(format!("prefix configurations must have dimension {dim}")));
        }
        let mut problem = Self {
            horizon,
            dim,
            dt,
            sigma,
            prefix,
            actuated: Vec::new(),
            dynamics: None,
            costs: Vec::new(),
        };
        problem.set_actuated((0..dim).collect())?;
        Ok(problem)
    }

    /// Prefix with zero initial velocity: `x_{-1} = x_0`.
    pub fn at_rest(horizon: usize, dim: usize, dt: T, sigma: T, x0: DVector<T>) -> Result<Self> {
        Self::new(horizon, dim, dt, sigma, [x0.clone(), x0])
    }

    /// Restricts the stochastic dynamics to the given coordinates. Remaining
    /// coordinates are driven only by constraints and explicit cost terms.
    pub fn with_actuated(mut self, actuated: Vec<usize>) -> Result<Self> {
        self.set_actuated(actuated)?;
        Ok(self)
    }

    fn set_actuated(&mut self, mut actuated: Vec<usize>) -> Result<()> {
        actuated.sort_unstable();
        actuated.dedup();
        if actuated.iter().any(|&i| i >= self.dim) {
            return Err(Error::Shape("actuated index out of range".into()));
        }
        self.dynamics = (!actuated.is_empty())
            .then(|| Arc::new(DynamicsFeature::new(self.dim, actuated.clone(), self.dt, self.sigma)));
        self.actuated = actuated;
        Ok(())
    }

    pub fn with_cost(mut self, term: CostTerm<T>) -> Result<Self> {
        self.add_cost(term)?;
        Ok(self)
    }

    pub fn add_cost(&mut self, term: CostTerm<T>) -> Result<()> {
        let w = term.feature.window();
        if !(1..=3).contains(&w) {
            return Err(Error::Shape(format!(
                "cost `{}` has window {w}, expected 1..=3",
                term.feature.name()
            )));
        }
        if term.steps.start < 1 || term.steps.end > self.horizon || term.steps.is_empty() {
            return Err(Error::Shape(format!(
                "cost `{}` steps {:?} outside [1, {}]",
                term.feature.name(),
                term.steps,
                self.horizon
            )));
        }
        self.costs.push(term);
        Ok(())
    }

    pub fn horizon(&self) -> usize {
        self.horizon
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    /// Number of decision variables, `horizon * dim`.
    pub fn num_vars(&self) -> usize {
        self.horizon * self.dim
    }

    pub fn dt(&self) -> T {
        self.dt
    }

    pub fn sigma(&self) -> T {
        self.sigma
    }

    pub fn prefix(&self) -> &[DVector<T>; 2] {
        &self.prefix
    }

    pub fn actuated(&self) -> &[usize] {
        &self.actuated
    }

    pub fn dynamics(&self) -> Option<&Arc<DynamicsFeature<T>>> {
        self.dynamics.as_ref()
    }

    pub fn costs(&self) -> &[CostTerm<T>] {
        &self.costs
    }

    /// Configuration `n` of the path `x`, where `n = 0` and `n = -1` address
    /// the prefix.
    pub fn config<'a>(&'a self, x: &'a DVector<T>, n: isize) -> &'a [T] {
        match n {
            -1 => self.prefix[0].as_slice(),
            0 => self.prefix[1].as_slice(),
            n if n >= 1 && (n as usize) <= self.horizon => {
                let s = (n as usize - 1) * self.dim;
                &x.as_slice()[s..s + self.dim]
            }
            _ => panic!("configuration index {n} out of range"),
        }
    }

    /// Path holding `x_0` at every step.
    pub fn constant_path(&self) -> DVector<T> {
        let x0 = &self.prefix[1];
        DVector::from_fn(self.num_vars(), |i, _| x0[i % self.dim])
    }

    /// Path with `configs[n-1]` as configuration `n`.
    pub fn path_from_configs(&self, configs: &[DVector<T>]) -> Result<DVector<T>> {
        if configs.len() != self.horizon || configs.iter().any(|c| c.len() != self.dim) {
            return Err(Error::Shape("path must have horizon configurations of dimension dim".into()));
        }
        Ok(DVector::from_iterator(
            self.num_vars(),
            configs.iter().flat_map(|c| c.iter().copied()),
        ))
    }

    pub fn split_configs(&self, x: &DVector<T>) -> Vec<DVector<T>> {
        (1..=self.horizon as isize)
            .map(|n| DVector::from_column_slice(self.config(x, n)))
            .collect()
    }
}
