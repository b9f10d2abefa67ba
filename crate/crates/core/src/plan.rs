//! End-to-end offline planning of a scenario: solve every skeleton, build the
//! path mixture and the per-skeleton feedback policies.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::exec::{future_log_ratios, CompositeController, ControllerMode};
use crate::kodp::{build_policy, KodpConfig, KodpPolicy};
use crate::laplace::{build_component, LaplaceConfig, PathMixture, PriorMode};
use crate::scalar::Real;
use crate::scenarios::Scenario;
use crate::solver::{solve, NlpSolution, SolverConfig};

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase", default)]
pub struct PlanConfig {
    pub solver: SolverConfig,
    pub laplace: LaplaceConfig,
    pub kodp: KodpConfig,
    pub prior_mode: PriorMode,
}

impl PlanConfig {
    pub fn validate(&self) -> Result<()> {
        self.solver.validate()
    }
}

#[derive(Debug, Clone)]
pub struct Plan<T: Real> {
    pub solutions: Vec<NlpSolution<T>>,
    pub mixture: PathMixture<T>,
    pub policies: Vec<KodpPolicy<T>>,
    pub future_log_ratios: Vec<Vec<T>>,
}

impl<T: Real> Plan<T> {
    pub fn controller(&self, mode: ControllerMode, hysteresis: T) -> Result<CompositeController<T>> {
        CompositeController::new(self.policies.clone(), self.future_log_ratios.clone(), mode, hysteresis)
    }
}

/// Solves every skeleton of `scenario` from its initial path.
pub fn solve_all<T: Real>(scenario: &Scenario<T>, config: &SolverConfig) -> Result<Vec<NlpSolution<T>>> {
    scenario
        .skeletons
        .iter()
        .zip(&scenario.initial_paths)
        .map(|(s, x0)| solve(&scenario.problem, s, Some(x0), config))
        .collect()
}

pub fn plan<T: Real>(scenario: &Scenario<T>, config: &PlanConfig) -> Result<Plan<T>> {
    config.validate()?;
    let solutions = solve_all(scenario, &config.solver)?;
    if let Some((s, sol)) = scenario.skeletons.iter().zip(&solutions).find(|(_, sol)| !sol.converged()) {
        return Err(Error::NotConverged {
            skeleton: s.id.clone(),
            status: format!("{:?}", sol.diagnostics.status),
        });
    }
    let p = &scenario.problem;
    let mut components = Vec::new();
    let mut policies = Vec::new();
    let mut flr = Vec::new();
    for (s, sol) in scenario.skeletons.iter().zip(&solutions) {
        components.push(build_component(p, s, sol, &config.laplace)?);
        policies.push(build_policy(p, s, sol, &config.kodp)?);
        flr.push(future_log_ratios(p, s, sol, &config.laplace)?);
    }
    Ok(Plan {
        solutions,
        mixture: PathMixture::new(components, config.prior_mode)?,
        policies,
        future_log_ratios: flr,
    })
}
