//! Release gate: oracle comparisons and invariant checks over random
//! instances and the built-in scenarios.
//!
//! Each check takes the objects it inspects, so a corrupted policy or
//! component makes the corresponding check fail.

use std::fmt;

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::exec::{rollout, ControllerMode, RolloutOptions};
use crate::kodp::{backward_pass, build_policy, cost_to_go, quadratize_at, step_policy, KodpConfig, KodpPolicy};
use crate::laplace::{
    active_jacobian, build_component, multimodal_cost_from_scores, sample_paths, weights_from_scores, LaplaceComponent,
    LaplaceConfig, PriorMode, SampleSource,
};
use crate::oracles::{
    dense_gaussian_posterior, dense_tail_qp, random_constrained_instance, random_lq_path_problem, riccati_deviation,
    LqInstance, REACHING_COST, REACHING_F_STAR, REACHING_RATIO, REACHING_WEIGHTS,
};
use crate::path::{assemble, check_jacobians, PathProblem, Skeleton};
use crate::plan::{plan, Plan, PlanConfig};
use crate::scenarios::{build, Scenario, ScenarioName, ScenarioParams};
use crate::solver::{solve, NlpSolution, SolverConfig};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct CheckResult {
    pub name: String,
    pub passed: bool,
    /// Worst observed value of the checked quantity.
    pub metric: f64,
    pub tolerance: f64,
    pub detail: String,
}

impl CheckResult {
    fn below(name: &str, metric: f64, tolerance: f64, detail: impl Into<String>) -> Self {
        Self {
            name: name.to_owned(),
            passed: metric.is_finite() && metric <= tolerance,
            metric,
            tolerance,
            detail: detail.into(),
        }
    }

    fn failed(name: &str, detail: impl Into<String>) -> Self {
        Self {
            name: name.to_owned(),
            passed: false,
            metric: f64::NAN,
            tolerance: f64::NAN,
            detail: detail.into(),
        }
    }
}

impl fmt::Display for CheckResult {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "[{}] {:<12} {:.3e} <= {:.0e}  {}",
            if self.passed { "PASS" } else { "FAIL" },
            self.name,
            self.metric,
            self.tolerance,
            self.detail
        )
    }
}

fn guard(name: &str, r: Result<CheckResult>) -> CheckResult {
    r.unwrap_or_else(|e| CheckResult::failed(name, e.to_string()))
}

fn tight() -> SolverConfig {
    SolverConfig {
        tol_step: 1e-11,
        tol_constraint: 1e-11,
        ..SolverConfig::default()
    }
}

/// Random first-order LQ chains with their recursive policies.
pub fn riccati_cases(count: usize) -> Result<Vec<(LqInstance, KodpPolicy<f64>)>> {
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    (0..count)
        .map(|i| {
            let inst = LqInstance::random(i as u64, rng.random_range(2..=50), rng.random_range(1..=4));
            let p = inst.problem()?;
            let s = Skeleton::free("free", inst.horizon);
            let q = quadratize_at(&p, &s, &p.constant_path(), &[], &KodpConfig::default())?;
            Ok((inst, backward_pass(&q, &KodpConfig::default())?))
        })
        .collect()
}

pub fn check_riccati(cases: &[(LqInstance, KodpPolicy<f64>)]) -> CheckResult {
    let worst = cases.iter().map(|(i, p)| riccati_deviation(p, i)).fold(0.0, f64::max);
    CheckResult::below("riccati", worst, 1e-8, format!("{} LQ instances, gains and values", cases.len()))
}

pub struct DenseQpCase {
    pub problem: PathProblem<f64>,
    pub skeleton: Skeleton<f64>,
    pub solution: NlpSolution<f64>,
    pub policy: KodpPolicy<f64>,
}

/// Random equality-constrained second-order instances (`N = 5`, `d = 2`)
/// solved to high accuracy, with their policies.
pub fn dense_qp_cases(count: usize) -> Result<Vec<DenseQpCase>> {
    (0..count as u64)
        .map(|seed| {
            let (problem, skeleton) = random_constrained_instance(100 + seed, 5, 2)?;
            let solution = solve(&problem, &skeleton, None, &tight())?;
            let policy = build_policy(&problem, &skeleton, &solution, &KodpConfig::default())?;
            Ok(DenseQpCase {
                problem,
                skeleton,
                solution,
                policy,
            })
        })
        .collect()
}

/// Compares cost-to-go and first steps with dense tail QP re-solves for
/// `deltas` random past deviations per case.
pub fn check_dense_qp(cases: &[DenseQpCase], deltas: usize) -> CheckResult {
    let run = || -> Result<CheckResult> {
        let mut rng = ChaCha8Rng::seed_from_u64(77);
        let mut worst: f64 = 0.0;
        for c in cases {
            let (d, big_n) = (c.problem.dim(), c.problem.horizon());
            for _ in 0..deltas {
                let n = rng.random_range(1..=big_n);
                let delta = DVector::from_fn(2 * d, |_, _| rng.random_range(-0.5..0.5));
                let (value, dx) = dense_tail_qp(&c.problem, &c.skeleton, &c.solution.x_star, n, &delta)?;
                let (u, _) = step_policy(&c.policy, n, &delta);
                let dv = (cost_to_go(&c.policy, n, &delta) - value).abs() / value.abs().max(1.0);
                worst = worst.max(dv).max((u - dx.rows(0, d)).amax());
            }
        }
        Ok(CheckResult::below(
            "dense-qp",
            worst,
            1e-8,
            format!("{} constrained instances x {deltas} deviations", cases.len()),
        ))
    };
    guard("dense-qp", run())
}

pub struct LqLaplaceCase {
    pub problem: PathProblem<f64>,
    pub component: LaplaceComponent<f64>,
}

pub fn lq_laplace_cases(count: usize) -> Result<Vec<LqLaplaceCase>> {
    (0..count as u64)
        .map(|seed| {
            let problem = random_lq_path_problem(300 + seed, 4 + seed as usize % 3, 1 + seed as usize % 2)?;
            let s = Skeleton::free("free", problem.horizon());
            let sol = solve(&problem, &s, None, &tight())?;
            let component = build_component(&problem, &s, &sol, &LaplaceConfig::default())?;
            Ok(LqLaplaceCase { problem, component })
        })
        .collect()
}

/// Mean and covariance against the dense posterior (tolerance `1e-8`), and
/// the empirical covariance of `samples` draws against the analytic one
/// (relative Frobenius `5%`).
pub fn check_lq_laplace(cases: &[LqLaplaceCase], samples: usize) -> Vec<CheckResult> {
    let run = || -> Result<Vec<CheckResult>> {
        let mut exact: f64 = 0.0;
        let mut empirical: f64 = 0.0;
        for c in cases {
            let s = Skeleton::free("free", c.problem.horizon());
            let stack = assemble(&c.problem, &s, &c.component.x_star)?;
            let (mean, cov) = dense_gaussian_posterior(&stack, &c.component.x_star)?;
            let sigma = c.component.covariance()?;
            exact = exact.max((&mean - &c.component.x_star).amax()).max((&sigma - &cov).amax());
            let draws = sample_paths(&c.component, samples, 5, SampleSource::Controlled)?;
            let n = c.component.x_star.len();
            let avg = draws.iter().fold(DVector::zeros(n), |a, x| a + x) / samples as f64;
            let mut emp = DMatrix::zeros(n, n);
            for x in &draws {
                let e = x - &avg;
                emp += &e * e.transpose();
            }
            emp /= (samples - 1) as f64;
            empirical = empirical.max((&emp - &cov).norm() / cov.norm());
        }
        Ok(vec![
            CheckResult::below("lq-laplace", exact, 1e-8, format!("{} LQ paths, mean and covariance", cases.len())),
            CheckResult::below("lq-sampling", empirical, 0.05, format!("{samples} samples, relative Frobenius")),
        ])
    };
    run().unwrap_or_else(|e| vec![CheckResult::failed("lq-laplace", e.to_string())])
}

/// Mixture weights and multimodal cost of the four-skeleton reaching table.
pub fn check_table_arithmetic() -> CheckResult {
    let run = || -> Result<CheckResult> {
        let lr: Vec<f64> = REACHING_RATIO.iter().map(|r| r.ln()).collect();
        let w = weights_from_scores(&REACHING_F_STAR, &lr)?;
        let dw = w.iter().zip(REACHING_WEIGHTS).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        let j = multimodal_cost_from_scores(&REACHING_F_STAR, &lr, PriorMode::Unnormalized)?;
        let dj = (j - REACHING_COST).abs();
        let shown: Vec<String> = w.iter().map(|v| format!("{v:.4}")).collect();
        let mut r = CheckResult::below(
            "table",
            dw,
            1e-3,
            format!("weights [{}], cost {j:.4}", shown.join(", ")),
        );
        r.passed &= dj <= 2e-3;
        Ok(r)
    };
    guard("table", run())
}

/// Default scenarios with their plans.
pub struct ScenarioCase {
    pub scenario: Scenario<f64>,
    pub plan: Plan<f64>,
}

pub fn scenario_cases() -> Result<Vec<ScenarioCase>> {
    [ScenarioName::Elbow, ScenarioName::Push, ScenarioName::Tworoute]
        .into_iter()
        .map(|name| {
            let scenario = build(&ScenarioParams::defaults(name))?;
            let plan = plan(&scenario, &PlanConfig::default())?;
            Ok(ScenarioCase { scenario, plan })
        })
        .collect()
}

/// Finite-difference Jacobian check of every scenario feature at the
/// initial and the optimal paths.
pub fn check_scenario_jacobians(cases: &[ScenarioCase]) -> CheckResult {
    let run = || -> Result<CheckResult> {
        let mut worst: f64 = 0.0;
        for c in cases {
            let s = &c.scenario;
            for (i, sk) in s.skeletons.iter().enumerate() {
                for x in [&s.initial_paths[i], &c.plan.solutions[i].x_star] {
                    worst = worst.max(check_jacobians(&s.problem, sk, x, 1e-6)?);
                }
            }
        }
        Ok(CheckResult::below("jacobians", worst, 1e-4, "all scenario features, relative"))
    };
    guard("jacobians", run())
}

/// Online weights of seeded noisy rollouts lie on the simplex.
pub fn check_simplex(cases: &[ScenarioCase]) -> CheckResult {
    let run = || -> Result<CheckResult> {
        let mut worst: f64 = 0.0;
        for c in cases {
            let controller = c.plan.controller(ControllerMode::Blending, 0.0)?;
            for seed in 0..3 {
                let opts = RolloutOptions {
                    noise_scale: 1.0,
                    seed,
                    ..RolloutOptions::default()
                };
                let r = rollout(&c.scenario.problem, &c.scenario.skeletons, &controller, &opts)?;
                for w in &r.weights {
                    let off = (w.iter().sum::<f64>() - 1.0).abs();
                    let neg = w.iter().fold(0.0, |a: f64, v| a.max(-v));
                    worst = worst.max(off).max(neg);
                }
            }
        }
        Ok(CheckResult::below("simplex", worst, 1e-12, "rollout weights, 3 seeds per scenario"))
    };
    guard("simplex", run())
}

/// `J W = 0` and `W^T W = I` for the components of each plan.
pub fn check_nullspaces(cases: &[ScenarioCase]) -> CheckResult {
    let run = || -> Result<CheckResult> {
        let mut worst: f64 = 0.0;
        for c in cases {
            let s = &c.scenario;
            for ((sk, sol), comp) in s.skeletons.iter().zip(&c.plan.solutions).zip(&c.plan.mixture.components) {
                worst = worst.max(nullspace_error(&s.problem, sk, sol, comp)?);
            }
        }
        Ok(CheckResult::below("nullspace", worst, 1e-8, "active Jacobian times basis, basis orthonormality"))
    };
    guard("nullspace", run())
}

pub fn nullspace_error(
    problem: &PathProblem<f64>,
    skeleton: &Skeleton<f64>,
    solution: &NlpSolution<f64>,
    component: &LaplaceComponent<f64>,
) -> Result<f64> {
    let stack = assemble(problem, skeleton, &solution.x_star)?;
    let (j, _) = active_jacobian(&stack, &solution.active_set);
    let w = &component.w;
    let scale = j.amax().max(1.0);
    let orth = (w.transpose() * w - DMatrix::identity(w.ncols(), w.ncols())).amax();
    Ok(((&j * w).amax() / scale).max(orth))
}

/// Replans and reruns every scenario and compares bit for bit.
pub fn check_determinism(cases: &[ScenarioCase]) -> CheckResult {
    let run = || -> Result<CheckResult> {
        let mut mismatches = Vec::new();
        for c in cases {
            let s = &c.scenario;
            let again = plan(s, &PlanConfig::default())?;
            let same_plan = again.mixture.weights == c.plan.mixture.weights
                && again.solutions.iter().zip(&c.plan.solutions).all(|(a, b)| a.x_star == b.x_star)
                && again.mixture.components.iter().zip(&c.plan.mixture.components).all(|(a, b)| {
                    a.log_ratio == b.log_ratio
                });
            let opts = RolloutOptions {
                noise_scale: 1.0,
                seed: 11,
                ..RolloutOptions::default()
            };
            let ca = c.plan.controller(ControllerMode::Switching, 0.0)?;
            let cb = again.controller(ControllerMode::Switching, 0.0)?;
            let same_rollout = rollout(&s.problem, &s.skeletons, &ca, &opts)? == rollout(&s.problem, &s.skeletons, &cb, &opts)?;
            let comp = &c.plan.mixture.components[0];
            let same_samples = sample_paths(comp, 20, 3, SampleSource::Controlled)?
                == sample_paths(&again.mixture.components[0], 20, 3, SampleSource::Controlled)?;
            if !(same_plan && same_rollout && same_samples) {
                mismatches.push(s.params.name.to_string());
            }
        }
        Ok(CheckResult {
            name: "determinism".into(),
            passed: mismatches.is_empty(),
            metric: mismatches.len() as f64,
            tolerance: 0.0,
            detail: if mismatches.is_empty() {
                "plans, rollouts and samples are bit-identical".into()
            } else {
                format!("differs on {}", mismatches.join(", "))
            },
        })
    };
    guard("determinism", run())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SelftestReport {
    pub checks: Vec<CheckResult>,
}

impl SelftestReport {
    pub fn passed(&self) -> bool {
        self.checks.iter().all(|c| c.passed)
    }

    pub fn failures(&self) -> Vec<&CheckResult> {
        self.checks.iter().filter(|c| !c.passed).collect()
    }
}

impl fmt::Display for SelftestReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for c in &self.checks {
            writeln!(f, "{c}")?;
        }
        let failed = self.failures().len();
        write!(f, "{} checks, {} failed", self.checks.len(), failed)
    }
}

/// Runs every check with the standard instance counts.
pub fn run() -> SelftestReport {
    let mut checks = Vec::new();
    checks.push(match riccati_cases(10) {
        Ok(cases) => check_riccati(&cases),
        Err(e) => CheckResult::failed("riccati", e.to_string()),
    });
    checks.push(match dense_qp_cases(10) {
        Ok(cases) => check_dense_qp(&cases, 20),
        Err(e) => CheckResult::failed("dense-qp", e.to_string()),
    });
    match lq_laplace_cases(3) {
        Ok(cases) => checks.extend(check_lq_laplace(&cases, 100_000)),
        Err(e) => checks.push(CheckResult::failed("lq-laplace", e.to_string())),
    }
    checks.push(check_table_arithmetic());
    match scenario_cases() {
        Ok(cases) => {
            checks.push(check_scenario_jacobians(&cases));
            checks.push(check_simplex(&cases));
            checks.push(check_nullspaces(&cases));
            checks.push(check_determinism(&cases));
        }
        Err(e) => checks.push(CheckResult::failed("scenarios", e.to_string())),
    }
    SelftestReport { checks }
}
