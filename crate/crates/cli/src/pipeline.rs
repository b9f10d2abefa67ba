//! Planning and simulation runs with their artifacts.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use anyhow::{Context, Result};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use slgp_core::exec::{future_log_ratios, Rollout, RolloutOptions, RolloutStepRecord, RolloutSummary};
use slgp_core::kodp::build_policy;
use slgp_core::laplace::{build_component, MixtureRecord, PriorMode};
use slgp_core::scenarios::build;
use slgp_core::solver::{solve, Diagnostics, TraceRecord};
use slgp_core::{PathMixture, PlanF64, ScenarioF64, Solution};

use crate::config::RunConfig;

pub const SOLUTION_SCHEMA: &str = "slgp.solution/1";
pub const ROLLOUT_SCHEMA: &str = "slgp.rollout/1";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct SolutionRecord {
    pub schema: String,
    pub skeleton_id: String,
    pub converged: bool,
    pub f_star: f64,
    pub x_star: Vec<f64>,
    pub lambda: Vec<f64>,
    pub nu: Vec<f64>,
    pub active_set: Vec<bool>,
    pub diagnostics: Diagnostics,
}

impl SolutionRecord {
    fn new(id: &str, s: &Solution) -> Self {
        Self {
            schema: SOLUTION_SCHEMA.to_owned(),
            skeleton_id: id.to_owned(),
            converged: s.converged(),
            f_star: s.f_star,
            x_star: s.x_star.as_slice().to_vec(),
            lambda: s.lambda.as_slice().to_vec(),
            nu: s.nu.as_slice().to_vec(),
            active_set: s.active_set.clone(),
            diagnostics: s.diagnostics.clone(),
        }
    }
}

/// One seed of a simulation: either a completed rollout or the abort reason.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct RolloutRecord {
    pub schema: String,
    pub seed: u64,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub summary: Option<RolloutSummary>,
    /// Distance of the final configuration from the final skeleton's
    /// planned final configuration.
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub final_deviation: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub error: Option<String>,
    #[serde(skip_serializing_if = "Vec::is_empty", default)]
    pub steps: Vec<RolloutStepRecord>,
}

pub struct PlanRun {
    pub scenario: ScenarioF64,
    pub solutions: Vec<Solution>,
    /// `None` when a skeleton failed to converge.
    pub plan: Option<PlanF64>,
}

impl PlanRun {
    pub fn converged(&self) -> bool {
        self.plan.is_some()
    }
}

pub fn run_plan(config: &RunConfig) -> Result<PlanRun> {
    let scenario = build::<f64>(&config.scenario)?;
    let pc = config.plan_config();
    let p = &scenario.problem;
    let solutions = scenario
        .skeletons
        .par_iter()
        .zip(&scenario.initial_paths)
        .map(|(s, x0)| solve(p, s, Some(x0), &pc.solver))
        .collect::<slgp_core::Result<Vec<_>>>()?;
    if !solutions.iter().all(|s| s.converged()) {
        return Ok(PlanRun {
            scenario,
            solutions,
            plan: None,
        });
    }
    let parts = scenario
        .skeletons
        .par_iter()
        .zip(&solutions)
        .map(|(s, sol)| {
            Ok((
                build_component(p, s, sol, &pc.laplace)?,
                build_policy(p, s, sol, &pc.kodp)?,
                future_log_ratios(p, s, sol, &pc.laplace)?,
            ))
        })
        .collect::<slgp_core::Result<Vec<_>>>()?;
    let mut components = Vec::new();
    let mut policies = Vec::new();
    let mut flr = Vec::new();
    for (c, k, f) in parts {
        components.push(c);
        policies.push(k);
        flr.push(f);
    }
    let plan = PlanF64 {
        solutions: solutions.clone(),
        mixture: PathMixture::new(components, pc.prior_mode)?,
        policies,
        future_log_ratios: flr,
    };
    Ok(PlanRun {
        scenario,
        solutions,
        plan: Some(plan),
    })
}

pub fn run_rollouts(run: &PlanRun, config: &RunConfig) -> Result<Vec<RolloutRecord>> {
    let plan = run.plan.as_ref().context("no plan to execute")?;
    let s = &run.scenario;
    let controller = plan.controller(config.controller_mode, config.hysteresis)?;
    let d = s.problem.dim();
    Ok(config
        .seeds
        .par_iter()
        .map(|&seed| {
            let options = RolloutOptions {
                noise_scale: config.noise_scale,
                disturbances: config.disturbances.clone(),
                seed,
                target: Some(s.target.clone()),
                ..RolloutOptions::default()
            };
            let record = |r: Rollout<f64>| {
                let summary = r.summary();
                let planned = &plan.solutions[summary.final_skeleton].x_star;
                let last = &r.path[r.path.len() - 1];
                let dev = (last - planned.rows(planned.len() - d, d)).norm();
                RolloutRecord {
                    schema: ROLLOUT_SCHEMA.to_owned(),
                    seed,
                    summary: Some(summary),
                    final_deviation: Some(dev),
                    error: None,
                    steps: r.step_records(),
                }
            };
            match slgp_core::exec::rollout(&s.problem, &s.skeletons, &controller, &options) {
                Ok(r) => record(r),
                Err(e) => RolloutRecord {
                    schema: ROLLOUT_SCHEMA.to_owned(),
                    seed,
                    summary: None,
                    final_deviation: None,
                    error: Some(e.to_string()),
                    steps: Vec::new(),
                },
            }
        })
        .collect())
}

fn write(dir: &Path, name: &str, contents: &str) -> Result<()> {
    let path = dir.join(name);
    fs::write(&path, contents).with_context(|| format!("writing {}", path.display()))
}

fn json<T: Serialize>(value: &T) -> Result<String> {
    let mut s = serde_json::to_string_pretty(value)?;
    s.push('\n');
    Ok(s)
}

/// Shortest round-trip representation, in exponent form outside
/// `[1e-4, 1e15)`.
pub fn num(v: f64) -> String {
    let a = v.abs();
    if v == 0.0 || !v.is_finite() || (1e-4..1e15).contains(&a) {
        v.to_string()
    } else {
        format!("{v:e}")
    }
}

fn trace_csv(trace: &[TraceRecord]) -> String {
    let mut s = String::from("outer,inner,merit,violation,stepNorm\n");
    for t in trace {
        let _ = writeln!(s, "{},{},{},{},{}", t.outer, t.inner, num(t.merit), num(t.violation), num(t.step_norm));
    }
    s
}

/// Writes config, scenario, solutions, and when converged the mixture and
/// policies.
pub fn write_plan(run: &PlanRun, config: &RunConfig) -> Result<()> {
    let dir = &config.output_dir;
    fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    write(dir, "config.json", &json(config)?)?;
    write(dir, "scenario.json", &json(&run.scenario.record())?)?;
    for (s, sol) in run.scenario.skeletons.iter().zip(&run.solutions) {
        write(dir, &format!("solution-{}.json", s.id), &json(&SolutionRecord::new(&s.id, sol))?)?;
        if config.solver.trace {
            write(dir, &format!("trace-{}.csv", s.id), &trace_csv(&sol.diagnostics.trace))?;
        }
    }
    if let Some(plan) = &run.plan {
        write(dir, "mixture.json", &json(&plan.mixture.record(false)?)?)?;
        for p in &plan.policies {
            write(dir, &format!("policy-{}.json", p.skeleton_id), &json(&p.record())?)?;
        }
    }
    write(dir, "report.txt", &plan_report(run, config)?)
}

/// Per-skeleton table: status, optimal cost, entropy ratio and weight.
pub fn plan_report(run: &PlanRun, config: &RunConfig) -> Result<String> {
    let p = &config.scenario;
    let mut s = String::new();
    writeln!(
        s,
        "scenario {} (N = {}, T = {}, sigma = {})",
        serde_json::to_value(p.name)?.as_str().unwrap_or_default(),
        p.horizon,
        p.duration,
        p.sigma
    )?;
    let mixture: Option<MixtureRecord> = run.plan.as_ref().map(|pl| pl.mixture.record(false)).transpose()?;
    writeln!(
        s,
        "{:<10} {:<18} {:>12} {:>12} {:>12} {:>10}",
        "skeleton", "status", "fStar", "ratio", "logRatio", "weight"
    )?;
    for (i, (sk, sol)) in run.scenario.skeletons.iter().zip(&run.solutions).enumerate() {
        let status = serde_json::to_value(sol.diagnostics.status)?;
        let status = status.as_str().unwrap_or_default();
        match &mixture {
            Some(m) => {
                let c = &m.components[i];
                writeln!(
                    s,
                    "{:<10} {:<18} {:>12.4} {:>12.4e} {:>12.4} {:>10.4}",
                    sk.id,
                    status,
                    sol.f_star,
                    c.component.log_ratio.exp(),
                    c.component.log_ratio,
                    c.weight
                )?;
            }
            None => writeln!(
                s,
                "{:<10} {:<18} {:>12.4} {:>12} {:>12} {:>10}",
                sk.id, status, sol.f_star, "-", "-", "-"
            )?,
        }
    }
    match &mixture {
        Some(m) => {
            let mark = |mode| if config.prior_mode == mode { " (selected)" } else { "" };
            writeln!(
                s,
                "multimodal cost, unnormalized prior: {:.4}{}",
                m.multimodal_cost_unnormalized,
                mark(PriorMode::Unnormalized)
            )?;
            writeln!(
                s,
                "multimodal cost, uniform prior over skeletons: {:.4}{}",
                m.multimodal_cost_uniform_with_na,
                mark(PriorMode::UniformWithNa)
            )?;
        }
        None => writeln!(s, "planning failed: not every skeleton converged")?,
    }
    Ok(s)
}

/// Aggregates over completed rollouts.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SimulationStats {
    pub seeds: usize,
    pub aborted: usize,
    pub mean_final_error: f64,
    pub rms_final_error: f64,
    pub mean_switches: f64,
}

pub fn stats(records: &[RolloutRecord]) -> SimulationStats {
    let done: Vec<&RolloutSummary> = records.iter().filter_map(|r| r.summary.as_ref()).collect();
    let errors: Vec<f64> = done.iter().filter_map(|s| s.final_error).collect();
    let k = errors.len().max(1) as f64;
    SimulationStats {
        seeds: records.len(),
        aborted: records.len() - done.len(),
        mean_final_error: errors.iter().sum::<f64>() / k,
        rms_final_error: (errors.iter().map(|e| e * e).sum::<f64>() / k).sqrt(),
        mean_switches: done.iter().map(|s| s.switches as f64).sum::<f64>() / done.len().max(1) as f64,
    }
}

pub fn write_simulation(run: &PlanRun, config: &RunConfig, records: &[RolloutRecord]) -> Result<()> {
    let dir = &config.output_dir;
    let ids: Vec<&str> = run.scenario.skeletons.iter().map(|s| s.id.as_str()).collect();
    let mut lines = String::new();
    for r in records {
        lines.push_str(&serde_json::to_string(r)?);
        lines.push('\n');
    }
    write(dir, "rollouts.jsonl", &lines)?;

    let mut summary = String::from("seed,status,finalSkeleton,finalError,finalDeviation,totalCost,switches,maxViolation\n");
    let mut weights = format!("seed,n,{},active\n", ids.join(","));
    for r in records {
        match &r.summary {
            Some(s) => {
                let fe = s.final_error.map(num).unwrap_or_default();
                let fd = r.final_deviation.map(num).unwrap_or_default();
                writeln!(
                    summary,
                    "{},ok,{},{},{},{},{},{}",
                    r.seed,
                    ids[s.final_skeleton],
                    fe,
                    fd,
                    num(s.total_cost),
                    s.switches,
                    num(s.max_violation)
                )?;
            }
            None => writeln!(summary, "{},aborted,,,,,,", r.seed)?,
        }
        for step in &r.steps {
            let w: Vec<String> = step.weights.iter().map(|&w| num(w)).collect();
            writeln!(weights, "{},{},{},{}", r.seed, step.n, w.join(","), ids[step.active_skeleton])?;
        }
    }
    write(dir, "summary.csv", &summary)?;
    write(dir, "weights.csv", &weights)?;

    let st = stats(records);
    let mut report = plan_report(run, config)?;
    writeln!(
        report,
        "controller {}, hysteresis {}, noise scale {}, {} disturbance(s)",
        serde_json::to_value(config.controller_mode)?.as_str().unwrap_or_default(),
        config.hysteresis,
        config.noise_scale,
        config.disturbances.len()
    )?;
    writeln!(
        report,
        "seeds {}, aborted {}, mean final error {:.6}, rms final error {:.6}, mean switches {:.2}",
        st.seeds, st.aborted, st.mean_final_error, st.rms_final_error, st.mean_switches
    )?;
    for r in records.iter().filter(|r| r.error.is_some()) {
        writeln!(report, "seed {} aborted: {}", r.seed, r.error.as_deref().unwrap_or_default())?;
    }
    write(dir, "report.txt", &report)
}
