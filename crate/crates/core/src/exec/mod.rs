//! Closed-loop execution of a set of skeleton policies: per-step posterior
//! weights, blending or switching, and seeded rollouts with noise and
//! disturbances.

use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kodp::{cost_to_go, step_policy, KodpPolicy};
use crate::laplace::{active_jacobian, cost_hessians, normalize_log_weights, LaplaceComponent, LaplaceConfig};
use crate::path::{assemble, Feature, PathProblem, Skeleton};
use crate::scalar::{lit, to_f64_vec, Real};
use crate::solver::NlpSolution;

#[cfg(test)]
mod tests;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub enum ControllerMode {
    /// Weight-averaged commands.
    #[default]
    Blending,
    /// Command of the most probable skeleton.
    Switching,
}

/// Per-step log entropy ratios of the future part of a component.
///
/// For step `n` the past configurations are treated as observed: the
/// Hessians are restricted to the trailing block of configurations `n..=N`
/// and the constraint rows of steps `>= n` to the same columns. At `n = 1`
/// this reproduces the component's own log ratio.
pub fn future_log_ratios<T: Real>(
    problem: &PathProblem<T>,
    skeleton: &Skeleton<T>,
    solution: &NlpSolution<T>,
    config: &LaplaceConfig,
) -> Result<Vec<T>> {
    let stack = assemble(problem, skeleton, &solution.x_star)?;
    let (h, h0) = cost_hessians(&stack);
    let (h, h0) = (h.to_dense(), h0.to_dense());
    let (j, row_steps) = active_jacobian(&stack, &solution.active_set);
    let d = problem.dim();
    let total = problem.num_vars();
    let mut out = Vec::with_capacity(problem.horizon());
    for n in 1..=problem.horizon() {
        let start = (n - 1) * d;
        let width = total - start;
        let rows: Vec<usize> = (0..j.nrows()).filter(|&r| row_steps[r] >= n).collect();
        let jf = DMatrix::from_fn(rows.len(), width, |i, c| j[(rows[i], start + c)]);
        let hf = h.view((start, start), (width, width)).clone_owned();
        let h0f = h0.view((start, start), (width, width)).clone_owned();
        let c = LaplaceComponent::from_parts(
            skeleton.id.clone(),
            solution.x_star.rows(start, width).clone_owned(),
            T::zero(),
            &hf,
            &h0f,
            &jf,
            config,
        )
        .map_err(|e| match e {
            Error::Singular { .. } => Error::Policy {
                step: n,
                reason: format!("future block is singular: {e}"),
            },
            e => e,
        })?;
        out.push(c.log_ratio);
    }
    Ok(out)
}

/// Weight gap below which two skeletons count as equally likely.
pub const WEIGHT_TIE_TOL: f64 = 1e-9;

/// Selects the executing skeleton from weights.
///
/// Without an incumbent this is the argmax with ties going to the lowest
/// index. With an incumbent, a challenger must beat the incumbent's weight
/// by more than `hysteresis`. Weights closer than [`WEIGHT_TIE_TOL`] tie.
pub fn select<T: Real>(weights: &[T], incumbent: Option<usize>, hysteresis: T) -> usize {
    let tol = lit::<T>(WEIGHT_TIE_TOL);
    let mut best = 0;
    for (i, &w) in weights.iter().enumerate() {
        if w > weights[best] + tol {
            best = i;
        }
    }
    match incumbent {
        Some(inc) if weights[best] <= weights[inc] + hysteresis + tol => inc,
        _ => best,
    }
}

/// Combines per-skeleton commands. Returns the command and the selected
/// skeleton.
pub fn compose_commands<T: Real>(
    commands: &[DVector<T>],
    weights: &[T],
    mode: ControllerMode,
    incumbent: Option<usize>,
    hysteresis: T,
) -> (DVector<T>, usize) {
    let chosen = select(weights, incumbent, hysteresis);
    let cmd = match mode {
        ControllerMode::Switching => commands[chosen].clone(),
        ControllerMode::Blending => commands
            .iter()
            .zip(weights)
            .fold(DVector::zeros(commands[0].len()), |acc, (c, &w)| acc + c * w),
    };
    (cmd, chosen)
}

/// Skeleton policies plus the data needed to weight them online.
#[derive(Debug, Clone)]
pub struct CompositeController<T: Real> {
    pub policies: Vec<KodpPolicy<T>>,
    /// `future_log_ratios[i][n - 1]` for skeleton `i`.
    pub future_log_ratios: Vec<Vec<T>>,
    pub mode: ControllerMode,
    pub hysteresis: T,
}

impl<T: Real> CompositeController<T> {
    pub fn new(
        policies: Vec<KodpPolicy<T>>,
        future_log_ratios: Vec<Vec<T>>,
        mode: ControllerMode,
        hysteresis: T,
    ) -> Result<Self> {
        if policies.is_empty() || policies.len() != future_log_ratios.len() {
            return Err(Error::Shape("need one future log-ratio series per policy".into()));
        }
        let (n, d) = (policies[0].horizon(), policies[0].dim);
        if policies.iter().any(|p| p.horizon() != n || p.dim != d) {
            return Err(Error::Shape("policies disagree on horizon or dimension".into()));
        }
        if future_log_ratios.iter().any(|f| f.len() != n || f.iter().any(|v| !v.is_finite())) {
            return Err(Error::Shape("future log ratios must be finite with one entry per step".into()));
        }
        if hysteresis < T::zero() {
            return Err(Error::Config("hysteresis must be nonnegative".into()));
        }
        Ok(Self {
            policies,
            future_log_ratios,
            mode,
            hysteresis,
        })
    }

    pub fn horizon(&self) -> usize {
        self.policies[0].horizon()
    }

    pub fn dim(&self) -> usize {
        self.policies[0].dim
    }

    pub fn skeleton_ids(&self) -> Vec<String> {
        self.policies.iter().map(|p| p.skeleton_id.clone()).collect()
    }

    /// Posterior over skeletons at step `n` given the observed past
    /// `[x_{n-2}; x_{n-1}]`.
    pub fn online_weights(&self, n: usize, past: &DVector<T>) -> Result<Vec<T>> {
        normalize_log_weights(&self.online_scores(n, past))
    }

    /// Unnormalized log-weights behind [`Self::online_weights`].
    pub fn online_scores(&self, n: usize, past: &DVector<T>) -> Vec<T> {
        self.policies
            .iter()
            .zip(&self.future_log_ratios)
            .map(|(p, f)| f[n - 1] - cost_to_go(p, n, &(past - p.past_reference(n))))
            .collect()
    }

    /// Next-configuration command of every policy.
    pub fn policy_commands(&self, n: usize, past: &DVector<T>) -> Vec<DVector<T>> {
        self.policies
            .iter()
            .map(|p| {
                let (dx, _) = step_policy(p, n, &(past - p.past_reference(n)));
                p.reference(n as isize) + dx
            })
            .collect()
    }

    /// Composed next configuration, the weights and the selected skeleton.
    pub fn compose(&self, n: usize, past: &DVector<T>, incumbent: Option<usize>) -> Result<(DVector<T>, Vec<T>, usize)> {
        let weights = self.online_weights(n, past)?;
        let commands = self.policy_commands(n, past);
        let (cmd, chosen) = compose_commands(&commands, &weights, self.mode, incumbent, self.hysteresis);
        Ok((cmd, weights, chosen))
    }
}

/// Scalar error of a final configuration with respect to a task target.
pub trait TargetMetric<T: Real>: Send + Sync {
    fn error(&self, config: &[T]) -> T;
}

/// Euclidean distance of selected coordinates to fixed values.
#[derive(Debug, Clone)]
pub struct CoordinateTarget<T: Real> {
    pub coords: Vec<usize>,
    pub target: DVector<T>,
}

impl<T: Real> TargetMetric<T> for CoordinateTarget<T> {
    fn error(&self, config: &[T]) -> T {
        self.coords
            .iter()
            .zip(self.target.iter())
            .fold(T::zero(), |a, (&i, &t)| a + (config[i] - t) * (config[i] - t))
            .sqrt()
    }
}

/// Target defined by a closure.
pub struct FnTarget<T: Real> {
    f: Box<dyn Fn(&[T]) -> T + Send + Sync>,
}

impl<T: Real> FnTarget<T> {
    pub fn new(f: impl Fn(&[T]) -> T + Send + Sync + 'static) -> Self {
        Self { f: Box::new(f) }
    }
}

impl<T: Real> TargetMetric<T> for FnTarget<T> {
    fn error(&self, config: &[T]) -> T {
        (self.f)(config)
    }
}

pub type SharedTarget<T> = Arc<dyn TargetMetric<T>>;

/// Impulse added to the realized configuration at one step.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Disturbance {
    pub step: usize,
    /// Per-coordinate offset; missing trailing entries are zero.
    pub offset: Vec<f64>,
}

#[derive(Clone)]
pub struct RolloutOptions<T: Real> {
    /// Multiplier on `sigma` for the execution noise.
    pub noise_scale: f64,
    pub disturbances: Vec<Disturbance>,
    pub seed: u64,
    /// Skeleton whose constraint violation is recorded; defaults to the
    /// executing one.
    pub truth: Option<usize>,
    pub target: Option<SharedTarget<T>>,
    pub projection_tol: f64,
    pub projection_iters: usize,
}

impl<T: Real> Default for RolloutOptions<T> {
    fn default() -> Self {
        Self {
            noise_scale: 0.0,
            disturbances: Vec::new(),
            seed: 0,
            truth: None,
            target: None,
            projection_tol: 1e-10,
            projection_iters: 20,
        }
    }
}

/// One closed-loop execution.
#[derive(Debug, Clone, PartialEq)]
pub struct Rollout<T: Real> {
    pub path: Vec<DVector<T>>,
    /// Increment `x_n - x_{n-1}` commanded at each step.
    pub commands: Vec<DVector<T>>,
    pub weights: Vec<Vec<T>>,
    pub active_skeleton: Vec<usize>,
    pub violation: Vec<T>,
    pub final_error: Option<T>,
    pub total_cost: T,
    pub switches: usize,
    pub seed: u64,
}

impl<T: Real> Rollout<T> {
    pub fn step_records(&self) -> Vec<RolloutStepRecord> {
        (0..self.path.len())
            .map(|i| RolloutStepRecord {
                seed: self.seed,
                n: i + 1,
                x: to_f64_vec(self.path[i].as_slice()),
                command: to_f64_vec(self.commands[i].as_slice()),
                weights: to_f64_vec(&self.weights[i]),
                active_skeleton: self.active_skeleton[i],
                violation: self.violation[i].to_f64_lossy(),
            })
            .collect()
    }

    pub fn summary(&self) -> RolloutSummary {
        RolloutSummary {
            seed: self.seed,
            final_error: self.final_error.map(|e| e.to_f64_lossy()),
            total_cost: self.total_cost.to_f64_lossy(),
            switches: self.switches,
            final_skeleton: *self.active_skeleton.last().unwrap_or(&0),
            max_violation: self.violation.iter().fold(0.0, |a: f64, v| a.max(v.to_f64_lossy())),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct RolloutStepRecord {
    pub seed: u64,
    pub n: usize,
    pub x: Vec<f64>,
    pub command: Vec<f64>,
    pub weights: Vec<f64>,
    pub active_skeleton: usize,
    pub violation: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct RolloutSummary {
    pub seed: u64,
    pub final_error: Option<f64>,
    pub total_cost: f64,
    pub switches: usize,
    pub final_skeleton: usize,
    pub max_violation: f64,
}

/// Equality rows imposed by `skeleton` at `step`, evaluated on the window
/// ending at `x_n`. Returns values and the Jacobian with respect to `x_n`.
fn step_constraints<T: Real>(
    problem: &PathProblem<T>,
    skeleton: &Skeleton<T>,
    step: usize,
    history: &[DVector<T>],
    x_n: &DVector<T>,
    inequalities: bool,
) -> Result<(DVector<T>, DMatrix<T>)> {
    let d = problem.dim();
    let mut values = Vec::new();
    let mut rows: Vec<DVector<T>> = Vec::new();
    let mut features: Vec<&dyn Feature<T>> = Vec::new();
    for m in skeleton.modes.iter().filter(|m| m.window.contains(step)) {
        let list = if inequalities { &m.ineq } else { &m.eq };
        features.extend(list.iter().map(|f| f.as_ref()));
    }
    for s in skeleton.switches.iter().filter(|s| s.at_step == step) {
        let list = if inequalities { &s.ineq } else { &s.eq };
        features.extend(list.iter().map(|f| f.as_ref()));
    }
    for f in features {
        let w = f.window();
        // history holds x_{-1}, x_0, ..., x_{n-1}
        let mut configs: Vec<&[T]> = history[history.len() + 1 - w..].iter().map(|c| c.as_slice()).collect();
        configs.push(x_n.as_slice());
        let out = f.evaluate(step, &configs).map_err(|reason| Error::Feature {
            step: step as isize,
            feature: f.name().to_owned(),
            reason,
        })?;
        let off = (w - 1) * d;
        for i in 0..out.value.len() {
            values.push(out.value[i]);
            rows.push(out.jacobian.view((i, off), (1, d)).transpose().column(0).clone_owned());
        }
    }
    let jac = DMatrix::from_fn(rows.len(), d, |i, j| rows[i][j]);
    Ok((DVector::from_vec(values), jac))
}

/// Minimum-norm Newton projection of `x_n` onto the step equalities.
fn project<T: Real>(
    problem: &PathProblem<T>,
    skeleton: &Skeleton<T>,
    step: usize,
    history: &[DVector<T>],
    mut x_n: DVector<T>,
    tol: T,
    iters: usize,
) -> Result<DVector<T>> {
    for _ in 0..=iters {
        let (h, j) = step_constraints(problem, skeleton, step, history, &x_n, false)?;
        let res = h.amax();
        if h.is_empty() || res <= tol {
            return Ok(x_n);
        }
        let jjt = &j * j.transpose();
        let reg = jjt.clone() + DMatrix::identity(jjt.nrows(), jjt.nrows()) * (T::machine_eps() * jjt.trace());
        let y = reg.lu().solve(&h).ok_or_else(|| Error::Projection {
            step,
            residual: res.to_f64_lossy(),
        })?;
        x_n -= j.transpose() * y;
    }
    let (h, _) = step_constraints(problem, skeleton, step, history, &x_n, false)?;
    Err(Error::Projection {
        step,
        residual: h.amax().to_f64_lossy(),
    })
}

fn step_violation<T: Real>(
    problem: &PathProblem<T>,
    skeleton: &Skeleton<T>,
    step: usize,
    history: &[DVector<T>],
    x_n: &DVector<T>,
) -> Result<T> {
    let (h, _) = step_constraints(problem, skeleton, step, history, x_n, false)?;
    let (g, _) = step_constraints(problem, skeleton, step, history, x_n, true)?;
    Ok(g.iter().fold(h.amax(), |a, &v| a.max(v)))
}

/// Simulates the composite controller on `problem`. `skeletons` must be
/// aligned with the controller's policies.
pub fn rollout<T: Real>(
    problem: &PathProblem<T>,
    skeletons: &[Skeleton<T>],
    controller: &CompositeController<T>,
    options: &RolloutOptions<T>,
) -> Result<Rollout<T>> {
    let d = problem.dim();
    let n_steps = problem.horizon();
    if skeletons.len() != controller.policies.len() || controller.horizon() != n_steps || controller.dim() != d {
        return Err(Error::Shape("skeletons, policies and problem are not aligned".into()));
    }
    if !(options.noise_scale >= 0.0) {
        return Err(Error::Config("noise scale must be nonnegative".into()));
    }
    let std = problem.sigma() * lit::<T>(options.noise_scale) * problem.dt() * problem.dt().sqrt();
    let actuated = problem.actuated();
    let mut rng = ChaCha8Rng::seed_from_u64(options.seed);
    let mut history: Vec<DVector<T>> = problem.prefix().to_vec();
    let mut out = Rollout {
        path: Vec::with_capacity(n_steps),
        commands: Vec::with_capacity(n_steps),
        weights: Vec::with_capacity(n_steps),
        active_skeleton: Vec::with_capacity(n_steps),
        violation: Vec::with_capacity(n_steps),
        final_error: None,
        total_cost: T::zero(),
        switches: 0,
        seed: options.seed,
    };
    let mut incumbent = None;
    for n in 1..=n_steps {
        let k = history.len();
        let mut past = DVector::zeros(2 * d);
        past.rows_mut(0, d).copy_from(&history[k - 2]);
        past.rows_mut(d, d).copy_from(&history[k - 1]);
        let (cmd, weights, chosen) = controller.compose(n, &past, incumbent)?;
        let mut x_n = cmd.clone();
        for &i in actuated {
            let z: f64 = StandardNormal.sample(&mut rng);
            x_n[i] += std * lit::<T>(z);
        }
        for dist in options.disturbances.iter().filter(|dist| dist.step == n) {
            for &i in actuated {
                if let Some(&v) = dist.offset.get(i) {
                    x_n[i] += lit::<T>(v);
                }
            }
        }
        let x_n = project(
            problem,
            &skeletons[chosen],
            n,
            &history,
            x_n,
            lit(options.projection_tol),
            options.projection_iters,
        )?;
        let truth = &skeletons[options.truth.unwrap_or(chosen)];
        let violation = step_violation(problem, truth, n, &history, &x_n)?;
        if incumbent.is_some_and(|i| i != chosen) {
            out.switches += 1;
        }
        incumbent = Some(chosen);
        out.commands.push(&x_n - &history[k - 1]);
        out.weights.push(weights);
        out.active_skeleton.push(chosen);
        out.violation.push(violation);
        out.path.push(x_n.clone());
        history.push(x_n);
    }
    let x = problem.path_from_configs(&out.path)?;
    out.total_cost = assemble(problem, &Skeleton::free("free", n_steps), &x)?.cost();
    out.final_error = options
        .target
        .as_ref()
        .map(|t| t.error(out.path[n_steps - 1].as_slice()));
    Ok(out)
}

/// Root mean square of the given errors.
pub fn rms<T: Real>(errors: &[T]) -> T {
    if errors.is_empty() {
        return T::zero();
    }
    (errors.iter().fold(T::zero(), |a, &e| a + e * e) / lit::<T>(errors.len() as f64)).sqrt()
}

/// RMS over rollouts of the final target error. Rollouts without a target
/// are skipped.
pub fn rms_final_error<T: Real>(rollouts: &[Rollout<T>]) -> T {
    let errors: Vec<T> = rollouts.iter().filter_map(|r| r.final_error).collect();
    rms(&errors)
}

/// RMS of the final-configuration error over whole sampled paths.
pub fn rms_final_error_of_paths<T: Real>(paths: &[DVector<T>], dim: usize, target: &dyn TargetMetric<T>) -> T {
    let errors: Vec<T> = paths
        .iter()
        .map(|p| target.error(&p.as_slice()[p.len() - dim..]))
        .collect();
    rms(&errors)
}
