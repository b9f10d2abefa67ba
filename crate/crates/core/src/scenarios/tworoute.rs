use std::sync::Arc;

use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use super::{Scenario, ScenarioParams};
use crate::error::{Error, Result};
use crate::exec::{rollout, CompositeController, CoordinateTarget, Disturbance, Rollout, RolloutOptions};
use crate::path::{AffineFeature, CostClass, CostTerm, Mode, PathProblem, Skeleton, StepRange, SuccessorTable, Switch};
use crate::scalar::{from_f64_slice, lit, Real};

/// Point robot in the plane that must pass through one of two waypoints on
/// its way to the target. Skeletons `A` and `B` touch the respective
/// waypoint at `window_fraction * N`.
pub fn build_tworoute<T: Real>(params: &ScenarioParams) -> Result<Scenario<T>> {
    let p = params;
    if p.start.len() != 2 || p.target.len() != 2 || p.waypoints.len() != 2 {
        return Err(Error::Scenario("tworoute needs a planar start, target and two waypoints".into()));
    }
    let n = p.horizon;
    let touch = p.step_at(p.window_fraction);
    if touch < 2 || touch >= n {
        return Err(Error::Scenario(format!("waypoint step {touch} must lie strictly inside [1, {n}]")));
    }
    let x0 = DVector::from_vec(from_f64_slice::<T>(&p.start));
    let target = DVector::from_vec(from_f64_slice::<T>(&p.target));
    let problem = PathProblem::at_rest(n, 2, lit(p.dt()), lit(p.sigma), x0)?.with_cost(CostTerm::new(
        AffineFeature::target("goal", target.clone(), lit(p.target_weight)),
        StepRange::single(n),
        CostClass::State,
    ))?;

    let names = ["A", "B"];
    let mut skeletons = Vec::new();
    let mut successors = SuccessorTable::new();
    let mut initial_paths = Vec::new();
    for (name, wp) in names.iter().zip(&p.waypoints) {
        let via = format!("via{name}");
        let point = DVector::from_vec(from_f64_slice::<T>(wp));
        skeletons.push(
            Skeleton::new(*name)
                .with_mode(Mode::new("approach", StepRange::new(1, touch - 1)))
                .with_switch(Switch::new(via.clone(), touch).with_eq(AffineFeature::target(
                    format!("waypoint{name}"),
                    point,
                    T::one(),
                )))
                .with_mode(Mode::new("depart", StepRange::new(touch, n))),
        );
        successors.insert("approach", &via, "depart");
        let mut x = DVector::zeros(2 * n);
        for k in 1..=n {
            let (a, b, t) = if k <= touch {
                (&p.start[..], &wp[..], k as f64 / touch as f64)
            } else {
                (&wp[..], &p.target[..], (k - touch) as f64 / (n - touch) as f64)
            };
            for i in 0..2 {
                x[2 * (k - 1) + i] = lit::<T>(a[i] + t * (b[i] - a[i]));
            }
        }
        initial_paths.push(x);
    }
    Ok(Scenario {
        params: params.clone(),
        problem,
        skeletons,
        successors,
        initial_paths,
        target: Arc::new(CoordinateTarget {
            coords: vec![0, 1],
            target,
        }),
        disturbance_direction: Some(vec![0.0, 1.0]),
    })
}

/// Outcome of a disturbed rollout relative to a preferred and an
/// alternative skeleton.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub enum RouteOutcome {
    /// The preferred skeleton is active at every step.
    Stays,
    /// The alternative skeleton is active at the final step.
    Switches,
    Other,
}

/// Noise-free rollout with a disturbance of `magnitude` along the scenario's
/// probe direction at `step`.
pub fn probe<T: Real>(
    scenario: &Scenario<T>,
    controller: &CompositeController<T>,
    step: usize,
    magnitude: f64,
) -> Result<Rollout<T>> {
    let dir = scenario
        .disturbance_direction
        .as_ref()
        .ok_or_else(|| Error::Scenario(format!("{} defines no disturbance direction", scenario.params.name)))?;
    let options = RolloutOptions {
        disturbances: vec![Disturbance {
            step,
            offset: dir.iter().map(|v| v * magnitude).collect(),
        }],
        ..RolloutOptions::default()
    };
    rollout(&scenario.problem, &scenario.skeletons, controller, &options)
}

pub fn route_outcome<T: Real>(rollout: &Rollout<T>, preferred: usize, alternative: usize) -> RouteOutcome {
    if rollout.active_skeleton.iter().all(|&s| s == preferred) {
        RouteOutcome::Stays
    } else if rollout.active_skeleton.last() == Some(&alternative) {
        RouteOutcome::Switches
    } else {
        RouteOutcome::Other
    }
}

/// Bisects the disturbance magnitude in `[0, upper]` separating rollouts that
/// stay on `preferred` from rollouts that end on `alternative`. Returns
/// `None` when the endpoints do not bracket such a change.
pub fn switching_threshold<T: Real>(
    scenario: &Scenario<T>,
    controller: &CompositeController<T>,
    step: usize,
    (preferred, alternative): (usize, usize),
    upper: f64,
    tol: f64,
) -> Result<Option<f64>> {
    let outcome = |m: f64| -> Result<RouteOutcome> {
        Ok(route_outcome(&probe(scenario, controller, step, m)?, preferred, alternative))
    };
    if outcome(0.0)? != RouteOutcome::Stays || outcome(upper)? != RouteOutcome::Switches {
        return Ok(None);
    }
    let (mut lo, mut hi) = (0.0, upper);
    while hi - lo > tol {
        let mid = 0.5 * (lo + hi);
        match outcome(mid)? {
            RouteOutcome::Stays => lo = mid,
            RouteOutcome::Switches => hi = mid,
            RouteOutcome::Other => return Ok(None),
        }
    }
    Ok(Some(0.5 * (lo + hi)))
}
