use std::sync::Arc;

use nalgebra::{DMatrix, DVector};

use super::kinematics::PlanarChain;
use super::{Scenario, ScenarioParams};
use crate::error::{Error, Result};
use crate::exec::FnTarget;
use crate::path::{CostClass, CostTerm, FeatureEval, FnFeature, Mode, PathProblem, Skeleton, StepRange, SuccessorTable, Switch};
use crate::scalar::{from_f64_slice, lit, Real};

/// Heights of the listed link endpoints, optionally negated.
fn heights<T: Real>(chain: &PlanarChain<T>, name: String, points: Vec<usize>, sign: f64) -> FnFeature<T> {
    let dof = chain.lengths.len();
    let chain = chain.clone();
    let rows = points.len();
    FnFeature::new(name, 1, rows, move |_, configs: &[&[T]]| {
        let q = configs[0];
        let mut value = DVector::zeros(rows);
        let mut jac = DMatrix::zeros(rows, dof);
        for (r, &k) in points.iter().enumerate() {
            let (p, j) = chain.point(q, k);
            value[r] = p.y * lit::<T>(sign);
            jac.set_row(r, &(j.row(1) * lit::<T>(sign)));
        }
        FeatureEval { value, jacobian: jac }
    })
}

fn table<T: Real>(chain: &PlanarChain<T>, points: Vec<usize>) -> FnFeature<T> {
    let name = format!("table{}", points.iter().map(|p| p.to_string()).collect::<String>());
    heights(chain, name, points, -1.0)
}

fn pin<T: Real>(chain: &PlanarChain<T>, points: Vec<usize>) -> FnFeature<T> {
    let name = format!("pin{}", points.iter().map(|p| p.to_string()).collect::<String>());
    heights(chain, name, points, 1.0)
}

/// Planar four-link arm on a pedestal above a table (`y >= 0`). The joint
/// positions are the ends of links 1 and 2; the end effector is the end of
/// the last link. Skeletons: `free`, `fix1`, `fix2`, `fix12`, where fixing
/// puts the joint on the table from `window_fraction * N` to the end.
pub fn build_elbow<T: Real>(params: &ScenarioParams) -> Result<Scenario<T>> {
    let p = params;
    let dof = p.link_lengths.len();
    if dof < 3 || p.link_lengths.iter().any(|&l| !(l > 0.0)) || !(p.base_height >= 0.0) {
        return Err(Error::Scenario("elbow needs at least 3 positive link lengths and a nonnegative base height".into()));
    }
    if p.start.len() != dof || p.target.len() != 2 {
        return Err(Error::Scenario(format!("elbow start needs {dof} angles and target 2 coordinates")));
    }
    let chain = PlanarChain::<T>::new([0.0, p.base_height], &p.link_lengths);
    let reach: f64 = p.link_lengths.iter().sum();
    let dist = (p.target[0].powi(2) + (p.target[1] - p.base_height).powi(2)).sqrt();
    if dist >= reach || p.target[1] < 0.0 {
        return Err(Error::Scenario(format!(
            "elbow target ({}, {}) is outside the reachable workspace above the table",
            p.target[0], p.target[1]
        )));
    }
    let n = p.horizon;
    let x0 = DVector::from_vec(from_f64_slice::<T>(&p.start));
    let mut problem = PathProblem::at_rest(n, dof, lit(p.dt()), lit(p.sigma), x0)?;

    let target = [lit::<T>(p.target[0]), lit::<T>(p.target[1])];
    let w = lit::<T>(p.target_weight);
    let ee = chain.clone();
    problem.add_cost(CostTerm::new(
        FnFeature::new("reach", 1, 2, move |_, configs: &[&[T]]| {
            let (pos, j) = ee.point(configs[0], dof);
            FeatureEval {
                value: DVector::from_vec(vec![(pos.x - target[0]) * w, (pos.y - target[1]) * w]),
                jacobian: j * w,
            }
        }),
        StepRange::single(n),
        CostClass::State,
    ))?;

    let start = p.step_at(p.window_fraction);
    let all: Vec<usize> = (1..=dof).collect();
    let make = |id: &str, fixed: Vec<usize>| -> Skeleton<T> {
        let free_points = all.clone();
        if fixed.is_empty() || start > n {
            return Skeleton::new(id).with_mode(
                Mode::new("free", StepRange::new(1, n)).with_ineq(table(&chain, free_points)),
            );
        }
        let rest: Vec<usize> = all.iter().copied().filter(|k| !fixed.contains(k)).collect();
        let symbol = format!("on{}", fixed.iter().map(|k| k.to_string()).collect::<String>());
        let mut s = Skeleton::new(id);
        if start > 1 {
            s = s
                .with_mode(Mode::new("free", StepRange::new(1, start - 1)).with_ineq(table(&chain, free_points)))
                .with_switch(Switch::new(format!("touch{}", &symbol[2..]), start));
        }
        s.with_mode(
            Mode::new(symbol, StepRange::new(start, n))
                .with_eq(pin(&chain, fixed))
                .with_ineq(table(&chain, rest)),
        )
    };
    let skeletons = vec![
        make("free", vec![]),
        make("fix1", vec![1]),
        make("fix2", vec![2]),
        make("fix12", vec![1, 2]),
    ];
    let successors = SuccessorTable::new()
        .allow("free", "touch1", "on1")
        .allow("free", "touch2", "on2")
        .allow("free", "touch12", "on12");

    let initial = problem.constant_path();
    let initial_paths = vec![initial; skeletons.len()];
    let ee = chain.clone();
    let t = [lit::<T>(p.target[0]), lit::<T>(p.target[1])];
    let metric = FnTarget::new(move |q: &[T]| {
        let (pos, _) = ee.point(q, dof);
        ((pos.x - t[0]) * (pos.x - t[0]) + (pos.y - t[1]) * (pos.y - t[1])).sqrt()
    });
    Ok(Scenario {
        params: params.clone(),
        problem,
        skeletons,
        successors,
        initial_paths,
        target: Arc::new(metric),
        disturbance_direction: None,
    })
}
