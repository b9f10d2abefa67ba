use std::sync::Arc;

use nalgebra::{DMatrix, DVector};

use super::kinematics::contact_offset;
use super::{Scenario, ScenarioParams};
use crate::error::{Error, Result};
use crate::exec::CoordinateTarget;
use crate::path::{AffineFeature, CostClass, CostTerm, FeatureEval, FnFeature, Mode, PathProblem, Skeleton, StepRange, SuccessorTable, Switch};
use crate::scalar::{from_f64_slice, lit, Real};

const DIM: usize = 7;
const BOX: usize = 4;

/// Row of the contact offset normal to the face the contact lies on.
fn normal_row(contact: [f64; 2], half: f64) -> Option<usize> {
    let on = |v: f64| (v.abs() - half).abs() <= 1e-9 * half.max(1.0);
    let inside = |v: f64| v.abs() <= half * (1.0 + 1e-9);
    if on(contact[0]) && inside(contact[1]) {
        Some(0)
    } else if on(contact[1]) && inside(contact[0]) {
        Some(1)
    } else {
        None
    }
}

/// Finger `finger` held at a contact point of the box; `rows` selects the
/// components of the box-frame offset (normal, tangential).
fn contact<T: Real>(name: String, finger: usize, point: [f64; 2], rows: Vec<usize>) -> FnFeature<T> {
    let c = [lit::<T>(point[0]), lit::<T>(point[1])];
    let dim = rows.len();
    FnFeature::new(name, 1, dim, move |_, configs: &[&[T]]| {
        let q = configs[0];
        let (u, jf, jb) = contact_offset(&q[2 * finger..2 * finger + 2], &q[BOX..BOX + 3], c);
        let mut value = DVector::zeros(dim);
        let mut jac = DMatrix::zeros(dim, DIM);
        for (r, &k) in rows.iter().enumerate() {
            value[r] = u[k];
            jac.view_mut((r, 2 * finger), (1, 2)).copy_from(&jf.row(k));
            jac.view_mut((r, BOX), (1, 3)).copy_from(&jb.row(k));
        }
        FeatureEval { value, jacobian: jac }
    })
}

/// Box held still: `b_n - b_{n-1} = 0`.
fn box_rest<T: Real>() -> AffineFeature<T> {
    let mut a = DMatrix::zeros(3, 2 * DIM);
    for i in 0..3 {
        a[(i, BOX + i)] = -T::one();
        a[(i, DIM + BOX + i)] = T::one();
    }
    AffineFeature::new("boxRest", 2, a, DVector::zeros(3)).expect("valid shape")
}

/// Two point fingers pushing a square box in the plane. Configuration:
/// `[f1x, f1y, f2x, f2y, bx, by, btheta]`; only the fingers are actuated.
/// Skeletons `single` (finger 1 touches face-normal only) and `two` (both
/// fingers stick to their contact points).
pub fn build_push<T: Real>(params: &ScenarioParams) -> Result<Scenario<T>> {
    let p = params;
    if p.start.len() != DIM || p.target.len() != 3 {
        return Err(Error::Scenario("push start needs 7 coordinates and target a box pose (x, y, theta)".into()));
    }
    if !(p.box_half_size > 0.0) || p.contacts.len() != 2 {
        return Err(Error::Scenario("push needs a positive box half size and two contact points".into()));
    }
    let normals = p
        .contacts
        .iter()
        .map(|&c| {
            normal_row(c, p.box_half_size).ok_or_else(|| {
                Error::Scenario(format!(
                    "contact point ({}, {}) is not on the boundary of a box of half size {}",
                    c[0], c[1], p.box_half_size
                ))
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let n = p.horizon;
    let x0 = DVector::from_vec(from_f64_slice::<T>(&p.start));
    let mut problem = PathProblem::at_rest(n, DIM, lit(p.dt()), lit(p.sigma), x0.clone())?.with_actuated((0..4).collect())?;

    let mut a = DMatrix::zeros(3, 2 * DIM);
    let weights = [p.object_weight, p.object_weight, p.rotation_weight];
    for i in 0..3 {
        a[(i, BOX + i)] = lit(-weights[i]);
        a[(i, DIM + BOX + i)] = lit(weights[i]);
    }
    problem.add_cost(CostTerm::new(
        AffineFeature::new("boxVelocity", 2, a, DVector::zeros(3))?,
        StepRange::new(1, n),
        CostClass::Control,
    ))?;
    let w = lit::<T>(p.target_weight);
    let mut a = DMatrix::zeros(3, DIM);
    for i in 0..3 {
        a[(i, BOX + i)] = w;
    }
    let b = DVector::from_vec(from_f64_slice::<T>(&p.target)) * -w;
    problem.add_cost(CostTerm::new(AffineFeature::new("boxPose", 1, a, b)?, StepRange::single(n), CostClass::State))?;

    let start = p.step_at(p.window_fraction).max(2);
    let c = &p.contacts;
    let approach = || Mode::new("approach", StepRange::new(1, start - 1)).with_eq(box_rest());
    let single = Skeleton::new("single")
        .with_mode(approach())
        .with_switch(Switch::new("touch1", start))
        .with_mode(Mode::new("push1", StepRange::new(start, n)).with_eq(contact(
            "contactNormal1".into(),
            0,
            c[0],
            vec![normals[0]],
        )));
    let two = Skeleton::new("two")
        .with_mode(approach())
        .with_switch(Switch::new("touch12", start))
        .with_mode(
            Mode::new("push12", StepRange::new(start, n))
                .with_eq(contact("contact1".into(), 0, c[0], vec![normals[0], 1 - normals[0]]))
                .with_eq(contact("contact2".into(), 1, c[1], vec![normals[1], 1 - normals[1]])),
        );
    let successors = SuccessorTable::new()
        .allow("approach", "touch1", "push1")
        .allow("approach", "touch12", "push12");

    let init = initial_path(p, start);
    let initial = DVector::from_vec(from_f64_slice::<T>(init.as_slice()));
    Ok(Scenario {
        params: params.clone(),
        problem,
        skeletons: vec![single, two],
        successors,
        initial_paths: vec![initial.clone(), initial],
        target: Arc::new(CoordinateTarget {
            coords: vec![BOX, BOX + 1],
            target: DVector::from_vec(from_f64_slice::<T>(&p.target[..2])),
        }),
        disturbance_direction: None,
    })
}

/// Fingers travel to the contact points while the box rests, then the box
/// slides linearly to its target with the fingers attached.
fn initial_path(p: &ScenarioParams, start: usize) -> DVector<f64> {
    let n = p.horizon;
    let b0 = [p.start[4], p.start[5], p.start[6]];
    let world = |b: [f64; 3], c: [f64; 2]| {
        let (s, co) = b[2].sin_cos();
        [b[0] + co * c[0] - s * c[1], b[1] + s * c[0] + co * c[1]]
    };
    let mut x = DVector::zeros(n * DIM);
    for k in 1..=n {
        let mut q = [0.0; DIM];
        if k < start {
            let t = k as f64 / (start - 1) as f64;
            for f in 0..2 {
                let goal = world(b0, p.contacts[f]);
                for i in 0..2 {
                    q[2 * f + i] = p.start[2 * f + i] + t * (goal[i] - p.start[2 * f + i]);
                }
            }
            q[BOX..].copy_from_slice(&b0);
        } else {
            let t = (k + 1 - start) as f64 / (n + 1 - start) as f64;
            let b = [0, 1, 2].map(|i| b0[i] + t * (p.target[i] - b0[i]));
            for f in 0..2 {
                let w = world(b, p.contacts[f]);
                q[2 * f..2 * f + 2].copy_from_slice(&w);
            }
            q[BOX..].copy_from_slice(&b);
        }
        x.rows_mut((k - 1) * DIM, DIM).copy_from_slice(&q);
    }
    x
}
