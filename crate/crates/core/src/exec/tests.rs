use super::*;
use crate::kodp::{build_policy, KodpConfig};
use crate::laplace::{build_component, mixture_weights};
use crate::oracles::random_constrained_instance;
use crate::solver::{solve, SolverConfig};

fn tight() -> SolverConfig {
    SolverConfig {
        tol_step: 1e-11,
        tol_constraint: 1e-11,
        ..SolverConfig::default()
    }
}

struct Fixture {
    problem: PathProblem<f64>,
    skeletons: Vec<Skeleton<f64>>,
    solutions: Vec<NlpSolution<f64>>,
}

fn fixture(seeds: &[u64]) -> Fixture {
    // all instances share the problem of the first seed; skeletons differ
    let (problem, _) = random_constrained_instance(seeds[0], 5, 2).unwrap();
    let skeletons: Vec<Skeleton<f64>> = seeds
        .iter()
        .map(|&s| random_constrained_instance(s, 5, 2).unwrap().1)
        .collect();
    let solutions = skeletons
        .iter()
        .map(|s| solve(&problem, s, None, &tight()).unwrap())
        .collect();
    Fixture {
        problem,
        skeletons,
        solutions,
    }
}

fn controller(f: &Fixture, mode: ControllerMode, hysteresis: f64) -> CompositeController<f64> {
    let policies = f
        .skeletons
        .iter()
        .zip(&f.solutions)
        .map(|(s, sol)| build_policy(&f.problem, s, sol, &KodpConfig::default()).unwrap())
        .collect();
    let flr = f
        .skeletons
        .iter()
        .zip(&f.solutions)
        .map(|(s, sol)| future_log_ratios(&f.problem, s, sol, &LaplaceConfig::default()).unwrap())
        .collect();
    CompositeController::new(policies, flr, mode, hysteresis).unwrap()
}

#[test]
fn selection_rules() {
    assert_eq!(select(&[0.5, 0.5], None, 0.0), 0);
    assert_eq!(select(&[0.2, 0.5, 0.3], None, 0.0), 1);
    assert_eq!(select(&[0.45, 0.55], Some(0), 0.2), 0);
    assert_eq!(select(&[0.3, 0.7], Some(0), 0.2), 1);
}

#[test]
fn compose_edge_cases() {
    let u = DVector::from_vec(vec![1.0, -2.0]);
    let cmds = vec![u.clone(), -u.clone()];
    let (b, _) = compose_commands(&cmds, &[0.5, 0.5], ControllerMode::Blending, None, 0.0);
    assert_eq!(b, DVector::zeros(2));
    let (s, i) = compose_commands(&cmds, &[0.5, 0.5], ControllerMode::Switching, None, 0.0);
    assert_eq!((s, i), (u.clone(), 0));
    let (b, _) = compose_commands(&cmds, &[1.0, 0.0], ControllerMode::Blending, None, 0.0);
    let (s, _) = compose_commands(&cmds, &[1.0, 0.0], ControllerMode::Switching, None, 0.0);
    assert_eq!(b, u);
    assert_eq!(s, u);
}

#[test]
fn initial_weights_match_offline_mixture() {
    let f = fixture(&[4, 5]);
    let c = controller(&f, ControllerMode::Blending, 0.0);
    let comps: Vec<_> = f
        .skeletons
        .iter()
        .zip(&f.solutions)
        .map(|(s, sol)| build_component(&f.problem, s, sol, &LaplaceConfig::default()).unwrap())
        .collect();
    let offline = mixture_weights(&comps).unwrap();
    let prefix = f.problem.prefix();
    let past = DVector::from_iterator(4, prefix[0].iter().chain(prefix[1].iter()).copied());
    let online = c.online_weights(1, &past).unwrap();
    for (a, b) in online.iter().zip(&offline) {
        assert!((a - b).abs() < 1e-10, "{a} vs {b}");
    }
    for (i, comp) in comps.iter().enumerate() {
        assert_eq!(c.future_log_ratios[i][0], comp.log_ratio);
    }
}

#[test]
fn identical_skeletons_split_evenly() {
    let f = fixture(&[6, 6]);
    let c = controller(&f, ControllerMode::Blending, 0.0);
    let w = c.online_weights(3, &DVector::from_vec(vec![0.3, -1.0, 2.0, 0.1])).unwrap();
    assert_eq!(w, vec![0.5, 0.5]);
}

#[test]
fn noiseless_rollout_reproduces_optimum() {
    let f = fixture(&[7]);
    for mode in [ControllerMode::Blending, ControllerMode::Switching] {
        let c = controller(&f, mode, 0.0);
        let r = rollout(&f.problem, &f.skeletons, &c, &RolloutOptions::default()).unwrap();
        let x = f.problem.path_from_configs(&r.path).unwrap();
        assert!((x - &f.solutions[0].x_star).amax() < 1e-8);
        assert!(r.weights.iter().all(|w| (w.iter().sum::<f64>() - 1.0).abs() < 1e-12));
        assert_eq!(r.switches, 0);
        assert!((r.total_cost - f.solutions[0].f_star).abs() < 1e-8);
    }
}

#[test]
fn noisy_rollouts_are_deterministic_and_feasible() {
    let f = fixture(&[8, 9]);
    let c = controller(&f, ControllerMode::Switching, 0.0);
    let opts = RolloutOptions {
        noise_scale: 2.0,
        seed: 17,
        target: Some(Arc::new(CoordinateTarget {
            coords: vec![0, 1],
            target: DVector::zeros(2),
        }) as SharedTarget<f64>),
        ..RolloutOptions::default()
    };
    let a = rollout(&f.problem, &f.skeletons, &c, &opts).unwrap();
    let b = rollout(&f.problem, &f.skeletons, &c, &opts).unwrap();
    assert_eq!(a, b);
    assert!(a.final_error.is_some());
    // projection keeps the executing skeleton's equalities satisfied
    for (n, &v) in a.violation.iter().enumerate() {
        assert!(v < 1e-9, "step {}: {v}", n + 1);
    }
    let other = RolloutOptions { seed: 18, ..opts };
    assert_ne!(rollout(&f.problem, &f.skeletons, &c, &other).unwrap().path, a.path);
}

#[test]
fn disturbance_moves_the_path() {
    let f = fixture(&[7]);
    let c = controller(&f, ControllerMode::Blending, 0.0);
    let opts = RolloutOptions {
        disturbances: vec![Disturbance {
            step: 1,
            offset: vec![0.5],
        }],
        ..RolloutOptions::default()
    };
    let r = rollout(&f.problem, &f.skeletons, &c, &opts).unwrap();
    let x = f.problem.path_from_configs(&r.path).unwrap();
    assert!((x - &f.solutions[0].x_star).amax() > 1e-3);
}

#[test]
fn rms_helpers() {
    assert_eq!(rms::<f64>(&[]), 0.0);
    assert_eq!(rms(&[0.3]), 0.3);
    let t = CoordinateTarget {
        coords: vec![1],
        target: DVector::from_element(1, 2.0),
    };
    let paths = vec![DVector::from_vec(vec![0.0, 0.0, 5.0, 2.0])];
    assert_eq!(rms_final_error_of_paths(&paths, 2, &t), 0.0);
}
