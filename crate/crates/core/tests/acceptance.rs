//! Acceptance criteria. Runs without the libtest harness so that every
//! criterion prints its `[PASS]` / `[FAIL]` line; exits nonzero on any failure.

use std::time::{Duration, Instant};

use slgp_core::exec::{rms_final_error_of_paths, ControllerMode};
use slgp_core::laplace::{multimodal_cost_from_scores, sample_paths, weights_from_scores, PriorMode, SampleSource};
use slgp_core::oracles::{REACHING_F_STAR, REACHING_RATIO};
use slgp_core::plan::{plan, PlanConfig};
use slgp_core::scenarios::{build, probe, route_outcome, switching_threshold, RouteOutcome, ScenarioName, ScenarioParams};
use slgp_core::selftest;

fn report(id: u32, title: &str, ok: bool, detail: String, started: Instant, budget: Duration) -> bool {
    let elapsed = started.elapsed();
    let ok = ok && elapsed <= budget;
    println!(
        "[{}] criterion {id}: {title} ({detail}; {:.2}s of {:.0}s)",
        if ok { "PASS" } else { "FAIL" },
        elapsed.as_secs_f64(),
        budget.as_secs_f64()
    );
    ok
}

fn criterion_1_reaching_table_arithmetic() -> bool {
    let t = Instant::now();
    let lr: Vec<f64> = REACHING_RATIO.iter().map(|r| r.ln()).collect();
    let w = weights_from_scores(&REACHING_F_STAR, &lr).unwrap();
    let expected = [0.0626, 0.0850, 0.5810, 0.2713];
    let dw = w.iter().zip(expected).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
    let j = multimodal_cost_from_scores(&REACHING_F_STAR, &lr, PriorMode::Unnormalized).unwrap();
    let ok = dw <= 1e-3 && (j - 2.918).abs() <= 2e-3;
    report(
        1,
        "mixture weights and multimodal cost",
        ok,
        format!("weights {w:.4?}, max dev {dw:.1e}, cost {j:.4}"),
        t,
        Duration::from_secs(1),
    )
}

fn criterion_2_riccati_equivalence() -> bool {
    let t = Instant::now();
    let cases = selftest::riccati_cases(10).unwrap();
    let r = selftest::check_riccati(&cases);
    report(2, "feedback recursion equals Riccati", r.passed, format!("max dev {:.1e}", r.metric), t, Duration::from_secs(1))
}

fn criterion_3_dense_qp_oracle() -> bool {
    let t = Instant::now();
    let cases = selftest::dense_qp_cases(10).unwrap();
    let r = selftest::check_dense_qp(&cases, 20);
    report(3, "cost-to-go and steps equal dense QP", r.passed, format!("max dev {:.1e}", r.metric), t, Duration::from_secs(5))
}

fn criterion_4_laplace_exactness() -> bool {
    let t = Instant::now();
    let cases = selftest::lq_laplace_cases(3).unwrap();
    let r = selftest::check_lq_laplace(&cases, 100_000);
    let ok = r.iter().all(|c| c.passed);
    let detail = format!("posterior dev {:.1e}, sample covariance dev {:.3}", r[0].metric, r[1].metric);
    report(4, "Laplace component of LQ paths", ok, detail, t, Duration::from_secs(10))
}

fn criterion_5_elbow_ordering() -> bool {
    let t = Instant::now();
    let s = build::<f64>(&ScenarioParams::defaults(ScenarioName::Elbow)).unwrap();
    let p = plan(&s, &PlanConfig::default()).unwrap();
    let get = |id: &str| p.mixture.components.iter().find(|c| c.skeleton_id == id).unwrap();
    let lr = |id| get(id).log_ratio;
    let monotone = lr("free") < lr("fix1").min(lr("fix2")) && lr("fix1").max(lr("fix2")) < lr("fix12");
    let cheapest = ["fix1", "fix2", "fix12"].iter().all(|id| get("free").f_star < get(id).f_star);
    let detail = format!(
        "logRatio free {:.3}, fix1 {:.3}, fix2 {:.3}, fix12 {:.3}; fStar free {:.3}",
        lr("free"),
        lr("fix1"),
        lr("fix2"),
        lr("fix12"),
        get("free").f_star
    );
    let converged = p.solutions.iter().all(|s| s.converged());
    report(5, "elbow skeleton ordering", monotone && cheapest && converged, detail, t, Duration::from_secs(60))
}

fn criterion_6_push_ordering() -> bool {
    let t = Instant::now();
    let s = build::<f64>(&ScenarioParams::defaults(ScenarioName::Push)).unwrap();
    let p = plan(&s, &PlanConfig::default()).unwrap();
    let get = |id: &str| p.mixture.components.iter().find(|c| c.skeleton_id == id).unwrap();
    let spread = |id| {
        let paths = sample_paths(get(id), 100, 2024, SampleSource::Controlled).unwrap();
        rms_final_error_of_paths(&paths, s.problem.dim(), s.target.as_ref())
    };
    let (rs, rt) = (spread("single"), spread("two"));
    let (ls, lt) = (get("single").log_ratio, get("two").log_ratio);
    let detail = format!("logRatio single {ls:.3} < two {lt:.3}; open-loop RMS single {rs:.4} > two {rt:.4}");
    report(6, "push finger ordering", lt > ls && rs > rt, detail, t, Duration::from_secs(60))
}

fn criterion_7_switching_threshold() -> bool {
    let t = Instant::now();
    let s = build::<f64>(&ScenarioParams::defaults(ScenarioName::Tworoute)).unwrap();
    let p = plan(&s, &PlanConfig::default()).unwrap();
    let c = p.controller(ControllerMode::Blending, 0.0).unwrap();
    let (a, b) = (s.skeleton_index("A").unwrap(), s.skeleton_index("B").unwrap());
    let threshold = switching_threshold(&s, &c, 12, (a, b), 2.0, 1e-2).unwrap();
    let (ok, detail) = match threshold {
        Some(th) => {
            let below = route_outcome(&probe(&s, &c, 12, th - 1e-2).unwrap(), a, b);
            let above = route_outcome(&probe(&s, &c, 12, th + 1e-2).unwrap(), a, b);
            (
                below == RouteOutcome::Stays && above == RouteOutcome::Switches,
                format!("threshold {th:.3}: {below:?} below, {above:?} above"),
            )
        }
        None => (false, "no bracketing threshold in [0, 2]".into()),
    };
    report(7, "tworoute switching threshold", ok, detail, t, Duration::from_secs(120))
}

fn criterion_8_invariant_suites() -> bool {
    let t = Instant::now();
    let cases = selftest::scenario_cases().unwrap();
    let checks = [
        selftest::check_scenario_jacobians(&cases),
        selftest::check_simplex(&cases),
        selftest::check_nullspaces(&cases),
        selftest::check_determinism(&cases),
    ];
    for c in &checks {
        println!("    {c}");
    }
    let detail = checks
        .iter()
        .map(|c| format!("{} {}", c.name, if c.passed { "ok" } else { "failed" }))
        .collect::<Vec<_>>()
        .join(", ");
    report(8, "invariant suites", checks.iter().all(|c| c.passed), detail, t, Duration::from_secs(60))
}

fn main() {
    let criteria: [fn() -> bool; 8] = [
        criterion_1_reaching_table_arithmetic,
        criterion_2_riccati_equivalence,
        criterion_3_dense_qp_oracle,
        criterion_4_laplace_exactness,
        criterion_5_elbow_ordering,
        criterion_6_push_ordering,
        criterion_7_switching_threshold,
        criterion_8_invariant_suites,
    ];
    let failed = criteria.iter().filter(|c| !c()).count();
    println!("acceptance: {} of {} criteria passed", criteria.len() - failed, criteria.len());
    if failed > 0 {
        std::process::exit(1);
    }
}
