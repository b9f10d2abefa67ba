use super::*;
use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const TABLE_F: [f64; 4] = [0.1930, 0.7682, 0.6204, 1.4827];
const TABLE_RATIO: [f64; 4] = [0.0041, 0.0099, 0.0584, 0.0646];

fn random_spd(n: usize, rng: &mut ChaCha8Rng) -> DMatrix<f64> {
    let a = DMatrix::from_fn(n, n, |_, _| rng.random_range(-1.0..1.0));
    &a * a.transpose() + DMatrix::identity(n, n) * 0.5
}

fn component(h: &DMatrix<f64>, h0: &DMatrix<f64>, j: &DMatrix<f64>) -> LaplaceComponent<f64> {
    let n = h.nrows();
    LaplaceComponent::from_parts("c", DVector::zeros(n), 0.0, h, h0, j, &LaplaceConfig::default()).unwrap()
}

#[test]
fn reaching_table_weights() {
    let lr: Vec<f64> = TABLE_RATIO.iter().map(|r| r.ln()).collect();
    let w = weights_from_scores(&TABLE_F, &lr).unwrap();
    let expected = [0.0626, 0.0850, 0.5810, 0.2713];
    for (a, b) in w.iter().zip(expected) {
        assert!((a - b).abs() < 1e-3, "{a} vs {b}");
    }
    let j = multimodal_cost_from_scores(&TABLE_F, &lr, PriorMode::Unnormalized).unwrap();
    assert!((j - 2.918).abs() < 2e-3, "{j}");
    let ju = multimodal_cost_from_scores(&TABLE_F, &lr, PriorMode::UniformWithNa).unwrap();
    assert!((ju - j - 4f64.ln()).abs() < 1e-12);
    assert!((ju - 4.304).abs() < 2e-3);
}

#[test]
fn weight_edge_cases() {
    assert_eq!(weights_from_scores(&[3.0], &[-1.0]).unwrap(), vec![1.0]);
    assert_eq!(weights_from_scores(&[0.4, 0.4], &[0.1, 0.1]).unwrap(), vec![0.5, 0.5]);
    // would underflow in naive space
    let w = weights_from_scores(&[2000.0, 2001.0], &[0.0, 0.0]).unwrap();
    assert!((w[0] - 1.0 / (1.0 + (-1f64).exp())).abs() < 1e-12);
    assert!(weights_from_scores(&[f64::NAN], &[0.0]).is_err());
}

#[test]
fn single_component_cost_reduces() {
    let j = multimodal_cost_from_scores(&[0.7], &[-0.2], PriorMode::UniformWithNa).unwrap();
    assert!((j - 0.9f64).abs() < 1e-14);
}

#[test]
fn unconstrained_covariance_is_inverse_hessian() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let h = random_spd(4, &mut rng);
    let c = component(&h, &h, &DMatrix::zeros(0, 4));
    assert_eq!(c.rank, 4);
    let inv = h.clone().try_inverse().unwrap();
    assert!((c.covariance().unwrap() - inv).amax() < 1e-10);
    assert_eq!(c.log_ratio, 0.0);
}

#[test]
fn constrained_quadratic_covariance() {
    let h = DMatrix::identity(2, 2);
    let j = DMatrix::from_row_slice(1, 2, &[1.0, 0.0]);
    let c = component(&h, &h, &j);
    let expected = DMatrix::from_row_slice(2, 2, &[0.0, 0.0, 0.0, 1.0]);
    assert!((c.covariance().unwrap() - expected).amax() < 1e-12);
    assert_eq!((c.rank, c.constraint_rank), (1, 1));
}

#[test]
fn scaling_shifts_log_ratio() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let h0 = random_spd(5, &mut rng);
    let j = DMatrix::from_fn(2, 5, |_, _| rng.random_range(-1.0..1.0));
    let c = component(&(&h0 * 3.0), &h0, &j);
    assert_eq!(c.rank, 3);
    assert!((c.log_ratio + 1.5 * 3f64.ln()).abs() < 1e-10);
}

#[test]
fn log_ratio_matches_eigenvalue_oracle() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    for _ in 0..5 {
        let h = random_spd(3, &mut rng);
        let h0 = random_spd(3, &mut rng);
        let c = component(&h, &h0, &DMatrix::zeros(0, 3));
        let pdet = |m: &DMatrix<f64>| {
            m.clone()
                .symmetric_eigen()
                .eigenvalues
                .iter()
                .filter(|&&e| e > 1e-12)
                .product::<f64>()
        };
        let oracle = 0.5 * (pdet(&h0) / pdet(&h)).ln();
        assert!((c.log_ratio - oracle).abs() <= 1e-10 * oracle.abs().max(1.0));
    }
}

#[test]
fn log_ratio_is_basis_invariant() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let h = random_spd(6, &mut rng);
    let h0 = random_spd(6, &mut rng);
    let j = DMatrix::from_fn(2, 6, |_, _| rng.random_range(-1.0..1.0));
    let mut c = component(&h, &h0, &j);
    let q = DMatrix::from_fn(4, 4, |_, _| rng.random_range(-1.0..1.0)).qr().q();
    c.w = &c.w * &q;
    c.proj_hess = c.w.transpose() * &h * &c.w;
    c.proj_hess0 = c.w.transpose() * &h0 * &c.w;
    let rotated = logdet_ratio(&c).unwrap();
    assert!((rotated - c.log_ratio).abs() < 1e-10);
}

#[test]
fn flat_direction_is_singular() {
    let h = DMatrix::from_diagonal(&DVector::from_vec(vec![1.0, 0.0]));
    let r = LaplaceComponent::from_parts(
        "flat",
        DVector::zeros(2),
        0.0,
        &h,
        &DMatrix::identity(2, 2),
        &DMatrix::zeros(0, 2),
        &LaplaceConfig::default(),
    );
    assert!(matches!(r, Err(Error::Singular { .. })));
}

#[test]
fn fully_constrained_component() {
    let h = DMatrix::identity(2, 2);
    let c = component(&h, &h, &DMatrix::identity(2, 2));
    assert!(c.fully_constrained());
    assert_eq!(c.log_ratio, 0.0);
    let s = sample_paths(&c, 3, 0, SampleSource::Controlled).unwrap();
    assert!(s.iter().all(|x| x == &c.x_star));
}

#[test]
fn samples_are_deterministic_and_in_span() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let h = random_spd(5, &mut rng);
    let j = DMatrix::from_fn(2, 5, |_, _| rng.random_range(-1.0..1.0));
    let c = component(&h, &h, &j);
    let a = sample_paths(&c, 50, 9, SampleSource::Controlled).unwrap();
    let b = sample_paths(&c, 50, 9, SampleSource::Controlled).unwrap();
    assert_eq!(a, b);
    for s in &a {
        assert!((&j * (s - &c.x_star)).amax() < 1e-8);
    }
}

#[test]
fn sample_mean_concentrates() {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let h = random_spd(3, &mut rng);
    let c = component(&h, &h, &DMatrix::zeros(0, 3));
    let s = sample_paths(&c, 10_000, 1, SampleSource::Controlled).unwrap();
    let mean = s.iter().fold(DVector::zeros(3), |a, x| a + x) / 10_000.0;
    let max_std = c.marginal_std().unwrap().max();
    assert!(mean.amax() < 4.0 * max_std / 100.0);
}

#[test]
fn mixture_record_round_trips() {
    let h = DMatrix::identity(2, 2);
    let c = component(&h, &h, &DMatrix::zeros(0, 2));
    let m = PathMixture::new(vec![c.clone(), c], PriorMode::Unnormalized).unwrap();
    let rec = m.record(false).unwrap();
    let json = serde_json::to_string(&rec).unwrap();
    let back: MixtureRecord = serde_json::from_str(&json).unwrap();
    assert_eq!(back, rec);
    assert!(json.contains("\"priorMode\":\"unnormalized\""));
    assert!(!json.contains("covariance"));
}
