//! Balancing moments against independent oracles.

mod common;

use cbdid_core::linalg::vech;
use cbdid_core::propensity::{gmm_objective, moment_dim, moment_h, moment_jacobian, moment_mean};
use cbdid_core::{sigmoid, DMatrix, DVector};
use common::{max_rel_err, random_design};

/// `h_n` straight from the defining matrices, one unit at a time.
fn naive_moments(alpha: &DVector<f64>, x: &DMatrix<f64>, d: &[bool]) -> DVector<f64> {
    let (n, p) = x.shape();
    let mut h1 = DMatrix::zeros(p, p);
    let mut h0 = DMatrix::zeros(p, p);
    for i in 0..n {
        let xi = x.row(i).transpose();
        let e = sigmoid(xi.dot(alpha));
        let d1 = if d[i] { 1.0 } else { 0.0 };
        let outer = &xi * xi.transpose();
        h1 += &outer * (e * (d1 / e - 1.0));
        h0 += &outer * (e * ((1.0 - d1) / (1.0 - e) - 1.0));
    }
    let v1 = vech(&(h1 / n as f64)).unwrap();
    let v0 = vech(&(h0 / n as f64)).unwrap();
    DVector::from_iterator(v1.len() + v0.len(), v1.iter().chain(v0.iter()).copied())
}

fn central_difference(alpha: &DVector<f64>, x: &DMatrix<f64>, d: &[bool]) -> DMatrix<f64> {
    let p = alpha.len();
    let mut g = DMatrix::zeros(moment_dim(p), p);
    for j in 0..p {
        let step = 1e-5 * alpha[j].abs().max(1.0);
        let mut up = alpha.clone();
        let mut down = alpha.clone();
        up[j] += step;
        down[j] -= step;
        let diff = (moment_mean(&up, x, d).unwrap() - moment_mean(&down, x, d).unwrap()) / (2.0 * step);
        g.set_column(j, &diff);
    }
    g
}

#[test]
fn jacobian_matches_finite_differences_on_100_instances() {
    let mut worst = 0.0f64;
    for seed in 0..100u64 {
        let p = 1 + (seed as usize % 4);
        let n = 40 + 7 * (seed as usize % 11);
        let (x, d, alpha) = random_design(seed, n, p);
        let g = moment_jacobian(&alpha, &x, &d).unwrap();
        let fd = central_difference(&alpha, &x, &d);
        let err = max_rel_err(&g, &fd);
        worst = worst.max(err);
        assert!(err < 1e-6, "seed {seed}: relative error {err:e}");
    }
    assert!(worst < 1e-6);
}

#[test]
fn moments_match_defining_formula() {
    for seed in 0..30u64 {
        let (x, d, alpha) = random_design(1000 + seed, 60, 3);
        let fast = moment_mean(&alpha, &x, &d).unwrap();
        let slow = naive_moments(&alpha, &x, &d);
        assert!((fast - slow).amax() < 1e-12);
    }
}

#[test]
fn per_unit_rows_average_to_mean() {
    let (x, d, alpha) = random_design(7, 50, 3);
    let rows = moment_h(&alpha, &x, &d).unwrap();
    assert_eq!(rows.shape(), (50, moment_dim(3)));
    let mean = rows.row_mean().transpose();
    assert!((mean - moment_mean(&alpha, &x, &d).unwrap()).amax() < 1e-13);
}

#[test]
fn moments_vanish_in_expectation_at_true_alpha() {
    // With d drawn from the model, E[H¹] = E[H⁰] = 0; the sample mean shrinks like n^{-1/2}.
    use rand::{Rng, SeedableRng};
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(11);
    let n = 200_000;
    let alpha = DVector::from_vec(vec![0.2, -0.7]);
    let x = DMatrix::from_fn(n, 2, |_, j| if j == 0 { 1.0 } else { rng.random_range(0.0..2.0) });
    let d: Vec<bool> = (0..n)
        .map(|i| rng.random::<f64>() < sigmoid(x[(i, 0)] * alpha[0] + x[(i, 1)] * alpha[1]))
        .collect();
    let h = moment_mean(&alpha, &x, &d).unwrap();
    assert!(h.amax() < 0.02, "{h}");
}

#[test]
fn objective_is_quadratic_form() {
    let (x, d, alpha) = random_design(3, 80, 2);
    let q = moment_dim(2);
    let w = DMatrix::from_fn(q, q, |i, j| if i == j { 1.0 + i as f64 } else { 0.1 });
    let h = moment_mean(&alpha, &x, &d).unwrap();
    let expect = (h.transpose() * &w * &h)[(0, 0)];
    let got = gmm_objective(&alpha, &x, &d, &w).unwrap();
    assert!((got - expect).abs() <= 1e-14 * expect.abs().max(1.0));
    assert!(gmm_objective(&alpha, &x, &d, &DMatrix::identity(q - 1, q - 1)).is_err());
}
