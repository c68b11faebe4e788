#![allow(dead_code)]

use cbdid_core::model::{Dataset, Unit};
use cbdid_core::{sigmoid, DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

/// Random logistic-treatment dataset with `l` Uniform(0, 2) covariates.
pub fn random_dataset(seed: u64, n: usize, l: usize) -> Dataset {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let alpha: Vec<f64> = (0..=l).map(|_| rng.random_range(-0.8..0.8)).collect();
    let beta: Vec<f64> = (0..=l).map(|_| rng.random_range(-2.0..2.0)).collect();
    loop {
        let units: Vec<Unit> = (0..n)
            .map(|_| {
                let x: Vec<f64> = (0..l).map(|_| rng.random_range(0.0..2.0)).collect();
                let eta = alpha[0] + x.iter().zip(&alpha[1..]).map(|(a, b)| a * b).sum::<f64>();
                let treated = rng.random::<f64>() < sigmoid(eta);
                let y_pre: f64 = rng.sample(StandardNormal);
                let noise: f64 = rng.sample(StandardNormal);
                let effect = if treated {
                    beta[0] + x.iter().zip(&beta[1..]).map(|(a, b)| a * b).sum::<f64>()
                } else {
                    0.0
                };
                Unit { covariates: x, treated, y_pre, y_post: y_pre + effect + noise }
            })
            .collect();
        let names = (1..=l).map(|j| format!("x{j}")).collect();
        if let Ok(ds) = Dataset::new(names, units) {
            if ds.n_treated() > 2 * (l + 1) && ds.n_control() > 2 * (l + 1) {
                return ds;
            }
        }
    }
}

/// Random dense design with an intercept column and a random treatment split.
pub fn random_design(seed: u64, n: usize, p: usize) -> (DMatrix<f64>, Vec<bool>, DVector<f64>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let x = DMatrix::from_fn(n, p, |_, j| if j == 0 { 1.0 } else { rng.random_range(-1.5..1.5) });
    let mut d: Vec<bool> = (0..n).map(|_| rng.random::<f64>() < 0.45).collect();
    d[0] = true;
    d[1] = false;
    let alpha = DVector::from_fn(p, |_, _| rng.random_range(-0.5..0.5));
    (x, d, alpha)
}

pub fn max_rel_err(a: &DMatrix<f64>, b: &DMatrix<f64>) -> f64 {
    let scale = b.amax().max(1e-12);
    (a - b).amax() / scale
}
