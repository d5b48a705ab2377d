//! Central finite-difference gradient checking.
//!
//! A check flattens everything differentiable (parameters and inputs) into
//! one `Vec<f64>`, evaluates the scalar loss twice per element at `±eps`,
//! and compares against the analytic gradient with the relative error
//! `|a - n| / max(|a|, |n|, 1e-8)`.

use rand::seq::index::sample as index_sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::Result;

pub const DEFAULT_EPS: f64 = 1e-5;

/// Elements above this count are checked on a random subsample.
pub const SUBSAMPLE_LIMIT: usize = 200;

pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-8)
}

/// Max relative error between `analytic` and central differences of `eval`
/// over the elements of `theta`. Checks all elements up to
/// [`SUBSAMPLE_LIMIT`], then a seeded random subsample of that size.
pub fn max_relative_error(
    theta: &mut [f64],
    analytic: &[f64],
    mut eval: impl FnMut(&[f64]) -> Result<f64>,
    eps: f64,
    seed: u64,
) -> Result<f64> {
    assert_eq!(theta.len(), analytic.len(), "gradient length must match parameter length");
    let indices: Vec<usize> = if theta.len() <= SUBSAMPLE_LIMIT {
        (0..theta.len()).collect()
    } else {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        index_sample(&mut rng, theta.len(), SUBSAMPLE_LIMIT).into_vec()
    };
    let mut worst = 0.0f64;
    for &i in &indices {
        let saved = theta[i];
        theta[i] = saved + eps;
        let plus = eval(theta)?;
        theta[i] = saved - eps;
        let minus = eval(theta)?;
        theta[i] = saved;
        let numeric = (plus - minus) / (2.0 * eps);
        worst = worst.max(relative_error(analytic[i], numeric));
    }
    Ok(worst)
}
