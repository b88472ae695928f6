//! Shared fixtures for the integration suites.

#![allow(dead_code)]

use std::sync::{Mutex, MutexGuard, PoisonError};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crossfit::{CrossedDesign, FactorWeights};

/// Serializes the heavier tests so wall-clock measurements are not
/// distorted by sibling tests on other threads.
static TEST_GUARD: Mutex<()> = Mutex::new(());

pub fn serialize_tests() -> MutexGuard<'static, ()> {
    TEST_GUARD.lock().unwrap_or_else(PoisonError::into_inner)
}

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn standard_normal_vec(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    (0..n).map(|_| rng.sample(StandardNormal)).collect()
}

/// Random design with full level coverage, unique pairs, and an intercept
/// column when requested.
pub fn random_design(
    rng: &mut ChaCha8Rng,
    n_rows: usize,
    n_cols: usize,
    n_features: usize,
    n_extra: usize,
    intercept: bool,
) -> CrossedDesign {
    use std::collections::HashSet;
    let mut pairs: Vec<(u32, u32)> = Vec::new();
    let mut seen = HashSet::new();
    for i in 0..n_rows {
        let j = rng.gen_range(0..n_cols) as u32;
        if seen.insert((i as u32, j)) {
            pairs.push((i as u32, j));
        }
    }
    for j in 0..n_cols {
        let i = rng.gen_range(0..n_rows) as u32;
        if seen.insert((i, j as u32)) {
            pairs.push((i, j as u32));
        }
    }
    let target = pairs.len() + n_extra;
    let mut attempts = 0;
    while pairs.len() < target && attempts < 50 * target {
        attempts += 1;
        let i = rng.gen_range(0..n_rows) as u32;
        let j = rng.gen_range(0..n_cols) as u32;
        if seen.insert((i, j)) {
            pairs.push((i, j));
        }
    }
    let n = pairs.len();
    let mut x = Vec::with_capacity(n * n_features);
    for _ in 0..n {
        for q in 0..n_features {
            if intercept && q == 0 {
                x.push(1.0);
            } else {
                x.push(rng.sample(StandardNormal));
            }
        }
    }
    let y: Vec<f64> = (0..n).map(|_| f64::from(rng.gen_range(0..2))).collect();
    let (row_of, col_of) = pairs.into_iter().unzip();
    CrossedDesign::from_parts(n_rows, n_cols, n_features, row_of, col_of, y, x).unwrap()
}

pub fn random_weights(rng: &mut ChaCha8Rng, design: &CrossedDesign) -> FactorWeights {
    let w: Vec<f64> = (0..design.n_obs())
        .map(|_| 0.25 * rng.gen_range(-1.0..1.0f64).exp())
        .collect();
    FactorWeights::new(design, w).unwrap()
}

/// Prints one acceptance line and panics on failure.
pub fn criterion(number: usize, pass: bool, detail: &str) {
    let status = if pass { "PASS" } else { "FAIL" };
    println!("criterion {number:>2}: {status} - {detail}");
    assert!(pass, "criterion {number} failed: {detail}");
}
