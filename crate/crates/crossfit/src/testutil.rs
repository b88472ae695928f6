//! Dense reference constructions and random fixtures shared by unit tests.

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::design::{CrossedDesign, Factor};
use crate::smoother::FactorWeights;

pub(crate) fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub(crate) fn standard_normal_vec(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    (0..n).map(|_| rng.sample(StandardNormal)).collect()
}

/// Random design with every level occupied, no duplicate pairs, about
/// `n_extra` observations beyond the coverage ones, and N(0,1) features
/// (all-ones first column when `intercept` is set).
pub(crate) fn random_design(
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

pub(crate) fn random_weights(rng: &mut ChaCha8Rng, design: &CrossedDesign) -> FactorWeights {
    let w: Vec<f64> = (0..design.n_obs())
        .map(|_| 0.25 * rng.gen_range(-1.0..1.0f64).exp())
        .collect();
    FactorWeights::new(design, w).unwrap()
}

/// Dense N x L incidence matrix of one factor.
pub(crate) fn dense_incidence(design: &CrossedDesign, factor: Factor) -> DMatrix<f64> {
    let levels = design.levels_of(factor);
    let mut z = DMatrix::zeros(design.n_obs(), design.n_levels(factor));
    for (n, &l) in levels.iter().enumerate() {
        z[(n, l as usize)] = 1.0;
    }
    z
}

/// Dense N x N one-factor smoother Z (Z' W Z + I/sigma2)^{-1} Z' W.
pub(crate) fn dense_smoother(
    design: &CrossedDesign,
    factor: Factor,
    weights: &FactorWeights,
    sigma2: f64,
) -> DMatrix<f64> {
    let z = dense_incidence(design, factor);
    let w = DMatrix::from_diagonal(&nalgebra::DVector::from_column_slice(weights.w()));
    let l = design.n_levels(factor);
    let core = z.transpose() * &w * &z + DMatrix::identity(l, l) / sigma2;
    let inv = core.try_inverse().expect("smoother core must be invertible");
    &z * inv * z.transpose() * &w
}

/// Dense N x N two-factor smoother Z (Z' W Z + D^{-1})^{-1} Z' W for
/// Z = [Z_A : Z_B] and D = diag(sigma2_a I_R, sigma2_b I_C).
pub(crate) fn dense_two_factor_smoother(
    design: &CrossedDesign,
    weights: &FactorWeights,
    sigma2_a: f64,
    sigma2_b: f64,
) -> DMatrix<f64> {
    let za = dense_incidence(design, Factor::A);
    let zb = dense_incidence(design, Factor::B);
    let n = design.n_obs();
    let (r, c) = (design.n_rows(), design.n_cols());
    let mut z = DMatrix::zeros(n, r + c);
    z.view_mut((0, 0), (n, r)).copy_from(&za);
    z.view_mut((0, r), (n, c)).copy_from(&zb);
    let w = DMatrix::from_diagonal(&nalgebra::DVector::from_column_slice(weights.w()));
    let mut dinv = DMatrix::zeros(r + c, r + c);
    for i in 0..r {
        dinv[(i, i)] = 1.0 / sigma2_a;
    }
    for j in 0..c {
        dinv[(r + j, r + j)] = 1.0 / sigma2_b;
    }
    let core = z.transpose() * &w * &z + dinv;
    let inv = core.try_inverse().expect("two-factor core must be invertible");
    &z * inv * z.transpose() * &w
}
