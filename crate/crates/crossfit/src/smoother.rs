//! O(N) ridge smoothers for a single grouping factor.
//!
//! Applying the factor-A smoother to a response r solves
//!
//! ```text
//!   min_a ||r - Z_A a||^2_W + ||a||^2 / sigma2
//! ```
//!
//! whose solution is a weighted, shrunken within-group mean per level,
//! `coef[i] = (sum_j Z_ij W_ij r_ij) / (W_i. + 1/sigma2)`. The fitted values
//! are those coefficients gathered back to observations. Nothing here ever
//! forms an N x N matrix; one application is two passes over the data.
//!
//! All accumulation runs sequentially in observation order so results are
//! reproducible run to run regardless of thread count.

use crate::design::{CrossedDesign, Factor};
use crate::error::{Error, Result};

/// Per-observation working weights together with their per-level sums.
#[derive(Debug, Clone)]
pub struct FactorWeights {
    w: Vec<f64>,
    row_weight_sums: Vec<f64>,
    col_weight_sums: Vec<f64>,
}

impl FactorWeights {
    /// Validates positivity and precomputes the per-level weight sums
    /// W_i. and W_.j.
    pub fn new(design: &CrossedDesign, w: Vec<f64>) -> Result<Self> {
        assert_eq!(w.len(), design.n_obs());
        let mut row_weight_sums = vec![0.0; design.n_rows()];
        let mut col_weight_sums = vec![0.0; design.n_cols()];
        for (n, &wn) in w.iter().enumerate() {
            if !(wn > 0.0) || !wn.is_finite() {
                return Err(Error::NonPositiveWeight { index: n, value: wn });
            }
            row_weight_sums[design.row_of()[n] as usize] += wn;
            col_weight_sums[design.col_of()[n] as usize] += wn;
        }
        Ok(Self { w, row_weight_sums, col_weight_sums })
    }

    #[inline]
    pub fn w(&self) -> &[f64] {
        &self.w
    }

    /// Weight sums over the levels of the given factor.
    pub fn level_sums(&self, factor: Factor) -> &[f64] {
        match factor {
            Factor::A => &self.row_weight_sums,
            Factor::B => &self.col_weight_sums,
        }
    }
}

/// Result of one smoother application: per-level coefficients and the
/// fitted values scattered back to observations.
#[derive(Debug, Clone)]
pub struct SmootherFit {
    pub coef: Vec<f64>,
    pub fitted: Vec<f64>,
}

fn check_sigma2(sigma2: f64) -> Result<f64> {
    // sigma2 = +inf (no shrinkage) is fine; sigma2 = 0 is rejected, callers
    // clamp variances to a floor instead.
    if sigma2 > 0.0 {
        Ok(1.0 / sigma2)
    } else {
        Err(Error::NonPositiveVariance(sigma2))
    }
}

/// Ridge coefficients of the one-factor smoother, written into `coef`.
pub(crate) fn shrunken_mean_coef(
    design: &CrossedDesign,
    factor: Factor,
    weights: &FactorWeights,
    inv_sigma2: f64,
    r: &[f64],
    coef: &mut [f64],
) {
    let levels = design.levels_of(factor);
    let sums = weights.level_sums(factor);
    debug_assert_eq!(coef.len(), sums.len());
    coef.fill(0.0);
    for n in 0..design.n_obs() {
        coef[levels[n] as usize] += weights.w()[n] * r[n];
    }
    for (c, &s) in coef.iter_mut().zip(sums) {
        *c /= s + inv_sigma2;
    }
}

/// Recenters ridge coefficients onto the sum-zero subspace.
///
/// The result solves the same penalized problem subject to sum(coef) = 0:
/// the optimality shift is a constant on the numerator scale, i.e.
/// coef[g] - lambda / denom[g] with lambda chosen so the sum vanishes.
pub(crate) fn center_coef(coef: &mut [f64], sums: &[f64], inv_sigma2: f64) {
    let mut coef_total = 0.0;
    let mut inv_denom_total = 0.0;
    for (c, &s) in coef.iter().zip(sums) {
        coef_total += *c;
        inv_denom_total += 1.0 / (s + inv_sigma2);
    }
    let lambda = coef_total / inv_denom_total;
    for (c, &s) in coef.iter_mut().zip(sums) {
        *c -= lambda / (s + inv_sigma2);
    }
}

/// out[n] = coef[level[n]]
pub(crate) fn gather(design: &CrossedDesign, factor: Factor, coef: &[f64], out: &mut [f64]) {
    let levels = design.levels_of(factor);
    for (o, &l) in out.iter_mut().zip(levels) {
        *o = coef[l as usize];
    }
}

/// out[n] += coef[level[n]]
pub(crate) fn gather_add(design: &CrossedDesign, factor: Factor, coef: &[f64], out: &mut [f64]) {
    let levels = design.levels_of(factor);
    for (o, &l) in out.iter_mut().zip(levels) {
        *o += coef[l as usize];
    }
}

/// Applies the one-factor ridge smoother S_F to `r`.
pub fn apply_group_smoother(
    design: &CrossedDesign,
    factor: Factor,
    weights: &FactorWeights,
    sigma2: f64,
    r: &[f64],
) -> Result<SmootherFit> {
    let inv_sigma2 = check_sigma2(sigma2)?;
    assert_eq!(r.len(), design.n_obs());
    let mut coef = vec![0.0; design.n_levels(factor)];
    shrunken_mean_coef(design, factor, weights, inv_sigma2, r, &mut coef);
    let mut fitted = vec![0.0; design.n_obs()];
    gather(design, factor, &coef, &mut fitted);
    Ok(SmootherFit { coef, fitted })
}

/// Applies the one-factor smoother constrained to sum-zero coefficients.
///
/// Solves the same ridge problem as [`apply_group_smoother`] subject to
/// sum(coef) = 0, the constraint an aliased intercept imposes on the
/// corresponding random effects.
pub fn apply_centered_smoother(
    design: &CrossedDesign,
    factor: Factor,
    weights: &FactorWeights,
    sigma2: f64,
    r: &[f64],
) -> Result<SmootherFit> {
    let inv_sigma2 = check_sigma2(sigma2)?;
    assert_eq!(r.len(), design.n_obs());
    let mut coef = vec![0.0; design.n_levels(factor)];
    shrunken_mean_coef(design, factor, weights, inv_sigma2, r, &mut coef);
    center_coef(&mut coef, weights.level_sums(factor), inv_sigma2);
    let mut fitted = vec![0.0; design.n_obs()];
    gather(design, factor, &coef, &mut fitted);
    Ok(SmootherFit { coef, fitted })
}

/// Returns W (I - S_F) r in O(N).
///
/// The induced N x N operator is symmetric, which is what makes the
/// sandwich covariance computable by plain backfitting on columns.
pub fn symmetric_weighted_residualizer(
    design: &CrossedDesign,
    factor: Factor,
    weights: &FactorWeights,
    sigma2: f64,
    r: &[f64],
) -> Result<Vec<f64>> {
    let fit = apply_group_smoother(design, factor, weights, sigma2, r)?;
    let mut out = fit.fitted;
    for n in 0..design.n_obs() {
        out[n] = weights.w()[n] * (r[n] - out[n]);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::testutil::{dense_smoother, random_design, random_weights, rng, standard_normal_vec};
    use rand::Rng;

    fn two_obs_one_group(w: [f64; 2]) -> (CrossedDesign, FactorWeights) {
        let design = CrossedDesign::from_parts(
            1,
            2,
            1,
            vec![0, 0],
            vec![0, 1],
            vec![0.0, 1.0],
            vec![1.0, 1.0],
        )
        .unwrap();
        let weights = FactorWeights::new(&design, w.to_vec()).unwrap();
        (design, weights)
    }

    #[test]
    fn unshrunk_weighted_mean() {
        let (design, weights) = two_obs_one_group([1.0, 1.0]);
        let fit =
            apply_group_smoother(&design, Factor::A, &weights, f64::INFINITY, &[1.0, 3.0]).unwrap();
        assert_eq!(fit.coef, vec![2.0]);
        assert_eq!(fit.fitted, vec![2.0, 2.0]);
    }

    #[test]
    fn shrinkage_formula_direct() {
        // one group, r = (1, 3), w = (1, 1), 1/sigma2 = 2 -> (1 + 3) / (2 + 2) = 1
        let (design, weights) = two_obs_one_group([1.0, 1.0]);
        let fit = apply_group_smoother(&design, Factor::A, &weights, 0.5, &[1.0, 3.0]).unwrap();
        assert!((fit.coef[0] - 1.0).abs() < 1e-15);
    }

    #[test]
    fn rejects_nonpositive_sigma2() {
        let (design, weights) = two_obs_one_group([1.0, 1.0]);
        assert!(apply_group_smoother(&design, Factor::A, &weights, 0.0, &[1.0, 3.0]).is_err());
        assert!(apply_group_smoother(&design, Factor::A, &weights, -1.0, &[1.0, 3.0]).is_err());
    }

    #[test]
    fn matches_dense_smoother_matrix() {
        let mut rng = rng(11);
        let design = random_design(&mut rng, 5, 4, 1, 15, false);
        let weights = random_weights(&mut rng, &design);
        let r = standard_normal_vec(&mut rng, design.n_obs());
        for factor in [Factor::A, Factor::B] {
            for sigma2 in [0.3, 1.0, 40.0] {
                let fit = apply_group_smoother(&design, factor, &weights, sigma2, &r).unwrap();
                let s = dense_smoother(&design, factor, &weights, sigma2);
                let rd = nalgebra::DVector::from_column_slice(&r);
                let dense = &s * rd;
                for n in 0..design.n_obs() {
                    assert!(
                        (fit.fitted[n] - dense[n]).abs() < 1e-12,
                        "factor {factor:?} sigma2 {sigma2} obs {n}"
                    );
                }
            }
        }
    }

    #[test]
    fn centered_preserves_differences_in_symmetric_case() {
        // two groups, equal weights, r constant within group
        let design = CrossedDesign::from_parts(
            2,
            4,
            1,
            vec![0, 0, 1, 1],
            vec![0, 1, 2, 3],
            vec![0.0; 4],
            vec![1.0; 4],
        )
        .unwrap();
        let weights = FactorWeights::new(&design, vec![1.0; 4]).unwrap();
        let r = [3.0, 3.0, 5.0, 5.0];
        let plain = apply_group_smoother(&design, Factor::A, &weights, 1.0, &r).unwrap();
        let centered = apply_centered_smoother(&design, Factor::A, &weights, 1.0, &r).unwrap();
        assert!((centered.coef[0] + centered.coef[1]).abs() < 1e-12);
        assert!(
            ((centered.coef[1] - centered.coef[0]) - (plain.coef[1] - plain.coef[0])).abs()
                < 1e-12
        );
    }

    #[test]
    fn centered_coefficients_sum_to_zero() {
        let mut rng = rng(7);
        for trial in 0..20 {
            let design = random_design(&mut rng, 8, 6, 1, 30, false);
            let weights = random_weights(&mut rng, &design);
            let r = standard_normal_vec(&mut rng, design.n_obs());
            let sigma2 = rng.gen_range(0.05..5.0);
            let fit = apply_centered_smoother(&design, Factor::A, &weights, sigma2, &r).unwrap();
            let total: f64 = fit.coef.iter().sum();
            assert!(total.abs() < 1e-12, "trial {trial}: sum {total}");
        }
    }

    #[test]
    fn residualizer_single_group_equal_weights() {
        // w all equal, 1/sigma2 = 0, single group -> W (r - mean(r))
        let (design, weights) = two_obs_one_group([0.5, 0.5]);
        let out = symmetric_weighted_residualizer(
            &design,
            Factor::A,
            &weights,
            f64::INFINITY,
            &[1.0, 3.0],
        )
        .unwrap();
        assert!((out[0] - 0.5 * (1.0 - 2.0)).abs() < 1e-15);
        assert!((out[1] - 0.5 * (3.0 - 2.0)).abs() < 1e-15);
    }

    #[test]
    fn residualizer_zero_input_gives_zero() {
        let (design, weights) = two_obs_one_group([1.0, 2.0]);
        let out =
            symmetric_weighted_residualizer(&design, Factor::A, &weights, 1.0, &[0.0, 0.0])
                .unwrap();
        assert_eq!(out, vec![0.0, 0.0]);
    }

    #[test]
    fn residualizer_is_symmetric_bilinear_form() {
        let mut rng = rng(23);
        let design = random_design(&mut rng, 6, 5, 1, 20, false);
        let weights = random_weights(&mut rng, &design);
        for _ in 0..20 {
            let u = standard_normal_vec(&mut rng, design.n_obs());
            let v = standard_normal_vec(&mut rng, design.n_obs());
            let mu = symmetric_weighted_residualizer(&design, Factor::A, &weights, 0.7, &u)
                .unwrap();
            let mv = symmetric_weighted_residualizer(&design, Factor::A, &weights, 0.7, &v)
                .unwrap();
            let vmu: f64 = v.iter().zip(&mu).map(|(a, b)| a * b).sum();
            let umv: f64 = u.iter().zip(&mv).map(|(a, b)| a * b).sum();
            assert!((vmu - umv).abs() < 1e-10, "{vmu} vs {umv}");
        }
    }

    #[test]
    fn solves_the_per_level_normal_equation() {
        // residual of Z^T W (r - Z a) = a / sigma2, per level
        let mut rng = rng(31);
        for _ in 0..10 {
            let design = random_design(&mut rng, 7, 5, 1, 25, false);
            let weights = random_weights(&mut rng, &design);
            let r = standard_normal_vec(&mut rng, design.n_obs());
            let sigma2 = rng.gen_range(0.1..10.0);
            let fit = apply_group_smoother(&design, Factor::A, &weights, sigma2, &r).unwrap();
            let mut lhs = vec![0.0; design.n_rows()];
            for n in 0..design.n_obs() {
                lhs[design.row_of()[n] as usize] +=
                    weights.w()[n] * (r[n] - fit.fitted[n]);
            }
            for (i, &l) in lhs.iter().enumerate() {
                assert!((l - fit.coef[i] / sigma2).abs() < 1e-10);
            }
        }
    }

    #[test]
    fn smoother_is_contraction_in_weighted_norm() {
        let mut rng = rng(43);
        for _ in 0..20 {
            let design = random_design(&mut rng, 9, 7, 1, 40, false);
            let weights = random_weights(&mut rng, &design);
            let r = standard_normal_vec(&mut rng, design.n_obs());
            let sigma2 = rng.gen_range(0.05..20.0);
            let fit = apply_group_smoother(&design, Factor::B, &weights, sigma2, &r).unwrap();
            let norm = |v: &[f64]| -> f64 {
                v.iter().zip(weights.w()).map(|(x, w)| w * x * x).sum()
            };
            assert!(norm(&fit.fitted) <= norm(&r) * (1.0 + 1e-12));
        }
    }
}
