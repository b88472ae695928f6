//! Sandwich covariance of the fixed effects and the naivete/inefficiency
//! diagnostics against plain logistic regression.
//!
//! The estimator covariance has the form bread * meat * bread with
//! bread = (X' W_S X)^{-1}, where W_S X residualizes each design column
//! through the fitted smoother and multiplies by the weights, and the
//! meat applies the working-response covariance
//!
//! ```text
//!   Sigma = sigma2_a Z_A Z_A' + sigma2_b Z_B Z_B' + W^{-1}
//! ```
//!
//! to those columns. Sigma is low-rank-plus-diagonal, so applying it is a
//! scatter, a gather, and a diagonal scale: everything stays O(N).

use nalgebra::DMatrix;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::backfit::apply_sab;
use crate::design::{CrossedDesign, Factor};
use crate::error::{Error, Result};
use crate::logistic::LrFit;
use crate::schall::{sigmoid, FitState};
use crate::smoother::{apply_group_smoother, FactorWeights};

/// Inner backfit tolerance used when residualizing design columns through
/// the two-factor smoother; squared relative change per iteration.
const SAB_TOL: f64 = 1e-16;

/// Covariances and per-coefficient diagnostic ratios.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CovReport {
    /// Sandwich covariance of the mixed-model estimate.
    pub cov_glmm: Vec<Vec<f64>>,
    /// Inverse Fisher information of the naive logistic fit.
    pub cov_lr_naive: Vec<Vec<f64>>,
    /// Covariance of the naive logistic estimate under the mixed model.
    pub cov_glmm_of_lr: Vec<Vec<f64>>,
    /// Per coefficient: how naive the logistic standard errors are.
    pub naivete: Vec<f64>,
    /// Per coefficient: variance paid for ignoring the random effects.
    pub inefficiency: Vec<f64>,
    /// Largest naivete over all linear combinations (generalized
    /// eigenvalue of the two covariances).
    pub max_naivete: f64,
    pub max_inefficiency: f64,
}

/// Applies Sigma = sigma2_a Z_A Z_A' + sigma2_b Z_B Z_B' + W^{-1} to `u`.
fn apply_working_covariance(
    design: &CrossedDesign,
    w: &[f64],
    sigma2_a: f64,
    sigma2_b: f64,
    u: &[f64],
    out: &mut [f64],
) {
    let mut row_sum = vec![0.0; design.n_rows()];
    let mut col_sum = vec![0.0; design.n_cols()];
    for n in 0..design.n_obs() {
        row_sum[design.row_of()[n] as usize] += u[n];
        col_sum[design.col_of()[n] as usize] += u[n];
    }
    for n in 0..design.n_obs() {
        out[n] = u[n] / w[n]
            + sigma2_a * row_sum[design.row_of()[n] as usize]
            + sigma2_b * col_sum[design.col_of()[n] as usize];
    }
}

/// Assembles bread^{-1} meat bread^{-1} from the weighted residualized
/// columns u_q = W (I - S) x_q.
fn sandwich_from_columns(
    design: &CrossedDesign,
    w: &[f64],
    sigma2_a: f64,
    sigma2_b: f64,
    columns: &[Vec<f64>],
) -> Result<DMatrix<f64>> {
    let p = design.n_features();
    let n = design.n_obs();
    let mut bread = DMatrix::<f64>::zeros(p, p);
    for i in 0..n {
        let xr = design.x_row(i);
        for q in 0..p {
            for r in 0..p {
                bread[(q, r)] += xr[q] * columns[r][i];
            }
        }
    }
    symmetrize_checked(&mut bread)?;

    let mut meat = DMatrix::<f64>::zeros(p, p);
    let mut sigma_u = vec![0.0; n];
    for r in 0..p {
        apply_working_covariance(design, w, sigma2_a, sigma2_b, &columns[r], &mut sigma_u);
        for q in 0..p {
            let mut dot = 0.0;
            for i in 0..n {
                dot += columns[q][i] * sigma_u[i];
            }
            meat[(q, r)] = dot;
        }
    }
    symmetrize_checked(&mut meat)?;

    let bread_inv = bread
        .try_inverse()
        .ok_or_else(|| Error::SingularSystem("sandwich bread matrix".into()))?;
    let mut cov = &bread_inv * meat * &bread_inv;
    symmetrize_checked(&mut cov)?;
    Ok(cov)
}

fn symmetrize_checked(m: &mut DMatrix<f64>) -> Result<()> {
    let p = m.nrows();
    let scale = m.iter().fold(0.0f64, |acc, v| acc.max(v.abs())).max(1e-300);
    for q in 0..p {
        for r in (q + 1)..p {
            let asym = (m[(q, r)] - m[(r, q)]).abs();
            if asym > 1e-8 * scale {
                return Err(Error::NonFinite("asymmetric sandwich factor"));
            }
            let v = 0.5 * (m[(q, r)] + m[(r, q)]);
            m[(q, r)] = v;
            m[(r, q)] = v;
        }
    }
    Ok(())
}

/// Sandwich covariance of beta for the two-factor model at a converged
/// state. Each design column is residualized through the implicit
/// two-factor smoother by backfitting; total cost O(N) per column.
pub fn sandwich_cov_two_factor(
    design: &CrossedDesign,
    state: &FitState,
) -> Result<DMatrix<f64>> {
    let weights = FactorWeights::new(design, state.w.clone())?;
    let p = design.n_features();
    let columns: Vec<Vec<f64>> = (0..p)
        .into_par_iter()
        .map(|q| -> Result<Vec<f64>> {
            let mut col = vec![0.0; design.n_obs()];
            design.copy_feature_column(q, &mut col);
            let smoothed = apply_sab(
                design,
                &weights,
                state.sigma2_a,
                state.sigma2_b,
                &col,
                SAB_TOL,
            )?;
            for (c, s) in col.iter_mut().zip(&smoothed) {
                *c -= s;
            }
            for (c, w) in col.iter_mut().zip(state.w.iter()) {
                *c *= w;
            }
            Ok(col)
        })
        .collect::<Result<_>>()?;
    sandwich_from_columns(design, &state.w, state.sigma2_a, state.sigma2_b, &columns)
}

/// One-factor specialization: residualizes through the factor-A smoother
/// only, with Sigma = sigma2_a Z_A Z_A' + W^{-1}.
pub fn sandwich_cov_one_factor(design: &CrossedDesign, state: &FitState) -> Result<DMatrix<f64>> {
    let weights = FactorWeights::new(design, state.w.clone())?;
    let p = design.n_features();
    let columns: Vec<Vec<f64>> = (0..p)
        .into_par_iter()
        .map(|q| -> Result<Vec<f64>> {
            let mut col = vec![0.0; design.n_obs()];
            design.copy_feature_column(q, &mut col);
            let fit =
                apply_group_smoother(design, Factor::A, &weights, state.sigma2_a, &col)?;
            for (c, s) in col.iter_mut().zip(&fit.fitted) {
                *c -= s;
            }
            for (c, w) in col.iter_mut().zip(state.w.iter()) {
                *c *= w;
            }
            Ok(col)
        })
        .collect::<Result<_>>()?;

    // same assembly with the column-factor variance suppressed
    let p = design.n_features();
    let n = design.n_obs();
    let mut bread = DMatrix::<f64>::zeros(p, p);
    for i in 0..n {
        let xr = design.x_row(i);
        for q in 0..p {
            for r in 0..p {
                bread[(q, r)] += xr[q] * columns[r][i];
            }
        }
    }
    symmetrize_checked(&mut bread)?;
    let mut meat = DMatrix::<f64>::zeros(p, p);
    let mut row_sum = vec![0.0; design.n_rows()];
    let mut sigma_u = vec![0.0; n];
    for r in 0..p {
        row_sum.fill(0.0);
        for i in 0..n {
            row_sum[design.row_of()[i] as usize] += columns[r][i];
        }
        for i in 0..n {
            sigma_u[i] = columns[r][i] / state.w[i]
                + state.sigma2_a * row_sum[design.row_of()[i] as usize];
        }
        for q in 0..p {
            let mut dot = 0.0;
            for i in 0..n {
                dot += columns[q][i] * sigma_u[i];
            }
            meat[(q, r)] = dot;
        }
    }
    symmetrize_checked(&mut meat)?;
    let bread_inv = bread
        .try_inverse()
        .ok_or_else(|| Error::SingularSystem("sandwich bread matrix".into()))?;
    let mut cov = &bread_inv * meat * &bread_inv;
    symmetrize_checked(&mut cov)?;
    Ok(cov)
}

/// Covariance of the naive logistic estimate when the data actually follow
/// the mixed model: the logistic hat structure as bread, the mixed-model
/// working covariance as meat, evaluated at the logistic fitted means.
pub fn cov_glmm_of_lr(
    design: &CrossedDesign,
    glmm: &FitState,
    lr: &LrFit,
) -> Result<DMatrix<f64>> {
    let p = design.n_features();
    let n = design.n_obs();
    let mut w_lr = vec![0.0; n];
    for i in 0..n {
        let eta: f64 = design.x_row(i).iter().zip(&lr.beta).map(|(x, b)| x * b).sum();
        w_lr[i] = sigmoid(eta) * sigmoid(-eta);
        if !(w_lr[i] > 0.0) {
            return Err(Error::MeanAtBoundary(i));
        }
    }
    let columns: Vec<Vec<f64>> = (0..p)
        .map(|q| {
            let mut col = vec![0.0; n];
            design.copy_feature_column(q, &mut col);
            for (c, w) in col.iter_mut().zip(&w_lr) {
                *c *= w;
            }
            col
        })
        .collect();
    sandwich_from_columns(design, &w_lr, glmm.sigma2_a, glmm.sigma2_b, &columns)
}

/// Largest eigenvalue of b^{-1} a for symmetric positive definite b.
fn max_generalized_eigenvalue(a: &DMatrix<f64>, b: &DMatrix<f64>) -> Result<f64> {
    let chol = b
        .clone()
        .cholesky()
        .ok_or_else(|| Error::DegenerateFit("covariance matrix is not positive definite".into()))?;
    let l = chol.l();
    let x = l
        .solve_lower_triangular(a)
        .ok_or_else(|| Error::SingularSystem("triangular solve".into()))?;
    let y = l
        .solve_lower_triangular(&x.transpose())
        .ok_or_else(|| Error::SingularSystem("triangular solve".into()))?;
    let sym = (&y + y.transpose()) * 0.5;
    Ok(sym
        .symmetric_eigen()
        .eigenvalues
        .iter()
        .fold(f64::NEG_INFINITY, |acc, &v| acc.max(v)))
}

fn matrix_rows(m: &DMatrix<f64>) -> Vec<Vec<f64>> {
    (0..m.nrows())
        .map(|i| (0..m.ncols()).map(|j| m[(i, j)]).collect())
        .collect()
}

/// Per-coefficient and worst-case ratios comparing the naive logistic fit
/// to the mixed model.
pub fn naivete_and_inefficiency(
    design: &CrossedDesign,
    glmm: &FitState,
    lr: &LrFit,
) -> Result<CovReport> {
    let cov_glmm = sandwich_cov_two_factor(design, glmm)?;
    let cov_lr = lr.cov.clone();
    let cov_mixed_lr = cov_glmm_of_lr(design, glmm, lr)?;
    let p = design.n_features();
    let mut naivete = Vec::with_capacity(p);
    let mut inefficiency = Vec::with_capacity(p);
    for q in 0..p {
        if !(cov_lr[(q, q)] > 0.0) || !(cov_glmm[(q, q)] > 0.0) {
            return Err(Error::DegenerateFit(
                "nonpositive variance on a covariance diagonal".into(),
            ));
        }
        naivete.push(cov_mixed_lr[(q, q)] / cov_lr[(q, q)]);
        inefficiency.push(cov_mixed_lr[(q, q)] / cov_glmm[(q, q)]);
    }
    let max_naivete = max_generalized_eigenvalue(&cov_mixed_lr, &cov_lr)?;
    let max_inefficiency = max_generalized_eigenvalue(&cov_mixed_lr, &cov_glmm)?;
    Ok(CovReport {
        cov_glmm: matrix_rows(&cov_glmm),
        cov_lr_naive: matrix_rows(&cov_lr),
        cov_glmm_of_lr: matrix_rows(&cov_mixed_lr),
        naivete,
        inefficiency,
        max_naivete,
        max_inefficiency,
    })
}
