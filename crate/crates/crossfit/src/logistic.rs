//! Plain logistic regression baseline that ignores the random effects,
//! plus the small-variance expected-score diagnostic that explains why
//! ignoring them biases the fit.

use nalgebra::{DMatrix, DVector};

use crate::design::CrossedDesign;
use crate::error::{Error, Result};
use crate::schall::sigmoid;

/// Maximum likelihood logistic fit.
#[derive(Debug, Clone)]
pub struct LrFit {
    pub beta: Vec<f64>,
    /// Inverse Fisher information at the solution.
    pub cov: DMatrix<f64>,
    pub iterations: usize,
    pub converged: bool,
}

fn deviance(design: &CrossedDesign, beta: &[f64]) -> f64 {
    let mut dev = 0.0;
    for n in 0..design.n_obs() {
        let eta: f64 = design.x_row(n).iter().zip(beta).map(|(x, b)| x * b).sum();
        // log(1 + e^eta) evaluated without overflow
        let log1pexp = eta.max(0.0) + (-eta.abs()).exp().ln_1p();
        dev += 2.0 * (log1pexp - design.y()[n] * eta);
    }
    dev
}

/// Newton/IRLS solution of the naive logistic score equations, with step
/// halving whenever a full step would increase the deviance.
pub fn irls_logistic(design: &CrossedDesign, tol: f64, max_iter: usize) -> Result<LrFit> {
    let p = design.n_features();
    let mut beta = vec![0.0; p];
    let mut dev = deviance(design, &beta);
    let mut converged = false;
    let mut iterations = 0;
    let mut hessian = DMatrix::<f64>::zeros(p, p);

    for iter in 1..=max_iter {
        iterations = iter;
        let mut score = DVector::<f64>::zeros(p);
        hessian.fill(0.0);
        for n in 0..design.n_obs() {
            let xr = design.x_row(n);
            let eta: f64 = xr.iter().zip(&beta).map(|(x, b)| x * b).sum();
            let mu = sigmoid(eta);
            let w = sigmoid(eta) * sigmoid(-eta);
            let e = design.y()[n] - mu;
            for q in 0..p {
                score[q] += xr[q] * e;
                for r in 0..p {
                    hessian[(q, r)] += w * xr[q] * xr[r];
                }
            }
        }
        let score_norm = score.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        if score_norm < tol {
            converged = true;
            break;
        }
        let step = hessian
            .clone()
            .lu()
            .solve(&score)
            .ok_or_else(|| Error::SingularSystem("logistic Hessian".into()))?;

        let mut t = 1.0;
        let mut accepted = false;
        for _ in 0..60 {
            let cand: Vec<f64> =
                beta.iter().zip(step.iter()).map(|(b, s)| b + t * s).collect();
            let cand_dev = deviance(design, &cand);
            if cand_dev.is_finite() && cand_dev <= dev + 1e-12 {
                beta = cand;
                dev = cand_dev;
                accepted = true;
                break;
            }
            t *= 0.5;
        }
        if !accepted {
            return Err(Error::DegenerateFit(
                "logistic step halving failed to reduce the deviance".into(),
            ));
        }
        if beta.iter().any(|v| v.abs() > 1e6) {
            return Err(Error::DegenerateFit(
                "diverging logistic coefficients; responses may be separated".into(),
            ));
        }
    }

    let cov = hessian
        .clone()
        .try_inverse()
        .ok_or_else(|| Error::SingularSystem("logistic Fisher information".into()))?;
    Ok(LrFit { beta, cov, iterations, converged })
}

/// Small-variance approximation of the expected naive score under a
/// one-factor random effects model:
///
/// ```text
///   (sigma2 / 2) sum_n pi''(x_n' beta) x_n,
///   pi''(t) = mu (1 - mu) (1 - 2 mu)
/// ```
///
/// A consistent naive fit needs every component near zero. Centered
/// covariates vanish when beta is intercept-only, but the intercept
/// component itself cannot.
pub fn expected_score_bias(design: &CrossedDesign, beta: &[f64], sigma2: f64) -> Vec<f64> {
    let p = design.n_features();
    let mut bias = vec![0.0; p];
    for n in 0..design.n_obs() {
        let xr = design.x_row(n);
        let eta: f64 = xr.iter().zip(beta).map(|(x, b)| x * b).sum();
        let mu = sigmoid(eta);
        let second = mu * (1.0 - mu) * (1.0 - 2.0 * mu);
        for q in 0..p {
            bias[q] += second * xr[q];
        }
    }
    for v in bias.iter_mut() {
        *v *= 0.5 * sigma2;
    }
    bias
}
