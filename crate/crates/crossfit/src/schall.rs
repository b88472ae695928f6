//! The outer modified Schall loop.
//!
//! Each stage solves a penalized weighted least squares problem on the
//! working response by clubbed backfitting, updates the variance
//! components from moment identities whose degrees of freedom come from
//! block traces of the inverse ridge matrix, refreshes the dispersion and
//! the weights, and repeats until the fitted linear predictor stops
//! moving. The exact block traces would need the inverse of an
//! (R+C) x (R+C) matrix; ignoring its off-diagonal coupling gives traces
//! of diagonal matrices, computable in O(N), which is the approximation
//! that keeps the whole iteration linear in the data size.

use serde::{Deserialize, Serialize};

use crate::backfit::{solve_pwls_clubbed, PwlsProblem, PwlsSolution};
use crate::design::{CrossedDesign, Factor};
use crate::error::{Error, Result};
use crate::oracle;
use crate::smoother::FactorWeights;

/// Overflow-safe logistic CDF.
#[inline]
pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// mu (1 - mu) evaluated as sigmoid(x) sigmoid(-x), which stays accurate
/// for large |x| where 1 - mu would cancel catastrophically.
#[inline]
pub fn bernoulli_variance(x: f64) -> f64 {
    sigmoid(x) * sigmoid(-x)
}

/// How the degrees-of-freedom traces are computed each stage.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum TraceMode {
    /// Block-diagonal approximation, O(N) per stage.
    #[default]
    Approx,
    /// Exact block traces of the dense inverse; desk-scale only, used to
    /// measure what the approximation costs.
    ExactDense,
}

/// Tuning of the outer loop.
#[derive(Debug, Clone, Copy)]
pub struct FitConfig {
    /// Threshold on the squared relative change of the linear predictor
    /// between stages.
    pub epsilon: f64,
    pub max_outer: usize,
    pub sigma2_floor: f64,
    pub sigma2_cap: f64,
    /// Lower bound applied to the working weights; 0 disables it.
    pub weight_floor: f64,
    /// Lower bound on the dispersion used inside the weights.
    pub phi_floor: f64,
    /// Inner backfitting tolerance; defaults to `epsilon`.
    pub inner_tol: f64,
    pub max_sweeps: usize,
    pub trace_mode: TraceMode,
}

impl Default for FitConfig {
    fn default() -> Self {
        Self {
            epsilon: 1e-8,
            max_outer: 200,
            sigma2_floor: 1e-8,
            sigma2_cap: 100.0,
            weight_floor: 0.0,
            phi_floor: 1e-8,
            inner_tol: 1e-8,
            max_sweeps: 1000,
            trace_mode: TraceMode::Approx,
        }
    }
}

impl FitConfig {
    fn validate(&self) -> Result<()> {
        if !(self.epsilon > 0.0) {
            return Err(Error::InvalidConfig(format!(
                "epsilon must be positive, got {}",
                self.epsilon
            )));
        }
        if !(self.sigma2_floor > 0.0) || self.sigma2_floor >= self.sigma2_cap {
            return Err(Error::InvalidConfig(format!(
                "need 0 < sigma2_floor < sigma2_cap, got {} and {}",
                self.sigma2_floor, self.sigma2_cap
            )));
        }
        if self.weight_floor < 0.0 {
            return Err(Error::InvalidConfig("weight_floor must be nonnegative".into()));
        }
        Ok(())
    }
}

/// Current parameters and per-observation quantities of a fit.
#[derive(Debug, Clone)]
pub struct FitState {
    pub beta: Vec<f64>,
    pub a: Vec<f64>,
    pub b: Vec<f64>,
    pub sigma2_a: f64,
    pub sigma2_b: f64,
    /// Dispersion used inside the weights (clamped below).
    pub phi: f64,
    /// Dispersion as estimated, before clamping; a lack-of-fit signal.
    pub phi_raw: f64,
    pub mu: Vec<f64>,
    pub w: Vec<f64>,
    pub zeta: Vec<f64>,
    pub nu_a: f64,
    pub nu_b: f64,
}

/// One row of the outer iteration log.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct OuterIteration {
    pub iteration: usize,
    pub objective: f64,
    pub sigma2_a: f64,
    pub sigma2_b: f64,
    pub phi: f64,
    pub phi_raw: f64,
    /// Squared relative change of the linear predictor; the absolute
    /// squared change on the first stage, where the previous predictor is
    /// identically zero.
    pub rel_change: f64,
    pub sweeps: usize,
    pub inner_converged: bool,
}

/// Converged estimates with the iteration log.
#[derive(Debug, Clone)]
pub struct FitResult {
    pub state: FitState,
    pub outer_iterations: usize,
    pub converged: bool,
    /// Set when a variance denominator had to be propped up at 0.5.
    pub dof_guard_hit: bool,
    pub trace: Vec<OuterIteration>,
}

/// Working response z = zeta + (Y - mu) / (mu (1 - mu)), with mu and its
/// variance recomputed from `zeta`.
pub fn working_response(design: &CrossedDesign, zeta: &[f64]) -> Result<Vec<f64>> {
    assert_eq!(zeta.len(), design.n_obs());
    let mut z = vec![0.0; design.n_obs()];
    for n in 0..design.n_obs() {
        let var = bernoulli_variance(zeta[n]);
        if !(var > 0.0) {
            return Err(Error::MeanAtBoundary(n));
        }
        z[n] = zeta[n] + (design.y()[n] - sigmoid(zeta[n])) / var;
    }
    Ok(z)
}

/// Means and working weights from a linear predictor: mu = sigmoid(zeta),
/// w = mu (1 - mu) / phi, floored at `weight_floor` when enabled.
pub fn refresh_weights(zeta: &[f64], phi: f64, weight_floor: f64) -> (Vec<f64>, Vec<f64>) {
    let mu: Vec<f64> = zeta.iter().map(|&v| sigmoid(v)).collect();
    let w: Vec<f64> = zeta
        .iter()
        .map(|&v| {
            let w = bernoulli_variance(v) / phi;
            if weight_floor > 0.0 {
                w.max(weight_floor)
            } else {
                w
            }
        })
        .collect();
    (mu, w)
}

/// Degrees-of-freedom pair from the block-diagonal trace approximation:
/// nu_a = sum_i [1 / (W_i. + 1/sigma2_a)] / sigma2_a and symmetrically for
/// the columns. O(R + C) after the weight sums.
pub fn approx_nu(weights: &FactorWeights, sigma2_a: f64, sigma2_b: f64) -> (f64, f64) {
    let nu = |sums: &[f64], s2: f64| -> f64 {
        sums.iter().map(|&s| 1.0 / (s + 1.0 / s2)).sum::<f64>() / s2
    };
    (
        nu(weights.level_sums(Factor::A), sigma2_a),
        nu(weights.level_sums(Factor::B), sigma2_b),
    )
}

/// Moment update of the variance components: sigma2 = ||effects||^2 over
/// the residual degrees of freedom, clamped to the configured range.
/// Returns the pair plus a flag set when a denominator needed the 0.5
/// guard.
pub fn update_variances(
    a: &[f64],
    b: &[f64],
    nu_a: f64,
    nu_b: f64,
    config: &FitConfig,
) -> Result<(f64, f64, bool)> {
    let mut guard_hit = false;
    let mut one = |effects: &[f64], nu: f64, label: &str| -> Result<f64> {
        let levels = effects.len() as f64;
        let mut denom = levels - nu;
        if denom <= 0.0 {
            return Err(Error::DegenerateFit(format!(
                "variance denominator for factor {label} is {denom}; all shrinkage absorbed"
            )));
        }
        if denom < 0.5 {
            denom = 0.5;
            guard_hit = true;
        }
        let ss: f64 = effects.iter().map(|v| v * v).sum();
        Ok((ss / denom).clamp(config.sigma2_floor, config.sigma2_cap))
    };
    let s2a = one(a, nu_a, "A")?;
    let s2b = one(b, nu_b, "B")?;
    Ok((s2a, s2b, guard_hit))
}

/// Dispersion update: the weighted squared working residuals over the
/// effective residual degrees of freedom N - p - (R - nu_a) - (C - nu_b).
/// Returns the raw value; callers clamp before using it inside weights.
#[allow(clippy::too_many_arguments)]
pub fn update_dispersion(
    design: &CrossedDesign,
    mu: &[f64],
    z: &[f64],
    beta: &[f64],
    a: &[f64],
    b: &[f64],
    nu_a: f64,
    nu_b: f64,
) -> Result<f64> {
    let n = design.n_obs() as f64;
    let p = beta.len() as f64;
    let r = design.n_rows() as f64;
    let c = design.n_cols() as f64;
    let denom = n - p - (r - nu_a) - (c - nu_b);
    if denom <= 0.0 {
        return Err(Error::DegenerateFit(format!(
            "dispersion denominator {denom} is not positive"
        )));
    }
    let mut num = 0.0;
    for i in 0..design.n_obs() {
        let xr = design.x_row(i);
        let mut fit = 0.0;
        for (xv, bv) in xr.iter().zip(beta) {
            fit += xv * bv;
        }
        fit += a[design.row_of()[i] as usize] + b[design.col_of()[i] as usize];
        let e = z[i] - fit;
        num += mu[i] * (1.0 - mu[i]) * e * e;
    }
    if !num.is_finite() {
        return Err(Error::NonFinite("dispersion numerator"));
    }
    Ok(num / denom)
}

/// Pearson form of the dispersion update used inside [`fit`]: with the
/// working response rebuilt at the current parameters, the weighted
/// squared residual reduces to (Y - mu)^2 / (mu (1 - mu)) termwise.
fn pearson_dispersion(
    design: &CrossedDesign,
    zeta: &[f64],
    p: usize,
    nu_a: f64,
    nu_b: f64,
) -> Result<f64> {
    let n = design.n_obs() as f64;
    let r = design.n_rows() as f64;
    let c = design.n_cols() as f64;
    let denom = n - p as f64 - (r - nu_a) - (c - nu_b);
    if denom <= 0.0 {
        return Err(Error::DegenerateFit(format!(
            "dispersion denominator {denom} is not positive"
        )));
    }
    let mut num = 0.0;
    for i in 0..design.n_obs() {
        let var = bernoulli_variance(zeta[i]);
        if !(var > 0.0) {
            return Err(Error::MeanAtBoundary(i));
        }
        let e = design.y()[i] - sigmoid(zeta[i]);
        num += e * e / var;
    }
    if !num.is_finite() {
        return Err(Error::NonFinite("dispersion numerator"));
    }
    Ok(num / denom)
}

/// Fits the crossed random effects logistic model by the modified Schall
/// iteration with clubbed backfitting.
///
/// Starts from beta = a = b = 0 with unit variances and dispersion, and
/// stops when the squared relative change of the linear predictor falls
/// below `config.epsilon`. Reaching `max_outer` is reported through
/// `converged = false` with the last iterate.
pub fn fit(design: &CrossedDesign, config: &FitConfig) -> Result<FitResult> {
    config.validate()?;
    let n = design.n_obs();
    let p = design.n_features();

    let mut state = FitState {
        beta: vec![0.0; p],
        a: vec![0.0; design.n_rows()],
        b: vec![0.0; design.n_cols()],
        sigma2_a: 1.0,
        sigma2_b: 1.0,
        phi: 1.0,
        phi_raw: 1.0,
        mu: vec![0.5; n],
        w: vec![0.25; n],
        zeta: vec![0.0; n],
        nu_a: 0.0,
        nu_b: 0.0,
    };
    if config.weight_floor > 0.0 {
        for w in state.w.iter_mut() {
            *w = w.max(config.weight_floor);
        }
    }

    let mut trace = Vec::new();
    let mut converged = false;
    let mut dof_guard_hit = false;
    let mut outer_iterations = 0;
    let mut warm: Option<PwlsSolution> = None;

    for iteration in 1..=config.max_outer {
        outer_iterations = iteration;

        let z = working_response(design, &state.zeta)?;
        let weights = FactorWeights::new(design, state.w.clone())?;
        let problem = PwlsProblem {
            design,
            weights: &weights,
            z: &z,
            sigma2_a: state.sigma2_a,
            sigma2_b: state.sigma2_b,
            tol: config.inner_tol,
            max_sweeps: config.max_sweeps,
        };
        let sol = solve_pwls_clubbed(&problem, warm.as_ref())?;

        let (nu_a, nu_b) = match config.trace_mode {
            TraceMode::Approx => approx_nu(&weights, state.sigma2_a, state.sigma2_b),
            TraceMode::ExactDense => {
                oracle::exact_nu(design, &weights, state.sigma2_a, state.sigma2_b)?
            }
        };
        let (sigma2_a, sigma2_b, guard) =
            update_variances(&sol.a, &sol.b, nu_a, nu_b, config)?;
        dof_guard_hit |= guard;

        let phi_raw = pearson_dispersion(design, &sol.zeta, p, nu_a, nu_b)?;
        let phi = phi_raw.max(config.phi_floor);
        let (mu, w) = refresh_weights(&sol.zeta, phi, config.weight_floor);
        if let Some(bad) = w.iter().position(|&v| !(v > 0.0)) {
            return Err(Error::MeanAtBoundary(bad));
        }

        let mut num = 0.0;
        let mut denom = 0.0;
        for (zn, zo) in sol.zeta.iter().zip(&state.zeta) {
            num += (zn - zo) * (zn - zo);
            denom += zo * zo;
        }
        // the first stage starts from a zero linear predictor, where the
        // relative rule is undefined: log the absolute squared change and
        // never stop there (unless nothing moved at all)
        let (rel_change, stop) = if denom > 0.0 {
            (num / denom, num / denom < config.epsilon)
        } else {
            (num, num == 0.0)
        };

        trace.push(OuterIteration {
            iteration,
            objective: sol.objective,
            sigma2_a,
            sigma2_b,
            phi,
            phi_raw,
            rel_change,
            sweeps: sol.sweeps_used,
            inner_converged: sol.converged,
        });

        state.beta = sol.beta.clone();
        state.a = sol.a.clone();
        state.b = sol.b.clone();
        state.zeta = sol.zeta.clone();
        state.sigma2_a = sigma2_a;
        state.sigma2_b = sigma2_b;
        state.phi = phi;
        state.phi_raw = phi_raw;
        state.mu = mu;
        state.w = w;
        state.nu_a = nu_a;
        state.nu_b = nu_b;
        warm = Some(sol);

        if stop {
            converged = true;
            break;
        }
    }

    Ok(FitResult { state, outer_iterations, converged, dof_guard_hit, trace })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::design::CrossedDesign;
    use crate::testutil::{random_design, random_weights, rng, standard_normal_vec};
    use rand::Rng;

    #[test]
    fn working_response_unit_cases() {
        // zeta = 0, mu = 0.5: Y = 1 gives z = 2, Y = 0 gives z = -2
        let design = CrossedDesign::from_parts(
            1,
            2,
            1,
            vec![0, 0],
            vec![0, 1],
            vec![1.0, 0.0],
            vec![1.0, 1.0],
        )
        .unwrap();
        let z = working_response(&design, &[0.0, 0.0]).unwrap();
        assert_eq!(z, vec![2.0, -2.0]);
    }

    #[test]
    fn working_response_offset_has_sign_of_response_residual() {
        let mut rg = rng(3);
        let design = random_design(&mut rg, 6, 5, 2, 30, true);
        let zeta = standard_normal_vec(&mut rg, design.n_obs());
        let z = working_response(&design, &zeta).unwrap();
        for n in 0..design.n_obs() {
            let resid = design.y()[n] - sigmoid(zeta[n]);
            assert_eq!((z[n] - zeta[n]).signum(), resid.signum());
        }
    }

    #[test]
    fn refresh_weights_basics() {
        let (mu, w) = refresh_weights(&[0.0], 1.0, 0.0);
        assert_eq!(mu, vec![0.5]);
        assert_eq!(w, vec![0.25]);

        // extreme linear predictor: no overflow, and the variance keeps its
        // tiny positive value even though mu rounds to 1
        let (mu, w) = refresh_weights(&[40.0], 1.0, 0.0);
        assert!(mu[0] > 0.999 && mu[0] <= 1.0);
        assert!(w[0] > 0.0 && w[0].is_finite());
        // the symmetric form matches sigmoid(-40) to full precision
        assert!((w[0] - sigmoid(40.0) * sigmoid(-40.0)).abs() == 0.0);

        // doubling phi halves every weight
        let (_, w1) = refresh_weights(&[0.3, -1.2], 1.0, 0.0);
        let (_, w2) = refresh_weights(&[0.3, -1.2], 2.0, 0.0);
        for (a, b) in w1.iter().zip(&w2) {
            assert!((a / b - 2.0).abs() < 1e-15);
        }
    }

    #[test]
    fn approx_nu_scalar_case() {
        // single row, one observation, W = 0.25, sigma2 = 1:
        // T11 = 1.25, nu_a = 0.8
        let design = CrossedDesign::from_parts(
            1,
            1,
            1,
            vec![0],
            vec![0],
            vec![1.0],
            vec![1.0],
        )
        .unwrap();
        let weights = FactorWeights::new(&design, vec![0.25]).unwrap();
        let (nu_a, _) = approx_nu(&weights, 1.0, 1.0);
        assert!((nu_a - 0.8).abs() < 1e-15);
    }

    #[test]
    fn approx_nu_limits_and_range() {
        // every trace summand is 1 / (sigma2 W_i. + 1), so nu stays in
        // (0, R); it climbs to R as sigma2 -> 0 (full shrinkage leaves no
        // residual degrees of freedom) and vanishes as sigma2 -> inf
        let mut rg = rng(17);
        let design = random_design(&mut rg, 15, 10, 1, 80, false);
        let weights = random_weights(&mut rg, &design);
        for s2 in [1e-6, 1e-3, 0.1, 1.0, 10.0, 100.0] {
            let (nu_a, nu_b) = approx_nu(&weights, s2, s2);
            assert!(nu_a > 0.0 && nu_a < design.n_rows() as f64);
            assert!(nu_b > 0.0 && nu_b < design.n_cols() as f64);
        }
        let (tiny_a, _) = approx_nu(&weights, 1e-12, 1.0);
        assert!((tiny_a - design.n_rows() as f64).abs() < 1e-9);
        let (huge_a, _) = approx_nu(&weights, 1e12, 1.0);
        assert!(huge_a < 1e-9);
    }

    #[test]
    fn approx_nu_close_to_exact_on_moderate_instance() {
        // sparse 20 x 15 instance, weights near 1/4, sigma2 = 1/2: the
        // block-diagonal trace is within a few percent of the exact one,
        // and the gap equals the error series
        let mut rg = rng(29);
        let design = random_design(&mut rg, 20, 15, 1, 90, false);
        let w: Vec<f64> = (0..design.n_obs()).map(|_| rg.gen_range(0.2..0.25)).collect();
        let weights = FactorWeights::new(&design, w).unwrap();
        let (s2a, s2b) = (0.5, 0.5);
        let (nu_a, _) = approx_nu(&weights, s2a, s2b);
        let (exact_a, _) = crate::oracle::exact_nu(&design, &weights, s2a, s2b).unwrap();
        let report = crate::oracle::exact_t_and_traces(&design, &weights, s2a, s2b).unwrap();
        assert!(
            ((exact_a - nu_a) * s2a - report.err_a).abs() < 1e-8,
            "trace gap must equal the error series"
        );
        let rel = (exact_a - nu_a).abs() / exact_a;
        assert!(rel < 0.05, "relative trace error {rel}");
    }

    #[test]
    fn update_variances_cases() {
        let config = FitConfig::default();
        // zero effects collapse to the floor
        let (s2a, _, _) =
            update_variances(&[0.0; 4], &[1.0, -1.0], 1.0, 0.5, &config).unwrap();
        assert_eq!(s2a, config.sigma2_floor);

        // R = 2, nu_a = 1, ||a||^2 = 3 -> sigma2_a = 3
        let a = [(1.5f64).sqrt(), (1.5f64).sqrt()];
        let (s2a, _, guard) = update_variances(&a, &[1.0, -1.0], 1.0, 0.5, &config).unwrap();
        assert!((s2a - 3.0).abs() < 1e-12);
        assert!(!guard);

        // denominator below the 0.5 guard
        let (_, _, guard) = update_variances(&a, &[1.0, -1.0], 1.8, 0.5, &config).unwrap();
        assert!(guard);

        // nonpositive denominator is degenerate
        assert!(update_variances(&a, &[1.0, -1.0], 2.0, 0.5, &config).is_err());
    }

    #[test]
    fn update_dispersion_matches_brute_force() {
        let mut rg = rng(37);
        let design = random_design(&mut rg, 10, 8, 3, 60, true);
        let zeta = standard_normal_vec(&mut rg, design.n_obs());
        let z = working_response(&design, &zeta).unwrap();
        let beta = standard_normal_vec(&mut rg, 3);
        let a = standard_normal_vec(&mut rg, 10);
        let b = standard_normal_vec(&mut rg, 8);
        let mu: Vec<f64> = zeta.iter().map(|&v| sigmoid(v)).collect();
        let phi = update_dispersion(&design, &mu, &z, &beta, &a, &b, 2.0, 1.5).unwrap();

        let mut num = 0.0;
        for i in 0..design.n_obs() {
            let mut fit = 0.0;
            for q in 0..3 {
                fit += design.x_row(i)[q] * beta[q];
            }
            fit += a[design.row_of()[i] as usize] + b[design.col_of()[i] as usize];
            num += mu[i] * (1.0 - mu[i]) * (z[i] - fit) * (z[i] - fit);
        }
        let denom = design.n_obs() as f64 - 3.0 - (10.0 - 2.0) - (8.0 - 1.5);
        assert!((phi - num / denom).abs() < 1e-12 * (1.0 + phi.abs()));
    }

    #[test]
    fn update_dispersion_zero_residuals_and_degenerate_denominator() {
        let design = CrossedDesign::from_parts(
            2,
            2,
            1,
            vec![0, 0, 1, 1],
            vec![0, 1, 0, 1],
            vec![0.0, 1.0, 1.0, 0.0],
            vec![1.0; 4],
        )
        .unwrap();
        // z exactly equal to the fit: phi = 0 before any clamping
        let beta = [0.7];
        let a = [0.0, 0.0];
        let b = [0.0, 0.0];
        let z = vec![0.7; 4];
        let mu = vec![0.5; 4];
        let phi = update_dispersion(&design, &mu, &z, &beta, &a, &b, 1.5, 1.5).unwrap();
        assert_eq!(phi, 0.0);

        // N = 1 cannot satisfy the degrees-of-freedom precondition
        let one = CrossedDesign::from_parts(1, 1, 1, vec![0], vec![0], vec![1.0], vec![1.0])
            .unwrap();
        assert!(matches!(
            update_dispersion(&one, &[0.5], &[2.0], &[0.0], &[0.0], &[0.0], 0.5, 0.5),
            Err(Error::DegenerateFit(_))
        ));
    }

    #[test]
    fn pearson_form_agrees_with_literal_formula() {
        let mut rg = rng(53);
        let design = random_design(&mut rg, 8, 6, 2, 40, true);
        let beta = standard_normal_vec(&mut rg, 2);
        let a = standard_normal_vec(&mut rg, design.n_rows());
        let b = standard_normal_vec(&mut rg, design.n_cols());
        let zeta = design.linear_predictor(&beta, &a, &b);
        let z = working_response(&design, &zeta).unwrap();
        let mu: Vec<f64> = zeta.iter().map(|&v| sigmoid(v)).collect();
        let lit = update_dispersion(&design, &mu, &z, &beta, &a, &b, 1.0, 1.0).unwrap();
        let pea = pearson_dispersion(&design, &zeta, 2, 1.0, 1.0).unwrap();
        assert!((lit - pea).abs() < 1e-9 * (1.0 + lit.abs()));
    }
}
