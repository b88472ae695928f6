#![allow(clippy::needless_range_loop)]

//! Cross-module invariants of the full fitting pipeline.

mod common;

use std::time::Instant;

use common::{random_weights, rng, serialize_tests, standard_normal_vec};
use crossfit::design::{CrossedDesign, Factor};
use crossfit::logistic::irls_logistic;
use crossfit::schall::{fit, sigmoid, FitConfig};
use crossfit::simulate::{sample_pattern, simulate_dataset, SimConfig};
use crossfit::smoother::apply_group_smoother;
use crossfit::FactorWeights;

/// A design consisting only of structure (features irrelevant here).
fn pattern_design(s: f64, seed: u64) -> CrossedDesign {
    let config = SimConfig::preset_a(s, seed);
    let skeleton = sample_pattern(&config).unwrap();
    let n = skeleton.n_obs();
    CrossedDesign::from_parts(
        skeleton.n_rows,
        skeleton.n_cols,
        1,
        skeleton.row_of,
        skeleton.col_of,
        vec![0.0; n],
        vec![1.0; n],
    )
    .unwrap()
}

#[test]
fn smoother_application_scales_linearly() {
    let _guard = serialize_tests();
    // warm run at each size, then take the fastest of several repeats
    let time_at = |s: f64, seed: u64| -> (f64, usize) {
        let design = pattern_design(s, seed);
        let mut rg = rng(seed);
        let weights = random_weights(&mut rg, &design);
        let r = standard_normal_vec(&mut rg, design.n_obs());
        let mut best = f64::INFINITY;
        let mut sink = 0.0;
        for _ in 0..7 {
            let t0 = Instant::now();
            let fit = apply_group_smoother(&design, Factor::A, &weights, 0.7, &r).unwrap();
            best = best.min(t0.elapsed().as_secs_f64());
            sink += fit.fitted[0];
        }
        assert!(sink.is_finite());
        (best, design.n_obs())
    };
    let (t_small, n_small) = time_at(2e5, 1);
    let (t_big, n_big) = time_at(2e6, 2);
    let scale = n_big as f64 / n_small as f64;
    let ratio = t_big / t_small;
    // ratio of work should track the ratio of sizes within 40%
    assert!(
        ratio > 0.6 * scale && ratio < 1.4 * scale,
        "times {t_small:.5}s @ N={n_small} vs {t_big:.5}s @ N={n_big}: ratio {ratio:.2}, size ratio {scale:.2}"
    );
}

#[test]
fn converged_fit_satisfies_the_score_equations() {
    let _guard = serialize_tests();
    // at the fixed point: X'(Y - mu) = 0, Z'(Y - mu) = phi a / sigma2
    let mut config = SimConfig::preset_a(4000.0, 97);
    config.beta_true = vec![-1.5, 0.5, -0.5];
    let sim = simulate_dataset(&config).unwrap();
    let design = &sim.design;
    let cfg = FitConfig {
        epsilon: 1e-14,
        inner_tol: 1e-14,
        ..FitConfig::default()
    };
    let result = fit(design, &cfg).unwrap();
    assert!(result.converged);
    let st = &result.state;

    let p = design.n_features();
    let mut score_beta = vec![0.0; p];
    let mut score_a = vec![0.0; design.n_rows()];
    let mut score_b = vec![0.0; design.n_cols()];
    for n in 0..design.n_obs() {
        let resid = design.y()[n] - sigmoid(st.zeta[n]);
        for q in 0..p {
            score_beta[q] += design.x_row(n)[q] * resid;
        }
        score_a[design.row_of()[n] as usize] += resid;
        score_b[design.col_of()[n] as usize] += resid;
    }
    let scale = design.n_obs() as f64;
    for v in &score_beta {
        assert!(v.abs() < 1e-6 * scale, "beta score {v}");
    }
    for (i, v) in score_a.iter().enumerate() {
        let expected = st.phi * st.a[i] / st.sigma2_a;
        assert!((v - expected).abs() < 1e-6 * scale, "a[{i}]: {v} vs {expected}");
    }
    for (j, v) in score_b.iter().enumerate() {
        let expected = st.phi * st.b[j] / st.sigma2_b;
        assert!((v - expected).abs() < 1e-6 * scale, "b[{j}]: {v} vs {expected}");
    }

    // degrees of freedom stay inside their ranges
    assert!(st.nu_a > 0.0 && st.nu_a < design.n_rows() as f64);
    assert!(st.nu_b > 0.0 && st.nu_b < design.n_cols() as f64);

    // the last recorded relative change is below the threshold
    assert!(result.trace.last().unwrap().rel_change < cfg.epsilon);

    // relative changes settle monotonically at the end
    let tail: Vec<f64> = result
        .trace
        .iter()
        .rev()
        .take(3)
        .map(|t| t.rel_change)
        .collect();
    assert!(tail.windows(2).all(|w| w[0] <= w[1]));
}

#[test]
fn null_variances_collapse_to_the_naive_fit() {
    let _guard = serialize_tests();
    let mut config = SimConfig::preset_a(20_000.0, 55);
    config.beta_true = vec![-1.0, 0.5, -0.5, 0.25];
    config.sigma_a = 0.0;
    config.sigma_b = 0.0;
    let sim = simulate_dataset(&config).unwrap();
    let result = fit(&sim.design, &FitConfig::default()).unwrap();
    assert!(result.converged);
    // estimated variance components collapse toward zero, up to their
    // own sampling noise of order 1/(per-level information * sqrt(R))
    assert!(result.state.sigma2_a < 0.03, "sigma2_a = {}", result.state.sigma2_a);
    assert!(result.state.sigma2_b < 0.03, "sigma2_b = {}", result.state.sigma2_b);
    // coefficients match plain logistic regression closely
    let lr = irls_logistic(&sim.design, 1e-10, 200).unwrap();
    for (u, v) in result.state.beta.iter().zip(&lr.beta) {
        assert!((u - v).abs() < 0.05, "{u} vs {v}");
    }
}

#[test]
fn preset_a_fit_recovers_the_generating_parameters() {
    let _guard = serialize_tests();
    let config = SimConfig::preset_a(20_000.0, 1234);
    let sim = simulate_dataset(&config).unwrap();
    let result = fit(&sim.design, &FitConfig::default()).unwrap();
    assert!(result.converged);
    // null slopes estimated near zero, intercept near -2
    for q in 1..8 {
        assert!(result.state.beta[q].abs() < 0.15, "beta[{q}] = {}", result.state.beta[q]);
    }
    assert!((result.state.beta[0] + 2.0).abs() < 0.3);
    // variance components in a sane neighborhood of (0.64, 0.16)
    assert!(result.state.sigma2_a > 0.3 && result.state.sigma2_a < 1.1);
    assert!(result.state.sigma2_b > 0.05 && result.state.sigma2_b < 0.4);
    // dispersion is a lack-of-fit indicator; near one for well-specified data
    assert!(result.state.phi_raw > 0.6 && result.state.phi_raw < 1.3);
}

#[test]
fn eigenvalue_tail_grows_slower_than_the_row_count() {
    let _guard = serialize_tests();
    use crossfit::oracle::{spectral_checks, TraceParts};
    use crossfit::schall::bernoulli_variance;
    let mut shares = Vec::new();
    for s in [1e3, 1e4] {
        let config = SimConfig::preset_a(s, 303);
        let sim = simulate_dataset(&config).unwrap();
        let zeta = sim
            .design
            .linear_predictor(&sim.truth.beta, &sim.truth.a, &sim.truth.b);
        let w: Vec<f64> = zeta.iter().map(|&v| bernoulli_variance(v)).collect();
        let weights = FactorWeights::new(&sim.design, w).unwrap();
        let parts = TraceParts::from_design(&sim.design, &weights, 0.64, 0.16).unwrap();
        let report = spectral_checks(&parts, 0.5).unwrap();
        shares.push(report.eig_count_above_delta as f64 / sim.design.n_rows() as f64);
    }
    assert!(
        shares[1] <= shares[0],
        "tail share must not grow with size: {shares:?}"
    );
}
