//! Desk-scale verification of the trace approximation against dense
//! linear algebra: block traces of the inverse ridge matrix, the
//! perturbation-series identity, and the spectral bounds that control the
//! approximation error.
//!
//!     cargo run --release --example oracle_checks

use crossfit::oracle::{exact_traces, trace_series_check, spectral_checks, TraceParts};
use crossfit::schall::bernoulli_variance;
use crossfit::simulate::{simulate_dataset, SimConfig};
use crossfit::FactorWeights;

fn main() -> crossfit::Result<()> {
    println!("trace approximation on sampled designs (rho = kappa = 0.4)\n");
    println!(
        "{:>8} {:>5} {:>10} {:>10} {:>10} {:>8} {:>8} {:>8}",
        "S", "R", "exact_tr11", "approx", "err_a/R", "rho", "sumbnd", "prodbnd"
    );
    for s in [1e3, 3e3, 1e4, 3e4] {
        let mut config = SimConfig::preset_a(s, 42);
        config.rho = 0.4;
        config.kappa = 0.4;
        let sim = simulate_dataset(&config)?;
        // true weights: mu (1 - mu) at the simulated linear predictor
        let zeta = sim
            .design
            .linear_predictor(&sim.truth.beta, &sim.truth.a, &sim.truth.b);
        let w: Vec<f64> = zeta.iter().map(|&v| bernoulli_variance(v)).collect();
        let weights = FactorWeights::new(&sim.design, w)?;
        let parts = TraceParts::from_design(&sim.design, &weights, 0.64, 0.16)?;
        let traces = exact_traces(&parts)?;
        let spectral = spectral_checks(&parts, 0.5)?;
        println!(
            "{:>8.0} {:>5} {:>10.4} {:>10.4} {:>10.6} {:>8.4} {:>8.4} {:>8.4}",
            s,
            sim.design.n_rows(),
            traces.exact_tr11,
            traces.approx_tr11,
            traces.err_a / sim.design.n_rows() as f64,
            spectral.spectral_radius,
            spectral.sum_bound,
            spectral.product_bound,
        );
    }

    println!("\nperturbation series at eta = 1 on a scalar system (A = C = 1, B = 1/2):");
    let parts = TraceParts {
        a_diag: nalgebra::DVector::from_element(1, 1.0),
        b: nalgebra::DMatrix::from_element(1, 1, 0.5),
        c_diag: nalgebra::DVector::from_element(1, 1.0),
        inv_sigma2_a: 1.0,
        inv_sigma2_b: 1.0,
    };
    let traces = exact_traces(&parts)?;
    println!(
        "  tr(T^-1) = {:.6} (8/3), block approximation = {:.6}, error per block = {:.6} (1/3)",
        traces.exact_tr11 + traces.exact_tr22,
        traces.approx_tr11 + traces.approx_tr22,
        traces.err_a
    );
    for k in [1usize, 2, 4, 8, 16] {
        let check = trace_series_check(&parts, 1.0, k)?;
        println!(
            "  K = {k:>2}: truncated series {:.10}, residual {:.3e}",
            check.series_sum, check.residual
        );
    }
    Ok(())
}
