//! Simulate a sparse crossed design, fit the mixed model, and compare the
//! estimates against the simulation truth.
//!
//!     cargo run --release --example fit_simulated

use crossfit::covariance::sandwich_cov_two_factor;
use crossfit::schall::{fit, FitConfig};
use crossfit::simulate::{simulate_dataset, SimConfig};

fn main() -> crossfit::Result<()> {
    // rare-event setting: intercept -2, seven null slopes, crossed
    // effects with sd 0.8 and 0.4
    let config = SimConfig::preset_a(30_000.0, 7);
    let sim = simulate_dataset(&config)?;
    println!(
        "simulated N = {} observations on a {} x {} grid (p = {})",
        sim.design.n_obs(),
        sim.design.n_rows(),
        sim.design.n_cols(),
        sim.design.n_features()
    );

    let result = fit(&sim.design, &FitConfig::default())?;
    println!(
        "converged = {} after {} outer iterations",
        result.converged, result.outer_iterations
    );

    let cov = sandwich_cov_two_factor(&sim.design, &result.state)?;
    println!("{:>10} {:>10} {:>10} {:>10}", "coef", "truth", "estimate", "std err");
    for q in 0..sim.design.n_features() {
        let name = if q == 0 { "intercept".to_string() } else { format!("x{q}") };
        println!(
            "{:>10} {:>10.4} {:>10.4} {:>10.4}",
            name,
            sim.truth.beta[q],
            result.state.beta[q],
            cov[(q, q)].sqrt()
        );
    }
    println!(
        "variance components: sigma2_a = {:.4} (truth {:.4}), sigma2_b = {:.4} (truth {:.4})",
        result.state.sigma2_a,
        sim.truth.sigma_a * sim.truth.sigma_a,
        result.state.sigma2_b,
        sim.truth.sigma_b * sim.truth.sigma_b
    );
    println!("dispersion phi = {:.4}", result.state.phi_raw);
    Ok(())
}
