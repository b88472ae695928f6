//! Fit a design CSV (row,col,y,x1,...) and print the coefficient table.
//!
//!     cargo run --release --example fit_csv -- path/to/data.csv
//!
//! Falls back to the bundled 12-observation fixture when no path is given.

use std::path::PathBuf;

use crossfit::covariance::sandwich_cov_two_factor;
use crossfit::io::read_design_csv;
use crossfit::schall::{fit, FitConfig};

fn main() -> anyhow::Result<()> {
    let path = std::env::args()
        .nth(1)
        .map(PathBuf::from)
        .unwrap_or_else(|| {
            PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("tests/data/tiny.csv")
        });
    let ingested = read_design_csv(&path, true)?;
    let design = &ingested.design;
    println!(
        "{}: N = {}, R = {}, C = {}, p = {}",
        path.display(),
        design.n_obs(),
        design.n_rows(),
        design.n_cols(),
        design.n_features()
    );

    let result = fit(design, &FitConfig::default())?;
    let cov = sandwich_cov_two_factor(design, &result.state)?;
    println!(
        "converged = {} after {} outer iterations",
        result.converged, result.outer_iterations
    );
    println!("{:>12} {:>10} {:>10}", "coef", "estimate", "std err");
    for (q, name) in ingested.feature_names.iter().enumerate() {
        println!(
            "{:>12} {:>10.4} {:>10.4}",
            name,
            result.state.beta[q],
            cov[(q, q)].sqrt()
        );
    }
    println!(
        "sigma2_a = {:.4}, sigma2_b = {:.4}, phi = {:.4}",
        result.state.sigma2_a, result.state.sigma2_b, result.state.phi_raw
    );
    let sum_a: f64 = result.state.a.iter().sum();
    let sum_b: f64 = result.state.b.iter().sum();
    println!("sum of row effects = {sum_a:.2e}, sum of column effects = {sum_b:.2e}");
    Ok(())
}
