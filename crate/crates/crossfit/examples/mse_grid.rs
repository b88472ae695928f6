//! Estimation error versus sample size for the mixed-model fit and the
//! naive logistic baseline, on the two standard coefficient settings.
//!
//!     cargo run --release --example mse_grid
//!
//! Settings: a) null slopes with intercept -2; b) slopes -2 + l/2. The
//! non-intercept error of the mixed-model fit shrinks like 1/N, its
//! intercept error like 1/sqrt(N); the naive intercept stalls in a), and
//! in b) every naive coefficient stalls.

use crossfit::schall::FitConfig;
use crossfit::simulate::{
    loglog_slope, metric_curve, run_mse_grid, Fitter, SimConfig,
};

fn main() -> crossfit::Result<()> {
    let replicates: usize = std::env::args()
        .nth(1)
        .and_then(|v| v.parse().ok())
        .unwrap_or(10);
    let s_values = [1e3, 10f64.powf(3.5), 1e4];
    let fitters = [Fitter::Backfit, Fitter::Naive];
    let fit_config = FitConfig::default();

    for (label, base) in [
        ("a) null slopes", SimConfig::preset_a(1e3, 900)),
        ("b) spread slopes", SimConfig::preset_b(1e3, 901)),
    ] {
        println!("case {label} ({replicates} replicates per size)");
        let records = run_mse_grid(&base, &s_values, &fitters, replicates, &fit_config)?;
        println!(
            "{:>10} {:>22} {:>22}",
            "", "intercept mse (slope)", "non-intercept mse (slope)"
        );
        for fitter in ["backfit", "naive"] {
            let inter = metric_curve(&records, fitter, "sq_err_intercept");
            let noninter = metric_curve(&records, fitter, "sq_err_noninter");
            println!(
                "{:>10} {:>15.6} ({:>5.2}) {:>15.6} ({:>5.2})",
                fitter,
                inter.last().unwrap().1,
                loglog_slope(&inter),
                noninter.last().unwrap().1,
                loglog_slope(&noninter),
            );
        }
        let sig_a = metric_curve(&records, "backfit", "sq_err_sigma_a");
        println!(
            "{:>10} sigma_a mse at largest N: {:.6}\n",
            "", sig_a.last().unwrap().1
        );
    }
    Ok(())
}
