//! Per-iteration and total fit cost versus N: both should scale linearly.
//!
//!     cargo run --release --example timing_scaling
//!
//! Uses a smaller grid than the acceptance suite so it finishes quickly;
//! pass a maximum size parameter to go bigger:
//!
//!     cargo run --release --example timing_scaling -- 1000000

use crossfit::schall::FitConfig;
use crossfit::simulate::{loglog_slope, run_timing_grid, SimConfig};

fn main() -> crossfit::Result<()> {
    let max_s: f64 = std::env::args()
        .nth(1)
        .and_then(|v| v.parse().ok())
        .unwrap_or(3e5);
    let mut s_values = vec![1e4, 3e4, 1e5, 3e5, 1e6];
    s_values.retain(|&s| s <= max_s);

    let base = SimConfig::preset_timing(1e4, 31);
    let records = run_timing_grid(&base, &s_values, 2, &FitConfig::default())?;

    println!(
        "{:>10} {:>10} {:>8} {:>14} {:>12}",
        "S", "N", "iters", "sec/iteration", "sec total"
    );
    let mut per_iter_points = Vec::new();
    let mut total_points = Vec::new();
    for &s in &s_values {
        let pick = |metric: &str| -> f64 {
            records
                .iter()
                .filter(|r| r.s == s && r.metric == metric)
                .map(|r| r.value)
                .fold(f64::INFINITY, f64::min)
        };
        let n = records.iter().find(|r| r.s == s).map(|r| r.n).unwrap_or(0);
        let per_iter = pick("seconds_per_iteration");
        let total = pick("seconds_total");
        let iters = pick("outer_iterations");
        println!("{s:>10.0} {n:>10} {iters:>8.0} {per_iter:>14.5} {total:>12.3}");
        per_iter_points.push((n as f64, per_iter));
        total_points.push((n as f64, total));
    }
    println!(
        "\nlog-log slope vs N: per-iteration {:.3}, total {:.3} (1.0 = linear)",
        loglog_slope(&per_iter_points),
        loglog_slope(&total_points)
    );
    Ok(())
}
