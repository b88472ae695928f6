//! Synthetic sparse crossed designs and the benchmark grids.
//!
//! The observation pattern follows the size-S model: R = floor(S^rho) rows
//! crossed with C = floor(S^kappa) columns, each cell included
//! independently with probability in [S/(RC), Upsilon S/(RC)] (clamped at
//! one). Generation streams over included cells with geometric skips, so
//! the R x C grid is never materialized. Features are autocorrelated
//! Gaussians with an explicit all-ones intercept column; responses follow
//! the latent-threshold form of the logistic mixed model.

use std::time::Instant;

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::design::CrossedDesign;
use crate::error::{Error, Result};
use crate::logistic::irls_logistic;
use crate::schall::{fit, sigmoid, FitConfig};

/// Parameters of one simulated dataset.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SimConfig {
    /// Size parameter S; expected sample size up to the Upsilon band.
    pub s: f64,
    /// Row count exponent, R = floor(S^rho).
    pub rho: f64,
    /// Column count exponent, C = floor(S^kappa).
    pub kappa: f64,
    /// Heterogeneity band of the inclusion probabilities; 1 = uniform.
    pub upsilon: f64,
    /// True coefficients, intercept first.
    pub beta_true: Vec<f64>,
    pub sigma_a: f64,
    pub sigma_b: f64,
    /// AR(1) parameter of the feature covariance.
    pub ar_gamma: f64,
    pub seed: u64,
}

impl SimConfig {
    /// Intercept -2, seven null slopes: rare events, null fixed effects.
    pub fn preset_a(s: f64, seed: u64) -> Self {
        Self {
            s,
            rho: 0.56,
            kappa: 0.56,
            upsilon: 1.0,
            beta_true: vec![-2.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0],
            sigma_a: 0.8,
            sigma_b: 0.4,
            ar_gamma: 0.5,
            seed,
        }
    }

    /// Intercept -2 with slopes -2 + 0.5 l for l = 1..7.
    pub fn preset_b(s: f64, seed: u64) -> Self {
        let mut beta = vec![-2.0];
        beta.extend((1..=7).map(|l| -2.0 + 0.5 * l as f64));
        Self { beta_true: beta, ..Self::preset_a(s, seed) }
    }

    /// All-zero coefficients; the timing configuration.
    pub fn preset_timing(s: f64, seed: u64) -> Self {
        Self { beta_true: vec![0.0; 8], ..Self::preset_a(s, seed) }
    }

    pub fn n_features(&self) -> usize {
        self.beta_true.len()
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.s >= 1.0) {
            return Err(Error::InvalidConfig(format!("s must be >= 1, got {}", self.s)));
        }
        for (name, e) in [("rho", self.rho), ("kappa", self.kappa)] {
            if !(e > 0.0 && e < 1.0) {
                return Err(Error::InvalidConfig(format!("{name} must lie in (0,1), got {e}")));
            }
        }
        if !(self.upsilon >= 1.0) {
            return Err(Error::InvalidConfig(format!(
                "upsilon must be >= 1, got {}",
                self.upsilon
            )));
        }
        if !(self.ar_gamma.abs() < 1.0) {
            return Err(Error::InvalidConfig(format!(
                "ar_gamma must lie in (-1,1), got {}",
                self.ar_gamma
            )));
        }
        if self.sigma_a < 0.0 || self.sigma_b < 0.0 {
            return Err(Error::InvalidConfig("sigma_a and sigma_b must be nonnegative".into()));
        }
        if self.beta_true.is_empty() {
            return Err(Error::InvalidConfig("beta_true must include the intercept".into()));
        }
        Ok(())
    }
}

/// Observation pattern before features and responses are attached.
#[derive(Debug, Clone)]
pub struct PatternSkeleton {
    pub n_rows: usize,
    pub n_cols: usize,
    pub row_of: Vec<u32>,
    pub col_of: Vec<u32>,
}

impl PatternSkeleton {
    pub fn n_obs(&self) -> usize {
        self.row_of.len()
    }
}

fn stream_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// Emits cell indices of a Bernoulli(p) process over `total` cells using
/// geometric skips; O(number of included cells) draws.
fn bernoulli_cells(rng: &mut ChaCha8Rng, total: u64, p: f64, mut emit: impl FnMut(u64)) {
    if p >= 1.0 {
        for k in 0..total {
            emit(k);
        }
        return;
    }
    if p <= 0.0 {
        return;
    }
    let log1mp = (-p).ln_1p();
    let mut k = 0u64;
    loop {
        let u: f64 = rng.gen_range(f64::MIN_POSITIVE..1.0);
        let skip = (u.ln() / log1mp).floor();
        if skip >= (total - k) as f64 {
            return;
        }
        k += skip as u64;
        emit(k);
        k += 1;
        if k >= total {
            return;
        }
    }
}

/// Samples the observation pattern: each cell (i, j) of the
/// floor(S^rho) x floor(S^kappa) grid enters independently with
/// probability p_ij in the configured band, clamped at one. Empty rows
/// and columns are dropped and indices compacted.
pub fn sample_pattern(config: &SimConfig) -> Result<PatternSkeleton> {
    config.validate()?;
    let r = (config.s.powf(config.rho).floor() as usize).max(1);
    let c = (config.s.powf(config.kappa).floor() as usize).max(1);
    let base = config.s / (r as f64 * c as f64);

    let mut rng = stream_rng(config.seed, 0);
    let mut raw_rows: Vec<u32> = Vec::new();
    let mut raw_cols: Vec<u32> = Vec::new();

    if config.upsilon == 1.0 {
        let p = base.min(1.0);
        let expected = r as f64 * c as f64 * p;
        if expected < 1.0 {
            return Err(Error::InvalidConfig(format!(
                "degenerate pattern: expected sample size {expected} < 1"
            )));
        }
        bernoulli_cells(&mut rng, (r * c) as u64, p, |k| {
            raw_rows.push((k / c as u64) as u32);
            raw_cols.push((k % c as u64) as u32);
        });
    } else {
        // p_ij = base u_i v_j with u, v uniform on [1, sqrt(Upsilon)]
        // stays inside the [base, Upsilon base] band; an upsilon so close
        // to one that the band collapses degenerates to the uniform case
        let root = config.upsilon.sqrt();
        let mut band = |k: usize| -> Vec<f64> {
            if root > 1.0 {
                (0..k).map(|_| rng.gen_range(1.0..root)).collect()
            } else {
                vec![1.0; k]
            }
        };
        let u = band(r);
        let v = band(c);
        let expected: f64 = base.min(1.0) * r as f64 * c as f64;
        if expected < 1.0 {
            return Err(Error::InvalidConfig(format!(
                "degenerate pattern: expected sample size below {expected} < 1"
            )));
        }
        for (i, &ui) in u.iter().enumerate() {
            let p_max = (base * ui * root).min(1.0);
            let mut accepted: Vec<u32> = Vec::new();
            bernoulli_cells(&mut rng, c as u64, p_max, |j| {
                accepted.push(j as u32);
            });
            // thin to the exact cell probability
            for j in accepted {
                let p_ij = (base * ui * v[j as usize]).min(1.0);
                if rng.gen::<f64>() < p_ij / p_max {
                    raw_rows.push(i as u32);
                    raw_cols.push(j);
                }
            }
        }
    }

    if raw_rows.is_empty() {
        return Err(Error::InvalidConfig("sampled pattern is empty; increase s".into()));
    }

    // drop unobserved levels
    let mut row_map = vec![u32::MAX; r];
    let mut col_map = vec![u32::MAX; c];
    let mut next_row = 0u32;
    let mut next_col = 0u32;
    for (&i, &j) in raw_rows.iter().zip(&raw_cols) {
        if row_map[i as usize] == u32::MAX {
            row_map[i as usize] = next_row;
            next_row += 1;
        }
        if col_map[j as usize] == u32::MAX {
            col_map[j as usize] = next_col;
            next_col += 1;
        }
    }
    let row_of: Vec<u32> = raw_rows.iter().map(|&i| row_map[i as usize]).collect();
    let col_of: Vec<u32> = raw_cols.iter().map(|&j| col_map[j as usize]).collect();
    Ok(PatternSkeleton {
        n_rows: next_row as usize,
        n_cols: next_col as usize,
        row_of,
        col_of,
    })
}

/// N x p feature matrix, row-major: an all-ones intercept column followed
/// by p-1 zero-mean unit-variance Gaussians with AR(1) correlation
/// gamma^{|k-l|} across columns.
pub fn gen_features(n_obs: usize, p: usize, ar_gamma: f64, rng: &mut ChaCha8Rng) -> Vec<f64> {
    assert!(p >= 1);
    assert!(ar_gamma.abs() < 1.0);
    let k = p - 1;
    let mut x = vec![0.0; n_obs * p];
    if k == 0 {
        for n in 0..n_obs {
            x[n * p] = 1.0;
        }
        return x;
    }
    let mut cov = DMatrix::<f64>::zeros(k, k);
    for i in 0..k {
        for j in 0..k {
            cov[(i, j)] = ar_gamma.powi((i as i32 - j as i32).abs());
        }
    }
    let chol = cov.cholesky().expect("AR(1) covariance is positive definite").l();
    let mut eps = vec![0.0; k];
    for n in 0..n_obs {
        for e in eps.iter_mut() {
            *e = rng.sample(StandardNormal);
        }
        x[n * p] = 1.0;
        for i in 0..k {
            let mut v = 0.0;
            for j in 0..=i {
                v += chol[(i, j)] * eps[j];
            }
            x[n * p + 1 + i] = v;
        }
    }
    x
}

/// Draws the random effects and binary responses: Y = 1 exactly when
/// x'beta + a_i + b_j + e > 0 for a logistic latent e, i.e. Bernoulli with
/// the logistic mean.
pub fn gen_response(
    skeleton: &PatternSkeleton,
    x: &[f64],
    beta: &[f64],
    sigma_a: f64,
    sigma_b: f64,
    rng: &mut ChaCha8Rng,
) -> (Vec<f64>, Vec<f64>, Vec<f64>) {
    let p = beta.len();
    let n = skeleton.n_obs();
    assert_eq!(x.len(), n * p);
    let a: Vec<f64> = (0..skeleton.n_rows)
        .map(|_| sigma_a * rng.sample::<f64, _>(StandardNormal))
        .collect();
    let b: Vec<f64> = (0..skeleton.n_cols)
        .map(|_| sigma_b * rng.sample::<f64, _>(StandardNormal))
        .collect();
    let mut y = vec![0.0; n];
    for i in 0..n {
        let mut eta = 0.0;
        for q in 0..p {
            eta += x[i * p + q] * beta[q];
        }
        eta += a[skeleton.row_of[i] as usize] + b[skeleton.col_of[i] as usize];
        y[i] = f64::from(rng.gen::<f64>() < sigmoid(eta));
    }
    (y, a, b)
}

/// Ground truth stored alongside a simulated dataset for scoring.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SimTruth {
    pub beta: Vec<f64>,
    pub sigma_a: f64,
    pub sigma_b: f64,
    pub a: Vec<f64>,
    pub b: Vec<f64>,
}

#[derive(Debug, Clone)]
pub struct SimulatedData {
    pub design: CrossedDesign,
    pub truth: SimTruth,
}

/// Full pipeline: pattern, features, responses, assembled into a design.
pub fn simulate_dataset(config: &SimConfig) -> Result<SimulatedData> {
    let skeleton = sample_pattern(config)?;
    let p = config.n_features();
    let mut feat_rng = stream_rng(config.seed, 1);
    let x = gen_features(skeleton.n_obs(), p, config.ar_gamma, &mut feat_rng);
    let mut resp_rng = stream_rng(config.seed, 2);
    let (y, a, b) = gen_response(
        &skeleton,
        &x,
        &config.beta_true,
        config.sigma_a,
        config.sigma_b,
        &mut resp_rng,
    );
    let design = CrossedDesign::from_parts(
        skeleton.n_rows,
        skeleton.n_cols,
        p,
        skeleton.row_of,
        skeleton.col_of,
        y,
        x,
    )?;
    Ok(SimulatedData {
        design,
        truth: SimTruth {
            beta: config.beta_true.clone(),
            sigma_a: config.sigma_a,
            sigma_b: config.sigma_b,
            a,
            b,
        },
    })
}

/// Which estimator a benchmark cell runs.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Fitter {
    Backfit,
    Naive,
}

impl Fitter {
    pub fn name(self) -> &'static str {
        match self {
            Fitter::Backfit => "backfit",
            Fitter::Naive => "naive",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "backfit" => Ok(Fitter::Backfit),
            "naive" => Ok(Fitter::Naive),
            other => Err(Error::InvalidConfig(format!("unknown fitter '{other}'"))),
        }
    }
}

/// One benchmark measurement; serializes to the long CSV format
/// fitter,S,N,metric,value,replicate.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BenchRecord {
    pub fitter: String,
    pub s: f64,
    pub n: usize,
    pub metric: String,
    pub value: f64,
    pub replicate: usize,
}

fn mix_seed(base: u64, cell: u64, replicate: u64) -> u64 {
    let mut x = base
        .wrapping_add(cell.wrapping_mul(0x9E37_79B9_7F4A_7C15))
        .wrapping_add(replicate.wrapping_mul(0xBF58_476D_1CE4_E5B9));
    x ^= x >> 30;
    x = x.wrapping_mul(0xBF58_476D_1CE4_E5B9);
    x ^= x >> 27;
    x = x.wrapping_mul(0x94D0_49BB_1331_11EB);
    x ^ (x >> 31)
}

#[allow(clippy::too_many_arguments)]
fn squared_error_records(
    records: &mut Vec<BenchRecord>,
    fitter: Fitter,
    s: f64,
    n: usize,
    replicate: usize,
    beta_hat: &[f64],
    truth: &SimTruth,
    sigma_hat: Option<(f64, f64)>,
) {
    let mut push = |metric: &str, value: f64| {
        records.push(BenchRecord {
            fitter: fitter.name().to_string(),
            s,
            n,
            metric: metric.to_string(),
            value,
            replicate,
        });
    };
    let e0 = beta_hat[0] - truth.beta[0];
    push("sq_err_intercept", e0 * e0);
    if beta_hat.len() > 1 {
        let mean: f64 = beta_hat[1..]
            .iter()
            .zip(&truth.beta[1..])
            .map(|(h, t)| (h - t) * (h - t))
            .sum::<f64>()
            / (beta_hat.len() - 1) as f64;
        push("sq_err_noninter", mean);
    }
    if let Some((sa, sb)) = sigma_hat {
        push("sq_err_sigma_a", (sa - truth.sigma_a) * (sa - truth.sigma_a));
        push("sq_err_sigma_b", (sb - truth.sigma_b) * (sb - truth.sigma_b));
    }
}

/// Accuracy grid: per size, fitter, and replicate, the squared estimation
/// errors split into intercept and non-intercept parts, plus variance
/// component errors and timings. Replicates run in parallel; each owns an
/// RNG stream derived from (seed, grid cell, replicate).
pub fn run_mse_grid(
    base: &SimConfig,
    s_values: &[f64],
    fitters: &[Fitter],
    replicates: usize,
    fit_config: &FitConfig,
) -> Result<Vec<BenchRecord>> {
    if s_values.len() < 2 {
        return Err(Error::InvalidConfig("the grid needs at least 2 size values".into()));
    }
    let cells: Vec<(usize, usize)> = (0..s_values.len())
        .flat_map(|si| (0..replicates).map(move |rep| (si, rep)))
        .collect();
    let results: Vec<Vec<BenchRecord>> = cells
        .par_iter()
        .map(|&(si, rep)| -> Vec<BenchRecord> {
            let s = s_values[si];
            let mut config = base.clone();
            config.s = s;
            config.seed = mix_seed(base.seed, si as u64, rep as u64);
            let mut records = Vec::new();
            let sim = match simulate_dataset(&config) {
                Ok(sim) => sim,
                Err(_) => {
                    records.push(BenchRecord {
                        fitter: "simulate".into(),
                        s,
                        n: 0,
                        metric: "failed".into(),
                        value: 1.0,
                        replicate: rep,
                    });
                    return records;
                }
            };
            let n = sim.design.n_obs();
            for &fitter in fitters {
                let start = Instant::now();
                let outcome: Result<()> = match fitter {
                    Fitter::Backfit => fit(&sim.design, fit_config).map(|res| {
                        squared_error_records(
                            &mut records,
                            fitter,
                            s,
                            n,
                            rep,
                            &res.state.beta,
                            &sim.truth,
                            Some((res.state.sigma2_a.sqrt(), res.state.sigma2_b.sqrt())),
                        );
                        records.push(BenchRecord {
                            fitter: fitter.name().into(),
                            s,
                            n,
                            metric: "outer_iterations".into(),
                            value: res.outer_iterations as f64,
                            replicate: rep,
                        });
                    }),
                    Fitter::Naive => irls_logistic(&sim.design, 1e-10, 100).map(|res| {
                        squared_error_records(
                            &mut records,
                            fitter,
                            s,
                            n,
                            rep,
                            &res.beta,
                            &sim.truth,
                            None,
                        );
                    }),
                };
                let seconds = start.elapsed().as_secs_f64();
                match outcome {
                    Ok(()) => records.push(BenchRecord {
                        fitter: fitter.name().into(),
                        s,
                        n,
                        metric: "seconds_total".into(),
                        value: seconds,
                        replicate: rep,
                    }),
                    Err(_) => records.push(BenchRecord {
                        fitter: fitter.name().into(),
                        s,
                        n,
                        metric: "failed".into(),
                        value: 1.0,
                        replicate: rep,
                    }),
                }
            }
            records
        })
        .collect();
    Ok(results.into_iter().flatten().collect())
}

/// Timing grid: sequential per-size fits (simulation excluded from the
/// clock), reporting total seconds, seconds per outer iteration, and the
/// iteration count.
pub fn run_timing_grid(
    base: &SimConfig,
    s_values: &[f64],
    replicates: usize,
    fit_config: &FitConfig,
) -> Result<Vec<BenchRecord>> {
    let mut records = Vec::new();
    // warm pass so allocator and code paths are hot before timing
    {
        let mut config = base.clone();
        config.s = s_values.iter().cloned().fold(f64::INFINITY, f64::min);
        config.seed = mix_seed(base.seed, u64::MAX, 0);
        let sim = simulate_dataset(&config)?;
        let _ = fit(&sim.design, fit_config)?;
    }
    for (si, &s) in s_values.iter().enumerate() {
        for rep in 0..replicates {
            let mut config = base.clone();
            config.s = s;
            config.seed = mix_seed(base.seed, si as u64, rep as u64);
            let sim = simulate_dataset(&config)?;
            let n = sim.design.n_obs();
            let start = Instant::now();
            let res = fit(&sim.design, fit_config)?;
            let seconds = start.elapsed().as_secs_f64();
            let iters = res.outer_iterations.max(1) as f64;
            for (metric, value) in [
                ("seconds_total", seconds),
                ("seconds_per_iteration", seconds / iters),
                ("outer_iterations", iters),
            ] {
                records.push(BenchRecord {
                    fitter: "backfit".into(),
                    s,
                    n,
                    metric: metric.into(),
                    value,
                    replicate: rep,
                });
            }
        }
    }
    Ok(records)
}

/// Least-squares slope of log10(y) against log10(x).
pub fn loglog_slope(points: &[(f64, f64)]) -> f64 {
    let n = points.len() as f64;
    let lx: Vec<f64> = points.iter().map(|p| p.0.log10()).collect();
    let ly: Vec<f64> = points.iter().map(|p| p.1.log10()).collect();
    let mx = lx.iter().sum::<f64>() / n;
    let my = ly.iter().sum::<f64>() / n;
    let sxy: f64 = lx.iter().zip(&ly).map(|(x, y)| (x - mx) * (y - my)).sum();
    let sxx: f64 = lx.iter().map(|x| (x - mx) * (x - mx)).sum();
    sxy / sxx
}

/// Mean of `metric` over replicates for each grid size, as (n_mean, value)
/// points ready for [`loglog_slope`].
pub fn metric_curve(records: &[BenchRecord], fitter: &str, metric: &str) -> Vec<(f64, f64)> {
    let mut sizes: Vec<f64> = records
        .iter()
        .filter(|r| r.fitter == fitter && r.metric == metric)
        .map(|r| r.s)
        .collect();
    sizes.sort_by(f64::total_cmp);
    sizes.dedup();
    sizes
        .into_iter()
        .map(|s| {
            let rows: Vec<&BenchRecord> = records
                .iter()
                .filter(|r| r.fitter == fitter && r.metric == metric && r.s == s)
                .collect();
            let n_mean = rows.iter().map(|r| r.n as f64).sum::<f64>() / rows.len() as f64;
            let value = rows.iter().map(|r| r.value).sum::<f64>() / rows.len() as f64;
            (n_mean, value)
        })
        .collect()
}
