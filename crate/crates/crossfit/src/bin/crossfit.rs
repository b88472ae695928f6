//! Command-line front end: fit a CSV dataset, simulate one, run the
//! benchmark grids, or run the dense verification suite. All real work
//! lives in the library.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context};
use clap::{Parser, Subcommand, ValueEnum};

use crossfit::io::{self, CoefficientEstimate, FitOutput};
use crossfit::oracle;
use crossfit::schall::{bernoulli_variance, FitConfig};
use crossfit::simulate::{self, Fitter, SimConfig};
use crossfit::{
    covariance, irls_logistic, sandwich_cov_two_factor, FactorWeights, LevelMaps,
};

#[derive(Parser)]
#[command(
    name = "crossfit",
    about = "Logistic regression with two crossed random effects in O(N)",
    version
)]
struct Cli {
    /// Worker threads for column-parallel work (also CROSSFIT_THREADS).
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum Preset {
    A,
    B,
    Timing,
}

#[derive(Subcommand)]
enum Command {
    /// Fit the mixed model to a design CSV and write a JSON result.
    Fit {
        data: PathBuf,
        /// Prepend an all-ones intercept column.
        #[arg(long)]
        intercept: bool,
        /// Outer stopping threshold on the squared relative change of the
        /// linear predictor.
        #[arg(long, default_value_t = 1e-8)]
        epsilon: f64,
        #[arg(long, default_value_t = 200)]
        max_outer: usize,
        /// Lower bound on the working weights mu(1-mu)/phi; 0 disables it.
        /// Only needed when fitted means collapse onto 0 or 1.
        #[arg(long, default_value_t = 0.0)]
        weight_floor: f64,
        /// Also fit naive logistic regression and report naivete and
        /// inefficiency diagnostics.
        #[arg(long)]
        compare_naive: bool,
        /// Include the full covariance matrix of the coefficients.
        #[arg(long)]
        full_cov: bool,
        #[arg(long, default_value = "result.json")]
        out: PathBuf,
    },
    /// Write a simulated design CSV plus a truth JSON for scoring.
    Simulate {
        #[arg(long)]
        s: f64,
        #[arg(long, default_value_t = 0.56)]
        rho: f64,
        #[arg(long, default_value_t = 0.56)]
        kappa: f64,
        #[arg(long, value_enum, default_value_t = Preset::A)]
        preset: Preset,
        #[arg(long, default_value_t = 1.0)]
        upsilon: f64,
        #[arg(long, default_value_t = 1)]
        seed: u64,
        #[arg(long, default_value = "data.csv")]
        out: PathBuf,
    },
    /// Run the accuracy (and optionally timing) grids; write a long CSV.
    Bench {
        /// Comma-separated grid of size parameters S.
        #[arg(long, value_delimiter = ',', required = true)]
        grid: Vec<f64>,
        #[arg(long, value_delimiter = ',', default_value = "backfit,naive")]
        fitters: Vec<String>,
        #[arg(long, default_value_t = 20)]
        replicates: usize,
        #[arg(long, value_enum, default_value_t = Preset::A)]
        preset: Preset,
        #[arg(long, default_value_t = 1)]
        seed: u64,
        /// Run the sequential timing grid instead of the accuracy grid.
        #[arg(long)]
        timing: bool,
        #[arg(long, default_value = "table.csv")]
        out: PathBuf,
    },
    /// Dense verification of the trace approximation on sampled designs.
    Verify {
        /// Comma-separated size parameters; one report per value.
        #[arg(long, value_delimiter = ',', required = true)]
        s: Vec<f64>,
        #[arg(long, default_value_t = 0.4)]
        rho: f64,
        #[arg(long, default_value_t = 0.4)]
        kappa: f64,
        #[arg(long, default_value_t = 1)]
        seed: u64,
        /// Eigenvalue tail threshold reported per design.
        #[arg(long, default_value_t = 0.5)]
        delta: f64,
        #[arg(long, default_value = "report.json")]
        out: PathBuf,
    },
}

fn preset_config(preset: Preset, s: f64, seed: u64) -> SimConfig {
    match preset {
        Preset::A => SimConfig::preset_a(s, seed),
        Preset::B => SimConfig::preset_b(s, seed),
        Preset::Timing => SimConfig::preset_timing(s, seed),
    }
}

fn configure_threads(flag: Option<usize>) {
    let from_env = std::env::var("CROSSFIT_THREADS")
        .ok()
        .and_then(|v| v.parse::<usize>().ok());
    if let Some(threads) = flag.or(from_env) {
        // ignore failure: the pool can only be configured once
        let _ = rayon::ThreadPoolBuilder::new()
            .num_threads(threads.max(1))
            .build_global();
    }
}

#[allow(clippy::too_many_arguments)]
fn run_fit(
    data: &Path,
    intercept: bool,
    epsilon: f64,
    max_outer: usize,
    weight_floor: f64,
    compare_naive: bool,
    full_cov: bool,
    out: &Path,
) -> anyhow::Result<ExitCode> {
    let ingested = io::read_design_csv(data, intercept)
        .with_context(|| format!("reading {}", data.display()))?;
    let design = &ingested.design;
    eprintln!(
        "fitting N={} observations, R={} x C={} levels, p={} features",
        design.n_obs(),
        design.n_rows(),
        design.n_cols(),
        design.n_features()
    );
    let config = FitConfig {
        epsilon,
        max_outer,
        weight_floor,
        inner_tol: epsilon,
        ..FitConfig::default()
    };
    let result = crossfit::fit(design, &config)?;
    let cov = sandwich_cov_two_factor(design, &result.state)?;
    let coefficients: Vec<CoefficientEstimate> = ingested
        .feature_names
        .iter()
        .enumerate()
        .map(|(q, name)| CoefficientEstimate {
            name: name.clone(),
            estimate: result.state.beta[q],
            std_error: cov[(q, q)].max(0.0).sqrt(),
        })
        .collect();
    let comparison = if compare_naive {
        let lr = irls_logistic(design, 1e-10, 200)?;
        Some(covariance::naivete_and_inefficiency(design, &result.state, &lr)?)
    } else {
        None
    };
    let output = FitOutput {
        converged: result.converged,
        outer_iterations: result.outer_iterations,
        epsilon,
        coefficients,
        sigma2_a: result.state.sigma2_a,
        sigma2_b: result.state.sigma2_b,
        phi: result.state.phi,
        phi_unclamped: result.state.phi_raw,
        trace: result.trace.clone(),
        covariance: full_cov.then(|| {
            (0..cov.nrows())
                .map(|i| (0..cov.ncols()).map(|j| cov[(i, j)]).collect())
                .collect()
        }),
        comparison,
    };
    io::write_json(out, &output)?;
    eprintln!("wrote {}", out.display());
    if result.converged {
        Ok(ExitCode::SUCCESS)
    } else {
        eprintln!(
            "warning: not converged after {} outer iterations",
            result.outer_iterations
        );
        Ok(ExitCode::from(2))
    }
}

fn run_simulate(config: &SimConfig, out: &Path) -> anyhow::Result<ExitCode> {
    let sim = simulate::simulate_dataset(config)?;
    let maps = LevelMaps {
        row_levels: (0..sim.design.n_rows()).map(|i| format!("r{i}")).collect(),
        col_levels: (0..sim.design.n_cols()).map(|j| format!("c{j}")).collect(),
    };
    // the intercept column is implicit in the CSV schema
    io::write_design_csv(out, &sim.design, &maps, 1)?;
    let truth_path = out.with_extension("truth.json");
    io::write_json(&truth_path, &sim.truth)?;
    eprintln!(
        "wrote {} (N={}, R={}, C={}) and {}",
        out.display(),
        sim.design.n_obs(),
        sim.design.n_rows(),
        sim.design.n_cols(),
        truth_path.display()
    );
    Ok(ExitCode::SUCCESS)
}

fn run_bench(
    grid: &[f64],
    fitters: &[String],
    replicates: usize,
    preset: Preset,
    seed: u64,
    timing: bool,
    out: &Path,
) -> anyhow::Result<ExitCode> {
    let base = preset_config(preset, grid[0], seed);
    let fit_config = FitConfig::default();
    let records = if timing {
        simulate::run_timing_grid(&base, grid, replicates, &fit_config)?
    } else {
        let fitters: Vec<Fitter> = fitters
            .iter()
            .map(|name| Fitter::parse(name))
            .collect::<Result<_, _>>()?;
        if fitters.is_empty() {
            bail!("no fitters selected");
        }
        simulate::run_mse_grid(&base, grid, &fitters, replicates, &fit_config)?
    };
    io::write_bench_csv(out, &records)?;
    eprintln!("wrote {} ({} rows)", out.display(), records.len());
    Ok(ExitCode::SUCCESS)
}

fn run_verify(
    s_values: &[f64],
    rho: f64,
    kappa: f64,
    seed: u64,
    delta: f64,
    out: &Path,
) -> anyhow::Result<ExitCode> {
    let mut reports = Vec::new();
    for (idx, &s) in s_values.iter().enumerate() {
        let mut config = SimConfig::preset_a(s, seed.wrapping_add(idx as u64));
        config.rho = rho;
        config.kappa = kappa;
        let sim = simulate::simulate_dataset(&config)?;
        // weights at the simulated truth: mu (1 - mu) with phi = 1
        let zeta = sim
            .design
            .linear_predictor(&sim.truth.beta, &sim.truth.a, &sim.truth.b);
        let w: Vec<f64> = zeta.iter().map(|&v| bernoulli_variance(v)).collect();
        let weights = FactorWeights::new(&sim.design, w)?;
        let report = oracle::oracle_report(
            &sim.design,
            &weights,
            config.sigma_a * config.sigma_a,
            config.sigma_b * config.sigma_b,
            delta,
        )?;
        eprintln!(
            "S={s}: R={} C={} rho={:.4} sum_bound={:.4} err_a/R={:.6}",
            report.n_rows,
            report.n_cols,
            report.spectral.spectral_radius,
            report.spectral.sum_bound,
            report.traces.err_a / report.n_rows as f64,
        );
        reports.push(report);
    }
    io::write_json(out, &reports)?;
    eprintln!("wrote {}", out.display());
    Ok(ExitCode::SUCCESS)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    configure_threads(cli.threads);
    let outcome = match &cli.command {
        Command::Fit {
            data,
            intercept,
            epsilon,
            max_outer,
            weight_floor,
            compare_naive,
            full_cov,
            out,
        } => run_fit(
            data,
            *intercept,
            *epsilon,
            *max_outer,
            *weight_floor,
            *compare_naive,
            *full_cov,
            out,
        ),
        Command::Simulate { s, rho, kappa, preset, upsilon, seed, out } => {
            let mut config = preset_config(*preset, *s, *seed);
            config.rho = *rho;
            config.kappa = *kappa;
            config.upsilon = *upsilon;
            run_simulate(&config, out)
        }
        Command::Bench { grid, fitters, replicates, preset, seed, timing, out } => {
            run_bench(grid, fitters, *replicates, *preset, *seed, *timing, out)
        }
        Command::Verify { s, rho, kappa, seed, delta, out } => {
            run_verify(s, *rho, *kappa, *seed, *delta, out)
        }
    };
    match outcome {
        Ok(code) => code,
        Err(err) => {
            eprintln!("error: {err:#}");
            ExitCode::from(1)
        }
    }
}
