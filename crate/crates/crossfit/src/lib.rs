//! Logistic regression with two crossed random effects at O(N) cost.
//!
//! Fits the generalized linear mixed model
//!
//! ```text
//!   Pr(Y_ij = 1 | a, b) = logit^{-1}(x_ij' beta + a_i + b_j),
//!   a_i ~ N(0, sigma2_a),  b_j ~ N(0, sigma2_b)
//! ```
//!
//! on large sparse crossed designs by penalized quasi-likelihood. The
//! outer loop is a modified Schall iteration: weighted penalized least
//! squares on a working response, then moment updates of the variance
//! components using a block-diagonal approximation to the trace of the
//! inverse of the (R+C) x (R+C) ridge matrix. The inner solver is clubbed
//! backfitting: beta is updated jointly with one factor's effects at a
//! time, so sum-to-zero constraints from aliased design columns hold at
//! every half-step. Every pass over the data is O(N); incidence matrices
//! are never materialized.
//!
//! The crate also provides the matching sandwich covariance of beta, a
//! naive logistic baseline with its expected-score bias diagnostic, a
//! simulation and benchmark harness for sparse crossed designs, and dense
//! desk-scale oracles that verify both the solver and the trace
//! approximation theory. See the `examples/` directory for runnable entry
//! points and the `crossfit` binary for the command-line interface.

// `!(x > 0.0)` deliberately rejects NaN along with nonpositive values, and
// the numeric kernels index several parallel arrays by one observation
// counter, which zips would only obscure.
#![allow(clippy::neg_cmp_op_on_partial_ord)]
#![allow(clippy::needless_range_loop)]

pub mod backfit;
pub mod covariance;
pub mod design;
pub mod error;
pub mod io;
pub mod logistic;
pub mod oracle;
pub mod schall;
pub mod simulate;
pub mod smoother;

#[cfg(test)]
pub(crate) mod testutil;

pub use backfit::{
    apply_sab, apply_sab_detailed, club_step_a, club_step_b, penalized_objective,
    solve_pwls_clubbed, Centering, PwlsProblem, PwlsSolution, SabFit,
};
pub use covariance::{
    naivete_and_inefficiency, sandwich_cov_one_factor, sandwich_cov_two_factor, CovReport,
};
pub use design::{
    group_counts, validate_and_compact, CrossedDesign, Factor, GroupCounts, LevelMaps,
    RawObservation,
};
pub use error::{Error, Result};
pub use io::{read_design_csv, write_design_csv, CoefficientEstimate, FitOutput, IngestedDesign};
pub use logistic::{expected_score_bias, irls_logistic, LrFit};
pub use schall::{
    approx_nu, fit, refresh_weights, sigmoid, update_dispersion, update_variances,
    working_response, FitConfig, FitResult, FitState, OuterIteration, TraceMode,
};
pub use simulate::{
    gen_features, gen_response, loglog_slope, run_mse_grid, run_timing_grid, sample_pattern,
    simulate_dataset, BenchRecord, Fitter, PatternSkeleton, SimConfig, SimTruth, SimulatedData,
};
pub use smoother::{
    apply_centered_smoother, apply_group_smoother, symmetric_weighted_residualizer,
    FactorWeights, SmootherFit,
};
