//! Dense, brute-force reference implementations for desk-scale checks.
//!
//! These routines materialize the matrices the O(N) solvers deliberately
//! avoid: the full penalized normal equations, the (R+C) x (R+C) ridge
//! matrix T and its inverse, and the spectral quantities that control the
//! error of the block-diagonal trace approximation. They exist to verify
//! the fast path, so they are guarded to desk sizes rather than letting a
//! quadratic-memory call run for hours.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::backfit::PwlsProblem;
use crate::design::{CrossedDesign, Factor};
use crate::error::{Error, Result};
use crate::smoother::FactorWeights;

/// Largest R + C (and p + R + C) the dense routines accept.
pub const SIZE_GUARD: usize = 2000;

fn check_guard(size: usize, what: &str) -> Result<()> {
    if size > SIZE_GUARD {
        return Err(Error::SizeGuard(format!(
            "{what} needs a dense system of size {size} > {SIZE_GUARD}"
        )));
    }
    Ok(())
}

/// Direct factorization solve of the full penalized weighted normal
/// equations over (beta, a, b). The equivalence oracle for the clubbed
/// backfitting solver.
pub fn dense_pwls_solve(problem: &PwlsProblem) -> Result<(Vec<f64>, Vec<f64>, Vec<f64>)> {
    let design = problem.design;
    let p = design.n_features();
    let r = design.n_rows();
    let c = design.n_cols();
    check_guard(p + r + c, "dense penalized least squares solve")?;

    let dim = p + r + c;
    let mut m = DMatrix::zeros(dim, dim);
    let mut rhs = DVector::zeros(dim);
    let w = problem.weights.w();
    for n in 0..design.n_obs() {
        let xr = design.x_row(n);
        let wi = w[n];
        let ai = p + design.row_of()[n] as usize;
        let bj = p + r + design.col_of()[n] as usize;
        for q in 0..p {
            let wq = wi * xr[q];
            for s in 0..p {
                m[(q, s)] += wq * xr[s];
            }
            m[(q, ai)] += wq;
            m[(ai, q)] += wq;
            m[(q, bj)] += wq;
            m[(bj, q)] += wq;
            rhs[q] += wq * problem.z[n];
        }
        m[(ai, ai)] += wi;
        m[(bj, bj)] += wi;
        m[(ai, bj)] += wi;
        m[(bj, ai)] += wi;
        rhs[ai] += wi * problem.z[n];
        rhs[bj] += wi * problem.z[n];
    }
    for i in 0..r {
        m[(p + i, p + i)] += 1.0 / problem.sigma2_a;
    }
    for j in 0..c {
        m[(p + r + j, p + r + j)] += 1.0 / problem.sigma2_b;
    }
    let sol = m
        .lu()
        .solve(&rhs)
        .ok_or_else(|| Error::SingularSystem("dense penalized normal equations".into()))?;
    Ok((
        sol.as_slice()[..p].to_vec(),
        sol.as_slice()[p..p + r].to_vec(),
        sol.as_slice()[p + r..].to_vec(),
    ))
}

/// Blocks of the partitioned ridge matrix T: diagonal blocks A and C and
/// the coupling block B, so that T(eta) = [[A, eta B], [eta B', C]].
#[derive(Debug, Clone)]
pub struct TraceParts {
    pub a_diag: DVector<f64>,
    pub b: DMatrix<f64>,
    pub c_diag: DVector<f64>,
    pub inv_sigma2_a: f64,
    pub inv_sigma2_b: f64,
}

impl TraceParts {
    /// Builds A, B, C from a design's weights: A = diag(W_i. + 1/sigma2_a),
    /// B_ij = summed weight in cell (i, j), C = diag(W_.j + 1/sigma2_b).
    pub fn from_design(
        design: &CrossedDesign,
        weights: &FactorWeights,
        sigma2_a: f64,
        sigma2_b: f64,
    ) -> Result<Self> {
        let r = design.n_rows();
        let c = design.n_cols();
        check_guard(r + c, "dense ridge matrix")?;
        for s2 in [sigma2_a, sigma2_b] {
            if !(s2 > 0.0) {
                return Err(Error::NonPositiveVariance(s2));
            }
        }
        let inv_sigma2_a = 1.0 / sigma2_a;
        let inv_sigma2_b = 1.0 / sigma2_b;
        let mut b = DMatrix::zeros(r, c);
        for n in 0..design.n_obs() {
            b[(design.row_of()[n] as usize, design.col_of()[n] as usize)] +=
                weights.w()[n];
        }
        let a_diag = DVector::from_iterator(
            r,
            weights.level_sums(Factor::A).iter().map(|s| s + inv_sigma2_a),
        );
        let c_diag = DVector::from_iterator(
            c,
            weights.level_sums(Factor::B).iter().map(|s| s + inv_sigma2_b),
        );
        Ok(Self { a_diag, b, c_diag, inv_sigma2_a, inv_sigma2_b })
    }

    /// The full (R+C) x (R+C) matrix T(eta).
    pub fn t_matrix(&self, eta: f64) -> DMatrix<f64> {
        let r = self.a_diag.len();
        let c = self.c_diag.len();
        let mut t = DMatrix::zeros(r + c, r + c);
        for i in 0..r {
            t[(i, i)] = self.a_diag[i];
        }
        for j in 0..c {
            t[(r + j, r + j)] = self.c_diag[j];
        }
        for i in 0..r {
            for j in 0..c {
                t[(i, r + j)] = eta * self.b[(i, j)];
                t[(r + j, i)] = eta * self.b[(i, j)];
            }
        }
        t
    }

    /// B_* = A^{-1/2} B C^{-1/2}.
    pub fn b_star(&self) -> DMatrix<f64> {
        let r = self.a_diag.len();
        let c = self.c_diag.len();
        let mut bs = self.b.clone();
        for i in 0..r {
            let ai = self.a_diag[i].sqrt();
            for j in 0..c {
                bs[(i, j)] /= ai * self.c_diag[j].sqrt();
            }
        }
        bs
    }
}

/// Exact (inverse-based) and approximate (block-diagonal) traces of the
/// two diagonal blocks of T^{-1}, plus the error series of each block.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TraceReport {
    pub exact_tr11: f64,
    pub exact_tr22: f64,
    pub approx_tr11: f64,
    pub approx_tr22: f64,
    /// Series value tr(A^{-1} sum_k (B* B*')^k); equals exact_tr11 - approx_tr11.
    pub err_a: f64,
    /// Series value tr(C^{-1} sum_k (B*' B*)^k); equals exact_tr22 - approx_tr22.
    pub err_b: f64,
}

/// Inverts T densely and extracts the block traces; also evaluates the
/// block-diagonal approximation and the closed-form error series.
pub fn exact_traces(parts: &TraceParts) -> Result<TraceReport> {
    let r = parts.a_diag.len();
    let c = parts.c_diag.len();
    let t = parts.t_matrix(1.0);
    let tinv = t
        .try_inverse()
        .ok_or_else(|| Error::SingularSystem("ridge matrix T".into()))?;
    let exact_tr11: f64 = (0..r).map(|i| tinv[(i, i)]).sum();
    let exact_tr22: f64 = (0..c).map(|j| tinv[(r + j, r + j)]).sum();
    let approx_tr11: f64 = parts.a_diag.iter().map(|v| 1.0 / v).sum();
    let approx_tr22: f64 = parts.c_diag.iter().map(|v| 1.0 / v).sum();
    let (err_a, err_b) = error_series(parts)?;
    Ok(TraceReport { exact_tr11, exact_tr22, approx_tr11, approx_tr22, err_a, err_b })
}

/// Wrapper building the parts from a design first.
pub fn exact_t_and_traces(
    design: &CrossedDesign,
    weights: &FactorWeights,
    sigma2_a: f64,
    sigma2_b: f64,
) -> Result<TraceReport> {
    exact_traces(&TraceParts::from_design(design, weights, sigma2_a, sigma2_b)?)
}

/// Closed forms of the two error series: tr(A^{-1}((I - M)^{-1} - I)) with
/// M = B* B*' for the first block and the transposed product for the
/// second. Requires the spectral radius below one.
fn error_series(parts: &TraceParts) -> Result<(f64, f64)> {
    let bs = parts.b_star();
    let m_a = &bs * bs.transpose();
    let m_c = bs.transpose() * &bs;
    let err = |m: &DMatrix<f64>, diag: &DVector<f64>| -> Result<f64> {
        let k = m.nrows();
        let eye = DMatrix::identity(k, k);
        let inv = (eye.clone() - m)
            .try_inverse()
            .ok_or_else(|| Error::SingularSystem("I - B* B*' in error series".into()))?;
        let sum = inv - eye;
        Ok((0..k).map(|i| sum[(i, i)] / diag[i]).sum())
    };
    Ok((err(&m_a, &parts.a_diag)?, err(&m_c, &parts.c_diag)?))
}

/// Degrees-of-freedom pair from the exact block traces of T^{-1};
/// the dense counterpart of the O(N) approximation.
pub fn exact_nu(
    design: &CrossedDesign,
    weights: &FactorWeights,
    sigma2_a: f64,
    sigma2_b: f64,
) -> Result<(f64, f64)> {
    let report = exact_t_and_traces(design, weights, sigma2_a, sigma2_b)?;
    Ok((report.exact_tr11 / sigma2_a, report.exact_tr22 / sigma2_b))
}

/// Truncated-series check of the trace perturbation identity.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SeriesCheck {
    /// |tr(T(eta)^{-1}) - tr(T(0)^{-1}) - truncated series|.
    pub residual: f64,
    pub exact_difference: f64,
    pub series_sum: f64,
    pub terms_used: usize,
}

/// Compares the exact trace difference tr(T(eta)^{-1}) - tr(T(0)^{-1})
/// against the series sum_{k<=K} eta^{2k} [tr(A^{-1} (B* B*')^k) +
/// tr(C^{-1} (B*' B*)^k)]. Truncation stops early once a term drops below
/// 1e-14. Errors if eta is outside the series' radius of convergence.
pub fn trace_series_check(parts: &TraceParts, eta: f64, truncation: usize) -> Result<SeriesCheck> {
    let bs = parts.b_star();
    let m_a = &bs * bs.transpose();
    let m_c = bs.transpose() * &bs;
    let spectral = spectral_radius_sym(&m_a).sqrt();
    if eta * spectral >= 1.0 {
        return Err(Error::InvalidConfig(format!(
            "eta * spectral radius = {} >= 1: outside the radius of convergence",
            eta * spectral
        )));
    }

    let t1 = parts.t_matrix(eta);
    let t0 = parts.t_matrix(0.0);
    let tr = |m: DMatrix<f64>| -> Result<f64> {
        let inv = m
            .try_inverse()
            .ok_or_else(|| Error::SingularSystem("T(eta) in series check".into()))?;
        Ok((0..inv.nrows()).map(|i| inv[(i, i)]).sum())
    };
    let exact_difference = tr(t1)? - tr(t0)?;

    let eta2 = eta * eta;
    let mut series_sum = 0.0;
    let mut pow_a = m_a.clone();
    let mut pow_c = m_c.clone();
    let mut scale = eta2;
    let mut terms_used = 0;
    for _ in 1..=truncation {
        terms_used += 1;
        let term_a: f64 = (0..pow_a.nrows()).map(|i| pow_a[(i, i)] / parts.a_diag[i]).sum();
        let term_c: f64 = (0..pow_c.nrows()).map(|j| pow_c[(j, j)] / parts.c_diag[j]).sum();
        let term = scale * (term_a + term_c);
        series_sum += term;
        if term.abs() < 1e-14 {
            break;
        }
        pow_a *= &m_a;
        pow_c *= &m_c;
        scale *= eta2;
    }
    Ok(SeriesCheck {
        residual: (exact_difference - series_sum).abs(),
        exact_difference,
        series_sum,
        terms_used,
    })
}

fn spectral_radius_sym(m: &DMatrix<f64>) -> f64 {
    let sym = (m + m.transpose()) * 0.5;
    sym.symmetric_eigen()
        .eigenvalues
        .iter()
        .fold(0.0f64, |acc, &v| acc.max(v.abs()))
}

/// Spectral quantities controlling the trace-approximation error.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SpectralReport {
    /// Spectral radius of the off-diagonal block system [[0, B*], [B*', 0]].
    pub spectral_radius: f64,
    /// Row/column-sum bound on the spectral radius for nonnegative B.
    pub sum_bound: f64,
    /// max_i W_i./(W_i. + 1/s2a) * max_j W_.j/(W_.j + 1/s2b); bounds lambda1.
    pub product_bound: f64,
    /// Largest eigenvalue of B* B*'; equals spectral_radius^2.
    pub lambda1: f64,
    pub delta: f64,
    /// Number of eigenvalues of B* B*' above delta.
    pub eig_count_above_delta: usize,
}

/// Computes the spectral radius two independent ways (block system and
/// B* B*' eigenvalues), the two analytic bounds, and the eigenvalue tail
/// count above `delta`.
pub fn spectral_checks(parts: &TraceParts, delta: f64) -> Result<SpectralReport> {
    let r = parts.a_diag.len();
    let c = parts.c_diag.len();
    check_guard(r + c, "spectral checks")?;
    let bs = parts.b_star();

    // route 1: eigendecomposition of the full off-diagonal block system
    let mut block = DMatrix::zeros(r + c, r + c);
    for i in 0..r {
        for j in 0..c {
            block[(i, r + j)] = bs[(i, j)];
            block[(r + j, i)] = bs[(i, j)];
        }
    }
    let spectral_radius = block
        .symmetric_eigen()
        .eigenvalues
        .iter()
        .fold(0.0f64, |acc, &v| acc.max(v.abs()));

    // route 2: eigenvalues of B* B*'
    let m_a = &bs * bs.transpose();
    let eigs = ((&m_a + m_a.transpose()) * 0.5).symmetric_eigen().eigenvalues;
    let lambda1 = eigs.iter().fold(0.0f64, |acc, &v| acc.max(v));
    let eig_count_above_delta = eigs.iter().filter(|&&v| v > delta).count();

    // row/column-sum bound (B is entrywise nonnegative here)
    let mut max_row = 0.0f64;
    for i in 0..r {
        let s: f64 = (0..c).map(|j| parts.b[(i, j)] / parts.c_diag[j]).sum();
        max_row = max_row.max(s);
    }
    let mut max_col = 0.0f64;
    for j in 0..c {
        let s: f64 = (0..r).map(|i| parts.b[(i, j)] / parts.a_diag[i]).sum();
        max_col = max_col.max(s);
    }
    let sum_bound = max_row.sqrt() * max_col.sqrt();

    let product_bound = parts
        .a_diag
        .iter()
        .map(|&ai| (ai - parts.inv_sigma2_a) / ai)
        .fold(0.0f64, f64::max)
        * parts
            .c_diag
            .iter()
            .map(|&cj| (cj - parts.inv_sigma2_b) / cj)
            .fold(0.0f64, f64::max);

    Ok(SpectralReport {
        spectral_radius,
        sum_bound,
        product_bound,
        lambda1,
        delta,
        eig_count_above_delta,
    })
}

/// Everything the verification command reports for one design.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct OracleReport {
    pub n_rows: usize,
    pub n_cols: usize,
    pub n_obs: usize,
    pub sigma2_a: f64,
    pub sigma2_b: f64,
    #[serde(flatten)]
    pub traces: TraceReport,
    #[serde(flatten)]
    pub spectral: SpectralReport,
}

pub fn oracle_report(
    design: &CrossedDesign,
    weights: &FactorWeights,
    sigma2_a: f64,
    sigma2_b: f64,
    delta: f64,
) -> Result<OracleReport> {
    let parts = TraceParts::from_design(design, weights, sigma2_a, sigma2_b)?;
    Ok(OracleReport {
        n_rows: design.n_rows(),
        n_cols: design.n_cols(),
        n_obs: design.n_obs(),
        sigma2_a,
        sigma2_b,
        traces: exact_traces(&parts)?,
        spectral: spectral_checks(&parts, delta)?,
    })
}
