//! Graphical lasso: sparse precision matrices by block coordinate descent,
//! with partial correlations read off the precision matrix and a
//! regression-residual route for cross-checking them.
//!
//! The penalty covers off-diagonal entries only, so every solution satisfies
//! `inverse(theta)_ii = S_ii` and the stationarity conditions
//!
//! ```text
//! |inverse(theta)_ij - S_ij| <= lambda                      (theta_ij == 0)
//!  inverse(theta)_ij - S_ij  == lambda * sign(theta_ij)     (theta_ij != 0)
//! ```

use nalgebra::{DMatrix, DVector};
use serde::Serialize;
use thiserror::Error;

use crate::linalg::{self, drop_index};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GlassoError {
    #[error("shape error: {0}")]
    Shape(String),
    #[error("covariance matrix is singular (reciprocal condition {rcond:.3e}); use a positive lambda")]
    Singular { rcond: f64 },
    #[error("graphical lasso did not converge after {sweeps} sweeps (KKT residual {kkt_residual:.3e}, last change {last_change:.3e})")]
    Convergence {
        sweeps: usize,
        kkt_residual: f64,
        last_change: f64,
    },
    #[error("precision matrix is not positive definite: {0}")]
    Definiteness(String),
    #[error("regressors are rank deficient: {0}")]
    RankDeficient(String),
    #[error("need at least {needed} observations, got {got}")]
    SampleTooSmall { needed: usize, got: usize },
}

/// Symmetric empirical covariance with a positive diagonal.
#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(into = "DenseMatrix")]
pub struct CovarianceMatrix(DMatrix<f64>);

impl CovarianceMatrix {
    pub fn new(entries: DMatrix<f64>) -> Result<Self, GlassoError> {
        if !entries.is_square() || entries.nrows() == 0 {
            return Err(GlassoError::Shape(format!(
                "covariance must be square and non-empty, got {}x{}",
                entries.nrows(),
                entries.ncols()
            )));
        }
        let scale = entries.diagonal().amax().max(1.0);
        if !linalg::is_symmetric(&entries, 1e-12 * scale) {
            return Err(GlassoError::Shape("covariance is not symmetric".into()));
        }
        if let Some(i) = (0..entries.nrows()).find(|&i| !(entries[(i, i)] > 0.0)) {
            return Err(GlassoError::Shape(format!(
                "covariance diagonal entry {i} is not positive"
            )));
        }
        Ok(CovarianceMatrix(entries))
    }

    pub fn dim(&self) -> usize {
        self.0.nrows()
    }

    pub fn entries(&self) -> &DMatrix<f64> {
        &self.0
    }

    /// Leading `k x k` block.
    pub fn leading(&self, k: usize) -> CovarianceMatrix {
        CovarianceMatrix(self.0.view((0, 0), (k, k)).into_owned())
    }
}

/// `X_c^T X_c / (T - 1)` with `X_c` column-centered.
///
/// Each entry is accumulated from its own two columns in row order, so the
/// leading block of a wider matrix is bit-identical to the covariance of the
/// leading columns alone.
pub fn empirical_covariance(x: &DMatrix<f64>) -> Result<CovarianceMatrix, GlassoError> {
    let (t, n) = x.shape();
    if t < 2 {
        return Err(GlassoError::SampleTooSmall { needed: 2, got: t });
    }
    let centered: Vec<Vec<f64>> = x
        .column_iter()
        .map(|col| {
            let mean = col.iter().sum::<f64>() / t as f64;
            col.iter().map(|v| v - mean).collect()
        })
        .collect();
    let mut s = DMatrix::zeros(n, n);
    for i in 0..n {
        for j in 0..=i {
            let dot: f64 = centered[i].iter().zip(&centered[j]).map(|(a, b)| a * b).sum();
            let v = dot / (t - 1) as f64;
            s[(i, j)] = v;
            s[(j, i)] = v;
        }
    }
    CovarianceMatrix::new(s)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GlassoOptions {
    /// Mean absolute change of the off-diagonal of W between sweeps.
    pub tol_outer: f64,
    /// Largest coefficient change in a lasso coordinate sweep.
    pub tol_inner: f64,
    pub max_iter: usize,
    pub max_inner_iter: usize,
    /// Off-diagonal slack of the KKT certificate.
    pub kkt_slack: f64,
    /// Diagonal tolerance of the KKT certificate.
    pub kkt_diag_tol: f64,
    /// Record the penalized log-likelihood after every sweep.
    pub trace: bool,
}

impl Default for GlassoOptions {
    fn default() -> Self {
        GlassoOptions {
            tol_outer: 1e-5,
            tol_inner: 1e-7,
            max_iter: 1000,
            max_inner_iter: 10_000,
            kkt_slack: 1e-4,
            kkt_diag_tol: 1e-6,
            trace: false,
        }
    }
}

/// Symmetric positive definite estimate of the inverse covariance.
/// Entries zeroed by the lasso are stored as exactly `0.0`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PrecisionMatrix {
    #[serde(flatten)]
    entries: DenseMatrix,
    lambda: f64,
    penalize_diagonal: bool,
    sweeps: usize,
    #[serde(skip_serializing_if = "Vec::is_empty")]
    objective_trace: Vec<f64>,
}

impl PrecisionMatrix {
    /// Wraps a user-supplied precision matrix (no solver metadata).
    pub fn from_entries(entries: DMatrix<f64>, lambda: f64) -> Result<Self, GlassoError> {
        if !entries.is_square() {
            return Err(GlassoError::Shape("precision matrix must be square".into()));
        }
        if !linalg::is_symmetric(&entries, 1e-12 * entries.amax().max(1.0)) {
            return Err(GlassoError::Shape("precision matrix is not symmetric".into()));
        }
        Ok(PrecisionMatrix {
            entries: entries.into(),
            lambda,
            penalize_diagonal: false,
            sweeps: 0,
            objective_trace: Vec::new(),
        })
    }

    pub fn dim(&self) -> usize {
        self.entries.dim
    }

    pub fn matrix(&self) -> DMatrix<f64> {
        self.entries.to_matrix()
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.entries.entries[i * self.entries.dim + j]
    }

    pub fn lambda(&self) -> f64 {
        self.lambda
    }

    pub fn sweeps(&self) -> usize {
        self.sweeps
    }

    /// Penalized log-likelihood after each outer sweep (empty unless tracing).
    pub fn objective_trace(&self) -> &[f64] {
        &self.objective_trace
    }

    pub fn nonzero_off_diagonal(&self) -> usize {
        let p = self.dim();
        (0..p)
            .flat_map(|i| (0..p).map(move |j| (i, j)))
            .filter(|&(i, j)| i < j && self.get(i, j) != 0.0)
            .count()
    }
}

/// Row-major dense matrix used for JSON output: `{dim, entries}`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DenseMatrix {
    pub dim: usize,
    pub entries: Vec<f64>,
}

impl DenseMatrix {
    pub fn to_matrix(&self) -> DMatrix<f64> {
        DMatrix::from_row_slice(self.dim, self.dim, &self.entries)
    }
}

impl From<DMatrix<f64>> for DenseMatrix {
    fn from(m: DMatrix<f64>) -> Self {
        DenseMatrix {
            dim: m.nrows(),
            entries: m.transpose().as_slice().to_vec(),
        }
    }
}

impl From<CovarianceMatrix> for DenseMatrix {
    fn from(c: CovarianceMatrix) -> Self {
        c.0.into()
    }
}

fn soft_threshold(x: f64, t: f64) -> f64 {
    if x > t {
        x - t
    } else if x < -t {
        x + t
    } else {
        0.0
    }
}

/// Penalized Gaussian log-likelihood `log det theta - tr(S theta) - lambda * sum_{i != j} |theta_ij|`.
/// Returns `-inf` when `theta` is not positive definite.
pub fn glasso_objective(s: &DMatrix<f64>, theta: &DMatrix<f64>, lambda: f64) -> f64 {
    let Some(chol) = theta.clone().cholesky() else {
        return f64::NEG_INFINITY;
    };
    let log_det = 2.0 * chol.l().diagonal().iter().map(|d| d.ln()).sum::<f64>();
    let trace = s.component_mul(theta).sum();
    let p = theta.nrows();
    let l1: f64 = (0..p)
        .flat_map(|i| (0..p).map(move |j| (i, j)))
        .filter(|(i, j)| i != j)
        .map(|(i, j)| theta[(i, j)].abs())
        .sum();
    log_det - trace - lambda * l1
}

/// Stationarity residuals of a candidate solution.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct KktReport {
    /// Largest `|W_ij - S_ij| - lambda` over off-diagonal pairs (<= 0 is ideal).
    pub max_excess: f64,
    /// Largest `||W_ij - S_ij| - lambda|` over the support of theta.
    pub max_active_gap: f64,
    /// Support entries where `W_ij - S_ij` has the opposite sign of `theta_ij`.
    pub sign_violations: usize,
    /// Largest `|W_ii - S_ii|`.
    pub max_diag_gap: f64,
}

impl KktReport {
    pub fn holds(&self, slack: f64, diag_tol: f64) -> bool {
        self.max_excess <= slack
            && self.max_active_gap <= slack
            && self.sign_violations == 0
            && self.max_diag_gap <= diag_tol
    }

    /// Single scalar summary used in convergence diagnostics.
    pub fn residual(&self) -> f64 {
        self.max_excess.max(0.0).max(self.max_active_gap).max(self.max_diag_gap)
    }
}

/// Checks the certificate using `W = inverse(theta)`.
pub fn kkt_report(s: &DMatrix<f64>, theta: &DMatrix<f64>, lambda: f64) -> Result<KktReport, GlassoError> {
    let w = theta
        .clone()
        .cholesky()
        .ok_or_else(|| GlassoError::Definiteness("cholesky factorization failed".into()))?
        .inverse();
    let p = s.nrows();
    let mut report = KktReport {
        max_excess: f64::NEG_INFINITY,
        max_active_gap: 0.0,
        sign_violations: 0,
        max_diag_gap: 0.0,
    };
    for i in 0..p {
        report.max_diag_gap = report.max_diag_gap.max((w[(i, i)] - s[(i, i)]).abs());
        for j in 0..p {
            if i == j {
                continue;
            }
            let g = w[(i, j)] - s[(i, j)];
            report.max_excess = report.max_excess.max(g.abs() - lambda);
            let t = theta[(i, j)];
            if t != 0.0 {
                report.max_active_gap = report.max_active_gap.max((g.abs() - lambda).abs());
                if lambda > 0.0 && g.signum() != t.signum() {
                    report.sign_violations += 1;
                }
            }
        }
    }
    if p == 1 {
        report.max_excess = 0.0;
    }
    Ok(report)
}

pub fn graphical_lasso(s: &CovarianceMatrix, lambda: f64) -> Result<PrecisionMatrix, GlassoError> {
    graphical_lasso_with(s, lambda, &GlassoOptions::default())
}

/// Block coordinate descent of Friedman, Hastie and Tibshirani on the
/// working covariance `W`, one lasso subproblem per column.
///
/// Stops once the mean absolute off-diagonal change of `W` falls below
/// `tol_outer` and the recovered precision matrix passes the KKT certificate.
pub fn graphical_lasso_with(
    s: &CovarianceMatrix,
    lambda: f64,
    opts: &GlassoOptions,
) -> Result<PrecisionMatrix, GlassoError> {
    if !(lambda >= 0.0) || !lambda.is_finite() {
        return Err(GlassoError::Shape(format!(
            "lambda must be finite and non-negative, got {lambda}"
        )));
    }
    let s = s.entries();
    let p = s.nrows();
    let finish = |theta: DMatrix<f64>, sweeps: usize, trace: Vec<f64>| PrecisionMatrix {
        entries: theta.into(),
        lambda,
        penalize_diagonal: false,
        sweeps,
        objective_trace: trace,
    };
    if p == 1 {
        return Ok(finish(DMatrix::from_element(1, 1, 1.0 / s[(0, 0)]), 0, Vec::new()));
    }
    if lambda == 0.0 {
        let rcond = linalg::reciprocal_condition(s);
        if !(rcond > 1e-12) {
            return Err(GlassoError::Singular { rcond });
        }
        // The unpenalized optimum is the inverse itself; block descent only
        // approaches it slowly on ill-conditioned input.
        let theta = s.clone().cholesky().ok_or(GlassoError::Singular { rcond })?.inverse();
        let theta = (&theta + theta.transpose()) * 0.5;
        let report = kkt_report(s, &theta, 0.0)?;
        if !report.holds(opts.kkt_slack, opts.kkt_diag_tol) {
            return Err(GlassoError::Singular { rcond });
        }
        let trace = if opts.trace {
            vec![glasso_objective(s, &theta, 0.0)]
        } else {
            Vec::new()
        };
        return Ok(finish(theta, 0, trace));
    }

    let mut w = s.clone();
    if lambda > 0.0 {
        for i in 0..p {
            for j in 0..p {
                if i != j {
                    w[(i, j)] *= 0.95;
                }
            }
        }
    }
    // Column j holds the lasso coefficients of variable j on the others.
    let mut betas = DMatrix::<f64>::zeros(p - 1, p);
    let mut trace = Vec::new();
    let mut last_change = f64::INFINITY;
    let mut last_kkt = f64::INFINITY;
    #[cfg(debug_assertions)]
    let mut last_dual = f64::NEG_INFINITY;

    for sweep in 1..=opts.max_iter {
        let w_old = w.clone();
        for j in 0..p {
            let w11 = drop_index(&w, j);
            let s12 = DVector::from_iterator(p - 1, (0..p).filter(|&i| i != j).map(|i| s[(i, j)]));
            let mut beta = betas.column(j).into_owned();
            lasso_cd(&w11, &s12, lambda, &mut beta, opts);
            let w12 = &w11 * &beta;
            for (k, i) in (0..p).filter(|&i| i != j).enumerate() {
                w[(i, j)] = w12[k];
                w[(j, i)] = w12[k];
            }
            betas.set_column(j, &beta);
        }

        let mut change = 0.0;
        for i in 0..p {
            for j in 0..p {
                if i != j {
                    change += (w[(i, j)] - w_old[(i, j)]).abs();
                }
            }
        }
        last_change = change / (p * (p - 1)) as f64;

        #[cfg(debug_assertions)]
        {
            // The sweep is block coordinate ascent on log det W over the
            // feasible box, so this must not decrease once every block has
            // been visited (up to the inexact inner solves). At lambda = 0 the
            // box is the single point S and iterates only reach it as far as
            // the inner solves allow, so there is nothing to check.
            if let Some(chol) = w.clone().cholesky().filter(|_| lambda > 0.0) {
                let dual = 2.0 * chol.l().diagonal().iter().map(|d| d.ln()).sum::<f64>();
                if sweep > 1 {
                    debug_assert!(
                        dual >= last_dual - 1e-6 * (1.0 + last_dual.abs()),
                        "dual objective decreased: {last_dual} -> {dual}"
                    );
                }
                last_dual = dual;
            }
        }

        let theta = precision_from_betas(&w, &betas);
        if opts.trace {
            trace.push(glasso_objective(s, &theta, lambda));
        }
        if last_change < opts.tol_outer {
            match kkt_report(s, &theta, lambda) {
                Ok(report) if report.holds(opts.kkt_slack, opts.kkt_diag_tol) => {
                    return Ok(finish(theta, sweep, trace));
                }
                Ok(report) => last_kkt = report.residual(),
                Err(_) => last_kkt = f64::INFINITY,
            }
        }
    }
    Err(GlassoError::Convergence {
        sweeps: opts.max_iter,
        kkt_residual: last_kkt,
        last_change,
    })
}

/// Cyclic coordinate descent for `min_b 1/2 b^T W b - b^T s + lambda |b|_1`.
fn lasso_cd(w11: &DMatrix<f64>, s12: &DVector<f64>, lambda: f64, beta: &mut DVector<f64>, opts: &GlassoOptions) {
    let m = beta.len();
    for _ in 0..opts.max_inner_iter {
        let mut max_delta: f64 = 0.0;
        for k in 0..m {
            let mut r = s12[k];
            for l in 0..m {
                if l != k {
                    r -= w11[(k, l)] * beta[l];
                }
            }
            let new = soft_threshold(r, lambda) / w11[(k, k)];
            max_delta = max_delta.max((new - beta[k]).abs());
            beta[k] = new;
        }
        if max_delta < opts.tol_inner {
            break;
        }
    }
}

/// Recovers theta column by column from `W` and the lasso coefficients.
/// A pair is zero when either of its two column solutions is exactly zero;
/// otherwise the two estimates are averaged.
fn precision_from_betas(w: &DMatrix<f64>, betas: &DMatrix<f64>) -> DMatrix<f64> {
    let p = w.nrows();
    let mut cols = DMatrix::zeros(p, p);
    for j in 0..p {
        let others: Vec<usize> = (0..p).filter(|&i| i != j).collect();
        let beta = betas.column(j);
        let w12 = DVector::from_iterator(p - 1, others.iter().map(|&i| w[(i, j)]));
        let theta_jj = 1.0 / (w[(j, j)] - w12.dot(&beta));
        cols[(j, j)] = theta_jj;
        for (k, &i) in others.iter().enumerate() {
            cols[(i, j)] = if beta[k] == 0.0 { 0.0 } else { -beta[k] * theta_jj };
        }
    }
    let mut theta = cols.clone();
    for i in 0..p {
        for j in 0..i {
            let (a, b) = (cols[(i, j)], cols[(j, i)]);
            let v = if a == 0.0 || b == 0.0 { 0.0 } else { 0.5 * (a + b) };
            theta[(i, j)] = v;
            theta[(j, i)] = v;
        }
    }
    theta
}

/// Unit-diagonal matrix of partial correlations.
#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(into = "DenseMatrix")]
pub struct PartialCorrelationMatrix(DMatrix<f64>);

impl PartialCorrelationMatrix {
    pub fn dim(&self) -> usize {
        self.0.nrows()
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.0[(i, j)]
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.0
    }
}

impl From<PartialCorrelationMatrix> for DenseMatrix {
    fn from(c: PartialCorrelationMatrix) -> Self {
        c.0.into()
    }
}

/// `C_ij = -theta_ij / sqrt(theta_ii theta_jj)`, unit diagonal, exact zeros kept.
pub fn partial_correlations(theta: &PrecisionMatrix) -> Result<PartialCorrelationMatrix, GlassoError> {
    let p = theta.dim();
    if let Some(i) = (0..p).find(|&i| !(theta.get(i, i) > 0.0)) {
        return Err(GlassoError::Definiteness(format!(
            "diagonal entry {i} is {}",
            theta.get(i, i)
        )));
    }
    let c = DMatrix::from_fn(p, p, |i, j| {
        if i == j {
            1.0
        } else {
            let t = theta.get(i, j);
            if t == 0.0 {
                0.0
            } else {
                (-t / (theta.get(i, i) * theta.get(j, j)).sqrt()).clamp(-1.0, 1.0)
            }
        }
    });
    Ok(PartialCorrelationMatrix(c))
}

/// Partial correlation of columns `i` and `j` given all other columns:
/// both are regressed (with intercept) on the rest and the residuals are
/// correlated.
pub fn partial_correlation_via_regression(x: &DMatrix<f64>, i: usize, j: usize) -> Result<f64, GlassoError> {
    let (t, n) = x.shape();
    if i >= n || j >= n {
        return Err(GlassoError::Shape(format!("column index out of range for {n} columns")));
    }
    if t <= n {
        return Err(GlassoError::SampleTooSmall { needed: n + 1, got: t });
    }
    if i == j {
        return Ok(1.0);
    }
    let others: Vec<usize> = (0..n).filter(|&k| k != i && k != j).collect();
    let mut z = DMatrix::from_element(t, others.len() + 1, 1.0);
    for (c, &k) in others.iter().enumerate() {
        z.set_column(c + 1, &x.column(k));
    }
    let residual = |col: usize| -> Result<DVector<f64>, GlassoError> {
        let y = x.column(col).into_owned();
        let beta = linalg::least_squares(&z, &y).map_err(|c| {
            GlassoError::RankDeficient(if c == 0 {
                "intercept".into()
            } else {
                format!("conditioning column {}", others[c - 1])
            })
        })?;
        Ok(y - &z * beta)
    };
    let (ei, ej) = (residual(i)?, residual(j)?);
    Ok(linalg::pearson(&ei, &ej))
}
