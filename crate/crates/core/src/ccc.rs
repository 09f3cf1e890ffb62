//! Continuum canonical correlation between the forecast and response blocks.
//!
//! For unit weight vectors `w`, `v` the summaries `F w` and `R v` are scored by
//! `cov^2 * (var_F * var_R)^(alpha/(1-alpha) - 1)`. At `alpha = 0` this is the
//! squared correlation (CCA), at `0.5` the squared covariance (PLS), and as
//! `alpha -> 1` the variances dominate (PCA of each block).
//!
//! The objective is maximized by projected gradient ascent on the product of
//! the two unit spheres, started from the three closed-form special cases and
//! one seeded random direction.

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use rand_distr::StandardNormal;
use serde::Serialize;
use thiserror::Error;

use crate::linalg::{normalized, reciprocal_condition};
use crate::panel::DialoguePanel;
use crate::preprocess::{standardize_columns, PreprocessError};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum CccError {
    #[error("alpha must lie in [0, 1], got {0}")]
    Alpha(f64),
    #[error("alpha = 1 has no finite objective; use the principal component route")]
    AlphaOne,
    #[error("{0}")]
    Shape(String),
    #[error("degenerate input: {0}")]
    Degenerate(String),
    #[error("degenerate direction: summary variance is zero")]
    DegenerateDirection,
    #[error("{block} block covariance is singular (rcond {rcond:.3e}); with T={t} and {vars} variables canonical correlations overfit, aim for at least 10 observations per variable")]
    Rank {
        block: &'static str,
        rcond: f64,
        t: usize,
        vars: usize,
    },
    #[error("power iteration did not converge in {0} iterations")]
    Convergence(usize),
    #[error(transparent)]
    Preprocess(#[from] PreprocessError),
}

pub const POWER_TOL: f64 = 1e-12;
pub const POWER_MAX_ITER: usize = 10_000;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CccOptions {
    /// Stop when the log-objective gains less than this in one step.
    pub tol: f64,
    pub max_iter: usize,
    /// Seed of the random start.
    pub seed: u64,
}

impl Default for CccOptions {
    fn default() -> Self {
        CccOptions {
            tol: 1e-10,
            max_iter: 5000,
            seed: 1,
        }
    }
}

/// Block covariances with denominator T-1.
struct Moments {
    a: DMatrix<f64>,
    b: DMatrix<f64>,
    c: DMatrix<f64>,
}

impl Moments {
    fn new(f: &DMatrix<f64>, r: &DMatrix<f64>) -> Self {
        let d = (f.nrows() as f64 - 1.0).max(1.0);
        Moments {
            a: f.transpose() * f / d,
            b: r.transpose() * r / d,
            c: f.transpose() * r / d,
        }
    }

    fn parts(&self, w: &DVector<f64>, v: &DVector<f64>) -> (f64, f64, f64) {
        let cov = w.dot(&(&self.c * v));
        let var_f = w.dot(&(&self.a * w));
        let var_r = v.dot(&(&self.b * v));
        (cov, var_f, var_r)
    }
}

fn exponent(alpha: f64) -> f64 {
    alpha / (1.0 - alpha) - 1.0
}

fn objective_from(cov: f64, var_f: f64, var_r: f64, alpha: f64) -> Result<f64, CccError> {
    let e = exponent(alpha);
    if e == 0.0 {
        return Ok(cov * cov);
    }
    let prod = var_f * var_r;
    if prod <= 0.0 {
        if e < 0.0 {
            return Err(CccError::DegenerateDirection);
        }
        return Ok(0.0);
    }
    Ok(cov * cov * prod.powf(e))
}

fn check_blocks(f: &DMatrix<f64>, r: &DMatrix<f64>) -> Result<(), CccError> {
    if f.nrows() != r.nrows() {
        return Err(CccError::Shape(format!(
            "blocks have {} and {} rows",
            f.nrows(),
            r.nrows()
        )));
    }
    if f.ncols() == 0 || r.ncols() == 0 {
        return Err(CccError::Shape("blocks need at least one column".into()));
    }
    Ok(())
}

pub fn ccc_objective(
    f: &DMatrix<f64>,
    r: &DMatrix<f64>,
    w: &DVector<f64>,
    v: &DVector<f64>,
    alpha: f64,
) -> Result<f64, CccError> {
    check_blocks(f, r)?;
    if !(0.0..=1.0).contains(&alpha) {
        return Err(CccError::Alpha(alpha));
    }
    if alpha == 1.0 {
        return Err(CccError::AlphaOne);
    }
    if w.len() != f.ncols() || v.len() != r.ncols() {
        return Err(CccError::Shape("weight length does not match block width".into()));
    }
    let (cov, var_f, var_r) = Moments::new(f, r).parts(w, v);
    objective_from(cov, var_f, var_r, alpha)
}

/// Leading eigenpair of a symmetric positive semidefinite matrix by power
/// iteration from the normalized all-ones vector.
fn power_iteration(m: &DMatrix<f64>) -> Result<(DVector<f64>, f64), CccError> {
    let n = m.nrows();
    let mut x = DVector::from_element(n, 1.0 / (n as f64).sqrt());
    for _ in 0..POWER_MAX_ITER {
        let y = m * &x;
        let Some(next) = normalized(&y) else {
            return Err(CccError::Degenerate("matrix annihilates the start vector".into()));
        };
        let change = (&next - &x).norm();
        x = next;
        if change < POWER_TOL {
            let value = x.dot(&(m * &x));
            return Ok((x, value));
        }
    }
    Err(CccError::Convergence(POWER_MAX_ITER))
}

#[derive(Debug, Clone, PartialEq)]
pub struct CanonicalPair {
    pub w: DVector<f64>,
    pub v: DVector<f64>,
    pub rho: f64,
}

fn whitener(m: &DMatrix<f64>, block: &'static str, t: usize) -> Result<DMatrix<f64>, CccError> {
    let rcond = reciprocal_condition(m);
    let fail = || CccError::Rank {
        block,
        rcond,
        t,
        vars: m.nrows(),
    };
    if !(rcond > 1e-12) {
        return Err(fail());
    }
    Ok(m.clone().cholesky().ok_or_else(fail)?.l())
}

/// Leading canonical pair: whitening each block by its Cholesky factor turns
/// the generalized eigenproblem into an SVD of the whitened cross-covariance.
pub fn cca_oracle(f: &DMatrix<f64>, r: &DMatrix<f64>) -> Result<CanonicalPair, CccError> {
    check_blocks(f, r)?;
    let t = f.nrows();
    let mom = Moments::new(f, r);
    let la = whitener(&mom.a, "forecast", t)?;
    let lb = whitener(&mom.b, "response", t)?;
    // K = La^-1 C Lb^-T
    let left = la.solve_lower_triangular(&mom.c).expect("nonsingular factor");
    let k = lb
        .solve_lower_triangular(&left.transpose())
        .expect("nonsingular factor")
        .transpose();
    let svd = k.svd(true, true);
    let (idx, rho) = svd
        .singular_values
        .iter()
        .copied()
        .enumerate()
        .fold((0, f64::MIN), |best, (i, s)| if s > best.1 { (i, s) } else { best });
    let u = svd.u.expect("requested").column(idx).into_owned();
    let vt = svd.v_t.expect("requested").row(idx).transpose();
    let w = la.transpose().solve_upper_triangular(&u).expect("nonsingular factor");
    let v = lb.transpose().solve_upper_triangular(&vt).expect("nonsingular factor");
    let w = normalized(&w).ok_or_else(|| CccError::Degenerate("zero canonical weight".into()))?;
    let v = normalized(&v).ok_or_else(|| CccError::Degenerate("zero canonical weight".into()))?;
    Ok(CanonicalPair {
        w,
        v,
        rho: rho.clamp(0.0, 1.0),
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct PlsPair {
    pub w: DVector<f64>,
    pub v: DVector<f64>,
    pub cov: f64,
}

/// Leading singular triple of the cross-covariance.
pub fn pls_oracle(f: &DMatrix<f64>, r: &DMatrix<f64>) -> Result<PlsPair, CccError> {
    check_blocks(f, r)?;
    let c = Moments::new(f, r).c;
    let (v, _) = power_iteration(&(c.transpose() * &c))?;
    let w = normalized(&(&c * &v)).ok_or_else(|| CccError::Degenerate("cross-covariance is zero".into()))?;
    let cov = w.dot(&(&c * &v));
    Ok(PlsPair { w, v, cov })
}

/// Leading principal direction and its variance.
pub fn pca_oracle(x: &DMatrix<f64>) -> Result<(DVector<f64>, f64), CccError> {
    if x.ncols() == 0 || x.nrows() < 2 {
        return Err(CccError::Shape("need at least one column and two rows".into()));
    }
    let cov = x.transpose() * x / (x.nrows() as f64 - 1.0);
    power_iteration(&cov)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PeriodScore {
    pub label: String,
    pub f_score: f64,
    pub r_score: f64,
    /// Position of the period in time, scaled to [0, 1].
    pub rank: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CccSolution {
    pub alpha: f64,
    pub w: Vec<f64>,
    pub v: Vec<f64>,
    pub f_star: Vec<f64>,
    pub r_star: Vec<f64>,
    /// The continuum objective; at `alpha = 1` the product of the two
    /// summary variances.
    pub objective: f64,
    pub warn_overfit: bool,
    pub periods: Vec<PeriodScore>,
    /// Which start produced the solution.
    pub start: &'static str,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub preprocessing: Option<String>,
}

impl CccSolution {
    pub fn w_vector(&self) -> DVector<f64> {
        DVector::from_column_slice(&self.w)
    }

    pub fn v_vector(&self) -> DVector<f64> {
        DVector::from_column_slice(&self.v)
    }

    /// Replaces the default 1-based period labels.
    pub fn with_labels(mut self, labels: &[String]) -> Self {
        assert_eq!(labels.len(), self.periods.len(), "one label per period");
        for (p, l) in self.periods.iter_mut().zip(labels) {
            p.label = l.clone();
        }
        self
    }
}

/// Rule of thumb: fewer than ten observations per variable overfits.
pub fn overfits(t: usize, n: usize, m: usize) -> bool {
    t < 10 * (n + m)
}

fn largest_entry_positive(x: &mut DVector<f64>) {
    let idx = x.iamax();
    if x[idx] < 0.0 {
        x.neg_mut();
    }
}

/// `w` gets a positive largest-magnitude entry; `v` is then flipped so the
/// covariance of the summaries is non-negative (or, if it is zero, so its own
/// largest-magnitude entry is positive).
fn orient(w: &mut DVector<f64>, v: &mut DVector<f64>, c: &DMatrix<f64>) {
    largest_entry_positive(w);
    let cov = w.dot(&(c * &*v));
    if cov < 0.0 {
        v.neg_mut();
    } else if cov == 0.0 {
        largest_entry_positive(v);
    }
}

struct Ascent<'a> {
    mom: &'a Moments,
    alpha: f64,
    opts: &'a CccOptions,
}

impl Ascent<'_> {
    fn log_objective(&self, w: &DVector<f64>, v: &DVector<f64>) -> f64 {
        let (cov, a, b) = self.mom.parts(w, v);
        let e = exponent(self.alpha);
        if cov == 0.0 {
            return f64::NEG_INFINITY;
        }
        let mut l = 2.0 * cov.abs().ln();
        if e != 0.0 {
            if a <= 0.0 || b <= 0.0 {
                return f64::NEG_INFINITY;
            }
            l += e * (a.ln() + b.ln());
        }
        l
    }

    fn projected_gradient(&self, w: &DVector<f64>, v: &DVector<f64>) -> (DVector<f64>, DVector<f64>) {
        let (cov, a, b) = self.mom.parts(w, v);
        let e = exponent(self.alpha);
        let mut gw = &self.mom.c * v * (2.0 / cov);
        let mut gv = self.mom.c.tr_mul(w) * (2.0 / cov);
        if e != 0.0 {
            gw += &self.mom.a * w * (2.0 * e / a);
            gv += &self.mom.b * v * (2.0 * e / b);
        }
        let gw = &gw - w * gw.dot(w);
        let gv = &gv - v * gv.dot(v);
        (gw, gv)
    }

    /// Armijo-backtracked ascent on the log objective with renormalization
    /// onto the spheres after each step.
    fn run(&self, mut w: DVector<f64>, mut v: DVector<f64>) -> (DVector<f64>, DVector<f64>) {
        let mut lf = self.log_objective(&w, &v);
        if !lf.is_finite() {
            return (w, v);
        }
        let mut step: f64 = 1.0;
        for _ in 0..self.opts.max_iter {
            let (gw, gv) = self.projected_gradient(&w, &v);
            let g2 = gw.norm_squared() + gv.norm_squared();
            if !(g2.sqrt() > 1e-14) {
                break;
            }
            let mut t = (step * 2.0).min(1e6);
            let accepted = loop {
                let nw = normalized(&(&w + &gw * t));
                let nv = normalized(&(&v + &gv * t));
                if let (Some(nw), Some(nv)) = (nw, nv) {
                    let l = self.log_objective(&nw, &nv);
                    if l >= lf + 1e-4 * t * g2 {
                        break Some((nw, nv, l));
                    }
                }
                t *= 0.5;
                if t < 1e-20 {
                    break None;
                }
            };
            let Some((nw, nv, l)) = accepted else { break };
            let gain = l - lf;
            w = nw;
            v = nv;
            lf = l;
            step = t;
            if gain < self.opts.tol {
                break;
            }
        }
        (w, v)
    }
}

fn random_unit(rng: &mut ChaCha20Rng, n: usize) -> DVector<f64> {
    loop {
        let x = DVector::from_fn(n, |_, _| rng.sample::<f64, _>(StandardNormal));
        if let Some(u) = normalized(&x) {
            return u;
        }
    }
}

fn check_variances(f: &DMatrix<f64>, r: &DMatrix<f64>) -> Result<(), CccError> {
    for (name, block) in [("forecast", f), ("response", r)] {
        for (j, col) in block.column_iter().enumerate() {
            let mean = col.mean();
            if col.iter().all(|x| (x - mean).abs() <= 1e-300) {
                return Err(CccError::Degenerate(format!("{name} column {j} has zero variance")));
            }
        }
    }
    Ok(())
}

fn build_solution(
    f: &DMatrix<f64>,
    r: &DMatrix<f64>,
    alpha: f64,
    mut w: DVector<f64>,
    mut v: DVector<f64>,
    mom: &Moments,
    start: &'static str,
) -> Result<CccSolution, CccError> {
    orient(&mut w, &mut v, &mom.c);
    let (cov, var_f, var_r) = mom.parts(&w, &v);
    let objective = if alpha == 1.0 {
        var_f * var_r
    } else {
        objective_from(cov, var_f, var_r, alpha)?
    };
    let f_star = f * &w;
    let r_star = r * &v;
    let t = f.nrows();
    let periods = (0..t)
        .map(|i| PeriodScore {
            label: (i + 1).to_string(),
            f_score: f_star[i],
            r_score: r_star[i],
            rank: if t > 1 { i as f64 / (t - 1) as f64 } else { 0.0 },
        })
        .collect();
    Ok(CccSolution {
        alpha,
        w: w.as_slice().to_vec(),
        v: v.as_slice().to_vec(),
        f_star: f_star.as_slice().to_vec(),
        r_star: r_star.as_slice().to_vec(),
        objective,
        warn_overfit: overfits(t, f.ncols(), r.ncols()),
        periods,
        start,
        preprocessing: None,
    })
}

pub fn ccc_solve(f: &DMatrix<f64>, r: &DMatrix<f64>, alpha: f64) -> Result<CccSolution, CccError> {
    ccc_solve_with(f, r, alpha, &CccOptions::default(), None)
}

/// Maximizes the continuum objective. `warm` adds an extra start (used by
/// sweeps). Starts are tried in a fixed order and the first best wins, so the
/// result is deterministic.
pub fn ccc_solve_with(
    f: &DMatrix<f64>,
    r: &DMatrix<f64>,
    alpha: f64,
    opts: &CccOptions,
    warm: Option<(&DVector<f64>, &DVector<f64>)>,
) -> Result<CccSolution, CccError> {
    check_blocks(f, r)?;
    if !(0.0..=1.0).contains(&alpha) {
        return Err(CccError::Alpha(alpha));
    }
    if f.nrows() < 3 {
        return Err(CccError::Shape(format!("need at least 3 periods, got {}", f.nrows())));
    }
    check_variances(f, r)?;
    let mom = Moments::new(f, r);
    if alpha == 1.0 {
        let (w, _) = pca_oracle(f)?;
        let (v, _) = pca_oracle(r)?;
        return build_solution(f, r, alpha, w, v, &mom, "pca");
    }

    let mut starts: Vec<(&'static str, DVector<f64>, DVector<f64>)> = Vec::new();
    if let Ok(p) = cca_oracle(f, r) {
        starts.push(("cca", p.w, p.v));
    }
    if let Ok(p) = pls_oracle(f, r) {
        starts.push(("pls", p.w, p.v));
    }
    if let (Ok((w, _)), Ok((v, _))) = (pca_oracle(f), pca_oracle(r)) {
        starts.push(("pca", w, v));
    }
    let mut rng = ChaCha20Rng::seed_from_u64(opts.seed);
    starts.push((
        "random",
        random_unit(&mut rng, f.ncols()),
        random_unit(&mut rng, r.ncols()),
    ));
    if let Some((w, v)) = warm {
        if let (Some(w), Some(v)) = (normalized(w), normalized(v)) {
            if w.len() == f.ncols() && v.len() == r.ncols() {
                starts.push(("warm", w, v));
            }
        }
    }

    let ascent = Ascent { mom: &mom, alpha, opts };
    let mut best: Option<(f64, &'static str, DVector<f64>, DVector<f64>)> = None;
    for (name, w0, v0) in starts {
        // Starts are already optimal at their own special case; polishing
        // them cannot lower the objective.
        let (w, v) = ascent.run(w0, v0);
        let (cov, a, b) = mom.parts(&w, &v);
        let Ok(value) = objective_from(cov, a, b, alpha) else {
            continue;
        };
        if best.as_ref().is_none_or(|(bv, ..)| value > *bv) {
            best = Some((value, name, w, v));
        }
    }
    let (_, name, w, v) = best.ok_or(CccError::DegenerateDirection)?;
    build_solution(f, r, alpha, w, v, &mom, name)
}

/// Solves along a grid of alphas, warm-starting each point from the previous
/// solution. Failures are reported per point and do not stop the sweep.
pub fn alpha_sweep(
    f: &DMatrix<f64>,
    r: &DMatrix<f64>,
    grid: &[f64],
    opts: &CccOptions,
) -> Vec<Result<CccSolution, CccError>> {
    let mut prev: Option<(DVector<f64>, DVector<f64>)> = None;
    grid.iter()
        .map(|&alpha| {
            let warm = prev.as_ref().map(|(w, v)| (w, v));
            let out = ccc_solve_with(f, r, alpha, opts, warm);
            if let Ok(s) = &out {
                prev = Some((s.w_vector(), s.v_vector()));
            }
            out
        })
        .collect()
}

/// Evenly spaced grid over [0, 1] with `points` entries.
pub fn alpha_grid(points: usize) -> Vec<f64> {
    match points {
        0 => Vec::new(),
        1 => vec![0.0],
        _ => (0..points).map(|i| i as f64 / (points - 1) as f64).collect(),
    }
}

/// Standardizes the forecast and response blocks of a panel and solves.
pub fn ccc_panel(panel: &DialoguePanel, alpha: f64, opts: &CccOptions) -> Result<CccSolution, CccError> {
    let (f, _) = standardize_columns(panel.forecasts(), None)?;
    let (r, _) = standardize_columns(panel.responses(), None)?;
    Ok(ccc_solve_with(&f, &r, alpha, opts, None)?.with_labels(panel.period_labels()))
}
