//! Small dense helpers shared by the solvers.

use nalgebra::{DMatrix, DVector};

/// Relative pivot threshold below which a design matrix is treated as rank
/// deficient.
pub const RANK_TOL: f64 = 1e-10;

/// Least-squares solution of `a x = b` through a QR factorization.
///
/// Returns `Err(j)` with the first column index whose pivot is negligible
/// relative to the largest one.
pub fn least_squares(a: &DMatrix<f64>, b: &DVector<f64>) -> Result<DVector<f64>, usize> {
    let p = a.ncols();
    if p == 0 {
        return Ok(DVector::zeros(0));
    }
    if a.nrows() < p {
        return Err(a.nrows());
    }
    let qr = a.clone().qr();
    let r = qr.r();
    let scale = (0..p).map(|j| r[(j, j)].abs()).fold(0.0, f64::max);
    if let Some(j) = (0..p).find(|&j| !(r[(j, j)].abs() > RANK_TOL * scale.max(f64::MIN_POSITIVE))) {
        return Err(j);
    }
    let qtb = qr.q().transpose() * b;
    let x = r.solve_upper_triangular(&qtb).expect("non-zero pivots checked above");
    Ok(x)
}

/// Pearson correlation of two equally long vectors.
pub fn pearson(x: &DVector<f64>, y: &DVector<f64>) -> f64 {
    let n = x.len() as f64;
    let mx = x.sum() / n;
    let my = y.sum() / n;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (a, b) in x.iter().zip(y.iter()) {
        let (da, db) = (a - mx, b - my);
        sxy += da * db;
        sxx += da * da;
        syy += db * db;
    }
    (sxy / (sxx * syy).sqrt()).clamp(-1.0, 1.0)
}

/// Removes row and column `j` from a square matrix.
pub fn drop_index(m: &DMatrix<f64>, j: usize) -> DMatrix<f64> {
    m.clone().remove_row(j).remove_column(j)
}

pub fn max_abs_diff(a: &DMatrix<f64>, b: &DMatrix<f64>) -> f64 {
    a.iter().zip(b.iter()).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

pub fn is_symmetric(m: &DMatrix<f64>, tol: f64) -> bool {
    m.is_square() && (0..m.nrows()).all(|i| (0..i).all(|j| (m[(i, j)] - m[(j, i)]).abs() <= tol))
}

/// Ratio of the smallest to the largest eigenvalue of a symmetric matrix;
/// zero or negative when the matrix is singular or indefinite.
pub fn reciprocal_condition(m: &DMatrix<f64>) -> f64 {
    let eig = m.clone().symmetric_eigen();
    let max = eig.eigenvalues.iter().copied().fold(f64::MIN, f64::max);
    let min = eig.eigenvalues.iter().copied().fold(f64::MAX, f64::min);
    if max <= 0.0 {
        0.0
    } else {
        min / max
    }
}

/// Unit vector in the direction of `v`; `None` for a zero vector.
pub fn normalized(v: &DVector<f64>) -> Option<DVector<f64>> {
    let norm = v.norm();
    (norm > 0.0 && norm.is_finite()).then(|| v / norm)
}
