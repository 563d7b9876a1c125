//! Dense helpers shared by the analysis modules: spectra, norms, polynomial
//! arithmetic and a small non-negative least-squares solver.

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use num_complex::Complex64;

/// Eigenvalues of a real square matrix, sorted by real part descending and
/// then by imaginary part descending.
pub(crate) fn sorted_eigenvalues(a: &DMatrix<f64>) -> Vec<Complex64> {
    if a.nrows() == 0 {
        return Vec::new();
    }
    let mut eigs: Vec<Complex64> = a.complex_eigenvalues().iter().copied().collect();
    eigs.sort_by(|x, y| {
        y.re.partial_cmp(&x.re)
            .unwrap_or(std::cmp::Ordering::Equal)
            .then(y.im.partial_cmp(&x.im).unwrap_or(std::cmp::Ordering::Equal))
    });
    eigs
}

/// Largest real part over the spectrum.
pub(crate) fn spectral_abscissa(a: &DMatrix<f64>) -> f64 {
    sorted_eigenvalues(a)
        .first()
        .map(|l| l.re)
        .unwrap_or(f64::NEG_INFINITY)
}

pub(crate) fn symmetrize(m: &DMatrix<f64>) -> DMatrix<f64> {
    (m + m.transpose()) * 0.5
}

/// `(lambda_min, lambda_max)` of the symmetric part of `m`.
pub(crate) fn sym_eig_range(m: &DMatrix<f64>) -> (f64, f64) {
    let eig = SymmetricEigen::new(symmetrize(m));
    let min = eig
        .eigenvalues
        .iter()
        .copied()
        .fold(f64::INFINITY, f64::min);
    let max = eig
        .eigenvalues
        .iter()
        .copied()
        .fold(f64::NEG_INFINITY, f64::max);
    (min, max)
}

pub(crate) fn is_symmetric(m: &DMatrix<f64>, rel_tol: f64) -> bool {
    if !m.is_square() {
        return false;
    }
    let scale = m.amax().max(1.0);
    (m - m.transpose()).amax() <= rel_tol * scale
}

/// Spectral norm (largest singular value).
pub(crate) fn norm2(m: &DMatrix<f64>) -> f64 {
    if m.is_empty() {
        return 0.0;
    }
    m.singular_values().max()
}

pub(crate) fn all_finite(m: &DMatrix<f64>) -> bool {
    m.iter().all(|v| v.is_finite())
}

/// Row-major nested vectors, the layout used in scenario and report files.
pub fn to_rows(m: &DMatrix<f64>) -> Vec<Vec<f64>> {
    m.row_iter().map(|r| r.iter().copied().collect()).collect()
}

/// Inverse of [`to_rows`]; `None` for ragged input.
pub fn from_rows(rows: &[Vec<f64>]) -> Option<DMatrix<f64>> {
    let n = rows.len();
    let m = rows.first().map(|r| r.len()).unwrap_or(0);
    if rows.iter().any(|r| r.len() != m) {
        return None;
    }
    let flat: Vec<f64> = rows.iter().flat_map(|r| r.iter().copied()).collect();
    Some(DMatrix::from_row_slice(n, m, &flat))
}

pub(crate) fn serialize_rows<S: serde::Serializer>(
    m: &DMatrix<f64>,
    s: S,
) -> Result<S::Ok, S::Error> {
    serde::Serialize::serialize(&to_rows(m), s)
}

// ---------------------------------------------------------------------------
// Polynomials, coefficients in descending degree.
// ---------------------------------------------------------------------------

pub(crate) fn poly_eval(coeffs: &[f64], s: Complex64) -> Complex64 {
    coeffs
        .iter()
        .fold(Complex64::new(0.0, 0.0), |acc, &c| acc * s + c)
}

pub(crate) fn poly_derivative(coeffs: &[f64]) -> Vec<f64> {
    let deg = coeffs.len().saturating_sub(1);
    if deg == 0 {
        return vec![0.0];
    }
    coeffs[..deg]
        .iter()
        .enumerate()
        .map(|(k, &c)| c * (deg - k) as f64)
        .collect()
}

/// Drops leading coefficients whose magnitude is below `rel_tol * scale`.
/// The zero polynomial is returned as `[0.0]`.
pub(crate) fn poly_trim(coeffs: &[f64], rel_tol: f64, scale: f64) -> Vec<f64> {
    let thresh = rel_tol * scale.max(f64::MIN_POSITIVE);
    match coeffs.iter().position(|c| c.abs() > thresh) {
        Some(i) => coeffs[i..].to_vec(),
        None => vec![0.0],
    }
}

/// Roots through the eigenvalues of the companion matrix.
pub(crate) fn poly_roots(coeffs: &[f64]) -> Vec<Complex64> {
    let deg = coeffs.len().saturating_sub(1);
    if deg == 0 || coeffs[0] == 0.0 {
        return Vec::new();
    }
    let lead = coeffs[0];
    let mut comp = DMatrix::<f64>::zeros(deg, deg);
    for j in 0..deg {
        comp[(0, j)] = -coeffs[j + 1] / lead;
    }
    for i in 1..deg {
        comp[(i, i - 1)] = 1.0;
    }
    sorted_eigenvalues(&comp)
}

/// Monic real polynomial with the given roots (conjugate pairs assumed).
pub(crate) fn poly_from_roots(roots: &[Complex64]) -> Vec<f64> {
    let mut acc = vec![Complex64::new(1.0, 0.0)];
    for r in roots {
        let mut next = vec![Complex64::new(0.0, 0.0); acc.len() + 1];
        for (k, c) in acc.iter().enumerate() {
            next[k] += c;
            next[k + 1] -= c * r;
        }
        acc = next;
    }
    acc.into_iter().map(|c| c.re).collect()
}

// ---------------------------------------------------------------------------
// Non-negative least squares (Lawson & Hanson active-set method).
// ---------------------------------------------------------------------------

/// Solves `min ||C w - e||_2` subject to `w >= 0`.
pub(crate) fn nnls(c: &DMatrix<f64>, e: &DVector<f64>, max_iter: usize) -> DVector<f64> {
    let n = c.ncols();
    let mut w = DVector::<f64>::zeros(n);
    let mut passive = vec![false; n];
    let tol = 1e-12 * c.amax().max(1.0) * e.amax().max(1.0);

    for _ in 0..max_iter {
        let grad = c.transpose() * (e - c * &w);
        let candidate = (0..n)
            .filter(|&j| !passive[j])
            .max_by(|&a, &b| grad[a].partial_cmp(&grad[b]).unwrap());
        let j = match candidate {
            Some(j) if grad[j] > tol => j,
            _ => break,
        };
        passive[j] = true;

        loop {
            let idx: Vec<usize> = (0..n).filter(|&k| passive[k]).collect();
            let sub = c.select_columns(idx.iter());
            let z_sub = match sub.clone().svd(true, true).solve(e, 1e-14) {
                Ok(z) => z,
                Err(_) => return w,
            };
            if z_sub.iter().all(|&v| v > 0.0) {
                w.fill(0.0);
                for (k, &col) in idx.iter().enumerate() {
                    w[col] = z_sub[k];
                }
                break;
            }
            // Step back toward the feasible region.
            let mut alpha = f64::INFINITY;
            for (k, &col) in idx.iter().enumerate() {
                if z_sub[k] <= 0.0 {
                    let denom = w[col] - z_sub[k];
                    if denom > 0.0 {
                        alpha = alpha.min(w[col] / denom);
                    }
                }
            }
            if !alpha.is_finite() {
                alpha = 0.0;
            }
            for (k, &col) in idx.iter().enumerate() {
                w[col] += alpha * (z_sub[k] - w[col]);
                if w[col] <= 1e-15 {
                    w[col] = 0.0;
                    passive[col] = false;
                }
            }
            if !passive.iter().any(|&p| p) {
                break;
            }
        }
    }
    w
}
