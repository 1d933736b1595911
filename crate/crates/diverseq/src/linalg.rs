//! Dense symmetric linear algebra helpers.
//!
//! Log-determinants go through an explicit Cholesky factorization with
//! pivot-based singularity detection: a pivot at or below a relative floor
//! yields a `NEG_INFINITY` sentinel instead of an error, because near-singular
//! minors are legitimate inputs for the likelihood-instability experiments.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

/// Relative pivot floor for singularity detection, scaled by the largest
/// diagonal entry of the matrix being factored.
const PIVOT_RTOL: f64 = 1e-12;

/// Log-determinant of a symmetric PSD matrix.
///
/// Returns `f64::NEG_INFINITY` when a Cholesky pivot falls at or below
/// `PIVOT_RTOL * max_diag` (singular to working precision). The empty matrix
/// has log-determinant 0 (`det = 1` convention).
pub fn sym_logdet(m: &DMatrix<f64>) -> f64 {
    let n = m.nrows();
    debug_assert_eq!(n, m.ncols());
    if n == 0 {
        return 0.0;
    }
    let max_diag = (0..n).map(|i| m[(i, i)]).fold(0.0_f64, f64::max);
    let floor = PIVOT_RTOL * max_diag.max(f64::MIN_POSITIVE);

    // Lower-triangular factor, built column by column.
    let mut l = m.clone_owned();
    let mut logdet = 0.0;
    for j in 0..n {
        let mut d = l[(j, j)];
        for k in 0..j {
            d -= l[(j, k)] * l[(j, k)];
        }
        if d <= floor {
            return f64::NEG_INFINITY;
        }
        let root = d.sqrt();
        logdet += d.ln();
        l[(j, j)] = root;
        for i in (j + 1)..n {
            let mut v = l[(i, j)];
            for k in 0..j {
                v -= l[(i, k)] * l[(j, k)];
            }
            l[(i, j)] = v / root;
        }
    }
    logdet
}

/// Log-determinant of the principal submatrix indexed by `idx`.
pub fn sym_logdet_submatrix(m: &DMatrix<f64>, idx: &[usize]) -> f64 {
    sym_logdet(&submatrix(m, idx, idx))
}

/// Extract the `rows` x `cols` submatrix.
pub fn submatrix(m: &DMatrix<f64>, rows: &[usize], cols: &[usize]) -> DMatrix<f64> {
    DMatrix::from_fn(rows.len(), cols.len(), |i, j| m[(rows[i], cols[j])])
}

/// Symmetric eigendecomposition with eigenvalues sorted ascending.
///
/// Returns `(eigenvalues, eigenvectors)` with eigenvectors in matching
/// columns. Sorting makes downstream samplers deterministic.
pub fn sym_eigen(m: &DMatrix<f64>) -> (DVector<f64>, DMatrix<f64>) {
    let eig = m.clone_owned().symmetric_eigen();
    let n = eig.eigenvalues.len();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[a].total_cmp(&eig.eigenvalues[b]));
    let values = DVector::from_fn(n, |i, _| eig.eigenvalues[order[i]]);
    let vectors = DMatrix::from_fn(n, n, |r, c| eig.eigenvectors[(r, order[c])]);
    (values, vectors)
}

/// Eigenvalues only, sorted ascending.
pub fn sym_eigenvalues(m: &DMatrix<f64>) -> DVector<f64> {
    let mut values: Vec<f64> = m
        .clone_owned()
        .symmetric_eigen()
        .eigenvalues
        .iter()
        .copied()
        .collect();
    values.sort_by(f64::total_cmp);
    DVector::from_vec(values)
}

/// Smallest eigenvalue of a symmetric matrix.
pub fn min_eigenvalue(m: &DMatrix<f64>) -> f64 {
    if m.nrows() == 0 {
        return 0.0;
    }
    sym_eigenvalues(m)[0]
}

/// Inverse of a symmetric positive-definite matrix.
///
/// Errors with conditioning diagnostics when the spectrum is non-positive or
/// the condition number exceeds `max_condition`.
pub fn spd_inverse(m: &DMatrix<f64>, max_condition: f64) -> Result<DMatrix<f64>> {
    let (values, vectors) = sym_eigen(m);
    check_condition(&values, max_condition)?;
    let n = m.nrows();
    let inv_scaled = DMatrix::from_fn(n, n, |r, c| vectors[(r, c)] / values[c]);
    Ok(&inv_scaled * vectors.transpose())
}

/// Validate the conditioning of a symmetric matrix given its sorted spectrum.
pub fn check_condition(values: &DVector<f64>, max_condition: f64) -> Result<()> {
    let n = values.len();
    if n == 0 {
        return Ok(());
    }
    let lambda_min = values[0];
    let lambda_max = values[n - 1];
    let condition = if lambda_min > 0.0 {
        lambda_max / lambda_min
    } else {
        f64::INFINITY
    };
    if lambda_min <= 0.0 || condition > max_condition {
        return Err(Error::IllConditioned {
            condition,
            lambda_min,
            lambda_max,
        });
    }
    Ok(())
}

/// Check symmetry to an absolute tolerance.
pub fn is_symmetric(m: &DMatrix<f64>, tol: f64) -> bool {
    let n = m.nrows();
    (0..n).all(|i| (i + 1..n).all(|j| (m[(i, j)] - m[(j, i)]).abs() <= tol))
}
