//! Dense complex linear algebra used throughout the crate.
//!
//! Operators are stored as `nalgebra` dense matrices of `Complex64`.
//! Superoperators act on column-stacked operators: `vec(|i><j|)` sits at
//! index `j * D + i`, so that `vec(A X B) = (B^T ⊗ A) vec(X)`.

mod norm;
mod superop;

pub use norm::{one_to_one_norm, spectral_norm, trace_norm, NormEffort, NormEstimate};
pub use superop::{apply_local, embed_local, embed_operator, ChoiMatrix, SuperOperator};

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;

use crate::error::{Error, Result};

pub type C64 = Complex64;
pub type ComplexMatrix = DMatrix<C64>;
pub type ComplexVector = DVector<C64>;

/// Relative tolerance for Hermiticity checks.
pub const HERMITICITY_TOL: f64 = 1e-10;
/// Eigenvalues above `-PSD_TOL` (relative) are clamped to zero by [`psd_sqrt`].
pub const PSD_TOL: f64 = 1e-10;

pub fn c(re: f64, im: f64) -> C64 {
    C64::new(re, im)
}

pub fn identity(n: usize) -> ComplexMatrix {
    ComplexMatrix::identity(n, n)
}

pub fn zeros(rows: usize, cols: usize) -> ComplexMatrix {
    ComplexMatrix::zeros(rows, cols)
}

/// Builds a matrix from real row-major entries.
pub fn real_matrix(rows: usize, cols: usize, entries: &[f64]) -> ComplexMatrix {
    ComplexMatrix::from_row_iterator(rows, cols, entries.iter().map(|&x| C64::new(x, 0.0)))
}

pub fn pauli_x() -> ComplexMatrix {
    real_matrix(2, 2, &[0.0, 1.0, 1.0, 0.0])
}

pub fn pauli_y() -> ComplexMatrix {
    ComplexMatrix::from_row_slice(2, 2, &[c(0.0, 0.0), c(0.0, -1.0), c(0.0, 1.0), c(0.0, 0.0)])
}

pub fn pauli_z() -> ComplexMatrix {
    real_matrix(2, 2, &[1.0, 0.0, 0.0, -1.0])
}

/// Lowering operator `|0><1|`.
pub fn sigma_minus() -> ComplexMatrix {
    real_matrix(2, 2, &[0.0, 1.0, 0.0, 0.0])
}

/// `|i><j|` in dimension `dim`.
pub fn basis_op(dim: usize, i: usize, j: usize) -> ComplexMatrix {
    let mut m = zeros(dim, dim);
    m[(i, j)] = C64::new(1.0, 0.0);
    m
}

pub fn kron(a: &ComplexMatrix, b: &ComplexMatrix) -> ComplexMatrix {
    a.kronecker(b)
}

/// Largest entrywise modulus.
pub fn max_abs(m: &ComplexMatrix) -> f64 {
    m.iter().fold(0.0_f64, |acc, z| acc.max(z.norm()))
}

pub fn hermiticity_defect(m: &ComplexMatrix) -> f64 {
    if !m.is_square() {
        return f64::INFINITY;
    }
    max_abs(&(m - m.adjoint()))
}

/// True when `max |M - M^dag| <= tol * max(1, max|M|)`.
pub fn is_hermitian(m: &ComplexMatrix, tol: f64) -> bool {
    m.is_square() && hermiticity_defect(m) <= tol * max_abs(m).max(1.0)
}

/// Column-stacking vectorization.
pub fn vec_op(m: &ComplexMatrix) -> ComplexVector {
    ComplexVector::from_column_slice(m.as_slice())
}

/// Inverse of [`vec_op`] for a `dim x dim` operator.
pub fn unvec(v: &ComplexVector, dim: usize) -> Result<ComplexMatrix> {
    if v.len() != dim * dim {
        return Err(Error::DimensionMismatch(format!(
            "cannot unvec a vector of length {} into a {dim}x{dim} matrix",
            v.len()
        )));
    }
    Ok(ComplexMatrix::from_column_slice(dim, dim, v.as_slice()))
}

/// Partial trace over every factor not listed in `keep`.
///
/// `dims` lists the tensor factors in order (first factor most significant).
/// The kept factors appear in the output in ascending order.
pub fn partial_trace(m: &ComplexMatrix, dims: &[usize], keep: &[usize]) -> Result<ComplexMatrix> {
    let total: usize = dims.iter().product();
    if !m.is_square() || m.nrows() != total {
        return Err(Error::DimensionMismatch(format!(
            "matrix is {}x{} but factor dimensions {dims:?} multiply to {total}",
            m.nrows(),
            m.ncols()
        )));
    }
    let mut keep_sorted = keep.to_vec();
    keep_sorted.sort_unstable();
    keep_sorted.dedup();
    if keep_sorted.iter().any(|&k| k >= dims.len()) {
        return Err(Error::DimensionMismatch(format!(
            "keep set {keep:?} out of range for {} factors",
            dims.len()
        )));
    }
    let kept: Vec<bool> = (0..dims.len()).map(|f| keep_sorted.contains(&f)).collect();
    let out_dim: usize = keep_sorted.iter().map(|&f| dims[f]).product();

    // (kept index, traced index) for every global basis index
    let split: Vec<(usize, usize)> = (0..total)
        .map(|g| {
            let mut rem = g;
            let mut digits = vec![0; dims.len()];
            for f in (0..dims.len()).rev() {
                digits[f] = rem % dims[f];
                rem /= dims[f];
            }
            let (mut ki, mut ti) = (0, 0);
            for f in 0..dims.len() {
                if kept[f] {
                    ki = ki * dims[f] + digits[f];
                } else {
                    ti = ti * dims[f] + digits[f];
                }
            }
            (ki, ti)
        })
        .collect();

    let mut out = zeros(out_dim, out_dim);
    for col in 0..total {
        let (kc, tc) = split[col];
        for row in 0..total {
            let (kr, tr) = split[row];
            if tr == tc {
                out[(kr, kc)] += m[(row, col)];
            }
        }
    }
    Ok(out)
}

/// Eigendecomposition of a Hermitian matrix.
///
/// Eigenvalues are returned in ascending order with matching orthonormal
/// eigenvector columns.
pub fn herm_eig(m: &ComplexMatrix) -> Result<(Vec<f64>, ComplexMatrix)> {
    if !m.is_square() {
        return Err(Error::DimensionMismatch(format!(
            "eigendecomposition needs a square matrix, got {}x{}",
            m.nrows(),
            m.ncols()
        )));
    }
    let defect = hermiticity_defect(m);
    if defect > HERMITICITY_TOL * max_abs(m).max(1.0) {
        return Err(Error::NotHermitian { deviation: defect });
    }
    let sym = (m + m.adjoint()).scale(0.5);
    let eig = sym.symmetric_eigen();
    let mut order: Vec<usize> = (0..eig.eigenvalues.len()).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[a].total_cmp(&eig.eigenvalues[b]));
    let values = order.iter().map(|&k| eig.eigenvalues[k]).collect();
    let n = m.nrows();
    let mut vectors = zeros(n, n);
    for (dst, &src) in order.iter().enumerate() {
        vectors.set_column(dst, &eig.eigenvectors.column(src));
    }
    Ok((values, vectors))
}

/// Matrix exponential (scaling and squaring with a Padé core).
pub fn expm(m: &ComplexMatrix) -> ComplexMatrix {
    if m.iter().all(|z| *z == C64::new(0.0, 0.0)) {
        return identity(m.nrows());
    }
    m.exp()
}

/// Square root of a Hermitian positive semidefinite matrix.
pub fn psd_sqrt(m: &ComplexMatrix) -> Result<ComplexMatrix> {
    let (values, vectors) = herm_eig(m)?;
    let scale = max_abs(m).max(1.0);
    let mut roots = Vec::with_capacity(values.len());
    for &v in &values {
        if v < -PSD_TOL * scale {
            return Err(Error::NotPositive { eigenvalue: v });
        }
        roots.push(C64::new(v.max(0.0).sqrt(), 0.0));
    }
    let diag = ComplexMatrix::from_diagonal(&ComplexVector::from_vec(roots));
    Ok(&vectors * diag * vectors.adjoint())
}

/// Expectation value `tr(A rho)`.
pub fn expectation(observable: &ComplexMatrix, rho: &ComplexMatrix) -> C64 {
    (observable * rho).trace()
}

/// Trace distance `||a - b||_1 / 2`.
pub fn trace_distance(a: &ComplexMatrix, b: &ComplexMatrix) -> f64 {
    0.5 * trace_norm(&(a - b))
}
