//! Complex Hermitian linear algebra shared by the rest of the crate.
//!
//! Everything here works on dense `nalgebra` matrices of `Complex64`. The
//! dimensions involved are small (a few dozen antennas), so the routines
//! favour robustness over speed.

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use num_complex::Complex64;

use crate::error::{Error, Result};

pub type CMat = DMatrix<Complex64>;
pub type CVec = DVector<Complex64>;

/// Absolute tolerance on `A - A^H` accepted by [`HermitianMatrix::new`].
pub const HERMITIAN_TOL: f64 = 1e-12;

/// A square complex matrix equal to its own conjugate transpose.
#[derive(Debug, Clone, PartialEq)]
pub struct HermitianMatrix(CMat);

impl HermitianMatrix {
    /// Validates `m` against [`HERMITIAN_TOL`].
    pub fn new(m: CMat) -> Result<Self> {
        if !m.is_square() {
            return Err(Error::DimensionMismatch {
                expected: m.nrows(),
                got: m.ncols(),
            });
        }
        let asymmetry = max_asymmetry(&m);
        if asymmetry > HERMITIAN_TOL {
            return Err(Error::NonHermitianInput { asymmetry });
        }
        Ok(Self(hermitian_part(&m)))
    }

    /// Takes the Hermitian part `(m + m^H) / 2` of a square matrix.
    ///
    /// Used for matrices that are Hermitian in exact arithmetic but carry
    /// rounding noise from products such as `U X U^H`.
    pub fn from_hermitian_part(m: &CMat) -> Self {
        assert!(m.is_square(), "hermitian part of a non-square matrix");
        Self(hermitian_part(m))
    }

    pub fn zeros(dim: usize) -> Self {
        Self(CMat::zeros(dim, dim))
    }

    pub fn identity(dim: usize) -> Self {
        Self(CMat::identity(dim, dim))
    }

    pub fn scaled_identity(dim: usize, scale: f64) -> Self {
        Self(CMat::identity(dim, dim) * Complex64::from(scale))
    }

    pub fn from_real_diagonal(diag: &[f64]) -> Self {
        let d = DVector::from_iterator(diag.len(), diag.iter().map(|&v| Complex64::from(v)));
        Self(CMat::from_diagonal(&d))
    }

    pub fn dim(&self) -> usize {
        self.0.nrows()
    }

    pub fn as_matrix(&self) -> &CMat {
        &self.0
    }

    pub fn into_inner(self) -> CMat {
        self.0
    }

    pub fn trace(&self) -> f64 {
        self.0.diagonal().iter().map(|z| z.re).sum()
    }

    pub fn real_diagonal(&self) -> Vec<f64> {
        self.0.diagonal().iter().map(|z| z.re).collect()
    }

    pub fn frobenius_norm(&self) -> f64 {
        self.0.norm()
    }

    /// `U^H A U` for a tall `U`.
    pub fn congruence(&self, u: &CMat) -> HermitianMatrix {
        Self::from_hermitian_part(&(u.adjoint() * &self.0 * u))
    }

    pub fn sub(&self, other: &HermitianMatrix) -> HermitianMatrix {
        Self(&self.0 - &other.0)
    }

    pub fn add(&self, other: &HermitianMatrix) -> HermitianMatrix {
        Self(&self.0 + &other.0)
    }

    pub fn scale(&self, s: f64) -> HermitianMatrix {
        Self(&self.0 * Complex64::from(s))
    }
}

/// Eigenvalues in non-increasing order together with orthonormal eigenvectors.
#[derive(Debug, Clone)]
pub struct EigenFactorization {
    pub values: Vec<f64>,
    /// Column `i` is the eigenvector of `values[i]`.
    pub vectors: CMat,
}

impl EigenFactorization {
    pub fn dim(&self) -> usize {
        self.values.len()
    }

    pub fn max_value(&self) -> f64 {
        self.values.first().copied().unwrap_or(0.0)
    }

    pub fn min_value(&self) -> f64 {
        self.values.last().copied().unwrap_or(0.0)
    }

    /// `V diag(values) V^H`.
    pub fn reconstruct(&self) -> HermitianMatrix {
        let n = self.dim();
        let scaled = scale_columns(&self.vectors, &self.values);
        if n == 0 {
            return HermitianMatrix::zeros(self.vectors.nrows());
        }
        HermitianMatrix::from_hermitian_part(&(scaled * self.vectors.adjoint()))
    }
}

/// Eigendecomposition of a Hermitian matrix, values sorted descending.
pub fn eig_hermitian(a: &HermitianMatrix) -> EigenFactorization {
    let n = a.dim();
    if n == 0 {
        return EigenFactorization {
            values: Vec::new(),
            vectors: CMat::zeros(0, 0),
        };
    }
    let eig = SymmetricEigen::new(a.as_matrix().clone());
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| eig.eigenvalues[j].total_cmp(&eig.eigenvalues[i]));
    let values = order.iter().map(|&i| eig.eigenvalues[i]).collect();
    let mut vectors = CMat::zeros(n, n);
    for (dst, &src) in order.iter().enumerate() {
        vectors.set_column(dst, &eig.eigenvectors.column(src));
    }
    EigenFactorization { values, vectors }
}

/// Eigenvalues only, descending.
pub fn eigenvalues(a: &HermitianMatrix) -> Vec<f64> {
    if a.dim() == 0 {
        return Vec::new();
    }
    let mut v: Vec<f64> = a
        .as_matrix()
        .clone()
        .symmetric_eigenvalues()
        .iter()
        .copied()
        .collect();
    v.sort_by(|x, y| y.total_cmp(x));
    v
}

pub fn min_eigenvalue(a: &HermitianMatrix) -> f64 {
    eigenvalues(a).last().copied().unwrap_or(f64::INFINITY)
}

pub fn max_eigenvalue(a: &HermitianMatrix) -> f64 {
    eigenvalues(a).first().copied().unwrap_or(f64::NEG_INFINITY)
}

/// Loewner test `A ⪯ B`, i.e. `λ_min(B - A) ≥ -tol`.
pub fn psd_order_leq(a: &HermitianMatrix, b: &HermitianMatrix, tol: f64) -> Result<bool> {
    if a.dim() != b.dim() {
        return Err(Error::DimensionMismatch {
            expected: a.dim(),
            got: b.dim(),
        });
    }
    Ok(min_eigenvalue(&b.sub(a)) >= -tol)
}

/// Builds `F = V_r diag(values_r)^{1/2}` from the leading `rank` eigenpairs,
/// so that `F F^H` is the rank-`rank` spectral truncation.
pub fn sqrt_psd_factor(values: &[f64], vectors: &CMat, rank: usize) -> Result<CMat> {
    if rank > values.len() || rank > vectors.ncols() {
        return Err(Error::DimensionMismatch {
            expected: values.len().min(vectors.ncols()),
            got: rank,
        });
    }
    if let Some((index, &value)) = values[..rank].iter().enumerate().find(|(_, &v)| v <= 0.0) {
        return Err(Error::NonpositiveEigenvalue { index, value });
    }
    let roots: Vec<f64> = values[..rank].iter().map(|v| v.sqrt()).collect();
    Ok(scale_columns(
        &vectors.columns(0, rank).into_owned(),
        &roots,
    ))
}

/// Multiplies column `j` of `m` by `s[j]`.
pub fn scale_columns(m: &CMat, s: &[f64]) -> CMat {
    let mut out = m.clone();
    for (j, &sj) in s.iter().enumerate().take(m.ncols()) {
        out.column_mut(j).scale_mut(sj);
    }
    out
}

pub fn hermitian_part(m: &CMat) -> CMat {
    (m + m.adjoint()) * Complex64::from(0.5)
}

pub fn max_asymmetry(m: &CMat) -> f64 {
    let n = m.nrows();
    let mut worst = 0.0f64;
    for i in 0..n {
        for j in i..n {
            worst = worst.max((m[(i, j)] - m[(j, i)].conj()).norm());
        }
    }
    worst
}

/// `‖a - b‖_F / max(‖b‖_F, tiny)`.
pub fn relative_frobenius(a: &CMat, b: &CMat) -> f64 {
    let denom = b.norm().max(f64::MIN_POSITIVE);
    (a - b).norm() / denom
}

/// Inverse of a Hermitian positive definite matrix via Cholesky.
pub fn inverse_hpd(a: &HermitianMatrix) -> Result<HermitianMatrix> {
    let chol = a
        .as_matrix()
        .clone()
        .cholesky()
        .ok_or_else(|| Error::SingularInput("matrix is not positive definite".into()))?;
    Ok(HermitianMatrix::from_hermitian_part(&chol.inverse()))
}

/// Orthonormal basis of the orthogonal complement of the column span of `q`
/// (whose columns must already be orthonormal), inside `C^dim`.
pub fn orthogonal_complement(q: &CMat, dim: usize) -> CMat {
    let k = q.ncols();
    if k == 0 {
        return CMat::identity(dim, dim);
    }
    let proj = CMat::identity(dim, dim) - q * q.adjoint();
    let eig = eig_hermitian(&HermitianMatrix::from_hermitian_part(&proj));
    eig.vectors.columns(0, dim - k).into_owned()
}

/// Singular values of an arbitrary complex matrix, descending.
pub fn singular_values(m: &CMat) -> Vec<f64> {
    if m.nrows() == 0 || m.ncols() == 0 {
        return Vec::new();
    }
    let mut s: Vec<f64> = m.clone().singular_values().iter().copied().collect();
    s.sort_by(|x, y| y.total_cmp(x));
    s
}
