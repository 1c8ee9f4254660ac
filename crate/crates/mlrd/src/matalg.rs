//! Small dense-matrix algebra kernel: diagonal matrix powers, symmetric
//! inverse square roots, triangular factorizations, norms.
//!
//! Everything here operates on `SquareMatrix`, a row-major `d x d` value type.
//! Matrices in this crate are small (typically d <= 6); the eigenproblems are
//! delegated to nalgebra, the triangular factorizations are done in place.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Relative positive-definiteness tolerance: a symmetric matrix is accepted
/// when its smallest eigenvalue exceeds `PD_EPS * lambda_max`.
pub const PD_EPS: f64 = 1e-12;

/// Relative asymmetry tolerance for operations requiring symmetric input.
pub const SYM_TOL: f64 = 1e-8;

/// Dense square matrix with row-major storage.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SquareMatrix {
    dim: usize,
    data: Vec<f64>,
}

impl SquareMatrix {
    /// Builds a matrix from row-major data. Requires `dim >= 1` and finite entries.
    pub fn new(dim: usize, data: Vec<f64>) -> Result<Self> {
        if dim == 0 {
            return Err(Error::Domain("matrix dimension must be >= 1".into()));
        }
        if data.len() != dim * dim {
            return Err(Error::Domain(format!(
                "expected {} entries for a {dim}x{dim} matrix, got {}",
                dim * dim,
                data.len()
            )));
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(Error::Domain("matrix entries must be finite".into()));
        }
        Ok(Self { dim, data })
    }

    pub fn zeros(dim: usize) -> Self {
        Self { dim, data: vec![0.0; dim * dim] }
    }

    pub fn identity(dim: usize) -> Self {
        let mut m = Self::zeros(dim);
        for i in 0..dim {
            m.set(i, i, 1.0);
        }
        m
    }

    pub fn diagonal(values: &[f64]) -> Self {
        let mut m = Self::zeros(values.len());
        for (i, v) in values.iter().enumerate() {
            m.set(i, i, *v);
        }
        m
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let dim = rows.len();
        if rows.iter().any(|r| r.len() != dim) {
            return Err(Error::Domain("rows must form a square matrix".into()));
        }
        Self::new(dim, rows.concat())
    }

    #[inline]
    pub fn dim(&self) -> usize {
        self.dim
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.dim + j]
    }

    #[inline]
    pub fn set(&mut self, i: usize, j: usize, v: f64) {
        self.data[i * self.dim + j] = v;
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.dim..(i + 1) * self.dim]
    }

    pub fn transpose(&self) -> Self {
        let d = self.dim;
        let mut out = Self::zeros(d);
        for i in 0..d {
            for j in 0..d {
                out.set(j, i, self.get(i, j));
            }
        }
        out
    }

    pub fn matmul(&self, rhs: &Self) -> Self {
        assert_eq!(self.dim, rhs.dim, "dimension mismatch");
        let d = self.dim;
        let mut out = Self::zeros(d);
        for i in 0..d {
            for k in 0..d {
                let a = self.get(i, k);
                if a == 0.0 {
                    continue;
                }
                for j in 0..d {
                    out.data[i * d + j] += a * rhs.get(k, j);
                }
            }
        }
        out
    }

    pub fn mul_vec(&self, v: &[f64]) -> Vec<f64> {
        assert_eq!(v.len(), self.dim);
        self.data
            .chunks(self.dim)
            .map(|row| row.iter().zip(v).map(|(a, b)| a * b).sum())
            .collect()
    }

    pub fn add(&self, rhs: &Self) -> Self {
        assert_eq!(self.dim, rhs.dim);
        let data = self.data.iter().zip(&rhs.data).map(|(a, b)| a + b).collect();
        Self { dim: self.dim, data }
    }

    pub fn sub(&self, rhs: &Self) -> Self {
        assert_eq!(self.dim, rhs.dim);
        let data = self.data.iter().zip(&rhs.data).map(|(a, b)| a - b).collect();
        Self { dim: self.dim, data }
    }

    pub fn scale(&self, s: f64) -> Self {
        Self { dim: self.dim, data: self.data.iter().map(|v| v * s).collect() }
    }

    /// Largest absolute entry.
    pub fn max_abs(&self) -> f64 {
        self.data.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    /// Largest absolute entrywise difference to `rhs`.
    pub fn max_abs_diff(&self, rhs: &Self) -> f64 {
        assert_eq!(self.dim, rhs.dim);
        self.data
            .iter()
            .zip(&rhs.data)
            .fold(0.0, |m, (a, b)| m.max((a - b).abs()))
    }

    pub fn frobenius(&self) -> f64 {
        self.data.iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    /// Relative asymmetry `max|A - A'| / max(1, max|A|)`.
    pub fn asymmetry(&self) -> f64 {
        let scale = self.max_abs().max(1.0);
        let mut worst = 0.0f64;
        for i in 0..self.dim {
            for j in (i + 1)..self.dim {
                worst = worst.max((self.get(i, j) - self.get(j, i)).abs());
            }
        }
        worst / scale
    }

    pub fn is_symmetric(&self, tol: f64) -> bool {
        self.asymmetry() <= tol
    }

    pub fn determinant(&self) -> f64 {
        self.to_nalgebra().determinant()
    }

    /// Matrix inverse via LU; fails on (numerically) singular input.
    pub fn inverse(&self) -> Result<Self> {
        self.to_nalgebra()
            .try_inverse()
            .map(|m| Self::from_nalgebra(&m))
            .ok_or_else(|| Error::Factorization("matrix is singular".into()))
    }

    fn to_nalgebra(&self) -> DMatrix<f64> {
        DMatrix::from_row_slice(self.dim, self.dim, &self.data)
    }

    fn from_nalgebra(m: &DMatrix<f64>) -> Self {
        let dim = m.nrows();
        let mut data = Vec::with_capacity(dim * dim);
        for i in 0..dim {
            for j in 0..dim {
                data.push(m[(i, j)]);
            }
        }
        Self { dim, data }
    }
}

/// Diagonal exponent vector: represents `G = diag(g_1, ..., g_d)` used in
/// matrix powers `a^G = diag(a^{g_1}, ..., a^{g_d})`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiagonalExponent {
    values: Vec<f64>,
}

impl DiagonalExponent {
    pub fn new(values: Vec<f64>) -> Result<Self> {
        if values.is_empty() {
            return Err(Error::Domain("exponent vector must be non-empty".into()));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::Domain("exponents must be finite".into()));
        }
        Ok(Self { values })
    }

    pub fn dim(&self) -> usize {
        self.values.len()
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }
}

/// Diagonal matrix power `a^G = diag(a^{g_1}, ..., a^{g_d})`, `a > 0`.
pub fn diag_power(g: &DiagonalExponent, a: f64) -> Result<SquareMatrix> {
    if !(a > 0.0) {
        return Err(Error::Domain(format!("diag_power requires a > 0, got {a}")));
    }
    let values: Vec<f64> = g.values.iter().map(|gi| a.powf(*gi)).collect();
    Ok(SquareMatrix::diagonal(&values))
}

/// Symmetric eigendecomposition, eigenvalues ascending.
fn sym_eigen(s: &SquareMatrix) -> (Vec<f64>, DMatrix<f64>) {
    let se = nalgebra::SymmetricEigen::new(s.to_nalgebra());
    let mut idx: Vec<usize> = (0..s.dim).collect();
    idx.sort_by(|&a, &b| se.eigenvalues[a].total_cmp(&se.eigenvalues[b]));
    let vals: Vec<f64> = idx.iter().map(|&i| se.eigenvalues[i]).collect();
    let mut vecs = DMatrix::zeros(s.dim, s.dim);
    for (newcol, &oldcol) in idx.iter().enumerate() {
        vecs.set_column(newcol, &se.eigenvectors.column(oldcol));
    }
    (vals, vecs)
}

fn check_spd(s: &SquareMatrix, eps: f64) -> Result<(Vec<f64>, DMatrix<f64>)> {
    if !s.is_symmetric(SYM_TOL) {
        return Err(Error::Factorization(format!(
            "matrix is not symmetric (relative asymmetry {:.3e} > {:.1e})",
            s.asymmetry(),
            SYM_TOL
        )));
    }
    let (vals, vecs) = sym_eigen(s);
    let lam_min = vals[0];
    let lam_max = vals[s.dim - 1];
    if !(lam_min > eps * lam_max.max(0.0)) {
        return Err(Error::Factorization(format!(
            "matrix is not positive definite: eigenvalue {lam_min:.6e} (largest {lam_max:.6e})"
        )));
    }
    Ok((vals, vecs))
}

/// Symmetric inverse square root: returns symmetric `M` with `M S M = I`.
///
/// Positive definiteness is checked relative to the largest eigenvalue with
/// tolerance `eps` (`S` must satisfy `lambda_min > eps * lambda_max`).
pub fn sym_inv_sqrt_with_tol(s: &SquareMatrix, eps: f64) -> Result<SquareMatrix> {
    let (vals, vecs) = check_spd(s, eps)?;
    let d = s.dim;
    let inv_sqrt = DMatrix::from_fn(d, d, |i, j| if i == j { 1.0 / vals[i].sqrt() } else { 0.0 });
    let m = &vecs * inv_sqrt * vecs.transpose();
    Ok(SquareMatrix::from_nalgebra(&m))
}

/// Symmetric inverse square root with the default PD tolerance.
pub fn sym_inv_sqrt(s: &SquareMatrix) -> Result<SquareMatrix> {
    sym_inv_sqrt_with_tol(s, PD_EPS)
}

/// Standard Cholesky factor: lower triangular `L` with positive diagonal and
/// `L L' = S`.
pub fn lower_factor(s: &SquareMatrix) -> Result<SquareMatrix> {
    if !s.is_symmetric(SYM_TOL) {
        return Err(Error::Factorization(format!(
            "matrix is not symmetric (relative asymmetry {:.3e})",
            s.asymmetry()
        )));
    }
    let d = s.dim;
    let mut l = SquareMatrix::zeros(d);
    for i in 0..d {
        for j in 0..=i {
            let mut sum = s.get(i, j);
            for k in 0..j {
                sum -= l.get(i, k) * l.get(j, k);
            }
            if i == j {
                if sum <= 0.0 {
                    return Err(Error::Factorization(format!(
                        "matrix is not positive definite: pivot {sum:.6e} at index {i}"
                    )));
                }
                l.set(i, j, sum.sqrt());
            } else {
                l.set(i, j, sum / l.get(j, j));
            }
        }
    }
    Ok(l)
}

/// Upper-triangular factor: `A` upper triangular with positive diagonal and
/// `A A' = S`.
///
/// Computed as a reverse-ordered Cholesky: factorize the index-reversed matrix
/// and reverse back. The positive-diagonal convention makes the factor unique.
pub fn upper_factor(s: &SquareMatrix) -> Result<SquareMatrix> {
    let d = s.dim;
    let mut rev = SquareMatrix::zeros(d);
    for i in 0..d {
        for j in 0..d {
            rev.set(i, j, s.get(d - 1 - i, d - 1 - j));
        }
    }
    let l = lower_factor(&rev)?;
    let mut a = SquareMatrix::zeros(d);
    for i in 0..d {
        for j in 0..d {
            a.set(i, j, l.get(d - 1 - i, d - 1 - j));
        }
    }
    Ok(a)
}

/// Inverse of an upper-triangular matrix by back substitution.
pub fn invert_upper_triangular(u: &SquareMatrix) -> Result<SquareMatrix> {
    let d = u.dim;
    let mut inv = SquareMatrix::zeros(d);
    for j in 0..d {
        // solve U x = e_j
        let mut x = vec![0.0; d];
        for i in (0..d).rev() {
            let mut sum = if i == j { 1.0 } else { 0.0 };
            for k in (i + 1)..d {
                sum -= u.get(i, k) * x[k];
            }
            let piv = u.get(i, i);
            if piv == 0.0 {
                return Err(Error::Factorization(format!(
                    "triangular matrix is singular at index {i}"
                )));
            }
            x[i] = sum / piv;
        }
        for i in 0..d {
            inv.set(i, j, x[i]);
        }
    }
    Ok(inv)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::prelude::*;
    use rand_chacha::ChaCha8Rng;

    fn random_spd(dim: usize, rng: &mut ChaCha8Rng) -> SquareMatrix {
        // B B' + dim * I is comfortably SPD
        let mut b = SquareMatrix::zeros(dim);
        for i in 0..dim {
            for j in 0..dim {
                b.set(i, j, rng.random::<f64>() * 2.0 - 1.0);
            }
        }
        let mut s = b.matmul(&b.transpose());
        for i in 0..dim {
            s.set(i, i, s.get(i, i) + dim as f64);
        }
        s
    }

    #[test]
    fn diag_power_zero_exponents_is_identity() {
        let g = DiagonalExponent::new(vec![0.0, 0.0]).unwrap();
        let m = diag_power(&g, 2.0).unwrap();
        assert_eq!(m, SquareMatrix::identity(2));
    }

    #[test]
    fn diag_power_integer_and_fractional() {
        let g = DiagonalExponent::new(vec![1.0, 2.0]).unwrap();
        let m = diag_power(&g, 2.0).unwrap();
        assert_eq!(m.get(0, 0), 2.0);
        assert_eq!(m.get(1, 1), 4.0);
        let g = DiagonalExponent::new(vec![0.5]).unwrap();
        let m = diag_power(&g, 4.0).unwrap();
        assert!((m.get(0, 0) - 2.0).abs() < 1e-15);
    }

    #[test]
    fn diag_power_rejects_nonpositive_base() {
        let g = DiagonalExponent::new(vec![1.0]).unwrap();
        assert!(diag_power(&g, 0.0).is_err());
        assert!(diag_power(&g, -1.0).is_err());
    }

    #[test]
    fn sym_inv_sqrt_identity_and_diagonal() {
        let m = sym_inv_sqrt(&SquareMatrix::identity(3)).unwrap();
        assert!(m.max_abs_diff(&SquareMatrix::identity(3)) < 1e-12);
        let m = sym_inv_sqrt(&SquareMatrix::diagonal(&[4.0, 9.0])).unwrap();
        assert!(m.max_abs_diff(&SquareMatrix::diagonal(&[0.5, 1.0 / 3.0])) < 1e-12);
    }

    #[test]
    fn sym_inv_sqrt_random_spd() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..20 {
            let s = random_spd(4, &mut rng);
            let m = sym_inv_sqrt(&s).unwrap();
            let probe = m.matmul(&s).matmul(&m);
            assert!(probe.max_abs_diff(&SquareMatrix::identity(4)) < 1e-10);
            // symmetric output, commutes with S (shared eigenbasis)
            assert!(m.max_abs_diff(&m.transpose()) < 1e-12);
            let comm = m.matmul(&s).max_abs_diff(&s.matmul(&m));
            assert!(comm < 1e-9);
        }
    }

    #[test]
    fn sym_inv_sqrt_rejects_bad_input() {
        let asym = SquareMatrix::from_rows(&[vec![1.0, 0.5], vec![0.0, 1.0]]).unwrap();
        assert!(matches!(sym_inv_sqrt(&asym), Err(Error::Factorization(_))));
        let npd = SquareMatrix::diagonal(&[1.0, -0.5]);
        let err = sym_inv_sqrt(&npd).unwrap_err();
        assert!(err.to_string().contains("eigenvalue"));
    }

    #[test]
    fn upper_factor_trivial_cases() {
        let a = upper_factor(&SquareMatrix::identity(3)).unwrap();
        assert!(a.max_abs_diff(&SquareMatrix::identity(3)) < 1e-14);
        let a = upper_factor(&SquareMatrix::diagonal(&[4.0, 9.0])).unwrap();
        assert!(a.max_abs_diff(&SquareMatrix::diagonal(&[2.0, 3.0])) < 1e-14);
    }

    #[test]
    fn upper_factor_reconstructs() {
        let s = SquareMatrix::from_rows(&[vec![2.0, 1.0], vec![1.0, 1.0]]).unwrap();
        let a = upper_factor(&s).unwrap();
        assert!(a.get(1, 0) == 0.0);
        assert!(a.get(0, 0) > 0.0 && a.get(1, 1) > 0.0);
        assert!(a.matmul(&a.transpose()).max_abs_diff(&s) < 1e-12);
    }

    #[test]
    fn upper_factor_seeded_spd_sweep() {
        let mut rng = ChaCha8Rng::seed_from_u64(2024);
        for trial in 0..1000 {
            let dim = 1 + (trial % 6);
            let s = random_spd(dim, &mut rng);
            let a = upper_factor(&s).unwrap();
            for i in 0..dim {
                for j in 0..i {
                    assert_eq!(a.get(i, j), 0.0);
                }
            }
            assert!(a.matmul(&a.transpose()).max_abs_diff(&s) < 1e-10 * s.max_abs().max(1.0));
        }
    }

    #[test]
    fn lower_factor_matches_transpose_relation() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let s = random_spd(5, &mut rng);
        let l = lower_factor(&s).unwrap();
        assert!(l.matmul(&l.transpose()).max_abs_diff(&s) < 1e-10);
    }

    #[test]
    fn invert_upper_triangular_works() {
        let u = SquareMatrix::from_rows(&[vec![2.0, 1.0, 3.0], vec![0.0, 4.0, -1.0], vec![0.0, 0.0, 0.5]])
            .unwrap();
        let inv = invert_upper_triangular(&u).unwrap();
        assert!(u.matmul(&inv).max_abs_diff(&SquareMatrix::identity(3)) < 1e-12);
    }
}
