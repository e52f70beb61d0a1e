//! Small dense/sparse complex linear-algebra helpers.
//!
//! Real-space operators of the mesh lattice have at most four nonzeros per
//! row, so the master-equation kernels work with [`SparseOp`] (CSR) acting on
//! dense density matrices.

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64 as C64;

use crate::error::{Error, Result};

pub const ZERO: C64 = C64 { re: 0.0, im: 0.0 };
pub const ONE: C64 = C64 { re: 1.0, im: 0.0 };
pub const I: C64 = C64 { re: 0.0, im: 1.0 };

/// Largest entry modulus.
pub fn max_abs(m: &DMatrix<C64>) -> f64 {
    m.iter().fold(0.0, |acc, z| acc.max(z.norm()))
}

/// Largest entrywise modulus of `a - b`.
pub fn max_abs_diff(a: &DMatrix<C64>, b: &DMatrix<C64>) -> f64 {
    assert_eq!(a.shape(), b.shape(), "shape mismatch in max_abs_diff");
    a.iter().zip(b.iter()).fold(0.0, |acc, (x, y)| acc.max((x - y).norm()))
}

/// `max |U†U - I|`.
pub fn unitarity_defect(u: &DMatrix<C64>) -> f64 {
    let n = u.nrows();
    let g = u.adjoint() * u;
    max_abs_diff(&g, &DMatrix::identity(n, n))
}

/// `max |H - H†|`.
pub fn hermiticity_defect(m: &DMatrix<C64>) -> f64 {
    max_abs_diff(m, &m.adjoint())
}

/// Compressed-row complex matrix.
#[derive(Clone, Debug, PartialEq)]
pub struct SparseOp {
    nrows: usize,
    ncols: usize,
    row_ptr: Vec<usize>,
    cols: Vec<usize>,
    vals: Vec<C64>,
}

impl SparseOp {
    pub fn zeros(nrows: usize, ncols: usize) -> Self {
        Self { nrows, ncols, row_ptr: vec![0; nrows + 1], cols: Vec::new(), vals: Vec::new() }
    }

    /// Builds from `(row, col, value)` triplets; duplicates are summed and
    /// exact zeros dropped.
    pub fn from_triplets(nrows: usize, ncols: usize, triplets: &[(usize, usize, C64)]) -> Self {
        let mut rows: Vec<Vec<(usize, C64)>> = vec![Vec::new(); nrows];
        for &(r, c, v) in triplets {
            assert!(r < nrows && c < ncols, "triplet ({r}, {c}) out of bounds");
            match rows[r].iter_mut().find(|(cc, _)| *cc == c) {
                Some(slot) => slot.1 += v,
                None => rows[r].push((c, v)),
            }
        }
        let mut row_ptr = Vec::with_capacity(nrows + 1);
        let mut cols = Vec::new();
        let mut vals = Vec::new();
        row_ptr.push(0);
        for mut row in rows {
            row.sort_by_key(|(c, _)| *c);
            for (c, v) in row {
                if v != ZERO {
                    cols.push(c);
                    vals.push(v);
                }
            }
            row_ptr.push(cols.len());
        }
        Self { nrows, ncols, row_ptr, cols, vals }
    }

    pub fn from_dense(m: &DMatrix<C64>) -> Self {
        let mut t = Vec::new();
        for r in 0..m.nrows() {
            for c in 0..m.ncols() {
                let v = m[(r, c)];
                if v != ZERO {
                    t.push((r, c, v));
                }
            }
        }
        Self::from_triplets(m.nrows(), m.ncols(), &t)
    }

    pub fn nrows(&self) -> usize {
        self.nrows
    }

    pub fn ncols(&self) -> usize {
        self.ncols
    }

    pub fn nnz(&self) -> usize {
        self.vals.len()
    }

    pub fn is_zero(&self) -> bool {
        self.vals.is_empty()
    }

    pub fn row(&self, r: usize) -> impl Iterator<Item = (usize, C64)> + '_ {
        let span = self.row_ptr[r]..self.row_ptr[r + 1];
        self.cols[span.clone()].iter().copied().zip(self.vals[span].iter().copied())
    }

    pub fn triplets(&self) -> Vec<(usize, usize, C64)> {
        (0..self.nrows).flat_map(|r| self.row(r).map(move |(c, v)| (r, c, v))).collect()
    }

    pub fn to_dense(&self) -> DMatrix<C64> {
        let mut m = DMatrix::zeros(self.nrows, self.ncols);
        for (r, c, v) in self.triplets() {
            m[(r, c)] += v;
        }
        m
    }

    pub fn scale(&self, s: C64) -> Self {
        let mut out = self.clone();
        out.vals.iter_mut().for_each(|v| *v *= s);
        out
    }

    /// `a + b` (same shape).
    pub fn add(&self, other: &SparseOp) -> Self {
        assert_eq!((self.nrows, self.ncols), (other.nrows, other.ncols));
        let mut t = self.triplets();
        t.extend(other.triplets());
        Self::from_triplets(self.nrows, self.ncols, &t)
    }

    /// Sparse product `self * other`.
    pub fn matmul(&self, other: &SparseOp) -> Self {
        assert_eq!(self.ncols, other.nrows);
        let mut t = Vec::new();
        for r in 0..self.nrows {
            for (k, a) in self.row(r) {
                for (c, b) in other.row(k) {
                    t.push((r, c, a * b));
                }
            }
        }
        Self::from_triplets(self.nrows, other.ncols, &t)
    }

    pub fn adjoint(&self) -> Self {
        let t: Vec<_> = self.triplets().into_iter().map(|(r, c, v)| (c, r, v.conj())).collect();
        Self::from_triplets(self.ncols, self.nrows, &t)
    }

    pub fn mul_vec(&self, x: &DVector<C64>) -> DVector<C64> {
        assert_eq!(self.ncols, x.len());
        DVector::from_iterator(self.nrows, (0..self.nrows).map(|r| self.row(r).map(|(c, v)| v * x[c]).sum()))
    }

    /// `self * x` for dense `x`.
    pub fn mul_dense(&self, x: &DMatrix<C64>) -> DMatrix<C64> {
        assert_eq!(self.ncols, x.nrows());
        let mut out = DMatrix::zeros(self.nrows, x.ncols());
        for col in 0..x.ncols() {
            let xc = x.column(col);
            let mut oc = out.column_mut(col);
            for r in 0..self.nrows {
                let mut acc = ZERO;
                for (c, v) in self.row(r) {
                    acc += v * xc[c];
                }
                oc[r] = acc;
            }
        }
        out
    }

    /// `x * self†` for dense `x`.
    pub fn dense_mul_adjoint(&self, x: &DMatrix<C64>) -> DMatrix<C64> {
        assert_eq!(self.ncols, x.ncols());
        let mut out = DMatrix::zeros(x.nrows(), self.nrows);
        for j in 0..self.nrows {
            let mut oc = out.column_mut(j);
            for (l, v) in self.row(j) {
                let vc = v.conj();
                let xc = x.column(l);
                for i in 0..x.nrows() {
                    oc[i] += xc[i] * vc;
                }
            }
        }
        out
    }

    /// `a ρ b†`.
    pub fn sandwich(a: &SparseOp, rho: &DMatrix<C64>, b: &SparseOp) -> DMatrix<C64> {
        b.dense_mul_adjoint(&a.mul_dense(rho))
    }
}

/// Eigen-decomposition of a normal matrix (unitary operators here) through
/// the complex Schur form. For a normal matrix the triangular factor is
/// diagonal, so the Schur vectors are eigenvectors.
pub fn normal_eigen(m: &DMatrix<C64>) -> Result<(Vec<C64>, DMatrix<C64>)> {
    let n = m.nrows();
    if n != m.ncols() {
        return Err(Error::DimensionMismatch { expected: n, found: m.ncols() });
    }
    let schur = m.clone().try_schur(1e-15, 10_000).ok_or_else(|| Error::Construction("Schur iteration did not converge".into()))?;
    let (q, t) = schur.unpack();
    let mut off = 0.0f64;
    for c in 0..n {
        for r in 0..c {
            off = off.max(t[(r, c)].norm());
        }
    }
    if off > 1e-8 {
        return Err(Error::Construction(format!("matrix is not normal (Schur off-diagonal {off:.2e})")));
    }
    Ok(((0..n).map(|i| t[(i, i)]).collect(), q))
}

/// Eigenvalues (ascending) and eigenvectors of a Hermitian matrix.
pub fn hermitian_eigen(m: &DMatrix<C64>) -> (Vec<f64>, DMatrix<C64>) {
    let herm = (m + m.adjoint()).scale(0.5);
    let eig = herm.symmetric_eigen();
    let mut order: Vec<usize> = (0..eig.eigenvalues.len()).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[a].total_cmp(&eig.eigenvalues[b]));
    let vals = order.iter().map(|&i| eig.eigenvalues[i]).collect();
    let vecs = DMatrix::from_fn(m.nrows(), m.ncols(), |r, c| eig.eigenvectors[(r, order[c])]);
    (vals, vecs)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample(n: usize, seed: u64) -> DMatrix<C64> {
        // Deterministic pseudo-random fill, no RNG dependency needed.
        let mut s = seed;
        DMatrix::from_fn(n, n, |_, _| {
            s = s.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
            let a = ((s >> 11) as f64 / (1u64 << 53) as f64) - 0.5;
            s = s.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
            let b = ((s >> 11) as f64 / (1u64 << 53) as f64) - 0.5;
            if (s >> 60).is_multiple_of(3) {
                ZERO
            } else {
                C64::new(a, b)
            }
        })
    }

    #[test]
    fn sparse_products_match_dense() {
        let a = sample(7, 1);
        let b = sample(7, 2);
        let rho = sample(7, 3);
        let sa = SparseOp::from_dense(&a);
        let sb = SparseOp::from_dense(&b);
        assert!(max_abs_diff(&sa.mul_dense(&rho), &(&a * &rho)) < 1e-14);
        assert!(max_abs_diff(&sb.dense_mul_adjoint(&rho), &(&rho * b.adjoint())) < 1e-14);
        assert!(max_abs_diff(&SparseOp::sandwich(&sa, &rho, &sb), &(&a * &rho * b.adjoint())) < 1e-14);
        assert!(max_abs_diff(&sa.matmul(&sb).to_dense(), &(&a * &b)) < 1e-14);
        assert!(max_abs_diff(&sa.adjoint().to_dense(), &a.adjoint()) < 1e-15);
        assert!(max_abs_diff(&sa.add(&sb).to_dense(), &(&a + &b)) < 1e-15);
    }

    #[test]
    fn triplet_duplicates_are_summed() {
        let s = SparseOp::from_triplets(2, 2, &[(0, 1, ONE), (0, 1, I), (1, 0, ONE), (1, 0, -ONE)]);
        assert_eq!(s.nnz(), 1);
        assert_eq!(s.to_dense()[(0, 1)], C64::new(1.0, 1.0));
    }

    #[test]
    fn normal_eigen_of_unitary() {
        // Unitary from the QR factor of a random matrix.
        let q = sample(6, 9).qr().q();
        let (vals, vecs) = normal_eigen(&q).unwrap();
        for (i, lam) in vals.iter().enumerate() {
            assert!((lam.norm() - 1.0).abs() < 1e-12);
            let v = vecs.column(i).into_owned();
            let r = &q * &v - v.scale(1.0) * *lam;
            assert!(r.norm() < 1e-12);
        }
    }

    #[test]
    fn rejects_non_normal() {
        let m = DMatrix::from_row_slice(2, 2, &[ONE, ONE, ZERO, ONE.scale(2.0)]);
        assert!(normal_eigen(&m).is_err());
    }
}
