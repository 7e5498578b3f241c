//! Sparse direct solves of the coupled block systems.
//!
//! The block systems mix field, winding and circuit rows whose magnitudes
//! differ by many orders, so rows are equilibrated before an LU
//! factorization with partial pivoting, and every solve is followed by a
//! few steps of iterative refinement against the original matrix.
//!
//! Winding and circuit unknowns couple to whole regions, which gives the
//! matrix a few nearly dense rows and columns. A system can therefore declare
//! its leading `core` block (the field unknowns): only that block goes
//! through the sparse LU, and the trailing unknowns are eliminated through a
//! small dense Schur complement.

use std::fmt::Debug;
use std::ops::{Add, AddAssign, Div, Mul, Neg, Sub};

use faer::linalg::solvers::PartialPivLu;
use faer::prelude::Solve;
use faer::sparse::linalg::solvers::Lu;
use faer::sparse::{SparseColMat, Triplet};
use faer::{Col, Mat};
use num_complex::Complex64;

use crate::error::{Error, Result};

/// Field over which systems are solved (`f64` or `Complex64`).
pub trait Scalar:
    faer::traits::ComplexField
    + Copy
    + Default
    + Debug
    + Send
    + Sync
    + From<f64>
    + PartialEq
    + Add<Output = Self>
    + AddAssign
    + Sub<Output = Self>
    + Mul<Output = Self>
    + Div<Output = Self>
    + Neg<Output = Self>
    + 'static
{
    fn modulus(self) -> f64;
    fn finite(self) -> bool;
    fn scale(self, s: f64) -> Self;
}

impl Scalar for f64 {
    fn modulus(self) -> f64 {
        self.abs()
    }
    fn finite(self) -> bool {
        self.is_finite()
    }
    fn scale(self, s: f64) -> Self {
        self * s
    }
}

impl Scalar for Complex64 {
    fn modulus(self) -> f64 {
        self.norm()
    }
    fn finite(self) -> bool {
        self.re.is_finite() && self.im.is_finite()
    }
    fn scale(self, s: f64) -> Self {
        self * s
    }
}

/// Square system under construction: triplets (duplicates summed) and right-hand side.
#[derive(Debug, Clone)]
pub struct LinearSystem<T> {
    pub n: usize,
    pub triplets: Vec<(usize, usize, T)>,
    pub rhs: Vec<T>,
    /// Size of the leading sparse block, if the trailing unknowns form a border.
    pub core: Option<usize>,
}

impl<T: Scalar> LinearSystem<T> {
    pub fn new(n: usize) -> Self {
        LinearSystem {
            n,
            triplets: Vec::new(),
            rhs: vec![T::default(); n],
            core: None,
        }
    }

    /// Declare the first `core` unknowns as the sparse block.
    pub fn with_core(mut self, core: usize) -> Self {
        self.core = (core < self.n).then_some(core);
        self
    }

    pub fn add(&mut self, i: usize, j: usize, v: T) {
        if v != T::default() {
            self.triplets.push((i, j, v));
        }
    }

    pub fn add_rhs(&mut self, i: usize, v: T) {
        self.rhs[i] += v;
    }

    pub fn factorize(&self) -> Result<Factorization<T>> {
        Factorization::new(self.n, &self.triplets, self.core)
    }

    pub fn solve(&self) -> Result<Vec<T>> {
        self.factorize()?.solve(&self.rhs)
    }

    /// Dense copy of the matrix, for small diagnostic checks.
    pub fn to_dense(&self) -> Vec<Vec<T>> {
        let mut d = vec![vec![T::default(); self.n]; self.n];
        for &(i, j, v) in &self.triplets {
            d[i][j] += v;
        }
        d
    }
}

/// Row-compressed copy used for residuals.
#[derive(Debug, Clone)]
struct Csr<T> {
    row_ptr: Vec<usize>,
    cols: Vec<usize>,
    vals: Vec<T>,
}

impl<T: Scalar> Csr<T> {
    fn new(n: usize, triplets: &[(usize, usize, T)]) -> Self {
        let mut t: Vec<(usize, usize, T)> = triplets.to_vec();
        t.sort_by_key(|a| (a.0, a.1));
        let mut row_ptr = vec![0; n + 1];
        let mut cols = Vec::with_capacity(t.len());
        let mut vals: Vec<T> = Vec::with_capacity(t.len());
        let mut last = None;
        for (i, j, v) in t {
            if last == Some((i, j)) {
                *vals.last_mut().unwrap() += v;
            } else {
                cols.push(j);
                vals.push(v);
                row_ptr[i + 1] += 1;
                last = Some((i, j));
            }
        }
        for i in 0..n {
            row_ptr[i + 1] += row_ptr[i];
        }
        Csr { row_ptr, cols, vals }
    }

    fn residual(&self, x: &[T], b: &[T]) -> Vec<T> {
        (0..b.len())
            .map(|i| {
                let mut s = b[i];
                for k in self.row_ptr[i]..self.row_ptr[i + 1] {
                    s -= self.vals[k] * x[self.cols[k]];
                }
                s
            })
            .collect()
    }

    fn row_max(&self, i: usize) -> f64 {
        (self.row_ptr[i]..self.row_ptr[i + 1]).fold(0.0f64, |m, k| m.max(self.vals[k].modulus()))
    }
}

/// Elimination of the trailing border unknowns.
struct Border<T: Scalar> {
    core: usize,
    /// `A⁻¹ B` for the border columns `B`.
    y: Mat<T>,
    /// Border rows restricted to the core columns.
    c_rows: Vec<Vec<(usize, T)>>,
    schur: PartialPivLu<T>,
}

/// LU factors of a row-equilibrated matrix.
pub struct Factorization<T: Scalar> {
    n: usize,
    lu: Lu<usize, T>,
    border: Option<Border<T>>,
    csr: Csr<T>,
    row_scale: Vec<f64>,
}

fn sparse_lu<T: Scalar>(n: usize, triplets: &[Triplet<usize, usize, T>]) -> Result<Lu<usize, T>> {
    let matrix = SparseColMat::<usize, T>::try_new_from_triplets(n, n, triplets)
        .map_err(|e| Error::Solver(format!("invalid sparse structure: {e:?}")))?;
    matrix
        .sp_lu()
        .map_err(|e| Error::Solver(format!("LU factorization failed: {e:?}")))
}

impl<T: Scalar> Factorization<T> {
    pub fn new(n: usize, triplets: &[(usize, usize, T)], core: Option<usize>) -> Result<Self> {
        let csr = Csr::new(n, triplets);
        let mut row_scale = vec![1.0; n];
        for (i, s) in row_scale.iter_mut().enumerate() {
            let m = csr.row_max(i);
            if m == 0.0 {
                return Err(Error::Solver(format!("row {i} of the system matrix is empty")));
            }
            *s = 1.0 / m;
        }
        let scaled = triplets.iter().map(|&(i, j, v)| (i, j, v.scale(row_scale[i])));
        let (lu, border) = match core {
            None => {
                let t: Vec<_> = scaled.map(|(i, j, v)| Triplet::new(i, j, v)).collect();
                (sparse_lu(n, &t)?, None)
            }
            Some(core) => {
                let m = n - core;
                let mut a = Vec::new();
                let mut b = Mat::<T>::zeros(core, m);
                let mut c_rows = vec![Vec::new(); m];
                let mut d = Mat::<T>::zeros(m, m);
                for (i, j, v) in scaled {
                    match (i < core, j < core) {
                        (true, true) => a.push(Triplet::new(i, j, v)),
                        (true, false) => b[(i, j - core)] += v,
                        (false, true) => c_rows[i - core].push((j, v)),
                        (false, false) => d[(i - core, j - core)] += v,
                    }
                }
                let lu = sparse_lu(core, &a)?;
                let y = lu.solve(&b);
                let mut schur = d;
                for (r, row) in c_rows.iter().enumerate() {
                    for &(j, v) in row {
                        for k in 0..m {
                            let s = schur[(r, k)] - v * y[(j, k)];
                            schur[(r, k)] = s;
                        }
                    }
                }
                let schur = schur.partial_piv_lu();
                (
                    lu,
                    Some(Border {
                        core,
                        y,
                        c_rows,
                        schur,
                    }),
                )
            }
        };
        Ok(Factorization {
            n,
            lu,
            border,
            csr,
            row_scale,
        })
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    fn raw_solve(&self, rhs: &[T]) -> Vec<T> {
        let scaled: Vec<T> = (0..self.n).map(|i| rhs[i].scale(self.row_scale[i])).collect();
        let Some(border) = &self.border else {
            let x = self.lu.solve(&Col::<T>::from_fn(self.n, |i| scaled[i]));
            return (0..self.n).map(|i| x[i]).collect();
        };
        let core = border.core;
        let m = self.n - core;
        let z = self.lu.solve(&Col::<T>::from_fn(core, |i| scaled[i]));
        let t = Col::<T>::from_fn(m, |r| {
            border.c_rows[r]
                .iter()
                .fold(scaled[core + r], |acc, &(j, v)| acc - v * z[j])
        });
        let xb = border.schur.solve(&t);
        let mut x: Vec<T> = (0..core)
            .map(|i| (0..m).fold(z[i], |acc, k| acc - border.y[(i, k)] * xb[k]))
            .collect();
        x.extend((0..m).map(|k| xb[k]));
        x
    }

    /// Solve with two refinement steps; fails on non-finite results or a
    /// residual that refinement cannot bring down.
    pub fn solve(&self, rhs: &[T]) -> Result<Vec<T>> {
        if rhs.len() != self.n {
            return Err(Error::Dimension {
                expected: self.n,
                got: rhs.len(),
            });
        }
        let mut x = self.raw_solve(rhs);
        if !x.iter().all(|v| v.finite()) {
            return Err(Error::Solver("singular system: factorization produced non-finite values".into()));
        }
        for _ in 0..2 {
            let r = self.csr.residual(&x, rhs);
            let dx = self.raw_solve(&r);
            for (xi, di) in x.iter_mut().zip(dx) {
                *xi += di;
            }
        }
        let r = self.csr.residual(&x, rhs);
        let worst = r
            .iter()
            .enumerate()
            .map(|(i, v)| v.modulus() * self.row_scale[i])
            .fold(0.0f64, f64::max);
        let bnorm = rhs
            .iter()
            .enumerate()
            .map(|(i, v)| v.modulus() * self.row_scale[i])
            .fold(0.0f64, f64::max);
        let xnorm = x.iter().fold(0.0f64, |m, v| m.max(v.modulus()));
        if !x.iter().all(|v| v.finite()) || worst > 1e-6 * (bnorm + xnorm).max(f64::MIN_POSITIVE) {
            return Err(Error::Numerical(format!(
                "direct solve did not converge: scaled residual {worst:.3e}"
            )));
        }
        Ok(x)
    }

    /// Residual `b - A x` of the unscaled system.
    pub fn residual(&self, x: &[T], rhs: &[T]) -> Vec<T> {
        self.csr.residual(x, rhs)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn solves_badly_scaled_real_system() {
        let mut s = LinearSystem::<f64>::new(3);
        s.add(0, 0, 1e8);
        s.add(0, 1, -1e8);
        s.add(1, 0, -1e8);
        s.add(1, 1, 2e8);
        s.add(1, 2, -1.0);
        s.add(2, 1, 1e-6);
        s.add(2, 2, 1e-9);
        s.rhs = vec![1.0, 0.0, 3e-6];
        let x = s.solve().unwrap();
        let f = s.factorize().unwrap();
        let r = f.residual(&x, &s.rhs);
        assert!(r[0].abs() < 1e-7 && r[1].abs() < 1e-7 && r[2].abs() < 1e-20);
    }

    #[test]
    fn complex_system() {
        let mut s = LinearSystem::<Complex64>::new(2);
        s.add(0, 0, Complex64::new(1.0, 1.0));
        s.add(0, 1, Complex64::new(2.0, 0.0));
        s.add(1, 0, Complex64::new(0.0, -1.0));
        s.add(1, 1, Complex64::new(3.0, 0.5));
        s.rhs = vec![Complex64::new(1.0, 0.0), Complex64::new(0.0, 1.0)];
        let x = s.solve().unwrap();
        let r0 = Complex64::new(1.0, 1.0) * x[0] + 2.0 * x[1] - s.rhs[0];
        assert!(r0.norm() < 1e-14);
    }

    #[test]
    fn bordered_matches_plain() {
        let mut s = LinearSystem::<Complex64>::new(5);
        let entries = [
            (0, 0, 4.0, 0.5),
            (0, 1, -1.0, 0.0),
            (1, 0, -1.0, 0.0),
            (1, 1, 4.0, 0.5),
            (1, 2, -1.0, 0.0),
            (2, 1, -1.0, 0.0),
            (2, 2, 4.0, 0.5),
            (0, 3, -2.0, 0.0),
            (3, 0, 0.0, -3.0),
            (2, 3, -1.0, 0.0),
            (3, 3, 1e-3, 0.0),
            (3, 4, 1.0, 0.0),
            (4, 3, 1.0, 0.0),
            (4, 1, 1e4, 0.0),
        ];
        for (i, j, re, im) in entries {
            s.add(i, j, Complex64::new(re, im));
        }
        s.rhs = (0..5).map(|k| Complex64::new(k as f64 + 1.0, -0.5)).collect();
        let plain = s.solve().unwrap();
        let bordered = s.clone().with_core(3).solve().unwrap();
        for (a, b) in plain.iter().zip(&bordered) {
            assert!((a - b).norm() < 1e-12 * a.norm().max(1.0));
        }
    }

    #[test]
    fn singular_system_reported() {
        let mut s = LinearSystem::<f64>::new(2);
        for (i, j) in [(0, 0), (0, 1), (1, 0), (1, 1)] {
            s.add(i, j, 1.0);
        }
        s.rhs = vec![1.0, 0.0];
        assert!(s.solve().is_err());
        let mut empty = LinearSystem::<f64>::new(2);
        empty.add(0, 0, 1.0);
        assert!(matches!(empty.solve(), Err(Error::Solver(_))));
    }
}
