//! Thin layer over faer's sparse direct solvers.

use alloc::format;
use alloc::vec::Vec;

use faer::linalg::solvers::{Solve, SolveLstsq};
use faer::sparse::linalg::matmul::sparse_sparse_matmul;
use faer::sparse::linalg::solvers::{Llt, Lu, Qr, SymbolicLu};
use faer::sparse::{SparseColMat, Triplet};
use faer::traits::ComplexField;
use faer::{Col, Par, Side};

use crate::error::{Error, Result};

/// Scalar types the sparse layer works with (`f64` and `Complex64`).
pub trait Scalar: ComplexField + Copy + core::ops::Add<Output = Self> + core::ops::Mul<Output = Self> {
    fn zero() -> Self;
    fn one() -> Self;
    fn finite(&self) -> bool;
    fn conjugate(&self) -> Self;
}

impl Scalar for f64 {
    fn zero() -> Self {
        0.0
    }
    fn one() -> Self {
        1.0
    }
    fn finite(&self) -> bool {
        self.is_finite()
    }
    fn conjugate(&self) -> Self {
        *self
    }
}

impl Scalar for num_complex::Complex64 {
    fn zero() -> Self {
        num_complex::Complex64::new(0.0, 0.0)
    }
    fn one() -> Self {
        num_complex::Complex64::new(1.0, 0.0)
    }
    fn finite(&self) -> bool {
        self.re.is_finite() && self.im.is_finite()
    }
    fn conjugate(&self) -> Self {
        self.conj()
    }
}

/// Coordinate-format matrix under assembly. Duplicate entries are summed.
#[derive(Debug, Clone)]
pub struct Assembly<T> {
    nrows: usize,
    ncols: usize,
    entries: Vec<Triplet<usize, usize, T>>,
}

impl<T: Scalar> Assembly<T> {
    pub fn new(nrows: usize, ncols: usize) -> Self {
        Self {
            nrows,
            ncols,
            entries: Vec::new(),
        }
    }

    pub fn with_capacity(nrows: usize, ncols: usize, nnz: usize) -> Self {
        Self {
            nrows,
            ncols,
            entries: Vec::with_capacity(nnz),
        }
    }

    #[inline]
    pub fn push(&mut self, row: usize, col: usize, value: T) {
        debug_assert!(row < self.nrows && col < self.ncols);
        self.entries.push(Triplet::new(row, col, value));
    }

    pub fn nrows(&self) -> usize {
        self.nrows
    }

    pub fn ncols(&self) -> usize {
        self.ncols
    }

    pub fn entries(&self) -> impl Iterator<Item = (usize, usize, T)> + '_ {
        self.entries.iter().map(|t| (t.row, t.col, t.val))
    }

    /// Append another assembly's rows below this one.
    pub fn stack(&mut self, other: &Assembly<T>) {
        assert_eq!(self.ncols, other.ncols);
        let off = self.nrows;
        self.entries.extend(
            other
                .entries
                .iter()
                .map(|t| Triplet::new(t.row + off, t.col, t.val)),
        );
        self.nrows += other.nrows;
    }

    /// Multiply every entry of `row` by `s`.
    pub fn scale_rows(&mut self, scale: impl Fn(usize) -> T) {
        for t in &mut self.entries {
            t.val = t.val * scale(t.row);
        }
    }

    pub fn mul_vec(&self, x: &[T]) -> Vec<T> {
        assert_eq!(x.len(), self.ncols);
        let mut y = alloc::vec![T::zero(); self.nrows];
        for t in &self.entries {
            y[t.row] = y[t.row] + t.val * x[t.col];
        }
        y
    }

    fn to_csc(&self) -> Result<SparseColMat<usize, T>> {
        SparseColMat::try_new_from_triplets(self.nrows, self.ncols, &self.entries)
            .map_err(|e| Error::Factorization(format!("{e:?}")))
    }

    pub fn lu(&self) -> Result<Factorization<T>> {
        if self.nrows != self.ncols {
            return Err(Error::InvalidArgument(format!(
                "LU needs a square matrix (got {} x {})",
                self.nrows, self.ncols
            )));
        }
        let lu = self
            .to_csc()?
            .sp_lu()
            .map_err(|e| Error::Factorization(format!("{e:?}")))?;
        Ok(Factorization { lu, n: self.nrows })
    }

    /// Symbolic LU analysis, reusable for matrices with the same pattern.
    pub fn lu_pattern(&self) -> Result<LuPattern> {
        let a = self.to_csc()?;
        let symbolic = SymbolicLu::try_new(a.symbolic()).map_err(|e| Error::Factorization(format!("{e:?}")))?;
        Ok(LuPattern {
            symbolic,
            n: self.nrows,
            nnz: a.compute_nnz(),
        })
    }

    /// Numeric LU with a precomputed pattern.
    pub fn lu_with(&self, pattern: &LuPattern) -> Result<Factorization<T>> {
        let a = self.to_csc()?;
        if self.nrows != pattern.n || self.ncols != pattern.n || a.compute_nnz() != pattern.nnz {
            return Err(Error::Factorization("matrix does not match the LU pattern".into()));
        }
        let lu = Lu::try_new_with_symbolic(pattern.symbolic.clone(), a.as_ref())
            .map_err(|e| Error::Factorization(format!("{e:?}")))?;
        Ok(Factorization { lu, n: self.nrows })
    }

    /// Sparse QR of a tall matrix for least-squares solves.
    pub fn qr(&self) -> Result<LeastSquares<T>> {
        if self.nrows < self.ncols {
            return Err(Error::InvalidArgument(format!(
                "least squares needs at least as many rows as columns (got {} x {})",
                self.nrows, self.ncols
            )));
        }
        let qr = self
            .to_csc()?
            .sp_qr()
            .map_err(|e| Error::Factorization(format!("{e:?}")))?;
        Ok(LeastSquares {
            qr,
            nrows: self.nrows,
            ncols: self.ncols,
        })
    }
}

impl<T: Scalar> Assembly<T> {
    /// `Aᴴ x`.
    pub fn adjoint_mul_vec(&self, x: &[T]) -> Vec<T> {
        assert_eq!(x.len(), self.nrows);
        let mut y = alloc::vec![T::zero(); self.ncols];
        for t in &self.entries {
            y[t.col] = y[t.col] + t.val.conjugate() * x[t.row];
        }
        y
    }

    /// Least squares through the normal equations `AᴴA x = Aᴴb` with a
    /// sparse Cholesky factor. Much cheaper than QR for tall stencil
    /// systems; the squared condition number is the price.
    pub fn normal_equations(&self) -> Result<NormalEquations<T>> {
        let a = self.to_csc()?;
        let ah: Vec<Triplet<usize, usize, T>> = self
            .entries
            .iter()
            .map(|t| Triplet::new(t.col, t.row, t.val.conjugate()))
            .collect();
        let ah = SparseColMat::try_new_from_triplets(self.ncols, self.nrows, &ah)
            .map_err(|e| Error::Factorization(format!("{e:?}")))?;
        let n = sparse_sparse_matmul(ah.as_ref(), a.as_ref(), T::one(), Par::Seq)
            .map_err(|e| Error::Factorization(format!("{e:?}")))?;
        let llt = n
            .sp_cholesky(Side::Lower)
            .map_err(|e| Error::Factorization(format!("{e:?}")))?;
        Ok(NormalEquations {
            llt,
            ncols: self.ncols,
        })
    }
}

/// Cholesky factor of `AᴴA`.
pub struct NormalEquations<T: Scalar> {
    llt: Llt<usize, T>,
    ncols: usize,
}

impl<T: Scalar> NormalEquations<T> {
    /// Solve `AᴴA x = r` for a right-hand side already multiplied by `Aᴴ`.
    pub fn solve(&self, r: &[T]) -> Result<Vec<T>> {
        assert_eq!(r.len(), self.ncols);
        let x = from_col(&self.llt.solve(to_col(r)), self.ncols);
        check_finite(&x)?;
        Ok(x)
    }
}

fn to_col<T: Scalar>(v: &[T]) -> Col<T> {
    Col::from_fn(v.len(), |i| v[i])
}

fn from_col<T: Scalar>(c: &Col<T>, n: usize) -> Vec<T> {
    (0..n).map(|i| c[i]).collect()
}

fn check_finite<T: Scalar>(v: &[T]) -> Result<()> {
    if v.iter().all(|x| x.finite()) {
        Ok(())
    } else {
        Err(Error::Factorization("solve produced non-finite values".into()))
    }
}

/// Symbolic LU analysis of a sparsity pattern.
#[derive(Debug, Clone)]
pub struct LuPattern {
    symbolic: SymbolicLu<usize>,
    n: usize,
    nnz: usize,
}

/// Sparse LU factorization, reusable across right-hand sides.
pub struct Factorization<T: Scalar> {
    lu: Lu<usize, T>,
    n: usize,
}

impl<T: Scalar> Factorization<T> {
    pub fn dim(&self) -> usize {
        self.n
    }

    /// Solve `A x = b`.
    pub fn solve(&self, b: &[T]) -> Result<Vec<T>> {
        assert_eq!(b.len(), self.n);
        let x = from_col(&self.lu.solve(to_col(b)), self.n);
        check_finite(&x)?;
        Ok(x)
    }

    /// Solve `A^T x = b` (plain transpose, no conjugation).
    pub fn solve_transpose(&self, b: &[T]) -> Result<Vec<T>> {
        assert_eq!(b.len(), self.n);
        let x = from_col(&self.lu.solve_transpose(to_col(b)), self.n);
        check_finite(&x)?;
        Ok(x)
    }
}

/// Sparse QR factorization of a tall matrix.
pub struct LeastSquares<T: Scalar> {
    qr: Qr<usize, T>,
    nrows: usize,
    ncols: usize,
}

impl<T: Scalar> LeastSquares<T> {
    /// Minimize `|A x - b|_2`.
    pub fn solve(&self, b: &[T]) -> Result<Vec<T>> {
        assert_eq!(b.len(), self.nrows);
        let x = from_col(&self.qr.solve_lstsq(to_col(b)), self.ncols);
        check_finite(&x)?;
        Ok(x)
    }
}
