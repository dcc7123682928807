//! Compressed sparse row matrices and a banded Cholesky direct solver.

use std::io::{self, Write};

use crate::Scalar;

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum SparseError {
    #[error("dimension mismatch: expected {expected}, found {found}")]
    Dimension { expected: usize, found: usize },
    #[error("matrix is not positive definite (pivot {pivot} = {value})")]
    NotPositiveDefinite { pivot: usize, value: f64 },
    #[error("matrix must be square, got {rows}x{cols}")]
    NotSquare { rows: usize, cols: usize },
}

/// Row-major compressed sparse matrix. Column indices are sorted within each
/// row and unique.
#[derive(Debug, Clone, PartialEq)]
pub struct CsrMatrix<T> {
    nrows: usize,
    ncols: usize,
    indptr: Vec<usize>,
    indices: Vec<usize>,
    values: Vec<T>,
}

impl<T: Scalar> CsrMatrix<T> {
    /// Builds a matrix from `(row, col, value)` entries; duplicates are summed.
    pub fn from_triplets(nrows: usize, ncols: usize, triplets: &[(usize, usize, T)]) -> Self {
        let mut sorted: Vec<(usize, usize, T)> = triplets.to_vec();
        sorted.sort_by_key(|a| (a.0, a.1));
        let mut indptr = vec![0usize; nrows + 1];
        let mut indices = Vec::with_capacity(sorted.len());
        let mut values: Vec<T> = Vec::with_capacity(sorted.len());
        let mut last: Option<(usize, usize)> = None;
        for (r, c, v) in sorted {
            assert!(r < nrows && c < ncols, "triplet ({r}, {c}) out of bounds");
            if last == Some((r, c)) {
                *values.last_mut().unwrap() += v;
                continue;
            }
            indices.push(c);
            values.push(v);
            indptr[r + 1] += 1;
            last = Some((r, c));
        }
        for r in 0..nrows {
            indptr[r + 1] += indptr[r];
        }
        Self {
            nrows,
            ncols,
            indptr,
            indices,
            values,
        }
    }

    pub fn identity(n: usize) -> Self {
        Self {
            nrows: n,
            ncols: n,
            indptr: (0..=n).collect(),
            indices: (0..n).collect(),
            values: vec![T::one(); n],
        }
    }

    pub fn nrows(&self) -> usize {
        self.nrows
    }

    pub fn ncols(&self) -> usize {
        self.ncols
    }

    pub fn nnz(&self) -> usize {
        self.values.len()
    }

    pub fn row(&self, i: usize) -> impl Iterator<Item = (usize, T)> + '_ {
        let span = self.indptr[i]..self.indptr[i + 1];
        self.indices[span.clone()]
            .iter()
            .copied()
            .zip(self.values[span].iter().copied())
    }

    pub fn get(&self, i: usize, j: usize) -> T {
        let span = self.indptr[i]..self.indptr[i + 1];
        match self.indices[span.clone()].binary_search(&j) {
            Ok(k) => self.values[span.start + k],
            Err(_) => T::zero(),
        }
    }

    /// `y = A x`, accumulating each row left to right.
    pub fn mul_vec_into(&self, x: &[T], y: &mut [T]) {
        debug_assert_eq!(x.len(), self.ncols);
        debug_assert_eq!(y.len(), self.nrows);
        for (i, yi) in y.iter_mut().enumerate() {
            let mut acc = T::zero();
            for k in self.indptr[i]..self.indptr[i + 1] {
                acc += self.values[k] * x[self.indices[k]];
            }
            *yi = acc;
        }
    }

    /// `y ← y + A x` with compensated row sums: each row behaves as if
    /// evaluated in twice the working precision, then rounded once.
    ///
    /// Residuals `f − A v` of stiffness systems cancel heavily; plain
    /// accumulation caps attainable accuracy near `cond(A)·ε`.
    pub fn mul_add_vec_into(&self, x: &[T], y: &mut [T]) {
        debug_assert_eq!(x.len(), self.ncols);
        debug_assert_eq!(y.len(), self.nrows);
        let split = veltkamp_constant::<T>();
        for (i, yi) in y.iter_mut().enumerate() {
            let mut sum = *yi;
            let mut err = T::zero();
            for k in self.indptr[i]..self.indptr[i + 1] {
                let (p, ep) = two_product(self.values[k], x[self.indices[k]], split);
                let (s, es) = two_sum(sum, p);
                sum = s;
                err += ep + es;
            }
            *yi = sum + err;
        }
    }

    pub fn mul_vec(&self, x: &[T]) -> Vec<T> {
        let mut y = vec![T::zero(); self.nrows];
        self.mul_vec_into(x, &mut y);
        y
    }

    /// `y = Aᵀ x`
    pub fn mul_transpose_vec_into(&self, x: &[T], y: &mut [T]) {
        debug_assert_eq!(x.len(), self.nrows);
        debug_assert_eq!(y.len(), self.ncols);
        y.iter_mut().for_each(|v| *v = T::zero());
        for (i, &xi) in x.iter().enumerate() {
            for k in self.indptr[i]..self.indptr[i + 1] {
                y[self.indices[k]] += self.values[k] * xi;
            }
        }
    }

    pub fn transpose(&self) -> Self {
        let mut triplets = Vec::with_capacity(self.nnz());
        for i in 0..self.nrows {
            for (j, v) in self.row(i) {
                triplets.push((j, i, v));
            }
        }
        Self::from_triplets(self.ncols, self.nrows, &triplets)
    }

    /// Sparse product `self · rhs` (row-wise Gustavson accumulation).
    pub fn matmul(&self, rhs: &CsrMatrix<T>) -> Self {
        assert_eq!(self.ncols, rhs.nrows, "inner dimensions differ");
        let mut acc = vec![T::zero(); rhs.ncols];
        let mut touched = vec![false; rhs.ncols];
        let mut cols: Vec<usize> = Vec::new();
        let mut indptr = vec![0usize; self.nrows + 1];
        let mut indices = Vec::new();
        let mut values = Vec::new();
        for i in 0..self.nrows {
            cols.clear();
            for (k, a) in self.row(i) {
                for (j, b) in rhs.row(k) {
                    if !touched[j] {
                        touched[j] = true;
                        cols.push(j);
                    }
                    acc[j] += a * b;
                }
            }
            cols.sort_unstable();
            for &j in &cols {
                indices.push(j);
                values.push(acc[j]);
                acc[j] = T::zero();
                touched[j] = false;
            }
            indptr[i + 1] = indices.len();
        }
        Self {
            nrows: self.nrows,
            ncols: rhs.ncols,
            indptr,
            indices,
            values,
        }
    }

    pub fn scaled(&self, s: T) -> Self {
        let mut out = self.clone();
        out.values.iter_mut().for_each(|v| *v *= s);
        out
    }

    /// Kronecker product `self ⊗ rhs`.
    pub fn kron(&self, rhs: &CsrMatrix<T>) -> Self {
        let mut triplets = Vec::with_capacity(self.nnz() * rhs.nnz());
        for i in 0..self.nrows {
            for (j, a) in self.row(i) {
                for p in 0..rhs.nrows {
                    for (q, b) in rhs.row(p) {
                        triplets.push((i * rhs.nrows + p, j * rhs.ncols + q, a * b));
                    }
                }
            }
        }
        Self::from_triplets(self.nrows * rhs.nrows, self.ncols * rhs.ncols, &triplets)
    }

    pub fn max_abs(&self) -> T {
        self.values.iter().fold(T::zero(), |m, &v| m.max(v.abs()))
    }

    /// `max |a_ij − b_ij|` over the union of both sparsity patterns.
    pub fn max_abs_diff(&self, other: &CsrMatrix<T>) -> T {
        assert_eq!((self.nrows, self.ncols), (other.nrows, other.ncols));
        let mut worst = T::zero();
        for i in 0..self.nrows {
            for (j, v) in self.row(i) {
                worst = worst.max((v - other.get(i, j)).abs());
            }
            for (j, v) in other.row(i) {
                worst = worst.max((v - self.get(i, j)).abs());
            }
        }
        worst
    }

    /// `max |a_ij − a_ji|`
    pub fn asymmetry(&self) -> T {
        let mut worst = T::zero();
        for i in 0..self.nrows {
            for (j, v) in self.row(i) {
                worst = worst.max((v - self.get(j, i)).abs());
            }
        }
        worst
    }

    pub fn bandwidth(&self) -> usize {
        (0..self.nrows)
            .flat_map(|i| self.row(i).map(move |(j, _)| i.abs_diff(j)))
            .max()
            .unwrap_or(0)
    }

    pub fn diagonal(&self) -> Vec<T> {
        (0..self.nrows.min(self.ncols)).map(|i| self.get(i, i)).collect()
    }

    pub fn to_dense(&self) -> Vec<Vec<T>> {
        let mut out = vec![vec![T::zero(); self.ncols]; self.nrows];
        for (i, row) in out.iter_mut().enumerate() {
            for (j, v) in self.row(i) {
                row[j] = v;
            }
        }
        out
    }

    /// Matrix Market `coordinate real general`, 1-based indices.
    pub fn write_matrix_market<W: Write>(&self, mut w: W) -> io::Result<()> {
        writeln!(w, "%%MatrixMarket matrix coordinate real general")?;
        writeln!(w, "{} {} {}", self.nrows, self.ncols, self.nnz())?;
        for i in 0..self.nrows {
            for (j, v) in self.row(i) {
                writeln!(w, "{} {} {:e}", i + 1, j + 1, v.to_f64_lossy())?;
            }
        }
        Ok(())
    }
}

/// Matrix Market `array real general` column vector.
pub fn write_vector_market<T: Scalar, W: Write>(v: &[T], mut w: W) -> io::Result<()> {
    writeln!(w, "%%MatrixMarket matrix array real general")?;
    writeln!(w, "{} 1", v.len())?;
    for x in v {
        writeln!(w, "{:e}", x.to_f64_lossy())?;
    }
    Ok(())
}

/// `2^⌈p/2⌉ + 1` for a `p`-bit significand.
fn veltkamp_constant<T: Scalar>() -> T {
    let digits = (-T::epsilon().log2()).round() + T::one();
    (T::lit(2.0)).powf((digits / T::lit(2.0)).ceil()) + T::one()
}

fn split<T: Scalar>(a: T, c: T) -> (T, T) {
    let t = c * a;
    let hi = t - (t - a);
    (hi, a - hi)
}

/// Knuth's error-free sum.
fn two_sum<T: Scalar>(a: T, b: T) -> (T, T) {
    let s = a + b;
    let bb = s - a;
    (s, (a - (s - bb)) + (b - bb))
}

/// Dekker's error-free product, without relying on hardware FMA.
fn two_product<T: Scalar>(a: T, b: T, c: T) -> (T, T) {
    let p = a * b;
    let (ah, al) = split(a, c);
    let (bh, bl) = split(b, c);
    (p, al * bl - (((p - ah * bh) - al * bh) - ah * bl))
}

/// Cholesky factor of a symmetric positive-definite band matrix.
#[derive(Debug, Clone)]
pub struct BandCholesky<T> {
    n: usize,
    bw: usize,
    // row i stores L[i, i-bw ..= i] at offsets 0..=bw
    factor: Vec<T>,
}

impl<T: Scalar> BandCholesky<T> {
    pub fn factor(a: &CsrMatrix<T>) -> Result<Self, SparseError> {
        if a.nrows() != a.ncols() {
            return Err(SparseError::NotSquare {
                rows: a.nrows(),
                cols: a.ncols(),
            });
        }
        let n = a.nrows();
        let bw = a.bandwidth();
        let w = bw + 1;
        let mut l = vec![T::zero(); n * w];
        for i in 0..n {
            for (j, v) in a.row(i) {
                if j <= i {
                    l[i * w + (j + bw - i)] = v;
                }
            }
        }
        for i in 0..n {
            let lo = i.saturating_sub(bw);
            for j in lo..=i {
                let mut s = l[i * w + (j + bw - i)];
                let klo = lo.max(j.saturating_sub(bw));
                for k in klo..j {
                    s -= l[i * w + (k + bw - i)] * l[j * w + (k + bw - j)];
                }
                if j == i {
                    if s <= T::zero() {
                        return Err(SparseError::NotPositiveDefinite {
                            pivot: i,
                            value: s.to_f64_lossy(),
                        });
                    }
                    l[i * w + bw] = s.sqrt();
                } else {
                    l[i * w + (j + bw - i)] = s / l[j * w + bw];
                }
            }
        }
        Ok(Self { n, bw, factor: l })
    }

    pub fn solve(&self, b: &[T]) -> Result<Vec<T>, SparseError> {
        if b.len() != self.n {
            return Err(SparseError::Dimension {
                expected: self.n,
                found: b.len(),
            });
        }
        let (n, bw, w) = (self.n, self.bw, self.bw + 1);
        let l = &self.factor;
        let mut y = b.to_vec();
        for i in 0..n {
            let mut s = y[i];
            for k in i.saturating_sub(bw)..i {
                s -= l[i * w + (k + bw - i)] * y[k];
            }
            y[i] = s / l[i * w + bw];
        }
        for i in (0..n).rev() {
            let mut s = y[i];
            for k in (i + 1)..n.min(i + bw + 1) {
                s -= l[k * w + (i + bw - k)] * y[k];
            }
            y[i] = s / l[i * w + bw];
        }
        Ok(y)
    }
}
