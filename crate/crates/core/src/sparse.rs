//! Compressed sparse row storage and a banded LU factorization.
//!
//! Grid operators have a fixed bandwidth (1 in 1D, `n_per_axis` in 2D under
//! row-major ordering), so a dense band LU without pivoting is a direct
//! solver for every matrix the crate builds: M-matrices, their transposes,
//! diagonal shifts of those, and SPD products of Laplacians.

use std::io::{self, Write};

use crate::error::{Error, Result};
use crate::scalar::Real;

#[derive(Clone, Debug, PartialEq)]
pub struct CsrMatrix<T> {
    nrows: usize,
    ncols: usize,
    row_ptr: Vec<usize>,
    col_idx: Vec<usize>,
    values: Vec<T>,
}

impl<T: Real> CsrMatrix<T> {
    /// Builds from unsorted triplets; duplicate entries are summed.
    pub fn from_triplets(nrows: usize, ncols: usize, triplets: &[(usize, usize, T)]) -> Self {
        let mut rows: Vec<Vec<(usize, T)>> = vec![Vec::new(); nrows];
        for &(i, j, v) in triplets {
            assert!(i < nrows && j < ncols, "triplet ({i},{j}) out of range");
            rows[i].push((j, v));
        }
        let mut row_ptr = Vec::with_capacity(nrows + 1);
        let mut col_idx = Vec::with_capacity(triplets.len());
        let mut values = Vec::with_capacity(triplets.len());
        row_ptr.push(0);
        for mut row in rows {
            row.sort_by_key(|e| e.0);
            let mut last: Option<usize> = None;
            for (j, v) in row {
                if last == Some(j) {
                    *values.last_mut().unwrap() += v;
                } else {
                    col_idx.push(j);
                    values.push(v);
                    last = Some(j);
                }
            }
            row_ptr.push(col_idx.len());
        }
        Self {
            nrows,
            ncols,
            row_ptr,
            col_idx,
            values,
        }
    }

    pub fn identity(n: usize) -> Self {
        let t: Vec<_> = (0..n).map(|i| (i, i, T::one())).collect();
        Self::from_triplets(n, n, &t)
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

    /// `(column, value)` pairs of row `i`.
    pub fn row(&self, i: usize) -> impl Iterator<Item = (usize, T)> + '_ {
        let r = self.row_ptr[i]..self.row_ptr[i + 1];
        self.col_idx[r.clone()]
            .iter()
            .copied()
            .zip(self.values[r].iter().copied())
    }

    pub fn get(&self, i: usize, j: usize) -> T {
        self.row(i)
            .find(|&(c, _)| c == j)
            .map_or(T::zero(), |(_, v)| v)
    }

    pub fn diagonal(&self) -> Vec<T> {
        (0..self.nrows).map(|i| self.get(i, i)).collect()
    }

    pub fn triplets(&self) -> Vec<(usize, usize, T)> {
        (0..self.nrows)
            .flat_map(|i| self.row(i).map(move |(j, v)| (i, j, v)))
            .collect()
    }

    pub fn matvec(&self, x: &[T]) -> Vec<T> {
        assert_eq!(x.len(), self.ncols);
        (0..self.nrows)
            .map(|i| self.row(i).map(|(j, v)| v * x[j]).sum())
            .collect()
    }

    pub fn transpose(&self) -> Self {
        let t: Vec<_> = self.triplets().into_iter().map(|(i, j, v)| (j, i, v)).collect();
        Self::from_triplets(self.ncols, self.nrows, &t)
    }

    pub fn scale(&self, s: T) -> Self {
        let mut out = self.clone();
        out.values.iter_mut().for_each(|v| *v *= s);
        out
    }

    /// `self + s * other` for matrices of equal shape.
    pub fn add_scaled(&self, s: T, other: &CsrMatrix<T>) -> Self {
        assert_eq!((self.nrows, self.ncols), (other.nrows, other.ncols));
        let mut t = self.triplets();
        t.extend(other.triplets().into_iter().map(|(i, j, v)| (i, j, s * v)));
        Self::from_triplets(self.nrows, self.ncols, &t)
    }

    /// `self + diag(d)`.
    pub fn add_diagonal(&self, d: &[T]) -> Self {
        assert_eq!(d.len(), self.nrows);
        let mut t = self.triplets();
        t.extend(d.iter().enumerate().map(|(i, &v)| (i, i, v)));
        Self::from_triplets(self.nrows, self.ncols, &t)
    }

    pub fn matmul(&self, other: &CsrMatrix<T>) -> Self {
        assert_eq!(self.ncols, other.nrows);
        let mut t = Vec::new();
        for i in 0..self.nrows {
            for (k, a) in self.row(i) {
                for (j, b) in other.row(k) {
                    t.push((i, j, a * b));
                }
            }
        }
        Self::from_triplets(self.nrows, other.ncols, &t)
    }

    /// Lower and upper bandwidths.
    pub fn bandwidths(&self) -> (usize, usize) {
        let mut kl = 0;
        let mut ku = 0;
        for i in 0..self.nrows {
            for (j, _) in self.row(i) {
                if j < i {
                    kl = kl.max(i - j);
                } else {
                    ku = ku.max(j - i);
                }
            }
        }
        (kl, ku)
    }

    pub fn max_abs_diff(&self, other: &CsrMatrix<T>) -> T {
        let d = self.add_scaled(-T::one(), other);
        d.values.iter().fold(T::zero(), |m, v| m.max(v.abs()))
    }

    /// Matrix Market coordinate format, 1-based indices.
    pub fn write_matrix_market<W: Write>(&self, mut w: W) -> io::Result<()> {
        writeln!(w, "%%MatrixMarket matrix coordinate real general")?;
        writeln!(w, "{} {} {}", self.nrows, self.ncols, self.nnz())?;
        for (i, j, v) in self.triplets() {
            writeln!(w, "{} {} {:.16e}", i + 1, j + 1, v.to_f64_lossy())?;
        }
        Ok(())
    }
}

/// Dense-band LU factors (Doolittle, no pivoting).
#[derive(Clone, Debug)]
pub struct BandedLu<T> {
    n: usize,
    kl: usize,
    ku: usize,
    // row-major band: entry (i, j) at i * width + (j + kl - i)
    band: Vec<T>,
}

impl<T: Real> BandedLu<T> {
    pub fn factor(a: &CsrMatrix<T>) -> Result<Self> {
        assert_eq!(a.nrows(), a.ncols(), "banded LU needs a square matrix");
        let n = a.nrows();
        let (kl, ku) = a.bandwidths();
        // fill-in stays inside [i - kl, i + ku] without pivoting
        let width = kl + ku + 1;
        let mut band = vec![T::zero(); n * width];
        for (i, j, v) in a.triplets() {
            band[i * width + (j + kl - i)] = v;
        }
        let scale = band.iter().fold(T::zero(), |m, v| m.max(v.abs()));
        let tiny = scale * T::epsilon() * T::lit(1e-3);
        for k in 0..n {
            let pivot = band[k * width + kl];
            if pivot.abs() <= tiny || !pivot.is_finite() {
                return Err(Error::SingularPivot { row: k });
            }
            let imax = (k + kl).min(n - 1);
            let jmax = (k + ku).min(n - 1);
            for i in (k + 1)..=imax {
                let ik = i * width + (k + kl - i);
                let l = band[ik] / pivot;
                band[ik] = l;
                if l == T::zero() {
                    continue;
                }
                for j in (k + 1)..=jmax {
                    let kj = band[k * width + (j + kl - k)];
                    band[i * width + (j + kl - i)] -= l * kj;
                }
            }
        }
        Ok(Self { n, kl, ku, band })
    }

    // band offsets make index loops clearer than iterator chains here
    #[allow(clippy::needless_range_loop)]
    pub fn solve(&self, rhs: &[T]) -> Vec<T> {
        assert_eq!(rhs.len(), self.n);
        let width = self.kl + self.ku + 1;
        let mut x = rhs.to_vec();
        for i in 0..self.n {
            let j0 = i.saturating_sub(self.kl);
            let mut s = x[i];
            for j in j0..i {
                s -= self.band[i * width + (j + self.kl - i)] * x[j];
            }
            x[i] = s;
        }
        for i in (0..self.n).rev() {
            let j1 = (i + self.ku).min(self.n - 1);
            let mut s = x[i];
            for j in (i + 1)..=j1 {
                s -= self.band[i * width + (j + self.kl - i)] * x[j];
            }
            x[i] = s / self.band[i * width + self.kl];
        }
        x
    }
}
