//! Uniform tensor grids on the unit interval / unit square and the nodal
//! fields that live on them.
//!
//! Only interior nodes are stored. Every field carries homogeneous Dirichlet
//! data implicitly, so boundary values are always zero.

use std::fmt;
use std::io::{self, Write};

use crate::error::{invalid, Error, Result};
use crate::scalar::Real;

/// Uniform grid with `n_per_axis` interior nodes along each of `dim` axes.
#[derive(Clone, Copy, Debug)]
pub struct Grid<T> {
    dim: usize,
    n: usize,
    h: T,
}

impl<T: Real> Grid<T> {
    pub fn new(dim: usize, n_per_axis: usize) -> Result<Self> {
        if dim != 1 && dim != 2 {
            return Err(Error::InvalidGrid(format!("dim must be 1 or 2, got {dim}")));
        }
        if n_per_axis < 1 {
            return Err(Error::InvalidGrid("n_per_axis must be at least 1".into()));
        }
        let h = T::one() / T::from_count(n_per_axis + 1);
        Ok(Self {
            dim,
            n: n_per_axis,
            h,
        })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn n_per_axis(&self) -> usize {
        self.n
    }

    /// Mesh width `1 / (n_per_axis + 1)`.
    pub fn h(&self) -> T {
        self.h
    }

    /// Cell measure `h^dim` used as quadrature weight.
    pub fn cell_volume(&self) -> T {
        self.h.powi(self.dim as i32)
    }

    pub fn len(&self) -> usize {
        self.n.pow(self.dim as u32)
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    /// Per-axis indices of node `k`; storage is row-major, last axis fastest.
    pub fn multi_index(&self, k: usize) -> [usize; 2] {
        match self.dim {
            1 => [k, 0],
            _ => [k / self.n, k % self.n],
        }
    }

    pub fn linear_index(&self, idx: [usize; 2]) -> usize {
        match self.dim {
            1 => idx[0],
            _ => idx[0] * self.n + idx[1],
        }
    }

    /// Coordinates of node `k`; only the first `dim` entries are meaningful.
    pub fn coords(&self, k: usize) -> [T; 2] {
        let idx = self.multi_index(k);
        let x = T::from_count(idx[0] + 1) * self.h;
        match self.dim {
            1 => [x, T::zero()],
            _ => [x, T::from_count(idx[1] + 1) * self.h],
        }
    }

    /// Neighbour of `k` one step along `axis` in direction `forward`;
    /// `None` when that neighbour is a boundary node.
    pub fn neighbor(&self, k: usize, axis: usize, forward: bool) -> Option<usize> {
        let mut idx = self.multi_index(k);
        if forward {
            if idx[axis] + 1 >= self.n {
                return None;
            }
            idx[axis] += 1;
        } else {
            if idx[axis] == 0 {
                return None;
            }
            idx[axis] -= 1;
        }
        Some(self.linear_index(idx))
    }

    pub fn same_as(&self, other: &Grid<T>) -> bool {
        self.dim == other.dim && self.n == other.n
    }

    pub fn check_same(&self, other: &Grid<T>) -> Result<()> {
        if self.same_as(other) {
            Ok(())
        } else {
            Err(Error::GridMismatch {
                left: self.to_string(),
                right: other.to_string(),
            })
        }
    }
}

impl<T: Real> PartialEq for Grid<T> {
    fn eq(&self, other: &Self) -> bool {
        self.same_as(other)
    }
}

impl<T: Real> fmt::Display for Grid<T> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}D grid, {} nodes/axis", self.dim, self.n)
    }
}

/// Nodal values of a grid function on interior nodes.
#[derive(Clone, Debug, PartialEq)]
pub struct Field<T: Real> {
    grid: Grid<T>,
    values: Vec<T>,
}

impl<T: Real> Field<T> {
    pub fn zeros(grid: &Grid<T>) -> Self {
        Self::constant(grid, T::zero())
    }

    pub fn constant(grid: &Grid<T>, value: T) -> Self {
        Self {
            grid: *grid,
            values: vec![value; grid.len()],
        }
    }

    /// Samples `f` at every interior node. `f` receives the `dim` coordinates.
    pub fn from_fn(grid: &Grid<T>, mut f: impl FnMut(&[T]) -> T) -> Self {
        let values = (0..grid.len())
            .map(|k| {
                let c = grid.coords(k);
                f(&c[..grid.dim()])
            })
            .collect();
        Self {
            grid: *grid,
            values,
        }
    }

    /// Wraps raw nodal values, rejecting wrong lengths and non-finite entries.
    pub fn from_values(grid: &Grid<T>, values: Vec<T>) -> Result<Self> {
        if values.len() != grid.len() {
            return Err(Error::LengthMismatch {
                expected: grid.len(),
                got: values.len(),
            });
        }
        if let Some(index) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite { index });
        }
        Ok(Self {
            grid: *grid,
            values,
        })
    }

    pub(crate) fn from_vec_unchecked(grid: &Grid<T>, values: Vec<T>) -> Self {
        debug_assert_eq!(values.len(), grid.len());
        Self {
            grid: *grid,
            values,
        }
    }

    pub fn grid(&self) -> &Grid<T> {
        &self.grid
    }

    pub fn values(&self) -> &[T] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [T] {
        &mut self.values
    }

    pub fn into_values(self) -> Vec<T> {
        self.values
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn is_finite(&self) -> bool {
        self.values.iter().all(|v| v.is_finite())
    }

    pub fn map(&self, f: impl Fn(T) -> T) -> Self {
        Self::from_vec_unchecked(&self.grid, self.values.iter().map(|&v| f(v)).collect())
    }

    /// Nodewise combination of two fields on the same grid.
    pub fn zip_map(&self, other: &Field<T>, f: impl Fn(T, T) -> T) -> Result<Self> {
        self.grid.check_same(&other.grid)?;
        Ok(Self::from_vec_unchecked(
            &self.grid,
            self.values
                .iter()
                .zip(&other.values)
                .map(|(&a, &b)| f(a, b))
                .collect(),
        ))
    }

    pub fn add(&self, other: &Field<T>) -> Result<Self> {
        self.zip_map(other, |a, b| a + b)
    }

    pub fn sub(&self, other: &Field<T>) -> Result<Self> {
        self.zip_map(other, |a, b| a - b)
    }

    pub fn scale(&self, s: T) -> Self {
        self.map(|v| v * s)
    }

    /// `self + s * other`.
    pub fn axpy(&self, s: T, other: &Field<T>) -> Result<Self> {
        self.zip_map(other, |a, b| a + s * b)
    }

    pub fn max_value(&self) -> T {
        self.values.iter().copied().fold(T::neg_infinity(), T::max)
    }

    pub fn min_value(&self) -> T {
        self.values.iter().copied().fold(T::infinity(), T::min)
    }

    /// Nodal maximum of `|u_i|`.
    pub fn linf(&self) -> T {
        self.values.iter().fold(T::zero(), |m, v| m.max(v.abs()))
    }

    pub fn l2(&self) -> T {
        inner_product_unchecked(self, self).sqrt()
    }

    pub fn norms(&self) -> Norms<T> {
        norms(self)
    }

    /// Writes `index per axis, coordinate(s), value` rows with 17 significant
    /// digits, in storage order.
    pub fn write_csv<W: Write>(&self, mut w: W) -> io::Result<()> {
        match self.grid.dim() {
            1 => writeln!(w, "i,x,value")?,
            _ => writeln!(w, "i,j,x,y,value")?,
        }
        for (k, v) in self.values.iter().enumerate() {
            let idx = self.grid.multi_index(k);
            let c = self.grid.coords(k);
            match self.grid.dim() {
                1 => writeln!(
                    w,
                    "{},{:.16e},{:.16e}",
                    idx[0],
                    c[0].to_f64_lossy(),
                    v.to_f64_lossy()
                )?,
                _ => writeln!(
                    w,
                    "{},{},{:.16e},{:.16e},{:.16e}",
                    idx[0],
                    idx[1],
                    c[0].to_f64_lossy(),
                    c[1].to_f64_lossy(),
                    v.to_f64_lossy()
                )?,
            }
        }
        Ok(())
    }
}

/// Discrete norms of a field.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Norms<T> {
    pub l2: T,
    pub h1_semi: T,
    pub h1: T,
    pub linf: T,
}

/// `(u, v)_h = h^dim * sum_i u_i v_i`.
pub fn inner_product<T: Real>(u: &Field<T>, v: &Field<T>) -> Result<T> {
    u.grid.check_same(&v.grid)?;
    Ok(inner_product_unchecked(u, v))
}

pub(crate) fn inner_product_unchecked<T: Real>(u: &Field<T>, v: &Field<T>) -> T {
    dot(&u.values, &v.values) * u.grid.cell_volume()
}

pub(crate) fn dot<T: Real>(a: &[T], b: &[T]) -> T {
    a.iter().zip(b).map(|(&x, &y)| x * y).sum()
}

/// Discrete L2, H1-seminorm (one-sided differences against the implicit
/// zero boundary), full H1 and sup norms.
pub fn norms<T: Real>(u: &Field<T>) -> Norms<T> {
    let l2 = u.l2();
    let h1_semi = h1_seminorm_sq(u).sqrt();
    Norms {
        l2,
        h1_semi,
        h1: (l2 * l2 + h1_semi * h1_semi).sqrt(),
        linf: u.linf(),
    }
}

fn h1_seminorm_sq<T: Real>(u: &Field<T>) -> T {
    let grid = &u.grid;
    let inv_h = T::one() / grid.h();
    let v = &u.values;
    let mut acc = T::zero();
    for k in 0..grid.len() {
        for axis in 0..grid.dim() {
            let prev = grid.neighbor(k, axis, false).map_or(T::zero(), |j| v[j]);
            let d = (v[k] - prev) * inv_h;
            acc += d * d;
            if grid.neighbor(k, axis, true).is_none() {
                let d = v[k] * inv_h;
                acc += d * d;
            }
        }
    }
    acc * grid.cell_volume()
}

/// Convenience constructor mirroring the grid constructor with validation.
pub fn make_grid<T: Real>(dim: usize, n_per_axis: usize) -> Result<Grid<T>> {
    Grid::new(dim, n_per_axis)
}

pub(crate) fn check_positive<T: Real>(name: &'static str, v: T) -> Result<()> {
    if v.is_finite() && v > T::zero() {
        Ok(())
    } else {
        Err(invalid(name, format!("must be positive and finite, got {v}")))
    }
}
