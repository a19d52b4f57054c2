//! Finite-difference assembly of the second-order elliptic operator
//!
//! ```text
//! A u = - sum_i d_i (a_ii d_i u) + sum_i a_i d_i u + a_0 u
//! ```
//!
//! on interior nodes with homogeneous Dirichlet data eliminated. Diffusion
//! uses the 3-point (5-point in 2D) stencil with half-node coefficients taken
//! as the mean of the two nodal samples; drift is upwinded so that the
//! assembled matrix is an M-matrix.

use std::fmt;
use std::sync::{Arc, OnceLock};

use crate::error::{Error, Result};
use crate::grid::{dot, inner_product, Field, Grid};
use crate::scalar::Real;
use crate::sparse::{BandedLu, CsrMatrix};

/// Coefficient function evaluated at a point of the closed domain.
pub type Coefficient<T> = Arc<dyn Fn(&[T]) -> T + Send + Sync>;

pub fn constant_coefficient<T: Real>(c: T) -> Coefficient<T> {
    Arc::new(move |_| c)
}

/// Coefficients of the operator: diagonal diffusion `a_ii`, drift `a_i`
/// and reaction `a_0`.
#[derive(Clone)]
pub struct OperatorSpec<T> {
    pub diffusion: Vec<Coefficient<T>>,
    pub drift: Vec<Coefficient<T>>,
    pub reaction: Coefficient<T>,
    /// User-declared ellipticity constant; when absent the minimum sampled
    /// diffusion value is recorded instead.
    pub ellipticity: Option<T>,
}

impl<T: Real> OperatorSpec<T> {
    /// `-Laplacian` in `dim` dimensions.
    pub fn laplacian(dim: usize) -> Self {
        Self::constant(&vec![T::one(); dim], &vec![T::zero(); dim], T::zero())
    }

    pub fn constant(diffusion: &[T], drift: &[T], reaction: T) -> Self {
        Self {
            diffusion: diffusion.iter().map(|&c| constant_coefficient(c)).collect(),
            drift: drift.iter().map(|&c| constant_coefficient(c)).collect(),
            reaction: constant_coefficient(reaction),
            ellipticity: None,
        }
    }

    pub fn with_reaction(mut self, reaction: Coefficient<T>) -> Self {
        self.reaction = reaction;
        self
    }
}

impl<T> fmt::Debug for OperatorSpec<T> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("OperatorSpec")
            .field("dim", &self.diffusion.len())
            .finish_non_exhaustive()
    }
}

/// Which norm the generalized eigenvalue estimates are taken against.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
pub enum EnergyNorm {
    L2,
    #[default]
    H1,
}

/// Sparse operator on interior nodes together with its transpose.
#[derive(Clone, Debug)]
pub struct AssembledOperator<T: Real> {
    grid: Grid<T>,
    matrix: CsrMatrix<T>,
    transpose: CsrMatrix<T>,
    ellipticity: T,
    lu: OnceLock<std::result::Result<BandedLu<T>, Error>>,
}

impl<T: Real> AssembledOperator<T> {
    pub fn assemble(spec: &OperatorSpec<T>, grid: &Grid<T>) -> Result<Self> {
        let dim = grid.dim();
        if spec.diffusion.len() != dim || spec.drift.len() != dim {
            return Err(Error::InvalidParameter {
                name: "operator",
                reason: format!(
                    "expected {dim} diffusion and drift coefficients, got {} and {}",
                    spec.diffusion.len(),
                    spec.drift.len()
                ),
            });
        }
        let h = grid.h();
        let inv_h = T::one() / h;
        let inv_h2 = inv_h * inv_h;
        let half = T::lit(0.5);
        let mut min_diffusion = T::infinity();
        let mut triplets = Vec::with_capacity(grid.len() * (2 * dim + 1));

        for k in 0..grid.len() {
            let x = grid.coords(k);
            let x = &x[..dim];
            let mut diag = T::zero();
            for axis in 0..dim {
                let coef = &spec.diffusion[axis];
                let mut xm = [x[0], *x.get(1).unwrap_or(&T::zero())];
                let mut xp = xm;
                xm[axis] -= h;
                xp[axis] += h;
                let (c0, cm, cp) = (coef(x), coef(&xm[..dim]), coef(&xp[..dim]));
                for c in [c0, cm, cp] {
                    if !(c > T::zero()) || !c.is_finite() {
                        return Err(Error::NotElliptic {
                            node: k,
                            value: c.to_f64_lossy(),
                        });
                    }
                    min_diffusion = min_diffusion.min(c);
                }
                let a_minus = half * (c0 + cm) * inv_h2;
                let a_plus = half * (c0 + cp) * inv_h2;
                diag += a_minus + a_plus;
                if let Some(j) = grid.neighbor(k, axis, false) {
                    triplets.push((k, j, -a_minus));
                }
                if let Some(j) = grid.neighbor(k, axis, true) {
                    triplets.push((k, j, -a_plus));
                }

                let b = spec.drift[axis](x);
                if !b.is_finite() {
                    return Err(Error::NonFinite { index: k });
                }
                if b > T::zero() {
                    diag += b * inv_h;
                    if let Some(j) = grid.neighbor(k, axis, false) {
                        triplets.push((k, j, -b * inv_h));
                    }
                } else if b < T::zero() {
                    diag -= b * inv_h;
                    if let Some(j) = grid.neighbor(k, axis, true) {
                        triplets.push((k, j, b * inv_h));
                    }
                }
            }
            let a0 = (spec.reaction)(x);
            if !(a0 >= T::zero()) || !a0.is_finite() {
                return Err(Error::NegativeReaction {
                    node: k,
                    value: a0.to_f64_lossy(),
                });
            }
            diag += a0;
            triplets.push((k, k, diag));
        }

        let n = grid.len();
        let matrix = CsrMatrix::from_triplets(n, n, &triplets);
        Ok(Self::from_matrix(
            grid,
            matrix,
            spec.ellipticity.unwrap_or(min_diffusion),
        ))
    }

    /// Unit-coefficient Dirichlet `-Laplacian` (the operator `L_h`).
    pub fn laplacian(grid: &Grid<T>) -> Self {
        Self::assemble(&OperatorSpec::laplacian(grid.dim()), grid)
            .expect("unit Laplacian is elliptic")
    }

    pub fn from_matrix(grid: &Grid<T>, matrix: CsrMatrix<T>, ellipticity: T) -> Self {
        assert_eq!(matrix.nrows(), grid.len());
        let transpose = matrix.transpose();
        Self {
            grid: *grid,
            matrix,
            transpose,
            ellipticity,
            lu: OnceLock::new(),
        }
    }

    pub fn grid(&self) -> &Grid<T> {
        &self.grid
    }

    pub fn matrix(&self) -> &CsrMatrix<T> {
        &self.matrix
    }

    pub fn transpose_matrix(&self) -> &CsrMatrix<T> {
        &self.transpose
    }

    pub fn ellipticity(&self) -> T {
        self.ellipticity
    }

    /// The adjoint operator `A*`, i.e. the transpose under `(.,.)_h`.
    pub fn adjoint(&self) -> Self {
        Self {
            grid: self.grid,
            matrix: self.transpose.clone(),
            transpose: self.matrix.clone(),
            ellipticity: self.ellipticity,
            lu: OnceLock::new(),
        }
    }

    pub fn apply(&self, u: &Field<T>) -> Result<Field<T>> {
        self.grid.check_same(u.grid())?;
        Ok(Field::from_vec_unchecked(
            &self.grid,
            self.matrix.matvec(u.values()),
        ))
    }

    pub fn apply_adjoint(&self, u: &Field<T>) -> Result<Field<T>> {
        self.grid.check_same(u.grid())?;
        Ok(Field::from_vec_unchecked(
            &self.grid,
            self.transpose.matvec(u.values()),
        ))
    }

    /// `a(u, v) = (A u, v)_h`.
    pub fn bilinear_form(&self, u: &Field<T>, v: &Field<T>) -> Result<T> {
        inner_product(&self.apply(u)?, v)
    }

    /// Off-diagonals nonpositive, diagonal positive, rows weakly
    /// diagonally dominant.
    pub fn check_m_matrix(&self) -> Result<()> {
        let m = &self.matrix;
        let slack = T::lit(1e-12);
        for i in 0..m.nrows() {
            let mut diag = T::zero();
            let mut off = T::zero();
            for (j, v) in m.row(i) {
                if i == j {
                    diag = v;
                } else if v > T::zero() {
                    return Err(Error::NotMMatrix(format!("positive off-diagonal at ({i},{j})")));
                } else {
                    off -= v;
                }
            }
            if !(diag > T::zero()) {
                return Err(Error::NotMMatrix(format!("nonpositive diagonal at row {i}")));
            }
            if diag < off * (T::one() - slack) {
                return Err(Error::NotMMatrix(format!("row {i} not diagonally dominant")));
            }
        }
        Ok(())
    }

    fn lu(&self) -> Result<&BandedLu<T>> {
        self.lu
            .get_or_init(|| BandedLu::factor(&self.matrix))
            .as_ref()
            .map_err(Clone::clone)
    }

    /// Solves `A u = rhs` with `||A u - rhs||_l2 <= tol * max(1, ||rhs||_l2)`.
    pub fn solve_linear(&self, rhs: &Field<T>, tol: T) -> Result<Field<T>> {
        self.grid.check_same(rhs.grid())?;
        crate::grid::check_positive("tol", tol)?;
        solve_factored(&self.matrix, self.lu()?, &self.grid, rhs, tol)
    }

    /// Smallest generalized eigenvalue of the symmetric part of `A` against
    /// the Gram matrix of `norm`, by inverse iteration.
    pub fn estimate_coercivity(&self, norm: EnergyNorm) -> Result<T> {
        let sym = self.matrix.add_scaled(T::one(), &self.transpose).scale(T::lit(0.5));
        let gram = gram_matrix(&self.grid, norm);
        let sym_lu = BandedLu::factor(&sym)?;
        let tol = T::lit(1e-8);
        let max_iter = 20_000;
        let mut v = vec![T::one(); self.grid.len()];
        let mut lambda = T::infinity();
        for it in 0..max_iter {
            let w = sym_lu.solve(&gram.matvec(&v));
            let gw = gram.matvec(&w);
            let w_g = dot(&w, &gw);
            let next = dot(&w, &sym.matvec(&w)) / w_g;
            let s = T::one() / w_g.sqrt();
            v = w.into_iter().map(|x| x * s).collect();
            if it > 0 && (next - lambda).abs() <= tol * next.abs() {
                return Ok(next);
            }
            lambda = next;
        }
        Err(Error::EigenNonConvergence {
            iterations: max_iter,
        })
    }

    /// Largest generalized singular value `sup |a(u,v)| / (|u| |v|)` in the
    /// chosen norm, by power iteration on `G^-1 A^T G^-1 A`.
    pub fn estimate_continuity(&self, norm: EnergyNorm) -> Result<T> {
        let gram = gram_matrix(&self.grid, norm);
        let gram_lu = BandedLu::factor(&gram)?;
        let tol = T::lit(1e-8);
        let max_iter = 20_000;
        let mut v: Vec<T> = (0..self.grid.len())
            .map(|k| T::one() + T::lit(0.5) * T::from_count(k % 7).sin())
            .collect();
        let mut sigma2 = T::zero();
        for it in 0..max_iter {
            let av = self.matrix.matvec(&v);
            let g_av = gram_lu.solve(&av);
            let next = dot(&av, &g_av) / dot(&v, &gram.matvec(&v));
            let w = gram_lu.solve(&self.transpose.matvec(&g_av));
            let wn = dot(&w, &gram.matvec(&w)).sqrt();
            v = w.into_iter().map(|x| x / wn).collect();
            if it > 0 && (next - sigma2).abs() <= tol * next.abs() {
                return Ok(next.sqrt());
            }
            sigma2 = next;
        }
        Err(Error::EigenNonConvergence {
            iterations: max_iter,
        })
    }
}

/// Gram matrix of the discrete norm without the `h^dim` weight:
/// identity for L2, identity plus unit stiffness for H1.
pub fn gram_matrix<T: Real>(grid: &Grid<T>, norm: EnergyNorm) -> CsrMatrix<T> {
    let id = CsrMatrix::identity(grid.len());
    match norm {
        EnergyNorm::L2 => id,
        EnergyNorm::H1 => id.add_scaled(T::one(), AssembledOperator::laplacian(grid).matrix()),
    }
}

/// Direct solve with an arbitrary grid matrix (shifted Jacobians, products).
pub fn solve_matrix<T: Real>(
    matrix: &CsrMatrix<T>,
    grid: &Grid<T>,
    rhs: &Field<T>,
    tol: T,
) -> Result<Field<T>> {
    grid.check_same(rhs.grid())?;
    let lu = BandedLu::factor(matrix)?;
    solve_factored(matrix, &lu, grid, rhs, tol)
}

fn solve_factored<T: Real>(
    matrix: &CsrMatrix<T>,
    lu: &BandedLu<T>,
    grid: &Grid<T>,
    rhs: &Field<T>,
    tol: T,
) -> Result<Field<T>> {
    let b = rhs.values();
    let weight = grid.cell_volume();
    let l2 = |r: &[T]| (dot(r, r) * weight).sqrt();
    let target = tol * T::one().max(l2(b));
    let mut x = lu.solve(b);
    let mut residual = T::infinity();
    // one or two refinement sweeps recover the last digits on stiff shifts
    for _ in 0..4 {
        let r: Vec<T> = matrix
            .matvec(&x)
            .iter()
            .zip(b)
            .map(|(&ax, &bi)| bi - ax)
            .collect();
        residual = l2(&r);
        if residual <= target {
            return Ok(Field::from_vec_unchecked(grid, x));
        }
        let dx = lu.solve(&r);
        x.iter_mut().zip(dx).for_each(|(xi, d)| *xi += d);
    }
    if residual.is_finite() && residual <= target {
        return Ok(Field::from_vec_unchecked(grid, x));
    }
    Err(Error::LinearSolve {
        residual: residual.to_f64_lossy(),
        target: target.to_f64_lossy(),
    })
}
