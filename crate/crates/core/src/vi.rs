//! Projected SOR for the discrete obstacle problem
//!
//! ```text
//! y >= phi,   A y - f >= 0,   (y - phi) . (A y - f) = 0
//! ```
//!
//! i.e. the control-to-state map `phi -> y` evaluated without penalization.
//! It is the reference the penalized pipeline is measured against.

use crate::error::{invalid, Result};
use crate::grid::Field;
use crate::operator::AssembledOperator;
use crate::scalar::Real;

#[derive(Clone, Debug)]
pub struct ViParams<T: Real> {
    /// Relaxation factor in (0, 2).
    pub omega: T,
    /// Sweep cap; `None` means `50 * (n_per_axis + 1)^2`.
    pub max_sweeps: Option<usize>,
    /// Relative stopping tolerance on the sup-norm complementarity residual,
    /// scaled by `|f|_inf + |A phi|_inf`.
    pub rel_tol: T,
    /// Active-set threshold on `y - phi`; `None` means `h^2`.
    pub act_tol: Option<T>,
    /// Initial iterate; `None` means `max(A^-1 f, phi)`.
    pub initial: Option<Field<T>>,
}

impl<T: Real> Default for ViParams<T> {
    fn default() -> Self {
        Self {
            omega: T::lit(1.5),
            max_sweeps: None,
            rel_tol: T::lit(1e-10),
            act_tol: None,
            initial: None,
        }
    }
}

#[derive(Clone, Debug)]
pub struct ViSolution<T: Real> {
    pub y: Field<T>,
    pub active_set: Vec<bool>,
    /// `(A y - f)_i`.
    pub residual_field: Field<T>,
    pub complementarity: T,
    pub tolerance: T,
    pub iterations: usize,
    pub converged: bool,
}

impl<T: Real> ViSolution<T> {
    pub fn active_count(&self) -> usize {
        self.active_set.iter().filter(|&&a| a).count()
    }
}

/// Solves the obstacle problem by projected SOR. Hitting the sweep cap is
/// reported through `converged = false`, not as an error.
pub fn solve_vi<T: Real>(
    op: &AssembledOperator<T>,
    f: &Field<T>,
    phi: &Field<T>,
    params: &ViParams<T>,
) -> Result<ViSolution<T>> {
    let grid = op.grid();
    grid.check_same(f.grid())?;
    grid.check_same(phi.grid())?;
    if !(params.omega > T::zero() && params.omega < T::lit(2.0)) {
        return Err(invalid("omega", format!("must lie in (0, 2), got {}", params.omega)));
    }
    op.check_m_matrix()?;

    let scale = f.linf() + op.apply(phi)?.linf();
    let tol = params.rel_tol * scale;
    let max_sweeps = params
        .max_sweeps
        .unwrap_or_else(|| 50 * (grid.n_per_axis() + 1).pow(2));
    let mut y = match &params.initial {
        Some(init) => {
            grid.check_same(init.grid())?;
            init.values().to_vec()
        }
        None => op
            .solve_linear(f, T::lit(1e-9))?
            .into_values(),
    };
    let lower = phi.values();
    y.iter_mut().zip(lower).for_each(|(yi, &p)| *yi = yi.max(p));

    let m = op.matrix();
    let diag = m.diagonal();
    let rhs = f.values();
    let omega = params.omega;
    let keep = T::one() - omega;
    let check_every = 10;

    let mut sweeps = 0;
    let mut res = complementarity_raw(op, rhs, lower, &y);
    while res > tol && sweeps < max_sweeps {
        for _ in 0..check_every {
            for i in 0..y.len() {
                let mut sigma = T::zero();
                for (j, a) in m.row(i) {
                    if j != i {
                        sigma += a * y[j];
                    }
                }
                let gs = (rhs[i] - sigma) / diag[i];
                y[i] = (keep * y[i] + omega * gs).max(lower[i]);
            }
        }
        sweeps += check_every;
        res = complementarity_raw(op, rhs, lower, &y);
    }

    let y = Field::from_vec_unchecked(grid, y);
    let residual_field = op.apply(&y)?.sub(f)?;
    let act_tol = params.act_tol.unwrap_or(grid.h() * grid.h());
    let active_set = y
        .values()
        .iter()
        .zip(lower)
        .map(|(&a, &b)| a - b <= act_tol)
        .collect();
    Ok(ViSolution {
        y,
        active_set,
        residual_field,
        complementarity: res,
        tolerance: tol,
        iterations: sweeps,
        converged: res <= tol,
    })
}

/// `|| min(y - phi, A y - f) ||_inf`.
pub fn complementarity_residual<T: Real>(
    op: &AssembledOperator<T>,
    f: &Field<T>,
    phi: &Field<T>,
    y: &Field<T>,
) -> Result<T> {
    let grid = op.grid();
    grid.check_same(f.grid())?;
    grid.check_same(phi.grid())?;
    grid.check_same(y.grid())?;
    Ok(complementarity_raw(op, f.values(), phi.values(), y.values()))
}

fn complementarity_raw<T: Real>(op: &AssembledOperator<T>, f: &[T], phi: &[T], y: &[T]) -> T {
    let ay = op.matrix().matvec(y);
    ay.iter()
        .zip(f)
        .zip(y.iter().zip(phi))
        .fold(T::zero(), |m, ((&a, &b), (&yi, &p))| {
            m.max((yi - p).min(a - b).abs())
        })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::error::Error;
    use crate::grid::{inner_product, make_grid, Grid};
    use crate::operator::{constant_coefficient, OperatorSpec};
    use crate::sparse::CsrMatrix;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn lap(n: usize) -> (Grid<f64>, AssembledOperator<f64>) {
        let g = make_grid(1, n).unwrap();
        let a = AssembledOperator::laplacian(&g);
        (g, a)
    }

    #[test]
    fn inactive_obstacle_gives_unconstrained_solution() {
        let (g, a) = lap(31);
        let f = Field::constant(&g, 1.0);
        let phi = Field::constant(&g, -10.0);
        let sol = solve_vi(&a, &f, &phi, &ViParams::default()).unwrap();
        assert!(sol.converged);
        assert_eq!(sol.active_count(), 0);
        for k in 0..g.len() {
            let x = g.coords(k)[0];
            assert!((sol.y.values()[k] - x * (1.0 - x) / 2.0).abs() < 1e-12);
        }
        let r = complementarity_residual(&a, &f, &phi, &sol.y).unwrap();
        assert!(r < 1e-9);
    }

    #[test]
    fn free_boundary_benchmark() {
        let (g, a) = lap(255);
        let f = Field::constant(&g, -8.0);
        let phi = Field::constant(&g, -0.5);
        let sol = solve_vi(&a, &f, &phi, &ViParams::default()).unwrap();
        assert!(sol.converged, "{} > {}", sol.complementarity, sol.tolerance);
        let s = 1.0 / (2.0 * 2f64.sqrt());
        let exact = |x: f64| {
            let x = x.min(1.0 - x);
            if x < s {
                4.0 * x * x - 8.0 * s * x
            } else {
                -0.5
            }
        };
        let xs: Vec<f64> = (0..g.len()).map(|k| g.coords(k)[0]).collect();
        let active: Vec<f64> = xs
            .iter()
            .zip(&sol.active_set)
            .filter(|(_, &a)| a)
            .map(|(&x, _)| x)
            .collect();
        let h = g.h();
        assert!((active[0] - s).abs() <= 2.0 * h);
        assert!((active.last().unwrap() - (1.0 - s)).abs() <= 2.0 * h);
        assert!((sol.y.values()[127] + 0.5).abs() <= 1e-9);
        assert!((sol.y.values()[63] - exact(0.25)).abs() <= 2e-3);
        assert!((exact(0.25) + 0.4571).abs() < 1e-4);
        assert!(sol.y.sub(&phi).unwrap().min_value() >= -1e-12);
    }

    #[test]
    fn obstacle_equal_to_free_solution_is_fully_active() {
        let (g, a) = lap(21);
        let f = Field::constant(&g, 1.0);
        let phi = a.solve_linear(&f, 1e-14).unwrap();
        let sol = solve_vi(&a, &f, &phi, &ViParams::default()).unwrap();
        assert!(sol.converged);
        assert_eq!(sol.active_count(), g.len());
        assert!(sol.y.sub(&phi).unwrap().linf() < 1e-14);
    }

    #[test]
    fn complementarity_zero_when_obstacle_supersolution() {
        let (g, a) = lap(7);
        // y = phi with A phi - f >= 0
        let phi = Field::from_fn(&g, |x| x[0] * (1.0 - x[0]));
        let f = a.apply(&phi).unwrap().map(|v| v - 1.0);
        assert_eq!(complementarity_residual(&a, &f, &phi, &phi).unwrap(), 0.0);
    }

    #[test]
    fn rejects_non_m_matrix_and_bad_omega() {
        let g = make_grid::<f64>(1, 2).unwrap();
        let m = CsrMatrix::from_triplets(2, 2, &[(0, 0, 2.0), (0, 1, 0.5), (1, 1, 2.0)]);
        let a = AssembledOperator::from_matrix(&g, m, 1.0);
        let f = Field::zeros(&g);
        assert!(matches!(
            solve_vi(&a, &f, &f, &ViParams::default()),
            Err(Error::NotMMatrix(_))
        ));
        let (g, a) = lap(3);
        let z = Field::zeros(&g);
        let bad = ViParams { omega: 2.0, ..ViParams::default() };
        assert!(solve_vi(&a, &z, &z, &bad).is_err());
    }

    #[test]
    fn sweep_cap_reports_without_error() {
        let (g, a) = lap(63);
        let f = Field::constant(&g, -8.0);
        let phi = Field::constant(&g, -0.5);
        let params = ViParams {
            max_sweeps: Some(10),
            initial: Some(Field::zeros(&g)),
            ..ViParams::default()
        };
        let sol = solve_vi(&a, &f, &phi, &params).unwrap();
        assert!(!sol.converged);
        assert_eq!(sol.iterations, 10);
    }

    fn drift_operator(g: &Grid<f64>) -> AssembledOperator<f64> {
        let spec = OperatorSpec {
            diffusion: vec![constant_coefficient(1.0), constant_coefficient(0.5)],
            drift: vec![constant_coefficient(2.0), constant_coefficient(-1.0)],
            reaction: constant_coefficient(1.0),
            ellipticity: None,
        };
        AssembledOperator::assemble(&spec, g).unwrap()
    }

    fn random_obstacle(g: &Grid<f64>, rng: &mut ChaCha8Rng) -> Field<f64> {
        let (a, b) = (rng.gen_range(-0.3..0.0), rng.gen_range(-0.2..0.2));
        Field::from_fn(g, |x| a + b * (3.0 * x[0]).sin() * x[1])
    }

    #[test]
    fn monotone_in_obstacle() {
        let g = make_grid::<f64>(2, 11).unwrap();
        let a = drift_operator(&g);
        let f = Field::constant(&g, -10.0);
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..5 {
            let phi1 = random_obstacle(&g, &mut rng);
            let bump = Field::from_fn(&g, |_| rng.gen_range(0.0..0.1));
            let phi2 = phi1.add(&bump).unwrap();
            let y1 = solve_vi(&a, &f, &phi1, &ViParams::default()).unwrap();
            let y2 = solve_vi(&a, &f, &phi2, &ViParams::default()).unwrap();
            assert!(y1.converged && y2.converged);
            assert!(y2.y.sub(&y1.y).unwrap().min_value() >= -1e-10);
        }
    }

    #[test]
    fn unique_from_different_starts_and_satisfies_inequality() {
        let g = make_grid::<f64>(2, 11).unwrap();
        let a = drift_operator(&g);
        let f = Field::constant(&g, -10.0);
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let phi = random_obstacle(&g, &mut rng);
        let p1 = ViParams::default();
        let p2 = ViParams { initial: Some(Field::constant(&g, 3.0)), ..ViParams::default() };
        let s1 = solve_vi(&a, &f, &phi, &p1).unwrap();
        let s2 = solve_vi(&a, &f, &phi, &p2).unwrap();
        assert!(s1.converged && s2.converged);
        let diff = s1.y.sub(&s2.y).unwrap().linf();
        assert!(diff <= 10.0 * s1.tolerance, "{diff}");
        let ay_f = &s1.residual_field;
        for _ in 0..20 {
            let w = Field::from_fn(&g, |_| rng.gen_range(-1.0..0.5));
            let v = w.zip_map(&phi, f64::max).unwrap();
            let d = v.sub(&s1.y).unwrap();
            assert!(inner_product(ay_f, &d).unwrap() >= -1e-9);
        }
    }
}
