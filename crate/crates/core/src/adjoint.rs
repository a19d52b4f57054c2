//! Adjoint state, multiplier, objective and reduced gradient of the
//! penalized control problem
//!
//! ```text
//! J_delta(phi) = 1/2 |y - z|^2 + nu/2 |L_h phi|^2 + 1/2 |phi - anchor|^2
//! ```
//!
//! with `y = T_delta(phi)` the penalized state and `L_h` the Dirichlet
//! `-Laplacian`. Composing two Dirichlet Laplacians encodes the simply
//! supported conditions `phi = Laplacian(phi) = 0` on the boundary.

use crate::error::{invalid, Result};
use crate::grid::{inner_product, Field};
use crate::operator::{solve_matrix, AssembledOperator};
use crate::penalty::PenaltyParams;
use crate::scalar::Real;
use crate::state::{solve_penalized, NewtonParams, PenalizedState};

/// Data of the control problem: operator, source, target, weight and the
/// optional anchor of the `|phi - anchor|^2` term.
#[derive(Clone, Debug)]
pub struct ControlProblem<T: Real> {
    pub op: AssembledOperator<T>,
    pub f: Field<T>,
    pub z: Field<T>,
    pub nu: T,
    pub anchor: Option<Field<T>>,
    laplacian: AssembledOperator<T>,
}

impl<T: Real> ControlProblem<T> {
    /// `nu = 0` is accepted (pure tracking); the fixed-point method rejects it.
    pub fn new(
        op: AssembledOperator<T>,
        f: Field<T>,
        z: Field<T>,
        nu: T,
        anchor: Option<Field<T>>,
    ) -> Result<Self> {
        let grid = *op.grid();
        grid.check_same(f.grid())?;
        grid.check_same(z.grid())?;
        if let Some(a) = &anchor {
            grid.check_same(a.grid())?;
        }
        if !(nu >= T::zero()) || !nu.is_finite() {
            return Err(invalid("nu", format!("must be nonnegative and finite, got {nu}")));
        }
        Ok(Self {
            op,
            f,
            z,
            nu,
            anchor,
            laplacian: AssembledOperator::laplacian(&grid),
        })
    }

    pub fn grid(&self) -> &crate::grid::Grid<T> {
        self.op.grid()
    }

    /// Dirichlet `-Laplacian` `L_h` on the problem grid.
    pub fn laplacian(&self) -> &AssembledOperator<T> {
        &self.laplacian
    }

    /// `L_h (L_h phi)`.
    pub fn bilaplacian(&self, phi: &Field<T>) -> Result<Field<T>> {
        self.laplacian.apply(&self.laplacian.apply(phi)?)
    }

    fn anchor_diff(&self, phi: &Field<T>) -> Result<Option<Field<T>>> {
        self.anchor.as_ref().map(|a| phi.sub(a)).transpose()
    }
}

#[derive(Clone, Debug)]
pub struct AdjointState<T: Real> {
    pub p: Field<T>,
    /// `beta'_delta(y - phi) * p`.
    pub mu: Field<T>,
}

/// Solves `A* p + beta'_delta(y - phi) p = y - z` and forms the multiplier.
pub fn solve_adjoint<T: Real>(
    problem: &ControlProblem<T>,
    y: &Field<T>,
    phi: &Field<T>,
    delta: T,
) -> Result<AdjointState<T>> {
    let penalty = PenaltyParams::new(delta)?;
    let shift = penalty.apply_derivative(y, phi)?;
    let matrix = problem.op.transpose_matrix().add_diagonal(shift.values());
    let rhs = y.sub(&problem.z)?;
    let p = solve_matrix(&matrix, problem.grid(), &rhs, T::lit(1e-10))?;
    let mu = shift.zip_map(&p, |b, q| b * q)?;
    Ok(AdjointState { p, mu })
}

/// Objective split into its parts; `j` is their sum.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ObjectiveValue<T> {
    pub j: T,
    pub tracking: T,
    pub regularization: T,
    pub anchor_term: T,
}

pub fn objective<T: Real>(
    problem: &ControlProblem<T>,
    phi: &Field<T>,
    y: &Field<T>,
) -> Result<ObjectiveValue<T>> {
    let half = T::lit(0.5);
    let e = y.sub(&problem.z)?;
    let tracking = half * inner_product(&e, &e)?;
    let lphi = problem.laplacian.apply(phi)?;
    let regularization = half * problem.nu * inner_product(&lphi, &lphi)?;
    let anchor_term = match problem.anchor_diff(phi)? {
        Some(d) => half * inner_product(&d, &d)?,
        None => T::zero(),
    };
    Ok(ObjectiveValue {
        j: tracking + regularization + anchor_term,
        tracking,
        regularization,
        anchor_term,
    })
}

/// `(.,.)_h`-representer of the derivative of `J_delta`:
/// `g = nu L_h L_h phi + mu + (phi - anchor)`.
pub fn gradient<T: Real>(
    problem: &ControlProblem<T>,
    phi: &Field<T>,
    adjoint: &AdjointState<T>,
) -> Result<Field<T>> {
    let mut g = problem
        .bilaplacian(phi)?
        .scale(problem.nu)
        .add(&adjoint.mu)?;
    if let Some(d) = problem.anchor_diff(phi)? {
        g = g.add(&d)?;
    }
    Ok(g)
}

/// Directional derivative `v` of `phi -> T_delta(phi)` in direction `dir`:
/// `A v + beta'_delta(y - phi) v = beta'_delta(y - phi) dir`.
pub fn gateaux_sensitivity<T: Real>(
    problem: &ControlProblem<T>,
    y: &Field<T>,
    phi: &Field<T>,
    delta: T,
    dir: &Field<T>,
) -> Result<Field<T>> {
    let penalty = PenaltyParams::new(delta)?;
    let shift = penalty.apply_derivative(y, phi)?;
    let matrix = problem.op.matrix().add_diagonal(shift.values());
    let rhs = shift.zip_map(dir, |b, d| b * d)?;
    solve_matrix(&matrix, problem.grid(), &rhs, T::lit(1e-10))
}

/// State and objective at one control.
#[derive(Clone, Debug)]
pub struct Evaluation<T: Real> {
    pub state: PenalizedState<T>,
    pub objective: ObjectiveValue<T>,
}

/// Evaluates `J_delta(phi)` with a fresh nonlinear state solve.
pub fn evaluate<T: Real>(
    problem: &ControlProblem<T>,
    phi: &Field<T>,
    delta: T,
    newton: &NewtonParams<T>,
    warm: Option<&Field<T>>,
) -> Result<Evaluation<T>> {
    let state = solve_penalized(&problem.op, &problem.f, phi, delta, newton, warm)?;
    let objective = objective(problem, phi, &state.y)?;
    Ok(Evaluation { state, objective })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::{make_grid, norms, Grid};
    use crate::operator::{constant_coefficient, EnergyNorm, OperatorSpec};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use std::f64::consts::PI;

    fn lap_problem(n: usize, z: impl Fn(&[f64]) -> f64, nu: f64) -> ControlProblem<f64> {
        let g = make_grid(1, n).unwrap();
        let op = AssembledOperator::laplacian(&g);
        let f = Field::constant(&g, -8.0);
        let z = Field::from_fn(&g, z);
        ControlProblem::new(op, f, z, nu, None).unwrap()
    }

    fn sine(g: &Grid<f64>, amp: f64) -> Field<f64> {
        Field::from_fn(g, |x| amp * (PI * x[0]).sin())
    }

    #[test]
    fn rejects_negative_nu() {
        let g = make_grid::<f64>(1, 5).unwrap();
        let op = AssembledOperator::laplacian(&g);
        let z = Field::zeros(&g);
        assert!(ControlProblem::new(op, z.clone(), z, -1.0, None).is_err());
    }

    #[test]
    fn adjoint_with_inactive_obstacle() {
        let pb = lap_problem(31, |x| -0.1 * x[0], 1e-3);
        let g = *pb.grid();
        let phi = Field::constant(&g, -10.0);
        let y = pb.op.solve_linear(&pb.f, 1e-12).unwrap();
        let adj = solve_adjoint(&pb, &y, &phi, 1e-2).unwrap();
        assert!(adj.mu.values().iter().all(|&m| m == 0.0));
        let expected = pb.op.adjoint().solve_linear(&y.sub(&pb.z).unwrap(), 1e-12).unwrap();
        assert!(adj.p.sub(&expected).unwrap().linf() < 1e-12);
    }

    #[test]
    fn adjoint_vanishes_on_matched_target() {
        let g = make_grid::<f64>(1, 31).unwrap();
        let op = AssembledOperator::laplacian(&g);
        let f = Field::constant(&g, -8.0);
        let phi = Field::constant(&g, -0.5);
        let y = solve_penalized(&op, &f, &phi, 1e-2, &NewtonParams::default(), None).unwrap().y;
        let pb = ControlProblem::new(op, f, y.clone(), 1e-3, None).unwrap();
        let adj = solve_adjoint(&pb, &y, &phi, 1e-2).unwrap();
        assert_eq!(adj.p.linf(), 0.0);
        assert_eq!(adj.mu.linf(), 0.0);
    }

    #[test]
    fn adjoint_bound_by_coercivity() {
        let g = make_grid::<f64>(2, 15).unwrap();
        let spec = OperatorSpec {
            diffusion: vec![constant_coefficient(1.0), constant_coefficient(2.0)],
            drift: vec![constant_coefficient(1.5), constant_coefficient(-0.5)],
            reaction: constant_coefficient(0.0),
            ellipticity: None,
        };
        let op = AssembledOperator::assemble(&spec, &g).unwrap();
        let m = op.estimate_coercivity(EnergyNorm::H1).unwrap();
        let f = Field::constant(&g, -8.0);
        let z = Field::from_fn(&g, |x| -0.3 * x[0] * x[1]);
        let pb = ControlProblem::new(op, f, z, 1e-3, None).unwrap();
        let phi = Field::from_fn(&g, |x| -0.2 * (PI * x[0]).sin() * (PI * x[1]).sin());
        for delta in [1e-1, 1e-3] {
            let y = solve_penalized(&pb.op, &pb.f, &phi, delta, &NewtonParams::default(), None).unwrap().y;
            let adj = solve_adjoint(&pb, &y, &phi, delta).unwrap();
            let residual = pb
                .op
                .apply_adjoint(&adj.p)
                .unwrap()
                .add(&adj.mu)
                .unwrap()
                .sub(&y.sub(&pb.z).unwrap())
                .unwrap()
                .l2();
            assert!(residual < 1e-8);
            assert!(norms(&adj.p).h1 <= y.sub(&pb.z).unwrap().l2() / m);
        }
    }

    #[test]
    fn objective_parts() {
        let pb = lap_problem(15, |_| 0.3, 1.0);
        let g = *pb.grid();
        let zero = objective(&pb, &Field::zeros(&g), &pb.z).unwrap();
        assert_eq!(zero.j, 0.0);
        let phi = sine(&g, 1.0);
        let mut anchored = pb.clone();
        anchored.anchor = Some(phi.clone());
        let v = objective(&anchored, &phi, &pb.z).unwrap();
        assert_eq!(v.anchor_term, 0.0);
        let y = Field::constant(&g, 0.1);
        let w = objective(&pb, &phi, &y).unwrap();
        assert_eq!(w.j, w.tracking + w.regularization + w.anchor_term);
    }

    #[test]
    fn regularization_of_sine_eigenfunction() {
        let pb = lap_problem(255, |_| 0.0, 2.0);
        let g = *pb.grid();
        let phi = sine(&g, 1.0);
        let v = objective(&pb, &phi, &pb.z).unwrap();
        let h = g.h();
        let lam = 4.0 / (h * h) * (PI * h / 2.0).sin().powi(2);
        let oracle = lam * lam * inner_product(&phi, &phi).unwrap();
        assert!((v.j - oracle).abs() < 1e-9 * oracle);
        assert!((v.j - PI.powi(4) / 2.0).abs() < 0.01 * PI.powi(4) / 2.0);
    }

    #[test]
    fn gradient_trivial_cases() {
        let pb = lap_problem(15, |_| 0.0, 1.0);
        let g = *pb.grid();
        let zero = Field::zeros(&g);
        let adj = AdjointState { p: zero.clone(), mu: zero.clone() };
        assert_eq!(gradient(&pb, &zero, &adj).unwrap().linf(), 0.0);

        let mut pb0 = pb.clone();
        pb0.nu = 0.0;
        let phi = Field::constant(&g, -10.0);
        let y = pb0.op.solve_linear(&pb0.f, 1e-12).unwrap();
        let adj = solve_adjoint(&pb0, &y, &phi, 1e-2).unwrap();
        assert_eq!(gradient(&pb0, &phi, &adj).unwrap().linf(), 0.0);
    }

    #[test]
    fn sensitivity_vanishes_for_untouched_obstacle() {
        let pb = lap_problem(15, |_| 0.0, 1.0);
        let g = *pb.grid();
        let phi = Field::constant(&g, -10.0);
        let y = pb.op.solve_linear(&pb.f, 1e-12).unwrap();
        let dir = Field::constant(&g, 1.0);
        let v = gateaux_sensitivity(&pb, &y, &phi, 1e-2, &dir).unwrap();
        assert_eq!(v.linf(), 0.0);
    }

    fn manufactured(n: usize) -> (ControlProblem<f64>, Field<f64>) {
        let g = make_grid::<f64>(1, n).unwrap();
        let op = AssembledOperator::laplacian(&g);
        let f = Field::constant(&g, -8.0);
        let target_phi = sine(&g, -0.2);
        let z = solve_penalized(&op, &f, &target_phi, 1e-3, &NewtonParams::default(), None).unwrap().y;
        let pb = ControlProblem::new(op, f, z, 1e-4, None).unwrap();
        let phi = Field::from_fn(&g, |x| -0.35 * (PI * x[0]).sin() + 0.05 * (3.0 * PI * x[0]).sin());
        (pb, phi)
    }

    #[test]
    fn sensitivity_matches_difference_quotients() {
        let (pb, phi) = manufactured(63);
        let g = *pb.grid();
        let delta = 1e-2;
        let newton = NewtonParams { tol: 1e-13, ..NewtonParams::default() };
        let y = solve_penalized(&pb.op, &pb.f, &phi, delta, &newton, None).unwrap().y;
        let dir = Field::from_fn(&g, |x| (2.0 * PI * x[0]).sin());
        let v = gateaux_sensitivity(&pb, &y, &phi, delta, &dir).unwrap();
        let mut errs = Vec::new();
        for t in [1e-2, 1e-3, 1e-4] {
            let yt = solve_penalized(&pb.op, &pb.f, &phi.axpy(t, &dir).unwrap(), delta, &newton, Some(&y)).unwrap().y;
            let q = yt.sub(&y).unwrap().scale(1.0 / t);
            errs.push(q.sub(&v).unwrap().l2());
        }
        assert!(errs[1] < errs[0] && errs[2] < errs[1], "{errs:?}");
    }

    #[test]
    fn chain_identity_tracking_derivative() {
        let (pb, phi) = manufactured(63);
        let g = *pb.grid();
        let delta = 1e-2;
        let y = solve_penalized(&pb.op, &pb.f, &phi, delta, &NewtonParams::default(), None).unwrap().y;
        let adj = solve_adjoint(&pb, &y, &phi, delta).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        for _ in 0..5 {
            let dir = Field::from_fn(&g, |_| rng.gen_range(-1.0..1.0));
            let v = gateaux_sensitivity(&pb, &y, &phi, delta, &dir).unwrap();
            let lhs = inner_product(&y.sub(&pb.z).unwrap(), &v).unwrap();
            let rhs = inner_product(&adj.mu, &dir).unwrap();
            assert!((lhs - rhs).abs() <= 1e-9 * lhs.abs().max(rhs.abs()), "{lhs} {rhs}");
        }
    }

    #[test]
    fn shifted_adjoint_identity() {
        let (pb, phi) = manufactured(31);
        let g = *pb.grid();
        let y = solve_penalized(&pb.op, &pb.f, &phi, 1e-2, &NewtonParams::default(), None).unwrap().y;
        let shift = PenaltyParams::new(1e-2).unwrap().apply_derivative(&y, &phi).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        for _ in 0..10 {
            let v = Field::from_fn(&g, |_| rng.gen_range(-1.0..1.0));
            let p = Field::from_fn(&g, |_| rng.gen_range(-1.0..1.0));
            let bv = shift.zip_map(&v, |b, x| b * x).unwrap();
            let bp = shift.zip_map(&p, |b, x| b * x).unwrap();
            let lhs = inner_product(&pb.op.apply(&v).unwrap().add(&bv).unwrap(), &p).unwrap();
            let rhs = inner_product(&v, &pb.op.apply_adjoint(&p).unwrap().add(&bp).unwrap()).unwrap();
            assert!((lhs - rhs).abs() <= 1e-12 * lhs.abs().max(1.0));
        }
    }

    #[test]
    fn multiplier_supported_where_constraint_violated() {
        let (pb, phi) = manufactured(63);
        let y = solve_penalized(&pb.op, &pb.f, &phi, 1e-2, &NewtonParams::default(), None).unwrap().y;
        let adj = solve_adjoint(&pb, &y, &phi, 1e-2).unwrap();
        let mut support = 0;
        for k in 0..y.len() {
            if y.values()[k] >= phi.values()[k] {
                assert_eq!(adj.mu.values()[k], 0.0);
            } else if adj.mu.values()[k] != 0.0 {
                support += 1;
            }
        }
        assert!(support > 0);
    }

    #[test]
    fn gradient_matches_central_difference_with_anchor() {
        let (mut pb, phi) = manufactured(31);
        let g = *pb.grid();
        pb.anchor = Some(sine(&g, -0.25));
        let delta = 1e-2;
        let newton = NewtonParams { tol: 1e-13, ..NewtonParams::default() };
        let base = evaluate(&pb, &phi, delta, &newton, None).unwrap();
        let adj = solve_adjoint(&pb, &base.state.y, &phi, delta).unwrap();
        let grad = gradient(&pb, &phi, &adj).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        let t = 1e-5;
        for _ in 0..5 {
            let dir = Field::from_fn(&g, |_| rng.gen_range(-1.0..1.0));
            let jp = evaluate(&pb, &phi.axpy(t, &dir).unwrap(), delta, &newton, Some(&base.state.y)).unwrap();
            let jm = evaluate(&pb, &phi.axpy(-t, &dir).unwrap(), delta, &newton, Some(&base.state.y)).unwrap();
            let fd = (jp.objective.j - jm.objective.j) / (2.0 * t);
            let an = inner_product(&grad, &dir).unwrap();
            assert!((an - fd).abs() / an.abs().max(1.0) <= 1e-5, "{an} {fd}");
        }
    }
}
