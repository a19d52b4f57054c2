//! Penalized state equation `A y + beta_delta(y - phi) = f` solved by damped
//! Newton, and its continuation along a decreasing penalty schedule.

use log::debug;

use crate::error::{invalid, Error, Result};
use crate::grid::{norms, Field};
use crate::operator::{solve_matrix, AssembledOperator};
use crate::penalty::PenaltyParams;
use crate::scalar::Real;

#[derive(Clone, Debug, PartialEq)]
pub struct NewtonParams<T> {
    /// Relative tolerance on `||F(y)||_l2`, scaled by `max(1, ||f||_l2)`.
    pub tol: T,
    pub max_iterations: usize,
    pub backtrack_factor: T,
    pub armijo_slope: T,
    pub max_backtracks: usize,
}

impl<T: Real> Default for NewtonParams<T> {
    fn default() -> Self {
        Self {
            tol: T::lit(1e-11),
            max_iterations: 100,
            backtrack_factor: T::lit(0.5),
            armijo_slope: T::lit(1e-4),
            max_backtracks: 30,
        }
    }
}

/// Solution of the penalized state equation at one `delta`.
#[derive(Clone, Debug)]
pub struct PenalizedState<T: Real> {
    pub y: Field<T>,
    pub delta: T,
    pub newton_iterations: usize,
    pub residual_norm: T,
    /// `beta_delta(y - phi)`, nodewise nonpositive.
    pub xi: Field<T>,
}

/// Residual `A y + beta_delta(y - phi) - f`.
pub fn penalized_residual<T: Real>(
    op: &AssembledOperator<T>,
    f: &Field<T>,
    phi: &Field<T>,
    y: &Field<T>,
    penalty: &PenaltyParams<T>,
) -> Result<Field<T>> {
    op.apply(y)?.add(&penalty.apply(y, phi)?)?.sub(f)
}

/// Damped Newton for the penalized equation. `initial = None` starts from
/// the unconstrained solution `A^-1 f`.
pub fn solve_penalized<T: Real>(
    op: &AssembledOperator<T>,
    f: &Field<T>,
    phi: &Field<T>,
    delta: T,
    params: &NewtonParams<T>,
    initial: Option<&Field<T>>,
) -> Result<PenalizedState<T>> {
    let penalty = PenaltyParams::new(delta)?;
    let grid = op.grid();
    grid.check_same(f.grid())?;
    grid.check_same(phi.grid())?;
    if !(params.tol > T::zero()) {
        return Err(invalid("newton_tol", "must be positive"));
    }
    let target = params.tol * T::one().max(f.l2());
    // direct solves land near roundoff; the check only guards breakdown
    let lin_tol = T::lit(1e-8);

    let mut y = match initial {
        Some(init) => {
            grid.check_same(init.grid())?;
            init.clone()
        }
        None => op.solve_linear(f, T::lit(1e-10))?,
    };
    let mut residual = penalized_residual(op, f, phi, &y, &penalty)?;
    let mut res_norm = residual.l2();
    let mut iterations = 0;

    while res_norm > target {
        if iterations >= params.max_iterations {
            return Err(stagnation(delta, iterations, res_norm));
        }
        let shift = penalty.apply_derivative(&y, phi)?;
        let jac = op.matrix().add_diagonal(shift.values());
        let step = solve_matrix(&jac, grid, &residual.scale(-T::one()), lin_tol)?;

        let mut t = T::one();
        let mut accepted = None;
        for _ in 0..=params.max_backtracks {
            let trial = y.axpy(t, &step)?;
            let r = penalized_residual(op, f, phi, &trial, &penalty)?;
            let rn = r.l2();
            if rn <= (T::one() - params.armijo_slope * t) * res_norm {
                accepted = Some((trial, r, rn));
                break;
            }
            t *= params.backtrack_factor;
        }
        iterations += 1;
        match accepted {
            Some((trial, r, rn)) => {
                y = trial;
                residual = r;
                res_norm = rn;
            }
            None => {
                // no sufficient decrease; either at roundoff level or stuck
                if res_norm <= target * T::lit(100.0) {
                    break;
                }
                return Err(stagnation(delta, iterations, res_norm));
            }
        }
    }
    if res_norm > target * T::lit(100.0) {
        return Err(stagnation(delta, iterations, res_norm));
    }
    debug!(
        "penalized solve delta={delta:e}: {iterations} Newton steps, residual {res_norm:e}"
    );
    let xi = penalty.apply(&y, phi)?;
    Ok(PenalizedState {
        y,
        delta,
        newton_iterations: iterations,
        residual_norm: res_norm,
        xi,
    })
}

fn stagnation<T: Real>(delta: T, iterations: usize, residual: T) -> Error {
    Error::NewtonStagnation {
        delta: delta.to_f64_lossy(),
        iterations,
        residual: residual.to_f64_lossy(),
    }
}

/// Distance of a penalized state from a reference state.
#[derive(Clone, Copy, Debug)]
pub struct ReferenceError<T> {
    pub linf: T,
    pub h1: T,
}

#[derive(Clone, Debug)]
pub struct ContinuationPoint<T: Real> {
    pub state: PenalizedState<T>,
    /// `||(phi - y)^+||_inf`.
    pub violation: T,
    pub versus_reference: Option<ReferenceError<T>>,
}

pub fn violation<T: Real>(y: &Field<T>, phi: &Field<T>) -> Result<T> {
    Ok(phi.sub(y)?.values().iter().fold(T::zero(), |m, &v| m.max(v)))
}

/// Solves along a strictly decreasing schedule, warm-starting each solve
/// from the previous one. When `reference` is given (typically the VI
/// solution) each point records its distance to it.
pub fn delta_continuation<T: Real>(
    op: &AssembledOperator<T>,
    f: &Field<T>,
    phi: &Field<T>,
    schedule: &[T],
    params: &NewtonParams<T>,
    reference: Option<&Field<T>>,
) -> Result<Vec<ContinuationPoint<T>>> {
    validate_schedule(schedule)?;
    let mut path = Vec::with_capacity(schedule.len());
    let mut warm: Option<Field<T>> = None;
    for &delta in schedule {
        let state = solve_penalized(op, f, phi, delta, params, warm.as_ref())?;
        let versus_reference = match reference {
            Some(r) => {
                let e = state.y.sub(r)?;
                let n = norms(&e);
                Some(ReferenceError { linf: n.linf, h1: n.h1 })
            }
            None => None,
        };
        let violation = violation(&state.y, phi)?;
        warm = Some(state.y.clone());
        path.push(ContinuationPoint {
            state,
            violation,
            versus_reference,
        });
    }
    Ok(path)
}

pub fn validate_schedule<T: Real>(schedule: &[T]) -> Result<()> {
    if schedule.is_empty() {
        return Err(invalid("delta_schedule", "must not be empty"));
    }
    for (i, &d) in schedule.iter().enumerate() {
        PenaltyParams::new(d)?;
        if i > 0 && !(d < schedule[i - 1]) {
            return Err(invalid("delta_schedule", "must be strictly decreasing"));
        }
    }
    Ok(())
}

/// Geometric schedule `from, from/factor, ...` down to `to` inclusive.
pub fn geometric_schedule<T: Real>(from: T, to: T, factor: T) -> Vec<T> {
    let mut out = Vec::new();
    let mut d = from;
    let stop = to * (T::one() - T::lit(1e-9));
    while d >= stop {
        out.push(d);
        d /= factor;
    }
    out
}
