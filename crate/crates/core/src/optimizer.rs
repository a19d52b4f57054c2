//! Outer minimization over the obstacle.
//!
//! Two drivers share the same `delta` continuation: a (projected) gradient
//! method with Barzilai-Borwein steps and an Armijo safeguard, and a damped
//! fixed-point iteration on the stationarity equation
//! `nu L_h L_h phi + mu (+ phi - anchor) = 0`.

use crate::adjoint::{evaluate, gradient, solve_adjoint, AdjointState, ControlProblem, Evaluation, ObjectiveValue};
use crate::error::{invalid, Error, Result};
use crate::grid::{inner_product, norms, Field};
use crate::kkt::{audit, KktResiduals};
use crate::operator::{solve_matrix, AssembledOperator};
use crate::scalar::Real;
use crate::state::{validate_schedule, NewtonParams};
use crate::vi::{solve_vi, ViParams};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Method {
    Gradient,
    FixedPoint,
}

impl std::str::FromStr for Method {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "gradient" => Ok(Method::Gradient),
            "fixed-point" | "fixed_point" => Ok(Method::FixedPoint),
            other => Err(invalid("method", format!("expected gradient or fixed-point, got {other:?}"))),
        }
    }
}

impl std::fmt::Display for Method {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Method::Gradient => "gradient",
            Method::FixedPoint => "fixed-point",
        })
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ArmijoParams<T> {
    /// Sufficient-decrease constant `c` in `J(phi_t) <= J(phi) - c (g, phi - phi_t)`.
    pub slope: T,
    pub backtrack_factor: T,
    pub max_backtracks: usize,
    /// Step tried before any Barzilai-Borwein information exists.
    pub initial_step: T,
    pub min_step: T,
    pub max_step: T,
}

impl<T: Real> Default for ArmijoParams<T> {
    fn default() -> Self {
        Self {
            slope: T::lit(1e-4),
            backtrack_factor: T::lit(0.5),
            max_backtracks: 40,
            initial_step: T::one(),
            min_step: T::lit(1e-12),
            max_step: T::lit(1e12),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct OptimizerParams<T> {
    pub method: Method,
    /// Strictly decreasing penalty parameters, one outer stage each.
    pub schedule: Vec<T>,
    /// Total outer-iteration budget over all stages.
    pub max_iterations: usize,
    /// Per-stage cap; `None` spreads the budget evenly, the last stage
    /// receiving whatever is left.
    pub stage_iterations: Option<usize>,
    pub armijo: ArmijoParams<T>,
    pub omega_fp: T,
    /// Gradient: `||g||_l2 <= tol`. Fixed point:
    /// `||phi_{k+1} - phi_k||_l2 <= tol * max(1, ||phi_k||_l2)`.
    pub tol: T,
    /// Optional nodewise box `lo <= phi <= hi`, enforced by clipping.
    pub bounds: Option<(T, T)>,
    pub newton: NewtonParams<T>,
    /// Fixed point aborts once `||phi_k|| > divergence_factor * max(1, ||phi_0||)`.
    pub divergence_factor: T,
    /// Compare the final penalized state with the VI solution at `phi_opt`.
    pub vi_check: bool,
}

impl<T: Real> Default for OptimizerParams<T> {
    fn default() -> Self {
        Self {
            method: Method::Gradient,
            schedule: vec![T::lit(1e-2), T::lit(1e-3), T::lit(1e-4)],
            max_iterations: 200,
            stage_iterations: None,
            armijo: ArmijoParams::default(),
            omega_fp: T::lit(0.5),
            tol: T::lit(1e-8),
            bounds: None,
            newton: NewtonParams::default(),
            divergence_factor: T::lit(1e6),
            vi_check: true,
        }
    }
}

impl<T: Real> OptimizerParams<T> {
    pub fn validate(&self) -> Result<()> {
        validate_schedule(&self.schedule)?;
        let pos = |name: &'static str, v: T| {
            if v > T::zero() && v.is_finite() {
                Ok(())
            } else {
                Err(invalid(name, format!("must be positive and finite, got {v}")))
            }
        };
        pos("tol", self.tol)?;
        pos("armijo.slope", self.armijo.slope)?;
        pos("armijo.initial_step", self.armijo.initial_step)?;
        pos("armijo.min_step", self.armijo.min_step)?;
        pos("divergence_factor", self.divergence_factor)?;
        if self.armijo.slope >= T::one() {
            return Err(invalid("armijo.slope", "must lie in (0, 1)"));
        }
        if !(self.armijo.backtrack_factor > T::zero() && self.armijo.backtrack_factor < T::one()) {
            return Err(invalid("armijo.backtrack_factor", "must lie in (0, 1)"));
        }
        if !(self.armijo.max_step >= self.armijo.min_step) {
            return Err(invalid("armijo.max_step", "must be at least min_step"));
        }
        if !(self.omega_fp > T::zero() && self.omega_fp <= T::one()) {
            return Err(invalid("omega_fp", format!("must lie in (0, 1], got {}", self.omega_fp)));
        }
        if self.max_iterations == 0 {
            return Err(invalid("max_iterations", "must be at least 1"));
        }
        if let Some((lo, hi)) = self.bounds {
            if !(lo <= hi) {
                return Err(invalid("bounds", format!("lower bound {lo} exceeds upper bound {hi}")));
            }
        }
        Ok(())
    }

    fn stage_cap(&self, stage: usize, used: usize) -> usize {
        let remaining = self.max_iterations.saturating_sub(used);
        if stage + 1 == self.schedule.len() {
            return remaining;
        }
        let even = self.max_iterations.div_ceil(self.schedule.len());
        self.stage_iterations.unwrap_or(even).min(remaining)
    }
}

/// One row of the outer-iteration log, describing iterate `iter`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct IterationRecord<T> {
    pub iter: usize,
    pub stage: usize,
    pub delta: T,
    pub objective: ObjectiveValue<T>,
    pub grad_norm: T,
    /// Step that produced this iterate (`0` for the first of a run).
    pub step: T,
    /// `||phi_iter - phi_{iter-1}||_l2`.
    pub change: T,
    pub backtracks: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub enum Termination<T> {
    Converged,
    IterationCap,
    LineSearchFailed { delta: T, iteration: usize },
}

#[derive(Clone, Debug)]
pub struct OptResult<T: Real> {
    pub method: Method,
    pub phi: Field<T>,
    pub y: Field<T>,
    pub p: Field<T>,
    pub mu: Field<T>,
    pub xi: Field<T>,
    /// Penalty parameter of the final stage.
    pub delta: T,
    pub objective: ObjectiveValue<T>,
    pub history: Vec<IterationRecord<T>>,
    pub kkt: KktResiduals<T>,
    /// The final stage met its stopping test.
    pub converged: bool,
    pub termination: Termination<T>,
    /// `||y - y_vi||_h1` against the VI solution at `phi`, when requested.
    pub vi_gap: Option<T>,
}

impl<T: Real> OptResult<T> {
    pub fn j_history(&self) -> Vec<T> {
        self.history.iter().map(|r| r.objective.j).collect()
    }

    pub fn grad_norm_history(&self) -> Vec<T> {
        self.history.iter().map(|r| r.grad_norm).collect()
    }
}

pub fn optimize<T: Real>(problem: &ControlProblem<T>, phi0: &Field<T>, params: &OptimizerParams<T>) -> Result<OptResult<T>> {
    match params.method {
        Method::Gradient => optimize_gradient(problem, phi0, params),
        Method::FixedPoint => optimize_fixed_point(problem, phi0, params),
    }
}

fn clip<T: Real>(phi: Field<T>, bounds: Option<(T, T)>) -> Field<T> {
    match bounds {
        Some((lo, hi)) => phi.map(|v| v.max(lo).min(hi)),
        None => phi,
    }
}

fn check_start<T: Real>(problem: &ControlProblem<T>, phi0: &Field<T>, params: &OptimizerParams<T>) -> Result<()> {
    params.validate()?;
    problem.grid().check_same(phi0.grid())?;
    if let Some(i) = phi0.values().iter().position(|v| !v.is_finite()) {
        return Err(Error::NonFinite { index: i });
    }
    Ok(())
}

/// Trial evaluations that fail inside Newton are treated as rejected steps.
fn try_evaluate<T: Real>(
    problem: &ControlProblem<T>,
    phi: &Field<T>,
    delta: T,
    newton: &NewtonParams<T>,
    warm: &Field<T>,
) -> Result<Option<Evaluation<T>>> {
    match evaluate(problem, phi, delta, newton, Some(warm)) {
        Ok(e) if e.objective.j.is_finite() => Ok(Some(e)),
        Ok(_) | Err(Error::NewtonStagnation { .. }) | Err(Error::NonFinite { .. }) => Ok(None),
        Err(e) => Err(e),
    }
}

struct Iterate<T: Real> {
    phi: Field<T>,
    eval: Evaluation<T>,
    adjoint: AdjointState<T>,
    grad: Field<T>,
}

fn iterate_at<T: Real>(
    problem: &ControlProblem<T>,
    phi: Field<T>,
    eval: Evaluation<T>,
    delta: T,
) -> Result<Iterate<T>> {
    let adjoint = solve_adjoint(problem, &eval.state.y, &phi, delta)?;
    let grad = gradient(problem, &phi, &adjoint)?;
    Ok(Iterate { phi, eval, adjoint, grad })
}

/// Projected gradient descent on `J_delta`, stage by stage along the
/// schedule, each stage warm-started from the previous one.
pub fn optimize_gradient<T: Real>(
    problem: &ControlProblem<T>,
    phi0: &Field<T>,
    params: &OptimizerParams<T>,
) -> Result<OptResult<T>> {
    check_start(problem, phi0, params)?;
    let ar = &params.armijo;
    let mut history = Vec::new();
    let mut phi = clip(phi0.clone(), params.bounds);
    let mut warm: Option<Field<T>> = None;
    let mut t_prev = ar.initial_step;
    let mut used = 0usize;
    let mut step_taken = T::zero();
    let mut change = T::zero();
    let mut backtracks = 0usize;
    let mut termination = Termination::IterationCap;
    let mut stage_converged = false;

    'stages: for (stage, &delta) in params.schedule.iter().enumerate() {
        let cap = params.stage_cap(stage, used);
        let eval = evaluate(problem, &phi, delta, &params.newton, warm.as_ref())?;
        let mut cur = iterate_at(problem, phi.clone(), eval, delta)?;
        let mut prev: Option<(Field<T>, Field<T>)> = None;
        let mut k = 0usize;
        stage_converged = false;
        loop {
            let gn = cur.grad.l2();
            history.push(IterationRecord {
                iter: history.len(),
                stage,
                delta,
                objective: cur.eval.objective,
                grad_norm: gn,
                step: step_taken,
                change,
                backtracks,
            });
            if gn <= params.tol {
                stage_converged = true;
                break;
            }
            if k >= cap {
                break;
            }
            let mut t = match &prev {
                Some((phi_old, g_old)) => {
                    let s = cur.phi.sub(phi_old)?;
                    let yv = cur.grad.sub(g_old)?;
                    let sy = inner_product(&s, &yv)?;
                    if sy > T::zero() {
                        inner_product(&s, &s)? / sy
                    } else {
                        t_prev
                    }
                }
                None => t_prev,
            }
            .max(ar.min_step)
            .min(ar.max_step);

            let mut accepted = None;
            for b in 0..=ar.max_backtracks {
                let trial = clip(cur.phi.axpy(-t, &cur.grad)?, params.bounds);
                let moved = cur.phi.sub(&trial)?;
                if moved.linf() == T::zero() {
                    // projected step is stationary for the box
                    stage_converged = true;
                    break;
                }
                let decrease = inner_product(&cur.grad, &moved)?;
                if let Some(ev) = try_evaluate(problem, &trial, delta, &params.newton, &cur.eval.state.y)? {
                    if ev.objective.j <= cur.eval.objective.j - ar.slope * decrease {
                        accepted = Some((trial, ev, b, moved.l2()));
                        break;
                    }
                }
                t *= ar.backtrack_factor;
            }
            if stage_converged {
                break;
            }
            let Some((trial, ev, b, moved)) = accepted else {
                log::warn!("line search failed at delta = {delta}, iteration {}", history.len() - 1);
                termination = Termination::LineSearchFailed {
                    delta,
                    iteration: history.len() - 1,
                };
                phi = cur.phi;
                warm = Some(cur.eval.state.y);
                break 'stages;
            };
            let next = iterate_at(problem, trial, ev, delta)?;
            let old = std::mem::replace(&mut cur, next);
            prev = Some((old.phi, old.grad));
            step_taken = t;
            t_prev = t;
            change = moved;
            backtracks = b;
            k += 1;
            used += 1;
        }
        log::info!(
            "stage {stage}: delta = {delta}, J = {}, |g| = {}, iterations = {k}",
            cur.eval.objective.j,
            cur.grad.l2()
        );
        phi = cur.phi;
        warm = Some(cur.eval.state.y);
        step_taken = T::zero();
        change = T::zero();
        backtracks = 0;
    }
    if stage_converged && termination == Termination::IterationCap {
        termination = Termination::Converged;
    }
    let last_delta = match termination {
        Termination::LineSearchFailed { delta, .. } => delta,
        _ => *params.schedule.last().expect("validated schedule"),
    };
    finish(problem, Method::Gradient, phi, last_delta, warm, history, termination, params)
}

/// Applies `(nu L_h L_h + c I)^{-1}`, where `c = 1` with an anchor and `0`
/// otherwise.
fn stationarity_solve<T: Real>(problem: &ControlProblem<T>, rhs: &Field<T>) -> Result<Field<T>> {
    match &problem.anchor {
        None => biharmonic_solve_with(problem.laplacian(), problem.nu, rhs),
        Some(_) => {
            let l = problem.laplacian().matrix();
            let ones = vec![T::one(); rhs.len()];
            let m = l.matmul(l).scale(problem.nu).add_diagonal(&ones);
            solve_matrix(&m, problem.grid(), rhs, T::lit(1e-10))
        }
    }
}

/// Damped fixed-point iteration: `phi_hat` solves
/// `nu L_h L_h phi_hat (+ phi_hat) = -mu_k (+ anchor)`, then
/// `phi_{k+1} = (1 - omega) phi_k + omega phi_hat`. No descent guarantee.
pub fn optimize_fixed_point<T: Real>(
    problem: &ControlProblem<T>,
    phi0: &Field<T>,
    params: &OptimizerParams<T>,
) -> Result<OptResult<T>> {
    check_start(problem, phi0, params)?;
    if !(problem.nu > T::zero()) {
        return Err(invalid("nu", "the fixed-point method requires nu > 0"));
    }
    let omega = params.omega_fp;
    let limit = params.divergence_factor * T::one().max(phi0.l2());
    let mut history = Vec::new();
    let mut phi = clip(phi0.clone(), params.bounds);
    let mut warm: Option<Field<T>> = None;
    let mut used = 0usize;
    let mut change = T::zero();
    let mut stage_converged = false;

    for (stage, &delta) in params.schedule.iter().enumerate() {
        let cap = params.stage_cap(stage, used);
        stage_converged = false;
        let mut k = 0usize;
        loop {
            let eval = evaluate(problem, &phi, delta, &params.newton, warm.as_ref())?;
            let it = iterate_at(problem, phi, eval, delta)?;
            history.push(IterationRecord {
                iter: history.len(),
                stage,
                delta,
                objective: it.eval.objective,
                grad_norm: it.grad.l2(),
                step: if history.is_empty() { T::zero() } else { omega },
                change,
                backtracks: 0,
            });
            warm = Some(it.eval.state.y);
            phi = it.phi;
            if k >= cap {
                break;
            }
            let mut rhs = it.adjoint.mu.scale(-T::one());
            if let Some(a) = &problem.anchor {
                rhs = rhs.add(a)?;
            }
            let phi_hat = stationarity_solve(problem, &rhs)?;
            let next = clip(phi.scale(T::one() - omega).axpy(omega, &phi_hat)?, params.bounds);
            let norm = next.l2();
            if !norm.is_finite() || norm > limit {
                log::error!("fixed point diverged at iteration {}: |phi| = {norm}", history.len());
                return Err(Error::Divergence {
                    iteration: history.len(),
                    norm: norm.to_f64_lossy(),
                });
            }
            change = next.sub(&phi)?.l2();
            let scale = T::one().max(phi.l2());
            phi = next;
            k += 1;
            used += 1;
            if change <= params.tol * scale {
                stage_converged = true;
                // log the accepted fixed point itself
                let eval = evaluate(problem, &phi, delta, &params.newton, warm.as_ref())?;
                let it = iterate_at(problem, phi, eval, delta)?;
                history.push(IterationRecord {
                    iter: history.len(),
                    stage,
                    delta,
                    objective: it.eval.objective,
                    grad_norm: it.grad.l2(),
                    step: omega,
                    change,
                    backtracks: 0,
                });
                warm = Some(it.eval.state.y);
                phi = it.phi;
                break;
            }
        }
        change = T::zero();
    }
    let termination = if stage_converged {
        Termination::Converged
    } else {
        Termination::IterationCap
    };
    let last = *params.schedule.last().expect("validated schedule");
    finish(problem, Method::FixedPoint, phi, last, warm, history, termination, params)
}

#[allow(clippy::too_many_arguments)]
fn finish<T: Real>(
    problem: &ControlProblem<T>,
    method: Method,
    phi: Field<T>,
    delta: T,
    warm: Option<Field<T>>,
    history: Vec<IterationRecord<T>>,
    termination: Termination<T>,
    params: &OptimizerParams<T>,
) -> Result<OptResult<T>> {
    let eval = evaluate(problem, &phi, delta, &params.newton, warm.as_ref())?;
    let adjoint = solve_adjoint(problem, &eval.state.y, &phi, delta)?;
    let kkt = audit(problem, &phi, &eval.state.y, &adjoint.p, &adjoint.mu, &eval.state.xi, problem.nu)?;
    let vi_gap = if params.vi_check && problem.op.check_m_matrix().is_ok() {
        let vi = solve_vi(&problem.op, &problem.f, &phi, &ViParams::default())?;
        Some(norms(&eval.state.y.sub(&vi.y)?).h1)
    } else {
        None
    };
    Ok(OptResult {
        method,
        converged: termination == Termination::Converged,
        phi,
        y: eval.state.y,
        p: adjoint.p,
        mu: adjoint.mu,
        xi: eval.state.xi,
        delta,
        objective: eval.objective,
        history,
        kkt,
        termination,
        vi_gap,
    })
}

/// Solves `nu L_h (L_h phi) = rhs` with the Dirichlet `-Laplacian` `L_h`
/// by two successive Laplacian solves.
pub fn biharmonic_solve<T: Real>(nu: T, rhs: &Field<T>) -> Result<Field<T>> {
    biharmonic_solve_with(&AssembledOperator::laplacian(rhs.grid()), nu, rhs)
}

/// [`biharmonic_solve`] reusing an assembled (and possibly factored) `L_h`.
pub fn biharmonic_solve_with<T: Real>(lap: &AssembledOperator<T>, nu: T, rhs: &Field<T>) -> Result<Field<T>> {
    if !(nu > T::zero()) || !nu.is_finite() {
        return Err(invalid("nu", format!("must be positive and finite, got {nu}")));
    }
    lap.grid().check_same(rhs.grid())?;
    let tol = T::lit(1e-10);
    let w = lap.solve_linear(&rhs.scale(T::one() / nu), tol)?;
    lap.solve_linear(&w, tol)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::make_grid;
    use std::f64::consts::PI;

    fn manufactured(n: usize, nu: f64) -> (ControlProblem<f64>, Field<f64>) {
        let g = make_grid(1, n).unwrap();
        let op = AssembledOperator::laplacian(&g);
        let f = Field::constant(&g, -8.0);
        let phi_true = Field::from_fn(&g, |x| -0.2 * (PI * x[0]).sin());
        let z = solve_vi(&op, &f, &phi_true, &ViParams::default()).unwrap().y;
        (ControlProblem::new(op, f, z, nu, None).unwrap(), phi_true)
    }

    #[test]
    fn biharmonic_eigenfunction() {
        for n in [15, 63] {
            let g = make_grid::<f64>(1, n).unwrap();
            let h = g.h();
            let lam = 4.0 / (h * h) * (PI * h / 2.0).sin().powi(2);
            let nu = 1e-3;
            let s = Field::from_fn(&g, |x| (PI * x[0]).sin());
            let phi = biharmonic_solve(nu, &s.scale(nu * lam * lam)).unwrap();
            assert!(phi.sub(&s).unwrap().linf() < 1e-9, "n = {n}");
        }
    }

    #[test]
    fn biharmonic_zero_and_scaling() {
        let g = make_grid::<f64>(2, 9).unwrap();
        let zero = biharmonic_solve(1.0, &Field::zeros(&g)).unwrap();
        assert_eq!(zero.linf(), 0.0);
        let rhs = Field::from_fn(&g, |x| x[0] * (1.0 - x[1]) + 0.3);
        let a = biharmonic_solve(0.5, &rhs).unwrap();
        let b = biharmonic_solve(1.0, &rhs).unwrap();
        let diff = a.scale(0.5).sub(&b).unwrap().linf();
        assert!(diff <= 1e-12 * a.linf(), "{diff}");
        assert!(biharmonic_solve(0.0, &rhs).is_err());
    }

    #[test]
    fn validation() {
        let ok = OptimizerParams::<f64>::default();
        assert!(ok.validate().is_ok());
        let bad = [
            OptimizerParams { omega_fp: 0.0, ..ok.clone() },
            OptimizerParams { omega_fp: 1.5, ..ok.clone() },
            OptimizerParams { tol: 0.0, ..ok.clone() },
            OptimizerParams { schedule: vec![1e-3, 1e-2], ..ok.clone() },
            OptimizerParams { bounds: Some((1.0, 0.0)), ..ok.clone() },
        ];
        for p in bad {
            assert!(p.validate().is_err(), "{p:?}");
        }
        assert_eq!("fixed-point".parse::<Method>().unwrap(), Method::FixedPoint);
        assert!("newton".parse::<Method>().is_err());
    }

    #[test]
    fn stationary_start_stops_at_iteration_zero() {
        let g = make_grid::<f64>(1, 31).unwrap();
        let op = AssembledOperator::laplacian(&g);
        let f = Field::constant(&g, -8.0);
        let z = op.solve_linear(&f, 1e-13).unwrap();
        let pb = ControlProblem::new(op, f, z, 0.0, None).unwrap();
        let phi0 = Field::constant(&g, -50.0);
        let r = optimize_gradient(&pb, &phi0, &OptimizerParams::default()).unwrap();
        assert!(r.converged);
        // one record per stage, all at the starting point
        assert!(r.history.iter().all(|rec| rec.grad_norm == 0.0 && rec.step == 0.0));
        assert_eq!(r.history.len(), 3);
        assert_eq!(r.phi, phi0);
    }

    #[test]
    fn gradient_descent_monotone_within_stages() {
        let (pb, _) = manufactured(31, 1e-5);
        let phi0 = Field::constant(pb.grid(), -1.0);
        let params = OptimizerParams {
            max_iterations: 60,
            ..OptimizerParams::default()
        };
        let r = optimize_gradient(&pb, &phi0, &params).unwrap();
        for w in r.history.windows(2) {
            if w[0].stage == w[1].stage {
                let (a, b) = (w[0].objective.j, w[1].objective.j);
                let gn = w[0].grad_norm;
                // Armijo with c = 1e-4 and an unprojected step: decrease >= c t |g|^2
                assert!(b <= a - 1e-4 * w[1].step * gn * gn * (1.0 - 1e-9), "{a} -> {b}");
            }
        }
        assert!(r.objective.j < 0.2 * r.history[0].objective.j);
        // stored fields are the re-solved ones
        let again = evaluate(&pb, &r.phi, r.delta, &NewtonParams::default(), None).unwrap();
        assert!(again.state.y.sub(&r.y).unwrap().linf() < 1e-9);
    }

    #[test]
    fn box_clipping_keeps_iterates_inside() {
        let (pb, _) = manufactured(31, 1e-5);
        let phi0 = Field::constant(pb.grid(), -1.0);
        let params = OptimizerParams {
            max_iterations: 30,
            bounds: Some((-1.0, -0.15)),
            ..OptimizerParams::default()
        };
        let r = optimize_gradient(&pb, &phi0, &params).unwrap();
        assert!(r.phi.max_value() <= -0.15 && r.phi.min_value() >= -1.0);
        assert!(r.objective.j < r.history[0].objective.j);
    }

    #[test]
    fn fixed_point_with_inactive_obstacle_goes_to_zero() {
        // obstacle far below a state with f > 0 never binds: mu = 0, phi_hat = 0
        let g = make_grid::<f64>(1, 31).unwrap();
        let op = AssembledOperator::laplacian(&g);
        let f = Field::constant(&g, 1.0);
        let z = Field::zeros(&g);
        let pb = ControlProblem::new(op, f, z, 1e-3, None).unwrap();
        let phi0 = Field::from_fn(&g, |x| -2.0 - (PI * x[0]).sin());
        let params = OptimizerParams {
            method: Method::FixedPoint,
            schedule: vec![1e-2],
            tol: 1e-10,
            ..OptimizerParams::default()
        };
        let r = optimize_fixed_point(&pb, &phi0, &params).unwrap();
        assert!(r.converged);
        assert!(r.phi.linf() < 1e-8);
        assert_eq!(r.mu.linf(), 0.0);
        assert!(r.kkt.r_projection < 1e-6);
    }

    #[test]
    fn fixed_point_certificate() {
        let (mut pb, _) = manufactured(31, 1e-2);
        pb.anchor = Some(Field::constant(pb.grid(), -0.1));
        let phi0 = Field::constant(pb.grid(), -1.0);
        let params = OptimizerParams {
            method: Method::FixedPoint,
            schedule: vec![1e-1],
            tol: 1e-11,
            max_iterations: 500,
            ..OptimizerParams::default()
        };
        let r = optimize_fixed_point(&pb, &phi0, &params).unwrap();
        assert!(r.converged, "{:?}", r.termination);
        // at phi_k = phi_hat_k the residual vanishes; off it by at most
        // |nu L L + I| |phi_hat - phi_k| = |nu L L + I| change / omega
        let h = pb.grid().h();
        let op_norm = pb.nu * 16.0 / h.powi(4) + 1.0;
        let last = r.history.last().unwrap();
        assert!(last.change <= 1e-11 * r.phi.l2().max(1.0) * 1.01);
        assert!(r.kkt.r_projection <= op_norm * last.change / 0.5, "{}", r.kkt.r_projection);
        assert!(r.kkt.r_projection < 1e-6);
    }

    #[test]
    fn fixed_point_divergence_is_detected() {
        // with a tiny regularization weight the undamped map is far from
        // contractive; the detector must stop it with a diagnostic
        let (pb, _) = manufactured(31, 1e-6);
        let params = OptimizerParams {
            method: Method::FixedPoint,
            schedule: vec![1e-2],
            ..OptimizerParams::default()
        };
        match optimize_fixed_point(&pb, &Field::constant(pb.grid(), -1.0), &params) {
            Err(Error::Divergence { norm, .. }) => assert!(norm > 1e6),
            other => panic!("expected divergence, got {:?}", other.map(|r| r.termination)),
        }
    }

    #[test]
    fn fixed_point_requires_positive_nu() {
        let (mut pb, _) = manufactured(15, 1e-3);
        pb.nu = 0.0;
        let params = OptimizerParams {
            method: Method::FixedPoint,
            ..OptimizerParams::default()
        };
        assert!(optimize(&pb, &Field::zeros(pb.grid()), &params).is_err());
    }

    #[test]
    fn deterministic() {
        let (pb, _) = manufactured(31, 1e-5);
        let phi0 = Field::constant(pb.grid(), -1.0);
        let params = OptimizerParams {
            max_iterations: 20,
            ..OptimizerParams::default()
        };
        let a = optimize_gradient(&pb, &phi0, &params).unwrap();
        let b = optimize_gradient(&pb, &phi0, &params).unwrap();
        assert_eq!(a.phi, b.phi);
        assert_eq!(a.j_history(), b.j_history());
    }
}
