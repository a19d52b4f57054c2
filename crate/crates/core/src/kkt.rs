//! Residuals of the first-order optimality system at a candidate
//! `(phi, y, p, mu, xi)`:
//!
//! ```text
//! (1) A y + xi = f                 (2) A* p + mu = y - z
//! (3) nu L_h L_h phi + mu (+ phi - anchor) = 0
//! (4) <mu, y - phi> = 0            (5) <xi, p> = 0
//! (6) a*(p, p) - (y - z, p) <= 0   (7) <mu, p> >= 0
//!     xi <= 0,                         y >= phi
//! ```
//!
//! Pairings are nodal `(.,.)_h` sums.

use serde::Serialize;

use crate::adjoint::{solve_adjoint, ControlProblem};
use crate::error::Result;
use crate::grid::{inner_product, Field};
use crate::scalar::Real;
use crate::state::{solve_penalized, NewtonParams};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct KktResiduals<T> {
    /// `||A y + xi - f||_l2`
    pub r_state: T,
    /// `||A* p + mu - (y - z)||_l2`
    pub r_adjoint: T,
    /// `||nu L_h L_h phi + mu + (phi - anchor)||_l2`
    pub r_projection: T,
    /// `(mu, y - phi)_h`
    pub c_mu_gap: T,
    /// `(xi, p)_h`
    pub c_xi_p: T,
    /// `||max(xi, 0)||_inf`
    pub xi_sign: T,
    /// `(mu, p)_h`
    pub mu_p_pairing: T,
    /// `a*(p, p) - (y - z, p)_h`, expected nonpositive
    pub adjoint_energy: T,
    /// `||(phi - y)^+||_inf`
    pub feasibility: T,
    /// `||mu||_l2 * ||y - phi||_l2`, natural scale of `c_mu_gap`
    pub mu_gap_scale: T,
    /// `||xi||_l2 * ||p||_l2`, natural scale of `c_xi_p`
    pub xi_p_scale: T,
    /// `max(1, ||f||_l2)`
    pub state_scale: T,
    /// `max(1, ||y - z||_l2)`
    pub adjoint_scale: T,
}

/// Pass thresholds. Relative ones multiply the matching `*_scale` field.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AuditTolerances<T> {
    pub state_rel: T,
    pub adjoint_rel: T,
    pub projection: T,
    pub complementarity_rel: T,
    pub xi_sign: T,
    pub mu_p_floor: T,
    pub feasibility: T,
}

impl<T: Real> Default for AuditTolerances<T> {
    fn default() -> Self {
        Self {
            state_rel: T::lit(1e-8),
            adjoint_rel: T::lit(1e-8),
            projection: T::lit(1e-6),
            complementarity_rel: T::lit(1e-4),
            xi_sign: T::zero(),
            mu_p_floor: T::lit(-1e-8),
            feasibility: T::lit(1e-2),
        }
    }
}

/// One line of the audit report.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct AuditEntry {
    pub name: &'static str,
    pub condition: &'static str,
    pub value: f64,
    pub tolerance: f64,
    pub pass: bool,
    /// Soft entries are reported but do not fail the audit.
    pub hard: bool,
}

impl<T: Real> KktResiduals<T> {
    /// Every condition of the system mapped to one named scalar.
    pub fn report(&self, tol: &AuditTolerances<T>) -> Vec<AuditEntry> {
        let f = |v: T| v.to_f64_lossy();
        let entry = |name, condition, value: T, tolerance: T, pass: bool, hard| AuditEntry {
            name,
            condition,
            value: f(value),
            tolerance: f(tolerance),
            pass,
            hard,
        };
        let st = tol.state_rel * self.state_scale;
        let at = tol.adjoint_rel * self.adjoint_scale;
        let mt = tol.complementarity_rel * self.mu_gap_scale;
        let xt = tol.complementarity_rel * self.xi_p_scale;
        vec![
            entry("r_state", "A y + xi = f", self.r_state, st, self.r_state <= st, true),
            entry("r_adjoint", "A* p + mu = y - z", self.r_adjoint, at, self.r_adjoint <= at, true),
            entry(
                "r_projection",
                "nu L_h L_h phi + mu (+ phi - anchor) = 0",
                self.r_projection,
                tol.projection,
                self.r_projection <= tol.projection,
                true,
            ),
            entry("c_mu_gap", "<mu, y - phi> = 0", self.c_mu_gap, mt, self.c_mu_gap.abs() <= mt, true),
            entry("c_xi_p", "<xi, p> = 0", self.c_xi_p, xt, self.c_xi_p.abs() <= xt, true),
            entry(
                "adjoint_energy",
                "a*(p,p) - (y - z, p) <= 0",
                self.adjoint_energy,
                T::zero(),
                self.adjoint_energy <= T::zero(),
                false,
            ),
            entry(
                "mu_p_pairing",
                "<mu, p> >= 0",
                self.mu_p_pairing,
                tol.mu_p_floor,
                self.mu_p_pairing >= tol.mu_p_floor,
                true,
            ),
            entry("xi_sign", "xi <= 0", self.xi_sign, tol.xi_sign, self.xi_sign <= tol.xi_sign, true),
            entry(
                "feasibility",
                "y >= phi",
                self.feasibility,
                tol.feasibility,
                self.feasibility <= tol.feasibility,
                false,
            ),
        ]
    }

    pub fn passes(&self, tol: &AuditTolerances<T>) -> bool {
        self.report(tol).iter().all(|e| e.pass || !e.hard)
    }
}

/// Pure evaluation of every residual; nothing is solved.
#[allow(clippy::too_many_arguments)]
pub fn audit<T: Real>(
    problem: &ControlProblem<T>,
    phi: &Field<T>,
    y: &Field<T>,
    p: &Field<T>,
    mu: &Field<T>,
    xi: &Field<T>,
    nu: T,
) -> Result<KktResiduals<T>> {
    let grid = problem.grid();
    for fld in [phi, y, p, mu, xi] {
        grid.check_same(fld.grid())?;
    }
    let op = &problem.op;
    let r_state = op.apply(y)?.add(xi)?.sub(&problem.f)?.l2();
    let y_minus_z = y.sub(&problem.z)?;
    let r_adjoint = op.apply_adjoint(p)?.add(mu)?.sub(&y_minus_z)?.l2();
    let mut proj = problem.bilaplacian(phi)?.scale(nu).add(mu)?;
    if let Some(a) = &problem.anchor {
        proj = proj.add(&phi.sub(a)?)?;
    }
    let gap = y.sub(phi)?;
    let adjoint_energy = op.bilinear_form(p, p)? - inner_product(&y_minus_z, p)?;
    Ok(KktResiduals {
        r_state,
        r_adjoint,
        r_projection: proj.l2(),
        c_mu_gap: inner_product(mu, &gap)?,
        c_xi_p: inner_product(xi, p)?,
        xi_sign: xi.values().iter().fold(T::zero(), |m, &v| m.max(v)),
        mu_p_pairing: inner_product(mu, p)?,
        adjoint_energy,
        feasibility: gap.values().iter().fold(T::zero(), |m, &v| m.max(-v)),
        mu_gap_scale: mu.l2() * gap.l2(),
        xi_p_scale: xi.l2() * p.l2(),
        state_scale: T::one().max(problem.f.l2()),
        adjoint_scale: T::one().max(y_minus_z.l2()),
    })
}

/// Audit of the penalized system at one `delta`, with diagnostics logged
/// along penalty sweeps.
#[derive(Clone, Debug)]
pub struct DeltaAudit<T: Real> {
    pub delta: T,
    pub residuals: KktResiduals<T>,
    /// Fraction of nodes with `y - phi <= -1/2`.
    pub deep_violation_fraction: T,
    /// `h^dim * sum |mu_i|`.
    pub mu_mass: T,
    pub y: Field<T>,
    pub p: Field<T>,
    pub mu: Field<T>,
    pub xi: Field<T>,
}

/// Solves state and adjoint at `delta`, then audits.
pub fn audit_delta<T: Real>(
    problem: &ControlProblem<T>,
    phi: &Field<T>,
    delta: T,
    newton: &NewtonParams<T>,
    warm: Option<&Field<T>>,
) -> Result<DeltaAudit<T>> {
    let state = solve_penalized(&problem.op, &problem.f, phi, delta, newton, warm)?;
    let adj = solve_adjoint(problem, &state.y, phi, delta)?;
    let residuals = audit(problem, phi, &state.y, &adj.p, &adj.mu, &state.xi, problem.nu)?;
    let grid = problem.grid();
    let half = T::lit(0.5);
    let deep = state
        .y
        .values()
        .iter()
        .zip(phi.values())
        .filter(|(&y, &p)| y - p <= -half)
        .count();
    let mu_mass = adj.mu.values().iter().map(|m| m.abs()).sum::<T>() * grid.cell_volume();
    Ok(DeltaAudit {
        delta,
        residuals,
        deep_violation_fraction: T::from_count(deep) / T::from_count(grid.len()),
        mu_mass,
        y: state.y,
        p: adj.p,
        mu: adj.mu,
        xi: state.xi,
    })
}

/// Audits along a decreasing schedule, warm-starting each state solve.
pub fn audit_sweep<T: Real>(
    problem: &ControlProblem<T>,
    phi: &Field<T>,
    schedule: &[T],
    newton: &NewtonParams<T>,
) -> Result<Vec<DeltaAudit<T>>> {
    crate::state::validate_schedule(schedule)?;
    let mut out: Vec<DeltaAudit<T>> = Vec::with_capacity(schedule.len());
    for &delta in schedule {
        let warm = out.last().map(|a| &a.y);
        let a = audit_delta(problem, phi, delta, newton, warm)?;
        out.push(a);
    }
    Ok(out)
}
