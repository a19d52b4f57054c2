//! Optimal control of the unilateral obstacle problem on the unit square
//! (or interval), where the obstacle itself is the control.
//!
//! The state `y = T(phi)` solves the obstacle problem with lower obstacle
//! `phi`. It is approximated by a smooth penalized equation
//! `A y + beta_delta(y - phi) = f`, whose adjoint gives the gradient of the
//! tracking functional
//!
//! ```text
//! J(phi) = 1/2 |y - z|^2 + nu/2 |L_h phi|^2  (+ 1/2 |phi - anchor|^2)
//! ```
//!
//! Layers, bottom up:
//!
//! * [`grid`]: uniform grids, nodal fields, discrete norms
//! * [`operator`]: finite-difference elliptic operators, coercivity estimates
//! * [`penalty`]: the penalty `beta_delta` and its derivative
//! * [`vi`]: projected SOR reference solver for the obstacle problem
//! * [`state`]: damped Newton for the penalized state, `delta` continuation
//! * [`adjoint`]: adjoint state, multiplier, objective, reduced gradient
//! * [`optimizer`]: gradient and fixed-point outer loops
//! * [`kkt`]: optimality-system residual audit
//! * [`config`], [`cli`]: JSON runs and artifacts of the `obstacle-opt` tool
//!
//! Numerical code is generic over [`Real`]; the aliases below fix the
//! scalar type.
//!
//! ```
//! use obstacle_core::{make_grid, solve_vi, AssembledOperator, Field64, ViParams};
//!
//! let grid = make_grid(1, 63).unwrap();
//! let op = AssembledOperator::laplacian(&grid);
//! let f = Field64::constant(&grid, -8.0);
//! let phi = Field64::constant(&grid, -0.5);
//! let sol = solve_vi(&op, &f, &phi, &ViParams::default()).unwrap();
//! assert!(sol.converged);
//! assert!((sol.y.values()[31] + 0.5).abs() < 1e-9);
//! ```

// `!(x > 0)` style checks are deliberate: they also reject NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod adjoint;
pub mod cli;
pub mod config;
pub mod error;
pub mod grid;
pub mod kkt;
pub mod operator;
pub mod optimizer;
pub mod penalty;
pub mod scalar;
pub mod sparse;
pub mod state;
pub mod vi;

pub use adjoint::{
    evaluate, gateaux_sensitivity, gradient, objective, solve_adjoint, AdjointState, ControlProblem, ObjectiveValue,
};
pub use error::{Error, Result};
pub use grid::{inner_product, make_grid, norms, Field, Grid, Norms};
pub use kkt::{audit, audit_delta, audit_sweep, AuditEntry, AuditTolerances, DeltaAudit, KktResiduals};
pub use operator::{AssembledOperator, EnergyNorm, OperatorSpec};
pub use optimizer::{
    biharmonic_solve, optimize, optimize_fixed_point, optimize_gradient, Method, OptResult, OptimizerParams,
};
pub use penalty::{beta, beta_prime, PenaltyParams};
pub use scalar::Real;
pub use sparse::CsrMatrix;
pub use state::{delta_continuation, geometric_schedule, solve_penalized, NewtonParams, PenalizedState};
pub use vi::{complementarity_residual, solve_vi, ViParams, ViSolution};

pub type Grid64 = Grid<f64>;
pub type Field64 = Field<f64>;
pub type Operator64 = AssembledOperator<f64>;
pub type Problem64 = ControlProblem<f64>;
pub type Grid32 = Grid<f32>;
pub type Field32 = Field<f32>;
pub type Operator32 = AssembledOperator<f32>;
pub type Problem32 = ControlProblem<f32>;
