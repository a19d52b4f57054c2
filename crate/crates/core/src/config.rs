//! JSON run configuration and the named preset catalogue.
//!
//! Field inputs (`f`, `phi`, `z`, `phi0`, `anchor`) are either inline
//! nodal arrays or preset expressions:
//!
//! | expression        | meaning                                                  |
//! |-------------------|----------------------------------------------------------|
//! | `const:<v>`       | constant `v`                                             |
//! | `zero`            | `0`                                                      |
//! | `sin[:<a>]`       | `a * prod_i sin(pi x_i)`, `a = 1` by default            |
//! | `bump[:<a>]`      | `1 + a * prod_i sin(pi x_i)`, `a = 0.5` by default      |
//! | `benchmark`       | `f = -8`, obstacle `= -0.5`                              |
//! | `manufactured`    | obstacle `-0.2 sin(pi x)`, `z` its VI state, `phi0 = -1`, `f = -8` |
//! | `vi_of:<expr>`    | VI solution with the run's operator and `f` for obstacle `<expr>` |
//! | `random[:<a>]`    | seeded smooth random field, amplitude `a` (default 0.2)  |
//! | `file:<path>`     | nodal values read back from a field CSV                  |
//!
//! Operator coefficients accept numbers and the analytic subset
//! (`const`, `zero`, `sin`, `bump`).

use std::f64::consts::PI;
use std::fmt;
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::grid::{Field, Grid};
use crate::kkt::AuditTolerances;
use crate::operator::{constant_coefficient, AssembledOperator, Coefficient, OperatorSpec};
use crate::optimizer::{ArmijoParams, Method, OptimizerParams};
use crate::state::NewtonParams;
use crate::vi::{solve_vi, ViParams};

/// Configuration problems, always tied to a location in the input.
#[derive(Clone, Debug, PartialEq)]
pub enum ConfigError {
    Io { path: String, message: String },
    Parse { line: usize, column: usize, message: String },
    Schema { field: String, message: String },
    UnknownPreset { field: String, name: String, available: Vec<&'static str> },
    MissingInput { field: String, path: String },
}

impl fmt::Display for ConfigError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ConfigError::Io { path, message } => write!(f, "cannot read {path}: {message}"),
            ConfigError::Parse { line, column, message } => {
                write!(f, "invalid JSON at line {line}, column {column}: {message}")
            }
            ConfigError::Schema { field, message } => write!(f, "{field}: {message}"),
            ConfigError::UnknownPreset { field, name, available } => write!(
                f,
                "{field}: unknown preset {name:?}; available: {}",
                available.join(", ")
            ),
            ConfigError::MissingInput { field, path } => write!(f, "{field}: input file {path} does not exist"),
        }
    }
}

impl std::error::Error for ConfigError {}

impl ConfigError {
    pub fn field(&self) -> Option<&str> {
        match self {
            ConfigError::Schema { field, .. }
            | ConfigError::UnknownPreset { field, .. }
            | ConfigError::MissingInput { field, .. } => Some(field),
            _ => None,
        }
    }

    fn schema(field: impl Into<String>, message: impl Into<String>) -> Self {
        ConfigError::Schema {
            field: field.into(),
            message: message.into(),
        }
    }
}

pub const PRESETS: &[&str] = &[
    "const:<v>",
    "zero",
    "sin[:<a>]",
    "bump[:<a>]",
    "benchmark",
    "manufactured",
    "vi_of:<expr>",
    "random[:<a>]",
    "file:<path>",
];

const COEFFICIENT_PRESETS: &[&str] = &["const:<v>", "zero", "sin[:<a>]", "bump[:<a>]"];

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum FieldSpec {
    Values(Vec<f64>),
    Expr(String),
}

impl From<&str> for FieldSpec {
    fn from(s: &str) -> Self {
        FieldSpec::Expr(s.to_string())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum CoefSpec {
    Number(f64),
    Expr(String),
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridConfig {
    pub dim: usize,
    #[serde(alias = "n_per_axis")]
    pub n: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OperatorConfig {
    /// Isotropic diffusion coefficient.
    pub diffusion: CoefSpec,
    /// Constant drift, one entry per axis (empty for none).
    pub drift: Vec<f64>,
    pub reaction: CoefSpec,
}

impl Default for OperatorConfig {
    fn default() -> Self {
        Self {
            diffusion: CoefSpec::Number(1.0),
            drift: Vec::new(),
            reaction: CoefSpec::Number(0.0),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SolverConfig {
    pub newton_tol: f64,
    pub newton_max_iterations: usize,
    pub psor_omega: f64,
    pub psor_tol: f64,
    pub psor_max_sweeps: Option<usize>,
}

impl Default for SolverConfig {
    fn default() -> Self {
        let n = NewtonParams::<f64>::default();
        let v = ViParams::<f64>::default();
        Self {
            newton_tol: n.tol,
            newton_max_iterations: n.max_iterations,
            psor_omega: v.omega,
            psor_tol: v.rel_tol,
            psor_max_sweeps: None,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OptimizerConfig {
    pub method: String,
    pub schedule: Vec<f64>,
    pub max_iterations: usize,
    pub stage_iterations: Option<usize>,
    pub tol: f64,
    pub omega_fp: f64,
    pub armijo_slope: f64,
    pub backtrack_factor: f64,
    pub max_backtracks: usize,
    pub initial_step: f64,
    pub bounds: Option<[f64; 2]>,
    pub divergence_factor: f64,
}

impl Default for OptimizerConfig {
    fn default() -> Self {
        let p = OptimizerParams::<f64>::default();
        Self {
            method: p.method.to_string(),
            schedule: p.schedule,
            max_iterations: p.max_iterations,
            stage_iterations: None,
            tol: p.tol,
            omega_fp: p.omega_fp,
            armijo_slope: p.armijo.slope,
            backtrack_factor: p.armijo.backtrack_factor,
            max_backtracks: p.armijo.max_backtracks,
            initial_step: p.armijo.initial_step,
            bounds: None,
            divergence_factor: p.divergence_factor,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AuditConfig {
    pub state_rel: f64,
    pub adjoint_rel: f64,
    pub projection: f64,
    pub complementarity_rel: f64,
    pub xi_sign: f64,
    pub mu_p_floor: f64,
    pub feasibility: f64,
    /// Optional penalty sweep at the audited control.
    pub sweep: Vec<f64>,
}

impl Default for AuditConfig {
    fn default() -> Self {
        let t = AuditTolerances::<f64>::default();
        Self {
            state_rel: t.state_rel,
            adjoint_rel: t.adjoint_rel,
            projection: t.projection,
            complementarity_rel: t.complementarity_rel,
            xi_sign: t.xi_sign,
            mu_p_floor: t.mu_p_floor,
            feasibility: t.feasibility,
            sweep: Vec::new(),
        }
    }
}

/// Precomputed candidate for `kkt-audit`; each entry is a field expression,
/// typically `file:<path>` pointing at a field CSV.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StateInputs {
    pub y: FieldSpec,
    pub p: FieldSpec,
    pub mu: FieldSpec,
    pub xi: FieldSpec,
}

fn default_f() -> FieldSpec {
    "benchmark".into()
}
fn default_z() -> FieldSpec {
    "manufactured".into()
}
fn default_phi0() -> FieldSpec {
    "const:-1".into()
}
fn default_nu() -> f64 {
    1e-6
}
fn default_delta() -> f64 {
    1e-4
}
fn default_schedule() -> Vec<f64> {
    vec![1e-1, 1e-2, 1e-3, 1e-4]
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub grid: GridConfig,
    #[serde(default)]
    pub operator: OperatorConfig,
    #[serde(default = "default_f")]
    pub f: FieldSpec,
    /// Obstacle for the solve commands; audited control for `kkt-audit`.
    #[serde(default = "default_f")]
    pub phi: FieldSpec,
    #[serde(default = "default_z")]
    pub z: FieldSpec,
    #[serde(default = "default_phi0")]
    pub phi0: FieldSpec,
    #[serde(default)]
    pub anchor: Option<FieldSpec>,
    #[serde(default = "default_nu")]
    pub nu: f64,
    /// Penalty parameter of `pen-solve` and `kkt-audit`.
    #[serde(default = "default_delta")]
    pub delta: f64,
    /// Schedule of `sweep-delta`.
    #[serde(default = "default_schedule")]
    pub delta_schedule: Vec<f64>,
    #[serde(default)]
    pub solver: SolverConfig,
    #[serde(default)]
    pub optimizer: OptimizerConfig,
    #[serde(default)]
    pub audit: AuditConfig,
    #[serde(default)]
    pub state: Option<StateInputs>,
    #[serde(default)]
    pub out: Option<String>,
    #[serde(default)]
    pub seed: u64,
    /// Also write the assembled operator in Matrix Market format.
    #[serde(default)]
    pub export_matrix: bool,
    /// Directory that relative `file:` paths resolve against.
    #[serde(skip)]
    pub base_dir: PathBuf,
}

pub fn load_config(path: impl AsRef<Path>) -> Result<RunConfig, ConfigError> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| ConfigError::Io {
        path: path.display().to_string(),
        message: e.to_string(),
    })?;
    let mut cfg = parse_config(&text)?;
    cfg.base_dir = path.parent().map(Path::to_path_buf).unwrap_or_default();
    Ok(cfg)
}

pub fn parse_config(text: &str) -> Result<RunConfig, ConfigError> {
    // syntax first, so malformed text reports a line rather than a path
    let value: serde_json::Value = serde_json::from_str(text).map_err(|e| ConfigError::Parse {
        line: e.line(),
        column: e.column(),
        message: e.to_string(),
    })?;
    let cfg: RunConfig = serde_path_to_error::deserialize(value).map_err(|e| {
        let field = e.path().to_string();
        ConfigError::schema(if field == "." { "<root>".to_string() } else { field }, e.into_inner().to_string())
    })?;
    cfg.validate()?;
    Ok(cfg)
}

fn check(ok: bool, field: &str, message: impl Into<String>) -> Result<(), ConfigError> {
    if ok {
        Ok(())
    } else {
        Err(ConfigError::schema(field, message))
    }
}

fn check_schedule(field: &str, s: &[f64]) -> Result<(), ConfigError> {
    check(!s.is_empty(), field, "must not be empty")?;
    for (i, &d) in s.iter().enumerate() {
        check(d.is_finite() && d > 0.0, &format!("{field}[{i}]"), format!("must be positive, got {d}"))?;
        if i > 0 {
            check(d < s[i - 1], &format!("{field}[{i}]"), "schedule must be strictly decreasing")?;
        }
    }
    Ok(())
}

fn positive(field: &str, v: f64) -> Result<(), ConfigError> {
    check(v.is_finite() && v > 0.0, field, format!("must be positive and finite, got {v}"))
}

impl RunConfig {
    pub fn validate(&self) -> Result<(), ConfigError> {
        check(matches!(self.grid.dim, 1 | 2), "grid.dim", format!("must be 1 or 2, got {}", self.grid.dim))?;
        check(self.grid.n >= 1, "grid.n", "must be at least 1")?;
        check(self.nu.is_finite() && self.nu >= 0.0, "nu", format!("must be nonnegative and finite, got {}", self.nu))?;
        positive("delta", self.delta)?;
        check_schedule("delta_schedule", &self.delta_schedule)?;
        check(
            self.operator.drift.is_empty() || self.operator.drift.len() == self.grid.dim,
            "operator.drift",
            format!("needs {} entries, got {}", self.grid.dim, self.operator.drift.len()),
        )?;
        check(self.operator.drift.iter().all(|b| b.is_finite()), "operator.drift", "entries must be finite")?;
        let s = &self.solver;
        positive("solver.newton_tol", s.newton_tol)?;
        check(s.newton_max_iterations >= 1, "solver.newton_max_iterations", "must be at least 1")?;
        check(s.psor_omega > 0.0 && s.psor_omega < 2.0, "solver.psor_omega", "must lie in (0, 2)")?;
        positive("solver.psor_tol", s.psor_tol)?;
        let o = &self.optimizer;
        o.method.parse::<Method>().map_err(|e| ConfigError::schema("optimizer.method", e.to_string()))?;
        check_schedule("optimizer.schedule", &o.schedule)?;
        check(o.max_iterations >= 1, "optimizer.max_iterations", "must be at least 1")?;
        positive("optimizer.tol", o.tol)?;
        check(o.omega_fp > 0.0 && o.omega_fp <= 1.0, "optimizer.omega_fp", "must lie in (0, 1]")?;
        check(o.armijo_slope > 0.0 && o.armijo_slope < 1.0, "optimizer.armijo_slope", "must lie in (0, 1)")?;
        check(
            o.backtrack_factor > 0.0 && o.backtrack_factor < 1.0,
            "optimizer.backtrack_factor",
            "must lie in (0, 1)",
        )?;
        positive("optimizer.initial_step", o.initial_step)?;
        positive("optimizer.divergence_factor", o.divergence_factor)?;
        if let Some([lo, hi]) = o.bounds {
            check(lo <= hi, "optimizer.bounds", "lower bound exceeds upper bound")?;
        }
        let a = &self.audit;
        for (name, v) in [
            ("audit.state_rel", a.state_rel),
            ("audit.adjoint_rel", a.adjoint_rel),
            ("audit.projection", a.projection),
            ("audit.complementarity_rel", a.complementarity_rel),
            ("audit.feasibility", a.feasibility),
        ] {
            positive(name, v)?;
        }
        check(a.xi_sign.is_finite() && a.xi_sign >= 0.0, "audit.xi_sign", "must be nonnegative")?;
        check(a.mu_p_floor.is_finite(), "audit.mu_p_floor", "must be finite")?;
        if !a.sweep.is_empty() {
            check_schedule("audit.sweep", &a.sweep)?;
        }
        // preset names are checked without evaluating anything expensive
        let mut names: Vec<(&str, &FieldSpec)> =
            vec![("f", &self.f), ("phi", &self.phi), ("z", &self.z), ("phi0", &self.phi0)];
        if let Some(a) = &self.anchor {
            names.push(("anchor", a));
        }
        if let Some(s) = &self.state {
            names.extend([("state.y", &s.y), ("state.p", &s.p), ("state.mu", &s.mu), ("state.xi", &s.xi)]);
        }
        for (field, spec) in names {
            if let FieldSpec::Expr(e) = spec {
                parse_expr(field, e)?;
            }
        }
        for (field, c) in [("operator.diffusion", &self.operator.diffusion), ("operator.reaction", &self.operator.reaction)] {
            if let CoefSpec::Expr(e) = c {
                analytic(field, e)?;
            }
        }
        Ok(())
    }

    pub fn grid(&self) -> Grid<f64> {
        Grid::new(self.grid.dim, self.grid.n).expect("validated grid")
    }

    pub fn newton(&self) -> NewtonParams<f64> {
        NewtonParams {
            tol: self.solver.newton_tol,
            max_iterations: self.solver.newton_max_iterations,
            ..NewtonParams::default()
        }
    }

    pub fn vi_params(&self) -> ViParams<f64> {
        ViParams {
            omega: self.solver.psor_omega,
            rel_tol: self.solver.psor_tol,
            max_sweeps: self.solver.psor_max_sweeps,
            ..ViParams::default()
        }
    }

    pub fn optimizer_params(&self) -> OptimizerParams<f64> {
        let o = &self.optimizer;
        OptimizerParams {
            method: o.method.parse().expect("validated method"),
            schedule: o.schedule.clone(),
            max_iterations: o.max_iterations,
            stage_iterations: o.stage_iterations,
            armijo: ArmijoParams {
                slope: o.armijo_slope,
                backtrack_factor: o.backtrack_factor,
                max_backtracks: o.max_backtracks,
                initial_step: o.initial_step,
                ..ArmijoParams::default()
            },
            omega_fp: o.omega_fp,
            tol: o.tol,
            bounds: o.bounds.map(|[lo, hi]| (lo, hi)),
            newton: self.newton(),
            divergence_factor: o.divergence_factor,
            vi_check: true,
        }
    }

    pub fn audit_tolerances(&self) -> AuditTolerances<f64> {
        let a = &self.audit;
        AuditTolerances {
            state_rel: a.state_rel,
            adjoint_rel: a.adjoint_rel,
            projection: a.projection,
            complementarity_rel: a.complementarity_rel,
            xi_sign: a.xi_sign,
            mu_p_floor: a.mu_p_floor,
            feasibility: a.feasibility,
        }
    }

    pub fn operator(&self) -> Result<AssembledOperator<f64>, crate::error::Error> {
        let grid = self.grid();
        let dim = grid.dim();
        let diffusion = coefficient("operator.diffusion", &self.operator.diffusion).expect("validated");
        let reaction = coefficient("operator.reaction", &self.operator.reaction).expect("validated");
        let drift = if self.operator.drift.is_empty() {
            vec![0.0; dim]
        } else {
            self.operator.drift.clone()
        };
        let spec = OperatorSpec {
            diffusion: vec![diffusion; dim],
            drift: drift.into_iter().map(constant_coefficient).collect(),
            reaction,
            ellipticity: None,
        };
        AssembledOperator::assemble(&spec, &grid)
    }
}

/// Role a field input plays; role-dependent presets resolve through it.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Role {
    Source,
    Obstacle,
    Target,
    Start,
    Anchor,
    State,
}

impl Role {
    fn salt(self) -> u64 {
        self as u64 + 1
    }
}

#[derive(Clone, Debug, PartialEq)]
enum Analytic {
    Const(f64),
    Sin(f64),
    Bump(f64),
}

impl Analytic {
    fn eval(&self, x: &[f64]) -> f64 {
        let s = || x.iter().map(|&xi| (PI * xi).sin()).product::<f64>();
        match *self {
            Analytic::Const(c) => c,
            Analytic::Sin(a) => a * s(),
            Analytic::Bump(a) => 1.0 + a * s(),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
enum Expr {
    Analytic(Analytic),
    Benchmark,
    Manufactured,
    ViOf(Box<Expr>),
    Random(f64),
    File(String),
}

fn number(field: &str, text: &str) -> Result<f64, ConfigError> {
    text.trim()
        .parse::<f64>()
        .ok()
        .filter(|v| v.is_finite())
        .ok_or_else(|| ConfigError::schema(field, format!("expected a finite number, got {text:?}")))
}

fn optional_amp(field: &str, rest: Option<&str>, default: f64) -> Result<f64, ConfigError> {
    rest.map_or(Ok(default), |r| number(field, r))
}

fn parse_expr(field: &str, text: &str) -> Result<Expr, ConfigError> {
    let (head, rest) = match text.split_once(':') {
        Some((h, r)) => (h, Some(r)),
        None => (text, None),
    };
    let unknown = || ConfigError::UnknownPreset {
        field: field.to_string(),
        name: text.to_string(),
        available: PRESETS.to_vec(),
    };
    Ok(match (head, rest) {
        ("const", Some(v)) => Expr::Analytic(Analytic::Const(number(field, v)?)),
        ("zero", None) => Expr::Analytic(Analytic::Const(0.0)),
        ("sin", r) => Expr::Analytic(Analytic::Sin(optional_amp(field, r, 1.0)?)),
        ("bump", r) => Expr::Analytic(Analytic::Bump(optional_amp(field, r, 0.5)?)),
        ("benchmark", None) => Expr::Benchmark,
        ("manufactured", None) => Expr::Manufactured,
        ("vi_of", Some(inner)) => Expr::ViOf(Box::new(parse_expr(field, inner)?)),
        ("random", r) => Expr::Random(optional_amp(field, r, 0.2)?),
        ("file", Some(p)) if !p.is_empty() => Expr::File(p.to_string()),
        _ => return Err(unknown()),
    })
}

fn analytic(field: &str, text: &str) -> Result<Analytic, ConfigError> {
    match parse_expr(field, text) {
        Ok(Expr::Analytic(a)) => Ok(a),
        Ok(_) | Err(ConfigError::UnknownPreset { .. }) => Err(ConfigError::UnknownPreset {
            field: field.to_string(),
            name: text.to_string(),
            available: COEFFICIENT_PRESETS.to_vec(),
        }),
        Err(e) => Err(e),
    }
}

fn coefficient(field: &str, c: &CoefSpec) -> Result<Coefficient<f64>, ConfigError> {
    Ok(match c {
        CoefSpec::Number(v) => constant_coefficient(*v),
        CoefSpec::Expr(e) => {
            let a = analytic(field, e)?;
            std::sync::Arc::new(move |x: &[f64]| a.eval(x))
        }
    })
}

/// Obstacle of the manufactured problem.
pub fn manufactured_obstacle(grid: &Grid<f64>) -> Field<f64> {
    Field::from_fn(grid, |x| -0.2 * x.iter().map(|&xi| (PI * xi).sin()).product::<f64>())
}

/// Everything a field resolution may need besides the expression itself.
pub struct ResolveContext<'a> {
    pub config: &'a RunConfig,
    pub grid: Grid<f64>,
    pub op: &'a AssembledOperator<f64>,
    /// Source of the run, required by `vi_of` and `manufactured` targets.
    pub f: Option<&'a Field<f64>>,
}

/// Failure to turn a field input into nodal values.
#[derive(Debug)]
pub enum ResolveError {
    Config(ConfigError),
    Solver(crate::error::Error),
}

impl From<ConfigError> for ResolveError {
    fn from(e: ConfigError) -> Self {
        ResolveError::Config(e)
    }
}

impl From<crate::error::Error> for ResolveError {
    fn from(e: crate::error::Error) -> Self {
        ResolveError::Solver(e)
    }
}

pub fn resolve_field(
    ctx: &ResolveContext<'_>,
    field: &str,
    role: Role,
    spec: &FieldSpec,
) -> Result<Field<f64>, ResolveError> {
    match spec {
        FieldSpec::Values(v) => Field::from_values(&ctx.grid, v.clone())
            .map_err(|e| ConfigError::schema(field, e.to_string()).into()),
        FieldSpec::Expr(text) => {
            let expr = parse_expr(field, text)?;
            eval_expr(ctx, field, role, &expr)
        }
    }
}

fn eval_expr(ctx: &ResolveContext<'_>, field: &str, role: Role, expr: &Expr) -> Result<Field<f64>, ResolveError> {
    let grid = &ctx.grid;
    let no_meaning = |name: &str| {
        ResolveError::Config(ConfigError::schema(field, format!("preset {name:?} has no meaning for this input")))
    };
    let source = || ctx.f.ok_or_else(|| ConfigError::schema(field, "needs the source f to be resolved first"));
    Ok(match expr {
        Expr::Analytic(a) => Field::from_fn(grid, |x| a.eval(x)),
        Expr::Benchmark => match role {
            Role::Source => Field::constant(grid, -8.0),
            Role::Obstacle | Role::Start | Role::Anchor => Field::constant(grid, -0.5),
            _ => return Err(no_meaning("benchmark")),
        },
        Expr::Manufactured => match role {
            Role::Source => Field::constant(grid, -8.0),
            Role::Obstacle | Role::Anchor => manufactured_obstacle(grid),
            Role::Start => Field::constant(grid, -1.0),
            Role::Target => {
                let vi = solve_vi(ctx.op, source()?, &manufactured_obstacle(grid), &ctx.config.vi_params())?;
                vi.y
            }
            Role::State => return Err(no_meaning("manufactured")),
        },
        Expr::ViOf(inner) => {
            let obstacle = eval_expr(ctx, field, Role::Obstacle, inner)?;
            solve_vi(ctx.op, source()?, &obstacle, &ctx.config.vi_params())?.y
        }
        Expr::Random(amp) => random_field(grid, ctx.config.seed, role, *amp),
        Expr::File(path) => {
            let full = ctx.config.base_dir.join(path);
            read_field_csv(grid, &full).map_err(|e| match e {
                FieldFileError::Missing => ConfigError::MissingInput {
                    field: field.to_string(),
                    path: full.display().to_string(),
                },
                FieldFileError::Invalid(m) => ConfigError::schema(field, format!("{}: {m}", full.display())),
            })?
        }
    })
}

/// Smooth seeded field: `amp * sum_k c_k prod_i sin(k pi x_i) / k^2` with
/// `c_k` uniform in `[-1, 1]`, four modes.
pub fn random_field(grid: &Grid<f64>, seed: u64, role: Role, amp: f64) -> Field<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_mul(0x9E37_79B9_7F4A_7C15) ^ role.salt());
    let c: Vec<f64> = (0..4).map(|_| rng.gen_range(-1.0..=1.0)).collect();
    Field::from_fn(grid, |x| {
        amp * c
            .iter()
            .enumerate()
            .map(|(k, ck)| {
                let kk = (k + 1) as f64;
                ck * x.iter().map(|&xi| (kk * PI * xi).sin()).product::<f64>() / (kk * kk)
            })
            .sum::<f64>()
    })
}

#[derive(Debug)]
pub enum FieldFileError {
    Missing,
    Invalid(String),
}

/// Reads a field CSV as written by [`Field::write_csv`]; the last column is
/// the value and rows must come in storage order.
pub fn read_field_csv(grid: &Grid<f64>, path: &Path) -> Result<Field<f64>, FieldFileError> {
    let text = match std::fs::read_to_string(path) {
        Ok(t) => t,
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => return Err(FieldFileError::Missing),
        Err(e) => return Err(FieldFileError::Invalid(e.to_string())),
    };
    let mut lines = text.lines();
    let header = lines.next().ok_or_else(|| FieldFileError::Invalid("empty file".into()))?;
    let expected = if grid.dim() == 1 { "i,x,value" } else { "i,j,x,y,value" };
    if header.trim() != expected {
        return Err(FieldFileError::Invalid(format!("expected header {expected:?}, got {header:?}")));
    }
    let mut values = Vec::with_capacity(grid.len());
    for (row, line) in lines.enumerate().filter(|(_, l)| !l.trim().is_empty()) {
        let last = line.rsplit(',').next().unwrap_or("");
        let v = last
            .trim()
            .parse::<f64>()
            .map_err(|_| FieldFileError::Invalid(format!("row {}: bad value {last:?}", row + 1)))?;
        values.push(v);
    }
    Field::from_values(grid, values).map_err(|e| FieldFileError::Invalid(e.to_string()))
}
