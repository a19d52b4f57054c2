//! Command dispatch and artifact emission for `obstacle-opt`.
//!
//! Every run writes into one output directory:
//!
//! * `manifest.json`: command, tool version, resolved config (defaults
//!   filled) and the artifact list; enough to repeat the run
//! * `summary.json`: the command's headline numbers and hard checks
//! * field CSVs (`i,x,value` / `i,j,x,y,value`) and table CSVs
//! * `timings.json`: wall-clock timings, the only non-reproducible file
//!
//! Numbers in CSVs carry 17 significant digits.

use std::fmt;
use std::fs;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::time::Instant;

use serde::Serialize;
use serde_json::{json, Value};

use crate::adjoint::ControlProblem;
use crate::config::{resolve_field, ConfigError, ResolveContext, ResolveError, Role, RunConfig};
use crate::error::Error;
use crate::grid::Field;
use crate::kkt::{audit, audit_delta, audit_sweep, AuditEntry};
use crate::operator::AssembledOperator;
use crate::optimizer::{optimize, Method, Termination};
use crate::state::{delta_continuation, solve_penalized, violation};
use crate::vi::solve_vi;

pub const EXIT_OK: i32 = 0;
pub const EXIT_CONFIG: i32 = 2;
pub const EXIT_SOLVER: i32 = 3;
pub const EXIT_AUDIT: i32 = 4;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Command {
    ViSolve,
    PenSolve,
    SweepDelta,
    Optimize,
    KktAudit,
}

impl Command {
    pub const ALL: [Command; 5] = [
        Command::ViSolve,
        Command::PenSolve,
        Command::SweepDelta,
        Command::Optimize,
        Command::KktAudit,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Command::ViSolve => "vi-solve",
            Command::PenSolve => "pen-solve",
            Command::SweepDelta => "sweep-delta",
            Command::Optimize => "optimize",
            Command::KktAudit => "kkt-audit",
        }
    }
}

impl FromStr for Command {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        Command::ALL
            .into_iter()
            .find(|c| c.name() == s)
            .ok_or_else(|| format!("unknown command {s:?}"))
    }
}

impl fmt::Display for Command {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// Command-line values that take precedence over the config file.
#[derive(Clone, Debug, Default)]
pub struct Overrides {
    pub method: Option<Method>,
    /// Sets the schedule of sweeping commands; its first entry is the
    /// penalty parameter of single-delta commands.
    pub delta: Option<Vec<f64>>,
}

impl Overrides {
    /// Folds the overrides into the config, which is then re-validated so
    /// the manifest echoes exactly what ran.
    pub fn apply(&self, cfg: &mut RunConfig) -> Result<(), ConfigError> {
        if let Some(m) = self.method {
            cfg.optimizer.method = m.to_string();
        }
        if let Some(d) = &self.delta {
            if d.is_empty() {
                return Err(ConfigError::Schema {
                    field: "--delta".into(),
                    message: "needs at least one value".into(),
                });
            }
            cfg.delta = d[0];
            cfg.delta_schedule = d.clone();
            cfg.optimizer.schedule = d.clone();
        }
        cfg.validate()
    }
}

#[derive(Debug)]
pub enum RunError {
    Config(ConfigError),
    Solver(Error),
    Io { path: String, message: String },
}

impl From<ConfigError> for RunError {
    fn from(e: ConfigError) -> Self {
        RunError::Config(e)
    }
}

impl From<ResolveError> for RunError {
    fn from(e: ResolveError) -> Self {
        match e {
            ResolveError::Config(c) => RunError::Config(c),
            ResolveError::Solver(s) => RunError::Solver(s),
        }
    }
}

impl From<Error> for RunError {
    fn from(e: Error) -> Self {
        RunError::Solver(e)
    }
}

impl fmt::Display for RunError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            RunError::Config(e) => write!(f, "{e}"),
            RunError::Solver(e) => write!(f, "{e}"),
            RunError::Io { path, message } => write!(f, "cannot write {path}: {message}"),
        }
    }
}

impl std::error::Error for RunError {}

impl RunError {
    pub fn exit_code(&self) -> i32 {
        match self {
            RunError::Config(_) => EXIT_CONFIG,
            RunError::Solver(e) if is_input_error(e) => EXIT_CONFIG,
            RunError::Solver(_) | RunError::Io { .. } => EXIT_SOLVER,
        }
    }

    pub fn kind(&self) -> &'static str {
        match self {
            RunError::Config(_) => "config",
            RunError::Solver(e) if is_input_error(e) => "config",
            RunError::Solver(_) => "solver",
            RunError::Io { .. } => "io",
        }
    }

    /// Machine-readable form printed on failure.
    pub fn to_json(&self) -> Value {
        let mut v = json!({
            "status": "error",
            "kind": self.kind(),
            "exit_code": self.exit_code(),
            "message": self.to_string(),
        });
        if let RunError::Config(c) = self {
            if let Some(field) = c.field() {
                v["field"] = json!(field);
            }
            match c {
                ConfigError::UnknownPreset { available, .. } => v["available"] = json!(available),
                ConfigError::MissingInput { path, .. } => v["path"] = json!(path),
                ConfigError::Parse { line, column, .. } => {
                    v["line"] = json!(line);
                    v["column"] = json!(column);
                }
                _ => {}
            }
        }
        v
    }
}

/// Problem data that cannot be solved as given, as opposed to a solver
/// that failed on valid data.
fn is_input_error(e: &Error) -> bool {
    matches!(
        e,
        Error::InvalidGrid(_)
            | Error::GridMismatch { .. }
            | Error::InvalidParameter { .. }
            | Error::LengthMismatch { .. }
            | Error::NonFinite { .. }
            | Error::NotElliptic { .. }
            | Error::NegativeReaction { .. }
            | Error::NotMMatrix(_)
    )
}

#[derive(Clone, Debug)]
pub struct RunOutcome {
    pub exit_code: i32,
    pub summary: Value,
    pub out_dir: PathBuf,
}

struct Artifacts {
    dir: PathBuf,
    written: Vec<String>,
}

impl Artifacts {
    fn new(dir: &Path) -> Result<Self, RunError> {
        fs::create_dir_all(dir).map_err(|e| io_error(dir, e))?;
        Ok(Self {
            dir: dir.to_path_buf(),
            written: Vec::new(),
        })
    }

    fn create(&mut self, name: &str) -> Result<BufWriter<fs::File>, RunError> {
        let path = self.dir.join(name);
        let file = fs::File::create(&path).map_err(|e| io_error(&path, e))?;
        self.written.push(name.to_string());
        Ok(BufWriter::new(file))
    }

    fn finish(&self, name: &str, mut w: BufWriter<fs::File>) -> Result<(), RunError> {
        w.flush().map_err(|e| io_error(&self.dir.join(name), e))
    }

    fn field(&mut self, name: &str, u: &Field<f64>) -> Result<(), RunError> {
        let mut w = self.create(name)?;
        u.write_csv(&mut w).map_err(|e| io_error(&self.dir.join(name), e))?;
        self.finish(name, w)
    }

    fn json(&mut self, name: &str, v: &Value) -> Result<(), RunError> {
        let mut w = self.create(name)?;
        let text = serde_json::to_string_pretty(v).expect("json values serialize");
        writeln!(w, "{text}").map_err(|e| io_error(&self.dir.join(name), e))?;
        self.finish(name, w)
    }

    fn table(&mut self, name: &str, header: &[&str], rows: &[Vec<Cell>]) -> Result<(), RunError> {
        let mut w = self.create(name)?;
        let res = (|| -> std::io::Result<()> {
            writeln!(w, "{}", header.join(","))?;
            for row in rows {
                let cells: Vec<String> = row.iter().map(Cell::to_string).collect();
                writeln!(w, "{}", cells.join(","))?;
            }
            Ok(())
        })();
        res.map_err(|e| io_error(&self.dir.join(name), e))?;
        self.finish(name, w)
    }

    fn matrix(&mut self, op: &AssembledOperator<f64>) -> Result<(), RunError> {
        let name = "operator.mtx";
        let mut w = self.create(name)?;
        op.matrix()
            .write_matrix_market(&mut w)
            .map_err(|e| io_error(&self.dir.join(name), e))?;
        self.finish(name, w)
    }
}

enum Cell {
    Int(usize),
    Real(f64),
}

impl fmt::Display for Cell {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Cell::Int(i) => write!(f, "{i}"),
            Cell::Real(v) => write!(f, "{v:.16e}"),
        }
    }
}

fn io_error(path: &Path, e: std::io::Error) -> RunError {
    RunError::Io {
        path: path.display().to_string(),
        message: e.to_string(),
    }
}

fn entries_json(entries: &[AuditEntry]) -> Value {
    serde_json::to_value(entries).expect("entries serialize")
}

fn report_passes(entries: &[AuditEntry]) -> bool {
    entries.iter().all(|e| e.pass || !e.hard)
}

/// Fields shared by all commands, resolved once.
struct Inputs {
    op: AssembledOperator<f64>,
    f: Field<f64>,
}

fn inputs(cfg: &RunConfig) -> Result<Inputs, RunError> {
    let op = cfg.operator()?;
    let ctx = ResolveContext {
        config: cfg,
        grid: cfg.grid(),
        op: &op,
        f: None,
    };
    let f = resolve_field(&ctx, "f", Role::Source, &cfg.f)?;
    Ok(Inputs { op, f })
}

fn resolve(cfg: &RunConfig, inp: &Inputs, field: &str, role: Role, spec: &crate::config::FieldSpec) -> Result<Field<f64>, RunError> {
    let ctx = ResolveContext {
        config: cfg,
        grid: cfg.grid(),
        op: &inp.op,
        f: Some(&inp.f),
    };
    Ok(resolve_field(&ctx, field, role, spec)?)
}

fn problem(cfg: &RunConfig, inp: &Inputs) -> Result<ControlProblem<f64>, RunError> {
    let z = resolve(cfg, inp, "z", Role::Target, &cfg.z)?;
    let anchor = match &cfg.anchor {
        Some(a) => Some(resolve(cfg, inp, "anchor", Role::Anchor, a)?),
        None => None,
    };
    Ok(ControlProblem::new(inp.op.clone(), inp.f.clone(), z, cfg.nu, anchor)?)
}

/// Runs one command, writing its artifacts into `out_dir`.
pub fn run(cfg: &RunConfig, command: Command, out_dir: &Path) -> Result<RunOutcome, RunError> {
    let start = Instant::now();
    let mut art = Artifacts::new(out_dir)?;
    let inp = inputs(cfg)?;
    if cfg.export_matrix {
        art.matrix(&inp.op)?;
    }
    let (exit_code, mut summary) = match command {
        Command::ViSolve => vi_solve(cfg, &inp, &mut art)?,
        Command::PenSolve => pen_solve(cfg, &inp, &mut art)?,
        Command::SweepDelta => sweep_delta(cfg, &inp, &mut art)?,
        Command::Optimize => run_optimize(cfg, &inp, &mut art)?,
        Command::KktAudit => kkt_audit(cfg, &inp, &mut art)?,
    };
    summary["command"] = json!(command.name());
    summary["exit_code"] = json!(exit_code);
    summary["status"] = json!(match exit_code {
        EXIT_OK => "ok",
        EXIT_AUDIT => "audit_failed",
        _ => "solver_failed",
    });
    art.json("summary.json", &summary)?;
    let mut files = art.written.clone();
    files.push("manifest.json".into());
    files.sort();
    let manifest = json!({
        "tool": "obstacle-opt",
        "version": env!("CARGO_PKG_VERSION"),
        "command": command.name(),
        "config": cfg,
        "artifacts": files,
    });
    art.json("manifest.json", &manifest)?;
    let timings = json!({ "elapsed_seconds": start.elapsed().as_secs_f64() });
    art.json("timings.json", &timings)?;
    Ok(RunOutcome {
        exit_code,
        summary,
        out_dir: out_dir.to_path_buf(),
    })
}

fn vi_solve(cfg: &RunConfig, inp: &Inputs, art: &mut Artifacts) -> Result<(i32, Value), RunError> {
    let phi = resolve(cfg, inp, "phi", Role::Obstacle, &cfg.phi)?;
    let sol = solve_vi(&inp.op, &inp.f, &phi, &cfg.vi_params())?;
    art.field("y.csv", &sol.y)?;
    art.field("residual.csv", &sol.residual_field)?;
    art.field("obstacle.csv", &phi)?;
    let active = Field::from_values(
        phi.grid(),
        sol.active_set.iter().map(|&a| if a { 1.0 } else { 0.0 }).collect(),
    )?;
    art.field("active.csv", &active)?;
    let ok = sol.converged && sol.complementarity <= sol.tolerance;
    let mut summary = json!({
        "complementarity_residual": sol.complementarity,
        "tolerance": sol.tolerance,
        "iterations": sol.iterations,
        "converged": sol.converged,
        "active_count": sol.active_count(),
    });
    if phi.grid().dim() == 1 {
        let xs: Vec<f64> = (0..phi.len())
            .filter(|&k| sol.active_set[k])
            .map(|k| phi.grid().coords(k)[0])
            .collect();
        if let (Some(lo), Some(hi)) = (xs.first(), xs.last()) {
            summary["contact_interval"] = json!([lo, hi]);
        }
    }
    Ok((if ok { EXIT_OK } else { EXIT_SOLVER }, summary))
}

fn pen_solve(cfg: &RunConfig, inp: &Inputs, art: &mut Artifacts) -> Result<(i32, Value), RunError> {
    let phi = resolve(cfg, inp, "phi", Role::Obstacle, &cfg.phi)?;
    let st = solve_penalized(&inp.op, &inp.f, &phi, cfg.delta, &cfg.newton(), None)?;
    art.field("y.csv", &st.y)?;
    art.field("xi.csv", &st.xi)?;
    let summary = json!({
        "delta": cfg.delta,
        "newton_iterations": st.newton_iterations,
        "residual_norm": st.residual_norm,
        "violation": violation(&st.y, &phi)?,
    });
    Ok((EXIT_OK, summary))
}

fn sweep_delta(cfg: &RunConfig, inp: &Inputs, art: &mut Artifacts) -> Result<(i32, Value), RunError> {
    let phi = resolve(cfg, inp, "phi", Role::Obstacle, &cfg.phi)?;
    let vi = solve_vi(&inp.op, &inp.f, &phi, &cfg.vi_params())?;
    if !vi.converged {
        return Err(RunError::Solver(Error::LinearSolve {
            residual: vi.complementarity,
            target: vi.tolerance,
        }));
    }
    let path = delta_continuation(&inp.op, &inp.f, &phi, &cfg.delta_schedule, &cfg.newton(), Some(&vi.y))?;
    let rows: Vec<Vec<Cell>> = path
        .iter()
        .map(|pt| {
            let r = pt.versus_reference.expect("reference given");
            vec![
                Cell::Real(pt.state.delta),
                Cell::Int(pt.state.newton_iterations),
                Cell::Real(r.linf),
                Cell::Real(r.h1),
                Cell::Real(pt.violation),
            ]
        })
        .collect();
    art.table(
        "sweep.csv",
        &["delta", "newton_its", "linf_err_vs_vi", "h1_err_vs_vi", "violation"],
        &rows,
    )?;
    art.field("vi_y.csv", &vi.y)?;
    if let Some(last) = path.last() {
        art.field("y.csv", &last.state.y)?;
    }
    let h1: Vec<f64> = path.iter().map(|p| p.versus_reference.expect("reference given").h1).collect();
    let decreasing = h1.windows(2).all(|w| w[1] < w[0]);
    let summary = json!({
        "deltas": cfg.delta_schedule,
        "h1_err_vs_vi": h1,
        "h1_strictly_decreasing": decreasing,
    });
    Ok((if decreasing { EXIT_OK } else { EXIT_AUDIT }, summary))
}

fn run_optimize(cfg: &RunConfig, inp: &Inputs, art: &mut Artifacts) -> Result<(i32, Value), RunError> {
    let pb = problem(cfg, inp)?;
    let phi0 = resolve(cfg, inp, "phi0", Role::Start, &cfg.phi0)?;
    let params = cfg.optimizer_params();
    let res = optimize(&pb, &phi0, &params)?;
    let rows: Vec<Vec<Cell>> = res
        .history
        .iter()
        .map(|r| {
            vec![
                Cell::Int(r.iter),
                Cell::Real(r.delta),
                Cell::Real(r.objective.j),
                Cell::Real(r.objective.tracking),
                Cell::Real(r.objective.regularization),
                Cell::Real(r.grad_norm),
                Cell::Real(r.step),
            ]
        })
        .collect();
    art.table(
        "iterations.csv",
        &["iter", "delta", "J", "tracking", "reg", "grad_norm", "step"],
        &rows,
    )?;
    for (name, u) in [
        ("phi.csv", &res.phi),
        ("y.csv", &res.y),
        ("p.csv", &res.p),
        ("mu.csv", &res.mu),
        ("xi.csv", &res.xi),
    ] {
        art.field(name, u)?;
    }
    let entries = res.kkt.report(&cfg.audit_tolerances());
    art.json(
        "kkt.json",
        &json!({ "delta": res.delta, "pass": report_passes(&entries), "entries": entries_json(&entries) }),
    )?;
    // descent within each stage is the gradient method's contract
    let descent = res.method != Method::Gradient
        || res
            .history
            .windows(2)
            .all(|w| w[0].stage != w[1].stage || w[1].objective.j <= w[0].objective.j);
    let j0 = res.history.first().map(|r| r.objective.j).unwrap_or(f64::NAN);
    let termination = match &res.termination {
        Termination::Converged => json!("converged"),
        Termination::IterationCap => json!("iteration_cap"),
        Termination::LineSearchFailed { delta, iteration } => {
            json!({ "line_search_failed": { "delta": delta, "iteration": iteration } })
        }
    };
    let summary = json!({
        "method": res.method.to_string(),
        "termination": termination,
        "converged": res.converged,
        "iterations": res.history.len(),
        "delta": res.delta,
        "J_initial": j0,
        "J_final": res.objective.j,
        "J_reduction": 1.0 - res.objective.j / j0,
        "grad_norm_final": res.history.last().map(|r| r.grad_norm),
        "descent_within_stages": descent,
        "vi_gap_h1": res.vi_gap,
        "kkt_pass": report_passes(&entries),
    });
    let code = if matches!(res.termination, Termination::LineSearchFailed { .. }) {
        EXIT_SOLVER
    } else if !descent {
        EXIT_AUDIT
    } else {
        EXIT_OK
    };
    Ok((code, summary))
}

#[derive(Serialize)]
struct SweepRow {
    delta: f64,
    c_mu_gap: f64,
    c_xi_p: f64,
    xi_sign: f64,
    mu_p_pairing: f64,
    deep_violation_fraction: f64,
    mu_mass: f64,
}

fn kkt_audit(cfg: &RunConfig, inp: &Inputs, art: &mut Artifacts) -> Result<(i32, Value), RunError> {
    let pb = problem(cfg, inp)?;
    let phi = resolve(cfg, inp, "phi", Role::Obstacle, &cfg.phi)?;
    let tol = cfg.audit_tolerances();
    let (residuals, mode, extra) = match &cfg.state {
        Some(s) => {
            let y = resolve(cfg, inp, "state.y", Role::State, &s.y)?;
            let p = resolve(cfg, inp, "state.p", Role::State, &s.p)?;
            let mu = resolve(cfg, inp, "state.mu", Role::State, &s.mu)?;
            let xi = resolve(cfg, inp, "state.xi", Role::State, &s.xi)?;
            (audit(&pb, &phi, &y, &p, &mu, &xi, cfg.nu)?, "given", json!({}))
        }
        None => {
            let a = audit_delta(&pb, &phi, cfg.delta, &cfg.newton(), None)?;
            let extra = json!({
                "delta": cfg.delta,
                "deep_violation_fraction": a.deep_violation_fraction,
                "mu_mass": a.mu_mass,
            });
            (a.residuals, "solved", extra)
        }
    };
    let entries = residuals.report(&tol);
    let pass = report_passes(&entries);
    let mut report = json!({ "mode": mode, "pass": pass, "entries": entries_json(&entries) });
    for (k, v) in extra.as_object().expect("object") {
        report[k] = v.clone();
    }
    art.json("kkt.json", &report)?;
    let mut summary = json!({ "mode": mode, "pass": pass });
    if !cfg.audit.sweep.is_empty() {
        let sweep = audit_sweep(&pb, &phi, &cfg.audit.sweep, &cfg.newton())?;
        let rows: Vec<SweepRow> = sweep
            .iter()
            .map(|a| SweepRow {
                delta: a.delta,
                c_mu_gap: a.residuals.c_mu_gap,
                c_xi_p: a.residuals.c_xi_p,
                xi_sign: a.residuals.xi_sign,
                mu_p_pairing: a.residuals.mu_p_pairing,
                deep_violation_fraction: a.deep_violation_fraction,
                mu_mass: a.mu_mass,
            })
            .collect();
        let cells: Vec<Vec<Cell>> = rows
            .iter()
            .map(|r| {
                [r.delta, r.c_mu_gap, r.c_xi_p, r.xi_sign, r.mu_p_pairing, r.deep_violation_fraction, r.mu_mass]
                    .into_iter()
                    .map(Cell::Real)
                    .collect()
            })
            .collect();
        art.table(
            "kkt_sweep.csv",
            &["delta", "c_mu_gap", "c_xi_p", "xi_sign", "mu_p_pairing", "deep_violation_fraction", "mu_mass"],
            &cells,
        )?;
        summary["sweep"] = serde_json::to_value(&rows).expect("rows serialize");
    }
    Ok((if pass { EXIT_OK } else { EXIT_AUDIT }, summary))
}
