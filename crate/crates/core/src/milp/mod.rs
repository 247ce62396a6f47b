//! Solver-independent MILP construction, a narrow backend adapter, big-M
//! and polygon linearization helpers, and a brute-force oracle for tiny
//! restoration instances.

mod backend;
mod linearize;
mod lp_format;
pub mod oracle;

use std::collections::HashMap;
use std::fmt;

use sha2::{Digest, Sha256};

pub use backend::{backend_from_env, solve, HighsBackend, SolverBackend, SOLVER_ENV};
pub use linearize::{linearize_product_bin_cont, polygon_scale, polygon_thermal_constraints};

#[derive(Debug, thiserror::Error)]
pub enum MilpError {
    #[error("duplicate variable name `{0}`")]
    DuplicateName(String),
    #[error("variable `{name}` has invalid bounds [{lo}, {hi}]")]
    InvalidBounds { name: String, lo: f64, hi: f64 },
    #[error("product linearization needs finite bounds on `{0}`")]
    UnboundedFactor(String),
    #[error("solver backend `{0}` is not available")]
    BackendUnavailable(String),
    #[error("solver failure: {0}")]
    Solver(String),
    #[error("oracle would enumerate {binaries} binaries (limit {cap})")]
    OracleLimit { binaries: usize, cap: usize },
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct VarId(pub usize);

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum VarKind {
    Binary,
    Integer,
    Continuous,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Variable {
    pub name: String,
    pub kind: VarKind,
    pub lo: f64,
    pub hi: f64,
}

/// Sparse affine expression `Σ c·x + constant`.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct LinExpr {
    pub terms: Vec<(VarId, f64)>,
    pub constant: f64,
}

impl LinExpr {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn var(v: VarId) -> Self {
        LinExpr {
            terms: vec![(v, 1.0)],
            constant: 0.0,
        }
    }

    pub fn term(v: VarId, coef: f64) -> Self {
        LinExpr {
            terms: vec![(v, coef)],
            constant: 0.0,
        }
    }

    pub fn constant(c: f64) -> Self {
        LinExpr {
            terms: Vec::new(),
            constant: c,
        }
    }

    pub fn add(&mut self, v: VarId, coef: f64) -> &mut Self {
        self.terms.push((v, coef));
        self
    }

    pub fn add_constant(&mut self, c: f64) -> &mut Self {
        self.constant += c;
        self
    }

    pub fn add_expr(&mut self, other: &LinExpr, scale: f64) -> &mut Self {
        self.terms
            .extend(other.terms.iter().map(|(v, c)| (*v, c * scale)));
        self.constant += other.constant * scale;
        self
    }

    pub fn with(mut self, v: VarId, coef: f64) -> Self {
        self.add(v, coef);
        self
    }

    pub fn plus(mut self, other: &LinExpr, scale: f64) -> Self {
        self.add_expr(other, scale);
        self
    }

    pub fn scaled(&self, k: f64) -> Self {
        LinExpr::new().plus(self, k)
    }

    /// Merges duplicate variables, drops zero coefficients, sorts by id.
    pub fn canonical(&self) -> LinExpr {
        let mut terms = self.terms.clone();
        terms.sort_by_key(|(v, _)| *v);
        let mut merged: Vec<(VarId, f64)> = Vec::with_capacity(terms.len());
        for (v, c) in terms {
            match merged.last_mut() {
                Some((last, acc)) if *last == v => *acc += c,
                _ => merged.push((v, c)),
            }
        }
        merged.retain(|(_, c)| *c != 0.0);
        LinExpr {
            terms: merged,
            constant: self.constant,
        }
    }

    pub fn eval(&self, values: &[f64]) -> f64 {
        self.constant + self.terms.iter().map(|(v, c)| c * values[v.0]).sum::<f64>()
    }

    pub fn is_constant(&self) -> bool {
        self.terms.iter().all(|(_, c)| *c == 0.0)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Relation {
    Le,
    Eq,
    Ge,
}

impl fmt::Display for Relation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Relation::Le => "<=",
            Relation::Eq => "=",
            Relation::Ge => ">=",
        })
    }
}

/// `expr (rel) rhs`, stored canonically with the constant moved to `rhs`.
#[derive(Clone, Debug, PartialEq)]
pub struct Constraint {
    pub name: String,
    pub expr: LinExpr,
    pub rel: Relation,
    pub rhs: f64,
}

impl Constraint {
    pub fn new(name: impl Into<String>, expr: LinExpr, rel: Relation, rhs: f64) -> Self {
        let mut expr = expr.canonical();
        let rhs = rhs - expr.constant;
        expr.constant = 0.0;
        Constraint {
            name: name.into(),
            expr,
            rel,
            rhs,
        }
    }

    /// Signed violation at `values`; zero when satisfied.
    pub fn violation(&self, values: &[f64]) -> f64 {
        let lhs = self.expr.eval(values);
        match self.rel {
            Relation::Le => (lhs - self.rhs).max(0.0),
            Relation::Ge => (self.rhs - lhs).max(0.0),
            Relation::Eq => (lhs - self.rhs).abs(),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Sense {
    Maximize,
    Minimize,
}

#[derive(Clone, Debug)]
pub struct MilpModel {
    vars: Vec<Variable>,
    names: HashMap<String, VarId>,
    constraints: Vec<Constraint>,
    objective: LinExpr,
    sense: Sense,
}

impl Default for MilpModel {
    fn default() -> Self {
        Self::new()
    }
}

impl MilpModel {
    pub fn new() -> Self {
        MilpModel {
            vars: Vec::new(),
            names: HashMap::new(),
            constraints: Vec::new(),
            objective: LinExpr::new(),
            sense: Sense::Maximize,
        }
    }

    pub fn add_var(
        &mut self,
        name: impl Into<String>,
        kind: VarKind,
        lo: f64,
        hi: f64,
    ) -> Result<VarId, MilpError> {
        let name = name.into();
        let (lo, hi) = match kind {
            VarKind::Binary => (lo.max(0.0), hi.min(1.0)),
            _ => (lo, hi),
        };
        if lo.is_nan() || hi.is_nan() || lo > hi {
            return Err(MilpError::InvalidBounds { name, lo, hi });
        }
        if self.names.contains_key(&name) {
            return Err(MilpError::DuplicateName(name));
        }
        let id = VarId(self.vars.len());
        self.names.insert(name.clone(), id);
        self.vars.push(Variable { name, kind, lo, hi });
        Ok(id)
    }

    pub fn binary(&mut self, name: impl Into<String>) -> Result<VarId, MilpError> {
        self.add_var(name, VarKind::Binary, 0.0, 1.0)
    }

    pub fn continuous(
        &mut self,
        name: impl Into<String>,
        lo: f64,
        hi: f64,
    ) -> Result<VarId, MilpError> {
        self.add_var(name, VarKind::Continuous, lo, hi)
    }

    pub fn constrain(&mut self, name: impl Into<String>, expr: LinExpr, rel: Relation, rhs: f64) {
        self.constraints.push(Constraint::new(name, expr, rel, rhs));
    }

    pub fn push_constraint(&mut self, c: Constraint) {
        self.constraints.push(c);
    }

    /// Narrows a variable's bounds to a single value.
    pub fn fix(&mut self, v: VarId, value: f64) {
        let var = &mut self.vars[v.0];
        var.lo = value;
        var.hi = value;
    }

    pub fn set_bounds(&mut self, v: VarId, lo: f64, hi: f64) {
        let var = &mut self.vars[v.0];
        var.lo = lo;
        var.hi = hi;
    }

    pub fn set_objective(&mut self, sense: Sense, objective: LinExpr) {
        self.sense = sense;
        self.objective = objective.canonical();
    }

    pub fn vars(&self) -> &[Variable] {
        &self.vars
    }

    pub fn var(&self, v: VarId) -> &Variable {
        &self.vars[v.0]
    }

    pub fn var_by_name(&self, name: &str) -> Option<VarId> {
        self.names.get(name).copied()
    }

    pub fn constraints(&self) -> &[Constraint] {
        &self.constraints
    }

    pub fn objective(&self) -> &LinExpr {
        &self.objective
    }

    pub fn sense(&self) -> Sense {
        self.sense
    }

    pub fn num_vars(&self) -> usize {
        self.vars.len()
    }

    pub fn num_binaries(&self) -> usize {
        self.vars
            .iter()
            .filter(|v| v.kind != VarKind::Continuous)
            .count()
    }

    /// LP-format text of the model.
    pub fn to_lp_string(&self) -> String {
        lp_format::write_lp(self)
    }

    /// SHA-256 of the LP text; identical inputs give identical fingerprints.
    pub fn fingerprint(&self) -> String {
        hex::encode(Sha256::digest(self.to_lp_string().as_bytes()))
    }

    /// Largest bound or constraint violation of an assignment.
    pub fn max_violation(&self, values: &[f64]) -> f64 {
        let bounds = self.vars.iter().zip(values).map(|(v, x)| {
            let mut viol = (v.lo - x).max(x - v.hi).max(0.0);
            if v.kind != VarKind::Continuous {
                viol = viol.max((x - x.round()).abs());
            }
            viol
        });
        let rows = self.constraints.iter().map(|c| c.violation(values));
        bounds.chain(rows).fold(0.0, f64::max)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SolveOptions {
    pub time_limit_s: Option<f64>,
    pub mip_gap: f64,
    /// Absolute gap; the solver default applies when `None`.
    pub mip_abs_gap: Option<f64>,
    pub threads: Option<usize>,
    pub random_seed: u64,
}

impl Default for SolveOptions {
    fn default() -> Self {
        SolveOptions {
            time_limit_s: None,
            mip_gap: 1e-6,
            mip_abs_gap: None,
            threads: Some(1),
            random_seed: 0,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, serde::Serialize)]
#[serde(rename_all = "snake_case")]
pub enum SolveStatus {
    Optimal,
    Infeasible,
    TimeLimit,
    Error,
}

#[derive(Clone, Debug, PartialEq, serde::Serialize)]
pub struct SolveStats {
    pub backend: String,
    pub wall_time_s: f64,
    pub mip_gap: Option<f64>,
    pub detail: String,
    pub num_vars: usize,
    pub num_binaries: usize,
    pub num_constraints: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SolveResult {
    pub status: SolveStatus,
    pub objective: Option<f64>,
    /// Present iff optimal or a time-limited run produced an incumbent.
    pub values: Option<Vec<f64>>,
    pub stats: SolveStats,
}

impl SolveResult {
    pub fn value(&self, v: VarId) -> Option<f64> {
        self.values.as_ref().map(|vals| vals[v.0])
    }

    pub fn has_solution(&self) -> bool {
        self.values.is_some()
    }
}
