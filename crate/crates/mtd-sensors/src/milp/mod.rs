//! Generic mixed-integer linear programs: model representation, a
//! self-contained solver (two-phase primal simplex plus branch-and-bound on
//! binary variables), and a CPLEX-LP text export for external solvers.

mod branch_bound;
mod lp_format;
mod simplex;

pub use lp_format::export_lp_file;
pub use lp_format::write_lp;

use std::collections::BTreeMap;

use serde::Serialize;
use thiserror::Error;

/// Centralized tolerances: LP feasibility, integrality, absolute B&B gap.
pub const FEAS_TOL: f64 = 1e-7;
pub const INT_TOL: f64 = 1e-6;
pub const GAP_TOL: f64 = 1e-8;

#[derive(Debug, Error)]
pub enum MilpError {
    #[error("invalid model: {0}")]
    InvalidModel(String),
    #[error("numerical failure: {0}")]
    NumericalFailure(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum VarKind {
    Continuous,
    Binary,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct VarId(pub usize);

#[derive(Debug, Clone)]
pub struct Variable {
    pub name: String,
    pub lb: f64,
    pub ub: f64,
    pub kind: VarKind,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Relation {
    Le,
    Ge,
    Eq,
}

#[derive(Debug, Clone)]
pub struct Constraint {
    pub name: String,
    /// Coefficients keyed by variable; duplicate adds are accumulated.
    pub terms: BTreeMap<VarId, f64>,
    pub rel: Relation,
    pub rhs: f64,
}

/// A minimization MILP over continuous and binary variables.
#[derive(Debug, Clone, Default)]
pub struct MilpModel {
    pub vars: Vec<Variable>,
    /// Objective coefficients (minimize); absent means zero.
    pub objective: BTreeMap<VarId, f64>,
    pub constraints: Vec<Constraint>,
}

impl MilpModel {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add_var(&mut self, name: impl Into<String>, lb: f64, ub: f64) -> VarId {
        let id = VarId(self.vars.len());
        self.vars.push(Variable { name: name.into(), lb, ub, kind: VarKind::Continuous });
        id
    }

    pub fn add_binary(&mut self, name: impl Into<String>) -> VarId {
        let id = VarId(self.vars.len());
        self.vars.push(Variable { name: name.into(), lb: 0.0, ub: 1.0, kind: VarKind::Binary });
        id
    }

    pub fn set_objective(&mut self, var: VarId, coef: f64) {
        *self.objective.entry(var).or_insert(0.0) += coef;
    }

    pub fn add_constraint(
        &mut self,
        name: impl Into<String>,
        terms: impl IntoIterator<Item = (VarId, f64)>,
        rel: Relation,
        rhs: f64,
    ) {
        let mut map = BTreeMap::new();
        for (v, c) in terms {
            *map.entry(v).or_insert(0.0) += c;
        }
        map.retain(|_, c| *c != 0.0);
        self.constraints.push(Constraint { name: name.into(), terms: map, rel, rhs });
    }

    /// Pins a variable to a constant (used to fix binaries for certification).
    pub fn fix_var(&mut self, var: VarId, value: f64) {
        self.vars[var.0].lb = value;
        self.vars[var.0].ub = value;
    }

    pub fn binaries(&self) -> Vec<VarId> {
        self.vars
            .iter()
            .enumerate()
            .filter(|(_, v)| v.kind == VarKind::Binary)
            .map(|(i, _)| VarId(i))
            .collect()
    }

    pub fn validate(&self) -> Result<(), MilpError> {
        for (i, v) in self.vars.iter().enumerate() {
            if v.lb.is_nan() || v.ub.is_nan() || v.lb > v.ub + 1e-12 {
                return Err(MilpError::InvalidModel(format!(
                    "variable {} has bounds [{}, {}]",
                    v.name, v.lb, v.ub
                )));
            }
            if v.kind == VarKind::Binary && (v.lb < -INT_TOL || v.ub > 1.0 + INT_TOL) {
                return Err(MilpError::InvalidModel(format!(
                    "binary variable {} has bounds outside [0, 1]",
                    v.name
                )));
            }
            let _ = i;
        }
        let check = |id: VarId, c: f64, what: &str| -> Result<(), MilpError> {
            if id.0 >= self.vars.len() {
                return Err(MilpError::InvalidModel(format!("{what} references undeclared variable")));
            }
            if !c.is_finite() {
                return Err(MilpError::InvalidModel(format!(
                    "{what} has non-finite coefficient on {}",
                    self.vars[id.0].name
                )));
            }
            Ok(())
        };
        for (&id, &c) in &self.objective {
            check(id, c, "objective")?;
        }
        for con in &self.constraints {
            for (&id, &c) in &con.terms {
                check(id, c, &format!("constraint {}", con.name))?;
            }
            if !con.rhs.is_finite() {
                return Err(MilpError::InvalidModel(format!(
                    "constraint {} has non-finite right-hand side",
                    con.name
                )));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum SolveStatus {
    Optimal,
    Infeasible,
    Unbounded,
    GapLimit,
}

#[derive(Debug, Clone, Default, Serialize)]
pub struct SolveStats {
    pub nodes: usize,
    pub lp_iterations: usize,
    pub wall_time_secs: f64,
}

#[derive(Debug, Clone)]
pub struct MilpSolution {
    pub status: SolveStatus,
    pub objective_value: f64,
    /// Per-variable values, indexed by `VarId.0`. Empty when no incumbent.
    pub assignment: Vec<f64>,
    pub stats: SolveStats,
}

impl MilpSolution {
    pub fn value(&self, var: VarId) -> f64 {
        self.assignment[var.0]
    }
}

#[derive(Debug, Clone)]
pub struct SolveOptions {
    pub feas_tol: f64,
    pub int_tol: f64,
    /// Absolute optimality gap for branch-and-bound.
    pub gap: f64,
    pub max_nodes: usize,
}

impl Default for SolveOptions {
    fn default() -> Self {
        SolveOptions { feas_tol: FEAS_TOL, int_tol: INT_TOL, gap: GAP_TOL, max_nodes: 200_000 }
    }
}

/// Solves the MILP by branch-and-bound over its binary variables.
pub fn solve(model: &MilpModel, opts: &SolveOptions) -> Result<MilpSolution, MilpError> {
    model.validate()?;
    branch_bound::solve(model, opts)
}

/// Solves the LP relaxation (integrality dropped).
pub fn solve_lp_relaxation(model: &MilpModel) -> Result<MilpSolution, MilpError> {
    model.validate()?;
    let start = std::time::Instant::now();
    let res = simplex::solve_lp(model, &[])?;
    Ok(MilpSolution {
        status: match res.status {
            simplex::LpStatus::Optimal => SolveStatus::Optimal,
            simplex::LpStatus::Infeasible => SolveStatus::Infeasible,
            simplex::LpStatus::Unbounded => SolveStatus::Unbounded,
        },
        objective_value: res.objective,
        assignment: res.x,
        stats: SolveStats {
            nodes: 1,
            lp_iterations: res.iterations,
            wall_time_secs: start.elapsed().as_secs_f64(),
        },
    })
}
