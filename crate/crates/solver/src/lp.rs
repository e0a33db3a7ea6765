//! Continuous relaxations.
//!
//! The simplex work is delegated to `microlp` (bounded revised primal/dual
//! simplex with sparse LU). This module owns the relaxation contract: integer
//! columns are relaxed to their bounds, the objective is rescaled to unit
//! magnitude before pivoting, and every returned primal point is re-checked
//! against the original rows so a numerically broken basis surfaces as an
//! error rather than as a wrong answer.

use microlp::{ComparisonOp, OptimizationDirection, Problem, SolveOutcome};
use thiserror::Error;

use crate::model::{MipModel, ModelError, Sense, VarId};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LpOptions {
    /// Maximum scaled row violation accepted in a returned primal point.
    pub feasibility_tol: f64,
}

impl Default for LpOptions {
    fn default() -> Self {
        Self {
            feasibility_tol: 1e-7,
        }
    }
}

#[derive(Debug, Error)]
pub enum LpError {
    #[error("invalid model: {0}")]
    Model(#[from] ModelError),
    #[error("LP subsolver failure: {0}")]
    Numerical(String),
    #[error("LP point violates row `{row}` by {violation:e} (tolerance {tolerance:e})")]
    Inaccurate {
        row: String,
        violation: f64,
        tolerance: f64,
    },
}

/// A solved relaxation together with the simplex state needed to re-solve
/// after tightening a column bound.
#[derive(Clone)]
pub struct Relaxation {
    solution: microlp::Solution,
    columns: Vec<microlp::Variable>,
    obj_scale: f64,
}

impl std::fmt::Debug for Relaxation {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Relaxation")
            .field("objective", &self.objective())
            .field("columns", &self.columns.len())
            .finish()
    }
}

#[derive(Debug, Clone)]
pub enum LpOutcome {
    Optimal(Relaxation),
    Infeasible,
    Unbounded,
}

impl Relaxation {
    pub fn objective(&self) -> f64 {
        self.solution.objective() / self.obj_scale
    }

    pub fn value(&self, var: VarId) -> f64 {
        self.solution.var_value_raw(self.columns[var.0])
    }

    pub fn values(&self) -> Vec<f64> {
        self.columns
            .iter()
            .map(|&c| self.solution.var_value_raw(c))
            .collect()
    }

    /// Cumulative simplex pivots spent on this state and its ancestors.
    pub fn iterations(&self) -> u64 {
        self.solution.stats().lp_iterations
    }

    /// Re-solves with column `var` fixed to `value`, warm-starting from this
    /// basis (dual simplex).
    pub fn fix(
        self,
        model: &MipModel,
        var: VarId,
        value: f64,
        opts: &LpOptions,
    ) -> Result<LpOutcome, LpError> {
        let Relaxation {
            solution,
            columns,
            obj_scale,
        } = self;
        let col = columns[var.0];
        match solution.fix_var(col, value) {
            Ok(outcome) => finish(model, outcome, columns, obj_scale, opts),
            Err(microlp::Error::Infeasible) => Ok(LpOutcome::Infeasible),
            Err(microlp::Error::Unbounded) => Ok(LpOutcome::Unbounded),
            Err(e) => Err(LpError::Numerical(e.to_string())),
        }
    }
}

/// Solves the continuous relaxation of `model` (binaries relaxed to [0, 1]).
pub fn solve_relaxation(model: &MipModel, opts: &LpOptions) -> Result<LpOutcome, LpError> {
    solve_relaxation_fixed(model, &[], opts)
}

/// Cold solve of the relaxation with some columns pinned to a value.
pub fn solve_relaxation_fixed(
    model: &MipModel,
    fixings: &[(VarId, f64)],
    opts: &LpOptions,
) -> Result<LpOutcome, LpError> {
    model.validate()?;
    let mut bounds: Vec<(f64, f64)> = model.vars.iter().map(|v| (v.lower, v.upper)).collect();
    for &(var, value) in fixings {
        bounds[var.0] = (value, value);
    }
    let max_obj = model.vars.iter().map(|v| v.obj.abs()).fold(0.0, f64::max);
    let obj_scale = if max_obj > 0.0 { 1.0 / max_obj } else { 1.0 };

    let mut problem = Problem::new(OptimizationDirection::Minimize);
    let columns: Vec<_> = model
        .vars
        .iter()
        .zip(&bounds)
        .map(|(v, &b)| problem.add_var(v.obj * obj_scale, b))
        .collect();
    for row in &model.rows {
        let terms: Vec<_> = row.terms.iter().map(|&(v, c)| (columns[v.0], c)).collect();
        let op = match row.sense {
            Sense::Le => ComparisonOp::Le,
            Sense::Ge => ComparisonOp::Ge,
            Sense::Eq => ComparisonOp::Eq,
        };
        problem.add_constraint(terms.as_slice(), op, row.rhs);
    }
    match problem.solve() {
        Ok(outcome) => finish(model, outcome, columns, obj_scale, opts),
        Err(microlp::Error::Infeasible) => Ok(LpOutcome::Infeasible),
        Err(microlp::Error::Unbounded) => Ok(LpOutcome::Unbounded),
        Err(e) => Err(LpError::Numerical(e.to_string())),
    }
}

fn finish(
    model: &MipModel,
    outcome: SolveOutcome,
    columns: Vec<microlp::Variable>,
    obj_scale: f64,
    opts: &LpOptions,
) -> Result<LpOutcome, LpError> {
    let solution = match outcome {
        SolveOutcome::Solution(s) => s,
        SolveOutcome::Interrupted(i) => {
            return Err(LpError::Numerical(format!(
                "simplex interrupted: {:?}",
                i.termination_reason()
            )))
        }
    };
    let relaxation = Relaxation {
        solution,
        columns,
        obj_scale,
    };
    check_rows(model, &relaxation.values(), opts.feasibility_tol)?;
    Ok(LpOutcome::Optimal(relaxation))
}

/// Row check with a per-row scale of `max(1, |rhs|, max |a_j x_j|)`.
fn check_rows(model: &MipModel, values: &[f64], tol: f64) -> Result<(), LpError> {
    for row in &model.rows {
        let scale = row
            .terms
            .iter()
            .map(|&(v, c)| (c * values[v.0]).abs())
            .fold(row.rhs.abs().max(1.0), f64::max);
        let violation = row.violation(values);
        if violation > tol * scale {
            return Err(LpError::Inaccurate {
                row: row.name.clone(),
                violation,
                tolerance: tol * scale,
            });
        }
    }
    Ok(())
}

/// Result of a one-shot LP solve.
#[derive(Debug, Clone, PartialEq)]
pub enum LpResult {
    Optimal { objective: f64, values: Vec<f64> },
    Infeasible,
    Unbounded,
}

/// One-shot relaxation solve returning plain values.
pub fn lp_solve(model: &MipModel, opts: &LpOptions) -> Result<LpResult, LpError> {
    Ok(match solve_relaxation(model, opts)? {
        LpOutcome::Optimal(r) => LpResult::Optimal {
            objective: r.objective(),
            values: r.values(),
        },
        LpOutcome::Infeasible => LpResult::Infeasible,
        LpOutcome::Unbounded => LpResult::Unbounded,
    })
}
