//! Sparse row-oriented MILP representation.

use std::fmt;

use thiserror::Error;

/// Index of a column in a [`MipModel`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct VarId(pub usize);

/// Index of a row in a [`MipModel`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct RowId(pub usize);

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum VarKind {
    Continuous,
    Binary,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Sense {
    Le,
    Ge,
    Eq,
}

impl fmt::Display for Sense {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Sense::Le => "<=",
            Sense::Ge => ">=",
            Sense::Eq => "=",
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Variable {
    pub name: String,
    pub kind: VarKind,
    pub lower: f64,
    pub upper: f64,
    pub obj: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Row {
    pub name: String,
    pub terms: Vec<(VarId, f64)>,
    pub sense: Sense,
    pub rhs: f64,
}

impl Row {
    pub fn activity(&self, values: &[f64]) -> f64 {
        self.terms.iter().map(|&(v, c)| c * values[v.0]).sum()
    }

    /// Amount by which `values` violates this row (0 when satisfied).
    pub fn violation(&self, values: &[f64]) -> f64 {
        let lhs = self.activity(values);
        match self.sense {
            Sense::Le => (lhs - self.rhs).max(0.0),
            Sense::Ge => (self.rhs - lhs).max(0.0),
            Sense::Eq => (lhs - self.rhs).abs(),
        }
    }
}

#[derive(Debug, Error, PartialEq)]
pub enum ModelError {
    #[error("model has no variables")]
    Empty,
    #[error("row `{row}` references undeclared variable index {var}")]
    UnknownVariable { row: String, var: usize },
    #[error("row `{row}` has a non-finite coefficient or right-hand side")]
    NonFiniteRow { row: String },
    #[error("variable `{name}` has invalid bounds [{lower}, {upper}]")]
    InvalidBounds {
        name: String,
        lower: f64,
        upper: f64,
    },
    #[error("variable `{name}` has a non-finite objective coefficient")]
    NonFiniteObjective { name: String },
}

/// A minimization MILP: `min c'x` over rows and column bounds, with some
/// columns restricted to {0, 1}.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct MipModel {
    pub name: String,
    pub vars: Vec<Variable>,
    pub rows: Vec<Row>,
}

impl MipModel {
    pub fn new(name: impl Into<String>) -> Self {
        Self {
            name: name.into(),
            vars: Vec::new(),
            rows: Vec::new(),
        }
    }

    pub fn add_continuous(
        &mut self,
        name: impl Into<String>,
        lower: f64,
        upper: f64,
        obj: f64,
    ) -> VarId {
        self.push_var(Variable {
            name: name.into(),
            kind: VarKind::Continuous,
            lower,
            upper,
            obj,
        })
    }

    pub fn add_binary(&mut self, name: impl Into<String>, obj: f64) -> VarId {
        self.push_var(Variable {
            name: name.into(),
            kind: VarKind::Binary,
            lower: 0.0,
            upper: 1.0,
            obj,
        })
    }

    fn push_var(&mut self, var: Variable) -> VarId {
        self.vars.push(var);
        VarId(self.vars.len() - 1)
    }

    pub fn add_row(
        &mut self,
        name: impl Into<String>,
        terms: Vec<(VarId, f64)>,
        sense: Sense,
        rhs: f64,
    ) -> RowId {
        self.rows.push(Row {
            name: name.into(),
            terms,
            sense,
            rhs,
        });
        RowId(self.rows.len() - 1)
    }

    pub fn num_vars(&self) -> usize {
        self.vars.len()
    }

    pub fn num_rows(&self) -> usize {
        self.rows.len()
    }

    pub fn num_binaries(&self) -> usize {
        self.vars
            .iter()
            .filter(|v| v.kind == VarKind::Binary)
            .count()
    }

    pub fn var(&self, id: VarId) -> &Variable {
        &self.vars[id.0]
    }

    pub fn objective_value(&self, values: &[f64]) -> f64 {
        self.vars.iter().zip(values).map(|(v, x)| v.obj * x).sum()
    }

    /// Checks that every row references declared columns and that all data
    /// is finite where it must be.
    pub fn validate(&self) -> Result<(), ModelError> {
        if self.vars.is_empty() {
            return Err(ModelError::Empty);
        }
        for v in &self.vars {
            if v.lower.is_nan() || v.upper.is_nan() || v.lower > v.upper || v.lower == f64::INFINITY
            {
                return Err(ModelError::InvalidBounds {
                    name: v.name.clone(),
                    lower: v.lower,
                    upper: v.upper,
                });
            }
            if !v.obj.is_finite() {
                return Err(ModelError::NonFiniteObjective {
                    name: v.name.clone(),
                });
            }
        }
        for row in &self.rows {
            if !row.rhs.is_finite() {
                return Err(ModelError::NonFiniteRow {
                    row: row.name.clone(),
                });
            }
            for &(var, coeff) in &row.terms {
                if var.0 >= self.vars.len() {
                    return Err(ModelError::UnknownVariable {
                        row: row.name.clone(),
                        var: var.0,
                    });
                }
                if !coeff.is_finite() {
                    return Err(ModelError::NonFiniteRow {
                        row: row.name.clone(),
                    });
                }
            }
        }
        Ok(())
    }

    /// Largest row or bound violation of `values`.
    pub fn max_violation(&self, values: &[f64]) -> f64 {
        let rows = self.rows.iter().map(|r| r.violation(values));
        let bounds = self
            .vars
            .iter()
            .zip(values)
            .map(|(v, &x)| (v.lower - x).max(x - v.upper).max(0.0));
        rows.chain(bounds).fold(0.0, f64::max)
    }
}
