//! Generic staged linear program container.

use std::fmt::Write as _;

use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum ModelError {
    #[error("demand {demand_kw} kW at step {step} exceeds fleet capability {fleet_kw} kW")]
    DemandExceedsFleet {
        step: usize,
        demand_kw: f64,
        fleet_kw: f64,
    },
    #[error("row `{row}` references unknown variable {var}")]
    UnknownVariable { row: String, var: usize },
    #[error("variable `{0}` has inverted bounds")]
    InvertedBounds(String),
    #[error("stage priorities must be strictly decreasing, got {0:?}")]
    StagePriorities(Vec<i32>),
    #[error("constraint `{row}` violated by {violation:.3e} in extracted solution")]
    Extraction { row: String, violation: f64 },
    #[error("binary `{0}` not integral in extracted solution (value {1})")]
    NonIntegralBinary(String, f64),
    #[error("horizon input invalid: {0}")]
    InvalidInput(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum VarKind {
    Continuous,
    Binary,
}

#[derive(Debug, Clone)]
pub struct VarDef {
    pub name: String,
    pub lo: f64,
    pub hi: f64,
    pub kind: VarKind,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RowSense {
    Le,
    Eq,
    Ge,
}

impl RowSense {
    fn symbol(self) -> &'static str {
        match self {
            RowSense::Le => "<=",
            RowSense::Eq => "=",
            RowSense::Ge => ">=",
        }
    }
}

/// One linear constraint `terms · x  sense  rhs`.
#[derive(Debug, Clone)]
pub struct Row {
    pub name: String,
    pub terms: Vec<(usize, f64)>,
    pub sense: RowSense,
    pub rhs: f64,
}

/// One objective stage: a linear expression minimized at its priority
/// level (higher priority solved first).
#[derive(Debug, Clone)]
pub struct Stage {
    pub priority: i32,
    pub label: String,
    pub terms: Vec<(usize, f64)>,
}

/// Variables, constraints and staged objectives for one horizon.
#[derive(Debug, Clone, Default)]
pub struct MathProgram {
    pub vars: Vec<VarDef>,
    pub rows: Vec<Row>,
    pub stages: Vec<Stage>,
}

impl MathProgram {
    pub fn add_var(&mut self, name: impl Into<String>, lo: f64, hi: f64, kind: VarKind) -> usize {
        self.vars.push(VarDef {
            name: name.into(),
            lo,
            hi,
            kind,
        });
        self.vars.len() - 1
    }

    pub fn add_row(
        &mut self,
        name: impl Into<String>,
        terms: Vec<(usize, f64)>,
        sense: RowSense,
        rhs: f64,
    ) {
        self.rows.push(Row {
            name: name.into(),
            terms,
            sense,
            rhs,
        });
    }

    pub fn add_stage(&mut self, priority: i32, label: impl Into<String>, terms: Vec<(usize, f64)>) {
        self.stages.push(Stage {
            priority,
            label: label.into(),
            terms,
        });
    }

    pub fn n_binaries(&self) -> usize {
        self.vars.iter().filter(|v| v.kind == VarKind::Binary).count()
    }

    pub fn binary_indices(&self) -> Vec<usize> {
        self.vars
            .iter()
            .enumerate()
            .filter(|(_, v)| v.kind == VarKind::Binary)
            .map(|(i, _)| i)
            .collect()
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        for v in &self.vars {
            if v.lo > v.hi {
                return Err(ModelError::InvertedBounds(v.name.clone()));
            }
        }
        for row in &self.rows {
            for &(idx, _) in &row.terms {
                if idx >= self.vars.len() {
                    return Err(ModelError::UnknownVariable {
                        row: row.name.clone(),
                        var: idx,
                    });
                }
            }
        }
        let priorities: Vec<i32> = self.stages.iter().map(|s| s.priority).collect();
        if priorities.windows(2).any(|p| p[0] <= p[1]) {
            return Err(ModelError::StagePriorities(priorities));
        }
        for stage in &self.stages {
            for &(idx, _) in &stage.terms {
                if idx >= self.vars.len() {
                    return Err(ModelError::UnknownVariable {
                        row: stage.label.clone(),
                        var: idx,
                    });
                }
            }
        }
        Ok(())
    }

    pub fn eval_expr(terms: &[(usize, f64)], values: &[f64]) -> f64 {
        terms.iter().map(|&(i, c)| c * values[i]).sum()
    }

    /// Signed violation of a row at `values` (positive means infeasible).
    pub fn row_violation(row: &Row, values: &[f64]) -> f64 {
        let lhs = Self::eval_expr(&row.terms, values);
        match row.sense {
            RowSense::Le => lhs - row.rhs,
            RowSense::Ge => row.rhs - lhs,
            RowSense::Eq => (lhs - row.rhs).abs(),
        }
    }

    /// Checks all rows and bounds; returns the worst offender above the
    /// per-row tolerance `atol·(1 + |rhs|)`.
    pub fn check_assignment(&self, values: &[f64], atol: f64) -> Result<(), ModelError> {
        let mut worst: Option<(String, f64)> = None;
        for row in &self.rows {
            let v = Self::row_violation(row, values);
            let tol = atol * (1.0 + row.rhs.abs());
            if v > tol && worst.as_ref().map_or(true, |(_, w)| v > *w) {
                worst = Some((row.name.clone(), v));
            }
        }
        for (i, var) in self.vars.iter().enumerate() {
            let v = (var.lo - values[i]).max(values[i] - var.hi);
            let tol = atol * (1.0 + var.hi.abs().max(var.lo.abs()));
            if v > tol && worst.as_ref().map_or(true, |(_, w)| v > *w) {
                worst = Some((format!("bound[{}]", var.name), v));
            }
        }
        match worst {
            Some((row, violation)) => Err(ModelError::Extraction { row, violation }),
            None => Ok(()),
        }
    }

    /// Plain-text dump of the assembled program (variables, bounds, rows,
    /// stages) for debugging and oracle cross-checks.
    pub fn dump(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(
            out,
            "# mathprogram v1: {} vars, {} rows, {} stages",
            self.vars.len(),
            self.rows.len(),
            self.stages.len()
        );
        for v in &self.vars {
            let kind = match v.kind {
                VarKind::Continuous => "cont",
                VarKind::Binary => "bin",
            };
            let _ = writeln!(out, "var {} in [{}, {}] {}", v.name, v.lo, v.hi, kind);
        }
        for r in &self.rows {
            let _ = write!(out, "row {} :", r.name);
            for (idx, coef) in &r.terms {
                let _ = write!(out, " {:+}*{}", coef, self.vars[*idx].name);
            }
            let _ = writeln!(out, " {} {}", r.sense.symbol(), r.rhs);
        }
        for s in &self.stages {
            let _ = write!(out, "stage p{} {} :", s.priority, s.label);
            for (idx, coef) in &s.terms {
                let _ = write!(out, " {:+}*{}", coef, self.vars[*idx].name);
            }
            let _ = writeln!(out);
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn toy() -> MathProgram {
        let mut p = MathProgram::default();
        let x = p.add_var("x", 0.0, 10.0, VarKind::Continuous);
        let b = p.add_var("b", 0.0, 1.0, VarKind::Binary);
        p.add_row("link", vec![(x, 1.0), (b, -10.0)], RowSense::Le, 0.0);
        p.add_stage(1, "min_x", vec![(x, 1.0)]);
        p
    }

    #[test]
    fn validates_clean_program() {
        assert!(toy().validate().is_ok());
    }

    #[test]
    fn rejects_unknown_variable() {
        let mut p = toy();
        p.add_row("bad", vec![(99, 1.0)], RowSense::Eq, 0.0);
        assert!(matches!(
            p.validate(),
            Err(ModelError::UnknownVariable { .. })
        ));
    }

    #[test]
    fn rejects_non_decreasing_priorities() {
        let mut p = toy();
        p.add_stage(1, "again", vec![]);
        assert!(matches!(p.validate(), Err(ModelError::StagePriorities(_))));
    }

    #[test]
    fn assignment_check_names_worst_row() {
        let p = toy();
        // x=5 with b=0 violates the link row by 5.
        let err = p.check_assignment(&[5.0, 0.0], 1e-6).unwrap_err();
        match err {
            ModelError::Extraction { row, violation } => {
                assert_eq!(row, "link");
                assert!((violation - 5.0).abs() < 1e-9);
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn dump_contains_sections() {
        let text = toy().dump();
        assert!(text.contains("var x in [0, 10] cont"));
        assert!(text.contains("row link :"));
        assert!(text.contains("stage p1 min_x"));
    }
}
