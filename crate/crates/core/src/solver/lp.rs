use std::time::Instant;

use microlp::{ComparisonOp, OptimizationDirection, Problem, SolveOutcome, Variable};

use super::{SolveOptions, SolveResult, Status};
use crate::error::{Error, Result};
use crate::model::{MilpModel, Sense};

/// A model translated into a `microlp` problem with equilibrated rows and a
/// normalized objective.
#[derive(Clone)]
pub(crate) struct LpInstance {
    pub problem: Problem,
    pub vars: Vec<Variable>,
    obj_scale: f64,
    obj_constant: f64,
    pub coef_range: (f64, f64),
}

impl LpInstance {
    /// Objective in model units for a raw `microlp` objective.
    pub fn objective(&self, raw: f64) -> f64 {
        raw / self.obj_scale + self.obj_constant
    }

    pub fn values(&self, solution: &microlp::Solution) -> Vec<f64> {
        self.vars
            .iter()
            .map(|&v| solution.var_value_raw(v))
            .collect()
    }

    pub fn diagnostics(&self) -> String {
        format!(
            "equilibrated coefficient magnitudes span [{:.3e}, {:.3e}]",
            self.coef_range.0, self.coef_range.1
        )
    }
}

fn op(sense: Sense) -> ComparisonOp {
    match sense {
        Sense::Le => ComparisonOp::Le,
        Sense::Eq => ComparisonOp::Eq,
        Sense::Ge => ComparisonOp::Ge,
    }
}

fn trivially_satisfied(sense: Sense, rhs: f64, tol: f64) -> bool {
    match sense {
        Sense::Le => 0.0 <= rhs + tol,
        Sense::Ge => 0.0 >= rhs - tol,
        Sense::Eq => rhs.abs() <= tol,
    }
}

/// Translates `model` with the given variable bounds. Returns `None` when a
/// row without variables cannot be satisfied.
pub(crate) fn build_instance(
    model: &MilpModel,
    bounds: &[(f64, f64)],
    feas_tol: f64,
) -> Option<LpInstance> {
    let c = model.objective_dense();
    let cmax = c.iter().fold(0.0_f64, |m, x| m.max(x.abs()));
    let obj_scale = if cmax > 0.0 { 1.0 / cmax } else { 1.0 };
    let mut problem = Problem::new(OptimizationDirection::Minimize);
    let vars: Vec<Variable> = c
        .iter()
        .zip(bounds)
        .map(|(&ci, &b)| problem.add_var(ci * obj_scale, b))
        .collect();

    let mut coef_range = (f64::INFINITY, 0.0_f64);
    for row in &model.rows {
        let scale = row.terms.iter().fold(0.0_f64, |m, (_, a)| m.max(a.abs()));
        if scale == 0.0 {
            if trivially_satisfied(row.sense, row.rhs, feas_tol) {
                continue;
            }
            return None;
        }
        let terms: Vec<(Variable, f64)> = row
            .terms
            .iter()
            .filter(|(_, a)| *a != 0.0)
            .map(|&(v, a)| {
                let scaled = a / scale;
                coef_range.0 = coef_range.0.min(scaled.abs());
                coef_range.1 = coef_range.1.max(scaled.abs());
                (vars[v.0], scaled)
            })
            .collect();
        problem.add_constraint(terms, op(row.sense), row.rhs / scale);
    }
    Some(LpInstance {
        problem,
        vars,
        obj_scale,
        obj_constant: model.objective_constant,
        coef_range,
    })
}

pub(crate) fn model_bounds(model: &MilpModel) -> Vec<(f64, f64)> {
    model.vars.iter().map(|v| (v.lower, v.upper)).collect()
}

pub(crate) enum LpOutcome {
    Solved(Box<microlp::Solution>),
    Infeasible,
    Unbounded,
    Interrupted,
}

pub(crate) fn classify(
    result: std::result::Result<SolveOutcome, microlp::Error>,
    what: &str,
) -> Result<LpOutcome> {
    match result {
        Ok(SolveOutcome::Solution(s)) => Ok(LpOutcome::Solved(Box::new(s))),
        Ok(SolveOutcome::Interrupted(_)) => Ok(LpOutcome::Interrupted),
        Err(microlp::Error::Infeasible) => Ok(LpOutcome::Infeasible),
        Err(microlp::Error::Unbounded) => Ok(LpOutcome::Unbounded),
        Err(e) => Err(Error::Numeric(format!("{what}: {e}"))),
    }
}

/// Solves the continuous relaxation of `model` (binaries relaxed to [0, 1]).
pub fn solve_lp(model: &MilpModel, options: &SolveOptions) -> Result<SolveResult> {
    options.check()?;
    model.validate()?;
    let start = Instant::now();
    let elapsed = |s: Instant| s.elapsed().as_secs_f64();
    let Some(mut inst) = build_instance(model, &model_bounds(model), options.feas_tol) else {
        return Ok(SolveResult::without_solution(
            Status::Infeasible,
            f64::INFINITY,
            1,
            elapsed(start),
        ));
    };
    if let Some(limit) = options.time_limit {
        inst.problem.set_time_limit(limit);
    }
    let outcome = classify(inst.problem.solve(), "LP relaxation").map_err(|e| match e {
        Error::Numeric(msg) => Error::Numeric(format!("{msg}; {}", inst.diagnostics())),
        other => other,
    })?;
    let solution = match outcome {
        LpOutcome::Solved(s) => s,
        LpOutcome::Infeasible => {
            return Ok(SolveResult::without_solution(
                Status::Infeasible,
                f64::INFINITY,
                1,
                elapsed(start),
            ))
        }
        LpOutcome::Unbounded => {
            return Ok(SolveResult::without_solution(
                Status::Unbounded,
                f64::NEG_INFINITY,
                1,
                elapsed(start),
            ))
        }
        LpOutcome::Interrupted => {
            return Ok(SolveResult::without_solution(
                Status::TimeLimit,
                f64::NEG_INFINITY,
                1,
                elapsed(start),
            ))
        }
    };
    let values = inst.values(&solution);
    let objective = model.objective_value(&values);
    let violation = model.max_violation(&values);
    if violation > options.feas_tol {
        log::warn!("LP solution violates a row or bound by {violation:.3e}");
    }
    let duals = if options.duals {
        Some(row_duals(model)?)
    } else {
        None
    };
    Ok(SolveResult {
        status: Status::Optimal,
        objective,
        values,
        bound: objective,
        nodes: 1,
        wall_time: elapsed(start),
        duals,
        trace: Vec::new(),
    })
}

/// Row duals from an explicit dual program. For a row `a x (sense) b` the
/// dual is nonpositive for `<=`, nonnegative for `>=` and free for `=`;
/// `c = A^T y + p - q` where `p`, `q` price the finite variable bounds.
fn row_duals(model: &MilpModel) -> Result<Vec<f64>> {
    let n = model.vars.len();
    let mut dual = Problem::new(OptimizationDirection::Maximize);
    let mut columns: Vec<Vec<(Variable, f64)>> = vec![Vec::new(); n];
    let ys: Vec<Variable> = model
        .rows
        .iter()
        .map(|r| {
            let b = match r.sense {
                Sense::Le => (f64::NEG_INFINITY, 0.0),
                Sense::Ge => (0.0, f64::INFINITY),
                Sense::Eq => (f64::NEG_INFINITY, f64::INFINITY),
            };
            let y = dual.add_var(r.rhs, b);
            for &(v, a) in &r.terms {
                columns[v.0].push((y, a));
            }
            y
        })
        .collect();
    for (j, var) in model.vars.iter().enumerate() {
        if var.lower.is_finite() {
            let p = dual.add_var(var.lower, (0.0, f64::INFINITY));
            columns[j].push((p, 1.0));
        }
        if var.upper.is_finite() {
            let q = dual.add_var(-var.upper, (0.0, f64::INFINITY));
            columns[j].push((q, -1.0));
        }
    }
    let c = model.objective_dense();
    for (j, col) in columns.into_iter().enumerate() {
        dual.add_constraint(col, ComparisonOp::Eq, c[j]);
    }
    match classify(dual.solve(), "dual program")? {
        LpOutcome::Solved(s) => Ok(ys.iter().map(|&y| s.var_value_raw(y)).collect()),
        _ => Err(Error::Numeric(
            "dual program has no optimal solution".into(),
        )),
    }
}

/// `max a^T x` subject to `U x <= t` with `x` free.
pub fn support_value(u: &[Vec<f64>], t: &[f64], a: &[f64]) -> Result<f64> {
    let mut p = Problem::new(OptimizationDirection::Maximize);
    let xs: Vec<Variable> = a
        .iter()
        .map(|&aj| p.add_var(aj, (f64::NEG_INFINITY, f64::INFINITY)))
        .collect();
    for (row, &rhs) in u.iter().zip(t) {
        let terms: Vec<(Variable, f64)> = row
            .iter()
            .zip(&xs)
            .filter(|(c, _)| **c != 0.0)
            .map(|(&c, &x)| (x, c))
            .collect();
        if terms.is_empty() {
            if rhs < 0.0 {
                return Err(Error::Config("uncertainty polytope is empty".into()));
            }
            continue;
        }
        p.add_constraint(terms, ComparisonOp::Le, rhs);
    }
    match classify(p.solve(), "support function")? {
        LpOutcome::Solved(s) => Ok(s.objective()),
        LpOutcome::Infeasible => Err(Error::Config("uncertainty polytope is empty".into())),
        LpOutcome::Unbounded => Err(Error::Config("uncertainty polytope is unbounded".into())),
        LpOutcome::Interrupted => Err(Error::Numeric("support function solve interrupted".into())),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{LinExpr, Tag};

    #[test]
    fn single_bound_row() {
        let mut m = MilpModel::new();
        let x = m.add_continuous("x", 0.0, 10.0, Tag::Control);
        m.add_row(
            "floor",
            &LinExpr::var(x).plus_const(-3.0),
            Sense::Ge,
            Tag::SocBudget,
        );
        m.add_objective(&LinExpr::var(x));
        let r = solve_lp(&m, &SolveOptions::default()).unwrap();
        assert_eq!(r.status, Status::Optimal);
        assert!((r.objective - 3.0).abs() < 1e-9);
        assert!((r.values[0] - 3.0).abs() < 1e-9);
    }

    #[test]
    fn contradictory_rows() {
        let mut m = MilpModel::new();
        let x = m.add_continuous("x", f64::NEG_INFINITY, f64::INFINITY, Tag::Control);
        m.add_row(
            "hi",
            &LinExpr::var(x).plus_const(-1.0),
            Sense::Le,
            Tag::SocBudget,
        );
        m.add_row(
            "lo",
            &LinExpr::var(x).plus_const(-2.0),
            Sense::Ge,
            Tag::SocBudget,
        );
        let r = solve_lp(&m, &SolveOptions::default()).unwrap();
        assert_eq!(r.status, Status::Infeasible);
    }

    #[test]
    fn unbounded_direction() {
        let mut m = MilpModel::new();
        let x = m.add_continuous("x", f64::NEG_INFINITY, 0.0, Tag::Control);
        m.add_objective(&LinExpr::var(x));
        let r = solve_lp(&m, &SolveOptions::default()).unwrap();
        assert_eq!(r.status, Status::Unbounded);
    }

    #[test]
    fn duals_certify_the_objective() {
        // min 2x + 3y  s.t. x + y >= 4, x - y <= 1, x, y in [0, 10]
        let mut m = MilpModel::new();
        let x = m.add_continuous("x", 0.0, 10.0, Tag::Control);
        let y = m.add_continuous("y", 0.0, 10.0, Tag::Control);
        m.add_row(
            "cover",
            &LinExpr::var(x).term(y, 1.0).plus_const(-4.0),
            Sense::Ge,
            Tag::SocBudget,
        );
        m.add_row(
            "skew",
            &LinExpr::var(x).term(y, -1.0).plus_const(-1.0),
            Sense::Le,
            Tag::SocBudget,
        );
        m.add_objective(&LinExpr::var(x).scaled(2.0).term(y, 3.0));
        let opts = SolveOptions {
            duals: true,
            ..SolveOptions::default()
        };
        let r = solve_lp(&m, &opts).unwrap();
        assert!((r.objective - 9.5).abs() < 1e-9, "{}", r.objective);
        let y = r.duals.unwrap();
        assert!(y[0] >= 0.0 && y[1] <= 0.0);
        assert!((4.0 * y[0] + y[1] - r.objective).abs() < 1e-9);
    }

    #[test]
    fn support_of_a_box() {
        let u = vec![
            vec![1.0, 0.0],
            vec![-1.0, 0.0],
            vec![0.0, 1.0],
            vec![0.0, -1.0],
        ];
        let t = vec![2.0, 1.0, 3.0, 3.0];
        let h = support_value(&u, &t, &[1.0, -2.0]).unwrap();
        assert!((h - 8.0).abs() < 1e-9);
        assert!(support_value(&u[..2], &t[..2], &[0.0, 1.0]).is_err());
    }
}
