//! LP relaxations and branch-and-bound for [`MilpModel`] instances.
//!
//! Individual relaxations are solved by `microlp`'s bounded dual simplex
//! after row equilibration; the tree search, branching rules, incumbent
//! handling and parallel node batches live here.

mod bnb;
mod lp;
mod lp_format;

use std::collections::BTreeMap;
use std::time::Duration;

use serde::Serialize;

use crate::model::MilpModel;

pub use bnb::{solve_milp, solve_milp_from};
pub use lp::{solve_lp, support_value};
pub use lp_format::{export_lp_file, parse_lp, write_lp};

/// Default relative optimality gap.
pub const DEFAULT_GAP_TOL: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, clap::ValueEnum)]
#[serde(rename_all = "kebab-case")]
pub enum BranchRule {
    /// Branch on the binary closest to 0.5; lowest index wins ties.
    #[default]
    MostFractional,
    /// Branch on the binary with the best product of estimated objective
    /// increases, falling back to most-fractional until estimates exist.
    PseudoCost,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, clap::ValueEnum)]
#[serde(rename_all = "kebab-case")]
pub enum SearchOrder {
    #[default]
    BestBound,
    DepthFirst,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SolveOptions {
    pub feas_tol: f64,
    pub int_tol: f64,
    pub gap_tol: f64,
    pub node_limit: Option<usize>,
    pub time_limit: Option<Duration>,
    pub branch_rule: BranchRule,
    pub search: SearchOrder,
    /// Worker threads for node batches. Results do not depend on this.
    pub threads: usize,
    /// Also solve the dual of an LP so row duals can be reported.
    pub duals: bool,
}

impl Default for SolveOptions {
    fn default() -> Self {
        SolveOptions {
            feas_tol: 1e-7,
            int_tol: 1e-6,
            gap_tol: DEFAULT_GAP_TOL,
            node_limit: None,
            time_limit: None,
            branch_rule: BranchRule::default(),
            search: SearchOrder::default(),
            threads: 1,
            duals: false,
        }
    }
}

impl SolveOptions {
    pub(crate) fn check(&self) -> crate::Result<()> {
        for (name, v) in [
            ("feas_tol", self.feas_tol),
            ("int_tol", self.int_tol),
            ("gap_tol", self.gap_tol),
        ] {
            if !(v > 0.0) || !v.is_finite() {
                return Err(crate::Error::Config(format!(
                    "{name} must be positive (got {v})"
                )));
            }
        }
        if self.threads == 0 {
            return Err(crate::Error::Config("threads must be at least 1".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum Status {
    Optimal,
    Infeasible,
    Unbounded,
    GapLimit,
    NodeLimit,
    TimeLimit,
}

impl Status {
    /// Whether the result carries a feasible assignment.
    pub fn has_solution(self) -> bool {
        matches!(self, Status::Optimal | Status::GapLimit)
    }

    pub fn label(self) -> &'static str {
        match self {
            Status::Optimal => "optimal",
            Status::Infeasible => "infeasible",
            Status::Unbounded => "unbounded",
            Status::GapLimit => "gap-limit",
            Status::NodeLimit => "node-limit",
            Status::TimeLimit => "time-limit",
        }
    }
}

/// Progress sample: explored nodes, global lower bound, incumbent objective.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct TracePoint {
    pub nodes: usize,
    pub bound: f64,
    pub incumbent: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SolveResult {
    pub status: Status,
    /// Objective of the returned assignment; infinite when there is none.
    pub objective: f64,
    /// Value per model variable, empty when there is no assignment.
    pub values: Vec<f64>,
    /// Best proven lower bound.
    pub bound: f64,
    pub nodes: usize,
    /// Elapsed seconds.
    pub wall_time: f64,
    /// Row duals of an LP solve when requested.
    pub duals: Option<Vec<f64>>,
    pub trace: Vec<TracePoint>,
}

impl SolveResult {
    pub(crate) fn without_solution(
        status: Status,
        bound: f64,
        nodes: usize,
        wall_time: f64,
    ) -> Self {
        SolveResult {
            status,
            objective: f64::INFINITY,
            values: Vec::new(),
            bound,
            nodes,
            wall_time,
            duals: None,
            trace: Vec::new(),
        }
    }

    /// Whether an assignment was found, possibly before a limit stopped the
    /// search.
    pub fn has_incumbent(&self) -> bool {
        !self.values.is_empty()
    }

    /// Relative gap as `(objective - bound) / max(1, |objective|)`.
    pub fn gap(&self) -> f64 {
        relative_gap(self.objective, self.bound)
    }

    /// Variable name to value.
    pub fn assignment<'a>(&self, model: &'a MilpModel) -> BTreeMap<&'a str, f64> {
        model
            .vars
            .iter()
            .zip(&self.values)
            .map(|(v, &x)| (v.name.as_str(), x))
            .collect()
    }

    pub fn value(&self, model: &MilpModel, name: &str) -> Option<f64> {
        model
            .var_id(name)
            .and_then(|id| self.values.get(id.0).copied())
    }
}

pub(crate) fn relative_gap(objective: f64, bound: f64) -> f64 {
    if !objective.is_finite() {
        return f64::INFINITY;
    }
    ((objective - bound) / objective.abs().max(1.0)).max(0.0)
}
