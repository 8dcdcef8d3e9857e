//! Sparse MILP container and the builders for the deterministic planning model.

mod deterministic;
mod linearize;
mod mccormick;
mod schedule;

use std::collections::HashMap;
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub(crate) use deterministic::assemble_core;
pub use deterministic::{assemble_deterministic, ChargingCost, DeterministicModel, ModelConfig};
pub use linearize::{linearize_charge_time, linearize_travel_time, AffineForm};
pub use mccormick::{
    add_whole_box_envelope, build_mccormick, cell_grid, CellBounds, McCormickBlock, McCormickConfig,
};
pub(crate) use schedule::lateness_cap;
pub use schedule::{build_schedule_constraints, RecursionForm, ScheduleVars};

/// Index of a variable inside a [`MilpModel`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct VarId(pub usize);

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum VarKind {
    Continuous,
    Binary,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Sense {
    Le,
    Eq,
    Ge,
}

impl Sense {
    pub fn symbol(self) -> &'static str {
        match self {
            Sense::Le => "<=",
            Sense::Eq => "=",
            Sense::Ge => ">=",
        }
    }
}

/// Constraint groups whose rows may be relaxed by chance constraints.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Group {
    /// Execution-time box under realized distances.
    TravelTime,
    /// Charging-time box under realized distances.
    ChargeTime,
    /// SOC floor under realized distances.
    SocFloor,
    /// Waiting/idle recursion under realized intervals.
    Recursion,
}

impl Group {
    pub const ALL: [Group; 4] = [
        Group::TravelTime,
        Group::ChargeTime,
        Group::SocFloor,
        Group::Recursion,
    ];

    pub fn label(self) -> &'static str {
        match self {
            Group::TravelTime => "travel-time",
            Group::ChargeTime => "charge-time",
            Group::SocFloor => "soc-floor",
            Group::Recursion => "recursion",
        }
    }
}

/// Provenance of a row or column, kept for auditing and export comments.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Tag {
    // columns
    Control,
    ScheduleTime,
    Product,
    CellSelector,
    RecourseGain,
    ChanceSelector,
    DualMultiplier,
    AdjustmentMagnitude,
    // rows of the deterministic model
    SocBudget,
    Recursion,
    TravelTime,
    ChargeTime,
    Envelope,
    CellLinking,
    CellChoice,
    // rows added by the robust model
    ChanceRow(Group),
    ChanceBudget(Group),
    RobustRow,
    DualBalance,
    AdjustmentBound,
}

impl fmt::Display for Tag {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Tag::Control => f.write_str("control"),
            Tag::ScheduleTime => f.write_str("schedule-time"),
            Tag::Product => f.write_str("product"),
            Tag::CellSelector => f.write_str("cell-selector"),
            Tag::RecourseGain => f.write_str("recourse-gain"),
            Tag::ChanceSelector => f.write_str("chance-selector"),
            Tag::DualMultiplier => f.write_str("dual-multiplier"),
            Tag::AdjustmentMagnitude => f.write_str("adjustment-magnitude"),
            Tag::SocBudget => f.write_str("soc-budget"),
            Tag::Recursion => f.write_str("recursion"),
            Tag::TravelTime => f.write_str("travel-time"),
            Tag::ChargeTime => f.write_str("charge-time"),
            Tag::Envelope => f.write_str("envelope"),
            Tag::CellLinking => f.write_str("cell-linking"),
            Tag::CellChoice => f.write_str("cell-choice"),
            Tag::ChanceRow(g) => write!(f, "chance-row/{}", g.label()),
            Tag::ChanceBudget(g) => write!(f, "chance-budget/{}", g.label()),
            Tag::RobustRow => f.write_str("robust-row"),
            Tag::DualBalance => f.write_str("dual-balance"),
            Tag::AdjustmentBound => f.write_str("adjustment-bound"),
        }
    }
}

/// Row tags a deterministic model may contain.
pub const DETERMINISTIC_ROW_TAGS: [Tag; 7] = [
    Tag::SocBudget,
    Tag::Recursion,
    Tag::TravelTime,
    Tag::ChargeTime,
    Tag::Envelope,
    Tag::CellLinking,
    Tag::CellChoice,
];

#[derive(Debug, Clone, PartialEq)]
pub struct Variable {
    pub name: String,
    pub kind: VarKind,
    pub lower: f64,
    pub upper: f64,
    pub tag: Tag,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Constraint {
    pub name: String,
    pub terms: Vec<(VarId, f64)>,
    pub sense: Sense,
    pub rhs: f64,
    pub tag: Tag,
}

impl Constraint {
    pub fn activity(&self, values: &[f64]) -> f64 {
        self.terms.iter().map(|&(v, a)| a * values[v.0]).sum()
    }

    /// Amount by which `values` violates the row (0 when satisfied).
    pub fn violation(&self, values: &[f64]) -> f64 {
        let lhs = self.activity(values);
        match self.sense {
            Sense::Le => (lhs - self.rhs).max(0.0),
            Sense::Ge => (self.rhs - lhs).max(0.0),
            Sense::Eq => (lhs - self.rhs).abs(),
        }
    }
}

/// Affine expression over model variables.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct LinExpr {
    pub terms: Vec<(VarId, f64)>,
    pub constant: f64,
}

impl LinExpr {
    pub fn constant(value: f64) -> Self {
        LinExpr {
            terms: Vec::new(),
            constant: value,
        }
    }

    pub fn var(v: VarId) -> Self {
        LinExpr {
            terms: vec![(v, 1.0)],
            constant: 0.0,
        }
    }

    pub fn term(mut self, v: VarId, coef: f64) -> Self {
        self.terms.push((v, coef));
        self
    }

    pub fn plus_const(mut self, c: f64) -> Self {
        self.constant += c;
        self
    }

    pub fn add_scaled(&mut self, other: &LinExpr, scale: f64) {
        self.terms
            .extend(other.terms.iter().map(|&(v, a)| (v, a * scale)));
        self.constant += other.constant * scale;
    }

    pub fn scaled(&self, scale: f64) -> Self {
        let mut out = LinExpr::default();
        out.add_scaled(self, scale);
        out
    }

    /// Merges duplicate variables and drops zero coefficients, keeping
    /// first-appearance order.
    pub fn normalized(&self) -> Self {
        let mut order: Vec<VarId> = Vec::new();
        let mut sums: HashMap<VarId, f64> = HashMap::new();
        for &(v, a) in &self.terms {
            let entry = sums.entry(v).or_insert_with(|| {
                order.push(v);
                0.0
            });
            *entry += a;
        }
        LinExpr {
            terms: order
                .into_iter()
                .filter_map(|v| {
                    let a = sums[&v];
                    (a != 0.0).then_some((v, a))
                })
                .collect(),
            constant: self.constant,
        }
    }

    pub fn eval(&self, values: &[f64]) -> f64 {
        self.constant
            + self
                .terms
                .iter()
                .map(|&(v, a)| a * values[v.0])
                .sum::<f64>()
    }

    /// Minimum and maximum over the variable boxes of `model`.
    pub fn range(&self, model: &MilpModel) -> (f64, f64) {
        let mut lo = self.constant;
        let mut hi = self.constant;
        for &(v, a) in &self.terms {
            let var = &model.vars[v.0];
            let (x, y) = (a * var.lower, a * var.upper);
            lo += x.min(y);
            hi += x.max(y);
        }
        (lo, hi)
    }

    pub fn is_constant(&self) -> bool {
        self.terms.iter().all(|&(_, a)| a == 0.0)
    }
}

/// A mixed-integer linear program in minimization form.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct MilpModel {
    pub vars: Vec<Variable>,
    pub rows: Vec<Constraint>,
    pub objective: Vec<(VarId, f64)>,
    pub objective_constant: f64,
    names: HashMap<String, VarId>,
}

impl MilpModel {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add_var(
        &mut self,
        name: impl Into<String>,
        kind: VarKind,
        lower: f64,
        upper: f64,
        tag: Tag,
    ) -> VarId {
        let name = name.into();
        let (lower, upper) = match kind {
            VarKind::Binary => (0.0, 1.0),
            VarKind::Continuous => (lower, upper),
        };
        let id = VarId(self.vars.len());
        let previous = self.names.insert(name.clone(), id);
        assert!(previous.is_none(), "duplicate variable name {name}");
        self.vars.push(Variable {
            name,
            kind,
            lower,
            upper,
            tag,
        });
        id
    }

    pub fn add_continuous(
        &mut self,
        name: impl Into<String>,
        lower: f64,
        upper: f64,
        tag: Tag,
    ) -> VarId {
        self.add_var(name, VarKind::Continuous, lower, upper, tag)
    }

    pub fn add_binary(&mut self, name: impl Into<String>, tag: Tag) -> VarId {
        self.add_var(name, VarKind::Binary, 0.0, 1.0, tag)
    }

    /// Adds `expr (sense) 0`, folding the expression constant into the rhs.
    pub fn add_row(
        &mut self,
        name: impl Into<String>,
        expr: &LinExpr,
        sense: Sense,
        tag: Tag,
    ) -> usize {
        let expr = expr.normalized();
        debug_assert!(expr.terms.iter().all(|(v, _)| v.0 < self.vars.len()));
        self.rows.push(Constraint {
            name: name.into(),
            terms: expr.terms,
            sense,
            rhs: -expr.constant,
            tag,
        });
        self.rows.len() - 1
    }

    pub fn add_objective(&mut self, expr: &LinExpr) {
        self.objective.extend_from_slice(&expr.terms);
        self.objective_constant += expr.constant;
    }

    /// Objective with duplicate terms merged.
    pub fn objective_expr(&self) -> LinExpr {
        LinExpr {
            terms: self.objective.clone(),
            constant: self.objective_constant,
        }
        .normalized()
    }

    /// Dense objective coefficient vector.
    pub fn objective_dense(&self) -> Vec<f64> {
        let mut c = vec![0.0; self.vars.len()];
        for &(v, a) in &self.objective {
            c[v.0] += a;
        }
        c
    }

    pub fn objective_value(&self, values: &[f64]) -> f64 {
        self.objective_constant
            + self
                .objective
                .iter()
                .map(|&(v, a)| a * values[v.0])
                .sum::<f64>()
    }

    pub fn var_id(&self, name: &str) -> Option<VarId> {
        self.names.get(name).copied()
    }

    pub fn binaries(&self) -> impl Iterator<Item = VarId> + '_ {
        self.vars
            .iter()
            .enumerate()
            .filter(|(_, v)| v.kind == VarKind::Binary)
            .map(|(i, _)| VarId(i))
    }

    pub fn binary_count(&self) -> usize {
        self.binaries().count()
    }

    pub fn count_vars(&self, tag: Tag) -> usize {
        self.vars.iter().filter(|v| v.tag == tag).count()
    }

    pub fn count_rows(&self, tag: Tag) -> usize {
        self.rows.iter().filter(|r| r.tag == tag).count()
    }

    /// Checks structural well-formedness.
    pub fn validate(&self) -> Result<()> {
        for v in &self.vars {
            if v.kind == VarKind::Binary && (v.lower != 0.0 || v.upper != 1.0) {
                return Err(Error::Config(format!(
                    "binary {} must have bounds [0, 1]",
                    v.name
                )));
            }
            if v.lower.is_nan() || v.upper.is_nan() || v.lower > v.upper {
                return Err(Error::Config(format!(
                    "variable {} has empty bounds [{}, {}]",
                    v.name, v.lower, v.upper
                )));
            }
        }
        let n = self.vars.len();
        for r in &self.rows {
            if let Some((v, _)) = r.terms.iter().find(|(v, _)| v.0 >= n) {
                return Err(Error::Config(format!(
                    "row {} references undeclared variable {}",
                    r.name, v.0
                )));
            }
            if !r.rhs.is_finite() || r.terms.iter().any(|(_, a)| !a.is_finite()) {
                return Err(Error::Numeric(format!(
                    "row {} has non-finite data",
                    r.name
                )));
            }
        }
        if let Some((v, _)) = self.objective.iter().find(|(v, _)| v.0 >= n) {
            return Err(Error::Config(format!(
                "objective references undeclared variable {}",
                v.0
            )));
        }
        Ok(())
    }

    /// Confirms every row carries one of the `allowed` provenance tags.
    pub fn audit(&self, allowed: &[Tag]) -> Result<()> {
        let stray: Vec<String> = self
            .rows
            .iter()
            .filter(|r| !allowed.contains(&r.tag))
            .map(|r| format!("{} ({})", r.name, r.tag))
            .take(5)
            .collect();
        if stray.is_empty() {
            Ok(())
        } else {
            Err(Error::Config(format!(
                "rows with unexpected provenance: {}",
                stray.join(", ")
            )))
        }
    }

    /// Largest bound or row violation of `values`.
    pub fn max_violation(&self, values: &[f64]) -> f64 {
        let bounds = self
            .vars
            .iter()
            .zip(values)
            .map(|(v, &x)| (v.lower - x).max(x - v.upper).max(0.0));
        let rows = self.rows.iter().map(|r| r.violation(values));
        bounds.chain(rows).fold(0.0, f64::max)
    }

    /// Copy of the model with every objective coefficient multiplied by `k`.
    pub fn with_scaled_objective(&self, k: f64) -> Self {
        let mut out = self.clone();
        for (_, a) in &mut out.objective {
            *a *= k;
        }
        out.objective_constant *= k;
        out
    }
}
