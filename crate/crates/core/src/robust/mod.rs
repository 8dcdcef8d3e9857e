//! Two-stage robust planning: affine recourse, sampled chance constraints
//! and dualized worst-case rows.
//!
//! The first stage fixes the controls `(S̄, v, c)`, the nominal schedule and
//! the envelope cells. Once intervals and distances are observed, each task
//! adapts its target SOC and schedule quantities linearly in the
//! perturbation `delta` (see [`Gains`]). Rows of the violable groups are
//! enforced on `K` training samples with a per-row budget of
//! `floor(epsilon K)` violations; all remaining uncertain rows are enforced
//! for every point of the support polytope through LP duality.

mod config;
mod dual;
mod recourse;
mod rows;
mod saa;

use std::time::Instant;

use serde::Serialize;

use crate::battery::BatteryParams;
use crate::error::{Error, Result};
use crate::model::{
    add_whole_box_envelope, assemble_core, lateness_cap, DeterministicModel, Group, LinExpr,
    MilpModel, ModelConfig, RecursionForm, Sense, Tag, VarId, DETERMINISTIC_ROW_TAGS,
};
use crate::scenario::{derive_seed, sample_uncertainty, Bounds, Decision, Scenario};
use crate::solver::{solve_milp, solve_milp_from, SolveOptions, SolveResult};

pub use config::{RecourseMode, RecourseStructure, RobustConfig, SecondStageCost};
pub use dual::{dualize_hard_constraints, DualBlock, DualRow, PolytopeInfo};
pub use recourse::{
    apply_recourse, build_gains, Adjusted, ClipEvent, Family, GainRow, Gains, TaskControls,
};
pub use rows::{uncertain_rows, UncertainRow};
pub use saa::{build_saa_constraints, violation_budget, IdentityStats, SaaBlock, SampleRow};

/// Violation below which a lifted sample keeps its selector off.
const LIFT_TOL: f64 = 1e-6;

/// Seed label of the training samples.
pub const SAA_SEED_LABEL: &str = "saa";

/// Row tags a robust model may contain.
pub fn robust_row_tags() -> Vec<Tag> {
    let mut tags = DETERMINISTIC_ROW_TAGS.to_vec();
    for g in Group::ALL {
        tags.push(Tag::ChanceRow(g));
        tags.push(Tag::ChanceBudget(g));
    }
    tags.extend([Tag::RobustRow, Tag::DualBalance, Tag::AdjustmentBound]);
    tags
}

#[derive(Debug, Clone)]
pub struct RobustModel {
    pub core: DeterministicModel,
    pub samples: Vec<Vec<f64>>,
    pub epsilon: f64,
    pub violable: Vec<Group>,
    pub rows: Vec<UncertainRow>,
    pub gains: Gains,
    pub saa: SaaBlock,
    pub duals: DualBlock,
}

/// Per row identity: how many training samples the solution violates.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct IdentityAudit {
    pub identity: String,
    pub group: Group,
    pub violated: usize,
    pub selected: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BudgetAudit {
    pub budget: usize,
    pub identities: Vec<IdentityAudit>,
    /// Violated kept samples whose selector is off.
    pub unflagged: usize,
}

impl BudgetAudit {
    pub fn ok(&self) -> bool {
        self.unflagged == 0 && self.identities.iter().all(|a| a.violated <= self.budget)
    }

    /// Largest violation count within each group.
    pub fn per_group(&self) -> Vec<(Group, usize)> {
        Group::ALL
            .iter()
            .filter_map(|&g| {
                self.identities
                    .iter()
                    .filter(|a| a.group == g)
                    .map(|a| a.violated)
                    .max()
                    .map(|m| (g, m))
            })
            .collect()
    }
}

impl RobustModel {
    pub fn model(&self) -> &MilpModel {
        &self.core.model
    }

    /// Violation budget shared by every row identity.
    pub fn budget(&self) -> usize {
        self.saa.budget
    }

    /// First-stage controls and, when recourse is on, the gain matrices.
    pub fn decision(&self, values: &[f64]) -> Decision {
        Decision {
            recourse: self.gains.extract(values),
            ..self.core.decision(values)
        }
    }

    /// Counts, over all training samples, the violated sampled rows of every
    /// violable row identity and checks their selectors.
    pub fn audit_budget(&self, values: &[f64], tol: f64) -> BudgetAudit {
        let mut identities = Vec::new();
        for (r, row) in self.rows.iter().enumerate() {
            let Some(group) = row.group.filter(|g| self.violable.contains(g)) else {
                continue;
            };
            let violated = self
                .samples
                .iter()
                .filter(|d| row.instantiate(d).eval(values) > tol)
                .count();
            let selected = self
                .saa
                .rows
                .iter()
                .filter(|s| s.source == r && values[s.selector.0] > 0.5)
                .count();
            identities.push(IdentityAudit {
                identity: row.identity(),
                group,
                violated,
                selected,
            });
        }
        let unflagged = self
            .saa
            .rows
            .iter()
            .filter(|s| {
                let e = self.rows[s.source].instantiate(&self.samples[s.sample]);
                e.eval(values) > tol && values[s.selector.0] < 0.5
            })
            .count();
        BudgetAudit {
            budget: self.saa.budget,
            identities,
            unflagged,
        }
    }

    /// Carries a solution of `other`, a robust model of the same scenario,
    /// over to this one by variable name. Variables `other` lacks are zero
    /// and every selector is set exactly when its sample fails by more than
    /// round-off.
    pub fn lift(&self, other: &RobustModel, values: &[f64]) -> Vec<f64> {
        let theirs = other.model();
        let mut x: Vec<f64> = self
            .model()
            .vars
            .iter()
            .map(|v| theirs.var_id(&v.name).map_or(0.0, |id| values[id.0]))
            .collect();
        for s in &self.saa.rows {
            // Round-off in `values` must not use up the budget.
            let failed = self.rows[s.source]
                .instantiate(&self.samples[s.sample])
                .eval(&x)
                > LIFT_TOL;
            x[s.selector.0] = if failed { 1.0 } else { 0.0 };
        }
        x
    }

    /// Clears selectors whose sampled row holds anyway, so that `g = 1`
    /// marks exactly the violated samples.
    pub fn normalize_selectors(&self, values: &mut [f64], tol: f64) {
        for s in &self.saa.rows {
            let e = self.rows[s.source].instantiate(&self.samples[s.sample]);
            if e.eval(values) <= tol {
                values[s.selector.0] = 0.0;
            }
        }
    }
}

/// Assembles the robust MILP: the core model with the epigraph recursion,
/// the recourse gains, sampled chance rows for the violable groups and
/// dualized rows for everything else, plus the second-stage cost.
pub fn assemble_robust(
    scenario: &Scenario,
    params: &BatteryParams,
    model_config: &ModelConfig,
    config: &RobustConfig,
) -> Result<RobustModel> {
    let n = scenario.n;
    let uncertainty = scenario.uncertainty()?;
    uncertainty.validate(2 * n)?;
    config.validate(n)?;
    let epsilon = config.epsilon.unwrap_or(uncertainty.epsilon);
    let k = config.k_samples.unwrap_or(uncertainty.k_samples);
    if !(epsilon > 0.0 && epsilon < 1.0) {
        return Err(Error::Config(format!(
            "epsilon must lie in (0, 1) (got {epsilon})"
        )));
    }
    let info = PolytopeInfo::analyse(&uncertainty.polytope)?;

    let mut core = assemble_core(scenario, params, model_config, RecursionForm::Epigraph)?;
    let gains = build_gains(
        &mut core.model,
        scenario,
        uncertainty,
        config,
        lateness_cap(scenario),
    )?;
    let rows = uncertain_rows(&core, scenario, params.kv, &gains)?;
    let samples = sample_uncertainty(
        uncertainty,
        k,
        derive_seed(uncertainty.seed, SAA_SEED_LABEL),
    )?;

    let saa = build_saa_constraints(
        &mut core.model,
        &rows,
        &config.violable_set,
        &samples,
        epsilon,
        config.big_m_saa,
    )?;
    let hard: Vec<usize> = (0..rows.len())
        .filter(|&r| {
            rows[r]
                .group
                .is_none_or(|g| !config.violable_set.contains(&g))
        })
        .collect();
    let duals = dualize_hard_constraints(&mut core.model, &rows, &hard, &info)?;

    // Sampled SOC rows that must hold usually lift the floor of S̄ above the
    // nominal one; restart the whole-box envelope there.
    let s_bar = core.schedule.controls.s_bar;
    let floor = single_variable_floor(&core.model, s_bar);
    let s_box = scenario.s_bounds;
    if floor
        > core.model.vars[s_bar.0]
            .lower
            .max(nominal_floor(scenario, params))
            + 1e-9
        && floor < s_box.hi
    {
        add_whole_box_envelope(
            &mut core.model,
            "hull_sampled",
            s_bar,
            &core.schedule.tw,
            &core.mccormick.w,
            Bounds::new(floor, s_box.hi),
            scenario.tw_bounds,
        );
    }

    add_second_stage_cost(&mut core.model, scenario, config, &gains, &samples);

    core.model.validate()?;
    core.model.audit(&robust_row_tags())?;
    Ok(RobustModel {
        core,
        samples,
        epsilon,
        violable: config.violable_set.clone(),
        rows,
        gains,
        saa,
        duals,
    })
}

/// Assembles and solves the robust model. With optimized recourse, the
/// model without recourse is solved first: its solution with zero gains is
/// feasible for the full model and seeds the search. Any time limit covers
/// both solves.
pub fn solve_robust(
    scenario: &Scenario,
    params: &BatteryParams,
    model_config: &ModelConfig,
    config: &RobustConfig,
    options: &SolveOptions,
) -> Result<(RobustModel, SolveResult)> {
    let robust = assemble_robust(scenario, params, model_config, config)?;
    if config.mode() != RecourseMode::Optimize {
        let result = solve_milp(robust.model(), options)?;
        return Ok((robust, result));
    }
    let start = Instant::now();
    let mut fixed = config.clone();
    fixed.set_mode(RecourseMode::Off)?;
    let plain = assemble_robust(scenario, params, model_config, &fixed)?;
    let first = solve_milp(plain.model(), options)?;
    log::info!(
        "recourse-free start: {} after {} nodes",
        first.status.label(),
        first.nodes
    );
    let mut rest = options.clone();
    rest.time_limit = options
        .time_limit
        .map(|t| t.saturating_sub(start.elapsed()));
    let result = if first.has_incumbent() {
        solve_milp_from(robust.model(), &rest, &robust.lift(&plain, &first.values))?
    } else {
        solve_milp(robust.model(), &rest)?
    };
    Ok((robust, result))
}

fn nominal_floor(scenario: &Scenario, params: &BatteryParams) -> f64 {
    scenario.d.iter().fold(0.0_f64, |m, &d| m.max(d)) * params.kv + scenario.s_lower
}

/// Largest lower bound on `var` stated by a row that involves nothing else.
fn single_variable_floor(model: &MilpModel, var: VarId) -> f64 {
    model
        .rows
        .iter()
        .filter_map(|r| match (r.terms.as_slice(), r.sense) {
            ([(v, a)], Sense::Ge) if *v == var && *a > 0.0 => Some(r.rhs / a),
            ([(v, a)], Sense::Le) if *v == var && *a < 0.0 => Some(r.rhs / a),
            _ => None,
        })
        .fold(f64::NEG_INFINITY, f64::max)
}

/// `beta . delta` averaged over the samples, or the sample average of the
/// `beta`-weighted adjustment magnitudes: `beta_i` prices the SOC adjustment
/// of task `i` and `beta_{n+i}` its combined time adjustment.
fn add_second_stage_cost(
    model: &mut MilpModel,
    scenario: &Scenario,
    config: &RobustConfig,
    gains: &Gains,
    samples: &[Vec<f64>],
) {
    let n = scenario.n;
    let k = samples.len() as f64;
    let beta = &scenario.beta;
    match config.second_stage_cost {
        SecondStageCost::Literal => {
            let mut mean = vec![0.0; 2 * n];
            for d in samples {
                for (m, x) in mean.iter_mut().zip(d) {
                    *m += x;
                }
            }
            let cost: f64 = beta.iter().zip(&mean).map(|(b, m)| b * m / k).sum();
            model.add_objective(&LinExpr::constant(cost));
        }
        SecondStageCost::RecourseMagnitude => {
            for i in 0..n {
                let time_row: GainRow = gains
                    .row(Family::Travel, i)
                    .iter()
                    .chain(gains.row(Family::Charge, i))
                    .cloned()
                    .collect();
                for (weight, row, label) in [
                    (beta[i], gains.row(Family::Soc, i).clone(), "soc"),
                    (beta[n + i], time_row, "time"),
                ] {
                    if weight == 0.0 || row.is_empty() {
                        continue;
                    }
                    for (s, delta) in samples.iter().enumerate() {
                        let mut e = LinExpr::default();
                        for (j, g) in &row {
                            e.add_scaled(g, delta[*j]);
                        }
                        let e = e.normalized();
                        if e.is_constant() {
                            model.add_objective(&LinExpr::constant(weight * e.constant.abs() / k));
                            continue;
                        }
                        let u = model.add_continuous(
                            format!("adjust_{label}_{i}_{s}"),
                            0.0,
                            f64::INFINITY,
                            Tag::AdjustmentMagnitude,
                        );
                        let mut up = LinExpr::var(u);
                        up.add_scaled(&e, -1.0);
                        let mut down = LinExpr::var(u);
                        down.add_scaled(&e, 1.0);
                        model.add_row(
                            format!("adjust_{label}_{i}_{s}_up"),
                            &up,
                            Sense::Ge,
                            Tag::AdjustmentBound,
                        );
                        model.add_row(
                            format!("adjust_{label}_{i}_{s}_down"),
                            &down,
                            Sense::Ge,
                            Tag::AdjustmentBound,
                        );
                        model.add_objective(&LinExpr::var(u).scaled(weight / k));
                    }
                }
            }
        }
    }
}
