use serde::{Deserialize, Serialize};

use super::{
    add_whole_box_envelope, build_mccormick, build_schedule_constraints, LinExpr, McCormickBlock,
    McCormickConfig, MilpModel, RecursionForm, ScheduleVars, DETERMINISTIC_ROW_TAGS,
};
use crate::battery::BatteryParams;
use crate::error::Result;
use crate::scenario::{Bounds, Decision, Scenario};

/// How the charging-degradation term `kc * c * tc` is made linear.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "snake_case")]
pub enum ChargingCost {
    /// Substitute the linearized charge time and expand the resulting
    /// quadratic at `c_hat`: `kc * kv * d * c / c_hat`, exact at `c = c_hat`.
    #[default]
    Taylor,
    /// Use `c * tc = kv * d`, which makes the term the constant `kc * kv * d`.
    Constant,
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct ModelConfig {
    pub mccormick: McCormickConfig,
    pub charging_cost: ChargingCost,
    /// Recursion encoding of the deterministic model. The robust model always
    /// uses the epigraph form.
    pub recursion: RecursionForm,
}

/// The assembled deterministic MILP with handles to its named variables.
#[derive(Debug, Clone)]
pub struct DeterministicModel {
    pub model: MilpModel,
    pub schedule: ScheduleVars,
    pub mccormick: McCormickBlock,
}

/// Per-task schedule values read back from a solution.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ScheduleValues {
    pub t: Vec<f64>,
    pub tc: Vec<f64>,
    pub tw: Vec<f64>,
    pub dt: Vec<f64>,
}

impl DeterministicModel {
    /// The controls of a solution, snapped into their boxes to undo
    /// round-off at active bounds.
    pub fn decision(&self, values: &[f64]) -> Decision {
        let c = &self.schedule.controls;
        let get = |id: super::VarId| {
            let var = &self.model.vars[id.0];
            values[id.0].clamp(var.lower, var.upper)
        };
        Decision {
            s_bar: get(c.s_bar),
            v: get(c.v),
            c: get(c.c),
            recourse: None,
        }
    }

    pub fn schedule_values(&self, values: &[f64]) -> ScheduleValues {
        let pick = |ids: &[super::VarId]| ids.iter().map(|v| values[v.0]).collect();
        ScheduleValues {
            t: pick(&self.schedule.t),
            tc: pick(&self.schedule.tc),
            tw: pick(&self.schedule.tw),
            dt: pick(&self.schedule.dt),
        }
    }
}

/// Objective contribution of the charging term for task `i`.
pub(crate) fn charging_term(
    scenario: &Scenario,
    params: &BatteryParams,
    kc: f64,
    mode: ChargingCost,
    i: usize,
    c: super::VarId,
) -> LinExpr {
    let soc = params.kv * scenario.d[i];
    match mode {
        ChargingCost::Taylor => LinExpr::default().term(c, kc * soc / scenario.c_hat),
        ChargingCost::Constant => LinExpr::constant(kc * soc),
    }
}

/// Builds schedule, envelope and objective; shared with the robust model.
pub(crate) fn assemble_core(
    scenario: &Scenario,
    params: &BatteryParams,
    config: &ModelConfig,
    form: RecursionForm,
) -> Result<DeterministicModel> {
    scenario.validate()?;
    let (kc, ks) = params.fitted()?;
    let mut model = MilpModel::new();
    let schedule = build_schedule_constraints(&mut model, scenario, params.kv, form)?;
    let mccormick = build_mccormick(
        &mut model,
        scenario,
        schedule.controls.s_bar,
        &schedule.tw,
        &config.mccormick,
    )?;
    // The SOC rows force S̄ above the largest single-task draw, so the whole
    // box envelope may start there.
    let floor = scenario.d.iter().fold(0.0_f64, |m, &d| m.max(d)) * params.kv + scenario.s_lower;
    let s_box = scenario.s_bounds;
    if floor < s_box.hi {
        add_whole_box_envelope(
            &mut model,
            "hull",
            schedule.controls.s_bar,
            &schedule.tw,
            &mccormick.w,
            Bounds::new(floor.max(s_box.lo), s_box.hi),
            scenario.tw_bounds,
        );
    }
    for i in 0..scenario.n {
        let mut term = charging_term(
            scenario,
            params,
            kc,
            config.charging_cost,
            i,
            schedule.controls.c,
        );
        term.add_scaled(&LinExpr::var(mccormick.w[i]), ks);
        term.add_scaled(&LinExpr::var(schedule.dt[i]), scenario.lambda);
        model.add_objective(&term);
    }
    Ok(DeterministicModel {
        model,
        schedule,
        mccormick,
    })
}

/// Assembles the deterministic planning MILP for fitted battery parameters.
pub fn assemble_deterministic(
    scenario: &Scenario,
    params: &BatteryParams,
    config: &ModelConfig,
) -> Result<DeterministicModel> {
    let built = assemble_core(scenario, params, config, config.recursion)?;
    built.model.validate()?;
    built.model.audit(&DETERMINISTIC_ROW_TAGS)?;
    Ok(built)
}
