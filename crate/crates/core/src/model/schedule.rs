use super::{linearize_charge_time, linearize_travel_time, LinExpr, MilpModel, Sense, Tag, VarId};
use crate::error::Result;
use crate::scenario::Scenario;

/// How the lateness/idle recursion is encoded.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum RecursionForm {
    /// `dt[i+1] - tw[i+1] = dt[i] + t[i] + tc[i] - xi[i]` with both sides
    /// nonnegative; complementarity comes from positive objective weights.
    #[default]
    Equality,
    /// The two epigraph inequalities `dt[i+1] >= dt[i] + t[i] + tc[i] - xi[i]`
    /// and `tw[i+1] >= xi[i] - t[i] - tc[i] - dt[i]`.
    Epigraph,
}

/// First-stage controls shared by every task.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Controls {
    pub s_bar: VarId,
    pub v: VarId,
    pub c: VarId,
}

impl Controls {
    pub fn add(model: &mut MilpModel, scenario: &Scenario) -> Self {
        Controls {
            s_bar: model.add_continuous(
                "s_bar",
                scenario.s_bounds.lo,
                scenario.s_bounds.hi,
                Tag::Control,
            ),
            v: model.add_continuous(
                "v",
                scenario.v_bounds.lo,
                scenario.v_bounds.hi,
                Tag::Control,
            ),
            c: model.add_continuous(
                "c",
                scenario.c_bounds.lo,
                scenario.c_bounds.hi,
                Tag::Control,
            ),
        }
    }
}

/// Per-task schedule variables.
#[derive(Debug, Clone, PartialEq)]
pub struct ScheduleVars {
    pub controls: Controls,
    /// Execution time.
    pub t: Vec<VarId>,
    /// Charging time.
    pub tc: Vec<VarId>,
    /// Idle time.
    pub tw: Vec<VarId>,
    /// Postponement of the task start.
    pub dt: Vec<VarId>,
}

/// Upper bound on any postponement: every task running at its longest.
pub(crate) fn lateness_cap(scenario: &Scenario) -> f64 {
    scenario.n as f64 * (scenario.t_bounds.hi + scenario.tc_bounds.hi)
}

/// Adds the controls, the per-task time variables with their boxes, the SOC
/// budget rows, the linearized time definitions and the recursion rows.
pub fn build_schedule_constraints(
    model: &mut MilpModel,
    scenario: &Scenario,
    kv: f64,
    form: RecursionForm,
) -> Result<ScheduleVars> {
    let n = scenario.n;
    let controls = Controls::add(model, scenario);
    let cap = lateness_cap(scenario);
    let mut vars = ScheduleVars {
        controls,
        t: Vec::with_capacity(n),
        tc: Vec::with_capacity(n),
        tw: Vec::with_capacity(n),
        dt: Vec::with_capacity(n),
    };
    for i in 0..n {
        let (t, tc, tw_box, dt) = (
            scenario.t_bounds,
            scenario.tc_bounds,
            scenario.tw_bounds,
            cap,
        );
        vars.t
            .push(model.add_continuous(format!("t_{i}"), t.lo, t.hi, Tag::ScheduleTime));
        vars.tc
            .push(model.add_continuous(format!("tc_{i}"), tc.lo, tc.hi, Tag::ScheduleTime));
        // Nothing precedes the first group, so its idle time sits at the floor.
        let tw_hi = if i == 0 { tw_box.lo } else { tw_box.hi };
        vars.tw
            .push(model.add_continuous(format!("tw_{i}"), tw_box.lo, tw_hi, Tag::ScheduleTime));
        vars.dt
            .push(model.add_continuous(format!("dt_{i}"), 0.0, dt, Tag::ScheduleTime));
    }

    for i in 0..n {
        let budget =
            LinExpr::var(controls.s_bar).plus_const(-(scenario.s_lower + kv * scenario.d[i]));
        model.add_row(
            format!("soc_budget_{i}"),
            &budget,
            Sense::Ge,
            Tag::SocBudget,
        );
    }
    for i in 0..n {
        let travel = linearize_travel_time(scenario.d[i], scenario.v_hat)?;
        let e = LinExpr::var(vars.t[i])
            .term(controls.v, -travel.slope)
            .plus_const(-travel.intercept);
        model.add_row(format!("travel_time_{i}"), &e, Sense::Eq, Tag::TravelTime);

        let charge = linearize_charge_time(scenario.d[i], scenario.c_hat, kv)?;
        let e = LinExpr::var(vars.tc[i])
            .term(controls.c, -charge.slope)
            .plus_const(-charge.intercept);
        model.add_row(format!("charge_time_{i}"), &e, Sense::Eq, Tag::ChargeTime);
    }

    model.add_row(
        "start_0",
        &LinExpr::var(vars.dt[0]),
        Sense::Eq,
        Tag::Recursion,
    );
    for i in 0..n.saturating_sub(1) {
        // busy = dt[i] + t[i] + tc[i] - xi[i]
        let busy = LinExpr::var(vars.dt[i])
            .term(vars.t[i], 1.0)
            .term(vars.tc[i], 1.0)
            .plus_const(-scenario.xi[i]);
        match form {
            RecursionForm::Equality => {
                let mut e = LinExpr::var(vars.dt[i + 1]).term(vars.tw[i + 1], -1.0);
                e.add_scaled(&busy, -1.0);
                model.add_row(format!("recursion_{i}"), &e, Sense::Eq, Tag::Recursion);
            }
            RecursionForm::Epigraph => {
                let mut wait = LinExpr::var(vars.dt[i + 1]);
                wait.add_scaled(&busy, -1.0);
                model.add_row(format!("wait_{i}"), &wait, Sense::Ge, Tag::Recursion);
                let mut idle = LinExpr::var(vars.tw[i + 1]);
                idle.add_scaled(&busy, 1.0);
                model.add_row(format!("idle_{i}"), &idle, Sense::Ge, Tag::Recursion);
            }
        }
    }
    Ok(vars)
}
