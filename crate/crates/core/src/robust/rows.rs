use super::recourse::{Family, GainRow, Gains};
use crate::error::Result;
use crate::model::{
    linearize_charge_time, linearize_travel_time, DeterministicModel, Group, LinExpr, Sense,
};
use crate::scenario::Scenario;

/// A row that must hold under the uncertainty: `sum_j a_j * delta_j <= b`,
/// where the coefficients `a_j` and the right-hand side `b` are affine in
/// the decision variables.
#[derive(Debug, Clone, PartialEq)]
pub struct UncertainRow {
    /// Chance-constraint group; `None` for envelope and control-box rows,
    /// which are always enforced for the whole polytope.
    pub group: Option<Group>,
    pub kind: &'static str,
    pub task: usize,
    /// Envelope rows carry their cell; zero otherwise.
    pub cell: usize,
    pub b: LinExpr,
    /// Sorted by component, at most one entry per component.
    pub a: Vec<(usize, LinExpr)>,
}

impl UncertainRow {
    /// `a . delta - b` for a concrete `delta`: the row holds iff this is <= 0.
    pub fn instantiate(&self, delta: &[f64]) -> LinExpr {
        let mut e = self.b.scaled(-1.0);
        for (j, aj) in &self.a {
            if delta[*j] != 0.0 {
                e.add_scaled(aj, delta[*j]);
            }
        }
        e.normalized()
    }

    /// Whether no component of `delta` that the row reacts to is nonzero.
    pub fn ignores(&self, delta: &[f64]) -> bool {
        self.a
            .iter()
            .all(|(j, aj)| delta[*j] == 0.0 || aj.is_constant() && aj.constant == 0.0)
    }

    /// Whether every coefficient is a constant.
    pub fn fixed_coefficients(&self) -> Option<Vec<(usize, f64)>> {
        self.a
            .iter()
            .map(|(j, aj)| aj.is_constant().then_some((*j, aj.constant)))
            .collect()
    }

    pub fn identity(&self) -> String {
        match self.group {
            Some(g) => format!("{}_{}_{}", g.label(), self.kind, self.task),
            None => format!("{}_{}_{}", self.kind, self.task, self.cell),
        }
    }
}

/// Accumulates `sum_j a_j delta_j` with merged components.
#[derive(Default)]
struct Coefs(Vec<(usize, LinExpr)>);

impl Coefs {
    fn add(&mut self, j: usize, e: &LinExpr, scale: f64) {
        match self.0.iter_mut().find(|(k, _)| *k == j) {
            Some((_, x)) => x.add_scaled(e, scale),
            None => self.0.push((j, e.scaled(scale))),
        }
    }

    fn add_gains(&mut self, row: &GainRow, scale: f64) {
        for (j, e) in row {
            self.add(*j, e, scale);
        }
    }

    fn finish(mut self) -> Vec<(usize, LinExpr)> {
        for (_, e) in self.0.iter_mut() {
            *e = e.normalized();
        }
        self.0
            .retain(|(_, e)| !(e.is_constant() && e.constant == 0.0));
        self.0.sort_by_key(|(j, _)| *j);
        self.0
    }
}

/// Builds every uncertain row of the robust model. The grouped rows are
/// sampled; the control boxes and envelope rows, with their recourse terms,
/// are enforced over the whole polytope.
pub fn uncertain_rows(
    core: &DeterministicModel,
    scenario: &Scenario,
    kv: f64,
    gains: &Gains,
) -> Result<Vec<UncertainRow>> {
    let n = scenario.n;
    let sv = &core.schedule;
    let ctl = sv.controls;
    // Per unit of distance: time sensitivity to a distance perturbation.
    let travel = linearize_travel_time(1.0, scenario.v_hat)?;
    let charge = linearize_charge_time(1.0, scenario.c_hat, kv)?;
    let tau = LinExpr::default()
        .term(ctl.v, travel.slope)
        .plus_const(travel.intercept);
    let kappa = LinExpr::default()
        .term(ctl.c, charge.slope)
        .plus_const(charge.intercept);
    let busy_sens = {
        let mut e = tau.clone();
        e.add_scaled(&kappa, 1.0);
        e
    };

    let mut rows = Vec::new();
    let mut push = |group: Option<Group>,
                    kind: &'static str,
                    task: usize,
                    cell: usize,
                    b: LinExpr,
                    a: Coefs| {
        rows.push(UncertainRow {
            group,
            kind,
            task,
            cell,
            b: b.normalized(),
            a: a.finish(),
        });
    };

    for i in 0..n {
        let dj = n + i;
        for (group, var, sens, family, bounds) in [
            (
                Group::TravelTime,
                sv.t[i],
                &tau,
                Family::Travel,
                scenario.t_bounds,
            ),
            (
                Group::ChargeTime,
                sv.tc[i],
                &kappa,
                Family::Charge,
                scenario.tc_bounds,
            ),
        ] {
            let mut hi = Coefs::default();
            hi.add(dj, sens, 1.0);
            hi.add_gains(gains.row(family, i), 1.0);
            push(
                Some(group),
                "hi",
                i,
                0,
                LinExpr::var(var).scaled(-1.0).plus_const(bounds.hi),
                hi,
            );
            let mut lo = Coefs::default();
            lo.add(dj, sens, -1.0);
            lo.add_gains(gains.row(family, i), -1.0);
            push(
                Some(group),
                "lo",
                i,
                0,
                LinExpr::var(var).plus_const(-bounds.lo),
                lo,
            );
        }

        let mut soc = Coefs::default();
        soc.add(dj, &LinExpr::constant(kv), 1.0);
        soc.add_gains(gains.row(Family::Soc, i), -1.0);
        push(
            Some(Group::SocFloor),
            "floor",
            i,
            0,
            LinExpr::var(ctl.s_bar).plus_const(-scenario.s_lower - kv * scenario.d[i]),
            soc,
        );
    }

    for i in 0..n.saturating_sub(1) {
        // busy(δ) = dt_i(δ) + t_i(δ) + tc_i(δ) - ξ_i - δ_i
        let mut busy = Coefs::default();
        busy.add(n + i, &busy_sens, 1.0);
        busy.add(i, &LinExpr::constant(-1.0), 1.0);
        busy.add_gains(gains.row(Family::Travel, i), 1.0);
        busy.add_gains(gains.row(Family::Charge, i), 1.0);
        busy.add_gains(gains.row(Family::Wait, i), 1.0);
        let nominal = LinExpr::var(sv.dt[i])
            .term(sv.t[i], 1.0)
            .term(sv.tc[i], 1.0)
            .plus_const(-scenario.xi[i]);

        // dt_{i+1}(δ) >= busy(δ)
        let mut wait = Coefs::default();
        wait.add_gains(&busy.0, 1.0);
        wait.add_gains(gains.row(Family::Wait, i + 1), -1.0);
        let mut b = LinExpr::var(sv.dt[i + 1]);
        b.add_scaled(&nominal, -1.0);
        push(Some(Group::Recursion), "wait", i, 0, b, wait);

        // tw_{i+1}(δ) >= -busy(δ)
        let mut idle = Coefs::default();
        idle.add_gains(&busy.0, -1.0);
        idle.add_gains(gains.row(Family::Idle, i + 1), -1.0);
        let mut b = LinExpr::var(sv.tw[i + 1]);
        b.add_scaled(&nominal, 1.0);
        push(Some(Group::Recursion), "idle", i, 0, b, idle);
    }

    // Adapted schedule quantities keep their boxes.
    for i in 1..n {
        let wait = gains.row(Family::Wait, i);
        if !wait.is_empty() {
            let mut a = Coefs::default();
            a.add_gains(wait, -1.0);
            push(
                Some(Group::Recursion),
                "wait_floor",
                i,
                0,
                LinExpr::var(sv.dt[i]),
                a,
            );
        }
        let idle = gains.row(Family::Idle, i);
        if !idle.is_empty() {
            let tw = scenario.tw_bounds;
            let mut lo = Coefs::default();
            lo.add_gains(idle, -1.0);
            push(
                Some(Group::Recursion),
                "idle_floor",
                i,
                0,
                LinExpr::var(sv.tw[i]).plus_const(-tw.lo),
                lo,
            );
            let mut hi = Coefs::default();
            hi.add_gains(idle, 1.0);
            push(
                Some(Group::Recursion),
                "idle_ceiling",
                i,
                0,
                LinExpr::var(sv.tw[i]).scaled(-1.0).plus_const(tw.hi),
                hi,
            );
        }
    }

    // Adapted controls keep their boxes for every perturbation. Speed and
    // C-rate follow the adjusted times through the linearized time models.
    for i in 0..n {
        let v_scale = -scenario.v_hat * scenario.v_hat / scenario.d[i];
        let c_scale = -scenario.c_hat * scenario.c_hat / (kv * scenario.d[i]);
        for (family, var, scale, bounds, kinds) in [
            (
                Family::Soc,
                ctl.s_bar,
                1.0,
                scenario.s_bounds,
                ["soc_hi", "soc_lo"],
            ),
            (
                Family::Travel,
                ctl.v,
                v_scale,
                scenario.v_bounds,
                ["speed_hi", "speed_lo"],
            ),
            (
                Family::Charge,
                ctl.c,
                c_scale,
                scenario.c_bounds,
                ["rate_hi", "rate_lo"],
            ),
        ] {
            let gains = gains.row(family, i);
            if gains.is_empty() {
                continue;
            }
            let mut hi = Coefs::default();
            hi.add_gains(gains, scale);
            push(
                None,
                kinds[0],
                i,
                0,
                LinExpr::var(var).scaled(-1.0).plus_const(bounds.hi),
                hi,
            );
            let mut lo = Coefs::default();
            lo.add_gains(gains, -scale);
            push(
                None,
                kinds[1],
                i,
                0,
                LinExpr::var(var).plus_const(-bounds.lo),
                lo,
            );
        }
    }

    // Envelope rows with the adapted target SOC and idle time:
    // w >= a (tw + W_tw δ) + b (S̄ + W_s δ) - ab - m (1 - z), and the mirror
    // image for overestimators.
    for env in &core.mccormick.envelope {
        let row = &core.model.rows[env.row];
        let slack = row_slack(row);
        let sign = if env.lower { 1.0 } else { -1.0 };
        let mut a = Coefs::default();
        a.add_gains(gains.row(Family::Idle, env.task), sign * env.a);
        a.add_gains(gains.row(Family::Soc, env.task), sign * env.b);
        // Each cell has two under- and two overestimators, told apart by
        // which SOC edge supplies the idle-time coefficient.
        let low_edge = env.a == core.mccormick.cells[env.cell].s_lo;
        let kind = match (env.lower, low_edge) {
            (true, true) => "under_lo",
            (true, false) => "under_hi",
            (false, true) => "over_lo",
            (false, false) => "over_hi",
        };
        push(None, kind, env.task, env.cell, slack, a);
    }
    Ok(rows)
}

/// `b` such that the row reads `b >= 0`.
fn row_slack(row: &crate::model::Constraint) -> LinExpr {
    let lhs = LinExpr {
        terms: row.terms.clone(),
        constant: -row.rhs,
    };
    match row.sense {
        Sense::Ge => lhs,
        Sense::Le => lhs.scaled(-1.0),
        Sense::Eq => unreachable!("envelope rows are inequalities"),
    }
}
