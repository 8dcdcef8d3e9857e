use serde::Serialize;

use super::config::{RecourseMode, RecourseStructure, RobustConfig};
use crate::error::{Error, Result};
use crate::model::{LinExpr, MilpModel, Tag};
use crate::scenario::{Bounds, Decision, Recourse, Scenario, UncertaintyModel};

/// Which adjusted quantity a gain row drives.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum Family {
    /// Target SOC.
    Soc,
    /// Execution time.
    Travel,
    /// Charging time.
    Charge,
    /// Postponement.
    Wait,
    /// Idle time.
    Idle,
}

impl Family {
    pub const ALL: [Family; 5] = [
        Family::Soc,
        Family::Travel,
        Family::Charge,
        Family::Wait,
        Family::Idle,
    ];

    fn prefix(self) -> &'static str {
        match self {
            Family::Soc => "ws",
            Family::Travel => "wt",
            Family::Charge => "wtc",
            Family::Wait => "wdt",
            Family::Idle => "wtw",
        }
    }

    /// Task 0 starts on time and after no idle period, so its schedule
    /// quantities never adapt.
    fn adapts(self, task: usize) -> bool {
        task > 0 || !matches!(self, Family::Wait | Family::Idle)
    }

    fn matrix(self, r: &Recourse) -> &Vec<Vec<f64>> {
        match self {
            Family::Soc => &r.ws,
            Family::Travel => &r.wt,
            Family::Charge => &r.wtc,
            Family::Wait => &r.wdt,
            Family::Idle => &r.wtw,
        }
    }

    fn matrix_mut(self, r: &mut Recourse) -> &mut Vec<Vec<f64>> {
        match self {
            Family::Soc => &mut r.ws,
            Family::Travel => &mut r.wt,
            Family::Charge => &mut r.wtc,
            Family::Wait => &mut r.wdt,
            Family::Idle => &mut r.wtw,
        }
    }
}

/// Affine response of one adjusted quantity: `sum_j coef_j * delta_j`, each
/// coefficient a constant or a gain variable.
pub type GainRow = Vec<(usize, LinExpr)>;

/// Recourse gains as they appear in the model.
#[derive(Debug, Clone, PartialEq)]
pub struct Gains {
    pub mode: RecourseMode,
    rows: [Vec<GainRow>; 5],
}

impl Gains {
    pub fn row(&self, family: Family, task: usize) -> &GainRow {
        &self.rows[family as usize][task]
    }

    pub fn is_off(&self) -> bool {
        self.rows.iter().flatten().all(|r| r.is_empty())
    }

    /// Gain values under a model assignment; `None` when recourse is off.
    pub fn extract(&self, values: &[f64]) -> Option<Recourse> {
        if self.mode == RecourseMode::Off {
            return None;
        }
        let n = self.rows[0].len();
        let mut out = Recourse::zeros(n);
        for f in Family::ALL {
            let m = f.matrix_mut(&mut out);
            for (i, row) in self.rows[f as usize].iter().enumerate() {
                for (j, e) in row {
                    m[i][*j] = e.eval(values);
                }
            }
        }
        Some(out)
    }
}

/// Components a task's adjustments may respond to.
fn pattern(structure: RecourseStructure, n: usize, task: usize) -> Vec<usize> {
    match structure {
        RecourseStructure::Diagonal => vec![task, n + task],
        RecourseStructure::Full => (0..2 * n).collect(),
    }
}

/// Largest magnitude a component can take over its support.
fn reach(b: Bounds) -> f64 {
    b.lo.abs().max(b.hi.abs())
}

/// Default gain bound: the adjustment a single component can cause stays
/// within twice the width of the adjusted quantity's box.
fn default_bound(width: f64, support: Bounds) -> f64 {
    let r = reach(support);
    if r == 0.0 {
        0.0
    } else {
        2.0 * width / r
    }
}

/// Adds the gain variables (or constants) selected by `config`.
pub fn build_gains(
    model: &mut MilpModel,
    scenario: &Scenario,
    uncertainty: &UncertaintyModel,
    config: &RobustConfig,
    lateness_cap: f64,
) -> Result<Gains> {
    let n = scenario.n;
    let mode = config.mode();
    let mut rows: [Vec<GainRow>; 5] = Default::default();
    for r in rows.iter_mut() {
        *r = vec![Vec::new(); n];
    }
    match mode {
        RecourseMode::Off => {}
        RecourseMode::Fixed => {
            let fixed = config
                .fixed_recourse
                .as_ref()
                .ok_or_else(|| Error::Config("fixed recourse mode without gains".into()))?;
            for f in Family::ALL {
                let m = f.matrix(fixed);
                for (i, row) in m.iter().enumerate() {
                    for (j, &g) in row.iter().enumerate() {
                        if g == 0.0 {
                            continue;
                        }
                        if !f.adapts(i) {
                            return Err(Error::Config(format!(
                                "recourse gain {}[0][{j}] must be zero: the first task cannot adapt",
                                f.prefix()
                            )));
                        }
                        rows[f as usize][i].push((j, LinExpr::constant(g)));
                    }
                }
            }
        }
        RecourseMode::Optimize => {
            let supports: Vec<Bounds> =
                uncertainty.components.iter().map(|c| c.support()).collect();
            for f in Family::ALL {
                let width = match f {
                    Family::Soc => scenario.s_bounds.width(),
                    Family::Travel => scenario.t_bounds.width(),
                    Family::Charge => scenario.tc_bounds.width(),
                    Family::Wait => lateness_cap,
                    Family::Idle => scenario.tw_bounds.width(),
                };
                for i in (0..n).filter(|&i| f.adapts(i)) {
                    for j in pattern(config.recourse_structure, n, i) {
                        let bound = config
                            .w_max
                            .unwrap_or_else(|| default_bound(width, supports[j]));
                        if bound == 0.0 || reach(supports[j]) == 0.0 {
                            continue;
                        }
                        let v = model.add_continuous(
                            format!("{}_{i}_{j}", f.prefix()),
                            -bound,
                            bound,
                            Tag::RecourseGain,
                        );
                        rows[f as usize][i].push((j, LinExpr::var(v)));
                    }
                }
            }
        }
    }
    Ok(Gains { mode, rows })
}

/// Clipping smaller than this is round-off in the gains and is applied
/// without being reported.
const CLIP_TOL: f64 = 1e-9;

/// A control that had to be clipped back into its box.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ClipEvent {
    pub task: usize,
    pub control: &'static str,
    pub requested: f64,
    pub applied: f64,
}

/// Controls in force for one task after adaptation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct TaskControls {
    pub s_bar: f64,
    pub v: f64,
    pub c: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Adjusted {
    pub tasks: Vec<TaskControls>,
    pub clips: Vec<ClipEvent>,
}

/// Applies the decision's recourse to an observed `delta`.
///
/// Adjusted execution and charging times are mapped back to the speed and
/// C-rate that produce them under the linearized time models, so task `i`
/// runs at `v - v_hat^2 / d_i * (W_t delta)_i` and charges at
/// `c - c_hat^2 / (kv d_i) * (W_tc delta)_i`.
pub fn apply_recourse(
    scenario: &Scenario,
    kv: f64,
    decision: &Decision,
    delta: &[f64],
) -> Result<Adjusted> {
    let r = decision.recourse.as_ref().ok_or_else(|| {
        Error::Config(
            "decision carries no recourse; evaluate its first-stage controls directly".into(),
        )
    })?;
    let n = scenario.n;
    if delta.len() != 2 * n {
        return Err(Error::Config(format!(
            "observed uncertainty has {} components, expected {}",
            delta.len(),
            2 * n
        )));
    }
    let dot = |row: &[f64]| row.iter().zip(delta).map(|(a, b)| a * b).sum::<f64>();
    let mut out = Adjusted {
        tasks: Vec::with_capacity(n),
        clips: Vec::new(),
    };
    let mut clip = |task: usize, control: &'static str, x: f64, b: Bounds| {
        let y = b.clamp(x);
        if (y - x).abs() > CLIP_TOL {
            out.clips.push(ClipEvent {
                task,
                control,
                requested: x,
                applied: y,
            });
        }
        y
    };
    let mut tasks = Vec::with_capacity(n);
    for i in 0..n {
        let s = decision.s_bar + dot(&r.ws[i]);
        let v = decision.v - scenario.v_hat * scenario.v_hat / scenario.d[i] * dot(&r.wt[i]);
        let c =
            decision.c - scenario.c_hat * scenario.c_hat / (kv * scenario.d[i]) * dot(&r.wtc[i]);
        tasks.push(TaskControls {
            s_bar: clip(i, "s_bar", s, scenario.s_bounds),
            v: clip(i, "v", v, scenario.v_bounds),
            c: clip(i, "c", c, scenario.c_bounds),
        });
    }
    out.tasks = tasks;
    Ok(out)
}
