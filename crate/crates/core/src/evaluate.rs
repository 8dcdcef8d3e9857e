//! Exact evaluation of decisions: the nonlinear schedule, Monte Carlo
//! validation, a brute-force grid oracle and the baseline comparison.

use std::io::Write;

use rayon::prelude::*;
use serde::{Serialize, Serializer};

use crate::battery::BatteryParams;
use crate::error::{Error, Result};
use crate::robust::{apply_recourse, ClipEvent};
use crate::scenario::{
    baseline_decision, derive_seed, sample_uncertainty, Bounds, Decision, Scenario,
};

/// Seed label of the out-of-sample validation stream.
pub const VALIDATION_SEED_LABEL: &str = "validate";

/// Default out-of-sample sample count.
pub const DEFAULT_VALIDATION_SAMPLES: usize = 10_000;

/// Slack allowed on the SOC floor, matching the solver's feasibility
/// tolerance so that a floor hit exactly by the optimizer is not a breach.
pub const SOC_TOLERANCE: f64 = 1e-7;

/// Smallest sample count accepted by [`monte_carlo_validate`].
pub const MIN_VALIDATION_SAMPLES: usize = 100;

/// Realized times and controls of one task group.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TaskReport {
    /// Execution time `d' / v` (h).
    pub t: f64,
    /// Charging time `kv d' / c` (h).
    pub t_c: f64,
    /// Idle time before the group starts (h).
    pub t_w: f64,
    /// Lateness of the group's start (h).
    pub dt: f64,
    pub s_bar: f64,
    pub v: f64,
    pub c: f64,
    /// SOC drawn by the group.
    pub soc_used: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EvaluationReport {
    pub schedule: Vec<TaskReport>,
    pub cycling_degradation: f64,
    pub calendar_degradation: f64,
    pub total_waiting: f64,
    pub objective: f64,
    /// Per-task frequency of drawing more than `S̄ - S̲`. A single
    /// simulation reports 0 or 1.
    pub violation_probs: Vec<f64>,
    /// Controls the recourse pushed outside their boxes.
    pub clips: Vec<ClipEvent>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub comparison: Option<Box<Comparison>>,
}

impl EvaluationReport {
    /// Writes one row per task.
    pub fn write_csv(&self, out: impl Write) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["task", "t", "t_c", "t_w", "dt", "violation_freq"])
            .map_err(csv_error)?;
        for (i, (task, p)) in self.schedule.iter().zip(&self.violation_probs).enumerate() {
            w.write_record([
                i.to_string(),
                task.t.to_string(),
                task.t_c.to_string(),
                task.t_w.to_string(),
                task.dt.to_string(),
                p.to_string(),
            ])
            .map_err(csv_error)?;
        }
        w.flush()
            .map_err(|e| Error::Numeric(format!("writing CSV: {e}")))?;
        Ok(())
    }

    /// Totals and, when present, the baseline comparison.
    pub fn summary(&self) -> Summary {
        Summary {
            cycling_degradation: self.cycling_degradation,
            calendar_degradation: self.calendar_degradation,
            total_waiting: self.total_waiting,
            objective: self.objective,
            max_violation_prob: self.violation_probs.iter().copied().fold(0.0, f64::max),
            clips: self.clips.len(),
            comparison: self.comparison.as_deref().cloned(),
        }
    }

    /// Per-task series for external plotting: start times, SOC levels
    /// around each group and the degradation split.
    pub fn write_plotdata(
        &self,
        scenario: &Scenario,
        params: &BatteryParams,
        out: impl Write,
    ) -> Result<()> {
        let (kc, ks) = params.fitted()?;
        let mut w = csv::Writer::from_writer(out);
        w.write_record([
            "task",
            "planned_start",
            "actual_start",
            "s_bar",
            "soc_after_task",
            "idle",
            "charging",
            "cycling_degradation",
            "calendar_degradation",
            "violation_freq",
        ])
        .map_err(csv_error)?;
        let mut planned = 0.0;
        for (i, task) in self.schedule.iter().enumerate() {
            w.write_record([
                i.to_string(),
                planned.to_string(),
                (planned + task.dt).to_string(),
                task.s_bar.to_string(),
                (task.s_bar - task.soc_used).to_string(),
                task.t_w.to_string(),
                task.t_c.to_string(),
                (kc * task.c * task.t_c).to_string(),
                (ks * task.s_bar * task.t_w).to_string(),
                self.violation_probs[i].to_string(),
            ])
            .map_err(csv_error)?;
            planned += scenario.xi[i];
        }
        w.flush()
            .map_err(|e| Error::Numeric(format!("writing CSV: {e}")))?;
        Ok(())
    }
}

fn csv_error(e: csv::Error) -> Error {
    Error::Numeric(format!("writing CSV: {e}"))
}

/// Scalar results written next to the per-task CSV.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Summary {
    pub cycling_degradation: f64,
    pub calendar_degradation: f64,
    pub total_waiting: f64,
    pub objective: f64,
    pub max_violation_prob: f64,
    pub clips: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub comparison: Option<Comparison>,
}

/// Runs the schedule exactly: no linearization and the max-recursions for
/// lateness and idle time. `delta` perturbs intervals and distances; `None`
/// evaluates the nominal task set.
///
/// When the decision carries recourse and `delta` is given, each task runs
/// with its own adjusted controls.
pub fn simulate_schedule(
    scenario: &Scenario,
    params: &BatteryParams,
    decision: &Decision,
    delta: Option<&[f64]>,
) -> Result<EvaluationReport> {
    if !(decision.v > 0.0) || !(decision.c > 0.0) {
        return Err(Error::Domain(format!(
            "speed and C-rate must be positive (v = {}, c = {})",
            decision.v, decision.c
        )));
    }
    decision.check_boxes(scenario)?;
    let (kc, ks) = params.fitted()?;
    let n = scenario.n;
    let zero = vec![0.0; 2 * n];
    let delta = match delta {
        Some(d) if d.len() != 2 * n => {
            return Err(Error::Config(format!(
                "realized uncertainty has {} components, expected {}",
                d.len(),
                2 * n
            )))
        }
        Some(d) => d,
        None => &zero,
    };
    let (xi, d) = scenario.perturbed(delta);

    let (controls, clips) = match &decision.recourse {
        Some(_) if delta.iter().any(|&x| x != 0.0) => {
            let adj = apply_recourse(scenario, params.kv, decision, delta)?;
            let c = adj.tasks.iter().map(|t| (t.s_bar, t.v, t.c)).collect();
            (c, adj.clips)
        }
        _ => (
            vec![(decision.s_bar, decision.v, decision.c); n],
            Vec::new(),
        ),
    };

    let mut schedule = Vec::with_capacity(n);
    let mut violation_probs = Vec::with_capacity(n);
    let mut dt = 0.0;
    let mut tw = scenario.tw_bounds.lo;
    for i in 0..n {
        let (s_bar, v, c) = controls[i];
        let soc_used = params.kv * d[i];
        let task = TaskReport {
            t: d[i] / v,
            t_c: soc_used / c,
            t_w: tw,
            dt,
            s_bar,
            v,
            c,
            soc_used,
        };
        violation_probs.push(if soc_used > s_bar - scenario.s_lower + SOC_TOLERANCE {
            1.0
        } else {
            0.0
        });
        let slack = xi[i] - task.t - task.t_c - dt;
        dt = (-slack).max(0.0);
        tw = slack.max(0.0);
        schedule.push(task);
    }

    let cycling_degradation = schedule.iter().map(|t| kc * t.c * t.t_c).sum();
    let calendar_degradation = schedule.iter().map(|t| ks * t.s_bar * t.t_w).sum();
    let total_waiting = schedule.iter().map(|t| t.dt).sum();
    Ok(EvaluationReport {
        objective: objective(
            cycling_degradation,
            calendar_degradation,
            total_waiting,
            scenario.lambda,
        ),
        schedule,
        cycling_degradation,
        calendar_degradation,
        total_waiting,
        violation_probs,
        clips,
        comparison: None,
    })
}

fn objective(cycling: f64, calendar: f64, waiting: f64, lambda: f64) -> f64 {
    cycling + calendar + lambda * waiting
}

/// Best grid point found by [`grid_oracle`].
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GridResult {
    pub decision: Decision,
    pub objective: f64,
    /// Grid points evaluated.
    pub evaluated: usize,
    /// Grid points that respected every task's SOC floor and the time boxes.
    pub feasible: usize,
}

fn axis(lo: f64, hi: f64, r: usize) -> Vec<f64> {
    (0..r)
        .map(|k| {
            if k + 1 == r {
                hi
            } else {
                lo + (hi - lo) * k as f64 / (r - 1) as f64
            }
        })
        .collect()
}

/// Evaluates the nominal schedule on a uniform `r x r x r` grid over the
/// boxes of `(S̄, v, c)` and returns the best point that keeps every SOC
/// floor and every time within its box. Ties go to the first point in
/// `(S̄, v, c)` lexicographic order.
pub fn grid_oracle(
    scenario: &Scenario,
    params: &BatteryParams,
    resolution: usize,
) -> Result<GridResult> {
    if resolution < 2 {
        return Err(Error::Config(format!(
            "grid resolution must be >= 2 (got {resolution})"
        )));
    }
    params.fitted()?;
    let r = resolution;
    let s_axis = axis(scenario.s_bounds.lo, scenario.s_bounds.hi, r);
    let v_axis = axis(scenario.v_bounds.lo, scenario.v_bounds.hi, r);
    let c_axis = axis(scenario.c_bounds.lo, scenario.c_bounds.hi, r);
    let tol = 1e-9;
    let within = |b: Bounds, x: f64| x >= b.lo - tol && x <= b.hi + tol;

    let points: Vec<(usize, f64, Decision)> = (0..r * r * r)
        .into_par_iter()
        .filter_map(|idx| {
            let decision = Decision {
                s_bar: s_axis[idx / (r * r)],
                v: v_axis[idx / r % r],
                c: c_axis[idx % r],
                recourse: None,
            };
            let rep = simulate_schedule(scenario, params, &decision, None).ok()?;
            let ok = rep.violation_probs.iter().all(|&p| p == 0.0)
                && rep.schedule.iter().all(|t| {
                    within(scenario.t_bounds, t.t)
                        && within(scenario.tc_bounds, t.t_c)
                        && within(scenario.tw_bounds, t.t_w)
                });
            ok.then_some((idx, rep.objective, decision))
        })
        .collect();
    let feasible = points.len();
    let best = points
        .into_iter()
        .min_by(|a, b| a.1.total_cmp(&b.1).then(a.0.cmp(&b.0)))
        .ok_or_else(|| {
            Error::Infeasible(format!(
                "no point of the {r}x{r}x{r} grid keeps every task feasible"
            ))
        })?;
    Ok(GridResult {
        decision: best.2,
        objective: best.1,
        evaluated: r * r * r,
        feasible,
    })
}

/// Sum with pairwise splitting, so rounding error grows with `log n`.
fn pairwise_sum(x: &[f64]) -> f64 {
    if x.len() <= 8 {
        x.iter().sum()
    } else {
        let (a, b) = x.split_at(x.len() / 2);
        pairwise_sum(a) + pairwise_sum(b)
    }
}

fn pairwise_mean(x: &[f64]) -> f64 {
    pairwise_sum(x) / x.len() as f64
}

/// Out-of-sample statistics of a decision.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ValidationReport {
    pub samples: usize,
    pub seed: u64,
    /// Sample means of every per-task quantity and total, with the
    /// per-task violation frequencies.
    pub expected: EvaluationReport,
}

impl ValidationReport {
    pub fn violation_probs(&self) -> &[f64] {
        &self.expected.violation_probs
    }
}

fn aggregate(reports: &[EvaluationReport], lambda: f64) -> EvaluationReport {
    let n = reports[0].schedule.len();
    let mean_of = |f: &dyn Fn(&EvaluationReport) -> f64| {
        let xs: Vec<f64> = reports.iter().map(f).collect();
        pairwise_mean(&xs)
    };
    let schedule = (0..n)
        .map(|i| TaskReport {
            t: mean_of(&|r| r.schedule[i].t),
            t_c: mean_of(&|r| r.schedule[i].t_c),
            t_w: mean_of(&|r| r.schedule[i].t_w),
            dt: mean_of(&|r| r.schedule[i].dt),
            s_bar: mean_of(&|r| r.schedule[i].s_bar),
            v: mean_of(&|r| r.schedule[i].v),
            c: mean_of(&|r| r.schedule[i].c),
            soc_used: mean_of(&|r| r.schedule[i].soc_used),
        })
        .collect();
    let violation_probs = (0..n)
        .map(|i| {
            let hits = reports
                .iter()
                .filter(|r| r.violation_probs[i] > 0.0)
                .count();
            hits as f64 / reports.len() as f64
        })
        .collect();
    let cycling_degradation = mean_of(&|r| r.cycling_degradation);
    let calendar_degradation = mean_of(&|r| r.calendar_degradation);
    let total_waiting = mean_of(&|r| r.total_waiting);
    EvaluationReport {
        schedule,
        cycling_degradation,
        calendar_degradation,
        total_waiting,
        objective: objective(
            cycling_degradation,
            calendar_degradation,
            total_waiting,
            lambda,
        ),
        violation_probs,
        clips: reports
            .iter()
            .flat_map(|r| r.clips.iter().cloned())
            .collect(),
        comparison: None,
    }
}

fn simulate_all(
    scenario: &Scenario,
    params: &BatteryParams,
    decision: &Decision,
    samples: &[Vec<f64>],
) -> Result<EvaluationReport> {
    let reports = samples
        .par_iter()
        .map(|d| simulate_schedule(scenario, params, decision, Some(d)))
        .collect::<Result<Vec<_>>>()?;
    Ok(aggregate(&reports, scenario.lambda))
}

/// Fresh draws for validation, independent of the training samples.
fn validation_samples(scenario: &Scenario, m: usize, seed: u64) -> Result<Vec<Vec<f64>>> {
    sample_uncertainty(
        scenario.uncertainty()?,
        m,
        derive_seed(seed, VALIDATION_SEED_LABEL),
    )
}

/// Simulates `decision` on `m_samples` fresh draws of the scenario's
/// uncertainty and reports per-task violation frequencies and mean
/// degradation and waiting. The result depends only on the inputs and
/// `seed`, whatever the thread count.
pub fn monte_carlo_validate(
    scenario: &Scenario,
    params: &BatteryParams,
    decision: &Decision,
    m_samples: usize,
    seed: u64,
) -> Result<ValidationReport> {
    if m_samples < MIN_VALIDATION_SAMPLES {
        return Err(Error::Config(format!(
            "validation needs at least {MIN_VALIDATION_SAMPLES} samples (got {m_samples})"
        )));
    }
    let samples = validation_samples(scenario, m_samples, seed)?;
    Ok(ValidationReport {
        samples: m_samples,
        seed,
        expected: simulate_all(scenario, params, decision, &samples)?,
    })
}

/// A relative reduction that may be undefined when the baseline value is
/// zero; serialized as a number or as `"not applicable"`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Reduction {
    Percent(f64),
    NotApplicable,
}

impl Reduction {
    fn between(baseline: f64, value: f64) -> Self {
        if baseline == 0.0 {
            if value == 0.0 {
                Reduction::NotApplicable
            } else {
                Reduction::Percent(f64::NEG_INFINITY)
            }
        } else {
            Reduction::Percent(100.0 * (baseline - value) / baseline)
        }
    }

    pub fn percent(self) -> Option<f64> {
        match self {
            Reduction::Percent(p) => Some(p),
            Reduction::NotApplicable => None,
        }
    }
}

impl Serialize for Reduction {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        match self {
            Reduction::Percent(p) if p.is_finite() => s.serialize_f64(*p),
            Reduction::Percent(_) => s.serialize_str("unbounded increase"),
            Reduction::NotApplicable => s.serialize_str("not applicable"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Comparison {
    pub baseline: Decision,
    pub baseline_cycling: f64,
    pub baseline_calendar: f64,
    pub baseline_waiting: f64,
    pub calendar_reduction_pct: Reduction,
    pub cycling_reduction_pct: Reduction,
    /// Decision waiting minus baseline waiting (h).
    pub added_waiting: f64,
    /// Samples both decisions were evaluated on; 0 for the nominal task set.
    pub samples: usize,
}

/// Evaluates `decision` and the baseline policy on the same draws and
/// reports the reductions. `m_samples = 0` compares the nominal schedules.
pub fn compare_to_baseline(
    scenario: &Scenario,
    params: &BatteryParams,
    decision: &Decision,
    m_samples: usize,
    seed: u64,
) -> Result<EvaluationReport> {
    let baseline = baseline_decision(scenario)?;
    let (mut mine, base) = if m_samples == 0 {
        (
            simulate_schedule(scenario, params, decision, None)?,
            simulate_schedule(scenario, params, &baseline, None)?,
        )
    } else {
        let samples = validation_samples(scenario, m_samples, seed)?;
        (
            simulate_all(scenario, params, decision, &samples)?,
            simulate_all(scenario, params, &baseline, &samples)?,
        )
    };
    mine.comparison = Some(Box::new(Comparison {
        calendar_reduction_pct: Reduction::between(
            base.calendar_degradation,
            mine.calendar_degradation,
        ),
        cycling_reduction_pct: Reduction::between(
            base.cycling_degradation,
            mine.cycling_degradation,
        ),
        added_waiting: mine.total_waiting - base.total_waiting,
        baseline,
        baseline_cycling: base.cycling_degradation,
        baseline_calendar: base.calendar_degradation,
        baseline_waiting: base.total_waiting,
        samples: m_samples,
    }));
    Ok(mine)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn params() -> BatteryParams {
        BatteryParams {
            kc: Some(0.01),
            ks: Some(0.002),
            kv: 0.1,
            ..BatteryParams::default()
        }
    }

    fn scenario(xi: &[f64]) -> Scenario {
        let n = xi.len();
        let d = vec![1.0; n];
        Scenario::from_json_str(&format!(
            r#"{{"n": {n}, "xi": {xi:?}, "d": {d:?}, "s_lower": 0.2,
                "v_bounds": [1.0, 4.0], "c_bounds": [0.5, 1.5],
                "t_bounds": [0.0, 5.0], "tc_bounds": [0.0, 1.0], "tw_bounds": [0.0, 1000.0],
                "s_bounds": [0.3, 1.0], "lambda": 0.5,
                "uncertainty": {{"xi_spread": 0.1, "d_spread": 0.1, "k_samples": 10, "epsilon": 0.1, "seed": 1}}}}"#
        ))
        .unwrap()
    }

    fn decision() -> Decision {
        Decision {
            s_bar: 0.5,
            v: 2.0,
            c: 1.0,
            recourse: None,
        }
    }

    #[test]
    fn long_intervals_never_wait() {
        let s = scenario(&[100.0, 100.0, 100.0]);
        let r = simulate_schedule(&s, &params(), &decision(), None).unwrap();
        assert!(r.schedule.iter().all(|t| t.dt == 0.0));
        assert_eq!(r.total_waiting, 0.0);
        // t = 0.5, t_c = 0.1: idle 99.4 before every later task
        assert!((r.schedule[1].t_w - 99.4).abs() < 1e-12);
    }

    #[test]
    fn knife_edge_intervals_have_no_slack() {
        let s = scenario(&[0.6, 0.6, 0.6]);
        let r = simulate_schedule(&s, &params(), &decision(), None).unwrap();
        for t in &r.schedule {
            assert!(t.dt.abs() < 1e-15 && t.t_w.abs() < 1e-15, "{t:?}");
        }
    }

    #[test]
    fn lateness_accumulates() {
        let s = scenario(&[0.5, 0.5, 0.5]);
        let r = simulate_schedule(&s, &params(), &decision(), None).unwrap();
        let dts: Vec<f64> = r.schedule.iter().map(|t| t.dt).collect();
        assert!((dts[1] - 0.1).abs() < 1e-12 && (dts[2] - 0.2).abs() < 1e-12);
        assert!(
            (r.objective - (r.cycling_degradation + r.calendar_degradation + 0.5 * 0.3)).abs()
                < 1e-12
        );
    }

    #[test]
    fn soc_violation_is_flagged() {
        let s = scenario(&[2.0]);
        let mut d = decision();
        d.s_bar = 0.3;
        let r = simulate_schedule(&s, &params(), &d, Some(&[0.0, 0.5])).unwrap();
        // draw 0.15 > 0.3 - 0.2
        assert_eq!(r.violation_probs, vec![1.0]);
        let ok = simulate_schedule(&s, &params(), &d, Some(&[0.0, -0.5])).unwrap();
        assert_eq!(ok.violation_probs, vec![0.0]);
    }

    #[test]
    fn nonpositive_speed_is_a_domain_error() {
        let s = scenario(&[2.0]);
        let mut d = decision();
        d.v = 0.0;
        assert!(matches!(
            simulate_schedule(&s, &params(), &d, None),
            Err(Error::Domain(_))
        ));
    }

    #[test]
    fn resolution_two_evaluates_the_corners() {
        let s = scenario(&[3.0, 3.0]);
        let g = grid_oracle(&s, &params(), 2).unwrap();
        assert_eq!(g.evaluated, 8);
        assert!(grid_oracle(&s, &params(), 1).is_err());
    }

    #[test]
    fn pairwise_sum_matches_naive_sum() {
        let x: Vec<f64> = (0..1000).map(|k| k as f64 * 0.5).collect();
        assert_eq!(pairwise_sum(&x), x.iter().sum::<f64>());
    }

    #[test]
    fn self_comparison_reduces_nothing() {
        let s = scenario(&[3.0, 3.0]);
        let base = baseline_decision(&s).unwrap();
        let r = compare_to_baseline(&s, &params(), &base, 200, 5).unwrap();
        let c = r.comparison.unwrap();
        assert_eq!(c.calendar_reduction_pct, Reduction::Percent(0.0));
        assert_eq!(c.cycling_reduction_pct, Reduction::Percent(0.0));
        assert_eq!(c.added_waiting, 0.0);
    }

    #[test]
    fn zero_coefficients_are_not_applicable() {
        let s = scenario(&[3.0, 3.0]);
        let p = BatteryParams {
            kc: Some(0.0),
            ks: Some(0.0),
            ..params()
        };
        let r = compare_to_baseline(&s, &p, &decision(), 0, 0).unwrap();
        let c = r.comparison.unwrap();
        assert_eq!(c.calendar_reduction_pct, Reduction::NotApplicable);
        assert_eq!(
            serde_json::to_string(&c.cycling_reduction_pct).unwrap(),
            "\"not applicable\""
        );
    }

    #[test]
    fn validation_needs_enough_samples() {
        let s = scenario(&[3.0]);
        assert!(monte_carlo_validate(&s, &params(), &decision(), 99, 0).is_err());
    }
}
