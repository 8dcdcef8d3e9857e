mod common;

use amrplan::battery::BatteryParams;
use amrplan::evaluate::VALIDATION_SEED_LABEL;
use amrplan::evaluate::{
    compare_to_baseline, grid_oracle, monte_carlo_validate, simulate_schedule, Reduction,
};
use amrplan::model::{assemble_deterministic, ModelConfig};
use amrplan::robust::SAA_SEED_LABEL;
use amrplan::scenario::{
    baseline_decision, derive_seed, sample_uncertainty, Bounds, Component, Decision, Polytope,
    Scenario, UncertaintyModel,
};
use amrplan::solver::{solve_milp, SolveOptions, Status};
use common::{fitted, random_scenario, scenario};
use proptest::prelude::*;

fn decision(s_bar: f64, v: f64, c: f64) -> Decision {
    Decision {
        s_bar,
        v,
        c,
        recourse: None,
    }
}

fn close(a: f64, b: f64, tol: f64) -> bool {
    (a - b).abs() <= tol
}

#[test]
fn tiny3_schedule_matches_hand_computation() {
    let sc = scenario("tiny3");
    let p = fitted();
    let (kc, ks) = (p.kc.unwrap(), p.ks.unwrap());

    // v = 4, c = 1: execution 0.5 / 0.65 / 0.375 h, charging 0.2 / 0.26 / 0.15 h.
    // Slack after task 0 is 2 - 0.7 = 1.3, after task 1 it is 1 - 0.91 = 0.09.
    let r = simulate_schedule(&sc, &p, &decision(0.6, 4.0, 1.0), None).unwrap();
    let tw = [0.0, 1.3, 0.09];
    for (task, w) in r.schedule.iter().zip(tw) {
        assert!(close(task.t_w, w, 1e-12) && task.dt == 0.0);
    }
    assert!(close(r.cycling_degradation, kc * 0.61, 1e-15));
    assert!(close(r.calendar_degradation, ks * 0.6 * 1.39, 1e-15));
    assert_eq!(r.total_waiting, 0.0);
    assert_eq!(r.violation_probs, vec![0.0; 3]);

    // v = 3, c = 0.75: task 1 takes 2.6/3 + 0.26/0.75 = 1.21333 h of a 1 h
    // interval, so task 2 starts 0.21333 h late.
    let r = simulate_schedule(&sc, &p, &decision(0.6, 3.0, 0.75), None).unwrap();
    let late = 2.6 / 3.0 + 0.26 / 0.75 - 1.0;
    assert!(close(
        r.schedule[1].t_w,
        2.0 - 2.0 / 3.0 - 0.2 / 0.75,
        1e-12
    ));
    assert!(close(r.schedule[2].dt, late, 1e-12) && r.schedule[2].t_w == 0.0);
    // c * tc = kv * d whatever the rate.
    assert!(close(r.cycling_degradation, kc * 0.61, 1e-15));
    assert!(close(
        r.objective,
        r.cycling_degradation + r.calendar_degradation + sc.lambda * late,
        1e-15
    ));

    // A target of 0.45 cannot cover task 1's 0.26 draw above the 0.2 floor.
    let r = simulate_schedule(&sc, &p, &decision(0.45, 4.0, 1.0), None).unwrap();
    assert_eq!(r.violation_probs, vec![0.0, 1.0, 0.0]);
}

fn arbitrary_case() -> impl Strategy<Value = (u64, usize, f64, f64, f64, Vec<f64>)> {
    (
        0u64..1000,
        2usize..8,
        0.4f64..1.0,
        3.0f64..5.0,
        0.75f64..1.25,
    )
        .prop_flat_map(|(seed, n, s, v, c)| {
            (
                Just(seed),
                Just(n),
                Just(s),
                Just(v),
                Just(c),
                proptest::collection::vec(-0.3f64..0.3, 2 * n),
            )
        })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn simulated_schedule_obeys_the_recursion((seed, n, s, v, c, noise) in arbitrary_case()) {
        let sc = random_scenario(seed, n);
        let p = fitted();
        // Relative perturbations keep every interval and distance positive.
        let delta: Vec<f64> = noise
            .iter()
            .enumerate()
            .map(|(j, e)| if j < n { e * sc.xi[j] } else { e * sc.d[j - n] })
            .collect();
        let r = simulate_schedule(&sc, &p, &decision(s, v, c), Some(&delta)).unwrap();
        let (xi, d) = sc.perturbed(&delta);
        for i in 0..n {
            let task = &r.schedule[i];
            prop_assert!(task.t >= 0.0 && task.t_c >= 0.0 && task.t_w >= 0.0 && task.dt >= 0.0);
            prop_assert!(close(task.t, d[i] / v, 1e-12));
            if i + 1 < n {
                let next = &r.schedule[i + 1];
                prop_assert!(next.dt * next.t_w == 0.0);
                let busy = task.dt + task.t + task.t_c - xi[i];
                prop_assert!(close(next.dt - next.t_w, busy, 1e-12));
            }
        }
        let expected = r.cycling_degradation + r.calendar_degradation + sc.lambda * r.total_waiting;
        prop_assert!(close(r.objective, expected, 1e-9));
        prop_assert!(r.violation_probs.iter().all(|&x| x == 0.0 || x == 1.0));
    }
}

#[test]
fn finer_nested_grids_are_never_worse() {
    let sc = scenario("tiny3");
    let p = fitted();
    let mut last = f64::INFINITY;
    for r in [3, 5, 9, 17] {
        let g = grid_oracle(&sc, &p, r).unwrap();
        assert_eq!(g.evaluated, r * r * r);
        assert!(
            g.objective <= last,
            "resolution {r}: {} after {last}",
            g.objective
        );
        last = g.objective;
    }
}

#[test]
fn free_batteries_tie_every_grid_point() {
    let mut sc = scenario("tiny3");
    sc.xi = vec![50.0; 3];
    sc.tw_bounds = Bounds::new(0.0, 200.0);
    let p = BatteryParams {
        kc: Some(0.0),
        ks: Some(0.0),
        ..BatteryParams::default()
    };
    let g = grid_oracle(&sc, &p, 4).unwrap();
    assert_eq!(g.objective, 0.0);
    // Ties go to the first feasible point in grid order.
    assert_eq!(
        (g.decision.v, g.decision.c),
        (sc.v_bounds.lo, sc.c_bounds.lo)
    );
    let cmp = compare_to_baseline(&sc, &p, &g.decision, 0, 0)
        .unwrap()
        .comparison
        .unwrap();
    assert_eq!(cmp.calendar_reduction_pct, Reduction::NotApplicable);
    assert_eq!(cmp.cycling_reduction_pct, Reduction::NotApplicable);
}

#[test]
fn nominal_linearization_makes_the_milp_exact() {
    // Speed and C-rate settle at their lower bounds, where the time models
    // are linearized, and the SOC floor is the box's lower edge, where the
    // envelope is exact.
    let sc = Scenario::from_json_str(
        r#"{"n": 4, "xi": [3.0, 3.5, 2.5, 3.0], "d": [2.0, 3.0, 1.0, 2.5], "s_lower": 0.2,
            "v_bounds": [3.0, 5.0], "c_bounds": [0.75, 1.25], "v_hat": 3.0, "c_hat": 0.75,
            "t_bounds": [0.0, 2.0], "tc_bounds": [0.0, 1.0], "tw_bounds": [0.0, 4.0],
            "s_bounds": [0.5, 1.0], "lambda": 1e-4}"#,
    )
    .unwrap();
    let p = fitted();
    let m = assemble_deterministic(&sc, &p, &ModelConfig::default()).unwrap();
    let r = solve_milp(&m.model, &SolveOptions::default()).unwrap();
    assert_eq!(r.status, Status::Optimal);
    let d = m.decision(&r.values);
    assert_eq!((d.v, d.c, d.s_bar), (3.0, 0.75, 0.5));
    let truth = simulate_schedule(&sc, &p, &d, None).unwrap();
    assert!(
        close(truth.objective, r.objective, 1e-6 * r.objective),
        "{} vs {}",
        truth.objective,
        r.objective
    );
}

#[test]
fn milp_decision_is_close_to_the_grid_optimum() {
    let sc = scenario("tiny3");
    let p = fitted();
    let m = assemble_deterministic(&sc, &p, &ModelConfig::default()).unwrap();
    let r = solve_milp(&m.model, &SolveOptions::default()).unwrap();
    let truth = simulate_schedule(&sc, &p, &m.decision(&r.values), None).unwrap();
    let grid = grid_oracle(&sc, &p, 20).unwrap();
    assert!(
        truth.objective <= grid.objective * 1.02,
        "{} vs {}",
        truth.objective,
        grid.objective
    );
}

fn standard_error(p: f64, m: usize) -> f64 {
    (p * (1.0 - p) / m as f64).sqrt()
}

#[test]
fn validation_seeds_agree_within_sampling_noise() {
    let sc = scenario("tiny3");
    let p = fitted();
    // A target just above the nominal floor fails often enough to measure.
    let d = decision(0.47, 4.0, 1.0);
    let m = 10_000;
    let a = monte_carlo_validate(&sc, &p, &d, m, 1).unwrap();
    let b = monte_carlo_validate(&sc, &p, &d, m, 2).unwrap();
    assert!(a.violation_probs().iter().any(|&x| x > 0.05));
    for (x, y) in a.violation_probs().iter().zip(b.violation_probs()) {
        let pooled = (x + y) / 2.0;
        let se = (2.0f64).sqrt() * standard_error(pooled, m);
        assert!((x - y).abs() <= 3.0 * se + 1e-12, "{x} vs {y}");
    }
    let again = monte_carlo_validate(&sc, &p, &d, m, 1).unwrap();
    assert_eq!(a, again);
}

#[test]
fn zero_width_uncertainty_gives_certain_outcomes() {
    let mut sc = scenario("tiny3");
    let dim = 2 * sc.n;
    sc.uncertainty = Some(UncertaintyModel {
        components: vec![Component::Point { value: 0.0 }; dim],
        polytope: Polytope::from_box(&vec![Bounds::new(0.0, 0.0); dim]),
        k_samples: 10,
        epsilon: 0.1,
        seed: 0,
    });
    let p = fitted();
    for s in [0.45, 0.47, 0.6] {
        let v = monte_carlo_validate(&sc, &p, &decision(s, 4.0, 1.0), 500, 3).unwrap();
        assert!(v.violation_probs().iter().all(|&x| x == 0.0 || x == 1.0));
    }
}

#[test]
fn validation_draws_differ_from_training_draws() {
    let sc = scenario("tiny3");
    let u = sc.uncertainty.as_ref().unwrap();
    let train = sample_uncertainty(u, 5, derive_seed(u.seed, SAA_SEED_LABEL)).unwrap();
    let fresh = sample_uncertainty(u, 5, derive_seed(u.seed, VALIDATION_SEED_LABEL)).unwrap();
    assert_ne!(train, fresh);
}

#[test]
fn baseline_compared_with_itself_reduces_nothing() {
    let sc = scenario("reference20");
    let p = fitted();
    let base = baseline_decision(&sc).unwrap();
    for m in [0, 1000] {
        let cmp = compare_to_baseline(&sc, &p, &base, m, 4)
            .unwrap()
            .comparison
            .unwrap();
        assert_eq!(cmp.calendar_reduction_pct, Reduction::Percent(0.0));
        assert_eq!(cmp.cycling_reduction_pct, Reduction::Percent(0.0));
        assert_eq!(cmp.added_waiting, 0.0);
    }
}

#[test]
fn optimized_reference_plan_reduces_calendar_aging() {
    let sc = scenario("reference20");
    let p = fitted();
    let m = assemble_deterministic(&sc, &p, &ModelConfig::default()).unwrap();
    let r = solve_milp(&m.model, &SolveOptions::default()).unwrap();
    let cmp = compare_to_baseline(&sc, &p, &m.decision(&r.values), 0, 0)
        .unwrap()
        .comparison
        .unwrap();
    let Reduction::Percent(pct) = cmp.calendar_reduction_pct else {
        panic!("baseline calendar degradation is positive");
    };
    assert!(pct > 0.0);
    assert!(cmp.added_waiting >= 0.0);
}
