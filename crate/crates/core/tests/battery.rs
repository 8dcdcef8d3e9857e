mod common;

use amrplan::battery::{
    calendar_rate, cycling_degradation, integrate_calendar_loss, BatteryParams, CyclingStress,
};
use common::rk4_converged;
use proptest::prelude::*;

#[test]
fn closed_form_calendar_loss_matches_rk4_on_a_grid() {
    let p = BatteryParams::default();
    for &soc in &[0.0, 0.25, 0.5, 0.75, 1.0] {
        for &hours in &[0.1, 1.0, 24.0, 720.0, 8760.0] {
            let exact = integrate_calendar_loss(&p, p.t_ref, soc, 0.0, hours).unwrap();
            let k = calendar_rate(&p, p.t_ref, soc).unwrap();
            let numeric = rk4_converged(&p, k, 0.0, hours, 1e-10);
            assert!(
                (exact - numeric).abs() <= 1e-6 * exact.abs(),
                "soc {soc}, {hours} h: {exact} vs {numeric}"
            );
        }
    }
}

#[test]
fn calendar_loss_continues_from_a_nonzero_start() {
    let p = BatteryParams {
        alpha: 0.5,
        ..BatteryParams::default()
    };
    let k = calendar_rate(&p, 310.0, 0.6).unwrap();
    let exact = integrate_calendar_loss(&p, 310.0, 0.6, 2.0, 5000.0).unwrap();
    let numeric = rk4_converged(&p, k, 2.0, 5000.0, 1e-10);
    assert!((exact - numeric).abs() <= 1e-6 * exact);
}

#[test]
fn flat_cycle_costs_only_the_depth_free_term() {
    let p = BatteryParams::default();
    for &avg in &[0.0, 0.3, 0.9] {
        let q = 7.5;
        let loss = cycling_degradation(
            &p,
            &CyclingStress {
                soc_dev: 0.0,
                soc_avg: avg,
                q,
            },
        )
        .unwrap();
        assert!((loss - p.k3 * q).abs() <= 1e-15);
    }
}

proptest! {
    #[test]
    fn cycling_loss_is_linear_in_throughput(
        dev in 0.0f64..1.0, avg in 0.0f64..1.0, q in 0.0f64..100.0, s in 0.0f64..10.0,
    ) {
        let p = BatteryParams::default();
        let at = |q| cycling_degradation(&p, &CyclingStress { soc_dev: dev, soc_avg: avg, q }).unwrap();
        let base = at(q);
        prop_assert!((at(s * q) - s * base).abs() <= 1e-12 * base.abs().max(1e-12));
        prop_assert!((at(q + 1.0) - base - at(1.0)).abs() <= 1e-12 * base.abs().max(1e-12));
    }

    #[test]
    fn calendar_loss_composes_over_split_intervals(
        soc in 0.0f64..1.0, a in 0.0f64..2000.0, b in 0.0f64..2000.0,
    ) {
        let p = BatteryParams::default();
        let whole = integrate_calendar_loss(&p, p.t_ref, soc, 0.0, a + b).unwrap();
        let mid = integrate_calendar_loss(&p, p.t_ref, soc, 0.0, a).unwrap();
        let split = integrate_calendar_loss(&p, p.t_ref, soc, mid, b).unwrap();
        prop_assert!((whole - split).abs() <= 1e-10 * whole.max(1e-12));
    }

    #[test]
    fn calendar_loss_is_monotone(soc in 0.0f64..1.0, t in 0.0f64..1000.0, dt in 0.0f64..1000.0) {
        let p = BatteryParams::default();
        let lo = integrate_calendar_loss(&p, p.t_ref, soc, 0.0, t).unwrap();
        let hi = integrate_calendar_loss(&p, p.t_ref, soc, 0.0, t + dt).unwrap();
        prop_assert!(hi >= lo);
    }
}
