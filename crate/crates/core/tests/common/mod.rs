//! Helpers shared by the integration tests: an independent dense tableau
//! simplex, brute-force enumeration for small MILPs, random instance
//! generators and fixture loading.

#![allow(dead_code)]

use std::path::PathBuf;

use amrplan::battery::{fit_default, BatteryParams};
use amrplan::model::{LinExpr, MilpModel, Sense, Tag, VarKind};
use amrplan::scenario::{load_scenario, Scenario};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn workspace_file(rel: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR"))
        .join("../..")
        .join(rel)
}

pub fn scenario(name: &str) -> Scenario {
    load_scenario(workspace_file(&format!("scenarios/{name}.json")))
        .expect("shipped scenario loads")
}

pub fn fitted() -> BatteryParams {
    fit_default(&BatteryParams::default()).expect("default parameters fit")
}

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

#[derive(Debug, Clone, PartialEq)]
pub enum Oracle {
    Optimal { objective: f64, x: Vec<f64> },
    Infeasible,
    Unbounded,
}

impl Oracle {
    pub fn objective(&self) -> Option<f64> {
        match self {
            Oracle::Optimal { objective, .. } => Some(*objective),
            _ => None,
        }
    }
}

const EPS: f64 = 1e-9;

/// Dense tableau with the objective in the last row.
struct Tableau {
    a: Vec<Vec<f64>>,
    basis: Vec<usize>,
    cols: usize,
}

impl Tableau {
    fn pivot(&mut self, r: usize, c: usize) {
        let p = self.a[r][c];
        for x in self.a[r].iter_mut() {
            *x /= p;
        }
        let pivot_row = self.a[r].clone();
        for (i, row) in self.a.iter_mut().enumerate() {
            if i != r && row[c].abs() > 0.0 {
                let f = row[c];
                for (x, y) in row.iter_mut().zip(&pivot_row) {
                    *x -= f * y;
                }
            }
        }
        self.basis[r] = c;
    }

    /// Bland's rule on columns `0..allowed`. Returns false when unbounded.
    fn optimize(&mut self, allowed: usize) -> bool {
        let m = self.basis.len();
        loop {
            let obj = &self.a[m];
            let Some(c) = (0..allowed).find(|&j| obj[j] < -EPS) else {
                return true;
            };
            let mut best: Option<(f64, usize, usize)> = None;
            for i in 0..m {
                let aic = self.a[i][c];
                if aic > EPS {
                    let ratio = self.a[i][self.cols] / aic;
                    let better = match best {
                        None => true,
                        Some((r, _, b)) => {
                            ratio < r - EPS || (ratio <= r + EPS && self.basis[i] < b)
                        }
                    };
                    if better {
                        best = Some((ratio, i, self.basis[i]));
                    }
                }
            }
            match best {
                Some((_, r, _)) => self.pivot(r, c),
                None => return false,
            }
        }
    }
}

/// Solves the LP relaxation of `model` (binaries relaxed to `[0, 1]`) with
/// a textbook two-phase dense simplex. Variables need finite lower bounds.
pub fn tableau_simplex(model: &MilpModel) -> Oracle {
    let n = model.vars.len();
    let lower: Vec<f64> = model.vars.iter().map(|v| v.lower).collect();
    assert!(
        lower.iter().all(|l| l.is_finite()),
        "oracle needs finite lower bounds"
    );

    // Rows over y = x - lower >= 0, including finite upper bounds.
    let mut rows: Vec<(Vec<f64>, Sense, f64)> = Vec::new();
    for r in &model.rows {
        let mut a = vec![0.0; n];
        for &(v, c) in &r.terms {
            a[v.0] += c;
        }
        let shift: f64 = a.iter().zip(&lower).map(|(x, l)| x * l).sum();
        rows.push((a, r.sense, r.rhs - shift));
    }
    for (j, v) in model.vars.iter().enumerate() {
        if v.upper.is_finite() {
            let mut a = vec![0.0; n];
            a[j] = 1.0;
            rows.push((a, Sense::Le, v.upper - v.lower));
        }
    }
    for (a, sense, b) in rows.iter_mut() {
        if *b < 0.0 {
            a.iter_mut().for_each(|x| *x = -*x);
            *b = -*b;
            *sense = match sense {
                Sense::Le => Sense::Ge,
                Sense::Ge => Sense::Le,
                Sense::Eq => Sense::Eq,
            };
        }
    }

    let m = rows.len();
    let slacks = rows.iter().filter(|(_, s, _)| *s != Sense::Eq).count();
    let artificials = rows.iter().filter(|(_, s, _)| *s != Sense::Le).count();
    let cols = n + slacks + artificials;
    let mut t = Tableau {
        a: vec![vec![0.0; cols + 1]; m + 1],
        basis: vec![0; m],
        cols,
    };
    let (mut s, mut art) = (n, n + slacks);
    for (i, (a, sense, b)) in rows.iter().enumerate() {
        t.a[i][..n].copy_from_slice(a);
        t.a[i][cols] = *b;
        match sense {
            Sense::Le => {
                t.a[i][s] = 1.0;
                t.basis[i] = s;
                s += 1;
            }
            Sense::Ge => {
                t.a[i][s] = -1.0;
                s += 1;
                t.a[i][art] = 1.0;
                t.basis[i] = art;
                art += 1;
            }
            Sense::Eq => {
                t.a[i][art] = 1.0;
                t.basis[i] = art;
                art += 1;
            }
        }
    }

    // Phase one: minimize the sum of artificials.
    for j in n + slacks..cols {
        t.a[m][j] = 1.0;
    }
    for i in 0..m {
        if t.basis[i] >= n + slacks {
            let row = t.a[i].clone();
            for (x, y) in t.a[m].iter_mut().zip(&row) {
                *x -= y;
            }
        }
    }
    t.optimize(cols);
    if -t.a[m][cols] > 1e-7 {
        return Oracle::Infeasible;
    }
    // Drive remaining artificials out of the basis.
    let mut i = 0;
    while i < t.basis.len() {
        if t.basis[i] >= n + slacks {
            match (0..n + slacks).find(|&j| t.a[i][j].abs() > 1e-9) {
                Some(j) => t.pivot(i, j),
                None => {
                    // Redundant row.
                    t.a.remove(i);
                    t.basis.remove(i);
                    continue;
                }
            }
        }
        i += 1;
    }

    // Phase two over the original and slack columns.
    let m = t.basis.len();
    let c = model.objective_dense();
    t.a[m] = vec![0.0; cols + 1];
    t.a[m][..n].copy_from_slice(&c);
    for i in 0..m {
        let b = t.basis[i];
        let f = t.a[m][b];
        if f != 0.0 {
            let row = t.a[i].clone();
            for (x, y) in t.a[m].iter_mut().zip(&row) {
                *x -= f * y;
            }
        }
    }
    if !t.optimize(n + slacks) {
        return Oracle::Unbounded;
    }
    let mut y = vec![0.0; cols];
    for i in 0..m {
        y[t.basis[i]] = t.a[i][cols];
    }
    let x: Vec<f64> = (0..n).map(|j| lower[j] + y[j]).collect();
    Oracle::Optimal {
        objective: model.objective_value(&x),
        x,
    }
}

/// Minimizes over every assignment of the binaries, solving the remaining
/// LP with [`tableau_simplex`].
pub fn enumerate_milp(model: &MilpModel) -> Option<f64> {
    let bins: Vec<usize> = model.binaries().map(|v| v.0).collect();
    assert!(bins.len() <= 16, "enumeration is for small models");
    let mut best: Option<f64> = None;
    for mask in 0u32..(1 << bins.len()) {
        let mut fixed = model.clone();
        for (k, &j) in bins.iter().enumerate() {
            let x = f64::from((mask >> k) & 1);
            fixed.vars[j].lower = x;
            fixed.vars[j].upper = x;
        }
        if let Some(obj) = tableau_simplex(&fixed).objective() {
            best = Some(best.map_or(obj, |b: f64| b.min(obj)));
        }
    }
    best
}

/// A feasible random LP: rows of mixed sense built around an interior point
/// of the box `[0, 10]^n`.
pub fn random_lp(seed: u64, rows: usize, cols: usize) -> MilpModel {
    let mut r = rng(seed);
    let mut m = MilpModel::new();
    let vars: Vec<_> = (0..cols)
        .map(|j| m.add_continuous(format!("x{j}"), 0.0, 10.0, Tag::Control))
        .collect();
    let x0: Vec<f64> = (0..cols).map(|_| r.gen_range(1.0..9.0)).collect();
    for i in 0..rows {
        let mut e = LinExpr::default();
        let mut ax = 0.0;
        for (j, &v) in vars.iter().enumerate() {
            if r.gen_bool(0.6) {
                let a: f64 = r.gen_range(-5.0..5.0);
                e = e.term(v, a);
                ax += a * x0[j];
            }
        }
        let sense = match r.gen_range(0..10) {
            0 => Sense::Eq,
            1..=5 => Sense::Le,
            _ => Sense::Ge,
        };
        let slack = r.gen_range(0.0..4.0);
        let rhs = match sense {
            Sense::Le => ax + slack,
            Sense::Ge => ax - slack,
            Sense::Eq => ax,
        };
        m.add_row(format!("r{i}"), &e.plus_const(-rhs), sense, Tag::TravelTime);
    }
    let mut obj = LinExpr::default();
    for &v in &vars {
        obj = obj.term(v, r.gen_range(-3.0..3.0));
    }
    m.add_objective(&obj);
    m
}

/// A random MILP with `bins` binaries and a few continuous variables. The
/// rows are built around a point with integral binaries, so it is feasible.
pub fn random_milp(seed: u64, bins: usize, conts: usize, rows: usize) -> MilpModel {
    let mut r = rng(seed);
    let mut m = MilpModel::new();
    let mut vars = Vec::new();
    let mut x0 = Vec::new();
    for j in 0..bins {
        vars.push(m.add_var(
            format!("b{j}"),
            VarKind::Binary,
            0.0,
            1.0,
            Tag::CellSelector,
        ));
        x0.push(f64::from(r.gen_bool(0.5) as u8));
    }
    for j in 0..conts {
        vars.push(m.add_continuous(format!("x{j}"), 0.0, 5.0, Tag::Control));
        x0.push(r.gen_range(0.0..5.0));
    }
    for i in 0..rows {
        let mut e = LinExpr::default();
        let mut ax = 0.0;
        for (j, &v) in vars.iter().enumerate() {
            if r.gen_bool(0.5) {
                let a: f64 = r.gen_range(-4.0..4.0);
                e = e.term(v, a);
                ax += a * x0[j];
            }
        }
        let (sense, rhs) = if r.gen_bool(0.5) {
            (Sense::Le, ax + r.gen_range(0.0..1.0))
        } else {
            (Sense::Ge, ax - r.gen_range(0.0..1.0))
        };
        m.add_row(format!("r{i}"), &e.plus_const(-rhs), sense, Tag::TravelTime);
    }
    let mut obj = LinExpr::default();
    for &v in &vars {
        obj = obj.term(v, r.gen_range(-5.0..5.0));
    }
    m.add_objective(&obj);
    m
}

/// A random task set around the reference magnitudes.
pub fn random_scenario(seed: u64, n: usize) -> Scenario {
    let mut r = rng(seed);
    let xi: Vec<f64> = (0..n)
        .map(|_| (r.gen_range(0.8..4.0f64) * 100.0).round() / 100.0)
        .collect();
    let d: Vec<f64> = (0..n)
        .map(|_| (r.gen_range(0.6..3.2f64) * 100.0).round() / 100.0)
        .collect();
    Scenario::from_json_str(&format!(
        r#"{{"n": {n}, "xi": {xi:?}, "d": {d:?}, "s_lower": 0.2,
            "v_bounds": [3.0, 5.0], "c_bounds": [0.75, 1.25],
            "t_bounds": [0.0, 2.0], "tc_bounds": [0.0, 1.0], "tw_bounds": [0.0, 6.0],
            "s_bounds": [0.4, 1.0], "lambda": 0.0001}}"#
    ))
    .expect("random scenario is valid")
}

/// Classical RK4 on `dQ/dt = k (1 + Q/Cnom)^(-alpha)` with a fixed step.
pub fn rk4(params: &BatteryParams, k: f64, q0: f64, duration: f64, steps: usize) -> f64 {
    let f = |q: f64| k * (1.0 + q / params.c_nom).powf(-params.alpha);
    let h = duration / steps as f64;
    let mut q = q0;
    for _ in 0..steps {
        let k1 = f(q);
        let k2 = f(q + h / 2.0 * k1);
        let k3 = f(q + h / 2.0 * k2);
        let k4 = f(q + h * k3);
        q += h / 6.0 * (k1 + 2.0 * k2 + 2.0 * k3 + k4);
    }
    q
}

/// Halves the RK4 step until two successive answers agree to `tol` relative.
pub fn rk4_converged(params: &BatteryParams, k: f64, q0: f64, duration: f64, tol: f64) -> f64 {
    let mut steps = 4;
    let mut prev = rk4(params, k, q0, duration, steps);
    loop {
        steps *= 2;
        let next = rk4(params, k, q0, duration, steps);
        if (next - prev).abs() <= tol * next.abs().max(f64::MIN_POSITIVE) || steps > 1 << 20 {
            return next;
        }
        prev = next;
    }
}
