use rayon::prelude::*;
use serde::Serialize;

use super::rows::UncertainRow;
use crate::error::{Error, Result};
use crate::model::{Group, LinExpr, MilpModel, Sense, Tag, VarId};

/// Samples a chance-constrained row may violate: `floor(epsilon * K)`.
pub fn violation_budget(epsilon: f64, k: usize) -> usize {
    (epsilon * k as f64 + 1e-9).floor() as usize
}

/// One sampled row that may be violated on the budget.
#[derive(Debug, Clone, PartialEq)]
pub struct SampleRow {
    /// Index into the uncertain rows handed to [`build_saa_constraints`].
    pub source: usize,
    pub sample: usize,
    pub selector: VarId,
    pub big_m: f64,
    pub row: usize,
}

/// Presolve outcome for one row identity.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct IdentityStats {
    pub identity: String,
    pub group: Group,
    /// Samples whose row reduces to the nominal row.
    pub nominal: usize,
    /// Samples that cannot be violated anywhere in the variable box.
    pub redundant: usize,
    /// Samples implied by a sample that must hold.
    pub implied: usize,
    /// Samples that must hold: violating one would violate at least the
    /// budget of dominating samples as well.
    pub hard: usize,
    /// Samples that may be violated, each with a selector.
    pub soft: usize,
    /// Whether a budget row was needed at all.
    pub budgeted: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SaaBlock {
    pub budget: usize,
    pub rows: Vec<SampleRow>,
    /// Sampled rows enforced without a selector: (source, sample, model row).
    pub hard_rows: Vec<(usize, usize, usize)>,
    /// Budget row index per source with selectors.
    pub budget_rows: Vec<(usize, usize)>,
    pub stats: Vec<IdentityStats>,
}

impl SaaBlock {
    pub fn selectors(&self) -> impl Iterator<Item = VarId> + '_ {
        self.rows.iter().map(|r| r.selector)
    }
}

struct Candidate {
    sample: usize,
    expr: LinExpr,
    max: f64,
}

struct Prepared {
    source: usize,
    stats: IdentityStats,
    hard: Vec<Candidate>,
    soft: Vec<Candidate>,
}

/// Whether sample `k` dominates sample `l`: its row value is at least as
/// large everywhere in the box. Rows equal over the whole box are ordered by
/// sample index so exactly one of them dominates the other.
fn dominates(
    model: &MilpModel,
    row: &UncertainRow,
    dk: &[f64],
    dl: &[f64],
    order: (usize, usize),
) -> bool {
    let mut diff = LinExpr::default();
    for (j, aj) in &row.a {
        let s = dk[*j] - dl[*j];
        if s != 0.0 {
            diff.add_scaled(aj, s);
        }
    }
    let (lo, hi) = diff.normalized().range(model);
    const TIE: f64 = 1e-12;
    if lo >= -TIE && hi <= TIE {
        order.0 < order.1
    } else {
        lo >= -TIE
    }
}

/// Splits the samples of one row identity.
///
/// Dominance is a strict partial order on the live samples. A sample with at
/// least `budget` dominators can never be violated: its dominators would be
/// violated with it. Among those, only the ones not dominated by another
/// such sample need a row; the rest follow. The remaining samples are the
/// only ones that may be violated.
fn prepare(
    model: &MilpModel,
    source: usize,
    row: &UncertainRow,
    samples: &[Vec<f64>],
    budget: usize,
) -> Prepared {
    let group = row.group.expect("only grouped rows are sampled");
    let mut stats = IdentityStats {
        identity: row.identity(),
        group,
        nominal: 0,
        redundant: 0,
        implied: 0,
        hard: 0,
        soft: 0,
        budgeted: false,
    };
    let mut live = Vec::new();
    for (k, delta) in samples.iter().enumerate() {
        if row.ignores(delta) {
            // Identical to the nominal row, which the core model enforces.
            stats.nominal += 1;
            continue;
        }
        let expr = row.instantiate(delta);
        let max = expr.range(model).1;
        if max <= 0.0 {
            stats.redundant += 1;
            continue;
        }
        live.push(Candidate {
            sample: k,
            expr,
            max,
        });
    }

    let n = live.len();
    let mut dom = vec![false; n * n];
    for x in 0..n {
        for y in 0..n {
            if x != y {
                let (sx, sy) = (live[x].sample, live[y].sample);
                dom[y * n + x] = dominates(model, row, &samples[sy], &samples[sx], (sy, sx));
            }
        }
    }
    let dominators = |x: usize| (0..n).filter(|&y| dom[y * n + x]).count();
    let must_hold: Vec<bool> = (0..n).map(|x| dominators(x) >= budget).collect();
    let mut hard = Vec::new();
    let mut soft = Vec::new();
    for (x, c) in live.into_iter().enumerate() {
        if !must_hold[x] {
            soft.push(c);
        } else if (0..n).any(|y| must_hold[y] && dom[y * n + x]) {
            stats.implied += 1;
        } else {
            hard.push(c);
        }
    }
    stats.hard = hard.len();
    stats.soft = soft.len();
    Prepared {
        source,
        stats,
        hard,
        soft,
    }
}

/// Adds the sampled chance rows for every grouped row in `rows` whose group
/// is violable.
///
/// Per training sample `k` the row reads `a(X) . delta_k - b(X) <= M g_k`
/// with a binary selector, and `sum_k g_k <= floor(epsilon K)` per row
/// identity. Presolve removes what the budget already decides: samples
/// equal to the nominal row or never violable are dropped, samples that can
/// never be violated on the budget become plain rows, and selectors are only
/// created when more samples could be violated than the budget allows.
///
/// Each `M` is the largest value the sampled row takes over the variable
/// boxes unless `big_m` overrides it, in which case the override must cover
/// every row.
pub fn build_saa_constraints(
    model: &mut MilpModel,
    rows: &[UncertainRow],
    violable: &[Group],
    samples: &[Vec<f64>],
    epsilon: f64,
    big_m: Option<f64>,
) -> Result<SaaBlock> {
    if samples.is_empty() {
        return Err(Error::Config(
            "chance constraints need at least one sample".into(),
        ));
    }
    if !(epsilon > 0.0 && epsilon < 1.0) {
        return Err(Error::Config(format!(
            "epsilon must lie in (0, 1) (got {epsilon})"
        )));
    }
    let budget = violation_budget(epsilon, samples.len());
    let sources: Vec<usize> = (0..rows.len())
        .filter(|&r| rows[r].group.is_some_and(|g| violable.contains(&g)))
        .collect();
    let frozen: &MilpModel = model;
    let mut prepared: Vec<Prepared> = sources
        .par_iter()
        .map(|&r| prepare(frozen, r, &rows[r], samples, budget))
        .collect();
    // Emission order is fixed by (group, task, kind) and sample index
    // regardless of how the work was scheduled.
    prepared.sort_by(|a, b| {
        let (ra, rb) = (&rows[a.source], &rows[b.source]);
        (ra.group, ra.task, ra.kind).cmp(&(rb.group, rb.task, rb.kind))
    });

    if let Some(m) = big_m {
        let worst = prepared
            .iter()
            .filter(|p| p.soft.len() > budget)
            .flat_map(|p| p.soft.iter().map(|c| c.max))
            .fold(0.0, f64::max);
        if m < worst {
            return Err(Error::Config(format!(
                "SAA big-M {m} does not cover the largest sampled row violation {worst:.6}"
            )));
        }
    }

    let mut block = SaaBlock {
        budget,
        rows: Vec::new(),
        hard_rows: Vec::new(),
        budget_rows: Vec::new(),
        stats: Vec::with_capacity(prepared.len()),
    };
    for mut p in prepared {
        let group = p.stats.group;
        let id = p.stats.identity.clone();
        for c in &p.hard {
            let r = model.add_row(
                format!("saa_{id}_{}", c.sample),
                &c.expr,
                Sense::Le,
                Tag::ChanceRow(group),
            );
            block.hard_rows.push((p.source, c.sample, r));
        }
        // With no more candidates than the budget, all of them may be
        // violated together and nothing needs to be added.
        if p.soft.len() > budget {
            p.stats.budgeted = true;
            let mut total = LinExpr::constant(-(budget as f64));
            for c in &p.soft {
                let m = big_m.unwrap_or(c.max);
                let g = model.add_binary(format!("g_{id}_{}", c.sample), Tag::ChanceSelector);
                let e = c.expr.clone().term(g, -m);
                let r = model.add_row(
                    format!("saa_{id}_{}", c.sample),
                    &e,
                    Sense::Le,
                    Tag::ChanceRow(group),
                );
                block.rows.push(SampleRow {
                    source: p.source,
                    sample: c.sample,
                    selector: g,
                    big_m: m,
                    row: r,
                });
                total = total.term(g, 1.0);
            }
            let r = model.add_row(
                format!("budget_{id}"),
                &total,
                Sense::Le,
                Tag::ChanceBudget(group),
            );
            block.budget_rows.push((p.source, r));
        }
        block.stats.push(p.stats);
    }
    Ok(block)
}

#[cfg(test)]
mod tests {
    use super::*;

    /// One row `delta_0 * x <= 1` with `x in [0, 2]`.
    fn setup() -> (MilpModel, Vec<UncertainRow>, VarId) {
        let mut m = MilpModel::new();
        let x = m.add_continuous("x", 0.0, 2.0, Tag::Control);
        let row = UncertainRow {
            group: Some(Group::SocFloor),
            kind: "floor",
            task: 0,
            cell: 0,
            b: LinExpr::constant(1.0),
            a: vec![(0, LinExpr::var(x))],
        };
        (m, vec![row], x)
    }

    #[test]
    fn budget_from_epsilon() {
        assert_eq!(violation_budget(0.02, 100), 2);
        assert_eq!(violation_budget(0.34, 3), 1);
        assert_eq!(violation_budget(0.1, 10), 1);
    }

    #[test]
    fn zero_samples_add_nothing() {
        let (mut m, rows, _) = setup();
        let before = m.rows.len();
        let b = build_saa_constraints(&mut m, &rows, &Group::ALL, &vec![vec![0.0]; 5], 0.2, None)
            .unwrap();
        assert_eq!(m.rows.len(), before);
        assert_eq!(b.stats[0].nominal, 5);
    }

    #[test]
    fn ordered_samples_reduce_to_a_quantile_row() {
        let (mut m, rows, _) = setup();
        let samples: Vec<Vec<f64>> = (1..=10).map(|k| vec![k as f64]).collect();
        let b = build_saa_constraints(&mut m, &rows, &Group::ALL, &samples, 0.2, None).unwrap();
        // budget 2: the two largest samples may fail, the third must hold
        assert_eq!(b.budget, 2);
        let st = &b.stats[0];
        assert_eq!((st.soft, st.hard, st.implied), (2, 1, 7));
        assert!(b.rows.is_empty());
        assert_eq!(b.hard_rows.len(), 1);
        assert_eq!(b.hard_rows[0].1, 7);
    }

    #[test]
    fn incomparable_samples_get_selectors() {
        // delta_0 * x + delta_1 * (2 - x) <= 1 with x in [0, 2]: samples on
        // the anti-diagonal never dominate each other.
        let mut m = MilpModel::new();
        let x = m.add_continuous("x", 0.0, 2.0, Tag::Control);
        let row = UncertainRow {
            group: Some(Group::Recursion),
            kind: "wait",
            task: 0,
            cell: 0,
            b: LinExpr::constant(1.0),
            a: vec![
                (0, LinExpr::var(x)),
                (1, LinExpr::constant(2.0).term(x, -1.0)),
            ],
        };
        let samples: Vec<Vec<f64>> = (0..5)
            .map(|k| vec![1.0 + k as f64, 5.0 - k as f64])
            .collect();
        let b = build_saa_constraints(&mut m, &[row], &Group::ALL, &samples, 0.2, None).unwrap();
        assert_eq!(b.budget, 1);
        assert_eq!(b.stats[0].soft, 5);
        assert_eq!(b.rows.len(), 5);
        assert_eq!(b.budget_rows.len(), 1);
        // M of sample 0: max over x of x + 5 (2 - x) - 1 = 9
        assert!((b.rows[0].big_m - 9.0).abs() < 1e-12);
    }

    #[test]
    fn negative_samples_are_redundant() {
        let (mut m, rows, _) = setup();
        let samples = vec![vec![-1.0], vec![0.25], vec![0.5]];
        let b = build_saa_constraints(&mut m, &rows, &Group::ALL, &samples, 0.34, None).unwrap();
        assert_eq!(b.stats[0].redundant, 3);
        assert!(b.rows.is_empty());
    }

    #[test]
    fn small_override_is_rejected() {
        let (mut m, rows, x) = setup();
        // incomparable samples, so every one of them needs a selector
        let rows = vec![UncertainRow {
            a: vec![
                (0, LinExpr::var(x)),
                (1, LinExpr::constant(2.0).term(x, -1.0)),
            ],
            ..rows[0].clone()
        }];
        let samples: Vec<Vec<f64>> = (1..=5).map(|k| vec![k as f64, 6.0 - k as f64]).collect();
        let err = build_saa_constraints(&mut m, &rows, &Group::ALL, &samples, 0.2, Some(1.0))
            .unwrap_err();
        assert!(err.to_string().contains("big-M"));
    }

    #[test]
    fn rows_outside_the_violable_set_are_skipped() {
        let (mut m, rows, _) = setup();
        let samples: Vec<Vec<f64>> = (1..=5).map(|k| vec![k as f64]).collect();
        let b =
            build_saa_constraints(&mut m, &rows, &[Group::Recursion], &samples, 0.2, None).unwrap();
        assert!(b.stats.is_empty());
    }
}
