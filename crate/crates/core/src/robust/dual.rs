use super::rows::UncertainRow;
use crate::error::{Error, Result};
use crate::model::{LinExpr, MilpModel, Sense, Tag, VarId};
use crate::scenario::{Bounds, Polytope};
use crate::solver::support_value;

/// The support polytope split into independent blocks of components.
#[derive(Debug, Clone, PartialEq)]
pub struct PolytopeInfo {
    pub polytope: Polytope,
    /// Range of every component over the polytope.
    pub ranges: Vec<Bounds>,
    /// Block id per component; components in different blocks share no row.
    pub block_of: Vec<usize>,
    /// Polytope rows per block.
    pub block_rows: Vec<Vec<usize>>,
    box_form: Option<Vec<Bounds>>,
}

impl PolytopeInfo {
    /// Checks that the polytope is nonempty and bounded and records its
    /// block structure.
    pub fn analyse(polytope: &Polytope) -> Result<Self> {
        let dim = polytope.dim();
        let box_form = polytope.as_box();
        let ranges = match &box_form {
            Some(b) => {
                if b.iter().any(|r| r.lo > r.hi) {
                    return Err(Error::Config("uncertainty polytope is empty".into()));
                }
                b.clone()
            }
            None => (0..dim)
                .map(|j| {
                    let mut e = vec![0.0; dim];
                    e[j] = 1.0;
                    let hi = support_value(&polytope.u, &polytope.t, &e)?;
                    e[j] = -1.0;
                    let lo = -support_value(&polytope.u, &polytope.t, &e)?;
                    Ok(Bounds::new(lo, hi))
                })
                .collect::<Result<Vec<_>>>()?,
        };

        // Union-find over components that share a polytope row.
        let mut parent: Vec<usize> = (0..dim).collect();
        fn find(p: &mut [usize], x: usize) -> usize {
            let mut r = x;
            while p[r] != r {
                r = p[r];
            }
            let mut y = x;
            while p[y] != r {
                let next = p[y];
                p[y] = r;
                y = next;
            }
            r
        }
        for row in &polytope.u {
            let nz: Vec<usize> = (0..dim).filter(|&j| row[j] != 0.0).collect();
            for w in nz.windows(2) {
                let (a, b) = (find(&mut parent, w[0]), find(&mut parent, w[1]));
                if a != b {
                    parent[a.max(b)] = a.min(b);
                }
            }
        }
        let mut block_of = vec![0; dim];
        let mut ids: Vec<usize> = Vec::new();
        for (j, block) in block_of.iter_mut().enumerate() {
            let root = find(&mut parent, j);
            *block = match ids.iter().position(|&r| r == root) {
                Some(b) => b,
                None => {
                    ids.push(root);
                    ids.len() - 1
                }
            };
        }
        let mut block_rows = vec![Vec::new(); ids.len()];
        for (q, row) in polytope.u.iter().enumerate() {
            if let Some(j) = (0..dim).find(|&j| row[j] != 0.0) {
                block_rows[block_of[j]].push(q);
            }
        }
        Ok(PolytopeInfo {
            polytope: polytope.clone(),
            ranges,
            block_of,
            block_rows,
            box_form,
        })
    }

    /// `max a . delta` over the polytope.
    pub fn support(&self, a: &[(usize, f64)]) -> Result<f64> {
        if let Some(b) = &self.box_form {
            return Ok(a.iter().map(|&(j, x)| (x * b[j].lo).max(x * b[j].hi)).sum());
        }
        let mut dense = vec![0.0; self.polytope.dim()];
        for &(j, x) in a {
            dense[j] += x;
        }
        support_value(&self.polytope.u, &self.polytope.t, &dense)
    }
}

/// Multipliers certifying one row for the whole polytope.
#[derive(Debug, Clone, PartialEq)]
pub struct DualRow {
    pub source: usize,
    /// Polytope row and its multiplier.
    pub multipliers: Vec<(usize, VarId)>,
    /// Index of `t . lambda <= b(X)` in the model.
    pub row: usize,
}

/// Dual certificates of the rows enforced for every point of the polytope.
/// Envelope underestimators and overestimators keep separate families.
#[derive(Debug, Clone, PartialEq)]
pub struct DualBlock {
    pub u_matrix: Vec<Vec<f64>>,
    pub t_vec: Vec<f64>,
    /// Underestimator envelope rows.
    pub d1: Vec<DualRow>,
    /// Overestimator envelope rows.
    pub d2: Vec<DualRow>,
    /// Other rows with decision-dependent coefficients.
    pub other: Vec<DualRow>,
    /// Rows whose coefficients are constants, tightened by the support
    /// value instead: (source, model row).
    pub tightened: Vec<(usize, usize)>,
}

impl DualBlock {
    pub fn all(&self) -> impl Iterator<Item = &DualRow> {
        self.d1.iter().chain(&self.d2).chain(&self.other)
    }
}

/// Replaces each selected row `a(X) . delta <= b(X) for all U delta <= t`
/// by finite conditions.
///
/// * Constant `a`: `b(X) >= max a . delta`, computed analytically for a box
///   and by an LP otherwise.
/// * Decision-dependent `a`: multipliers `lambda >= 0` with
///   `U^T lambda = a(X)` and `t . lambda <= b(X)`, restricted to the blocks
///   of the polytope that `a` touches.
///
/// Envelope rows without uncertain terms are already in the model and are
/// skipped; other rows without uncertain terms are added as they stand.
pub fn dualize_hard_constraints(
    model: &mut MilpModel,
    rows: &[UncertainRow],
    selected: &[usize],
    info: &PolytopeInfo,
) -> Result<DualBlock> {
    let p = &info.polytope;
    let mut block = DualBlock {
        u_matrix: p.u.clone(),
        t_vec: p.t.clone(),
        d1: Vec::new(),
        d2: Vec::new(),
        other: Vec::new(),
        tightened: Vec::new(),
    };
    for &s in selected {
        let row = &rows[s];
        let id = row.identity();
        let envelope = row.group.is_none();
        if row.a.is_empty() {
            if !envelope {
                let r = model.add_row(format!("robust_{id}"), &row.b, Sense::Ge, Tag::RobustRow);
                block.tightened.push((s, r));
            }
            continue;
        }
        if let Some(a) = row.fixed_coefficients() {
            let h = info.support(&a)?;
            let r = model.add_row(
                format!("robust_{id}"),
                &row.b.clone().plus_const(-h),
                Sense::Ge,
                Tag::RobustRow,
            );
            block.tightened.push((s, r));
            continue;
        }

        let mut blocks: Vec<usize> = row.a.iter().map(|(j, _)| info.block_of[*j]).collect();
        blocks.sort_unstable();
        blocks.dedup();
        let mut multipliers = Vec::new();
        let mut bound = LinExpr::default();
        for &b in &blocks {
            for &q in &info.block_rows[b] {
                let lam = model.add_continuous(
                    format!("lambda_{id}_{q}"),
                    0.0,
                    f64::INFINITY,
                    Tag::DualMultiplier,
                );
                multipliers.push((q, lam));
                bound = bound.term(lam, p.t[q]);
            }
        }
        for j in (0..p.dim()).filter(|j| blocks.contains(&info.block_of[*j])) {
            // sum_q U_qj lambda_q - a_j(X) = 0
            let mut e = LinExpr::default();
            for &(q, lam) in &multipliers {
                if p.u[q][j] != 0.0 {
                    e = e.term(lam, p.u[q][j]);
                }
            }
            if let Some((_, aj)) = row.a.iter().find(|(k, _)| *k == j) {
                e.add_scaled(aj, -1.0);
            }
            model.add_row(
                format!("balance_{id}_{j}"),
                &e.normalized(),
                Sense::Eq,
                Tag::DualBalance,
            );
        }
        let mut e = row.b.clone();
        e.add_scaled(&bound, -1.0);
        let r = model.add_row(format!("robust_{id}"), &e, Sense::Ge, Tag::RobustRow);
        let dual = DualRow {
            source: s,
            multipliers,
            row: r,
        };
        if !envelope {
            block.other.push(dual);
        } else if is_lower(model, row) {
            block.d1.push(dual);
        } else {
            block.d2.push(dual);
        }
    }
    Ok(block)
}

/// Underestimator envelope rows carry `+w` in their right-hand side.
fn is_lower(model: &MilpModel, row: &UncertainRow) -> bool {
    row.b
        .terms
        .iter()
        .any(|&(v, a)| model.vars[v.0].tag == Tag::Product && a > 0.0)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::Group;
    use crate::solver::{solve_lp, SolveOptions};

    fn unit_box(r: f64, dim: usize) -> PolytopeInfo {
        PolytopeInfo::analyse(&Polytope::from_box(&vec![Bounds::new(-r, r); dim])).unwrap()
    }

    #[test]
    fn box_support_is_the_scaled_l1_norm() {
        let info = unit_box(0.5, 3);
        let a = [(0, 2.0), (1, -1.0), (2, 0.5)];
        assert!((info.support(&a).unwrap() - 0.5 * 3.5).abs() < 1e-12);
        // same through the LP
        let p = &info.polytope;
        let lp = support_value(&p.u, &p.t, &[2.0, -1.0, 0.5]).unwrap();
        assert!((lp - 1.75).abs() < 1e-9);
    }

    #[test]
    fn singleton_polytope_reduces_to_the_nominal_row() {
        let info = PolytopeInfo::analyse(&Polytope::from_box(&[Bounds::new(0.0, 0.0)])).unwrap();
        assert_eq!(info.support(&[(0, 123.0)]).unwrap(), 0.0);
    }

    #[test]
    fn unbounded_polytope_is_rejected() {
        let p = Polytope {
            u: vec![vec![1.0, 0.0], vec![0.0, 1.0], vec![0.0, -1.0]],
            t: vec![1.0, 1.0, 1.0],
        };
        let err = PolytopeInfo::analyse(&p).unwrap_err();
        assert!(err.to_string().contains("unbounded"));
    }

    #[test]
    fn coupled_rows_form_one_block() {
        let p = Polytope {
            u: vec![
                vec![1.0, 1.0, 0.0],
                vec![-1.0, 0.0, 0.0],
                vec![0.0, -1.0, 0.0],
                vec![0.0, 0.0, 1.0],
                vec![0.0, 0.0, -1.0],
            ],
            t: vec![1.0, 0.0, 0.0, 2.0, 2.0],
        };
        let info = PolytopeInfo::analyse(&p).unwrap();
        assert_eq!(info.block_of, vec![0, 0, 1]);
        assert_eq!(info.ranges[0], Bounds::new(0.0, 1.0));
    }

    /// `x * delta_0 <= 1 - y` for all `|delta_0| <= 2`, minimizing `-y`:
    /// the dual forces `2 |x| <= 1 - y`.
    #[test]
    fn decision_dependent_row_matches_its_worst_case() {
        let mut m = MilpModel::new();
        let x = m.add_continuous("x", 0.25, 1.0, Tag::Control);
        let y = m.add_continuous("y", -10.0, 10.0, Tag::Control);
        m.add_objective(&LinExpr::var(y).scaled(-1.0).term(x, 0.0));
        let row = UncertainRow {
            group: Some(Group::SocFloor),
            kind: "floor",
            task: 0,
            cell: 0,
            b: LinExpr::constant(1.0).term(y, -1.0),
            a: vec![(0, LinExpr::var(x))],
        };
        let info = unit_box(2.0, 1);
        let block = dualize_hard_constraints(&mut m, &[row], &[0], &info).unwrap();
        assert_eq!(block.other.len(), 1);
        let r = solve_lp(&m, &SolveOptions::default()).unwrap();
        // best: x = 0.25, y = 1 - 2 * 0.25
        assert!((r.values[1] - 0.5).abs() < 1e-9, "{:?}", r.values);
    }
}
