use super::{LinExpr, MilpModel, Sense, Tag, VarId};
use crate::error::{Error, Result};
use crate::scenario::{Bounds, Scenario};

/// Partition sizes and big-M policy for the piecewise envelope.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct McCormickConfig {
    /// Partitions of the target-SOC axis.
    pub ns: usize,
    /// Partitions of the idle-time axis.
    pub nt: usize,
    /// Scalar relaxation constant. `None` selects the smallest sound value
    /// per row, padded by 10%.
    pub big_m: Option<f64>,
}

impl Default for McCormickConfig {
    fn default() -> Self {
        McCormickConfig {
            ns: 4,
            nt: 4,
            big_m: None,
        }
    }
}

/// Padding applied to automatically derived big-M values.
const BIG_M_PAD: f64 = 1.1;

/// One rectangle of the `(S̄, t_w)` partition.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CellBounds {
    pub s_lo: f64,
    pub s_hi: f64,
    pub t_lo: f64,
    pub t_hi: f64,
}

impl CellBounds {
    /// Largest gap between the cell's envelope and the true product,
    /// attained at the cell centre.
    pub fn max_gap(&self) -> f64 {
        (self.s_hi - self.s_lo) * (self.t_hi - self.t_lo) / 4.0
    }

    pub fn contains(&self, s: f64, t: f64, tol: f64) -> bool {
        self.s_lo - tol <= s && s <= self.s_hi + tol && self.t_lo - tol <= t && t <= self.t_hi + tol
    }

    /// Tightest lower bound the envelope places on `s * t` inside the cell.
    pub fn lower(&self, s: f64, t: f64) -> f64 {
        let a = self.s_lo * t + self.t_lo * s - self.s_lo * self.t_lo;
        let b = self.s_hi * t + self.t_hi * s - self.s_hi * self.t_hi;
        a.max(b)
    }

    /// Tightest upper bound the envelope places on `s * t` inside the cell.
    pub fn upper(&self, s: f64, t: f64) -> f64 {
        let a = self.s_hi * t + self.t_lo * s - self.s_hi * self.t_lo;
        let b = self.s_lo * t + self.t_hi * s - self.s_lo * self.t_hi;
        a.min(b)
    }
}

/// Uniform tiling of `s_box x t_box`; cell `j * nt + k` covers SOC slice `j`
/// and time slice `k`.
pub fn cell_grid(s_box: Bounds, t_box: Bounds, ns: usize, nt: usize) -> Vec<CellBounds> {
    let s_at = |j: usize| s_box.lo + s_box.width() * j as f64 / ns as f64;
    let t_at = |k: usize| t_box.lo + t_box.width() * k as f64 / nt as f64;
    let mut cells = Vec::with_capacity(ns * nt);
    for j in 0..ns {
        for k in 0..nt {
            cells.push(CellBounds {
                s_lo: s_at(j),
                s_hi: if j + 1 == ns { s_box.hi } else { s_at(j + 1) },
                t_lo: t_at(k),
                t_hi: if k + 1 == nt { t_box.hi } else { t_at(k + 1) },
            });
        }
    }
    cells
}

/// One envelope inequality `w (>= | <=) a * tw + b * S̄ - a * b`, relaxed by
/// `m (1 - z)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EnvelopeRow {
    pub task: usize,
    pub cell: usize,
    /// Coefficient on idle time.
    pub a: f64,
    /// Coefficient on the target SOC.
    pub b: f64,
    /// `true` for an underestimator (`w >= ...`).
    pub lower: bool,
    pub m: f64,
    /// Index into [`MilpModel::rows`].
    pub row: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct McCormickBlock {
    pub ns: usize,
    pub nt: usize,
    pub cells: Vec<CellBounds>,
    /// Largest relaxation constant used on any row.
    pub big_m: f64,
    /// Product variable per task.
    pub w: Vec<VarId>,
    /// Cell selectors per task.
    pub z: Vec<Vec<VarId>>,
    pub envelope: Vec<EnvelopeRow>,
}

fn corner_max(s_box: Bounds, t_box: Bounds, f: impl Fn(f64, f64) -> f64) -> f64 {
    [
        f(s_box.lo, t_box.lo),
        f(s_box.lo, t_box.hi),
        f(s_box.hi, t_box.lo),
        f(s_box.hi, t_box.hi),
    ]
    .into_iter()
    .fold(f64::NEG_INFINITY, f64::max)
}

/// Smallest constant that deactivates an envelope row for any point that
/// another cell's envelope admits.
fn envelope_m(s_box: Bounds, t_box: Bounds, a: f64, b: f64, lower: bool, gap: f64) -> f64 {
    let sign = if lower { -1.0 } else { 1.0 };
    let worst = corner_max(s_box, t_box, |s, t| sign * (s - a) * (t - b));
    (worst.max(0.0) + gap).max(0.0)
}

/// Adds the single-cell envelope of `S̄ * tw_i` over `s_box x t_box` for
/// every task, without selectors. The rows are implied by the piecewise
/// block at integral selectors whenever `s_box` contains every feasible `S̄`,
/// and they keep the continuous relaxation from discarding the product.
/// Rows are named `{label}_{task}_{corner}`.
pub fn add_whole_box_envelope(
    model: &mut MilpModel,
    label: &str,
    s_bar: VarId,
    tw: &[VarId],
    w: &[VarId],
    s_box: Bounds,
    t_box: Bounds,
) -> Vec<usize> {
    let corners = [
        (s_box.lo, t_box.lo, true),
        (s_box.hi, t_box.hi, true),
        (s_box.hi, t_box.lo, false),
        (s_box.lo, t_box.hi, false),
    ];
    let mut rows = Vec::with_capacity(4 * tw.len());
    for (i, (&tw_i, &w_i)) in tw.iter().zip(w).enumerate() {
        for (r, &(a, b, lower)) in corners.iter().enumerate() {
            let e = LinExpr::var(w_i)
                .term(tw_i, -a)
                .term(s_bar, -b)
                .plus_const(a * b);
            let sense = if lower { Sense::Ge } else { Sense::Le };
            rows.push(model.add_row(format!("{label}_{i}_{r}"), &e, sense, Tag::Envelope));
        }
    }
    rows
}

/// Adds the product variables `w`, the cell selectors `z` and all envelope,
/// linking and selection rows for the tasks whose idle times are `tw`.
pub fn build_mccormick(
    model: &mut MilpModel,
    scenario: &Scenario,
    s_bar: VarId,
    tw: &[VarId],
    config: &McCormickConfig,
) -> Result<McCormickBlock> {
    let McCormickConfig { ns, nt, big_m } = *config;
    if ns < 1 || nt < 1 {
        return Err(Error::Config(format!(
            "partition counts must be >= 1 (got ns = {ns}, nt = {nt})"
        )));
    }
    if let Some(m) = big_m {
        if !(m > 0.0 && m.is_finite()) {
            return Err(Error::Config(format!("big-M must be positive (got {m})")));
        }
    }
    let s_box = scenario.s_bounds;
    let t_box = scenario.tw_bounds;
    let cells = cell_grid(s_box, t_box, ns, nt);
    let gap = cells[0].max_gap();

    // Every row's smallest sound constant; a scalar override must cover all.
    let required = |a: f64, b: f64, lower: bool| envelope_m(s_box, t_box, a, b, lower, gap);
    if let Some(m) = big_m {
        let worst = cells
            .iter()
            .flat_map(|c| {
                [
                    required(c.s_lo, c.t_lo, true),
                    required(c.s_hi, c.t_hi, true),
                    required(c.s_hi, c.t_lo, false),
                    required(c.s_lo, c.t_hi, false),
                    c.s_lo - s_box.lo,
                    s_box.hi - c.s_hi,
                    c.t_lo - t_box.lo,
                    t_box.hi - c.t_hi,
                ]
            })
            .fold(0.0, f64::max);
        if m < worst {
            return Err(Error::Config(format!(
                "big-M {m} is smaller than the largest envelope violation {worst:.6} over the box"
            )));
        }
    }
    let pick = |needed: f64| big_m.unwrap_or(needed * BIG_M_PAD);

    let mut block = McCormickBlock {
        ns,
        nt,
        cells: cells.clone(),
        big_m: 0.0,
        w: Vec::with_capacity(tw.len()),
        z: Vec::with_capacity(tw.len()),
        envelope: Vec::new(),
    };
    for (i, &tw_i) in tw.iter().enumerate() {
        let t_hi = model.vars[tw_i.0].upper;
        let w = model.add_continuous(
            format!("w_{i}"),
            s_box.lo * t_box.lo,
            s_box.hi * t_hi,
            Tag::Product,
        );
        let z: Vec<VarId> = (0..cells.len())
            .map(|l| model.add_binary(format!("z_{i}_{l}"), Tag::CellSelector))
            .collect();

        for (l, cell) in cells.iter().enumerate() {
            let rows = [
                (cell.s_lo, cell.t_lo, true),
                (cell.s_hi, cell.t_hi, true),
                (cell.s_hi, cell.t_lo, false),
                (cell.s_lo, cell.t_hi, false),
            ];
            for (r, &(a, b, lower)) in rows.iter().enumerate() {
                let m = pick(required(a, b, lower));
                block.big_m = block.big_m.max(m);
                // w - a tw - b S + a b  (>= -m(1-z) | <= m(1-z))
                let sign = if lower { 1.0 } else { -1.0 };
                let e = LinExpr::var(w)
                    .term(tw_i, -a)
                    .term(s_bar, -b)
                    .term(z[l], -sign * m)
                    .plus_const(a * b + sign * m);
                let sense = if lower { Sense::Ge } else { Sense::Le };
                let row = model.add_row(format!("env_{i}_{l}_{r}"), &e, sense, Tag::Envelope);
                block.envelope.push(EnvelopeRow {
                    task: i,
                    cell: l,
                    a,
                    b,
                    lower,
                    m,
                    row,
                });
            }

            // Membership of (S̄, tw) in the selected cell. Rows whose
            // constant would be zero restate a variable bound and are skipped.
            let links = [
                (s_bar, cell.s_lo - s_box.lo, cell.s_lo, Sense::Ge, "s_lo"),
                (s_bar, s_box.hi - cell.s_hi, cell.s_hi, Sense::Le, "s_hi"),
                (tw_i, cell.t_lo - t_box.lo, cell.t_lo, Sense::Ge, "t_lo"),
                (tw_i, t_box.hi - cell.t_hi, cell.t_hi, Sense::Le, "t_hi"),
            ];
            for (x, needed, edge, sense, label) in links {
                if needed <= 0.0 {
                    continue;
                }
                let m = pick(needed);
                block.big_m = block.big_m.max(m);
                // x - edge (>= -m(1-z) | <= m(1-z))
                let sign = if sense == Sense::Ge { 1.0 } else { -1.0 };
                let e = LinExpr::var(x)
                    .term(z[l], -sign * m)
                    .plus_const(-edge + sign * m);
                model.add_row(format!("link_{i}_{l}_{label}"), &e, sense, Tag::CellLinking);
            }
        }

        let mut choice = LinExpr::constant(-1.0);
        for &zl in &z {
            choice = choice.term(zl, 1.0);
        }
        model.add_row(
            format!("cell_choice_{i}"),
            &choice,
            Sense::Eq,
            Tag::CellChoice,
        );
        block.w.push(w);
        block.z.push(z);
    }
    Ok(block)
}
