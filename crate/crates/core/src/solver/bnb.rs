use std::cmp::Ordering;
use std::collections::BinaryHeap;
use std::sync::Arc;
use std::time::Instant;

use rayon::prelude::*;

use super::lp::{build_instance, classify, model_bounds, LpInstance, LpOutcome};
use super::{
    relative_gap, solve_lp, BranchRule, SearchOrder, SolveOptions, SolveResult, Status, TracePoint,
    DEFAULT_GAP_TOL,
};
use crate::error::{Error, Result};
use crate::model::{MilpModel, VarKind};

/// Nodes evaluated per round. Fixed so the search does not depend on the
/// worker count.
const BATCH: usize = 8;

/// Open nodes beyond this count are queued without their parent's simplex
/// state and re-solved from scratch, which bounds memory on large trees.
const WARM_OPEN_LIMIT: usize = 256;

/// Open node: the parent relaxation plus one more fixed binary.
struct Node {
    bound: f64,
    depth: usize,
    seq: u64,
    fixings: Vec<(usize, f64)>,
    parent: Option<Arc<microlp::Solution>>,
    /// Branching variable, its fractional value at the parent and the value it
    /// is fixed to here.
    branch: Option<(usize, f64, f64)>,
}

struct Keyed {
    primary: f64,
    depth: usize,
    seq: u64,
    node: Node,
}

impl PartialEq for Keyed {
    fn eq(&self, other: &Self) -> bool {
        self.cmp(other) == Ordering::Equal
    }
}

impl Eq for Keyed {}

impl PartialOrd for Keyed {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for Keyed {
    /// Max-heap order: the node to explore next compares greatest.
    fn cmp(&self, other: &Self) -> Ordering {
        other
            .primary
            .total_cmp(&self.primary)
            .then(self.depth.cmp(&other.depth))
            .then(other.seq.cmp(&self.seq))
    }
}

enum Evaluated {
    Infeasible,
    Unbounded,
    Interrupted,
    Solved {
        objective: f64,
        values: Vec<f64>,
        solution: Arc<microlp::Solution>,
    },
}

struct Search<'a> {
    model: &'a MilpModel,
    options: &'a SolveOptions,
    root: LpInstance,
    binaries: Vec<usize>,
    /// Per variable: (down sum, down count, up sum, up count).
    pseudo: Vec<[f64; 4]>,
}

impl Search<'_> {
    fn cold_solve(&self, fixings: &[(usize, f64)]) -> Result<Evaluated> {
        let mut bounds = model_bounds(self.model);
        for &(j, v) in fixings {
            bounds[j] = (v, v);
        }
        let Some(inst) = build_instance(self.model, &bounds, self.options.feas_tol) else {
            return Ok(Evaluated::Infeasible);
        };
        let outcome = classify(inst.problem.solve(), "node relaxation")?;
        Ok(self.wrap(outcome, &inst))
    }

    fn wrap(&self, outcome: LpOutcome, inst: &LpInstance) -> Evaluated {
        match outcome {
            LpOutcome::Solved(s) => Evaluated::Solved {
                objective: inst.objective(s.objective()),
                values: inst.values(&s),
                solution: Arc::from(s),
            },
            LpOutcome::Infeasible => Evaluated::Infeasible,
            LpOutcome::Unbounded => Evaluated::Unbounded,
            LpOutcome::Interrupted => Evaluated::Interrupted,
        }
    }

    fn evaluate(&self, node: &Node) -> Result<Evaluated> {
        let (Some(parent), Some((var, _, val))) = (&node.parent, node.branch) else {
            return self.cold_solve(&node.fixings);
        };
        let warm = microlp::Solution::clone(parent).fix_var(self.root.vars[var], val);
        match classify(warm, "node relaxation") {
            Ok(outcome) => Ok(self.wrap(outcome, &self.root)),
            Err(e) => {
                log::debug!("warm start failed ({e}); re-solving node from scratch");
                self.cold_solve(&node.fixings)
            }
        }
    }

    fn fractional(&self, values: &[f64]) -> Vec<(usize, f64)> {
        let tol = self.options.int_tol;
        self.binaries
            .iter()
            .filter_map(|&j| {
                let f = values[j] - values[j].floor();
                (f > tol && f < 1.0 - tol).then_some((j, f))
            })
            .collect()
    }

    fn choose(&self, candidates: &[(usize, f64)]) -> (usize, f64) {
        let most_fractional = || {
            let mut best = candidates[0];
            for &(j, f) in &candidates[1..] {
                if f.min(1.0 - f) > best.1.min(1.0 - best.1) {
                    best = (j, f);
                }
            }
            best
        };
        if self.options.branch_rule == BranchRule::MostFractional {
            return most_fractional();
        }
        let (mut down_avg, mut up_avg, mut nd, mut nu) = (0.0, 0.0, 0.0, 0.0);
        for p in &self.pseudo {
            if p[1] > 0.0 {
                down_avg += p[0] / p[1];
                nd += 1.0;
            }
            if p[3] > 0.0 {
                up_avg += p[2] / p[3];
                nu += 1.0;
            }
        }
        if nd == 0.0 && nu == 0.0 {
            return most_fractional();
        }
        let down_avg = if nd > 0.0 { down_avg / nd } else { 1.0 };
        let up_avg = if nu > 0.0 { up_avg / nu } else { 1.0 };
        let score = |j: usize, f: f64| {
            let p = &self.pseudo[j];
            let d = if p[1] > 0.0 { p[0] / p[1] } else { down_avg };
            let u = if p[3] > 0.0 { p[2] / p[3] } else { up_avg };
            (d * f).max(1e-12) * (u * (1.0 - f)).max(1e-12)
        };
        let mut best = candidates[0];
        let mut best_score = score(best.0, best.1);
        for &(j, f) in &candidates[1..] {
            let s = score(j, f);
            if s > best_score {
                best = (j, f);
                best_score = s;
            }
        }
        best
    }

    fn record_pseudo(&mut self, branch: (usize, f64, f64), parent_bound: f64, objective: f64) {
        let (j, f, val) = branch;
        let delta = (objective - parent_bound).max(0.0);
        let p = &mut self.pseudo[j];
        if val < 0.5 {
            p[0] += delta / f.max(1e-9);
            p[1] += 1.0;
        } else {
            p[2] += delta / (1.0 - f).max(1e-9);
            p[3] += 1.0;
        }
    }

    /// Re-solves with every binary fixed to its rounded value so the
    /// incumbent satisfies the rows exactly rather than within the
    /// integrality tolerance.
    fn polish(&self, values: &[f64]) -> Result<Option<(f64, Vec<f64>)>> {
        let fixings: Vec<(usize, f64)> = self
            .binaries
            .iter()
            .map(|&j| (j, values[j].round()))
            .collect();
        match self.cold_solve(&fixings)? {
            Evaluated::Solved { values, .. } => {
                let objective = self.model.objective_value(&values);
                Ok(Some((objective, values)))
            }
            _ => {
                let mut rounded = values.to_vec();
                for &(j, v) in &fixings {
                    rounded[j] = v;
                }
                if self.model.max_violation(&rounded) <= self.options.feas_tol {
                    Ok(Some((self.model.objective_value(&rounded), rounded)))
                } else {
                    Ok(None)
                }
            }
        }
    }
}

fn key(search: SearchOrder, node: Node) -> Keyed {
    let primary = match search {
        SearchOrder::BestBound => node.bound,
        SearchOrder::DepthFirst => -(node.depth as f64),
    };
    Keyed {
        primary,
        depth: node.depth,
        seq: node.seq,
        node,
    }
}

/// Branch-and-bound over the binaries of `model`.
pub fn solve_milp(model: &MilpModel, options: &SolveOptions) -> Result<SolveResult> {
    branch_and_bound(model, options, None)
}

/// Like [`solve_milp`], but first fixes the binaries to their values in
/// `start` and, if the remaining LP is feasible, keeps that solution as the
/// initial incumbent.
pub fn solve_milp_from(
    model: &MilpModel,
    options: &SolveOptions,
    start: &[f64],
) -> Result<SolveResult> {
    if start.len() != model.vars.len() {
        return Err(Error::Config(format!(
            "start assignment has {} values for {} variables",
            start.len(),
            model.vars.len()
        )));
    }
    branch_and_bound(model, options, Some(start))
}

fn branch_and_bound(
    model: &MilpModel,
    options: &SolveOptions,
    initial: Option<&[f64]>,
) -> Result<SolveResult> {
    options.check()?;
    model.validate()?;
    let binaries: Vec<usize> = model
        .vars
        .iter()
        .enumerate()
        .filter(|(_, v)| v.kind == VarKind::Binary)
        .map(|(j, _)| j)
        .collect();
    if binaries.is_empty() {
        return solve_lp(model, options);
    }
    let start = Instant::now();
    let Some(root) = build_instance(model, &model_bounds(model), options.feas_tol) else {
        return Ok(SolveResult::without_solution(
            Status::Infeasible,
            f64::INFINITY,
            0,
            0.0,
        ));
    };
    let pool = if options.threads > 1 {
        Some(
            rayon::ThreadPoolBuilder::new()
                .num_threads(options.threads)
                .build()
                .map_err(|e| Error::Config(format!("cannot start worker threads: {e}")))?,
        )
    } else {
        None
    };
    let mut search = Search {
        model,
        options,
        root,
        binaries,
        pseudo: vec![[0.0; 4]; model.vars.len()],
    };

    let mut heap = BinaryHeap::new();
    let mut seq = 0_u64;
    heap.push(key(
        options.search,
        Node {
            bound: f64::NEG_INFINITY,
            depth: 0,
            seq,
            fixings: Vec::new(),
            parent: None,
            branch: None,
        },
    ));
    let mut incumbent: Option<(f64, Vec<f64>)> = None;
    if let Some(x) = initial {
        incumbent = search.polish(x)?;
        match &incumbent {
            Some((obj, _)) => log::debug!("start assignment accepted with objective {obj:.9e}"),
            None => log::debug!("start assignment has no feasible completion"),
        }
    }
    let mut pruned_bound = f64::INFINITY;
    let mut nodes = 0_usize;
    let mut trace = Vec::new();
    let mut limit: Option<Status> = None;

    let cutoff = |inc: &Option<(f64, Vec<f64>)>| match inc {
        Some((obj, _)) => obj - options.gap_tol * obj.abs().max(1.0),
        None => f64::INFINITY,
    };

    while !heap.is_empty() {
        if let Some(t) = options.time_limit {
            if start.elapsed() >= t {
                limit = Some(Status::TimeLimit);
                break;
            }
        }
        if let Some(n) = options.node_limit {
            if nodes >= n {
                limit = Some(Status::NodeLimit);
                break;
            }
        }
        let cut = cutoff(&incumbent);
        let mut batch = Vec::with_capacity(BATCH);
        while batch.len() < BATCH {
            let Some(k) = heap.pop() else { break };
            if k.node.bound >= cut {
                pruned_bound = pruned_bound.min(k.node.bound);
                continue;
            }
            batch.push(k.node);
        }
        if batch.is_empty() {
            break;
        }
        let evaluated: Vec<Result<Evaluated>> = match &pool {
            Some(p) => p.install(|| batch.par_iter().map(|n| search.evaluate(n)).collect()),
            None => batch.iter().map(|n| search.evaluate(n)).collect(),
        };

        // Bounds of the batch nodes not yet processed, which are neither in
        // the heap nor pruned while the batch is consumed.
        let mut pending: Vec<f64> = batch.iter().map(|n| n.bound).collect();
        for k in (0..pending.len().saturating_sub(1)).rev() {
            pending[k] = pending[k].min(pending[k + 1]);
        }
        pending.push(f64::INFINITY);

        for (idx, (node, outcome)) in batch.into_iter().zip(evaluated).enumerate() {
            nodes += 1;
            let (objective, values, solution) = match outcome? {
                Evaluated::Infeasible => continue,
                Evaluated::Interrupted => {
                    limit = Some(Status::TimeLimit);
                    continue;
                }
                Evaluated::Unbounded => {
                    if node.depth == 0 {
                        return Ok(SolveResult::without_solution(
                            Status::Unbounded,
                            f64::NEG_INFINITY,
                            nodes,
                            start.elapsed().as_secs_f64(),
                        ));
                    }
                    continue;
                }
                Evaluated::Solved {
                    objective,
                    values,
                    solution,
                } => (objective, values, solution),
            };
            if let Some(b) = node.branch {
                search.record_pseudo(b, node.bound, objective);
            }
            let objective = objective.max(node.bound);
            let cut = cutoff(&incumbent);
            if objective >= cut {
                pruned_bound = pruned_bound.min(objective);
                continue;
            }
            let candidates = search.fractional(&values);
            if candidates.is_empty() {
                if let Some((obj, vals)) = search.polish(&values)? {
                    let better = incumbent.as_ref().is_none_or(|(best, _)| obj < *best);
                    if better {
                        log::debug!("node {nodes}: incumbent {obj:.9e}");
                        incumbent = Some((obj, vals));
                        let bound = open_bound(&heap, objective)
                            .min(pending[idx + 1])
                            .min(pruned_bound)
                            .min(obj);
                        trace.push(TracePoint {
                            nodes,
                            bound,
                            incumbent: obj,
                        });
                    }
                }
                // The relaxation optimum is integral, so this subtree is done.
                pruned_bound = pruned_bound.min(objective);
                continue;
            }
            let (var, f) = search.choose(&candidates);
            // The child toward the nearest integer gets the smaller sequence
            // number so it is explored first among equals.
            let order = if f >= 0.5 { [1.0, 0.0] } else { [0.0, 1.0] };
            for val in order {
                seq += 1;
                let mut fixings = node.fixings.clone();
                fixings.push((var, val));
                heap.push(key(
                    options.search,
                    Node {
                        bound: objective,
                        depth: node.depth + 1,
                        seq,
                        fixings,
                        parent: (heap.len() < WARM_OPEN_LIMIT).then(|| Arc::clone(&solution)),
                        branch: Some((var, f, val)),
                    },
                ));
            }
        }
    }

    let wall_time = start.elapsed().as_secs_f64();
    let open = open_bound(&heap, f64::INFINITY);
    let Some((objective, values)) = incumbent else {
        let status = limit.unwrap_or(Status::Infeasible);
        let bound = if status == Status::Infeasible {
            f64::INFINITY
        } else {
            open.min(pruned_bound)
        };
        let mut r = SolveResult::without_solution(status, bound, nodes, wall_time);
        r.trace = trace;
        return Ok(r);
    };
    let bound = open.min(pruned_bound).min(objective);
    let gap = relative_gap(objective, bound);
    let status = match limit {
        Some(s) if !heap.is_empty() => s,
        _ if options.gap_tol > DEFAULT_GAP_TOL && gap > DEFAULT_GAP_TOL => Status::GapLimit,
        _ => Status::Optimal,
    };
    trace.push(TracePoint {
        nodes,
        bound,
        incumbent: objective,
    });
    let violation = model.max_violation(&values);
    if violation > options.feas_tol {
        log::warn!("incumbent violates a row or bound by {violation:.3e}");
    }
    Ok(SolveResult {
        status,
        objective,
        values,
        bound,
        nodes,
        wall_time,
        duals: None,
        trace,
    })
}

fn open_bound(heap: &BinaryHeap<Keyed>, extra: f64) -> f64 {
    heap.iter().map(|k| k.node.bound).fold(extra, f64::min)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{LinExpr, Sense, Tag};

    fn knapsack() -> MilpModel {
        // max 10a + 13b + 7c  s.t. 4a + 6b + 3c <= 9
        let mut m = MilpModel::new();
        let ids: Vec<_> = ["a", "b", "c"]
            .iter()
            .map(|n| m.add_binary(*n, Tag::CellSelector))
            .collect();
        let w = [4.0, 6.0, 3.0];
        let p = [10.0, 13.0, 7.0];
        let mut cap = LinExpr::constant(-9.0);
        let mut obj = LinExpr::default();
        for k in 0..3 {
            cap = cap.term(ids[k], w[k]);
            obj = obj.term(ids[k], -p[k]);
        }
        m.add_row("capacity", &cap, Sense::Le, Tag::CellChoice);
        m.add_objective(&obj);
        m
    }

    #[test]
    fn small_knapsack() {
        for search in [SearchOrder::BestBound, SearchOrder::DepthFirst] {
            for branch_rule in [BranchRule::MostFractional, BranchRule::PseudoCost] {
                let opts = SolveOptions {
                    search,
                    branch_rule,
                    ..SolveOptions::default()
                };
                let r = solve_milp(&knapsack(), &opts).unwrap();
                assert_eq!(r.status, Status::Optimal);
                assert!((r.objective + 20.0).abs() < 1e-9, "{}", r.objective);
                assert_eq!(r.values, vec![0.0, 1.0, 1.0]);
            }
        }
    }

    #[test]
    fn node_limit_reports_status() {
        let opts = SolveOptions {
            node_limit: Some(1),
            ..SolveOptions::default()
        };
        let r = solve_milp(&knapsack(), &opts).unwrap();
        assert_eq!(r.status, Status::NodeLimit);
    }

    #[test]
    fn infeasible_integer_program() {
        let mut m = MilpModel::new();
        let z = m.add_binary("z", Tag::CellSelector);
        m.add_row(
            "half",
            &LinExpr::var(z).scaled(2.0).plus_const(-1.0),
            Sense::Eq,
            Tag::CellChoice,
        );
        let r = solve_milp(&m, &SolveOptions::default()).unwrap();
        assert_eq!(r.status, Status::Infeasible);
    }

    #[test]
    fn threads_do_not_change_the_answer() {
        let one = solve_milp(&knapsack(), &SolveOptions::default()).unwrap();
        let four = solve_milp(
            &knapsack(),
            &SolveOptions {
                threads: 4,
                ..SolveOptions::default()
            },
        )
        .unwrap();
        assert_eq!(one.objective, four.objective);
        assert_eq!(one.values, four.values);
        assert_eq!(one.nodes, four.nodes);
    }
}
