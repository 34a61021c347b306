//! Branch-and-bound over the binary variables of a horizon program.
//!
//! Best-bound node selection, most-fractional branching, lowest-index
//! tie-breaking: deterministic and adequate at the fleet sizes this
//! controller targets.

use std::cmp::Ordering;
use std::collections::BinaryHeap;

use serde::Serialize;

use crate::model::MathProgram;

use super::simplex::{LpSolution, LpStatus, SimplexSolver, WarmBasis};

#[derive(Debug, Clone)]
pub struct BnbConfig {
    pub integrality_tol: f64,
    /// Relative optimality gap at which a node is fathomed.
    pub gap_tol: f64,
    pub max_nodes: usize,
    /// Record a per-node log (id, bound, incumbent, depth).
    pub log_nodes: bool,
}

impl Default for BnbConfig {
    fn default() -> Self {
        Self {
            integrality_tol: 1e-6,
            gap_tol: 1e-6,
            max_nodes: 100_000,
            log_nodes: false,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BnbStatus {
    Optimal,
    /// Node budget exhausted with an incumbent in hand.
    NodeBudget,
    /// No integral solution found: proven infeasible or budget ran out
    /// before one was found.
    InfeasibleOrBudget,
}

#[derive(Debug, Clone, Serialize)]
pub struct NodeLogEntry {
    pub id: usize,
    pub depth: usize,
    pub bound: f64,
    pub incumbent: f64,
}

#[derive(Debug, Clone)]
pub struct BnbOutcome {
    pub status: BnbStatus,
    pub solution: Option<LpSolution>,
    /// Basis of the incumbent, reusable as a warm start on the same rows.
    pub basis: Option<WarmBasis>,
    pub nodes: usize,
    /// Relative gap between the incumbent and the best open bound.
    pub gap: f64,
    pub log: Vec<NodeLogEntry>,
}

struct Node {
    depth: usize,
    bound: f64,
    /// Binary fixings (variable, value) on the path to this node.
    fixes: Vec<(usize, f64)>,
    relaxation: LpSolution,
    basis: Option<WarmBasis>,
}

/// Min-heap key ordered by bound, then insertion id for determinism.
struct HeapKey {
    bound: f64,
    id: usize,
}

impl PartialEq for HeapKey {
    fn eq(&self, other: &Self) -> bool {
        self.cmp(other) == Ordering::Equal
    }
}
impl Eq for HeapKey {}
impl PartialOrd for HeapKey {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}
impl Ord for HeapKey {
    fn cmp(&self, other: &Self) -> Ordering {
        // reversed: BinaryHeap pops the max, we want the smallest bound
        other
            .bound
            .total_cmp(&self.bound)
            .then_with(|| other.id.cmp(&self.id))
    }
}

/// Solves `min objective` over the program with its binaries integral.
pub fn bnb_solve(
    program: &MathProgram,
    objective: &[(usize, f64)],
    cfg: &BnbConfig,
) -> BnbOutcome {
    let solver = SimplexSolver::new(program);
    bnb_solve_prepared(&solver, program, objective, cfg, None)
}

/// As [`bnb_solve`] but reusing an already-converted [`SimplexSolver`] and
/// optionally warm-starting the root relaxation (the lexicographic driver
/// hands each stage the previous stage's optimal basis).
pub fn bnb_solve_prepared(
    solver: &SimplexSolver,
    program: &MathProgram,
    objective: &[(usize, f64)],
    cfg: &BnbConfig,
    root_warm: Option<&WarmBasis>,
) -> BnbOutcome {
    let binaries = program.binary_indices();
    let cost = solver.dense_objective(objective);
    let base_bounds = solver.default_bounds();

    let solve_with = |fixes: &[(usize, f64)], warm: Option<&WarmBasis>| {
        let mut bounds = base_bounds.clone();
        for &(var, val) in fixes {
            bounds.0[var] = val;
            bounds.1[var] = val;
        }
        let (sol, basis) = solver.solve_warm(&cost, &bounds, warm);
        if cfg!(debug_assertions) && sol.status == LpStatus::Optimal {
            debug_assert!(
                program.check_assignment(&sol.values, 1e-5).is_ok(),
                "solver returned an infeasible optimum"
            );
        }
        (sol, basis)
    };

    let fractional = |sol: &LpSolution| -> Option<usize> {
        let mut best: Option<(usize, f64)> = None;
        for &b in &binaries {
            let v = sol.values[b];
            let dist = (v - v.round()).abs();
            if dist > cfg.integrality_tol && best.map_or(true, |(_, d)| dist > d) {
                best = Some((b, dist));
            }
        }
        best.map(|(b, _)| b)
    };

    let mut log = Vec::new();
    let mut nodes = 0usize;
    let mut incumbent: Option<(LpSolution, Option<WarmBasis>)> = None;
    let mut heap: BinaryHeap<HeapKey> = BinaryHeap::new();
    let mut store: Vec<Option<Node>> = Vec::new();

    let (root, root_basis) = solve_with(&[], root_warm);
    nodes += 1;
    match root.status {
        LpStatus::Optimal => {}
        _ => {
            return BnbOutcome {
                status: BnbStatus::InfeasibleOrBudget,
                solution: None,
                basis: None,
                nodes,
                gap: f64::INFINITY,
                log,
            }
        }
    }
    if cfg.log_nodes {
        log.push(NodeLogEntry {
            id: 0,
            depth: 0,
            bound: root.objective,
            incumbent: f64::INFINITY,
        });
    }
    if fractional(&root).is_none() {
        return BnbOutcome {
            status: BnbStatus::Optimal,
            solution: Some(root),
            basis: root_basis,
            nodes,
            gap: 0.0,
            log,
        };
    }
    heap.push(HeapKey {
        bound: root.objective,
        id: 0,
    });
    store.push(Some(Node {
        depth: 0,
        bound: root.objective,
        fixes: Vec::new(),
        relaxation: root,
        basis: root_basis,
    }));

    let cutoff = |inc: &Option<(LpSolution, Option<WarmBasis>)>| -> f64 {
        inc.as_ref().map_or(f64::INFINITY, |(s, _)| {
            s.objective - cfg.gap_tol * s.objective.abs().max(1.0)
        })
    };

    let mut best_open_bound = f64::NEG_INFINITY;
    let mut drained = true;
    while let Some(key) = heap.pop() {
        let node = store[key.id].take().expect("node stored once");
        best_open_bound = node.bound;
        if node.bound >= cutoff(&incumbent) {
            // best-bound order: every open node is at least this weak
            drained = false;
            break;
        }
        if nodes >= cfg.max_nodes {
            return budget_outcome(incumbent, nodes, node.bound, log);
        }

        let branch_var = match fractional(&node.relaxation) {
            Some(v) => v,
            None => unreachable!("integral nodes never enter the heap"),
        };

        for val in [0.0, 1.0] {
            let mut fixes = node.fixes.clone();
            fixes.push((branch_var, val));
            let (child, child_basis) = solve_with(&fixes, node.basis.as_ref());
            nodes += 1;
            if child.status != LpStatus::Optimal {
                continue;
            }
            if cfg.log_nodes {
                log.push(NodeLogEntry {
                    id: store.len(),
                    depth: node.depth + 1,
                    bound: child.objective,
                    incumbent: incumbent
                        .as_ref()
                        .map_or(f64::INFINITY, |(s, _)| s.objective),
                });
            }
            if child.objective >= cutoff(&incumbent) {
                continue;
            }
            if fractional(&child).is_none() {
                if incumbent
                    .as_ref()
                    .map_or(true, |(inc, _)| child.objective < inc.objective)
                {
                    incumbent = Some((child, child_basis));
                }
            } else {
                let id = store.len();
                heap.push(HeapKey {
                    bound: child.objective,
                    id,
                });
                store.push(Some(Node {
                    depth: node.depth + 1,
                    bound: child.objective,
                    fixes,
                    relaxation: child,
                    basis: child_basis,
                }));
            }
            if nodes >= cfg.max_nodes {
                let bound = heap
                    .peek()
                    .map_or(best_open_bound, |k| k.bound.min(best_open_bound));
                return budget_outcome(incumbent, nodes, bound, log);
            }
        }
    }

    match incumbent {
        Some((sol, basis)) => {
            let gap = if drained {
                0.0
            } else {
                ((sol.objective - best_open_bound) / sol.objective.abs().max(1.0)).max(0.0)
            };
            BnbOutcome {
                status: BnbStatus::Optimal,
                solution: Some(sol),
                basis,
                nodes,
                gap,
                log,
            }
        }
        None => BnbOutcome {
            status: BnbStatus::InfeasibleOrBudget,
            solution: None,
            basis: None,
            nodes,
            gap: f64::INFINITY,
            log,
        },
    }
}

fn budget_outcome(
    incumbent: Option<(LpSolution, Option<WarmBasis>)>,
    nodes: usize,
    best_bound: f64,
    log: Vec<NodeLogEntry>,
) -> BnbOutcome {
    match incumbent {
        Some((sol, basis)) => {
            let gap = ((sol.objective - best_bound) / sol.objective.abs().max(1.0)).max(0.0);
            BnbOutcome {
                status: BnbStatus::NodeBudget,
                solution: Some(sol),
                basis,
                nodes,
                gap,
                log,
            }
        }
        None => BnbOutcome {
            status: BnbStatus::InfeasibleOrBudget,
            solution: None,
            basis: None,
            nodes,
            gap: f64::INFINITY,
            log,
        },
    }
}

/// Exhaustive oracle: enumerates every 0/1 pattern of the binaries, solves
/// the LP with them fixed, and returns the best objective. Test scaffolding
/// for small instances; independent of the branch-and-bound path.
pub fn enumerate_binaries(program: &MathProgram, objective: &[(usize, f64)]) -> Option<f64> {
    let binaries = program.binary_indices();
    assert!(binaries.len() <= 20, "enumeration oracle is for toy sizes");
    let solver = SimplexSolver::new(program);
    let cost = solver.dense_objective(objective);
    let base = solver.default_bounds();
    let mut best: Option<f64> = None;
    for pattern in 0u32..(1 << binaries.len()) {
        let mut bounds = base.clone();
        for (k, &b) in binaries.iter().enumerate() {
            let v = ((pattern >> k) & 1) as f64;
            if v < bounds.0[b] - 1e-12 || v > bounds.1[b] + 1e-12 {
                continue;
            }
            bounds.0[b] = v;
            bounds.1[b] = v;
        }
        let sol = solver.solve(&cost, &bounds);
        if sol.status == LpStatus::Optimal && best.map_or(true, |b| sol.objective < b) {
            best = Some(sol.objective);
        }
    }
    best
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{RowSense, VarKind};

    #[test]
    fn cover_constraint_tie_breaks_to_first_variable() {
        let mut p = MathProgram::default();
        let x1 = p.add_var("x1", 0.0, 1.0, VarKind::Binary);
        let x2 = p.add_var("x2", 0.0, 1.0, VarKind::Binary);
        p.add_row("cover", vec![(x1, 1.0), (x2, 1.0)], RowSense::Ge, 1.0);
        let out = bnb_solve(&p, &[(x1, 1.0), (x2, 1.0)], &BnbConfig::default());
        let sol = out.solution.unwrap();
        assert_eq!(out.status, BnbStatus::Optimal);
        assert!((sol.objective - 1.0).abs() < 1e-9);
        assert!((sol.values[x1] - 1.0).abs() < 1e-6, "tie should pick x1");
    }

    #[test]
    fn knapsack_with_fractional_relaxation() {
        // max 5a + 6b + 3c  s.t. 4a + 5b + 3c ≤ 8  (min of negated)
        let mut p = MathProgram::default();
        let a = p.add_var("a", 0.0, 1.0, VarKind::Binary);
        let b = p.add_var("b", 0.0, 1.0, VarKind::Binary);
        let c = p.add_var("c", 0.0, 1.0, VarKind::Binary);
        p.add_row(
            "w",
            vec![(a, 4.0), (b, 5.0), (c, 3.0)],
            RowSense::Le,
            8.0,
        );
        let obj = [(a, -5.0), (b, -6.0), (c, -3.0)];
        let relax = super::super::simplex::lp_solve(&p, &obj);
        let out = bnb_solve(&p, &obj, &BnbConfig::default());
        let sol = out.solution.unwrap();
        // hand enumeration: best integral is b+c = 9; relaxation is better
        assert!((sol.objective - (-9.0)).abs() < 1e-9);
        assert!(relax.objective < sol.objective - 1e-9);
        assert_eq!(out.status, BnbStatus::Optimal);
    }

    #[test]
    fn matches_enumeration_on_random_toys() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(7);
        for case in 0..40 {
            let mut p = MathProgram::default();
            let nb = rng.gen_range(1..=6);
            let nc = rng.gen_range(0..=3);
            let mut vars = Vec::new();
            for i in 0..nb {
                vars.push(p.add_var(format!("b{i}"), 0.0, 1.0, VarKind::Binary));
            }
            for i in 0..nc {
                vars.push(p.add_var(format!("x{i}"), 0.0, 5.0, VarKind::Continuous));
            }
            let nrows = rng.gen_range(1..=4);
            for r in 0..nrows {
                let mut terms: Vec<(usize, f64)> = Vec::new();
                for &v in &vars {
                    if rng.gen_bool(0.7) {
                        terms.push((v, rng.gen_range(-3.0..3.0)));
                    }
                }
                if terms.is_empty() {
                    continue;
                }
                let sense = match rng.gen_range(0..3) {
                    0 => RowSense::Le,
                    1 => RowSense::Ge,
                    _ => RowSense::Eq,
                };
                p.add_row(format!("r{r}"), terms, sense, rng.gen_range(-2.0..4.0));
            }
            let obj: Vec<(usize, f64)> = vars
                .iter()
                .map(|&v| (v, rng.gen_range(-2.0..2.0)))
                .collect();
            let oracle = enumerate_binaries(&p, &obj);
            let out = bnb_solve(&p, &obj, &BnbConfig::default());
            match (oracle, out.solution) {
                (None, None) => {}
                (Some(best), Some(sol)) => {
                    let scale = best.abs().max(1.0);
                    assert!(
                        (sol.objective - best).abs() <= 1e-6 * scale,
                        "case {case}: bnb {} vs oracle {best}",
                        sol.objective
                    );
                }
                (oracle, got) => panic!(
                    "case {case}: oracle {oracle:?} vs bnb {:?}",
                    got.map(|s| s.objective)
                ),
            }
        }
    }

    #[test]
    fn node_budget_reports_best_incumbent() {
        let mut p = MathProgram::default();
        let mut obj = Vec::new();
        let mut cover = Vec::new();
        for i in 0..10 {
            let b = p.add_var(format!("b{i}"), 0.0, 1.0, VarKind::Binary);
            obj.push((b, 1.0 + i as f64 * 0.1));
            cover.push((b, 1.0));
        }
        p.add_row("need", cover, RowSense::Ge, 4.5);
        let cfg = BnbConfig {
            max_nodes: 3,
            ..Default::default()
        };
        let out = bnb_solve(&p, &obj, &cfg);
        assert!(matches!(
            out.status,
            BnbStatus::NodeBudget | BnbStatus::InfeasibleOrBudget
        ));
    }

    #[test]
    fn deterministic_replays() {
        let mut p = MathProgram::default();
        let mut obj = Vec::new();
        for i in 0..6 {
            let b = p.add_var(format!("b{i}"), 0.0, 1.0, VarKind::Binary);
            obj.push((b, ((i * 13 + 5) % 7) as f64 - 3.0));
        }
        let terms: Vec<(usize, f64)> = (0..6).map(|i| (i, 1.0)).collect();
        p.add_row("balance", terms, RowSense::Ge, 2.0);
        let a = bnb_solve(&p, &obj, &BnbConfig::default());
        let b = bnb_solve(&p, &obj, &BnbConfig::default());
        assert_eq!(a.nodes, b.nodes);
        assert_eq!(
            a.solution.as_ref().unwrap().values,
            b.solution.as_ref().unwrap().values
        );
    }
}
