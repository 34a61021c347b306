//! Bounded-variable primal and dual simplex with a dense basis inverse.
//!
//! Cold solves use the two-phase primal method: every row gets a slack
//! (whose bounds encode the row sense) and an artificial column; phase 1
//! drives the artificials to zero, phase 2 optimizes the true objective.
//! Warm solves restart from a caller-provided basis: a primal-feasible
//! start (lexicographic stage hand-off) goes straight to primal phase 2,
//! while a dual-feasible start with primal violations (branch-and-bound
//! bound fixings) is repaired by the dual simplex. Nonbasic variables sit
//! at a bound, the primal ratio test handles bound flips, and the basis
//! inverse is maintained by product-form updates with periodic
//! refactorization. A stall detector switches pricing to Bland's rule to
//! escape degenerate cycling; any numerically suspect outcome is replayed
//! cold under Bland's rule from the start.

use crate::model::{MathProgram, RowSense};

const DUAL_TOL: f64 = 1e-9;
/// Smallest |rate| at which a basic variable participates in the ratio
/// test. Slack and artificial bounds are kept tight (row-derived) so the
/// worst bound overrun is rate_tol × max_step, well under feasibility
/// tolerance.
const RATE_TOL: f64 = 1e-11;
/// Minimum pivot magnitude admitted by the dual ratio test.
const DUAL_PIVOT_TOL: f64 = 1e-9;
const FEAS_TOL: f64 = 1e-7;
const UNBOUNDED_STEP: f64 = 1e30;
const REFACTOR_EVERY: usize = 128;
const STALL_LIMIT: usize = 256;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LpStatus {
    Optimal,
    Infeasible,
    Unbounded,
    /// The iteration guard tripped before optimality was proven.
    IterationLimit,
}

/// Solution of one LP (relaxation): structural variable values only.
#[derive(Debug, Clone)]
pub struct LpSolution {
    pub status: LpStatus,
    pub objective: f64,
    pub values: Vec<f64>,
    pub duals: Vec<f64>,
}

impl LpSolution {
    fn non_optimal(status: LpStatus, n: usize, m: usize) -> Self {
        Self {
            status,
            objective: f64::INFINITY,
            values: vec![0.0; n],
            duals: vec![0.0; m],
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
enum VarState {
    Basic(usize),
    AtLower,
    AtUpper,
}

/// Basis snapshot for warm restarts (opaque outside the solver).
#[derive(Debug, Clone)]
pub struct WarmBasis {
    basis: Vec<usize>,
    state: Vec<VarState>,
}

impl WarmBasis {
    /// Remaps this basis onto a program extended by one appended row (the
    /// lexicographic guard): the new row's slack enters the basis and the
    /// artificial block shifts by one.
    pub fn with_appended_row(&self, n_struct: usize, old_rows: usize) -> WarmBasis {
        let new_rows = old_rows + 1;
        let remap = |j: usize| -> usize {
            if j < n_struct + old_rows {
                j
            } else {
                j + 1 // artificial block shifts past the new slack
            }
        };
        let mut state = Vec::with_capacity(n_struct + 2 * new_rows);
        state.extend_from_slice(&self.state[..n_struct + old_rows]);
        state.push(VarState::Basic(old_rows)); // guard slack basic in the new row
        state.extend_from_slice(&self.state[n_struct + old_rows..]);
        state.push(VarState::AtLower); // artificial of the new row
        let mut basis: Vec<usize> = self.basis.iter().map(|&b| remap(b)).collect();
        basis.push(n_struct + old_rows);
        WarmBasis { basis, state }
    }
}

/// Static LP data converted once from a [`MathProgram`]; individual solves
/// vary the objective and the structural bounds (branch-and-bound fixings).
pub struct SimplexSolver {
    n_struct: usize,
    n_rows: usize,
    n_total: usize,
    /// Column-major constraint matrix including slacks and artificials.
    cols: Vec<Vec<(usize, f64)>>,
    rhs: Vec<f64>,
    /// Default bounds for all columns.
    lower: Vec<f64>,
    upper: Vec<f64>,
}

impl SimplexSolver {
    pub fn new(program: &MathProgram) -> Self {
        let n_struct = program.vars.len();
        let n_rows = program.rows.len();
        let n_total = n_struct + 2 * n_rows;
        let mut cols: Vec<Vec<(usize, f64)>> = vec![Vec::new(); n_total];
        let mut lower = vec![0.0; n_total];
        let mut upper = vec![0.0; n_total];

        for (j, var) in program.vars.iter().enumerate() {
            lower[j] = var.lo;
            upper[j] = var.hi;
        }
        for (i, row) in program.rows.iter().enumerate() {
            // widest the row's lhs can swing given the variable bounds;
            // keeps slack and artificial bounds finite and tight
            let mut span = row.rhs.abs() + 1.0;
            for &(j, coef) in &row.terms {
                if coef != 0.0 {
                    cols[j].push((i, coef));
                    span += coef.abs() * lower[j].abs().max(upper[j].abs());
                }
            }
            let slack = n_struct + i;
            cols[slack].push((i, 1.0));
            let (lo, hi) = match row.sense {
                RowSense::Le => (0.0, span),
                RowSense::Ge => (-span, 0.0),
                RowSense::Eq => (0.0, 0.0),
            };
            lower[slack] = lo;
            upper[slack] = hi;
            // artificial bounds are set per solve from the initial residual
            let art = n_struct + n_rows + i;
            cols[art].push((i, 1.0));
        }

        Self {
            n_struct,
            n_rows,
            n_total,
            cols,
            rhs: program.rows.iter().map(|r| r.rhs).collect(),
            lower,
            upper,
        }
    }

    pub fn n_struct(&self) -> usize {
        self.n_struct
    }

    /// Solves `min objective·x` subject to the converted rows, with
    /// `bounds` overriding the structural bounds (pass the defaults from
    /// [`SimplexSolver::default_bounds`]).
    pub fn solve(&self, objective: &[f64], bounds: &(Vec<f64>, Vec<f64>)) -> LpSolution {
        self.solve_warm(objective, bounds, None).0
    }

    /// As [`SimplexSolver::solve`], optionally restarting from a basis of a
    /// previous solve over the same rows. Returns the optimal basis for
    /// chaining; falls back to a cold solve whenever the warm start is
    /// unusable.
    pub fn solve_warm(
        &self,
        objective: &[f64],
        bounds: &(Vec<f64>, Vec<f64>),
        warm: Option<&WarmBasis>,
    ) -> (LpSolution, Option<WarmBasis>) {
        if let Some(w) = warm {
            if let Some(worker) = Worker::from_warm(self, objective, bounds, w) {
                if let Ok(out) = worker.run_warm() {
                    return out;
                }
            }
        }
        match Worker::new(self, objective, bounds, false).run() {
            Ok(out) => out,
            // numerical trouble: replay cautiously under Bland's rule
            Err(()) => Worker::new(self, objective, bounds, true)
                .run()
                .unwrap_or_else(|()| {
                    (
                        LpSolution::non_optimal(
                            LpStatus::IterationLimit,
                            self.n_struct,
                            self.n_rows,
                        ),
                        None,
                    )
                }),
        }
    }

    pub fn default_bounds(&self) -> (Vec<f64>, Vec<f64>) {
        (
            self.lower[..self.n_struct].to_vec(),
            self.upper[..self.n_struct].to_vec(),
        )
    }

    /// Dense objective vector over the structural variables.
    pub fn dense_objective(&self, terms: &[(usize, f64)]) -> Vec<f64> {
        let mut c = vec![0.0; self.n_struct];
        for &(j, coef) in terms {
            c[j] += coef;
        }
        c
    }
}

struct Worker<'a> {
    lp: &'a SimplexSolver,
    cost: Vec<f64>,
    lower: Vec<f64>,
    upper: Vec<f64>,
    value: Vec<f64>,
    state: Vec<VarState>,
    basis: Vec<usize>,
    binv: Vec<Vec<f64>>,
    pivots_since_refactor: usize,
    stalled: usize,
    bland: bool,
    paranoid: bool,
}

impl<'a> Worker<'a> {
    fn new(
        lp: &'a SimplexSolver,
        objective: &[f64],
        bounds: &(Vec<f64>, Vec<f64>),
        paranoid: bool,
    ) -> Self {
        let n = lp.n_total;
        let m = lp.n_rows;
        let mut lower = lp.lower.clone();
        let mut upper = lp.upper.clone();
        lower[..lp.n_struct].copy_from_slice(&bounds.0);
        upper[..lp.n_struct].copy_from_slice(&bounds.1);

        let mut cost = vec![0.0; n];
        cost[..lp.n_struct].copy_from_slice(objective);

        let mut value = vec![0.0; n];
        let mut state = vec![VarState::AtLower; n];
        // structural and slack columns start at the bound closest to zero
        for j in 0..lp.n_struct + m {
            let at_lower = lower[j].abs() <= upper[j].abs();
            value[j] = if at_lower { lower[j] } else { upper[j] };
            state[j] = if at_lower {
                VarState::AtLower
            } else {
                VarState::AtUpper
            };
        }

        // artificials absorb the initial residual and form the basis
        let mut residual = lp.rhs.clone();
        for j in 0..lp.n_struct + m {
            if value[j] != 0.0 {
                for &(i, coef) in &lp.cols[j] {
                    residual[i] -= coef * value[j];
                }
            }
        }
        let mut basis = Vec::with_capacity(m);
        for i in 0..m {
            let art = lp.n_struct + m + i;
            if residual[i] >= 0.0 {
                lower[art] = 0.0;
                upper[art] = residual[i] + 1.0;
            } else {
                lower[art] = residual[i] - 1.0;
                upper[art] = 0.0;
            }
            value[art] = residual[i];
            state[art] = VarState::Basic(i);
            basis.push(art);
        }

        let mut binv = vec![vec![0.0; m]; m];
        for (i, row) in binv.iter_mut().enumerate() {
            row[i] = 1.0;
        }

        Worker {
            lp,
            cost,
            lower,
            upper,
            value,
            state,
            basis,
            binv,
            pivots_since_refactor: 0,
            stalled: 0,
            bland: paranoid,
            paranoid,
        }
    }

    /// Rebuilds a worker around a previous basis. Nonbasic variables snap
    /// to their (possibly changed) bounds; basic values are recomputed by
    /// the first refactorization. Returns `None` when the snapshot does not
    /// fit this program.
    fn from_warm(
        lp: &'a SimplexSolver,
        objective: &[f64],
        bounds: &(Vec<f64>, Vec<f64>),
        warm: &WarmBasis,
    ) -> Option<Self> {
        if warm.basis.len() != lp.n_rows || warm.state.len() != lp.n_total {
            return None;
        }
        let m = lp.n_rows;
        let mut lower = lp.lower.clone();
        let mut upper = lp.upper.clone();
        lower[..lp.n_struct].copy_from_slice(&bounds.0);
        upper[..lp.n_struct].copy_from_slice(&bounds.1);
        for i in 0..m {
            let art = lp.n_struct + m + i;
            lower[art] = 0.0;
            upper[art] = 0.0;
        }
        let mut cost = vec![0.0; lp.n_total];
        cost[..lp.n_struct].copy_from_slice(objective);

        let mut value = vec![0.0; lp.n_total];
        for j in 0..lp.n_total {
            value[j] = match warm.state[j] {
                VarState::AtLower => lower[j],
                VarState::AtUpper => upper[j],
                VarState::Basic(_) => 0.0, // recomputed on refactor
            };
        }
        Some(Worker {
            lp,
            cost,
            lower,
            upper,
            value,
            state: warm.state.clone(),
            basis: warm.basis.clone(),
            binv: vec![vec![0.0; m]; m],
            pivots_since_refactor: 0,
            stalled: 0,
            bland: false,
            paranoid: false,
        })
    }

    fn snapshot(&self) -> WarmBasis {
        WarmBasis {
            basis: self.basis.clone(),
            state: self.state.clone(),
        }
    }

    fn worst_bound_violation(&self) -> f64 {
        let mut worst = 0.0f64;
        for j in 0..self.lp.n_total {
            let v = self.value[j];
            let scale = 1.0 + self.lower[j].abs().max(self.upper[j].abs());
            let out = (self.lower[j] - v).max(v - self.upper[j]) / scale;
            worst = worst.max(out);
        }
        worst
    }

    /// Nonbasic reduced costs all priced the right way for minimization.
    fn is_dual_feasible(&self) -> bool {
        let y = self.basic_duals();
        for j in 0..self.lp.n_total {
            if matches!(self.state[j], VarState::Basic(_)) || self.lower[j] == self.upper[j] {
                continue;
            }
            let mut d = self.cost[j];
            for &(i, coef) in &self.lp.cols[j] {
                d -= y[i] * coef;
            }
            let bad = match self.state[j] {
                VarState::AtLower => d < -1e-7,
                VarState::AtUpper => d > 1e-7,
                VarState::Basic(_) => false,
            };
            if bad {
                return false;
            }
        }
        true
    }

    /// Warm path: repair primal feasibility (dual simplex) if needed, then
    /// optimize. `Err(())` sends the caller to the cold path.
    fn run_warm(mut self) -> Result<(LpSolution, Option<WarmBasis>), ()> {
        let m = self.lp.n_rows;
        let n_struct = self.lp.n_struct;
        let max_iters = 200 * (m + self.lp.n_total).max(100);
        self.refactor();

        if self.worst_bound_violation() > FEAS_TOL {
            if !self.is_dual_feasible() {
                return Err(());
            }
            match self.dual_optimize(max_iters) {
                DualOutcome::Feasible => {}
                DualOutcome::Infeasible => {
                    return Ok((
                        LpSolution::non_optimal(LpStatus::Infeasible, n_struct, m),
                        None,
                    ))
                }
                DualOutcome::Trouble => return Err(()),
            }
        }

        let status = self.optimize(max_iters);
        if status != LpStatus::Optimal {
            return Ok((LpSolution::non_optimal(status, n_struct, m), None));
        }
        self.finish()
    }

    /// `Err(())` flags a numerically corrupted "optimum" (a basic variable
    /// escaped its bounds beyond tolerance); the caller replays cautiously.
    fn run(mut self) -> Result<(LpSolution, Option<WarmBasis>), ()> {
        let m = self.lp.n_rows;
        let n_struct = self.lp.n_struct;
        let max_iters = 200 * (m + self.lp.n_total).max(100);

        // phase 1: minimize total artificial infeasibility
        let mut phase1_cost = vec![0.0; self.lp.n_total];
        for i in 0..m {
            let art = n_struct + m + i;
            phase1_cost[art] = if self.upper[art] > 0.0 { 1.0 } else { -1.0 };
        }
        let real_cost = std::mem::replace(&mut self.cost, phase1_cost);
        match self.optimize(max_iters) {
            LpStatus::Optimal => {}
            s => return Ok((LpSolution::non_optimal(s, n_struct, m), None)),
        }
        let infeasibility: f64 = (0..m)
            .map(|i| self.value[n_struct + m + i].abs())
            .sum();
        if infeasibility > FEAS_TOL {
            // near-zero leftovers are as likely numerical stalls as true
            // infeasibility; have the cautious replay decide
            if !self.paranoid && infeasibility < 1e-3 {
                return Err(());
            }
            return Ok((
                LpSolution::non_optimal(LpStatus::Infeasible, n_struct, m),
                None,
            ));
        }

        // phase 2: pin artificials at zero and optimize the true objective
        for i in 0..m {
            let art = n_struct + m + i;
            self.lower[art] = 0.0;
            self.upper[art] = 0.0;
            if !matches!(self.state[art], VarState::Basic(_)) {
                self.value[art] = 0.0;
                self.state[art] = VarState::AtLower;
            }
        }
        self.cost = real_cost;
        self.bland = self.paranoid;
        self.stalled = 0;
        let status = self.optimize(max_iters);
        if status != LpStatus::Optimal {
            return Ok((LpSolution::non_optimal(status, n_struct, m), None));
        }
        self.finish()
    }

    /// Final verification and solution assembly shared by the cold and warm
    /// paths.
    fn finish(mut self) -> Result<(LpSolution, Option<WarmBasis>), ()> {
        let n_struct = self.lp.n_struct;
        self.refactor();
        if self.worst_bound_violation() > FEAS_TOL {
            return Err(());
        }
        let objective = (0..n_struct).map(|j| self.cost[j] * self.value[j]).sum();
        let duals = self.basic_duals();
        let basis = self.snapshot();
        let mut values = self.value[..n_struct].to_vec();
        for (j, v) in values.iter_mut().enumerate() {
            *v = v.clamp(self.lower[j] - 1e-9, self.upper[j] + 1e-9);
        }
        Ok((
            LpSolution {
                status: LpStatus::Optimal,
                objective,
                values,
                duals,
            },
            Some(basis),
        ))
    }

    fn basic_duals(&self) -> Vec<f64> {
        let m = self.lp.n_rows;
        let mut y = vec![0.0; m];
        for (i, &b) in self.basis.iter().enumerate() {
            let cb = self.cost[b];
            if cb != 0.0 {
                for k in 0..m {
                    y[k] += cb * self.binv[i][k];
                }
            }
        }
        y
    }

    fn optimize(&mut self, max_iters: usize) -> LpStatus {
        for _ in 0..max_iters {
            let y = self.basic_duals();
            let entering = self.price(&y);
            let Some((j, dir)) = entering else {
                // confirm optimality against a fresh factorization: the
                // product-form updates drift and can hide improving columns
                if self.pivots_since_refactor > 0 {
                    self.refactor();
                    let y = self.basic_duals();
                    if let Some((j, dir)) = self.price(&y) {
                        let _ = (j, dir);
                        continue;
                    }
                }
                return LpStatus::Optimal;
            };

            // direction through the basis
            let m = self.lp.n_rows;
            let mut w = vec![0.0; m];
            for &(i, coef) in &self.lp.cols[j] {
                for r in 0..m {
                    w[r] += self.binv[r][i] * coef;
                }
            }

            match self.ratio_test(j, dir, &w) {
                RatioOutcome::Unbounded => return LpStatus::Unbounded,
                RatioOutcome::BoundFlip(step) => {
                    self.apply_step(dir, step, &w);
                    self.value[j] = if dir > 0.0 { self.upper[j] } else { self.lower[j] };
                    self.state[j] = if dir > 0.0 {
                        VarState::AtUpper
                    } else {
                        VarState::AtLower
                    };
                    self.note_progress(step);
                }
                RatioOutcome::Pivot { row, step, at_upper } => {
                    self.apply_step(dir, step, &w);
                    let leaving = self.basis[row];
                    self.value[leaving] = if at_upper {
                        self.upper[leaving]
                    } else {
                        self.lower[leaving]
                    };
                    self.state[leaving] = if at_upper {
                        VarState::AtUpper
                    } else {
                        VarState::AtLower
                    };
                    self.value[j] += dir * step;
                    self.state[j] = VarState::Basic(row);
                    self.basis[row] = j;
                    self.update_binv(row, &w);
                    self.note_progress(step);
                }
            }
        }
        LpStatus::IterationLimit
    }

    /// Dual simplex: starting from a dual-feasible basis, repeatedly kicks
    /// the most bound-violating basic variable out onto the bound it
    /// violates, choosing the entering column by the dual ratio test. The
    /// entering variable may land beyond its own bound; it then becomes a
    /// later leaving candidate. Terminates when primal feasible, or
    /// certifies infeasibility when a violated row has no admissible pivot.
    fn dual_optimize(&mut self, max_iters: usize) -> DualOutcome {
        let m = self.lp.n_rows;
        let mut stall = 0usize;
        let mut last_violation = f64::INFINITY;
        for _ in 0..max_iters {
            // leaving choice: most violating basic variable
            let mut leaving: Option<(usize, f64, bool)> = None; // (row, violation, above)
            for r in 0..m {
                let b = self.basis[r];
                let v = self.value[b];
                let over = v - self.upper[b];
                let under = self.lower[b] - v;
                let (viol, above) = if over >= under { (over, true) } else { (under, false) };
                if viol > FEAS_TOL && leaving.as_ref().map_or(true, |&(_, w, _)| viol > w) {
                    leaving = Some((r, viol, above));
                }
            }
            let Some((r, violation, above)) = leaving else {
                return DualOutcome::Feasible;
            };
            if violation >= last_violation {
                stall += 1;
                if stall > STALL_LIMIT {
                    return DualOutcome::Trouble;
                }
            } else {
                stall = 0;
            }
            last_violation = violation;

            let y = self.basic_duals();
            let rho = self.binv[r].clone();

            // entering choice: admissible column minimizing |d|/|alpha|
            let mut entering: Option<(usize, f64, f64, f64)> = None; // (var, ratio, |alpha|, dir)
            for j in 0..self.lp.n_total {
                if matches!(self.state[j], VarState::Basic(_)) || self.lower[j] == self.upper[j] {
                    continue;
                }
                let mut alpha = 0.0;
                for &(i, coef) in &self.lp.cols[j] {
                    alpha += rho[i] * coef;
                }
                if alpha.abs() <= DUAL_PIVOT_TOL {
                    continue;
                }
                // moving j by σ (+1 from lower, −1 from upper) changes
                // x_B[r] by −σ·alpha; it must move toward the violated bound
                let dir = match self.state[j] {
                    VarState::AtLower => 1.0,
                    VarState::AtUpper => -1.0,
                    VarState::Basic(_) => unreachable!(),
                };
                let fixes = if above {
                    -dir * alpha < 0.0
                } else {
                    -dir * alpha > 0.0
                };
                if !fixes {
                    continue;
                }
                let mut d = self.cost[j];
                for &(i, coef) in &self.lp.cols[j] {
                    d -= y[i] * coef;
                }
                let ratio = d.abs() / alpha.abs();
                let replace = match entering {
                    None => true,
                    Some((bj, br, ba, _)) => {
                        if self.bland {
                            ratio < br - 1e-12 || (ratio < br + 1e-12 && j < bj)
                        } else {
                            ratio < br - 1e-12
                                || (ratio < br + 1e-12
                                    && (alpha.abs() > ba + 1e-12
                                        || (alpha.abs() > ba - 1e-12 && j < bj)))
                        }
                    }
                };
                if replace {
                    entering = Some((j, ratio, alpha.abs(), dir));
                }
            }
            let Some((j, _, _, dir)) = entering else {
                return DualOutcome::Infeasible;
            };

            // pivot: drive x_B[r] exactly onto its violated bound
            let mut w = vec![0.0; m];
            for &(i, coef) in &self.lp.cols[j] {
                for k in 0..m {
                    w[k] += self.binv[k][i] * coef;
                }
            }
            let leaving_var = self.basis[r];
            let target = if above {
                self.upper[leaving_var]
            } else {
                self.lower[leaving_var]
            };
            let step = (self.value[leaving_var] - target) / (dir * w[r]);
            self.apply_step(dir, step, &w);
            self.value[leaving_var] = target;
            self.state[leaving_var] = if above {
                VarState::AtUpper
            } else {
                VarState::AtLower
            };
            self.value[j] += dir * step;
            self.state[j] = VarState::Basic(r);
            self.basis[r] = j;
            self.update_binv(r, &w);
        }
        DualOutcome::Trouble
    }

    fn note_progress(&mut self, step: f64) {
        if step <= 1e-12 {
            self.stalled += 1;
            if self.stalled > STALL_LIMIT {
                self.bland = true;
            }
        } else {
            self.stalled = 0;
        }
    }

    /// Chooses the entering variable; returns its direction (+1 rising from
    /// the lower bound, −1 falling from the upper bound).
    fn price(&self, y: &[f64]) -> Option<(usize, f64)> {
        let mut best: Option<(usize, f64, f64)> = None; // (var, dir, violation)
        for j in 0..self.lp.n_total {
            let (dir, violation) = match self.state[j] {
                VarState::Basic(_) => continue,
                VarState::AtLower | VarState::AtUpper => {
                    if self.lower[j] == self.upper[j] {
                        continue; // fixed
                    }
                    let mut d = self.cost[j];
                    for &(i, coef) in &self.lp.cols[j] {
                        d -= y[i] * coef;
                    }
                    match self.state[j] {
                        VarState::AtLower if d < -DUAL_TOL => (1.0, -d),
                        VarState::AtUpper if d > DUAL_TOL => (-1.0, d),
                        _ => continue,
                    }
                }
            };
            if self.bland {
                return Some((j, dir)); // first (lowest-index) improving column
            }
            if best.as_ref().map_or(true, |&(_, _, v)| violation > v) {
                best = Some((j, dir, violation));
            }
        }
        best.map(|(j, dir, _)| (j, dir))
    }

    /// Moves every basic variable along `-dir·step·w` (the entering column's
    /// basis image).
    fn apply_step(&mut self, dir: f64, step: f64, w: &[f64]) {
        if step == 0.0 {
            return;
        }
        for (r, &wi) in w.iter().enumerate() {
            if wi != 0.0 {
                let b = self.basis[r];
                self.value[b] -= dir * step * wi;
            }
        }
    }

    fn ratio_test(&self, j: usize, dir: f64, w: &[f64]) -> RatioOutcome {
        let span = self.upper[j] - self.lower[j];

        // pass 1: tightest blocking limit over all basic variables
        let mut min_limit = span;
        for (r, &wr) in w.iter().enumerate() {
            let rate = -dir * wr; // change of basic r per unit entering step
            if rate.abs() <= RATE_TOL {
                continue;
            }
            let b = self.basis[r];
            let limit = if rate < 0.0 {
                (self.value[b] - self.lower[b]) / -rate
            } else {
                (self.upper[b] - self.value[b]) / rate
            };
            min_limit = min_limit.min(limit.max(0.0));
        }
        if min_limit >= UNBOUNDED_STEP {
            return RatioOutcome::Unbounded;
        }
        if min_limit >= span {
            return RatioOutcome::BoundFlip(span);
        }

        // pass 2: among rows blocking inside a small window, prefer the
        // largest pivot magnitude (lowest variable index on ties; pure
        // lowest index under Bland's rule)
        let window = min_limit + 1e-9 * (1.0 + min_limit.abs());
        let mut best: Option<(usize, bool, f64)> = None; // (row, hits_upper, |w|)
        for (r, &wr) in w.iter().enumerate() {
            let rate = -dir * wr;
            if rate.abs() <= RATE_TOL {
                continue;
            }
            let b = self.basis[r];
            let (limit, hits_upper) = if rate < 0.0 {
                ((self.value[b] - self.lower[b]) / -rate, false)
            } else {
                ((self.upper[b] - self.value[b]) / rate, true)
            };
            if limit.max(0.0) > window {
                continue;
            }
            let replace = match best {
                None => true,
                Some((br, _, bw)) => {
                    if self.bland {
                        self.basis[r] < self.basis[br]
                    } else {
                        wr.abs() > bw + 1e-12
                            || (wr.abs() > bw - 1e-12 && self.basis[r] < self.basis[br])
                    }
                }
            };
            if replace {
                best = Some((r, hits_upper, wr.abs()));
            }
        }

        match best {
            None => RatioOutcome::BoundFlip(span.min(min_limit)),
            Some((row, at_upper, _)) => RatioOutcome::Pivot {
                row,
                step: min_limit,
                at_upper,
            },
        }
    }

    fn update_binv(&mut self, pivot_row: usize, w: &[f64]) {
        let m = self.lp.n_rows;
        let pivot = w[pivot_row];
        let row: Vec<f64> = self.binv[pivot_row].iter().map(|v| v / pivot).collect();
        for r in 0..m {
            if r == pivot_row {
                continue;
            }
            let factor = w[r];
            if factor != 0.0 {
                for k in 0..m {
                    self.binv[r][k] -= factor * row[k];
                }
            }
        }
        self.binv[pivot_row] = row;

        self.pivots_since_refactor += 1;
        if self.pivots_since_refactor >= REFACTOR_EVERY {
            self.refactor();
        }
    }

    /// Rebuilds the basis inverse by Gauss-Jordan elimination and recomputes
    /// the basic values from the nonbasic assignment.
    fn refactor(&mut self) {
        let m = self.lp.n_rows;
        let mut a = vec![vec![0.0; 2 * m]; m];
        for (col, &b) in self.basis.iter().enumerate() {
            for &(i, coef) in &self.lp.cols[b] {
                a[i][col] = coef;
            }
        }
        for i in 0..m {
            a[i][m + i] = 1.0;
        }
        for col in 0..m {
            let mut piv = col;
            for r in col + 1..m {
                if a[r][col].abs() > a[piv][col].abs() {
                    piv = r;
                }
            }
            a.swap(col, piv);
            let p = a[col][col];
            if p.abs() < 1e-14 {
                continue; // numerically singular basis column; leave identity row
            }
            for k in col..2 * m {
                a[col][k] /= p;
            }
            for r in 0..m {
                if r != col && a[r][col] != 0.0 {
                    let f = a[r][col];
                    for k in col..2 * m {
                        a[r][k] -= f * a[col][k];
                    }
                }
            }
        }
        for i in 0..m {
            for k in 0..m {
                self.binv[i][k] = a[i][m + k];
            }
        }

        // x_B = B⁻¹ (rhs − N x_N)
        let mut rhs = self.lp.rhs.clone();
        for j in 0..self.lp.n_total {
            if matches!(self.state[j], VarState::Basic(_)) {
                continue;
            }
            if self.value[j] != 0.0 {
                for &(i, coef) in &self.lp.cols[j] {
                    rhs[i] -= coef * self.value[j];
                }
            }
        }
        for r in 0..m {
            let mut v = 0.0;
            for k in 0..m {
                v += self.binv[r][k] * rhs[k];
            }
            self.value[self.basis[r]] = v;
        }
        self.pivots_since_refactor = 0;
    }
}

enum DualOutcome {
    Feasible,
    Infeasible,
    Trouble,
}

enum RatioOutcome {
    Unbounded,
    /// The entering variable reaches its opposite bound after `step`.
    BoundFlip(f64),
    Pivot {
        row: usize,
        step: f64,
        at_upper: bool,
    },
}

/// One-shot solve of a program stage with the binaries relaxed to their
/// bounds.
pub fn lp_solve(program: &MathProgram, objective: &[(usize, f64)]) -> LpSolution {
    let solver = SimplexSolver::new(program);
    let c = solver.dense_objective(objective);
    let bounds = solver.default_bounds();
    solver.solve(&c, &bounds)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{MathProgram, RowSense, VarKind};

    fn close(a: f64, b: f64) -> bool {
        (a - b).abs() < 1e-7
    }

    #[test]
    fn min_x_above_floor() {
        let mut p = MathProgram::default();
        let x = p.add_var("x", 0.0, 10.0, VarKind::Continuous);
        p.add_row("floor", vec![(x, 1.0)], RowSense::Ge, 3.0);
        let sol = lp_solve(&p, &[(x, 1.0)]);
        assert_eq!(sol.status, LpStatus::Optimal);
        assert!(close(sol.objective, 3.0));
        assert!(close(sol.values[x], 3.0));
    }

    #[test]
    fn max_x_below_ceiling() {
        let mut p = MathProgram::default();
        let x = p.add_var("x", 0.0, 10.0, VarKind::Continuous);
        p.add_row("cap", vec![(x, 1.0)], RowSense::Le, 5.0);
        let sol = lp_solve(&p, &[(x, -1.0)]);
        assert_eq!(sol.status, LpStatus::Optimal);
        assert!(close(sol.values[x], 5.0));
        assert!(close(sol.objective, -5.0));
    }

    #[test]
    fn contradictory_rows_infeasible() {
        let mut p = MathProgram::default();
        let x = p.add_var("x", 0.0, 10.0, VarKind::Continuous);
        p.add_row("low", vec![(x, 1.0)], RowSense::Ge, 2.0);
        p.add_row("high", vec![(x, 1.0)], RowSense::Le, 1.0);
        let sol = lp_solve(&p, &[(x, 1.0)]);
        assert_eq!(sol.status, LpStatus::Infeasible);
    }

    #[test]
    fn equality_and_mixture() {
        // min 2x + y  s.t.  x + y = 4,  x − y ≤ 1,  x,y ∈ [0,5]
        let mut p = MathProgram::default();
        let x = p.add_var("x", 0.0, 5.0, VarKind::Continuous);
        let y = p.add_var("y", 0.0, 5.0, VarKind::Continuous);
        p.add_row("sum", vec![(x, 1.0), (y, 1.0)], RowSense::Eq, 4.0);
        p.add_row("diff", vec![(x, 1.0), (y, -1.0)], RowSense::Le, 1.0);
        let sol = lp_solve(&p, &[(x, 2.0), (y, 1.0)]);
        assert_eq!(sol.status, LpStatus::Optimal);
        assert!(close(sol.values[x], 0.0));
        assert!(close(sol.values[y], 4.0));
        assert!(close(sol.objective, 4.0));
    }

    #[test]
    fn negative_lower_bounds() {
        // min x + y  s.t.  x + 2y ≥ −2,  x ∈ [−4, 4], y ∈ [−3, 3]
        let mut p = MathProgram::default();
        let x = p.add_var("x", -4.0, 4.0, VarKind::Continuous);
        let y = p.add_var("y", -3.0, 3.0, VarKind::Continuous);
        p.add_row("r", vec![(x, 1.0), (y, 2.0)], RowSense::Ge, -2.0);
        let sol = lp_solve(&p, &[(x, 1.0), (y, 1.0)]);
        assert_eq!(sol.status, LpStatus::Optimal);
        // optimum at x = −4 (slack from y) → y ≥ 1 → y = 1
        assert!(close(sol.values[x], -4.0));
        assert!(close(sol.values[y], 1.0));
    }

    #[test]
    fn degenerate_transport_problem() {
        // Highly degenerate assignment-style LP.
        let mut p = MathProgram::default();
        let n = 4;
        let mut vars = vec![];
        for i in 0..n {
            for j in 0..n {
                vars.push(p.add_var(format!("x{i}{j}"), 0.0, 1.0, VarKind::Continuous));
            }
        }
        for i in 0..n {
            let terms: Vec<_> = (0..n).map(|j| (vars[i * n + j], 1.0)).collect();
            p.add_row(format!("row{i}"), terms, RowSense::Eq, 1.0);
            let terms: Vec<_> = (0..n).map(|j| (vars[j * n + i], 1.0)).collect();
            p.add_row(format!("col{i}"), terms, RowSense::Eq, 1.0);
        }
        let cost: Vec<(usize, f64)> = vars
            .iter()
            .enumerate()
            .map(|(k, &v)| (v, ((k * 7 + 3) % 11) as f64))
            .collect();
        let sol = lp_solve(&p, &cost);
        assert_eq!(sol.status, LpStatus::Optimal);
        // LP relaxation of assignment is integral
        for &v in &sol.values {
            assert!(v < 1e-6 || (v - 1.0).abs() < 1e-6);
        }
    }

    #[test]
    fn respects_bound_overrides() {
        let mut p = MathProgram::default();
        let x = p.add_var("x", 0.0, 1.0, VarKind::Binary);
        let y = p.add_var("y", 0.0, 10.0, VarKind::Continuous);
        p.add_row("link", vec![(y, 1.0), (x, -10.0)], RowSense::Le, 0.0);
        let solver = SimplexSolver::new(&p);
        let c = solver.dense_objective(&[(y, -1.0)]);
        let mut bounds = solver.default_bounds();
        bounds.1[x] = 0.0; // fix binary to zero
        let sol = solver.solve(&c, &bounds);
        assert_eq!(sol.status, LpStatus::Optimal);
        assert!(close(sol.values[y], 0.0));
    }

    #[test]
    fn duals_satisfy_strong_duality_on_small_lp() {
        // min x + 3y s.t. x + y ≥ 2, x − y ≥ −1, x,y ∈ [0, 10]
        let mut p = MathProgram::default();
        let x = p.add_var("x", 0.0, 10.0, VarKind::Continuous);
        let y = p.add_var("y", 0.0, 10.0, VarKind::Continuous);
        p.add_row("a", vec![(x, 1.0), (y, 1.0)], RowSense::Ge, 2.0);
        p.add_row("b", vec![(x, 1.0), (y, -1.0)], RowSense::Ge, -1.0);
        let sol = lp_solve(&p, &[(x, 1.0), (y, 3.0)]);
        assert_eq!(sol.status, LpStatus::Optimal);
        assert!(close(sol.objective, 2.0)); // x=2, y=0
        let dual_obj = 2.0 * sol.duals[0] + -1.0 * sol.duals[1];
        assert!((dual_obj - sol.objective).abs() < 1e-6);
    }
}
