//! Horizon model assembly and dispatch-plan extraction.
//!
//! Power flows are modeled per string and step in kW. `p_b` is the string's
//! share of the fleet demand at the terminals; the mode-side power (`p_ch`
//! while charging, `p_dch` while discharging) is the power exchanged with
//! the OCV source, so the coulomb-counting recursion `Δsoc =
//! Δt·I/q = Δt·p_mode/(q·ocv)` is exact under the frozen OCV. Heat is a
//! convex piecewise-linear function of the mode-side power sampled from the
//! frozen Rint coefficients, encoded as an epigraph (segment maxima) plus a
//! chord cap so minimization pins it to the curve.

use serde::Serialize;

use crate::ecm::{heat_power, max_deliverable_power_w, solve_current, Mode};
use crate::inverter::InverterLossModel;
use crate::piecewise::PwlTable;

use super::program::{MathProgram, ModelError, RowSense, VarKind};

/// Number of sample points for the per-(string, step) heat curves.
pub const HEAT_BREAKPOINTS: usize = 6;

/// Default penalty weight on the balance slack variables (applied at the
/// top priority stage, in normalized objective units).
pub const DEFAULT_SLACK_PENALTY: f64 = 1e3;

/// Measured state a horizon starts from, per string.
#[derive(Debug, Clone, Copy, Serialize)]
pub struct StringInit {
    pub soc: f64,
    pub temp_c: f64,
}

/// Electrical and lumped-thermal constants the model needs per string.
#[derive(Debug, Clone)]
pub struct StringModelParams {
    pub p_nominal_kw: f64,
    pub q_nominal_ah: f64,
    pub inverter: InverterLossModel,
    /// Lumped heat gain, 1/c_total (K/J).
    pub k1: f64,
    /// Lumped cooling rate, h_conv/c_total (1/s).
    pub k2: f64,
    pub t_air_c: f64,
}

/// Nonlinear coefficients frozen on the current SLP trajectory, indexed
/// `[string][step]`.
#[derive(Debug, Clone)]
pub struct FrozenCoefficients {
    pub r_ohm: Vec<Vec<f64>>,
    pub ocv_v: Vec<Vec<f64>>,
    pub k_derate: Vec<Vec<f64>>,
}

/// Objective weights `W1..W4`.
#[derive(Debug, Clone, Copy, Serialize)]
pub struct ObjectiveWeights {
    pub availability: f64,
    pub derating: f64,
    pub inverter: f64,
    pub battery: f64,
}

impl Default for ObjectiveWeights {
    fn default() -> Self {
        Self {
            availability: 1.0,
            derating: 1.0,
            inverter: 1.0,
            battery: 1.0,
        }
    }
}

/// Objective priorities `P1..P4`; higher solves first.
#[derive(Debug, Clone, Copy, Serialize)]
pub struct Priorities {
    pub availability: i32,
    pub derating: i32,
    pub inverter: i32,
    pub battery: i32,
}

impl Default for Priorities {
    fn default() -> Self {
        Self {
            availability: 2,
            derating: 1,
            inverter: 1,
            battery: 1,
        }
    }
}

/// Big-M constants for the indicator constraints.
#[derive(Debug, Clone, Copy)]
pub struct BigM {
    pub avail_kw: f64,
    pub inverter_kw: f64,
    pub soc: f64,
}

impl BigM {
    pub fn for_nominal_power(p_nominal_kw: f64) -> Self {
        Self {
            avail_kw: p_nominal_kw,
            inverter_kw: p_nominal_kw,
            soc: 1.0,
        }
    }
}

/// Relaxation tolerances of the indicator and staging constraints.
#[derive(Debug, Clone, Copy)]
pub struct ModelTolerances {
    /// SOC band `ε` for the availability indicators, reused as the kW
    /// tolerance of the availability big-M links.
    pub eps: f64,
    /// Inverter on/off power tolerance `ε^inv` (kW).
    pub eps_inverter_kw: f64,
    /// Lexicographic stage preservation tolerance `ε1`.
    pub eps_lex: f64,
}

impl ModelTolerances {
    pub fn for_nominal_power(p_nominal_kw: f64) -> Self {
        Self {
            eps: 0.01,
            eps_inverter_kw: 1e-3 * p_nominal_kw,
            eps_lex: 1e-6,
        }
    }
}

/// Everything needed to assemble one horizon program.
#[derive(Debug, Clone)]
pub struct HorizonInput {
    pub n_strings: usize,
    pub n_steps: usize,
    pub dt_s: f64,
    /// Fleet demand per step (kW, positive = charge).
    pub demand_kw: Vec<f64>,
    pub init: Vec<StringInit>,
    pub strings: Vec<StringModelParams>,
    pub frozen: FrozenCoefficients,
    pub weights: ObjectiveWeights,
    pub priorities: Priorities,
    pub big_m: BigM,
    pub tol: ModelTolerances,
    pub slack_penalty: f64,
}

impl HorizonInput {
    pub fn fleet_nominal_kw(&self) -> f64 {
        self.strings.iter().map(|s| s.p_nominal_kw).sum()
    }

    pub fn dt_hours(&self) -> f64 {
        self.dt_s / 3600.0
    }

    pub fn mode_at(&self, t: usize) -> Option<Mode> {
        let d = self.demand_kw[t];
        if d > 0.0 {
            Some(Mode::Charge)
        } else if d < 0.0 {
            Some(Mode::Discharge)
        } else {
            None
        }
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        let m = self.n_strings;
        if m == 0 || self.n_steps == 0 {
            return Err(ModelError::InvalidInput(
                "need at least one string and one step".into(),
            ));
        }
        if self.demand_kw.len() != self.n_steps
            || self.init.len() != m
            || self.strings.len() != m
            || self.frozen.r_ohm.len() != m
            || self.frozen.ocv_v.len() != m
            || self.frozen.k_derate.len() != m
        {
            return Err(ModelError::InvalidInput("inconsistent dimensions".into()));
        }
        for grid in [&self.frozen.r_ohm, &self.frozen.ocv_v, &self.frozen.k_derate] {
            if grid.iter().any(|row| row.len() != self.n_steps) {
                return Err(ModelError::InvalidInput(
                    "frozen coefficient grids must be n_strings × n_steps".into(),
                ));
            }
        }
        for w in [
            self.weights.availability,
            self.weights.derating,
            self.weights.inverter,
            self.weights.battery,
        ] {
            if w < 0.0 {
                return Err(ModelError::InvalidInput(format!("negative weight {w}")));
            }
        }
        let fleet = self.fleet_nominal_kw();
        for (t, &d) in self.demand_kw.iter().enumerate() {
            if d.abs() > fleet + 1e-9 {
                return Err(ModelError::DemandExceedsFleet {
                    step: t,
                    demand_kw: d,
                    fleet_kw: fleet,
                });
            }
        }
        Ok(())
    }
}

/// Per-objective normalization factors: each loss energy is divided by the
/// total demanded energy of the horizon so every normalized objective of a
/// feasible dispatch lands in `[0, 1]`.
#[derive(Debug, Clone, Copy, Serialize)]
pub struct ObjectiveScales {
    pub availability: f64,
    pub derating: f64,
    pub inverter: f64,
    pub battery: f64,
    pub base_kwh: f64,
    pub degenerate: bool,
}

pub fn normalize_objectives(input: &HorizonInput) -> ObjectiveScales {
    let base_kwh: f64 = input.demand_kw.iter().map(|d| d.abs()).sum::<f64>() * input.dt_hours();
    let degenerate = base_kwh <= 0.0;
    let s = if degenerate { 1.0 } else { 1.0 / base_kwh };
    ObjectiveScales {
        availability: s,
        derating: s,
        inverter: s,
        battery: s,
        base_kwh,
        degenerate,
    }
}

/// Variable indices per (string, step); `None` where a step's mode does not
/// create the variable.
#[derive(Debug, Clone, Default)]
struct VarGrid {
    p_b: Vec<Vec<usize>>,
    p_mode: Vec<Vec<Option<usize>>>,
    p_inv: Vec<Vec<Option<usize>>>,
    p_heat: Vec<Vec<Option<usize>>>,
    p_avail: Vec<Vec<Option<usize>>>,
    p_derate: Vec<Vec<Option<usize>>>,
    s_pos: Vec<Vec<Option<usize>>>,
    s_neg: Vec<Vec<Option<usize>>>,
    soc: Vec<Vec<usize>>,
    temp: Vec<Vec<usize>>,
    b_high: Vec<Vec<usize>>,
    b_low: Vec<Vec<usize>>,
    b_inv: Vec<Vec<Option<usize>>>,
}

/// One string-step of an extracted dispatch plan.
#[derive(Debug, Clone, Copy, Default, Serialize)]
pub struct DispatchEntry {
    pub p_b_kw: f64,
    pub p_charge_kw: f64,
    pub p_discharge_kw: f64,
    pub p_inverter_kw: f64,
    pub p_heat_kw: f64,
    pub p_avail_high_kw: f64,
    pub p_avail_low_kw: f64,
    pub p_derate_loss_kw: f64,
    pub slack_pos_kw: f64,
    pub slack_neg_kw: f64,
    pub soc: f64,
    pub temp_pred_c: f64,
    pub b_high: bool,
    pub b_low: bool,
    pub b_inv: bool,
}

impl DispatchEntry {
    pub fn p_avail_kw(&self) -> f64 {
        self.p_avail_high_kw + self.p_avail_low_kw
    }
}

/// Dispatch returned by the controller for one horizon: per-string,
/// per-step setpoints with the predicted loss decomposition.
#[derive(Debug, Clone, Serialize)]
pub struct DispatchPlan {
    pub n_strings: usize,
    pub n_steps: usize,
    pub dt_s: f64,
    pub modes: Vec<Option<Mode>>,
    /// `entries[string][step]`.
    pub entries: Vec<Vec<DispatchEntry>>,
}

impl DispatchPlan {
    pub fn entry(&self, m: usize, t: usize) -> &DispatchEntry {
        &self.entries[m][t]
    }

    /// Total availability / derating / inverter / battery losses (kWh).
    pub fn loss_energy_kwh(&self) -> (f64, f64, f64, f64) {
        let dt_h = self.dt_s / 3600.0;
        let mut sums = (0.0, 0.0, 0.0, 0.0);
        for row in &self.entries {
            for e in row {
                sums.0 += e.p_avail_kw() * dt_h;
                sums.1 += e.p_derate_loss_kw * dt_h;
                sums.2 += e.p_inverter_kw * dt_h;
                sums.3 += e.p_heat_kw * dt_h;
            }
        }
        sums
    }

    /// Largest per-step demand-split residual `|Σ_m p_b − |demand||` (kW).
    pub fn worst_demand_residual_kw(&self, demand_kw: &[f64]) -> f64 {
        (0..self.n_steps)
            .map(|t| {
                let served: f64 = (0..self.n_strings).map(|m| self.entries[m][t].p_b_kw).sum();
                (served - demand_kw[t].abs()).abs()
            })
            .fold(0.0, f64::max)
    }
}

/// An assembled horizon program plus the index maps needed to read a
/// solution back out.
#[derive(Debug, Clone)]
pub struct HorizonModel {
    pub program: MathProgram,
    vars: VarGrid,
    modes: Vec<Option<Mode>>,
    n_strings: usize,
    n_steps: usize,
    dt_s: f64,
    pub scales: ObjectiveScales,
}

/// Samples the frozen Rint heat curve for one (string, step): heat (kW) as
/// a function of the mode-side (OCV) power (kW). Returns the breakpoint
/// table; the first point is always the origin.
fn sample_heat_curve(
    r_ohm: f64,
    ocv_v: f64,
    p_nominal_kw: f64,
    inverter: &InverterLossModel,
    mode: Mode,
) -> PwlTable {
    let terminal_max_kw = match mode {
        Mode::Charge => p_nominal_kw - inverter.loss_kw(p_nominal_kw, Mode::Charge),
        Mode::Discharge => {
            let want = p_nominal_kw + inverter.loss_kw(p_nominal_kw, Mode::Discharge);
            let cap = 0.98 * max_deliverable_power_w(ocv_v, r_ohm) * 1e-3;
            want.min(cap)
        }
    };
    let mut points = Vec::with_capacity(HEAT_BREAKPOINTS);
    for j in 0..HEAT_BREAKPOINTS {
        let u_kw = terminal_max_kw * j as f64 / (HEAT_BREAKPOINTS - 1) as f64;
        let i = solve_current(ocv_v, r_ohm, u_kw * 1e3, mode)
            .expect("sample within deliverable range");
        points.push((ocv_v * i * 1e-3, heat_power(i, r_ohm) * 1e-3));
    }
    PwlTable::new(&points).expect("strictly increasing sample powers")
}

/// Assembles the staged MILP for one horizon.
pub fn build_horizon_model(input: &HorizonInput) -> Result<HorizonModel, ModelError> {
    input.validate()?;
    let m_count = input.n_strings;
    let t_count = input.n_steps;
    let dt_h = input.dt_hours();
    let scales = normalize_objectives(input);

    let mut p = MathProgram::default();
    let mut g = VarGrid::default();
    let modes: Vec<Option<Mode>> = (0..t_count).map(|t| input.mode_at(t)).collect();

    // --- variables ---
    for m in 0..m_count {
        let sp = &input.strings[m];
        let mut p_b = Vec::new();
        let mut p_mode = Vec::new();
        let mut p_inv = Vec::new();
        let mut p_heat = Vec::new();
        let mut p_avail = Vec::new();
        let mut p_derate = Vec::new();
        let mut s_pos = Vec::new();
        let mut s_neg = Vec::new();
        let mut soc = Vec::new();
        let mut temp = Vec::new();
        let mut b_high = Vec::new();
        let mut b_low = Vec::new();
        let mut b_inv = Vec::new();

        for t in 0..t_count {
            let mode = modes[t];
            let active = mode.is_some();
            let pn = sp.p_nominal_kw;
            let p_b_hi = if active { pn } else { 0.0 };
            p_b.push(p.add_var(format!("p_b[{m},{t}]"), 0.0, p_b_hi, VarKind::Continuous));

            if let Some(mode) = mode {
                let curve = sample_heat_curve(
                    input.frozen.r_ohm[m][t],
                    input.frozen.ocv_v[m][t],
                    pn,
                    &sp.inverter,
                    mode,
                );
                let x_max = curve.x_max();
                let h_max = curve.eval(x_max);
                let tag = mode.label();
                p_mode.push(Some(p.add_var(
                    format!("p_{tag}[{m},{t}]"),
                    0.0,
                    x_max,
                    VarKind::Continuous,
                )));
                p_inv.push(Some(p.add_var(
                    format!("p_inv[{m},{t}]"),
                    0.0,
                    sp.inverter.loss_kw(pn, mode),
                    VarKind::Continuous,
                )));
                let heat_idx =
                    p.add_var(format!("p_heat[{m},{t}]"), 0.0, h_max, VarKind::Continuous);
                p_heat.push(Some(heat_idx));
                p_avail.push(Some(p.add_var(
                    format!("p_avail[{m},{t}]"),
                    0.0,
                    input.big_m.avail_kw + input.tol.eps,
                    VarKind::Continuous,
                )));
                p_derate.push(Some(p.add_var(
                    format!("p_derate[{m},{t}]"),
                    0.0,
                    pn,
                    VarKind::Continuous,
                )));
                s_pos.push(Some(p.add_var(
                    format!("s_pos[{m},{t}]"),
                    0.0,
                    4.0 * pn,
                    VarKind::Continuous,
                )));
                s_neg.push(Some(p.add_var(
                    format!("s_neg[{m},{t}]"),
                    0.0,
                    4.0 * pn,
                    VarKind::Continuous,
                )));
                b_inv.push(Some(p.add_var(
                    format!("b_inv[{m},{t}]"),
                    0.0,
                    1.0,
                    VarKind::Binary,
                )));

                // heat epigraph over the sampled curve, plus the chord cap
                for (j, seg) in curve.segments().iter().enumerate() {
                    p.add_row(
                        format!("heat_seg{j}[{m},{t}]"),
                        vec![(heat_idx, 1.0), (p_mode[t].unwrap(), -seg.slope)],
                        RowSense::Ge,
                        seg.intercept,
                    );
                }
                if x_max > 0.0 {
                    p.add_row(
                        format!("heat_cap[{m},{t}]"),
                        vec![(heat_idx, 1.0), (p_mode[t].unwrap(), -h_max / x_max)],
                        RowSense::Le,
                        0.0,
                    );
                }
            } else {
                p_mode.push(None);
                p_inv.push(None);
                p_heat.push(None);
                p_avail.push(None);
                p_derate.push(None);
                s_pos.push(None);
                s_neg.push(None);
                b_inv.push(None);
            }

            soc.push(p.add_var(format!("soc[{m},{t}]"), 0.0, 1.0, VarKind::Continuous));
            temp.push(p.add_var(
                format!("temp[{m},{t}]"),
                -50.0,
                300.0,
                VarKind::Continuous,
            ));
            b_high.push(p.add_var(format!("b_high[{m},{t}]"), 0.0, 1.0, VarKind::Binary));
            b_low.push(p.add_var(format!("b_low[{m},{t}]"), 0.0, 1.0, VarKind::Binary));
        }

        g.p_b.push(p_b);
        g.p_mode.push(p_mode);
        g.p_inv.push(p_inv);
        g.p_heat.push(p_heat);
        g.p_avail.push(p_avail);
        g.p_derate.push(p_derate);
        g.s_pos.push(s_pos);
        g.s_neg.push(s_neg);
        g.soc.push(soc);
        g.temp.push(temp);
        g.b_high.push(b_high);
        g.b_low.push(b_low);
        g.b_inv.push(b_inv);
    }

    // --- demand split ---
    for t in 0..t_count {
        if modes[t].is_none() {
            continue;
        }
        let terms: Vec<(usize, f64)> = (0..m_count).map(|m| (g.p_b[m][t], 1.0)).collect();
        p.add_row(
            format!("demand[{t}]"),
            terms,
            RowSense::Eq,
            input.demand_kw[t].abs(),
        );

        // Valid inequality implied by the demand row, the power bounds and
        // the inverter links: serving |d_t| needs enough inverters on. It
        // tightens the relaxation so full-fleet steps come out integral.
        let mut nominals: Vec<f64> = input.strings.iter().map(|s| s.p_nominal_kw).collect();
        nominals.sort_by(|a, b| b.total_cmp(a));
        let mut covered = m_count as f64 * input.tol.eps_inverter_kw;
        let mut min_on = 0usize;
        for pn in &nominals {
            if covered + 1e-9 >= input.demand_kw[t].abs() {
                break;
            }
            covered += pn - input.tol.eps_inverter_kw;
            min_on += 1;
        }
        if min_on >= 1 {
            let terms: Vec<(usize, f64)> = (0..m_count)
                .map(|m| (g.b_inv[m][t].expect("active step"), 1.0))
                .collect();
            p.add_row(format!("min_on[{t}]"), terms, RowSense::Ge, min_on as f64);
        }
    }

    // --- per-(string, step) physics and logic ---
    for m in 0..m_count {
        let sp = &input.strings[m];
        for t in 0..t_count {
            let soc_t = g.soc[m][t];
            let temp_t = g.temp[m][t];
            let eps = input.tol.eps;
            let m_soc = input.big_m.soc;

            if let Some(mode) = modes[t] {
                let p_b = g.p_b[m][t];
                let p_mode = g.p_mode[m][t].unwrap();
                let p_inv = g.p_inv[m][t].unwrap();
                let p_heat = g.p_heat[m][t].unwrap();
                let p_avail = g.p_avail[m][t].unwrap();
                let p_derate = g.p_derate[m][t].unwrap();
                let s_pos = g.s_pos[m][t].unwrap();
                let s_neg = g.s_neg[m][t].unwrap();
                let b_inv = g.b_inv[m][t].unwrap();

                // power balance, loss terms on the battery side of p_b
                let loss_sign = match mode {
                    Mode::Charge => 1.0,
                    Mode::Discharge => -1.0,
                };
                p.add_row(
                    format!("bal[{m},{t}]"),
                    vec![
                        (p_mode, 1.0),
                        (p_inv, loss_sign),
                        (p_heat, loss_sign),
                        (p_avail, 1.0),
                        (p_derate, 1.0),
                        (p_b, -1.0),
                        (s_pos, -1.0),
                        (s_neg, 1.0),
                    ],
                    RowSense::Eq,
                    0.0,
                );

                // availability loss allowed only with the matching indicator
                let indicator = match mode {
                    Mode::Charge => g.b_high[m][t],
                    Mode::Discharge => g.b_low[m][t],
                };
                p.add_row(
                    format!("avail_link[{m},{t}]"),
                    vec![(p_avail, 1.0), (indicator, -input.big_m.avail_kw)],
                    RowSense::Le,
                    eps,
                );

                // inverter on/off big-M and loss line
                p.add_row(
                    format!("inv_link[{m},{t}]"),
                    vec![(p_b, 1.0), (b_inv, -input.big_m.inverter_kw)],
                    RowSense::Le,
                    input.tol.eps_inverter_kw,
                );
                p.add_row(
                    format!("inv_loss[{m},{t}]"),
                    vec![
                        (p_inv, 1.0),
                        (b_inv, -sp.inverter.fixed_kw()),
                        (p_b, -sp.inverter.slope(mode)),
                    ],
                    RowSense::Eq,
                    0.0,
                );

                // derating loss against the frozen factor
                p.add_row(
                    format!("derate[{m},{t}]"),
                    vec![
                        (p_derate, 1.0),
                        (p_b, -(1.0 - input.frozen.k_derate[m][t])),
                    ],
                    RowSense::Eq,
                    0.0,
                );

                // coulomb counting with the frozen OCV: Δsoc = dt·I/q,
                // I = 1000·p_mode/ocv
                let c = dt_h * 1e3 / (sp.q_nominal_ah * input.frozen.ocv_v[m][t]);
                let sign = match mode {
                    Mode::Charge => -c,
                    Mode::Discharge => c,
                };
                let mut terms = vec![(soc_t, 1.0), (p_mode, sign)];
                let rhs = if t == 0 {
                    input.init[m].soc
                } else {
                    terms.push((g.soc[m][t - 1], -1.0));
                    0.0
                };
                p.add_row(format!("soc_rec[{m},{t}]"), terms, RowSense::Eq, rhs);

                // lumped thermal recursion driven by the heat loss
                let a = 1.0 - input.dt_s * sp.k2;
                let gain = input.dt_s * sp.k1 * 1e3;
                let mut terms = vec![(temp_t, 1.0), (p_heat, -gain)];
                let mut rhs = input.dt_s * sp.k2 * sp.t_air_c;
                if t == 0 {
                    rhs += a * input.init[m].temp_c;
                } else {
                    terms.push((g.temp[m][t - 1], -a));
                }
                p.add_row(format!("temp_rec[{m},{t}]"), terms, RowSense::Eq, rhs);
            } else {
                // idle: state carries over unchanged
                let mut terms = vec![(soc_t, 1.0)];
                let rhs = if t == 0 {
                    input.init[m].soc
                } else {
                    terms.push((g.soc[m][t - 1], -1.0));
                    0.0
                };
                p.add_row(format!("soc_rec[{m},{t}]"), terms, RowSense::Eq, rhs);

                let a = 1.0 - input.dt_s * sp.k2;
                let mut terms = vec![(temp_t, 1.0)];
                let mut rhs = input.dt_s * sp.k2 * sp.t_air_c;
                if t == 0 {
                    rhs += a * input.init[m].temp_c;
                } else {
                    terms.push((g.temp[m][t - 1], -a));
                }
                p.add_row(format!("temp_rec[{m},{t}]"), terms, RowSense::Eq, rhs);
            }

            // SOC indicator links (Big-M in SOC units) and mutual exclusion
            let b_high = g.b_high[m][t];
            let b_low = g.b_low[m][t];
            p.add_row(
                format!("bhigh_up[{m},{t}]"),
                vec![(soc_t, 1.0), (b_high, -m_soc)],
                RowSense::Le,
                1.0 - eps,
            );
            p.add_row(
                format!("bhigh_dn[{m},{t}]"),
                vec![(soc_t, 1.0), (b_high, -m_soc)],
                RowSense::Ge,
                1.0 - eps - m_soc,
            );
            p.add_row(
                format!("blow_up[{m},{t}]"),
                vec![(soc_t, 1.0), (b_low, m_soc)],
                RowSense::Le,
                eps + m_soc,
            );
            p.add_row(
                format!("blow_dn[{m},{t}]"),
                vec![(soc_t, 1.0), (b_low, m_soc)],
                RowSense::Ge,
                eps,
            );
            p.add_row(
                format!("excl[{m},{t}]"),
                vec![(b_high, 1.0), (b_low, 1.0)],
                RowSense::Le,
                1.0,
            );
        }
    }

    // --- objective stages ---
    let e_scale = dt_h * scales.availability; // common energy normalization
    let mut avail_terms = Vec::new();
    let mut derate_terms = Vec::new();
    let mut inv_terms = Vec::new();
    let mut heat_terms = Vec::new();
    let mut slack_terms = Vec::new();
    for m in 0..m_count {
        for t in 0..t_count {
            if modes[t].is_none() {
                continue;
            }
            avail_terms.push((g.p_avail[m][t].unwrap(), e_scale));
            derate_terms.push((g.p_derate[m][t].unwrap(), e_scale));
            inv_terms.push((g.p_inv[m][t].unwrap(), e_scale));
            heat_terms.push((g.p_heat[m][t].unwrap(), e_scale));
            slack_terms.push((g.s_pos[m][t].unwrap(), e_scale * input.slack_penalty));
            slack_terms.push((g.s_neg[m][t].unwrap(), e_scale * input.slack_penalty));
        }
    }

    let objectives: [(&str, i32, f64, &Vec<(usize, f64)>); 4] = [
        (
            "availability",
            input.priorities.availability,
            input.weights.availability,
            &avail_terms,
        ),
        (
            "derating",
            input.priorities.derating,
            input.weights.derating,
            &derate_terms,
        ),
        (
            "inverter",
            input.priorities.inverter,
            input.weights.inverter,
            &inv_terms,
        ),
        (
            "battery",
            input.priorities.battery,
            input.weights.battery,
            &heat_terms,
        ),
    ];
    let mut priorities: Vec<i32> = objectives.iter().map(|o| o.1).collect();
    priorities.sort_unstable_by(|a, b| b.cmp(a));
    priorities.dedup();
    let top_priority = priorities[0];

    for &prio in &priorities {
        let mut terms: Vec<(usize, f64)> = Vec::new();
        let mut labels: Vec<&str> = Vec::new();
        for (name, p_i, w_i, obj_terms) in &objectives {
            if *p_i != prio || *w_i == 0.0 {
                continue;
            }
            labels.push(name);
            terms.extend(obj_terms.iter().map(|&(idx, c)| (idx, c * w_i)));
        }
        if prio == top_priority {
            labels.push("slack");
            terms.extend(slack_terms.iter().copied());
        }
        p.add_stage(prio, labels.join("+"), terms);
    }

    // With a zero battery weight nothing above pins the heat epigraph (and
    // the losses it feeds) to the curve, so a final stage sweeps the free
    // loss variables down.
    if input.weights.battery == 0.0 {
        let mut terms = heat_terms.clone();
        terms.extend(inv_terms.iter().copied());
        p.add_stage(priorities[priorities.len() - 1] - 1, "cleanup", terms);
    }

    p.validate()?;
    Ok(HorizonModel {
        program: p,
        vars: g,
        modes,
        n_strings: m_count,
        n_steps: t_count,
        dt_s: input.dt_s,
        scales,
    })
}

impl HorizonModel {
    pub fn modes(&self) -> &[Option<Mode>] {
        &self.modes
    }

    /// Reads a solver assignment back into a [`DispatchPlan`], verifying
    /// every constraint to `1e-6·(1+|rhs|)` and binary integrality.
    pub fn extract_solution(&self, values: &[f64]) -> Result<DispatchPlan, ModelError> {
        self.program.check_assignment(values, 1e-6)?;
        let read = |idx: Option<usize>| idx.map_or(0.0, |i| values[i]);
        let read_bin = |idx: usize| -> Result<bool, ModelError> {
            let v = values[idx];
            if (v - v.round()).abs() > 1e-6 {
                return Err(ModelError::NonIntegralBinary(
                    self.program.vars[idx].name.clone(),
                    v,
                ));
            }
            Ok(v.round() == 1.0)
        };

        let mut entries = Vec::with_capacity(self.n_strings);
        for m in 0..self.n_strings {
            let mut row = Vec::with_capacity(self.n_steps);
            for t in 0..self.n_steps {
                let mode = self.modes[t];
                let p_mode = read(self.vars.p_mode[m][t]);
                let p_avail = read(self.vars.p_avail[m][t]);
                row.push(DispatchEntry {
                    p_b_kw: values[self.vars.p_b[m][t]],
                    p_charge_kw: if mode == Some(Mode::Charge) { p_mode } else { 0.0 },
                    p_discharge_kw: if mode == Some(Mode::Discharge) {
                        p_mode
                    } else {
                        0.0
                    },
                    p_inverter_kw: read(self.vars.p_inv[m][t]),
                    p_heat_kw: read(self.vars.p_heat[m][t]),
                    p_avail_high_kw: if mode == Some(Mode::Charge) { p_avail } else { 0.0 },
                    p_avail_low_kw: if mode == Some(Mode::Discharge) {
                        p_avail
                    } else {
                        0.0
                    },
                    p_derate_loss_kw: read(self.vars.p_derate[m][t]),
                    slack_pos_kw: read(self.vars.s_pos[m][t]),
                    slack_neg_kw: read(self.vars.s_neg[m][t]),
                    soc: values[self.vars.soc[m][t]],
                    temp_pred_c: values[self.vars.temp[m][t]],
                    b_high: read_bin(self.vars.b_high[m][t])?,
                    b_low: read_bin(self.vars.b_low[m][t])?,
                    b_inv: match self.vars.b_inv[m][t] {
                        Some(idx) => read_bin(idx)?,
                        None => false,
                    },
                });
            }
            entries.push(row);
        }
        Ok(DispatchPlan {
            n_strings: self.n_strings,
            n_steps: self.n_steps,
            dt_s: self.dt_s,
            modes: self.modes.clone(),
            entries,
        })
    }
}
