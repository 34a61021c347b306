//! Receding-horizon co-simulation loop.
//!
//! Each cycle the EMS hands the controller a demand window, the controller
//! solves the staged horizon program, the first `apply_steps` setpoints are
//! pushed through the electro-thermal plant, and the plant's measured SOC
//! and mean temperatures (spatial model, not the optimizer's lumped
//! predictions) seed the next horizon.

use std::time::Instant;

use serde::Serialize;
use thiserror::Error;

use crate::ecm::{EcmError, Mode};
use crate::model::{BigM, ModelTolerances, ObjectiveWeights, Priorities, StringInit};
use crate::piecewise::PwlTable;
use crate::solver::{
    slp_solve, BnbConfig, SlpConfig, SlpProblem, SlpString, SolveError, StageReport,
};
use crate::thermal::{calibrate_sensitivity, StringPlant, StringState, SENSITIVITY_GATE};

#[derive(Debug, Error)]
pub enum CosimError {
    #[error("scenario invalid: {0}")]
    Scenario(String),
    #[error("solver failed at horizon {horizon}: {source}")]
    Solver {
        horizon: usize,
        #[source]
        source: SolveError,
    },
    #[error("plant failed at step {step}, string {string}: {source}")]
    Plant {
        step: usize,
        string: usize,
        #[source]
        source: EcmError,
    },
}

/// Where the fleet demand comes from.
#[derive(Debug, Clone)]
pub enum DemandSource {
    /// Signed kW profile applied directly (positive = charge).
    Power(Vec<f64>),
    /// Price-arbitrage synthesis over a static price profile: charge at
    /// `charge_kw` when the price is at or below its 25th percentile,
    /// discharge at `discharge_kw` at or above the 75th, idle otherwise
    /// (a price satisfying both resolves to idle).
    Price {
        prices: Vec<f64>,
        charge_kw: f64,
        discharge_kw: f64,
    },
}

impl DemandSource {
    pub fn len(&self) -> usize {
        match self {
            DemandSource::Power(p) => p.len(),
            DemandSource::Price { prices, .. } => prices.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// The full signed demand profile (kW per step).
    pub fn demand_profile(&self) -> Vec<f64> {
        match self {
            DemandSource::Power(p) => p.clone(),
            DemandSource::Price {
                prices,
                charge_kw,
                discharge_kw,
            } => {
                let p25 = percentile(prices, 0.25);
                let p75 = percentile(prices, 0.75);
                prices
                    .iter()
                    .map(|&price| {
                        let charge = price <= p25;
                        let discharge = price >= p75;
                        match (charge, discharge) {
                            (true, false) => *charge_kw,
                            (false, true) => -*discharge_kw,
                            _ => 0.0, // ties resolve to idle
                        }
                    })
                    .collect()
            }
        }
    }
}

/// Linear-interpolation percentile of an unsorted slice.
fn percentile(values: &[f64], q: f64) -> f64 {
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    if sorted.is_empty() {
        return f64::NAN;
    }
    let pos = q * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    let frac = pos - lo as f64;
    sorted[lo] + (sorted[hi] - sorted[lo]) * frac
}

/// A demand window cut from the profile.
#[derive(Debug, Clone, PartialEq)]
pub struct EmsHorizon {
    pub demand_kw: Vec<f64>,
    /// The window ran past the end of the profile and was cut short.
    pub truncated: bool,
}

/// Rolling-horizon window `[t0, t0 + n_steps)` of the demand profile.
pub fn ems_horizon(profile: &[f64], t0: usize, n_steps: usize) -> EmsHorizon {
    let end = (t0 + n_steps).min(profile.len());
    EmsHorizon {
        demand_kw: profile[t0.min(profile.len())..end].to_vec(),
        truncated: end < t0 + n_steps,
    }
}

/// One string of the scenario: the physical plant plus the derating table
/// the optimizer linearizes against.
#[derive(Debug, Clone)]
pub struct ScenarioString {
    pub plant: StringPlant,
    pub derate_lut: PwlTable,
}

impl ScenarioString {
    pub fn slp_view(&self) -> SlpString {
        SlpString {
            electrical: self.plant.electrical.clone(),
            resistance: self.plant.resistance.clone(),
            derate_lut: self.derate_lut.clone(),
            inverter: self.plant.inverter.clone(),
            thermal: self.plant.thermal.clone(),
        }
    }
}

/// A complete co-simulation scenario.
#[derive(Debug, Clone)]
pub struct Scenario {
    pub strings: Vec<ScenarioString>,
    pub demand: DemandSource,
    pub dt_s: f64,
    pub horizon_steps: usize,
    pub apply_steps: usize,
    pub sim_steps: usize,
    pub initial: Vec<StringInit>,
    pub weights: ObjectiveWeights,
    pub priorities: Priorities,
    pub slack_penalty: f64,
    pub slp: SlpConfig,
    pub bnb: BnbConfig,
}

impl Scenario {
    pub fn fleet_nominal_kw(&self) -> f64 {
        self.strings
            .iter()
            .map(|s| s.plant.electrical.p_nominal_kw)
            .sum()
    }

    pub fn validate(&self) -> Result<(), CosimError> {
        if self.strings.is_empty() {
            return Err(CosimError::Scenario("no strings configured".into()));
        }
        if self.initial.len() != self.strings.len() {
            return Err(CosimError::Scenario(
                "initial conditions must match string count".into(),
            ));
        }
        if self.apply_steps == 0 || self.apply_steps > self.horizon_steps {
            return Err(CosimError::Scenario(format!(
                "apply_steps {} must be in [1, horizon_steps {}]",
                self.apply_steps, self.horizon_steps
            )));
        }
        if self.sim_steps < self.apply_steps {
            return Err(CosimError::Scenario(
                "sim_duration shorter than one apply block".into(),
            ));
        }
        if self.demand.len() < self.sim_steps {
            return Err(CosimError::Scenario(format!(
                "demand profile covers {} steps, simulation needs {}",
                self.demand.len(),
                self.sim_steps
            )));
        }
        for init in &self.initial {
            if !(0.0..=1.0).contains(&init.soc) {
                return Err(CosimError::Scenario(format!(
                    "initial soc {} outside [0,1]",
                    init.soc
                )));
            }
        }
        Ok(())
    }
}

/// One applied step of one string in the trace.
#[derive(Debug, Clone, Serialize)]
pub struct TraceRow {
    pub step: usize,
    pub string: usize,
    /// +1 charge, −1 discharge, 0 idle.
    pub mode: i8,
    pub setpoint_kw: f64,
    pub applied_kw: f64,
    pub p_inverter_kw: f64,
    pub p_heat_kw: f64,
    pub p_derate_kw: f64,
    /// Availability loss: the controller's predicted shortfall plus any
    /// plant-side deliverability clamp.
    pub p_avail_kw: f64,
    /// Power into (positive) or out of (negative) the OCV storage.
    pub stored_kw: f64,
    pub soc: f64,
    pub temp_mean_c: f64,
    pub k_derate: f64,
    pub node_temps_c: Vec<f64>,
    /// The setpoint was cut to the deliverable maximum.
    pub clamped: bool,
}

/// Controller bookkeeping for one solved horizon.
#[derive(Debug, Clone, Serialize)]
pub struct HorizonRecord {
    pub index: usize,
    pub t0: usize,
    pub iterations: usize,
    pub converged: bool,
    pub nodes: usize,
    pub wall_ms: f64,
    pub truncated: bool,
    pub stages: Vec<StageReport>,
    /// Plant state fed into this horizon (bit-equal feedback check).
    pub init: Vec<StringInit>,
}

/// Time-indexed record of a full co-simulation run.
#[derive(Debug, Clone, Serialize)]
pub struct TraceLog {
    pub dt_s: f64,
    pub n_strings: usize,
    /// Fleet demand per simulated step (signed kW).
    pub demand_kw: Vec<f64>,
    /// Step-major rows: `rows[step * n_strings + string]`.
    pub rows: Vec<TraceRow>,
    pub horizons: Vec<HorizonRecord>,
    pub warnings: Vec<String>,
    pub sensitivity_c_per_kw: f64,
}

impl TraceLog {
    pub fn row(&self, step: usize, string: usize) -> &TraceRow {
        &self.rows[step * self.n_strings + string]
    }

    pub fn n_steps(&self) -> usize {
        self.rows.len() / self.n_strings.max(1)
    }

    pub fn final_socs(&self) -> Vec<f64> {
        let last = self.n_steps().saturating_sub(1);
        (0..self.n_strings).map(|m| self.row(last, m).soc).collect()
    }

    /// Net energy bookkeeping over the run (kWh, charge positive).
    pub fn energy_accounting(&self) -> EnergyAccounting {
        let dt_h = self.dt_s / 3600.0;
        let mut acc = EnergyAccounting::default();
        for r in &self.rows {
            let sign = r.mode as f64;
            acc.applied_net_kwh += sign * r.applied_kw * dt_h;
            acc.stored_net_kwh += sign * r.stored_kw * dt_h;
            acc.heat_kwh += r.p_heat_kw * dt_h;
            acc.inverter_kwh += r.p_inverter_kw * dt_h;
            acc.applied_abs_kwh += r.applied_kw * dt_h;
        }
        acc
    }
}

/// Signed energy totals; the plant identity is `applied_net = stored_net +
/// heat + inverter` (losses always drawn from the terminal side).
#[derive(Debug, Clone, Copy, Default, Serialize)]
pub struct EnergyAccounting {
    pub applied_net_kwh: f64,
    pub stored_net_kwh: f64,
    pub heat_kwh: f64,
    pub inverter_kwh: f64,
    pub applied_abs_kwh: f64,
}

impl EnergyAccounting {
    pub fn residual_rel(&self) -> f64 {
        let residual =
            self.applied_net_kwh - (self.stored_net_kwh + self.heat_kwh + self.inverter_kwh);
        residual.abs() / self.applied_abs_kwh.max(1e-9)
    }
}

/// Runs the closed loop over the whole simulation window.
pub fn run_cosim(scenario: &Scenario) -> Result<TraceLog, CosimError> {
    scenario.validate()?;
    let n_strings = scenario.strings.len();
    let demand_profile = scenario.demand.demand_profile();
    let mut warnings = Vec::new();

    let sensitivity = calibrate_sensitivity(&scenario.strings[0].plant);
    if !(SENSITIVITY_GATE.0..=SENSITIVITY_GATE.1).contains(&sensitivity) {
        warnings.push(format!(
            "thermal sensitivity {sensitivity:.4} °C/kW outside [{}, {}]",
            SENSITIVITY_GATE.0, SENSITIVITY_GATE.1
        ));
    }

    let slp_strings: Vec<SlpString> = scenario.strings.iter().map(|s| s.slp_view()).collect();
    let max_nominal = scenario
        .strings
        .iter()
        .map(|s| s.plant.electrical.p_nominal_kw)
        .fold(0.0, f64::max);
    let big_m = BigM::for_nominal_power(max_nominal);
    let tol = ModelTolerances::for_nominal_power(max_nominal);

    let mut states: Vec<StringState> = scenario
        .initial
        .iter()
        .zip(&scenario.strings)
        .map(|(init, s)| StringState::uniform(init.soc, init.temp_c, s.plant.thermal.n_nodes))
        .collect();

    let mut rows = Vec::with_capacity(scenario.sim_steps * n_strings);
    let mut horizons = Vec::new();
    let mut t0 = 0usize;

    while t0 < scenario.sim_steps {
        let window = ems_horizon(
            &demand_profile[..scenario.sim_steps],
            t0,
            scenario.horizon_steps,
        );
        if window.demand_kw.is_empty() {
            break;
        }
        let init: Vec<StringInit> = states
            .iter()
            .map(|s| StringInit {
                soc: s.soc,
                temp_c: s.temp_mean,
            })
            .collect();
        let problem = SlpProblem {
            strings: slp_strings.clone(),
            demand_kw: window.demand_kw.clone(),
            dt_s: scenario.dt_s,
            init: init.clone(),
            weights: scenario.weights,
            priorities: scenario.priorities,
            big_m,
            tol,
            slack_penalty: scenario.slack_penalty,
        };
        let started = Instant::now();
        let horizon_index = horizons.len();
        let solved = slp_solve(&problem, &scenario.slp, &scenario.bnb).map_err(|source| {
            CosimError::Solver {
                horizon: horizon_index,
                source,
            }
        })?;
        if !solved.converged {
            warnings.push(format!(
                "horizon {horizon_index} (t0 {t0}): linearization not converged after {} iterations",
                solved.iterations
            ));
        }
        horizons.push(HorizonRecord {
            index: horizon_index,
            t0,
            iterations: solved.iterations,
            converged: solved.converged,
            nodes: solved.nodes,
            wall_ms: started.elapsed().as_secs_f64() * 1e3,
            truncated: window.truncated,
            stages: solved.stages,
            init,
        });

        let apply = scenario
            .apply_steps
            .min(solved.plan.n_steps)
            .min(scenario.sim_steps - t0);
        for k in 0..apply {
            let step = t0 + k;
            for m in 0..n_strings {
                let entry = solved.plan.entry(m, k);
                let mode = solved.plan.modes[k];
                let setpoint = entry.p_b_kw;
                let (row, next) = apply_one(
                    &scenario.strings[m].plant,
                    &states[m],
                    step,
                    m,
                    setpoint,
                    mode,
                    scenario.dt_s,
                    entry.p_avail_kw(),
                    &mut warnings,
                )
                .map_err(|source| CosimError::Plant {
                    step,
                    string: m,
                    source,
                })?;
                rows.push(row);
                states[m] = next;
            }
        }
        t0 += apply;
    }

    Ok(TraceLog {
        dt_s: scenario.dt_s,
        n_strings,
        demand_kw: demand_profile[..scenario.sim_steps].to_vec(),
        rows,
        horizons,
        warnings,
        sensitivity_c_per_kw: sensitivity,
    })
}

/// Applies one setpoint, retrying at the deliverable maximum when the
/// demanded power exceeds what the string can source; the shortfall is
/// logged as availability loss.
#[allow(clippy::too_many_arguments)]
fn apply_one(
    plant: &StringPlant,
    state: &StringState,
    step: usize,
    string: usize,
    setpoint_kw: f64,
    mode: Option<Mode>,
    dt_s: f64,
    planned_avail_kw: f64,
    warnings: &mut Vec<String>,
) -> Result<(TraceRow, StringState), EcmError> {
    let mode_val = match mode {
        Some(Mode::Charge) => 1i8,
        Some(Mode::Discharge) => -1,
        None => 0,
    };
    let ecm_mode = mode.unwrap_or(Mode::Charge);
    let attempt = plant.apply(state, setpoint_kw, ecm_mode, dt_s);
    let (applied_setpoint, outcome, clamped) = match attempt {
        Ok(out) => (setpoint_kw, out, false),
        Err(EcmError::InfeasiblePower { .. }) => {
            let max = (plant.max_feasible_setpoint_kw(state, ecm_mode) * 0.999).max(0.0);
            warnings.push(format!(
                "step {step} string {string}: setpoint {setpoint_kw:.1} kW beyond deliverable, clamped to {max:.1} kW"
            ));
            let out = plant.apply(state, max, ecm_mode, dt_s)?;
            (max, out, true)
        }
        Err(other) => return Err(other),
    };
    let shortfall = (setpoint_kw - applied_setpoint).max(0.0);
    let row = TraceRow {
        step,
        string,
        mode: mode_val,
        setpoint_kw,
        applied_kw: outcome.applied_kw,
        p_inverter_kw: outcome.inverter_loss_kw,
        p_heat_kw: outcome.heat_kw,
        p_derate_kw: outcome.derate_loss_kw,
        p_avail_kw: planned_avail_kw + shortfall,
        stored_kw: outcome.stored_kw,
        soc: outcome.state.soc,
        temp_mean_c: outcome.state.temp_mean,
        k_derate: outcome.state.k_derate_applied,
        node_temps_c: outcome.state.temps.clone(),
        clamped,
    };
    Ok((row, outcome.state))
}
