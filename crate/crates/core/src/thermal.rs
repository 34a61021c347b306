//! Electro-thermal plant model for one battery string.
//!
//! The spatial model is a 1D rod of `n_nodes` equal heat capacities:
//! generated heat is injected uniformly, neighbouring nodes exchange
//! `k_cond·ΔT`, and the two boundary nodes each reject `(h_conv/2)·(T −
//! t_air)` to the cooling air. Under a uniform field the mean temperature
//! obeys the lumped surrogate `τ' = τ + Δt·(p_heat/c_total −
//! (h_conv/c_total)(τ − τ_air))` used inside the dispatch model.
//!
//! A PI controller derates the power setpoint once the mean temperature
//! exceeds `t_start`, with a hard cutoff at `t_stop`.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::ecm::{
    coulomb_update, heat_power, solve_current, total_resistance, CellResistanceModel, EcmError,
    Mode, StringElectricalParams,
};
use crate::inverter::InverterLossModel;

#[derive(Debug, Error, PartialEq)]
pub enum ThermalError {
    #[error("thermal model needs at least 2 nodes, got {0}")]
    TooFewNodes(usize),
    #[error("{0} must be positive, got {1}")]
    NonPositive(&'static str, f64),
}

/// Parameters of the 1D finite-difference thermal model.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ThermalParams {
    pub n_nodes: usize,
    /// Total heat capacity of the string (J/K).
    pub c_total: f64,
    /// Inter-node conductance (W/K).
    pub k_cond: f64,
    /// Total boundary convective conductance (W/K), split between the two
    /// end nodes.
    pub h_conv: f64,
    /// Cooling air temperature (°C).
    pub t_air: f64,
}

impl Default for ThermalParams {
    fn default() -> Self {
        Self {
            n_nodes: 10,
            c_total: 4.0e6,
            k_cond: 200.0,
            h_conv: 200.0,
            t_air: 25.0,
        }
    }
}

impl ThermalParams {
    pub fn validate(&self) -> Result<(), ThermalError> {
        if self.n_nodes < 2 {
            return Err(ThermalError::TooFewNodes(self.n_nodes));
        }
        for (name, v) in [
            ("c_total", self.c_total),
            ("k_cond", self.k_cond),
            ("h_conv", self.h_conv),
        ] {
            if !(v > 0.0) {
                return Err(ThermalError::NonPositive(name, v));
            }
        }
        Ok(())
    }

    /// Lumped-model heat gain `k1 = 1/c_total` (K/J).
    pub fn k1(&self) -> f64 {
        1.0 / self.c_total
    }

    /// Lumped-model cooling rate `k2 = h_conv/c_total` (1/s).
    pub fn k2(&self) -> f64 {
        self.h_conv / self.c_total
    }

    /// One step of the lumped surrogate used inside the dispatch model.
    pub fn lumped_step(&self, temp_c: f64, heat_w: f64, dt_s: f64) -> f64 {
        temp_c + dt_s * (self.k1() * heat_w - self.k2() * (temp_c - self.t_air))
    }
}

/// PI controller shaping the temperature-based derating factor.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PiDerateController {
    /// Proportional gain (1/°C).
    pub kp: f64,
    /// Integral gain (1/(°C·step)).
    pub ki: f64,
    /// Temperature at which derating begins (°C).
    pub t_start: f64,
    /// Temperature at which power is cut entirely (°C).
    pub t_stop: f64,
}

impl Default for PiDerateController {
    fn default() -> Self {
        Self {
            kp: 0.035,
            ki: 0.0035,
            t_start: 45.0,
            t_stop: 60.0,
        }
    }
}

impl PiDerateController {
    /// Updates the controller for the current mean temperature.
    ///
    /// The derating factor applies the error accumulated through the
    /// previous step; the integral then absorbs the current error, clamped
    /// (anti-windup) so the combined term cannot exceed full derating. At or
    /// above `t_stop` the factor is forced to zero.
    pub fn update(&self, temp_mean_c: f64, integral: f64) -> (f64, f64) {
        let error = (temp_mean_c - self.t_start).max(0.0);
        let mut k = 1.0 - (self.kp * error + self.ki * integral);
        k = k.clamp(0.0, 1.0);
        if temp_mean_c >= self.t_stop {
            k = 0.0;
        }
        let mut next_integral = integral + error;
        if self.ki > 0.0 {
            let windup_limit = ((1.0 - self.kp * error) / self.ki).max(0.0);
            next_integral = next_integral.min(windup_limit);
        }
        (k, next_integral.max(0.0))
    }
}

/// Per-string dynamic state: SOC, spatial temperature field, and the
/// derating controller's memory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StringState {
    pub soc: f64,
    /// Node temperatures (°C).
    pub temps: Vec<f64>,
    /// Arithmetic mean of `temps` (°C).
    pub temp_mean: f64,
    /// Accumulated derating error (°C·steps).
    pub pi_integral: f64,
    /// Derating factor applied at the most recent step.
    pub k_derate_applied: f64,
}

impl StringState {
    /// A state with a uniform temperature field.
    pub fn uniform(soc: f64, temp_c: f64, n_nodes: usize) -> Self {
        Self {
            soc,
            temps: vec![temp_c; n_nodes],
            temp_mean: temp_c,
            pi_integral: 0.0,
            k_derate_applied: 1.0,
        }
    }

    fn recompute_mean(&mut self) {
        self.temp_mean = self.temps.iter().sum::<f64>() / self.temps.len() as f64;
    }
}

/// Bookkeeping from one FDM step.
#[derive(Debug, Clone, Copy)]
pub struct FdmStepInfo {
    /// Heat rejected to the cooling air over the step (J).
    pub convective_loss_j: f64,
    /// Relative closure error of the node energy balance.
    pub energy_residual_rel: f64,
}

/// Advances the spatial temperature field by `dt_s` seconds under a constant
/// heat input, sub-stepping to respect explicit-Euler stability.
pub fn fdm_step(
    state: &StringState,
    params: &ThermalParams,
    heat_w: f64,
    dt_s: f64,
) -> (StringState, FdmStepInfo) {
    let n = params.n_nodes;
    debug_assert_eq!(state.temps.len(), n);
    let c_node = params.c_total / n as f64;
    let dt_max = 0.4 * c_node / (2.0 * params.k_cond + params.h_conv);
    let n_sub = (dt_s / dt_max).ceil().max(1.0) as usize;
    let dt_sub = dt_s / n_sub as f64;

    let mut temps = state.temps.clone();
    let mut next = vec![0.0; n];
    let heat_per_node = heat_w / n as f64;
    let h_boundary = params.h_conv / 2.0;
    let energy_before: f64 = temps.iter().sum::<f64>() * c_node;
    let mut convective_loss_j = 0.0;

    for _ in 0..n_sub {
        for i in 0..n {
            let mut flow = heat_per_node;
            if i > 0 {
                flow += params.k_cond * (temps[i - 1] - temps[i]);
            }
            if i + 1 < n {
                flow += params.k_cond * (temps[i + 1] - temps[i]);
            }
            if i == 0 || i + 1 == n {
                let reject = h_boundary * (temps[i] - params.t_air);
                flow -= reject;
                convective_loss_j += reject * dt_sub;
            }
            next[i] = temps[i] + dt_sub * flow / c_node;
        }
        std::mem::swap(&mut temps, &mut next);
    }

    let energy_after: f64 = temps.iter().sum::<f64>() * c_node;
    let injected = heat_w * dt_s;
    let residual = (energy_after - energy_before) - (injected - convective_loss_j);
    let scale = injected.abs().max(convective_loss_j.abs()).max(energy_before.abs());

    let mut out = state.clone();
    out.temps = temps;
    out.recompute_mean();
    (
        out,
        FdmStepInfo {
            convective_loss_j,
            energy_residual_rel: residual.abs() / scale.max(1.0),
        },
    )
}

/// Outcome of applying one power setpoint to the plant.
#[derive(Debug, Clone)]
pub struct PlantStep {
    pub state: StringState,
    /// Power actually applied after derating (kW).
    pub applied_kw: f64,
    /// Setpoint power curtailed by derating (kW).
    pub derate_loss_kw: f64,
    /// Inverter conversion loss (kW).
    pub inverter_loss_kw: f64,
    /// Joule heat generated in the string (kW).
    pub heat_kw: f64,
    /// Power exchanged with the OCV source, positive into storage (kW).
    pub stored_kw: f64,
    /// String current magnitude (A).
    pub current_a: f64,
    /// Charge clamped away at the SOC bounds (kWh equivalent).
    pub overflow_kwh: f64,
    pub fdm: FdmStepInfo,
}

/// The electro-thermal plant for one string: derating controller, inverter
/// loss, Rint electrics, coulomb counting and the spatial thermal field.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct StringPlant {
    pub electrical: StringElectricalParams,
    pub resistance: CellResistanceModel,
    pub thermal: ThermalParams,
    pub derate: PiDerateController,
    pub inverter: InverterLossModel,
}

impl Default for StringPlant {
    fn default() -> Self {
        Self {
            electrical: StringElectricalParams::default(),
            resistance: CellResistanceModel::default(),
            thermal: ThermalParams::default(),
            derate: PiDerateController::default(),
            inverter: InverterLossModel::default(),
        }
    }
}

impl StringPlant {
    /// Applies a power setpoint for `dt_s` seconds.
    ///
    /// The PI derating factor scales the setpoint, the inverter loss is paid
    /// between the terminals and the cells, the Rint current sets heat and
    /// SOC, and the heat drives the spatial field. Fails with the ECM
    /// infeasible-power error when the derated demand exceeds what the
    /// string can deliver.
    pub fn apply(
        &self,
        state: &StringState,
        setpoint_kw: f64,
        mode: Mode,
        dt_s: f64,
    ) -> Result<PlantStep, EcmError> {
        let (k, integral) = self.derate.update(state.temp_mean, state.pi_integral);
        let applied_kw = k * setpoint_kw;
        let derate_loss_kw = setpoint_kw - applied_kw;

        let inverter_loss_kw = self.inverter.loss_kw(applied_kw, mode).min(match mode {
            Mode::Charge => applied_kw,
            Mode::Discharge => f64::INFINITY,
        });
        // Cell-side power: charging pays the inverter loss before the cells,
        // discharging on top of the delivered power.
        let cell_kw = match mode {
            Mode::Charge => (applied_kw - inverter_loss_kw).max(0.0),
            Mode::Discharge => applied_kw + inverter_loss_kw,
        };

        let ocv = self.electrical.ocv(state.soc, mode)?;
        let r = total_resistance(
            &self.resistance,
            self.electrical.n_series,
            self.electrical.n_parallel,
            state.soc,
            state.temp_mean,
        )?;
        let current_a = solve_current(ocv, r, cell_kw * 1e3, mode)?;
        let heat_w = heat_power(current_a, r);
        let stored_kw = ocv * current_a * 1e-3;

        let (i_ch, i_dch) = match mode {
            Mode::Charge => (current_a, 0.0),
            Mode::Discharge => (0.0, current_a),
        };
        let soc_update = coulomb_update(state.soc, i_ch, i_dch, dt_s, self.electrical.q_nominal_ah)?;
        let (mut next, fdm) = fdm_step(state, &self.thermal, heat_w, dt_s);
        next.soc = soc_update.soc;
        next.pi_integral = integral;
        next.k_derate_applied = k;

        Ok(PlantStep {
            state: next,
            applied_kw,
            derate_loss_kw,
            inverter_loss_kw,
            heat_kw: heat_w * 1e-3,
            stored_kw,
            current_a,
            overflow_kwh: soc_update.overflow_ah * ocv * 1e-3,
            fdm,
        })
    }

    /// Largest setpoint the string can currently serve, backing the
    /// inverter loss and derating out of the ECM deliverable-power limit.
    pub fn max_feasible_setpoint_kw(&self, state: &StringState, mode: Mode) -> f64 {
        if mode == Mode::Charge {
            return f64::INFINITY; // charge roots always exist
        }
        let ocv = match self.electrical.ocv(state.soc, mode) {
            Ok(v) => v,
            Err(_) => return 0.0,
        };
        let r = match total_resistance(
            &self.resistance,
            self.electrical.n_series,
            self.electrical.n_parallel,
            state.soc,
            state.temp_mean,
        ) {
            Ok(v) => v,
            Err(_) => return 0.0,
        };
        let max_cell_kw = crate::ecm::max_deliverable_power_w(ocv, r) * 1e-3;
        let applied = self.inverter.invert_discharge_cell_power(max_cell_kw);
        let (k, _) = self.derate.update(state.temp_mean, state.pi_integral);
        if k <= 0.0 {
            0.0
        } else {
            (applied / k).max(0.0)
        }
    }
}

/// Runs one 900 s full-power step from ambient and returns the mean
/// temperature rise per kilowatt of commanded power (°C/kW).
pub fn calibrate_sensitivity(plant: &StringPlant) -> f64 {
    let state = StringState::uniform(0.5, plant.thermal.t_air, plant.thermal.n_nodes);
    let step = plant
        .apply(&state, plant.electrical.p_nominal_kw, Mode::Discharge, 900.0)
        .expect("full-power step from ambient at mid SOC is feasible");
    (step.state.temp_mean - plant.thermal.t_air) / plant.electrical.p_nominal_kw
}

/// Acceptance window for the thermal sensitivity gate (°C/kW per 15 min).
pub const SENSITIVITY_GATE: (f64, f64) = (0.008, 0.016);
