//! Empirical inverter conversion-loss model.
//!
//! Losses follow a fixed standby term plus a direction-specific linear term,
//! anchored so that full-power operation loses 1.93 % of nominal while
//! charging and 1.77 % while discharging.

use serde::{Deserialize, Serialize};

use crate::ecm::Mode;

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct InverterLossModel {
    /// Nominal power the fixed term scales with (kW).
    pub p_nominal_kw: f64,
    /// Standby loss as a fraction of nominal power while the inverter runs.
    pub fixed_fraction: f64,
    /// Marginal loss per kW of charge power.
    pub slope_charge: f64,
    /// Marginal loss per kW of discharge power.
    pub slope_discharge: f64,
}

impl Default for InverterLossModel {
    fn default() -> Self {
        Self {
            p_nominal_kw: 100.0,
            fixed_fraction: 0.01,
            slope_charge: 0.0093,
            slope_discharge: 0.0077,
        }
    }
}

impl InverterLossModel {
    pub fn slope(&self, mode: Mode) -> f64 {
        match mode {
            Mode::Charge => self.slope_charge,
            Mode::Discharge => self.slope_discharge,
        }
    }

    pub fn fixed_kw(&self) -> f64 {
        self.fixed_fraction * self.p_nominal_kw
    }

    /// Conversion loss at a terminal power; zero when the inverter is off.
    pub fn loss_kw(&self, p_kw: f64, mode: Mode) -> f64 {
        if p_kw <= 0.0 {
            0.0
        } else {
            self.fixed_kw() + self.slope(mode) * p_kw
        }
    }

    /// Largest AC output compatible with a cell-side discharge limit: the
    /// cells must supply the terminals plus the conversion loss.
    pub fn invert_discharge_cell_power(&self, cell_kw: f64) -> f64 {
        ((cell_kw - self.fixed_kw()) / (1.0 + self.slope_discharge)).max(0.0)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn published_full_power_endpoints() {
        let inv = InverterLossModel::default();
        assert!((inv.loss_kw(100.0, Mode::Charge) - 0.0193 * 100.0).abs() < 1e-12);
        assert!((inv.loss_kw(100.0, Mode::Discharge) - 0.0177 * 100.0).abs() < 1e-12);
    }

    #[test]
    fn off_at_zero_power() {
        let inv = InverterLossModel::default();
        assert_eq!(inv.loss_kw(0.0, Mode::Charge), 0.0);
    }

    #[test]
    fn discharge_inversion_round_trip() {
        let inv = InverterLossModel::default();
        let applied = inv.invert_discharge_cell_power(50.0);
        assert!((applied + inv.loss_kw(applied, Mode::Discharge) - 50.0).abs() < 1e-9);
    }
}
