//! Rint equivalent-circuit electrical model.
//!
//! A battery string is an OCV source behind a single internal resistance.
//! The resistance is SOC- and temperature-dependent: below an SOC threshold
//! it rises sharply (product of the SOC curve and the normalized temperature
//! curve), above it only the temperature curve matters. String current for a
//! requested terminal power is the root of the Rint quadratic, heat is
//! `I²R`, and SOC follows coulomb counting.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::piecewise::PwlTable;

#[derive(Debug, Error, PartialEq)]
pub enum EcmError {
    #[error("soc {0} outside [0, 1]")]
    SocOutOfRange(f64),
    #[error("internal resistance must be positive, got {0} ohm")]
    InvalidResistance(f64),
    #[error("power must be non-negative, got {0} W")]
    NegativePower(f64),
    #[error(
        "requested discharge power {requested_w:.1} W exceeds deliverable maximum {max_deliverable_w:.1} W"
    )]
    InfeasiblePower {
        requested_w: f64,
        max_deliverable_w: f64,
    },
    #[error("charge and discharge currents are mutually exclusive")]
    ModeConflict,
}

/// Direction of power flow at the string terminals.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Mode {
    Charge,
    Discharge,
}

impl Mode {
    pub fn label(self) -> &'static str {
        match self {
            Mode::Charge => "charge",
            Mode::Discharge => "discharge",
        }
    }
}

/// Cell-level internal resistance model (milliohm tables).
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CellResistanceModel {
    /// Resistance vs. SOC, valid below `soc_threshold` (mΩ).
    pub r_soc: PwlTable,
    /// Resistance vs. temperature (mΩ vs °C).
    pub r_temp: PwlTable,
    /// Normalizer for the combined low-SOC branch (mΩ); the temperature
    /// curve's maximum value.
    pub r_temp_max_mohm: f64,
    /// SOC below which resistance becomes SOC-dependent.
    pub soc_threshold: f64,
    /// Half-width of the blending band around the threshold.
    pub eps_soc: f64,
}

impl Default for CellResistanceModel {
    fn default() -> Self {
        Self {
            r_soc: PwlTable::new(&[
                (0.0, 40.0),
                (0.02, 24.0),
                (0.05, 10.0),
                (0.08, 4.5),
                (0.1, 2.5),
            ])
            .expect("default r_soc table"),
            r_temp: PwlTable::new(&[(25.0, 2.5), (40.0, 1.9), (60.0, 1.2), (80.0, 0.75)])
                .expect("default r_temp table"),
            r_temp_max_mohm: 2.5,
            soc_threshold: 0.1,
            eps_soc: 0.01,
        }
    }
}

impl CellResistanceModel {
    /// Low-SOC branch: SOC curve scaled by the normalized temperature curve.
    fn low_branch_mohm(&self, soc: f64, temp_c: f64) -> f64 {
        self.r_soc.eval(soc) * self.r_temp.eval(temp_c) / self.r_temp_max_mohm
    }

    /// High-SOC branch: temperature curve only.
    fn high_branch_mohm(&self, temp_c: f64) -> f64 {
        self.r_temp.eval(temp_c)
    }

    /// Cell resistance with the two branches blended linearly inside the
    /// `±eps_soc` band, keeping the plant-side function continuous.
    pub fn cell_resistance_mohm(&self, soc: f64, temp_c: f64) -> Result<f64, EcmError> {
        check_soc(soc)?;
        let lo = self.soc_threshold - self.eps_soc;
        let hi = self.soc_threshold + self.eps_soc;
        let r = if soc <= lo {
            self.low_branch_mohm(soc, temp_c)
        } else if soc >= hi {
            self.high_branch_mohm(temp_c)
        } else {
            let w = (soc - lo) / (hi - lo);
            (1.0 - w) * self.low_branch_mohm(soc, temp_c) + w * self.high_branch_mohm(temp_c)
        };
        Ok(r)
    }

    /// Cell resistance with the hard branch switch at the threshold, as the
    /// dispatch model freezes it on an SOC trajectory.
    pub fn cell_resistance_mohm_hard(&self, soc: f64, temp_c: f64) -> Result<f64, EcmError> {
        check_soc(soc)?;
        let r = if soc <= self.soc_threshold {
            self.low_branch_mohm(soc, temp_c)
        } else {
            self.high_branch_mohm(temp_c)
        };
        Ok(r)
    }
}

/// Electrical parameters of one battery string.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct StringElectricalParams {
    /// Inverter nominal power (kW).
    pub p_nominal_kw: f64,
    /// Charge capacity (Ah).
    pub q_nominal_ah: f64,
    pub n_series: u32,
    pub n_parallel: u32,
    /// String-level OCV vs. SOC while charging (V).
    pub ocv_charge: PwlTable,
    /// String-level OCV vs. SOC while discharging (V).
    pub ocv_discharge: PwlTable,
}

/// Typical NMC cell OCV curve anchored at 3.0 V empty, 3.70 V at half
/// charge and 4.20 V full.
const NMC_CELL_OCV: [(f64, f64); 11] = [
    (0.0, 3.00),
    (0.1, 3.45),
    (0.2, 3.55),
    (0.3, 3.62),
    (0.4, 3.66),
    (0.5, 3.70),
    (0.6, 3.78),
    (0.7, 3.86),
    (0.8, 3.95),
    (0.9, 4.06),
    (1.0, 4.20),
];

/// Charge-direction hysteresis offset per cell (V).
const CHARGE_HYSTERESIS_V: f64 = 0.05;

impl Default for StringElectricalParams {
    fn default() -> Self {
        let n_series = 192u32;
        let discharge: Vec<(f64, f64)> = NMC_CELL_OCV
            .iter()
            .map(|&(s, v)| (s, v * n_series as f64))
            .collect();
        let charge: Vec<(f64, f64)> = NMC_CELL_OCV
            .iter()
            .map(|&(s, v)| (s, (v + CHARGE_HYSTERESIS_V) * n_series as f64))
            .collect();
        Self {
            p_nominal_kw: 100.0,
            q_nominal_ah: 156.0,
            n_series,
            n_parallel: 2,
            ocv_charge: PwlTable::new(&charge).expect("default charge ocv"),
            ocv_discharge: PwlTable::new(&discharge).expect("default discharge ocv"),
        }
    }
}

impl StringElectricalParams {
    /// String open-circuit voltage at `soc` for the given flow direction.
    pub fn ocv(&self, soc: f64, mode: Mode) -> Result<f64, EcmError> {
        check_soc(soc)?;
        let table = match mode {
            Mode::Charge => &self.ocv_charge,
            Mode::Discharge => &self.ocv_discharge,
        };
        Ok(table.eval(soc))
    }
}

/// String-level resistance in ohm: cell resistance scaled by the
/// series/parallel topology.
pub fn total_resistance(
    model: &CellResistanceModel,
    n_series: u32,
    n_parallel: u32,
    soc: f64,
    temp_c: f64,
) -> Result<f64, EcmError> {
    let cell_mohm = model.cell_resistance_mohm(soc, temp_c)?;
    Ok(cell_mohm * 1e-3 * n_series as f64 / n_parallel as f64)
}

/// As [`total_resistance`] but with the hard SOC branch switch used when
/// freezing coefficients for the dispatch model.
pub fn total_resistance_hard(
    model: &CellResistanceModel,
    n_series: u32,
    n_parallel: u32,
    soc: f64,
    temp_c: f64,
) -> Result<f64, EcmError> {
    let cell_mohm = model.cell_resistance_mohm_hard(soc, temp_c)?;
    Ok(cell_mohm * 1e-3 * n_series as f64 / n_parallel as f64)
}

/// Maximum terminal power (W) a string can deliver in discharge before the
/// Rint quadratic loses its real root.
pub fn max_deliverable_power_w(ocv_v: f64, r_ohm: f64) -> f64 {
    ocv_v * ocv_v / (4.0 * r_ohm)
}

/// Solves the Rint quadratic for the string current (A) at a requested
/// terminal power (W).
///
/// Discharge satisfies `ocv·I − I²R = p`, charge `ocv·I + I²R = p`. A
/// discharge request beyond `ocv²/(4R)` has no real root and is reported as
/// infeasible together with the deliverable maximum.
pub fn solve_current(ocv_v: f64, r_ohm: f64, power_w: f64, mode: Mode) -> Result<f64, EcmError> {
    if !(r_ohm > 0.0) {
        return Err(EcmError::InvalidResistance(r_ohm));
    }
    if power_w < 0.0 {
        return Err(EcmError::NegativePower(power_w));
    }
    if power_w == 0.0 {
        return Ok(0.0);
    }
    match mode {
        Mode::Discharge => {
            let disc = ocv_v * ocv_v - 4.0 * r_ohm * power_w;
            if disc < 0.0 {
                return Err(EcmError::InfeasiblePower {
                    requested_w: power_w,
                    max_deliverable_w: max_deliverable_power_w(ocv_v, r_ohm),
                });
            }
            Ok((ocv_v - disc.sqrt()) / (2.0 * r_ohm))
        }
        Mode::Charge => {
            let disc = ocv_v * ocv_v + 4.0 * r_ohm * power_w;
            Ok((-ocv_v + disc.sqrt()) / (2.0 * r_ohm))
        }
    }
}

/// Joule heat (W) dissipated in the internal resistance.
pub fn heat_power(current_a: f64, r_ohm: f64) -> f64 {
    current_a * current_a * r_ohm
}

/// Result of a coulomb-counting step.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SocUpdate {
    pub soc: f64,
    /// Charge clamped away at the SOC bounds (Ah), consumed by availability
    /// accounting.
    pub overflow_ah: f64,
}

/// Advances SOC by coulomb counting over `dt` seconds. At most one of the
/// two currents may be nonzero; the result is clamped to `[0, 1]` and the
/// clamped charge reported as overflow.
pub fn coulomb_update(
    soc: f64,
    i_charge_a: f64,
    i_discharge_a: f64,
    dt_s: f64,
    q_nominal_ah: f64,
) -> Result<SocUpdate, EcmError> {
    check_soc(soc)?;
    if i_charge_a > 0.0 && i_discharge_a > 0.0 {
        return Err(EcmError::ModeConflict);
    }
    let dt_h = dt_s / 3600.0;
    let raw = soc + dt_h / q_nominal_ah * (i_charge_a - i_discharge_a);
    let clamped = raw.clamp(0.0, 1.0);
    Ok(SocUpdate {
        soc: clamped,
        overflow_ah: (raw - clamped).abs() * q_nominal_ah,
    })
}

fn check_soc(soc: f64) -> Result<(), EcmError> {
    if !(0.0..=1.0).contains(&soc) || soc.is_nan() {
        return Err(EcmError::SocOutOfRange(soc));
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn assert_close(got: f64, want: f64, tol: f64) {
        assert!(
            (got - want).abs() <= tol,
            "got {got}, want {want} (tol {tol})"
        );
    }

    #[test]
    fn string_resistance_mid_soc_cool() {
        let m = CellResistanceModel::default();
        let r = total_resistance(&m, 192, 2, 0.5, 25.0).unwrap();
        assert_close(r, 0.240, 1e-12);
    }

    #[test]
    fn cell_resistance_empty_cool() {
        let m = CellResistanceModel::default();
        // f(soc)=40, f(τ)=2.5 → 40·2.5/2.5 = 40 mΩ.
        assert_close(m.cell_resistance_mohm(0.0, 25.0).unwrap(), 40.0, 1e-12);
    }

    #[test]
    fn cell_resistance_empty_hot() {
        let m = CellResistanceModel::default();
        // 40·0.75/2.5 = 12 mΩ.
        assert_close(m.cell_resistance_mohm(0.0, 80.0).unwrap(), 12.0, 1e-12);
    }

    #[test]
    fn resistance_threshold_anchors() {
        let m = CellResistanceModel::default();
        assert_close(m.r_soc.eval(0.0), 40.0, 0.0);
        assert_close(m.r_soc.eval(m.soc_threshold), 2.5, 0.0);
    }

    #[test]
    fn resistance_blend_is_continuous_at_band_edges() {
        let m = CellResistanceModel::default();
        for temp in [25.0, 50.0, 80.0] {
            for edge in [0.09, 0.11] {
                let inner = m.cell_resistance_mohm(edge, temp).unwrap();
                let outer = m.cell_resistance_mohm(edge + 1e-12, temp).unwrap();
                assert_close(inner, outer, 1e-6);
            }
        }
    }

    #[test]
    fn hard_switch_differs_only_below_threshold() {
        let m = CellResistanceModel::default();
        let soft = m.cell_resistance_mohm(0.095, 25.0).unwrap();
        let hard = m.cell_resistance_mohm_hard(0.095, 25.0).unwrap();
        assert!(hard > soft); // hard keeps the full low branch
        assert_eq!(
            m.cell_resistance_mohm(0.5, 25.0).unwrap(),
            m.cell_resistance_mohm_hard(0.5, 25.0).unwrap()
        );
    }

    #[test]
    fn soc_domain_checked() {
        let m = CellResistanceModel::default();
        assert!(matches!(
            m.cell_resistance_mohm(1.2, 25.0),
            Err(EcmError::SocOutOfRange(_))
        ));
    }

    #[test]
    fn default_ocv_anchors() {
        let p = StringElectricalParams::default();
        assert_close(p.ocv(0.5, Mode::Discharge).unwrap(), 710.4, 1e-9);
        assert_close(p.ocv(1.0, Mode::Discharge).unwrap(), 806.4, 1e-9);
        assert_close(p.ocv(0.5, Mode::Charge).unwrap(), 720.0, 1e-9);
        assert!(p.ocv_charge.is_strictly_increasing());
        assert!(p.ocv_discharge.is_strictly_increasing());
    }

    #[test]
    fn discharge_current_root() {
        let i = solve_current(700.0, 0.25, 100e3, Mode::Discharge).unwrap();
        assert_close(i, 151.0, 0.1);
        // Substitute back: ocv·I − I²R = p.
        assert_close(700.0 * i - i * i * 0.25, 100e3, 1e-9 * 100e3);
    }

    #[test]
    fn charge_current_root() {
        let i = solve_current(700.0, 0.25, 100e3, Mode::Charge).unwrap();
        assert_close(i, 136.23, 0.01);
        assert_close(700.0 * i + i * i * 0.25, 100e3, 1e-9 * 100e3);
    }

    #[test]
    fn zero_power_zero_current() {
        assert_eq!(solve_current(700.0, 0.25, 0.0, Mode::Discharge).unwrap(), 0.0);
        assert_eq!(solve_current(700.0, 0.25, 0.0, Mode::Charge).unwrap(), 0.0);
    }

    #[test]
    fn infeasible_discharge_carries_maximum() {
        let err = solve_current(700.0, 0.25, 1e6, Mode::Discharge).unwrap_err();
        match err {
            EcmError::InfeasiblePower {
                max_deliverable_w, ..
            } => assert_close(max_deliverable_w, 700.0 * 700.0 / 1.0, 1e-6),
            other => panic!("unexpected error {other:?}"),
        }
    }

    #[test]
    fn heat_examples() {
        let i = solve_current(700.0, 0.25, 100e3, Mode::Discharge).unwrap();
        assert_close(heat_power(i, 0.25), 5700.0, 5.0);
        assert_eq!(heat_power(0.0, 0.25), 0.0);
        let i = solve_current(700.0, 0.25, 100e3, Mode::Charge).unwrap();
        assert_close(heat_power(i, 0.25), 4640.0, 5.0);
    }

    #[test]
    fn coulomb_discharge_step() {
        let u = coulomb_update(0.5, 0.0, 100.0, 900.0, 156.0).unwrap();
        assert_close(u.soc, 0.5 - 25.0 / 156.0, 1e-12);
        assert_eq!(u.overflow_ah, 0.0);
    }

    #[test]
    fn coulomb_idle_is_identity() {
        let u = coulomb_update(0.42, 0.0, 0.0, 900.0, 156.0).unwrap();
        assert_eq!(u.soc, 0.42);
    }

    #[test]
    fn coulomb_clamps_and_reports_overflow() {
        let u = coulomb_update(0.99, 100.0, 0.0, 900.0, 156.0).unwrap();
        assert_eq!(u.soc, 1.0);
        // 0.99 + 25/156 − 1 = 0.150256… of capacity clamped away.
        assert_close(u.overflow_ah, 0.150_256_410_256 * 156.0, 1e-6);
    }

    #[test]
    fn coulomb_rejects_simultaneous_modes() {
        assert_eq!(
            coulomb_update(0.5, 1.0, 1.0, 900.0, 156.0),
            Err(EcmError::ModeConflict)
        );
    }

    #[test]
    fn charge_then_discharge_round_trip() {
        let q = 156.0;
        let start = 0.4;
        let up = coulomb_update(start, 80.0, 0.0, 1800.0, q).unwrap();
        let down = coulomb_update(up.soc, 0.0, 80.0, 1800.0, q).unwrap();
        assert_close(down.soc, start, 1e-12);
    }

    #[test]
    fn resistance_monotone_in_soc_and_temp() {
        let m = CellResistanceModel::default();
        let mut prev = f64::INFINITY;
        for i in 0..=100 {
            let soc = i as f64 / 100.0;
            let r = m.cell_resistance_mohm(soc, 25.0).unwrap();
            assert!(r <= prev + 1e-12, "resistance rose at soc {soc}");
            prev = r;
        }
        let mut prev = f64::INFINITY;
        for i in 0..=100 {
            let temp = 20.0 + i as f64;
            let r = m.cell_resistance_mohm(0.5, temp).unwrap();
            assert!(r <= prev + 1e-12, "resistance rose at temp {temp}");
            prev = r;
        }
    }

    proptest! {
        #[test]
        fn current_roots_reproduce_power(
            ocv in 400.0f64..900.0,
            r in 0.01f64..2.0,
            frac in 0.0f64..1.0,
            charge in proptest::bool::ANY,
        ) {
            let (mode, p) = if charge {
                (Mode::Charge, frac * 200e3)
            } else {
                // Stay within the deliverable range.
                (Mode::Discharge, frac * 0.99 * max_deliverable_power_w(ocv, r))
            };
            let i = solve_current(ocv, r, p, mode).unwrap();
            let back = match mode {
                Mode::Charge => ocv * i + i * i * r,
                Mode::Discharge => ocv * i - i * i * r,
            };
            prop_assert!((back - p).abs() <= 1e-9 * p.max(1.0));
        }
    }
}
