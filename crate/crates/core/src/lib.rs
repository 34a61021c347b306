//! Power split control toolkit for multi-string battery energy storage.
//!
//! A receding-horizon controller allocates a fleet power demand across
//! battery strings by solving a staged (lexicographic + blended)
//! mixed-integer program per horizon — availability first, then weighted
//! derating, inverter and battery losses — with nonlinear resistance, OCV
//! and derating coefficients frozen by an outer sequential-linearization
//! loop. The controller runs in closed loop against an electro-thermal
//! plant (Rint equivalent circuit plus a 1D spatial thermal field with PI
//! derating) that feeds measured SOC and temperature back into each new
//! horizon. KPI reporting and a Pareto weight-sweep harness sit on top.

pub mod ecm;
pub mod cosim;
pub mod model;
pub mod solver;
pub mod inverter;
pub mod piecewise;
pub mod thermal;

pub use ecm::{Mode, StringElectricalParams};
pub use piecewise::PwlTable;
pub use thermal::{PiDerateController, StringPlant, StringState, ThermalParams};
