//! One MPC horizon as a staged mixed-integer linear program.
//!
//! [`program`] holds the generic variable/constraint/stage container the
//! solver consumes; [`horizon`] assembles the power-split horizon model
//! from frozen nonlinear coefficients and extracts dispatch plans from
//! solver assignments.

pub mod horizon;
pub mod program;

pub use horizon::{
    build_horizon_model, normalize_objectives, BigM, DispatchEntry, DispatchPlan,
    FrozenCoefficients, HorizonInput, HorizonModel, ModelTolerances, ObjectiveScales,
    ObjectiveWeights, Priorities, StringInit, StringModelParams,
};
pub use program::{MathProgram, ModelError, RowSense, Stage, VarDef, VarKind};
