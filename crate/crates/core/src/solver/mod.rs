//! Self-contained solver stack: bounded-variable primal simplex for LP
//! relaxations, branch-and-bound over the binaries, lexicographic staging,
//! and the sequential-linearization outer loop.

pub mod bnb;
pub mod lex;
pub mod simplex;
pub mod slp;

pub use bnb::{bnb_solve, enumerate_binaries, BnbConfig, BnbOutcome, BnbStatus, NodeLogEntry};
pub use lex::{solve_lexicographic, LexOutcome, SolveError, StageReport};
pub use simplex::{lp_solve, LpSolution, LpStatus, SimplexSolver};
pub use slp::{slp_solve, SlpConfig, SlpProblem, SlpString, SolvedHorizon};
